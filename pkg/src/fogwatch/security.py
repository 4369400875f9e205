"""Identity, tokens, and the client side of the security services.

Entities hold an Ed25519 key; their account address is the hash of the
public key and the VID is derived from the address, so every node computes
the same VID independently. Requests to screened endpoints carry
``X-LISPS-Token: <vid>:<nonce>:<signature-hex>`` where the signature covers
``nonce || vid``.

Screening is fail-closed: no reachable ledger, no access.
"""

from __future__ import annotations

import binascii
import hashlib
import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass

from .clocks import Clock, SystemClock
from .ledger.chain import Transaction, address_of, public_key_of, sign, vid_of
from .ledger.contracts import (
    encode_grant_args,
    encode_record_args,
    encode_register_args,
)

TOKEN_HEADER = "X-LISPS-Token"


class SecurityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Identity:
    private_key: bytes

    @property
    def public_key(self) -> bytes:
        return public_key_of(self.private_key)

    @property
    def address(self) -> bytes:
        return address_of(self.public_key)

    @property
    def vid(self) -> str:
        return vid_of(self.address)

    @classmethod
    def from_seed(cls, seed: str | bytes) -> "Identity":
        material = seed.encode() if isinstance(seed, str) else seed
        return cls(hashlib.sha256(b"fogwatch-key:" + material).digest())

    def token(self, nonce: str) -> str:
        if ":" in nonce or not nonce:
            raise ValueError("nonce must be a non-empty string without ':'")
        signature = sign(self.private_key, (nonce + self.vid).encode())
        return f"{self.vid}:{nonce}:{signature.hex()}"

    # -- signed transaction builders --

    def register_tx(self, nonce: int) -> Transaction:
        return Transaction(self.address, nonce, "registry", "register",
                           encode_register_args(self.public_key)).signed(self.private_key)

    def record_tx(self, nonce: int, key: str, frame_bytes: bytes) -> Transaction:
        digest = hashlib.sha256(frame_bytes).digest()
        return Transaction(self.address, nonce, "hia", "record",
                           encode_record_args(key, digest)).signed(self.private_key)

    def grant_tx(self, nonce: int, subject_vid: str, resource: str,
                 actions: str, expiry: float) -> Transaction:
        return Transaction(self.address, nonce, "acl", "grant",
                           encode_grant_args(subject_vid, resource, actions,
                                             expiry)).signed(self.private_key)


def parse_token(token: str) -> tuple[str, str, bytes] | None:
    """(vid, nonce, signature) or None when structurally invalid."""
    parts = token.split(":")
    if len(parts) != 3 or not all(parts):
        return None
    vid, nonce, sig_hex = parts
    if len(vid) != 16:
        return None
    try:
        signature = binascii.unhexlify(sig_hex)
    except (binascii.Error, ValueError):
        return None
    if len(signature) != 64:
        return None
    return vid, nonce, signature


class SecurityClient:
    """HTTP client for a ledger node's security endpoints."""

    def __init__(self, node_url: str, timeout: float = 10.0):
        self.node_url = node_url.rstrip("/")
        self.timeout = timeout

    def _post_json(self, path: str, obj) -> dict:
        req = urllib.request.Request(
            self.node_url + path, data=json.dumps(obj).encode(),
            headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read())

    def _get_json(self, path: str) -> dict:
        with urllib.request.urlopen(self.node_url + path,
                                    timeout=self.timeout) as resp:
            return json.loads(resp.read())

    def _tx_call(self, path: str, tx: Transaction) -> tuple[bool, str]:
        from .ledger.chain import encode_tx
        try:
            out = self._post_json(path, {"tx": encode_tx(tx).hex()})
        except urllib.error.HTTPError as exc:
            out = json.loads(exc.read())
        except (urllib.error.URLError, OSError) as exc:
            raise SecurityError(f"ledger unreachable: {exc}") from exc
        return bool(out.get("ok")), out.get("info", out.get("error", ""))

    def register(self, ident: Identity, nonce: int = 0) -> str:
        ok, info = self._tx_call("/register", ident.register_tx(nonce))
        if not ok:
            raise SecurityError(f"registration failed: {info}")
        return info  # the VID

    def authenticate(self, vid: str, nonce: str, signature_hex: str) -> str:
        try:
            out = self._post_json("/authenticate", {
                "vid": vid, "nonce": nonce, "signature": signature_hex})
        except (urllib.error.URLError, OSError) as exc:
            raise SecurityError(f"ledger unreachable: {exc}") from exc
        return out.get("verdict", "bad-signature")

    def record_hashed_index(self, ident: Identity, nonce: int, key: str,
                            frame_bytes: bytes) -> tuple[bool, str]:
        return self._tx_call("/hia/record", ident.record_tx(nonce, key, frame_bytes))

    def verify_hashed_index(self, key: str, frame_bytes: bytes) -> str:
        try:
            out = self._post_json("/hia/verify", {
                "key": key, "frame_hex": frame_bytes.hex()})
        except (urllib.error.URLError, OSError) as exc:
            raise SecurityError(f"ledger unreachable: {exc}") from exc
        return out.get("result", "unknown")

    def grant_access(self, admin: Identity, nonce: int, subject_vid: str,
                     resource: str, actions: str, expiry: float) -> tuple[bool, str]:
        return self._tx_call("/acl/grant",
                             admin.grant_tx(nonce, subject_vid, resource,
                                            actions, expiry))

    def check_access(self, vid: str, resource: str, action: str) -> tuple[bool, str]:
        from urllib.parse import quote
        try:
            out = self._get_json(
                f"/acl/check?vid={quote(vid)}&res={quote(resource)}&act={quote(action)}")
        except (urllib.error.URLError, OSError) as exc:
            raise SecurityError(f"ledger unreachable: {exc}") from exc
        return bool(out.get("allow")), out.get("reason", "")

    def block_interval(self) -> float | None:
        try:
            self._get_json("/head")
        except (urllib.error.URLError, OSError):
            return None
        return 0.0


class AccessScreen:
    """Fail-closed screening used by servers before releasing any bytes.

    A request must carry a parseable token whose signature authenticates
    against the registered key, plus an unexpired committed grant for the
    (resource, action). Allows are cached for at most one block interval;
    denials are never cached, so a fresh grant takes effect immediately.
    """

    def __init__(self, client: SecurityClient, cache_ttl: float = 2.0,
                 clock: Clock | None = None):
        self.client = client
        self.cache_ttl = cache_ttl
        self.clock = clock or SystemClock()
        self._cache: dict[tuple[str, str, str], float] = {}
        self._lock = threading.Lock()

    def evaluate(self, token: str | None, resource: str, action: str) -> tuple[bool, str]:
        if not token:
            return False, "missing token"
        parsed = parse_token(token)
        if parsed is None:
            return False, "malformed token"
        vid, nonce, signature = parsed

        key = (vid, resource, action)
        now = self.clock.now()
        with self._lock:
            until = self._cache.get(key)
            if until is not None and now < until:
                return True, "granted (cached)"

        try:
            verdict = self.client.authenticate(vid, nonce, signature.hex())
        except SecurityError as exc:
            return False, f"fail-closed: {exc}"
        if verdict == "unregistered":
            return False, "unregistered vid"
        if verdict != "accept":
            return False, "bad token signature"
        try:
            allow, reason = self.client.check_access(vid, resource, action)
        except SecurityError as exc:
            return False, f"fail-closed: {exc}"
        if not allow:
            return False, reason or "no grant"
        with self._lock:
            self._cache[key] = now + self.cache_ttl
        return True, "granted"

    def invalidate(self) -> None:
        with self._lock:
            self._cache.clear()
