"""The three built-in contract state machines: registry, HIA, ACL.

State is a pure fold of applied transactions from genesis; contract-level
failures produce receipts and leave state untouched, they never abort a
block. Hashed-index entries are write-once. Capability grants live under
hierarchical path resources with whole-segment prefix matching, and carry an
absolute expiry timestamp set by the grantor.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .encoding import DecodeError, Reader, field, u64

VALID_ACTIONS = ("read", "manage")


@dataclass(frozen=True)
class Receipt:
    ok: bool
    info: str
    target: str = ""
    method: str = ""


@dataclass(frozen=True)
class RegistryEntry:
    vid: str
    public_key: bytes
    height: int


@dataclass(frozen=True)
class HiaEntry:
    digest: bytes
    recorder_vid: str
    height: int


@dataclass(frozen=True)
class GrantEntry:
    actions: frozenset[str]
    expiry: float
    height: int


def resource_covers(granted: str, requested: str) -> bool:
    """Whole-segment prefix match: a grant on a path covers its subtree."""
    if granted == requested:
        return True
    return requested.startswith(granted + "/")


def resource_for_key(key: str) -> str:
    """Camera resource guarding a hashed-index key like ``cam-01/frame/12``."""
    return f"camera/{key.split('/', 1)[0]}/features"


def encode_register_args(public_key: bytes) -> bytes:
    return field(public_key)


def encode_record_args(key: str, digest: bytes) -> bytes:
    return field(key.encode()) + field(digest)


def encode_grant_args(subject_vid: str, resource: str, actions: str,
                      expiry: float) -> bytes:
    return (field(subject_vid.encode()) + field(resource.encode()) +
            field(actions.encode()) + field(u64(int(expiry * 1000))))


class ContractState:
    def __init__(self):
        self.registry: dict[bytes, RegistryEntry] = {}
        self.by_vid: dict[str, bytes] = {}
        self.hia: dict[str, HiaEntry] = {}
        self.acl: dict[tuple[str, str], GrantEntry] = {}
        self.nonces: dict[bytes, int] = {}

    # -- genesis bootstrap (no transactions involved) --

    def bootstrap_register(self, public_key: bytes) -> str:
        address = hashlib.sha256(public_key).digest()
        vid = hashlib.sha256(address).hexdigest()[:16]
        self.registry[address] = RegistryEntry(vid, public_key, 0)
        self.by_vid[vid] = address
        return vid

    def bootstrap_grant(self, vid: str, resource: str, actions: str,
                        expiry: float) -> None:
        acts = frozenset(a for a in actions.split(",") if a)
        self.acl[(vid, resource)] = GrantEntry(acts, expiry, 0)

    # -- queries --

    def vid_of_sender(self, address: bytes) -> str | None:
        entry = self.registry.get(address)
        return entry.vid if entry else None

    def find_grant(self, vid: str, resource: str, action: str,
                   now: float) -> GrantEntry | None:
        for (gvid, gres), grant in self.acl.items():
            if gvid != vid or action not in grant.actions:
                continue
            if grant.expiry <= now:
                continue
            if resource_covers(gres, resource):
                return grant
        return None

    def has_access(self, vid: str, resource: str, action: str, now: float) -> bool:
        return self.find_grant(vid, resource, action, now) is not None

    # -- transaction dispatch --

    def apply(self, tx, height: int, block_time: float) -> Receipt:
        self.nonces[tx.sender] = tx.nonce + 1
        handler = {
            ("registry", "register"): self._register,
            ("hia", "record"): self._record,
            ("acl", "grant"): self._grant,
        }.get((tx.target, tx.method))
        if handler is None:
            return Receipt(False, f"unknown method {tx.target}.{tx.method}",
                           tx.target, tx.method)
        try:
            ok, info = handler(tx, height, block_time)
        except DecodeError as exc:
            ok, info = False, f"malformed args: {exc}"
        return Receipt(ok, info, tx.target, tx.method)

    def _register(self, tx, height: int, block_time: float):
        pubkey = Reader(tx.args).field()
        if tx.sender in self.registry:
            return False, "address already registered"
        vid = hashlib.sha256(tx.sender).hexdigest()[:16]
        self.registry[tx.sender] = RegistryEntry(vid, pubkey, height)
        self.by_vid[vid] = tx.sender
        return True, vid

    def _record(self, tx, height: int, block_time: float):
        r = Reader(tx.args)
        key = r.field().decode()
        digest = r.field()
        if len(digest) != 32:
            return False, "digest must be 32 bytes"
        vid = self.vid_of_sender(tx.sender)
        if vid is None:
            return False, "recorder unregistered"
        if not self.has_access(vid, resource_for_key(key), "manage", block_time):
            return False, "recorder lacks manage grant"
        if key in self.hia:
            return False, "already recorded"
        self.hia[key] = HiaEntry(digest, vid, height)
        return True, key

    def _grant(self, tx, height: int, block_time: float):
        r = Reader(tx.args)
        subject_vid = r.field().decode()
        resource = r.field().decode()
        actions = frozenset(a for a in r.field().decode().split(",") if a)
        expiry = int.from_bytes(r.field(), "big") / 1000.0
        if not actions or not actions <= set(VALID_ACTIONS):
            return False, f"actions must be subset of {VALID_ACTIONS}"
        grantor_vid = self.vid_of_sender(tx.sender)
        if grantor_vid is None:
            return False, "grantor unregistered"
        if not self.has_access(grantor_vid, resource, "manage", block_time):
            return False, "grantor lacks manage grant"
        if subject_vid not in self.by_vid:
            return False, "subject unregistered"
        if expiry <= block_time:
            return False, "expiry not in the future"
        self.acl[(subject_vid, resource)] = GrantEntry(actions, expiry, height)
        return True, f"{subject_vid}:{resource}"

    # -- canonical digest --

    def digest(self, include_heights: bool = False) -> bytes:
        """Canonical state digest; heights excluded by default so digests
        compare across runs whose transactions landed in different blocks."""
        h = hashlib.sha256()
        for address in sorted(self.registry):
            e = self.registry[address]
            h.update(b"R" + address + e.vid.encode() + e.public_key)
            if include_heights:
                h.update(e.height.to_bytes(8, "big"))
        for key in sorted(self.hia):
            e = self.hia[key]
            h.update(b"H" + key.encode() + e.digest + e.recorder_vid.encode())
            if include_heights:
                h.update(e.height.to_bytes(8, "big"))
        for vid, resource in sorted(self.acl):
            g = self.acl[(vid, resource)]
            h.update(b"A" + vid.encode() + resource.encode() +
                     ",".join(sorted(g.actions)).encode() +
                     int(g.expiry * 1000).to_bytes(8, "big"))
            if include_heights:
                h.update(g.height.to_bytes(8, "big"))
        return h.digest()
