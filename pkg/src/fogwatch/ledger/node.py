"""A ledger node: transaction pool, proof-of-authority mining loop, HTTP API.

Every node validates and stores the full chain; miners additionally propose
in their round-robin slots. Nodes gossip transactions and broadcast blocks
over loopback HTTP. The same server also mounts the security-service
endpoints (registration, authentication, hashed-index record/verify, grants,
access checks), which are stateless handlers over the committed state.
"""

from __future__ import annotations

import binascii
import hashlib
import json
import logging
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

from ..clocks import Clock, SystemClock
from ..httpd import QuietHandler, start_server
from .chain import (
    Block,
    Blockchain,
    GenesisConfig,
    Transaction,
    ValidationError,
    decode_block,
    decode_chain,
    decode_tx,
    encode_block,
    encode_chain,
    hash_tx,
    verify,
)
from .encoding import DecodeError

log = logging.getLogger(__name__)


class LedgerNode:
    def __init__(self, genesis: GenesisConfig, miner_id: str | None = None,
                 miner_private_key: bytes | None = None,
                 peers: list[str] | None = None,
                 clock: Clock | None = None,
                 deterministic_time: bool = False,
                 chain_path: str | Path | None = None,
                 slot_anchor: float | None = None):
        self.genesis = genesis
        self.miner_id = miner_id
        self.miner_key = miner_private_key
        self.peers = list(peers or [])
        self.clock = clock or SystemClock()
        self.deterministic_time = deterministic_time
        self.chain_path = Path(chain_path) if chain_path else None
        self.slot_anchor = slot_anchor if slot_anchor is not None else time.time()
        self.chain = Blockchain(genesis)
        self.pool: dict[bytes, Transaction] = {}
        self.lock = threading.RLock()
        self._stop = threading.Event()
        self._mine_thread: threading.Thread | None = None
        self._server = None
        self.port: int | None = None
        if self.chain_path and self.chain_path.exists():
            self._load_chain()

    # ---- chain persistence ----

    def _persist_chain(self) -> None:
        if self.chain_path is None:
            return
        tmp = self.chain_path.with_suffix(".tmp")
        tmp.write_bytes(encode_chain(self.chain.blocks))
        tmp.replace(self.chain_path)

    def _load_chain(self) -> None:
        blocks = decode_chain(self.chain_path.read_bytes())
        self.chain = Blockchain.replay(self.genesis, blocks[1:])
        log.info("reloaded chain at height %d", self.chain.head.height)

    # ---- transactions ----

    def submit_tx(self, raw: bytes, relay: bool = True) -> tuple[bool, str, bytes]:
        try:
            tx = decode_tx(raw)
        except DecodeError as exc:
            return False, f"undecodable transaction: {exc}", b""
        txh = hash_tx(tx)
        with self.lock:
            if txh in self.pool:
                return True, "already pooled", txh
            if txh in self.chain.receipts:
                return True, "already committed", txh
            self.pool[txh] = tx
        if relay:
            self._gossip("/tx", raw)
        return True, "pooled", txh

    def _gossip(self, path: str, raw: bytes) -> None:
        def push(peer):
            try:
                req = urllib.request.Request(
                    peer + path, data=raw,
                    headers={"X-Fogwatch-Relay": "1",
                             "Content-Type": "application/octet-stream"})
                urllib.request.urlopen(req, timeout=5).read()
            except (urllib.error.URLError, OSError):
                pass
        for peer in self.peers:
            threading.Thread(target=push, args=(peer,), daemon=True).start()

    # ---- mining ----

    def current_slot(self) -> int:
        interval = self.genesis.block_interval
        return max(1, int((time.time() - self.slot_anchor) / interval) + 1)

    def _slot_timestamp_ms(self, slot: int) -> int:
        if self.deterministic_time:
            return int(slot * self.genesis.block_interval * 1000)
        return int(time.time() * 1000)

    def try_propose(self, slot: int) -> Block | None:
        """Propose for this slot if it is ours and not yet filled."""
        if self.miner_id is None or self.miner_key is None:
            return None
        with self.lock:
            if self.chain.head.height >= slot:
                return None
            if self.genesis.miners.proposer_for(slot) != self.miner_id:
                return None
            pending = list(self.pool.values())
            pending.sort(key=lambda t: (t.sender, t.nonce))
            block = self.chain.propose(slot, pending, self.miner_id,
                                       self.miner_key, self._slot_timestamp_ms(slot))
            self.chain.validate_and_append(block)
            self._drop_included(block)
            self._persist_chain()
        self._gossip("/block", encode_block(block))
        return block

    def _drop_included(self, block: Block) -> None:
        for tx in block.transactions:
            self.pool.pop(hash_tx(tx), None)

    def receive_block(self, raw: bytes, from_peer: str | None = None) -> tuple[bool, str]:
        try:
            block = decode_block(raw)
        except DecodeError as exc:
            return False, f"undecodable block: {exc}"
        with self.lock:
            if block.height <= self.chain.head.height:
                return True, "stale"
            try:
                self.chain.validate_and_append(block)
                self._drop_included(block)
                self._persist_chain()
                return True, "appended"
            except ValidationError as exc:
                if exc.reason == "broken linkage":
                    return self._sync(from_peer)
                return False, str(exc)

    def _sync(self, from_peer: str | None) -> tuple[bool, str]:
        peers = ([from_peer] if from_peer else []) + self.peers
        for peer in peers:
            try:
                raw = urllib.request.urlopen(peer + "/chain", timeout=5).read()
                blocks = decode_chain(raw)
            except (urllib.error.URLError, OSError, DecodeError):
                continue
            if not blocks or blocks[-1].height <= self.chain.head.height:
                continue
            try:
                replayed = Blockchain.replay(self.genesis, blocks[1:])
            except ValidationError:
                continue
            for b in replayed.blocks[1:]:
                self._drop_included(b)
            self.chain = replayed
            self._persist_chain()
            return True, f"synced to height {self.chain.head.height}"
        return False, "sync failed"

    def _mine_loop(self) -> None:
        interval = self.genesis.block_interval
        while not self._stop.is_set():
            slot = self.current_slot()
            try:
                self.try_propose(slot)
            except ValidationError as exc:
                log.warning("propose failed: %s", exc)
            # sleep to just past the next slot boundary
            next_edge = self.slot_anchor + slot * interval
            self._stop.wait(timeout=max(0.02, next_edge - time.time() + 0.01))

    # ---- security-service handlers (stateless over committed state) ----

    def authenticate(self, vid: str, nonce: str, signature_hex: str) -> str:
        with self.lock:
            address = self.chain.state.by_vid.get(vid)
            if address is None:
                return "unregistered"
            key = self.chain.state.registry[address].public_key
        try:
            signature = binascii.unhexlify(signature_hex)
        except (binascii.Error, ValueError):
            return "bad-signature"
        payload = (nonce + vid).encode()
        return "accept" if verify(key, payload, signature) else "bad-signature"

    def check_access(self, vid: str, resource: str, action: str) -> tuple[bool, str]:
        now = self.clock.now()
        with self.lock:
            if vid not in self.chain.state.by_vid:
                return False, "unregistered vid"
            if self.chain.state.has_access(vid, resource, action, now):
                return True, "granted"
        return False, "no unexpired grant"

    def hia_verify(self, key: str, frame_bytes: bytes) -> str:
        with self.lock:
            entry = self.chain.state.hia.get(key)
        if entry is None:
            return "unknown"
        return "authentic" if entry.digest == hashlib.sha256(frame_bytes).digest() else "tampered"

    def submit_and_wait(self, raw: bytes, timeout: float | None = None) -> tuple[bool, str]:
        """Submit a transaction and wait for its receipt (inclusion)."""
        ok, reason, txh = self.submit_tx(raw)
        if not ok:
            return False, reason
        deadline = time.time() + (timeout or 4 * self.genesis.block_interval)
        while time.time() < deadline:
            with self.lock:
                receipt = self.chain.receipts.get(txh)
            if receipt is not None:
                return receipt.ok, receipt.info
            time.sleep(0.02)
        return False, "timeout waiting for inclusion"

    # ---- lifecycle ----

    def start(self, host: str = "127.0.0.1", port: int = 0,
              mine: bool = True) -> int:
        handler = _make_handler(self)
        self._server, self.port = start_server(handler, host, port)
        if mine and self.miner_id is not None:
            self._mine_thread = threading.Thread(target=self._mine_loop, daemon=True)
            self._mine_thread.start()
        return self.port

    def stop(self) -> None:
        self._stop.set()
        if self._mine_thread is not None:
            self._mine_thread.join(timeout=5)
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        with self.lock:
            self._persist_chain()


def _make_handler(node: LedgerNode):
    class Handler(QuietHandler):
        def do_POST(self):
            relay = self.headers.get("X-Fogwatch-Relay") == "1"
            if self.path == "/tx":
                ok, reason, txh = node.submit_tx(self.read_body(), relay=not relay)
                self.send_json(200 if ok else 400,
                               {"accepted": ok, "reason": reason, "tx": txh.hex()})
            elif self.path == "/block":
                ok, reason = node.receive_block(self.read_body())
                self.send_json(200 if ok else 400, {"accepted": ok, "reason": reason})
            elif self.path == "/register":
                self._tx_endpoint()
            elif self.path == "/hia/record":
                self._tx_endpoint()
            elif self.path == "/acl/grant":
                self._tx_endpoint()
            elif self.path == "/authenticate":
                body = self.read_json()
                if body is None or not {"vid", "nonce", "signature"} <= set(body):
                    self.send_json(400, {"error": "need vid, nonce, signature"})
                    return
                verdict = node.authenticate(body["vid"], body["nonce"], body["signature"])
                self.send_json(200, {"verdict": verdict})
            elif self.path == "/hia/verify":
                body = self.read_json()
                if body is None or not {"key", "frame_hex"} <= set(body):
                    self.send_json(400, {"error": "need key, frame_hex"})
                    return
                try:
                    frame = binascii.unhexlify(body["frame_hex"])
                except (binascii.Error, ValueError):
                    self.send_json(400, {"error": "frame_hex not hex"})
                    return
                self.send_json(200, {"result": node.hia_verify(body["key"], frame)})
            else:
                self.send_json(404, {"error": "unknown endpoint"})

        def _tx_endpoint(self):
            body = self.read_json()
            if body is None or "tx" not in body:
                self.send_json(400, {"error": "need tx hex"})
                return
            try:
                raw = binascii.unhexlify(body["tx"])
            except (binascii.Error, ValueError):
                self.send_json(400, {"error": "tx not hex"})
                return
            ok, info = node.submit_and_wait(raw)
            self.send_json(200 if ok else 400, {"ok": ok, "info": info})

        def do_GET(self):
            path = self.path
            if path.startswith("/acl/check"):
                from urllib.parse import parse_qs, urlparse
                q = parse_qs(urlparse(path).query)
                vid = q.get("vid", [""])[0]
                res = q.get("res", [""])[0]
                act = q.get("act", [""])[0]
                allow, reason = node.check_access(vid, res, act)
                self.send_json(200, {"allow": allow, "reason": reason})
            elif path == "/head":
                with node.lock:
                    head = node.chain.head
                    self.send_json(200, {
                        "height": head.height,
                        "hash": node.chain.head_hash.hex(),
                        "timestamp_ms": head.timestamp_ms,
                    })
            elif path == "/chain":
                with node.lock:
                    raw = encode_chain(node.chain.blocks)
                self.send_bytes(200, raw)
            elif path.startswith("/block/"):
                try:
                    height = int(path[len("/block/"):])
                except ValueError:
                    self.send_json(400, {"error": "bad height"})
                    return
                with node.lock:
                    block = node.chain.block_at_height(height)
                if block is None:
                    self.send_json(404, {"error": "no block at height"})
                else:
                    self.send_json(200, {
                        "height": block.height,
                        "previous_hash": block.previous_hash.hex(),
                        "timestamp_ms": block.timestamp_ms,
                        "proposer": block.proposer,
                        "tx_count": len(block.transactions),
                        "encoded": encode_block(block).hex(),
                    })
            elif path.startswith("/receipt/"):
                try:
                    txh = binascii.unhexlify(path[len("/receipt/"):])
                except (binascii.Error, ValueError):
                    self.send_json(400, {"error": "bad tx hash"})
                    return
                with node.lock:
                    receipt = node.chain.receipts.get(txh)
                if receipt is None:
                    self.send_json(404, {"known": False})
                else:
                    self.send_json(200, {"known": True, "ok": receipt.ok,
                                         "info": receipt.info})
            elif path.startswith("/state/"):
                self._state_query(path[len("/state/"):])
            else:
                self.send_json(404, {"error": "unknown endpoint"})

        def _state_query(self, rest: str):
            contract, _, key = rest.partition("/")
            with node.lock:
                state = node.chain.state
                if contract == "digest" and not key:
                    self.send_json(200, {"digest": state.digest().hex()})
                elif contract == "registry":
                    try:
                        address = binascii.unhexlify(key)
                    except (binascii.Error, ValueError):
                        self.send_json(400, {"error": "address must be hex"})
                        return
                    entry = state.registry.get(address)
                    if entry is None:
                        self.send_json(404, {"error": "unregistered"})
                    else:
                        self.send_json(200, {"vid": entry.vid,
                                             "pubkey": entry.public_key.hex(),
                                             "height": entry.height})
                elif contract == "vid":
                    address = state.by_vid.get(key)
                    if address is None:
                        self.send_json(404, {"error": "unknown vid"})
                    else:
                        entry = state.registry[address]
                        self.send_json(200, {"address": address.hex(),
                                             "pubkey": entry.public_key.hex()})
                elif contract == "hia":
                    entry = state.hia.get(key)
                    if entry is None:
                        self.send_json(404, {"error": "unknown key"})
                    else:
                        self.send_json(200, {"hash": entry.digest.hex(),
                                             "recorder": entry.recorder_vid,
                                             "height": entry.height})
                elif contract == "acl":
                    vid, _, resource = key.partition("/")
                    grant = state.acl.get((vid, resource))
                    if grant is None:
                        self.send_json(404, {"error": "no grant"})
                    else:
                        self.send_json(200, {
                            "actions": sorted(grant.actions),
                            "expiry": grant.expiry,
                            "height": grant.height,
                        })
                else:
                    self.send_json(404, {"error": f"unknown contract {contract!r}"})

    return Handler
