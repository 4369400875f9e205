"""Hash-chained blocks under round-robin proof-of-authority.

A fixed, certificated miner set takes turns proposing: the authorized
proposer for height h is ``miners[(h - 1) % len(miners)]``. Heights advance
with the slot clock, so a silent miner leaves a height gap at its turns
without stalling the chain. Blocks sign all fields, every transaction is
signed by its sender, and validation from genesis re-derives the full
contract state, so any committed bit that changes is detected at or before
the block that carries it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .contracts import ContractState, Receipt
from .encoding import DecodeError, Reader, field, u64

ZERO32 = bytes(32)
GENESIS_PROPOSER = "genesis"


class ValidationError(ValueError):
    def __init__(self, reason: str, height: int | None = None):
        at = f" at height {height}" if height is not None else ""
        super().__init__(f"{reason}{at}")
        self.reason = reason
        self.height = height


def sign(private_key: bytes, payload: bytes) -> bytes:
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(payload)


@lru_cache(maxsize=4096)
def _pubkey(pub: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(pub)


# Verification is pure, so results are memoized; mutation-sweep tests
# revalidate the same prefix blocks thousands of times.
_verify_memo: dict[bytes, bool] = {}


def verify(pub: bytes, payload: bytes, signature: bytes) -> bool:
    key = hashlib.sha256(pub + signature + payload).digest()
    hit = _verify_memo.get(key)
    if hit is not None:
        return hit
    try:
        _pubkey(pub).verify(signature, payload)
        ok = True
    except (InvalidSignature, ValueError):
        ok = False
    if len(_verify_memo) > 1 << 18:
        _verify_memo.clear()
    _verify_memo[key] = ok
    return ok


def public_key_of(private_key: bytes) -> bytes:
    priv = Ed25519PrivateKey.from_private_bytes(private_key)
    return priv.public_key().public_bytes_raw()


def address_of(public_key: bytes) -> bytes:
    return hashlib.sha256(public_key).digest()


def vid_of(address: bytes) -> str:
    return hashlib.sha256(address).hexdigest()[:16]


@dataclass(frozen=True)
class Transaction:
    sender: bytes          # 32-byte address
    nonce: int
    target: str            # registry | hia | acl
    method: str
    args: bytes
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return (field(self.sender) + field(u64(self.nonce)) +
                field(self.target.encode()) + field(self.method.encode()) +
                field(self.args) + field(b""))

    def signed(self, private_key: bytes) -> "Transaction":
        return Transaction(self.sender, self.nonce, self.target, self.method,
                           self.args, sign(private_key, self.signing_payload()))


def encode_tx(tx: Transaction) -> bytes:
    return (field(tx.sender) + field(u64(tx.nonce)) + field(tx.target.encode()) +
            field(tx.method.encode()) + field(tx.args) + field(tx.signature))


def decode_tx(data: bytes) -> Transaction:
    r = Reader(data)
    tx = Transaction(
        sender=r.field(), nonce=r.u64_field(), target=r.str_field(),
        method=r.str_field(), args=r.field(), signature=r.field(),
    )
    r.expect_done()
    if len(tx.sender) != 32:
        raise DecodeError("sender must be 32 bytes")
    return tx


def hash_tx(tx: Transaction) -> bytes:
    return hashlib.sha256(encode_tx(tx)).digest()


def _txs_blob(txs: tuple[Transaction, ...]) -> bytes:
    out = u64(len(txs))
    for tx in txs:
        out += field(encode_tx(tx))
    return out


@dataclass(frozen=True)
class Block:
    height: int
    previous_hash: bytes
    timestamp_ms: int
    transactions: tuple[Transaction, ...]
    transactions_hash: bytes
    proposer: str
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return (field(u64(self.height)) + field(self.previous_hash) +
                field(u64(self.timestamp_ms)) + field(_txs_blob(self.transactions)) +
                field(self.transactions_hash) + field(self.proposer.encode()) +
                field(b""))


def encode_block(b: Block) -> bytes:
    return (field(u64(b.height)) + field(b.previous_hash) +
            field(u64(b.timestamp_ms)) + field(_txs_blob(b.transactions)) +
            field(b.transactions_hash) + field(b.proposer.encode()) +
            field(b.signature))


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    height = r.u64_field()
    previous_hash = r.field()
    timestamp_ms = r.u64_field()
    blob = r.field()
    transactions_hash = r.field()
    proposer = r.str_field()
    signature = r.field()
    r.expect_done()
    if len(previous_hash) != 32 or len(transactions_hash) != 32:
        raise DecodeError("hash fields must be 32 bytes")
    br = Reader(blob)
    count = int.from_bytes(br.take(8), "big")
    txs = tuple(decode_tx(br.field()) for _ in range(count))
    br.expect_done()
    return Block(height, previous_hash, timestamp_ms, txs,
                 transactions_hash, proposer, signature)


def hash_block(b: Block) -> bytes:
    return hashlib.sha256(encode_block(b)).digest()


def genesis_block() -> Block:
    """The fixed genesis block, identical for every deployment."""
    return Block(
        height=0,
        previous_hash=ZERO32,
        timestamp_ms=0,
        transactions=(),
        transactions_hash=hashlib.sha256(_txs_blob(())).digest(),
        proposer=GENESIS_PROPOSER,
        signature=b"",
    )


@dataclass(frozen=True)
class MinerSet:
    ids: tuple[str, ...]
    public_keys: tuple[bytes, ...]

    def __post_init__(self):
        if not self.ids or len(self.ids) != len(self.public_keys):
            raise ValueError("miner ids and keys must pair up, non-empty")

    def proposer_for(self, height: int) -> str:
        return self.ids[(height - 1) % len(self.ids)]

    def key_of(self, miner_id: str) -> bytes | None:
        try:
            return self.public_keys[self.ids.index(miner_id)]
        except ValueError:
            return None


@dataclass(frozen=True)
class GenesisConfig:
    miners: MinerSet
    block_interval: float = 2.0
    # entities registered at genesis: raw public keys
    initial_registry: tuple[bytes, ...] = ()
    # grants active from genesis: (vid, resource, actions-csv, expiry seconds)
    initial_grants: tuple[tuple[str, str, str, float], ...] = ()

    def initial_state(self) -> ContractState:
        state = ContractState()
        for pubkey in self.initial_registry:
            state.bootstrap_register(pubkey)
        for vid, resource, actions, expiry in self.initial_grants:
            state.bootstrap_grant(vid, resource, actions, expiry)
        return state


class Blockchain:
    """Validated chain plus the contract state folded from genesis."""

    def __init__(self, genesis: GenesisConfig):
        self.genesis = genesis
        g = genesis_block()
        self.blocks: list[Block] = [g]
        self.block_hashes: list[bytes] = [hash_block(g)]
        self.state = genesis.initial_state()
        self.receipts: dict[bytes, Receipt] = {}

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def head_hash(self) -> bytes:
        return self.block_hashes[-1]

    def block_at_height(self, height: int) -> Block | None:
        for b in self.blocks:
            if b.height == height:
                return b
        return None

    def expected_nonce(self, sender: bytes) -> int:
        return self.state.nonces.get(sender, 0)

    def tx_valid(self, tx: Transaction, nonce_seq: dict[bytes, int] | None = None) -> str | None:
        """None when the transaction can enter a block, else the reason."""
        nonces = nonce_seq if nonce_seq is not None else {}
        expected = nonces.get(tx.sender, self.expected_nonce(tx.sender))
        if tx.nonce != expected:
            return f"nonce {tx.nonce} != expected {expected}"
        if tx.target == "registry" and tx.method == "register":
            # self-certifying: the registration key signs its own transaction
            try:
                pubkey = Reader(tx.args).field()
            except DecodeError:
                return "malformed register args"
            if address_of(pubkey) != tx.sender:
                return "sender is not the key's address"
            key = pubkey
        else:
            entry = self.state.registry.get(tx.sender)
            if entry is None:
                return "sender unregistered"
            key = entry.public_key
        if not verify(key, tx.signing_payload(), tx.signature):
            return "bad signature"
        return None

    def propose(self, height: int, pending: list[Transaction], miner_id: str,
                miner_private_key: bytes, timestamp_ms: int) -> Block:
        """Build a signed block for this miner's turn; invalid txs excluded."""
        if self.genesis.miners.proposer_for(height) != miner_id:
            raise ValidationError(f"{miner_id} is not the proposer", height)
        nonces: dict[bytes, int] = {}
        txs = []
        for tx in pending:
            if self.tx_valid(tx, nonces) is None:
                txs.append(tx)
                nonces[tx.sender] = nonces.get(tx.sender, self.expected_nonce(tx.sender)) + 1
        txs_t = tuple(txs)
        block = Block(
            height=height,
            previous_hash=self.head_hash,
            timestamp_ms=timestamp_ms,
            transactions=txs_t,
            transactions_hash=hashlib.sha256(_txs_blob(txs_t)).digest(),
            proposer=miner_id,
            signature=b"",
        )
        return replace(block, signature=sign(miner_private_key, block.signing_payload()))

    def validate_and_append(self, block: Block) -> list[Receipt]:
        """Append iff every check passes; the chain is untouched on rejection."""
        if block.height <= self.head.height:
            raise ValidationError("height not after head", block.height)
        if block.previous_hash != self.head_hash:
            raise ValidationError("broken linkage", block.height)
        expected = self.genesis.miners.proposer_for(block.height)
        if block.proposer != expected:
            raise ValidationError(
                f"out-of-turn proposer {block.proposer} (expected {expected})",
                block.height)
        miner_key = self.genesis.miners.key_of(block.proposer)
        if miner_key is None:
            raise ValidationError("proposer not in miner set", block.height)
        if not verify(miner_key, block.signing_payload(), block.signature):
            raise ValidationError("bad proposer signature", block.height)
        if hashlib.sha256(_txs_blob(block.transactions)).digest() != block.transactions_hash:
            raise ValidationError("transactions hash mismatch", block.height)
        nonces: dict[bytes, int] = {}
        for tx in block.transactions:
            reason = self.tx_valid(tx, nonces)
            if reason is not None:
                raise ValidationError(f"invalid transaction: {reason}", block.height)
            nonces[tx.sender] = nonces.get(tx.sender, self.expected_nonce(tx.sender)) + 1

        receipts = []
        for tx in block.transactions:
            receipt = self.state.apply(tx, block.height, block.timestamp_ms / 1000.0)
            self.receipts[hash_tx(tx)] = receipt
            receipts.append(receipt)
        self.blocks.append(block)
        self.block_hashes.append(hash_block(block))
        return receipts

    @classmethod
    def replay(cls, genesis: GenesisConfig, blocks: list[Block]) -> "Blockchain":
        """Re-fold the chain from genesis; raises where validation fails."""
        chain = cls(genesis)
        for b in blocks:
            chain.validate_and_append(b)
        return chain


def encode_chain(blocks: list[Block]) -> bytes:
    out = u64(len(blocks))
    for b in blocks:
        out += field(encode_block(b))
    return out


def decode_chain(data: bytes) -> list[Block]:
    r = Reader(data)
    count = int.from_bytes(r.take(8), "big")
    blocks = [decode_block(r.field()) for _ in range(count)]
    r.expect_done()
    return blocks
