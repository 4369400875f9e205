from .chain import (
    Block,
    Blockchain,
    GenesisConfig,
    MinerSet,
    Transaction,
    ValidationError,
    decode_block,
    decode_chain,
    encode_block,
    encode_chain,
    encode_tx,
    hash_block,
    hash_tx,
    sign,
    verify,
)
from .contracts import ContractState, Receipt

__all__ = [
    "Block", "Blockchain", "GenesisConfig", "MinerSet", "Transaction",
    "ValidationError", "decode_block", "decode_chain", "encode_block",
    "encode_chain", "encode_tx", "hash_block", "hash_tx", "sign", "verify",
    "ContractState", "Receipt",
]
