"""Batch Paillier operator engine with a federated LR simulator.

Layers, bottom up: `paillier` (keys and raw homomorphic identities),
`encoding` (fixed-point codec), `batches`/`operators`/`backends` (packed
batch kernels over pluggable execution backends), `bufferpool` (reusable
host buffers and the wire format), `arena` (cached-intermediate execution
with transfer accounting), `flr` (the two-party training protocols) and
`cli` (keygen / bench / train / synth).
"""

from .arena import Arena, ArenaHandle, TransferLedger
from .backends import ExecutionBackend, NaiveBackend, ParallelBackend, get_backend
from .batches import CiphertextBatch, PlaintextBatch, decode_batch, encode_batch
from .encoding import EncodedNumber, FixedPointOverflow
from .paillier import (
    KeyPair,
    PrivateKey,
    PublicKey,
    RawCiphertext,
    default_rng,
    keygen,
    keypair_from_primes,
)

__version__ = "0.1.0"

__all__ = [
    "Arena", "ArenaHandle", "CiphertextBatch", "EncodedNumber",
    "ExecutionBackend", "FixedPointOverflow", "KeyPair", "NaiveBackend",
    "ParallelBackend", "PlaintextBatch", "PrivateKey", "PublicKey",
    "RawCiphertext", "TransferLedger", "decode_batch", "default_rng",
    "encode_batch", "get_backend", "keygen", "keypair_from_primes",
    "__version__",
]
