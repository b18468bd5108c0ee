"""oblivmem: an access-pattern-hiding personal memory store.

Encrypted embeddings and data chunks live in two tree-ORAM stores on
untrusted storage; retrieval is filtered through an in-enclave metadata
graph and a product-quantized vector index, and all maintenance rides
along inside ordinary accesses.  A calibrated synthetic-workload
generator and a verification harness turn the design's security and
efficiency claims into executable checks.
"""

__version__ = "0.1.0"

from .trace import EventKind, StoreId, TraceEvent, TraceLog, structurally_equivalent

__all__ = [
    "EventKind",
    "StoreId",
    "TraceEvent",
    "TraceLog",
    "structurally_equivalent",
    "__version__",
]
