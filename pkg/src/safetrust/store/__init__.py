from .backends import AppendLogBackend, MemoryBackend
from .closure import (ClosureLimits, ClosureResult, TokenMismatchError, closure_of,
                      fetch_closure, store_getter)
from .core import (DEFAULT_MAX_PAYLOAD, DeleteRejected, DeleteRequest, NotFoundError,
                   PostRejected, SafeStore, StoreError, StoreRecord, sign_delete)

__all__ = [
    "AppendLogBackend", "MemoryBackend", "ClosureLimits", "ClosureResult",
    "TokenMismatchError", "closure_of", "fetch_closure", "store_getter",
    "DEFAULT_MAX_PAYLOAD", "DeleteRejected", "DeleteRequest", "NotFoundError",
    "PostRejected", "SafeStore", "StoreError", "StoreRecord", "sign_delete",
]
