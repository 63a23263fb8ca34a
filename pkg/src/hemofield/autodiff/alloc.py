"""glibc allocator tuning for large short-lived arrays.

Training allocates and frees many multi-megabyte temporaries per step. By
default glibc serves those with fresh ``mmap`` pages, so every temporary
pays first-touch page faults. Raising the mmap and trim thresholds keeps
freed blocks in the heap for reuse.
"""

import ctypes
import ctypes.util
import logging

logger = logging.getLogger(__name__)

M_TRIM_THRESHOLD = -1
M_TOP_PAD = -2
M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator(mmap_threshold=32 << 20, trim_threshold=1 << 30, top_pad=64 << 20):
    """Best effort; silently does nothing off glibc."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        return False
    ok = all(mallopt(opt, val) == 1 for opt, val in (
        (M_MMAP_THRESHOLD, mmap_threshold), (M_TRIM_THRESHOLD, trim_threshold), (M_TOP_PAD, top_pad)))
    logger.debug("allocator tuning %s", "applied" if ok else "rejected")
    _done = ok
    return ok
