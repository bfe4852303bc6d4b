"""Allocator tuning for array-churning workloads."""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_configured = False


def configure_allocator() -> bool:
    """Keep large activation buffers on the heap so they get recycled.

    A training step allocates and frees tens of multi-megabyte arrays;
    with glibc defaults those round-trip through mmap/munmap and every
    step pays full page-fault costs again. Raising the mmap and trim
    thresholds lets the heap retain the blocks. Idempotent; quietly a
    no-op off glibc.
    """
    global _configured
    if _configured:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) == 1
        ok = libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30) == 1 and ok
    except OSError:
        return False
    _configured = bool(ok)
    return _configured
