"""Process-level settings read from the environment."""

from __future__ import annotations

import os

THREADS_VAR = "VORTONLAB_THREADS"


def worker_count() -> int:
    """Thread cap from VORTONLAB_THREADS (default 1)."""
    raw = os.environ.get(THREADS_VAR, "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_VAR} must be a positive integer, got {n}")
    return n
