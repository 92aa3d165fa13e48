"""Small shared helpers for deterministic text output."""

from __future__ import annotations

import os
import tempfile


def format_complex(z: complex) -> str:
    """Canonical complex literal: shortest round-trip parts, explicit sign."""
    z = complex(z)
    return f"{z.real:.17g}{z.imag:+.17g}j"


def format_real(x: float) -> str:
    return f"{float(x):.17g}"


def write_text_atomic(path: str, text: str) -> None:
    """Write then rename so readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def thread_count() -> int:
    """Worker cap for mode loops, from NECKSPEC_THREADS (default 1)."""
    raw = os.environ.get("NECKSPEC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
