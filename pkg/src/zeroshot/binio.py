"""Bounds-checked sequential reads from a byte buffer."""

from __future__ import annotations

import struct

import numpy as np

from .errors import TruncatedFileError


class Reader:
    def __init__(self, buf: bytes, label: str):
        self.buf, self.label, self.offset = buf, label, 0

    def take(self, n: int) -> bytes:
        end = self.offset + n
        if end > len(self.buf):
            raise TruncatedFileError(
                f"{self.label}: truncated at byte {len(self.buf)}, needed {n} bytes "
                f"from offset {self.offset}",
                offset=self.offset,
            )
        out = self.buf[self.offset : end]
        self.offset = end
        return out

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))

    def floats(self, count: int, dtype: str) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * width), dtype=dtype).astype(np.float64)
