from __future__ import annotations

import enum

from .errors import OutOfBounds, ZeroSize


class Placement(enum.Enum):
    ON_CHIP = "onchip"
    OFF_CHIP = "offchip"

    @classmethod
    def parse(cls, value: "Placement | str") -> "Placement":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "").replace("-", "")
        for p in cls:
            if p.value == key:
                return p
        raise ValueError(f"unknown placement {value!r}")


class Segment:
    """A node's registered shared memory region.

    Offsets are relative to the start of the segment. Placement is carried
    as metadata only and has no effect on timing.
    """

    def __init__(self, size: int, placement: Placement | str = Placement.ON_CHIP):
        if size <= 0:
            raise ZeroSize(f"segment size must be positive, got {size}")
        self._data = bytearray(size)
        self.placement = Placement.parse(placement)

    @property
    def size(self) -> int:
        return len(self._data)

    def _check(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > len(self._data):
            raise OutOfBounds(f"[{offset}, {offset + length}) outside segment of {len(self._data)} bytes")

    def read(self, offset: int, length: int) -> bytes:
        self._check(offset, length)
        return bytes(self._data[offset:offset + length])

    def write(self, offset: int, data: bytes) -> None:
        self._check(offset, len(data))
        self._data[offset:offset + len(data)] = data

    def snapshot(self) -> bytes:
        return bytes(self._data)

    def __repr__(self):
        return f"Segment(size={self.size}, placement={self.placement.value})"


def attach_segment(size: int, placement: Placement | str = Placement.ON_CHIP) -> Segment:
    return Segment(size, placement)


def seg_read(seg: Segment, offset: int, length: int) -> bytes:
    return seg.read(offset, length)


def seg_write(seg: Segment, offset: int, data: bytes) -> None:
    seg.write(offset, data)
