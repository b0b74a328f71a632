"""Keypoint and binary descriptor containers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lacmatch.imagecore import Point2


@dataclass
class Keypoint:
    position: Point2
    response: float
    angle: float = 0.0


class Keypoints:
    """Struct-of-arrays keypoint set; indexing yields :class:`Keypoint`."""

    def __init__(self, xy, response, angle=None):
        self.xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        self.response = np.asarray(response, dtype=np.float64).reshape(-1)
        if angle is None:
            angle = np.zeros(len(self.response))
        self.angle = np.asarray(angle, dtype=np.float64).reshape(-1)
        if not (len(self.xy) == len(self.response) == len(self.angle)):
            raise ValueError("keypoint arrays disagree in length")

    @classmethod
    def empty(cls) -> "Keypoints":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_list(cls, kps) -> "Keypoints":
        kps = list(kps)
        if not kps:
            return cls.empty()
        return cls(
            [(k.position.x, k.position.y) for k in kps],
            [k.response for k in kps],
            [k.angle for k in kps],
        )

    def __len__(self):
        return len(self.response)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Keypoints(self.xy[i], self.response[i], self.angle[i])
        x, y = self.xy[i]
        return Keypoint(Point2(float(x), float(y)), float(self.response[i]), float(self.angle[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def shifted(self, dx: float, dy: float) -> "Keypoints":
        return Keypoints(self.xy + (dx, dy), self.response, self.angle)


class BinaryDescriptor:
    """A fixed-length bitstring."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        self.bits = np.asarray(bits, dtype=bool).reshape(-1)

    @classmethod
    def from_int(cls, value: int, length: int) -> "BinaryDescriptor":
        """Bit ``length - 1 - i`` of ``value`` becomes bit ``i`` (MSB first)."""
        return cls([(value >> (length - 1 - i)) & 1 for i in range(length)])

    def __len__(self):
        return len(self.bits)

    def packed(self) -> np.ndarray:
        return np.packbits(self.bits)

    def __eq__(self, other):
        return isinstance(other, BinaryDescriptor) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"BinaryDescriptor(len={len(self)})"


class DescriptorSet:
    """``n`` descriptors of ``length`` bits packed MSB-first into bytes."""

    def __init__(self, packed: np.ndarray, length: int):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape[1] != math.ceil(length / 8):
            raise ValueError(f"packed shape {packed.shape} does not fit length {length}")
        self.packed = packed
        self.length = int(length)
        self._signs = None

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "DescriptorSet":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("bits must be (n, length)")
        return cls(np.packbits(bits, axis=1), bits.shape[1])

    @classmethod
    def empty(cls, length: int) -> "DescriptorSet":
        return cls(np.zeros((0, math.ceil(length / 8)), np.uint8), length)

    def bits(self) -> np.ndarray:
        return np.unpackbits(self.packed, axis=1, count=self.length).astype(bool)

    def signs(self) -> np.ndarray:
        """Cached (n, length) float32 matrix with +1 for set bits, -1 otherwise."""
        if self._signs is None:
            self._signs = np.where(self.bits(), np.float32(1), np.float32(-1))
        return self._signs

    def __len__(self):
        return self.packed.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return DescriptorSet(self.packed[i], self.length)
        return BinaryDescriptor(np.unpackbits(self.packed[i], count=self.length))
