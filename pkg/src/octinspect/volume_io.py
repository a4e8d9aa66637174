"""Volume container and the OVF on-disk format.

OVF layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"OCTV"
    4       2     version (u16, always 1)
    6       1     bit depth (8 or 16)
    7       1     pad (0)
    8       4     width  (u32)
    12      4     height (u32)
    16      4     depth  (u32)
    20      ...   voxels, slice-major: z * width * height + y * width + x
                  one byte per voxel (bit depth 8) or u16 LE (bit depth 16)
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionOverflow,
    EmptyDirectory,
    InvalidVolume,
    IoFailure,
    MixedDimensions,
    SliceOutOfRange,
    TrailingData,
    TruncatedFile,
    UnsupportedBitDepth,
    UnsupportedVersion,
    VolumeFormatError,
)
from .netpbm import read_pgm

MAGIC = b"OCTV"
VERSION = 1
HEADER = struct.Struct("<4sHBBIII")
HEADER_SIZE = HEADER.size  # 20 bytes

_DTYPES = {8: np.dtype(np.uint8), 16: np.dtype("<u2")}


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable stack of grayscale slices.

    ``voxels`` has shape (depth, height, width); it is copied on construction
    and marked read-only.
    """

    id: str
    voxels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        if self.bit_depth not in _DTYPES:
            raise UnsupportedBitDepth(f"bit depth {self.bit_depth} not in (8, 16)")
        arr = np.asarray(self.voxels)
        if arr.ndim != 3:
            raise InvalidVolume(f"voxels must be 3D (depth, height, width), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvalidVolume(f"every dimension must be >= 1, got {arr.shape}")
        if arr.dtype.kind not in "ui":
            raise InvalidVolume(f"voxels must be integers, got {arr.dtype}")
        if arr.size and (int(arr.min()) < 0 or int(arr.max()) >= 1 << self.bit_depth):
            raise InvalidVolume(f"voxel values outside [0, 2^{self.bit_depth})")
        arr = np.array(arr, dtype=_DTYPES[self.bit_depth].newbyteorder("="), order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]

    @property
    def height(self) -> int:
        return self.voxels.shape[1]

    @property
    def width(self) -> int:
        return self.voxels.shape[2]

    def slice(self, z: int) -> SliceView:
        return SliceView(self, z)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.id == other.id
            and self.bit_depth == other.bit_depth
            and self.voxels.shape == other.voxels.shape
            and bool(np.array_equal(self.voxels, other.voxels))
        )

    def __hash__(self):
        return hash((self.id, self.bit_depth, self.voxels.shape))

    def __repr__(self):
        return (f"Volume(id={self.id!r}, width={self.width}, height={self.height}, "
                f"depth={self.depth}, bit_depth={self.bit_depth})")


@dataclass(frozen=True)
class SliceView:
    volume: Volume
    z: int

    def __post_init__(self):
        if not 0 <= self.z < self.volume.depth:
            raise SliceOutOfRange(f"slice {self.z} outside [0, {self.volume.depth})")

    @property
    def pixels(self) -> np.ndarray:
        """Read-only (height, width) view of the slice."""
        return self.volume.voxels[self.z]

    @property
    def width(self) -> int:
        return self.volume.width

    @property
    def height(self) -> int:
        return self.volume.height


def decode_ovf(data: bytes, volume_id: str = "") -> Volume:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, file has {len(data)}")
    _, version, bit_depth, pad, width, height, depth = HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"OVF version {version}")
    if bit_depth not in _DTYPES:
        raise UnsupportedBitDepth(f"bit depth {bit_depth} not in (8, 16)")
    if pad != 0:
        # a nonzero pad byte could not be reproduced on save
        raise VolumeFormatError(f"header pad byte is {pad}, expected 0")
    count = width * height * depth
    if count == 0 or count >= 1 << 63:
        raise DimensionOverflow(f"dimensions {width}x{height}x{depth}")
    expected = count * (bit_depth // 8)
    payload = len(data) - HEADER_SIZE
    if payload < expected:
        raise TruncatedFile(f"payload has {payload} bytes, header declares {expected}")
    if payload > expected:
        raise TrailingData(f"{payload - expected} bytes after the declared payload")
    voxels = np.frombuffer(data, dtype=_DTYPES[bit_depth], count=count, offset=HEADER_SIZE)
    return Volume(volume_id, voxels.reshape(depth, height, width), bit_depth)


def encode_ovf(v: Volume) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, v.bit_depth, 0, v.width, v.height, v.depth)
    return header + v.voxels.astype(_DTYPES[v.bit_depth], copy=False).tobytes()


def load_ovf(path, volume_id: str | None = None) -> Volume:
    """Load a volume; its id defaults to the file stem."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        return decode_ovf(data, path.stem if volume_id is None else volume_id)
    except VolumeFormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def save_ovf(v: Volume, path) -> None:
    try:
        Path(path).write_bytes(encode_ovf(v))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _pgm_files(directory: Path) -> list[Path]:
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and re.search(r"\.pgm$", p.name, re.I)),
        key=lambda p: p.name,
    )


def import_slice_dir(directory, volume_id: str) -> Volume:
    """Stack every ``*.pgm`` file in ``directory`` (lexicographic filename order).

    Bit depth is 8 when every slice has maxval <= 255, else 16.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"{directory}: not a directory")
    files = _pgm_files(directory)
    if not files:
        raise EmptyDirectory(f"{directory}: no .pgm files")
    slices = []
    maxval = 0
    for f in files:
        pixels, mv = read_pgm(f)
        if slices and pixels.shape != slices[0].shape:
            h0, w0 = slices[0].shape
            h, w = pixels.shape
            raise MixedDimensions(f"{f.name} is {w}x{h}, expected {w0}x{h0}")
        slices.append(pixels)
        maxval = max(maxval, mv)
    bit_depth = 8 if maxval <= 255 else 16
    stack = np.stack([s.astype(_DTYPES[bit_depth].newbyteorder("=")) for s in slices])
    return Volume(volume_id, stack, bit_depth)
