"""Loading, writing and slicing of 3-D brain volumes.

Two on-disk formats are supported:

* Analyze 7.5 header/image pairs as distributed by OASIS (uint8, int16 and
  float32 voxels, either byte order).
* RVOL, a minimal little-endian format used for synthetic cohorts and tests::

      offset  size  field
      0       4     magic b"RVOL"
      4       12    nx, ny, nz (uint32)
      16      1     dtype code (0 uint8, 1 int16, 2 float32)
      17      1     kind code (0 intensity, 1 segmentation labels)
      18      ...   voxels, x fastest

Storage is x-fastest everywhere. Axial planes have constant z, coronal planes
constant y and sagittal planes constant x.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dementia_svm.errors import (
    DataError,
    MalformedHeaderError,
    TruncatedDataError,
    UnsupportedFormatError,
)

ANALYZE_HEADER_SIZE = 348
RVOL_MAGIC = b"RVOL"
RVOL_HEADER_SIZE = 18

# Analyze datatype code -> numpy base type
ANALYZE_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
# RVOL dtype code -> numpy base type
RVOL_DTYPES = {0: np.uint8, 1: np.int16, 2: np.float32}

SEGMENTATION_LABELS = (0, 1, 2, 3)


class VolumeKind(enum.Enum):
    INTENSITY = 0
    SEGMENTATION = 1


class Orientation(enum.Enum):
    AXIAL = "axial"
    CORONAL = "coronal"
    SAGITTAL = "sagittal"


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable 3-D scalar field.

    ``data`` is a flat float64 array of length nx*ny*nz in x-fastest order;
    ``array`` exposes it as a (nz, ny, nx) view.
    """

    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float]
    data: np.ndarray
    kind: VolumeKind = VolumeKind.INTENSITY

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        voxel = tuple(float(v) for v in self.voxel_size_mm)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise DataError(f"volume dims must be three positive counts, got {self.dims}")
        if len(voxel) != 3 or not all(v > 0 for v in voxel):
            raise DataError(f"voxel sizes must be positive, got {self.voxel_size_mm}")
        data = np.array(self.data, dtype=np.float64).ravel()
        if data.size != dims[0] * dims[1] * dims[2]:
            raise DataError(
                f"volume data has {data.size} values, dims {dims} require "
                f"{dims[0] * dims[1] * dims[2]}"
            )
        if self.kind is VolumeKind.SEGMENTATION:
            bad = ~np.isin(data, SEGMENTATION_LABELS)
            if bad.any():
                raise DataError(
                    f"segmentation volume contains label {data[bad][0]!r}; "
                    f"allowed labels are {SEGMENTATION_LABELS}"
                )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size_mm", voxel)
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def from_array(cls, array, voxel_size_mm=(1.0, 1.0, 1.0),
                   kind: VolumeKind = VolumeKind.INTENSITY) -> "Volume":
        """Build from an array indexed ``[z, y, x]``."""
        array = np.asarray(array)
        if array.ndim != 3:
            raise DataError(f"expected a 3-D array, got shape {array.shape}")
        nz, ny, nx = array.shape
        return cls((nx, ny, nz), voxel_size_mm, array.ravel(), kind)

    @property
    def array(self) -> np.ndarray:
        nx, ny, nz = self.dims
        return self.data.reshape(nz, ny, nx)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size_mm == other.voxel_size_mm
            and self.kind is other.kind
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Slice2D:
    """A 2-D plane of a volume. ``data`` is flat, u-fastest; ``image`` is (nv, nu)."""

    dims: tuple[int, int]
    data: np.ndarray
    orientation: Orientation
    index: int

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        data = np.array(self.data, dtype=np.float64).ravel()
        if len(dims) != 2 or any(d < 1 for d in dims) or data.size != dims[0] * dims[1]:
            raise DataError(f"slice data of size {data.size} does not match dims {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def from_image(cls, image, orientation=Orientation.AXIAL, index=0) -> "Slice2D":
        """Build from a 2-D array whose rows are v and columns are u."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise DataError(f"expected a 2-D image, got shape {image.shape}")
        nv, nu = image.shape
        return cls((nu, nv), image.ravel(), orientation, index)

    @property
    def image(self) -> np.ndarray:
        nu, nv = self.dims
        return self.data.reshape(nv, nu)


def extract_slice(volume: Volume, orientation: Orientation, index: int) -> Slice2D:
    """Cut one plane out of ``volume``.

    In-plane axes (u, v) are (x, y) for axial, (x, z) for coronal and (y, z)
    for sagittal slices.
    """
    orientation = Orientation(orientation)
    nx, ny, nz = volume.dims
    extent = {Orientation.AXIAL: nz, Orientation.CORONAL: ny, Orientation.SAGITTAL: nx}[orientation]
    if not 0 <= index < extent:
        raise IndexError(f"{orientation.value} index {index} outside [0, {extent})")
    vol = volume.array
    if orientation is Orientation.AXIAL:
        plane = vol[index, :, :]
    elif orientation is Orientation.CORONAL:
        plane = vol[:, index, :]
    else:
        plane = vol[:, :, index]
    return Slice2D.from_image(plane, orientation, index)


# --------------------------------------------------------------------------
# Analyze 7.5


def _detect_byteorder(header: bytes) -> str:
    if struct.unpack("<i", header[:4])[0] == ANALYZE_HEADER_SIZE:
        return "<"
    if struct.unpack(">i", header[:4])[0] == ANALYZE_HEADER_SIZE:
        return ">"
    raise MalformedHeaderError("sizeof_hdr is not 348 under either byte order")


def load_analyze(header_path, image_path, kind: VolumeKind = VolumeKind.INTENSITY) -> Volume:
    header = Path(header_path).read_bytes()
    if len(header) < ANALYZE_HEADER_SIZE:
        raise MalformedHeaderError(
            f"{header_path}: header is {len(header)} bytes, expected {ANALYZE_HEADER_SIZE}"
        )
    bo = _detect_byteorder(header)
    dim = struct.unpack(bo + "8h", header[40:56])
    datatype, bitpix = struct.unpack(bo + "2h", header[70:74])
    pixdim = struct.unpack(bo + "8f", header[76:108])
    vox_offset = struct.unpack(bo + "f", header[108:112])[0]

    if datatype not in ANALYZE_DTYPES:
        raise UnsupportedFormatError(f"{header_path}: unsupported Analyze datatype {datatype}")
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise MalformedHeaderError(f"{header_path}: dim[0] = {ndim} out of range")
    dims = tuple(dim[i] if i <= ndim else 1 for i in (1, 2, 3))
    if any(d < 1 for d in dims):
        raise MalformedHeaderError(f"{header_path}: non-positive dims {dims}")
    voxel = tuple(float(pixdim[i]) for i in (1, 2, 3))
    if not all(v > 0 for v in voxel):
        raise MalformedHeaderError(f"{header_path}: non-positive pixdim {voxel}")

    dtype = np.dtype(ANALYZE_DTYPES[datatype]).newbyteorder(bo)
    count = dims[0] * dims[1] * dims[2]
    offset = int(vox_offset)
    raw = Path(image_path).read_bytes()
    needed = offset + count * dtype.itemsize
    if len(raw) < needed:
        raise TruncatedDataError(
            f"{image_path}: {len(raw)} bytes, dims {dims} need {needed}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return Volume(dims, voxel, data.astype(np.float64), kind)


def write_analyze(volume: Volume, header_path, image_path, datatype: int = 4,
                  byteorder: str = "<") -> None:
    """Write a minimal Analyze 7.5 pair (only the fields the loader reads)."""
    if datatype not in ANALYZE_DTYPES:
        raise UnsupportedFormatError(f"unsupported Analyze datatype {datatype}")
    dtype = np.dtype(ANALYZE_DTYPES[datatype]).newbyteorder(byteorder)
    header = bytearray(ANALYZE_HEADER_SIZE)
    struct.pack_into(byteorder + "i", header, 0, ANALYZE_HEADER_SIZE)
    struct.pack_into(byteorder + "8h", header, 40, 3, *volume.dims, 1, 0, 0, 0)
    struct.pack_into(byteorder + "2h", header, 70, datatype, dtype.itemsize * 8)
    struct.pack_into(byteorder + "8f", header, 76, 0.0, *volume.voxel_size_mm, 0, 0, 0, 0)
    struct.pack_into(byteorder + "f", header, 108, 0.0)
    Path(header_path).write_bytes(bytes(header))
    Path(image_path).write_bytes(volume.data.astype(dtype).tobytes())


# --------------------------------------------------------------------------
# RVOL


def load_rvol(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < RVOL_HEADER_SIZE or raw[:4] != RVOL_MAGIC:
        raise MalformedHeaderError(f"{path}: missing RVOL magic")
    nx, ny, nz, dtype_code, kind_code = struct.unpack_from("<3I2B", raw, 4)
    if dtype_code not in RVOL_DTYPES:
        raise UnsupportedFormatError(f"{path}: RVOL dtype code {dtype_code} out of range")
    try:
        kind = VolumeKind(kind_code)
    except ValueError:
        raise UnsupportedFormatError(f"{path}: RVOL kind code {kind_code} out of range") from None
    dtype = np.dtype(RVOL_DTYPES[dtype_code]).newbyteorder("<")
    count = nx * ny * nz
    payload = len(raw) - RVOL_HEADER_SIZE
    if payload < count * dtype.itemsize:
        raise TruncatedDataError(
            f"{path}: payload {payload} bytes, dims {(nx, ny, nz)} need {count * dtype.itemsize}"
        )
    if payload > count * dtype.itemsize:
        raise DataError(f"{path}: {payload - count * dtype.itemsize} trailing payload bytes")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=RVOL_HEADER_SIZE)
    return Volume((nx, ny, nz), (1.0, 1.0, 1.0), data.astype(np.float64), kind)


def _rvol_dtype_for(volume: Volume) -> int:
    data = volume.data
    if np.all(data == np.round(data)):
        if data.min() >= 0 and data.max() <= 255:
            return 0
        if data.min() >= -32768 and data.max() <= 32767:
            return 1
    return 2


def write_rvol(volume: Volume, path, dtype_code: int | None = None) -> None:
    """Write ``volume`` as RVOL.

    Without ``dtype_code`` the narrowest exact integer type is picked, falling
    back to float32 (lossy for values float32 cannot represent).
    """
    if dtype_code is None:
        dtype_code = _rvol_dtype_for(volume)
    if dtype_code not in RVOL_DTYPES:
        raise UnsupportedFormatError(f"RVOL dtype code {dtype_code} out of range")
    dtype = np.dtype(RVOL_DTYPES[dtype_code]).newbyteorder("<")
    header = RVOL_MAGIC + struct.pack("<3I2B", *volume.dims, dtype_code, volume.kind.value)
    Path(path).write_bytes(header + volume.data.astype(dtype).tobytes())


def load_volume(path, kind: VolumeKind = VolumeKind.INTENSITY) -> Volume:
    """Load by extension: ``.rvol`` or an Analyze ``.hdr``/``.img`` (sibling inferred)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".rvol":
        volume = load_rvol(path)
        if volume.kind is not kind:
            raise DataError(f"{path}: stored as {volume.kind.name}, expected {kind.name}")
        return volume
    if suffix in (".hdr", ".img"):
        return load_analyze(path.with_suffix(".hdr"), path.with_suffix(".img"), kind)
    raise UnsupportedFormatError(f"{path}: unrecognized volume extension {suffix!r}")
