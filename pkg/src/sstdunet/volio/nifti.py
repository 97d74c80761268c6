"""Minimal NIfTI-1 reader/writer (single-file ``n+1`` and header/image-pair ``ni1``).

Only uncompressed files are handled; decompress ``.nii.gz`` with ``gunzip``
first. Voxel data is stored x-fastest on disk, which maps to Fortran order
for an array indexed ``[x, y, z, t]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sstdunet.errors import NiftiError, UnsupportedDatatypeError

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352  # header + 4-byte extension flag

_FIELDS = [
    ("sizeof_hdr", "i"), ("data_type", "10s"), ("db_name", "18s"), ("extents", "i"),
    ("session_error", "h"), ("regular", "c"), ("dim_info", "c"), ("dim", "8h"),
    ("intent_p1", "f"), ("intent_p2", "f"), ("intent_p3", "f"), ("intent_code", "h"),
    ("datatype", "h"), ("bitpix", "h"), ("slice_start", "h"), ("pixdim", "8f"),
    ("vox_offset", "f"), ("scl_slope", "f"), ("scl_inter", "f"), ("slice_end", "h"),
    ("slice_code", "c"), ("xyzt_units", "c"), ("cal_max", "f"), ("cal_min", "f"),
    ("slice_duration", "f"), ("toffset", "f"), ("glmax", "i"), ("glmin", "i"),
    ("descrip", "80s"), ("aux_file", "24s"), ("qform_code", "h"), ("sform_code", "h"),
    ("quatern_b", "f"), ("quatern_c", "f"), ("quatern_d", "f"),
    ("qoffset_x", "f"), ("qoffset_y", "f"), ("qoffset_z", "f"),
    ("srow_x", "4f"), ("srow_y", "4f"), ("srow_z", "4f"),
    ("intent_name", "16s"), ("magic", "4s"),
]
_FORMAT = "".join(code for _, code in _FIELDS)
assert struct.calcsize("<" + _FORMAT) == HEADER_SIZE

# byte offset of every field, used in parse error messages
OFFSETS: dict[str, int] = {}
_pos = 0
for _name, _code in _FIELDS:
    OFFSETS[_name] = _pos
    _pos += struct.calcsize("<" + _code)

# NIfTI datatype code -> (numpy kind, bits)
DATATYPES = {2: ("u1", 8), 4: ("i2", 16), 16: ("f4", 32), 64: ("f8", 64)}
_CODE_FOR = {np.dtype(kind): code for code, (kind, _) in DATATYPES.items()}

_SWAPPED_348 = int.from_bytes(HEADER_SIZE.to_bytes(4, "little"), "big")  # 1543569408


@dataclass
class Volume:
    """A scalar grid with per-axis spacing (mm) and the header it came from."""

    data: np.ndarray
    spacing: tuple[float, ...] = (1.0, 1.0, 1.0)
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, dict(self.header))


def _unpack(raw: bytes, endian: str) -> dict:
    values = struct.unpack(endian + _FORMAT, raw[:HEADER_SIZE])
    out, i = {}, 0
    for name, code in _FIELDS:
        count = struct.calcsize("<" + code) // struct.calcsize("<" + code[-1]) if code[-1] != "s" else 1
        if count > 1:
            out[name] = list(values[i:i + count])
            i += count
        else:
            out[name] = values[i]
            i += 1
    return out


def parse_header(raw: bytes) -> tuple[dict, str]:
    """Decode a 348-byte header; returns ``(fields, endian)`` with endian ``'<'`` or ``'>'``."""
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)", len(raw))
    if raw[:2] == b"\x1f\x8b":
        raise NiftiError("gzip-compressed input; decompress before reading", 0)
    little = struct.unpack("<i", raw[:4])[0]
    if little == HEADER_SIZE:
        endian = "<"
    elif little == _SWAPPED_348:
        endian = ">"
    else:
        raise NiftiError(f"sizeof_hdr is {little}, expected {HEADER_SIZE}", OFFSETS["sizeof_hdr"])
    hdr = _unpack(raw, endian)
    if hdr["magic"] not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"bad magic {hdr['magic']!r}", OFFSETS["magic"])
    ndim = hdr["dim"][0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"dim[0] = {ndim} outside 1..7", OFFSETS["dim"])
    dims = hdr["dim"][1:ndim + 1]
    if any(d < 1 for d in dims):
        raise NiftiError(f"non-positive extent in dims {dims}", OFFSETS["dim"] + 2)
    if hdr["datatype"] not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype code {hdr['datatype']} is not supported "
                                       f"(supported: {sorted(DATATYPES)})", OFFSETS["datatype"])
    return hdr, endian


def read_nifti(path: str | Path) -> Volume:
    """Read a 1-4D NIfTI-1 volume, applying ``scl_slope``/``scl_inter`` when set."""
    path = Path(path)
    raw = path.read_bytes()
    hdr, endian = parse_header(raw)
    ndim = hdr["dim"][0]
    if ndim > 4:
        raise NiftiError(f"{ndim}-D images are not supported", OFFSETS["dim"])
    shape = tuple(hdr["dim"][1:ndim + 1])
    kind, bits = DATATYPES[hdr["datatype"]]
    dtype = np.dtype(endian + kind)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if hdr["magic"] == b"n+1\x00":
        offset = int(hdr["vox_offset"])
        if offset < HEADER_SIZE:
            raise NiftiError(f"vox_offset {hdr['vox_offset']} points inside the header", OFFSETS["vox_offset"])
        payload = raw[offset:offset + nbytes]
    else:
        img = path.with_suffix(".img")
        if not img.exists():
            raise NiftiError(f"pair header without image file {img.name}", OFFSETS["magic"])
        offset = int(hdr["vox_offset"])
        payload = img.read_bytes()[offset:offset + nbytes]
    if len(payload) != nbytes:
        raise NiftiError(f"voxel data truncated: need {nbytes} bytes, found {len(payload)}",
                         offset + len(payload))
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    data = data.astype(dtype.newbyteorder("="), copy=True)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if np.isfinite(slope) and slope != 0 and (slope != 1 or inter != 0):
        data = data.astype(np.float64) * slope + inter
    spacing = tuple(abs(float(s)) or 1.0 for s in hdr["pixdim"][1:min(ndim, 3) + 1])
    meta = {k: v for k, v in hdr.items() if k not in ("data_type", "db_name", "aux_file", "regular")}
    meta["endian"] = "big" if endian == ">" else "little"
    return Volume(data, spacing, meta)


def write_nifti(vol: Volume | np.ndarray, path: str | Path, endian: str = "<",
                scl_slope: float = 1.0, scl_inter: float = 0.0) -> None:
    """Write a single-file ``n+1`` NIfTI. Data is stored as-is (no rescaling applied on write)."""
    if not isinstance(vol, Volume):
        vol = Volume(np.asarray(vol))
    data = np.asarray(vol.data)
    if data.dtype == bool:
        data = data.astype(np.uint8)
    code = _CODE_FOR.get(data.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDatatypeError(f"cannot write dtype {data.dtype}; supported: uint8, int16, float32, float64")
    if not 1 <= data.ndim <= 4:
        raise NiftiError(f"cannot write a {data.ndim}-D array")
    if endian not in ("<", ">"):
        raise ValueError("endian must be '<' or '>'")
    dims = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    spacing = list(vol.spacing)[:3] + [1.0] * (3 - min(len(vol.spacing), 3))
    pixdim = [1.0] + spacing + [1.0] * 4
    hdr = {name: 0 for name, _ in _FIELDS}
    hdr.update(
        sizeof_hdr=HEADER_SIZE, data_type=b"", db_name=b"", regular=b"r", dim_info=b"\x00",
        dim=dims, datatype=code, bitpix=DATATYPES[code][1], pixdim=pixdim,
        vox_offset=float(SINGLE_FILE_OFFSET), scl_slope=float(scl_slope), scl_inter=float(scl_inter),
        slice_code=b"\x00", xyzt_units=b"\x0a", descrip=b"sstdunet", aux_file=b"", intent_name=b"",
        qform_code=0, sform_code=1,
        srow_x=[spacing[0], 0.0, 0.0, 0.0], srow_y=[0.0, spacing[1], 0.0, 0.0],
        srow_z=[0.0, 0.0, spacing[2], 0.0], magic=b"n+1\x00",
    )
    values = []
    for name, fmt in _FIELDS:
        v = hdr[name]
        values.extend(v if isinstance(v, list) else [v])
    header = struct.pack(endian + _FORMAT, *values)
    body = np.asarray(data, dtype=data.dtype.newbyteorder(endian)).tobytes(order="F")
    Path(path).write_bytes(header + b"\x00" * 4 + body)
