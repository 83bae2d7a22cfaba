"""Bit-exact container format for multi-channel 3D volumes.

A volume on disk is a pair of files sharing a basename: ``<name>.json``
(text header) and ``<name>.raw`` (payload).  The header declares::

    {
      "dims": [nx, ny, nz],
      "channels": ["mask", "CT", "UTE1", ...],
      "dtype": "f32le",
      "voxel_size_mm": [dx, dy, dz]
    }

The payload is little-endian float32, channel-major then z-major: the
channel axis varies slowest, and within one channel block the voxel at
(x, y, z) sits at flat offset ``(z*ny + y)*nx + x``.  That flat offset is
the *linear voxel id* used everywhere else in the package.

In memory a volume holds ``data`` with shape (n_channels, nx, ny, nz)
indexed ``data[c, x, y, z]``.  A channel named ``"mask"`` is special: it
must be exactly 0/1 valued and is exposed as a boolean array (1 = voxel
belongs to the subject, 0 = surrounding air).  All other channels must be
finite at masked voxels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pseudoct.errors import DataError

MASK_CHANNEL = "mask"
DTYPE_TAG = "f32le"


@dataclass(frozen=True)
class VolumeHeader:
    """Shape and channel metadata for one volume."""

    dims: tuple[int, int, int]
    channels: tuple[str, ...]
    voxel_size_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dtype: str = DTYPE_TAG

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise DataError(f"dims must be three positive integers, got {self.dims!r}")
        if not self.channels:
            raise DataError("channel list must be non-empty")
        if len(set(self.channels)) != len(self.channels):
            raise DataError(f"channel names must be unique, got {list(self.channels)!r}")
        if self.dtype != DTYPE_TAG:
            raise DataError(f"unsupported dtype {self.dtype!r}; only {DTYPE_TAG!r} is defined")
        if len(self.voxel_size_mm) != 3 or any(not (float(s) > 0) for s in self.voxel_size_mm):
            raise DataError(f"voxel_size_mm must be three positive reals, got {self.voxel_size_mm!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))
        object.__setattr__(self, "voxel_size_mm", tuple(float(s) for s in self.voxel_size_mm))

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def payload_bytes(self) -> int:
        return self.n_voxels * len(self.channels) * 4


@dataclass
class Volume:
    """An in-memory multi-channel volume; immutable by convention after load."""

    header: VolumeHeader
    data: np.ndarray = field(repr=False)  # (n_channels, nx, ny, nz) float32

    def __post_init__(self):
        expected = (len(self.header.channels),) + self.header.dims
        if self.data.shape != expected:
            raise DataError(
                f"data shape {self.data.shape} does not match header "
                f"(expected {expected})"
            )
        if self.data.dtype != np.float32:
            self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        _validate_contents(self.header, self.data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.header.dims

    @property
    def channels(self) -> tuple[str, ...]:
        return self.header.channels

    def channel(self, name: str) -> np.ndarray:
        """Return one channel as an (nx, ny, nz) float32 array."""
        try:
            idx = self.header.channels.index(name)
        except ValueError:
            raise DataError(
                f"volume has no channel {name!r}; available: {list(self.header.channels)}"
            ) from None
        return self.data[idx]

    @property
    def mask(self) -> np.ndarray:
        """Boolean inside-subject mask; all-True when no mask channel exists."""
        if MASK_CHANNEL in self.header.channels:
            return self.channel(MASK_CHANNEL) != 0.0
        return np.ones(self.header.dims, dtype=bool)

    @property
    def value_channels(self) -> tuple[str, ...]:
        """Channel names excluding the mask, in header order."""
        return tuple(c for c in self.header.channels if c != MASK_CHANNEL)


def _validate_contents(header: VolumeHeader, data: np.ndarray) -> None:
    if MASK_CHANNEL in header.channels:
        mi = header.channels.index(MASK_CHANNEL)
        mask_vals = data[mi]
        bad = (mask_vals != 0.0) & (mask_vals != 1.0)
        if bad.any():
            x, y, z = (int(v) for v in np.argwhere(bad)[0])
            raise DataError(
                f"mask channel must be exactly 0/1; value "
                f"{float(mask_vals[x, y, z])!r} at voxel ({x}, {y}, {z})"
            )
        mask = mask_vals != 0.0
    else:
        mask = np.ones(header.dims, dtype=bool)
    for ci, name in enumerate(header.channels):
        if name == MASK_CHANNEL:
            continue
        bad = ~np.isfinite(data[ci]) & mask
        if bad.any():
            x, y, z = (int(v) for v in np.argwhere(bad)[0])
            raise DataError(
                f"non-finite value in channel {name!r} at masked voxel ({x}, {y}, {z})"
            )


def _to_disk_order(data: np.ndarray) -> np.ndarray:
    """(c, x, y, z) memory order -> (c, z, y, x) disk order."""
    return np.ascontiguousarray(np.transpose(data, (0, 3, 2, 1)))


def _from_disk_order(raw: np.ndarray) -> np.ndarray:
    """(c, z, y, x) disk order -> (c, x, y, z) memory order."""
    return np.ascontiguousarray(np.transpose(raw, (0, 3, 2, 1)))


def _paths_for(path: str | Path) -> tuple[Path, Path]:
    """Resolve a user path (basename, .json, or .raw) to the file pair."""
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def load_volume(path: str | Path) -> Volume:
    """Load a header/payload pair, validating all format invariants.

    ``path`` may be the basename or either of the two file names.
    """
    header_path, raw_path = _paths_for(path)
    if not header_path.exists():
        raise DataError(f"header file not found: {header_path}")
    if not raw_path.exists():
        raise DataError(f"payload file not found: {raw_path}")
    try:
        doc = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed header {header_path}: {e}") from None
    if not isinstance(doc, dict):
        raise DataError(f"malformed header {header_path}: expected a JSON object")
    missing = {"dims", "channels", "dtype", "voxel_size_mm"} - set(doc)
    if missing:
        raise DataError(f"header {header_path} missing fields: {sorted(missing)}")
    header = VolumeHeader(
        dims=tuple(doc["dims"]),
        channels=tuple(doc["channels"]),
        voxel_size_mm=tuple(doc["voxel_size_mm"]),
        dtype=doc["dtype"],
    )
    payload = raw_path.read_bytes()
    if len(payload) != header.payload_bytes:
        raise DataError(
            f"payload size mismatch for {raw_path}: header declares "
            f"{header.payload_bytes} bytes, file has {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    nx, ny, nz = header.dims
    raw = flat.reshape(len(header.channels), nz, ny, nx)
    return Volume(header=header, data=_from_disk_order(raw))


def save_volume(volume: Volume, path: str | Path) -> None:
    """Write the header/payload pair; load_volume reproduces it bit-exactly."""
    header_path, raw_path = _paths_for(path)
    doc = {
        "dims": list(volume.header.dims),
        "channels": list(volume.header.channels),
        "dtype": volume.header.dtype,
        "voxel_size_mm": list(volume.header.voxel_size_mm),
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(doc, indent=2) + "\n")
    disk = _to_disk_order(volume.data)
    raw_path.write_bytes(disk.astype("<f4", copy=False).tobytes())


def masked_voxel_ids(volume: Volume) -> np.ndarray:
    """Linear ids (z-major, x fastest) of masked voxels, ascending."""
    mask_disk = np.transpose(volume.mask, (2, 1, 0))
    return np.flatnonzero(mask_disk.ravel()).astype(np.int64)


def coords_of_ids(ids: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """(n, 3) integer (x, y, z) coordinates for linear voxel ids."""
    nx, ny, _ = dims
    ids = np.asarray(ids, dtype=np.int64)
    x = ids % nx
    y = (ids // nx) % ny
    z = ids // (nx * ny)
    return np.stack([x, y, z], axis=1)


def ids_of_coords(coords: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    """Linear voxel ids for (n, 3) integer (x, y, z) coordinates."""
    nx, ny, _ = dims
    coords = np.asarray(coords, dtype=np.int64)
    return (coords[:, 2] * ny + coords[:, 1]) * nx + coords[:, 0]


def observations_at(volume: Volume, ids: np.ndarray, channels: tuple[str, ...] | None = None) -> np.ndarray:
    """(n, d) float64 observation matrix at the given voxel ids.

    Channels default to all non-mask channels in header order, which is the
    (Y, X...) ordering the models expect when the target comes first.
    """
    if channels is None:
        channels = volume.value_channels
    ids = np.asarray(ids, dtype=np.int64)
    if not channels:
        return np.empty((len(ids), 0), dtype=np.float64)
    coords = coords_of_ids(ids, volume.dims)
    cols = [volume.channel(name)[coords[:, 0], coords[:, 1], coords[:, 2]] for name in channels]
    return np.stack(cols, axis=1).astype(np.float64)
