"""Hilbert-curve ordering of the voxel lattice and segment extraction.

The curve maps the 1D index range [0, 2^(3p)) onto a 2^p cube so that
consecutive indices are always 6-neighbourhood lattice neighbours.  Walking
a masked volume in curve order therefore yields runs of adjacent voxels;
whenever the curve leaves the mask and re-enters somewhere non-adjacent,
the run is broken and a new segment starts.  The resulting segments are
treated as independent observation sequences by the chain model.

The index transform is the Gray-code / bit-interleaving construction
(compute any single index or coordinate in O(p) bit operations, no
recursion or tables), vectorized over numpy arrays.  One fixed curve
orientation is used throughout; it starts at (0,0,0) and ends at
(2^p - 1, 0, 0), and is pinned by golden-value tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pseudoct.errors import DataError
from pseudoct.volume_io import Volume, coords_of_ids, masked_voxel_ids, observations_at

MAX_ORDER = 10  # 2^30 indices; covers a 1024-cube


@dataclass(frozen=True)
class HilbertOrder:
    """Curve refinement level p; the curve fills a 2^p cube."""

    p: int

    def __post_init__(self):
        if not (1 <= int(self.p) <= MAX_ORDER):
            raise DataError(f"Hilbert order must satisfy 1 <= p <= {MAX_ORDER}, got {self.p!r}")
        object.__setattr__(self, "p", int(self.p))

    @property
    def side(self) -> int:
        return 1 << self.p

    @property
    def n_indices(self) -> int:
        return 1 << (3 * self.p)


def _as_order(order: HilbertOrder | int) -> HilbertOrder:
    return order if isinstance(order, HilbertOrder) else HilbertOrder(order)


def _transpose_to_axes(tx: np.ndarray, ty: np.ndarray, tz: np.ndarray, p: int) -> list[np.ndarray]:
    """Decode the transposed (bit-distributed) form into lattice axes."""
    X = [tx, ty, tz]
    n = 3
    N = np.int64(2) << (p - 1)
    t = X[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        X[i] = X[i] ^ X[i - 1]
    X[0] = X[0] ^ t
    Q = np.int64(2)
    while Q != N:
        P = Q - 1
        for i in range(n - 1, -1, -1):
            swap = (X[i] & Q) != 0
            t = np.where(swap, 0, (X[0] ^ X[i]) & P)
            X[0] = np.where(swap, X[0] ^ P, X[0] ^ t)
            X[i] = X[i] ^ t
        Q <<= 1
    return X


def _axes_to_transpose(x: np.ndarray, y: np.ndarray, z: np.ndarray, p: int) -> list[np.ndarray]:
    """Encode lattice axes into the transposed (bit-distributed) form."""
    X = [x.copy(), y.copy(), z.copy()]
    n = 3
    M = np.int64(1) << (p - 1)
    Q = M
    while Q > 1:
        P = Q - 1
        for i in range(n):
            swap = (X[i] & Q) != 0
            t = np.where(swap, 0, (X[0] ^ X[i]) & P)
            X[0] = np.where(swap, X[0] ^ P, X[0] ^ t)
            X[i] = X[i] ^ t
        Q >>= 1
    for i in range(1, n):
        X[i] = X[i] ^ X[i - 1]
    t = np.zeros_like(X[0])
    Q = M
    while Q > 1:
        t = np.where((X[n - 1] & Q) != 0, t ^ (Q - 1), t)
        Q >>= 1
    for i in range(n):
        X[i] = X[i] ^ t
    return X


def index_to_coords(order: HilbertOrder | int, d: np.ndarray | int):
    """Curve index -> (x, y, z) lattice coordinates.

    Vectorized: ``d`` may be a scalar or an integer array; the return is a
    triple of arrays (or Python ints for scalar input).
    """
    order = _as_order(order)
    scalar = np.isscalar(d)
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    if (d < 0).any() or (d >= order.n_indices).any():
        raise DataError(f"curve index out of range [0, {order.n_indices}) for order {order.p}")
    p = order.p
    tx = np.zeros_like(d)
    ty = np.zeros_like(d)
    tz = np.zeros_like(d)
    # Distribute index bits MSB-first: bit (3k + 2 - axis) of d -> bit k of axis.
    for k in range(p - 1, -1, -1):
        tx |= ((d >> (3 * k + 2)) & 1) << k
        ty |= ((d >> (3 * k + 1)) & 1) << k
        tz |= ((d >> (3 * k + 0)) & 1) << k
    x, y, z = _transpose_to_axes(tx, ty, tz, p)
    if scalar:
        return int(x[0]), int(y[0]), int(z[0])
    return x, y, z


def coords_to_index(order: HilbertOrder | int, x, y, z):
    """(x, y, z) lattice coordinates -> curve index; inverse of index_to_coords."""
    order = _as_order(order)
    scalar = np.isscalar(x) and np.isscalar(y) and np.isscalar(z)
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    z = np.atleast_1d(np.asarray(z, dtype=np.int64))
    side = order.side
    for name, arr in (("x", x), ("y", y), ("z", z)):
        if (arr < 0).any() or (arr >= side).any():
            raise DataError(f"{name} coordinate out of range [0, {side}) for order {order.p}")
    p = order.p
    tx, ty, tz = _axes_to_transpose(x, y, z, p)
    d = np.zeros_like(tx)
    for k in range(p - 1, -1, -1):
        d = (d << 3) | (((tx >> k) & 1) << 2) | (((ty >> k) & 1) << 1) | ((tz >> k) & 1)
    if scalar:
        return int(d[0])
    return d


@dataclass
class Segment:
    """One maximal run of curve-consecutive masked voxels."""

    voxel_ids: np.ndarray  # (n,) int64 linear ids in curve order
    observations: np.ndarray  # (n, d) float64, channels in header order sans mask

    def __len__(self) -> int:
        return len(self.voxel_ids)


@dataclass
class SequenceSummary:
    """Audit statistics for one sequencing pass."""

    n_voxels: int
    n_segments: int
    n_singletons: int
    max_length: int
    mean_length: float
    two_neighbour_fraction: float
    length_histogram: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_voxels": self.n_voxels,
            "n_segments": self.n_segments,
            "n_singletons": self.n_singletons,
            "max_length": self.max_length,
            "mean_length": self.mean_length,
            "two_neighbour_fraction": self.two_neighbour_fraction,
            "length_histogram": self.length_histogram,
        }


@dataclass
class SequencedData:
    """Masked voxels of one volume, ordered by the curve and cut into segments."""

    segments: list[Segment]
    order: HilbertOrder
    offset: tuple[int, int, int]
    channels: tuple[str, ...]
    summary: SequenceSummary = field(repr=False)


def _length_histogram(lengths: np.ndarray) -> dict[str, int]:
    """Counts of segment lengths in power-of-two bins: 1, 2, 3-4, 5-8, ..."""
    hist: dict[str, int] = {}
    if len(lengths) == 0:
        return hist
    longest = int(lengths.max())
    lo, hi = 1, 1
    while lo <= longest:
        label = str(lo) if hi == lo else f"{lo}-{hi}"
        count = int(((lengths >= lo) & (lengths <= hi)).sum())
        if count:
            hist[label] = count
        lo, hi = hi + 1, hi * 2
    return hist


def summarize_segments(segments: list[Segment]) -> SequenceSummary:
    """Audit statistics for any collection of segments (possibly pooled)."""
    if not segments:
        return SequenceSummary(0, 0, 0, 0, 0.0, 0.0, {})
    lengths = np.array([len(s) for s in segments], dtype=np.int64)
    n_voxels = int(lengths.sum())
    two_nb = int(np.maximum(lengths - 2, 0).sum())
    return SequenceSummary(
        n_voxels=n_voxels,
        n_segments=len(segments),
        n_singletons=int((lengths == 1).sum()),
        max_length=int(lengths.max()),
        mean_length=float(lengths.mean()),
        two_neighbour_fraction=two_nb / n_voxels,
        length_histogram=_length_histogram(lengths),
    )


def default_offset(dims: tuple[int, int, int], order: HilbertOrder | int) -> tuple[int, int, int]:
    """Offset that centers the volume inside the curve cube."""
    side = _as_order(order).side
    return tuple((side - d) // 2 for d in dims)


def sequence_volume(
    volume: Volume,
    order: HilbertOrder | int,
    offset: tuple[int, int, int] | None = None,
    channels: tuple[str, ...] | None = None,
) -> SequencedData:
    """Order masked voxels along the curve and cut into adjacent runs.

    The volume is placed at ``offset`` (default: centered) inside the 2^p
    cube.  Voxels are visited in curve-index order; a segment breaks
    wherever the next masked voxel is not a 6-neighbour of the previous
    one, which happens exactly when the curve left the mask and re-entered
    somewhere non-adjacent.
    """
    order = _as_order(order)
    if offset is None:
        offset = default_offset(volume.dims, order)
    offset = tuple(int(o) for o in offset)
    side = order.side
    for axis, (o, d) in enumerate(zip(offset, volume.dims)):
        if o < 0 or o + d > side:
            raise DataError(
                f"volume does not fit the order-{order.p} cube along axis {axis}: "
                f"offset {o} + extent {d} exceeds side {side}"
            )
    if channels is None:
        channels = volume.value_channels

    ids = masked_voxel_ids(volume)
    if len(ids) == 0:
        return SequencedData([], order, offset, tuple(channels), summarize_segments([]))

    coords = coords_of_ids(ids, volume.dims)
    shifted = coords + np.asarray(offset, dtype=np.int64)
    curve_idx = coords_to_index(order, shifted[:, 0], shifted[:, 1], shifted[:, 2])
    rank = np.argsort(curve_idx, kind="stable")
    ids_sorted = ids[rank]
    coords_sorted = coords[rank]

    step = np.abs(np.diff(coords_sorted, axis=0)).sum(axis=1)
    breaks = np.flatnonzero(step != 1) + 1
    id_runs = np.split(ids_sorted, breaks)

    obs_sorted = observations_at(volume, ids_sorted, channels)
    obs_runs = np.split(obs_sorted, breaks)
    segments = [Segment(voxel_ids=r, observations=o) for r, o in zip(id_runs, obs_runs)]

    return SequencedData(segments, order, offset, tuple(channels), summarize_segments(segments))


def min_covering_order(dims: tuple[int, int, int]) -> HilbertOrder:
    """Smallest order whose cube contains the given dims."""
    need = max(dims)
    for p in range(1, MAX_ORDER + 1):
        if (1 << p) >= need:
            return HilbertOrder(p)
    raise DataError(f"dims {dims} exceed the maximum order-{MAX_ORDER} cube")
