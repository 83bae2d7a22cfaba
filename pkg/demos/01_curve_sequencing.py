"""
Linearizing a masked volume along the space-filling curve
=========================================================

A 3D scan becomes a 1D sequence by visiting voxels in Hilbert curve
order.  Consecutive curve positions are always face neighbours, so runs
of in-mask voxels form segments on which a chain model makes sense.
"""

import numpy as np

from pseudoct.hilbert import (
    HilbertOrder,
    coords_to_index,
    index_to_coords,
    min_covering_order,
    sequence_volume,
    summarize_segments,
)
from pseudoct.volume_io import MASK_CHANNEL, Volume, VolumeHeader

# The curve itself: order p covers a cube of side 2^p.  Index -> coords
# and coords -> index are exact inverses, and each step moves exactly
# one voxel along one axis.
order = HilbertOrder(2)
d = np.arange(order.n_indices)
x, y, z = index_to_coords(order, d)
assert np.array_equal(coords_to_index(order, x, y, z), d)
steps = np.abs(np.diff(np.stack([x, y, z], axis=1), axis=0)).sum(axis=1)
print(f"order {order.p}: {order.n_indices} cells, all steps unit: {(steps == 1).all()}")
print("first eight cells:", list(zip(x[:8].tolist(), y[:8].tolist(), z[:8].tolist())))

# Now a volume with an irregular mask: a ball of radius 5 inside a
# 14 x 12 x 16 grid.  The smallest covering curve order is chosen
# automatically and the volume is centred inside the curve's cube.
dims = (14, 12, 16)
gx, gy, gz = np.meshgrid(*(np.arange(n) for n in dims), indexing="ij")
centre = [(n - 1) / 2 for n in dims]
mask = ((gx - centre[0]) ** 2 + (gy - centre[1]) ** 2 + (gz - centre[2]) ** 2) <= 25.0

rng = np.random.default_rng(0)
data = np.stack([
    mask.astype(np.float32),
    np.where(mask, rng.normal(size=dims) * 100, 0).astype(np.float32),
])
volume = Volume(header=VolumeHeader(dims=dims, channels=(MASK_CHANNEL, "CT")), data=data)

order = min_covering_order(dims)
seq = sequence_volume(volume, order)
print(f"\nmask holds {int(mask.sum())} voxels; curve order {order.p} "
      f"(side {order.side}) covers dims {dims}")

# The sequencing partitions the masked voxels into contiguous runs.
summary = summarize_segments(seq.segments)
print(f"{summary.n_voxels} voxels in {summary.n_segments} segments")
print(f"segment lengths: mean {summary.mean_length:.1f}, max {summary.max_length}; "
      f"singletons {summary.n_singletons}")
print(f"voxels with both curve neighbours in the same segment: "
      f"{summary.two_neighbour_fraction:.1%}")

# Within a segment, consecutive voxels are 6-adjacent in the original
# grid.  Check the longest segment explicitly.
longest = max(seq.segments, key=len)
nx, ny, _ = dims
ids = longest.voxel_ids
coords = np.stack([ids % nx, (ids // nx) % ny, ids // (nx * ny)], axis=1)
step = np.abs(np.diff(coords, axis=0))
print(f"\nlongest segment has {len(longest)} voxels; "
      f"all consecutive pairs face-adjacent: {(step.sum(axis=1) == 1).all()}")
