"""Synthetic datasets with known ground truth.

A phantom substitutes for patient data: a latent label field is sampled
from a known model, every voxel then draws its (Y, X) observation vector
from the label's Gaussian, and a geometric mask carves out a "head".
The true label field ships with each phantom, so posterior-weight quality
can be scored exactly rather than only through prediction error.

Two label-field generators are available:

* ``field="mrf"``: Gibbs sweeps over the masked lattice sample the Potts
  prior p(z) ∝ exp{-H(z)}.  Remember the sign convention: clustering
  requires beta < 0.
* ``field="hmm"``: labels follow the Markov chain along the Hilbert
  ordering of the masked voxels, per segment.

Everything is deterministic given (spec, seed); a fixed seed reproduces a
phantom byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pseudoct.errors import DataError
from pseudoct.hilbert import HilbertOrder, min_covering_order, sequence_volume
from pseudoct.hmm import HmmParams
from pseudoct.hmrf import Lattice, MrfParams, run_gibbs
from pseudoct.volume_io import MASK_CHANNEL, Volume, VolumeHeader, coords_of_ids

DEFAULT_SWEEPS = 200


@dataclass
class PhantomSpec:
    """Recipe for one phantom (or an ensemble sharing true parameters)."""

    dims: tuple[int, int, int] = (32, 32, 32)
    params: MrfParams | HmmParams = None
    mask_shape: str = "ellipsoid"  # "full" or "ellipsoid"
    semi_axes: tuple[float, float, float] | None = None  # ellipsoid only; default dims/2
    sweeps: int = DEFAULT_SWEEPS  # Gibbs sweeps for the mrf field
    hilbert_order: int | None = None  # hmm field; default: smallest covering order
    channel_names: tuple[str, ...] | None = None  # (Y, X...) names; default CT, MRI1..
    n_heads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.params is None:
            raise DataError("phantom spec needs true model parameters")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d < 2 for d in self.dims):
            raise DataError(f"dims must be three integers >= 2, got {self.dims!r}")
        if self.mask_shape not in ("full", "ellipsoid"):
            raise DataError(f"mask_shape must be 'full' or 'ellipsoid', got {self.mask_shape!r}")
        if self.n_heads < 1:
            raise DataError("n_heads must be >= 1")
        if self.sweeps < 0:
            raise DataError("sweeps must be >= 0")
        d = self.params.obs_dim
        if self.channel_names is None:
            self.channel_names = ("CT",) + tuple(f"MRI{i}" for i in range(1, d))
        self.channel_names = tuple(self.channel_names)
        if len(self.channel_names) != d:
            raise DataError(
                f"{len(self.channel_names)} channel names for {d}-dimensional components"
            )

    @property
    def family(self) -> str:
        return "mrf" if isinstance(self.params, MrfParams) else "hmm"

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "params": self.params.to_dict(),
            "mask_shape": self.mask_shape,
            "semi_axes": list(self.semi_axes) if self.semi_axes is not None else None,
            "sweeps": self.sweeps,
            "hilbert_order": self.hilbert_order,
            "channel_names": list(self.channel_names),
            "n_heads": self.n_heads,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PhantomSpec":
        pdoc = doc.get("params")
        if not isinstance(pdoc, dict) or "family" not in pdoc:
            raise DataError("phantom spec 'params' must be a model object with a 'family' key")
        if pdoc["family"] == "hmrf":
            params = MrfParams.from_dict(pdoc)
        elif pdoc["family"] == "hmm":
            params = HmmParams.from_dict(pdoc)
        else:
            raise DataError(
                f"phantom spec params family must be 'hmrf' or 'hmm', got {pdoc['family']!r}"
            )
        known = {
            "dims", "params", "mask_shape", "semi_axes", "sweeps",
            "hilbert_order", "channel_names", "n_heads", "seed",
        }
        unknown = set(doc) - known
        if unknown:
            raise DataError(f"unknown phantom spec fields: {sorted(unknown)}")
        kwargs = {k: doc[k] for k in known & set(doc) if k != "params"}
        if kwargs.get("semi_axes") is not None:
            kwargs["semi_axes"] = tuple(kwargs["semi_axes"])
        if kwargs.get("channel_names") is not None:
            kwargs["channel_names"] = tuple(kwargs["channel_names"])
        if "dims" in kwargs:
            kwargs["dims"] = tuple(kwargs["dims"])
        return cls(params=params, **kwargs)


def build_mask(spec: PhantomSpec) -> np.ndarray:
    """Boolean (nx, ny, nz) mask for the requested geometry."""
    if spec.mask_shape == "full":
        return np.ones(spec.dims, dtype=bool)
    semi = spec.semi_axes
    if semi is None:
        semi = tuple(d / 2.0 for d in spec.dims)
    if any(not (s > 0) for s in semi):
        raise DataError(f"semi_axes must be positive, got {semi!r}")
    center = [(d - 1) / 2.0 for d in spec.dims]
    grids = np.ogrid[0 : spec.dims[0], 0 : spec.dims[1], 0 : spec.dims[2]]
    r2 = sum(((g - c) / s) ** 2 for g, c, s in zip(grids, center, semi))
    mask = r2 <= 1.0
    if not mask.any():
        raise DataError("ellipsoid mask selects no voxels")
    return mask


def _mask_only_volume(spec: PhantomSpec, mask: np.ndarray) -> Volume:
    header = VolumeHeader(dims=spec.dims, channels=(MASK_CHANNEL,))
    return Volume(header=header, data=mask[None].astype(np.float32))


def _sample_labels_mrf(spec: PhantomSpec, lattice: Lattice, rng: np.random.Generator) -> np.ndarray:
    params: MrfParams = spec.params
    run = run_gibbs(params.alpha, params.beta, lattice, None,
                    burn_in=spec.sweeps, n_samples=0, rng=rng)
    return run.final_labels


def _sample_labels_hmm(spec: PhantomSpec, mask_vol: Volume, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the chain along the curve; returns (voxel ids, labels) aligned."""
    params: HmmParams = spec.params
    order = HilbertOrder(spec.hilbert_order) if spec.hilbert_order else min_covering_order(spec.dims)
    seq = sequence_volume(mask_vol, order, channels=())
    ids_parts = []
    label_parts = []
    K = params.n_states
    for seg in seq.segments:
        n = len(seg)
        z = np.empty(n, dtype=np.int64)
        draws = rng.random(n)
        z[0] = np.searchsorted(np.cumsum(params.pi), draws[0], side="right")
        cum_rows = np.cumsum(params.trans, axis=1)
        for t in range(1, n):
            z[t] = np.searchsorted(cum_rows[z[t - 1]], draws[t], side="right")
        np.clip(z, 0, K - 1, out=z)
        ids_parts.append(seg.voxel_ids)
        label_parts.append(z)
    return np.concatenate(ids_parts), np.concatenate(label_parts)


def generate_phantom(spec: PhantomSpec, seed: int | None = None) -> tuple[Volume, Volume]:
    """One phantom: (observation volume, label volume), deterministic given seed.

    The observation volume carries (mask, Y, X...) channels; the label
    volume carries (mask, label) with the true class index per voxel.
    Voxels outside the mask hold zeros everywhere.
    """
    if seed is None:
        seed = spec.seed
    rng = np.random.default_rng(seed)
    mask = build_mask(spec)
    mask_vol = _mask_only_volume(spec, mask)

    if spec.family == "mrf":
        lattice = Lattice.from_mask(mask)
        ids = lattice.ids
        labels = _sample_labels_mrf(spec, lattice, rng)
    else:
        ids, labels = _sample_labels_hmm(spec, mask_vol, rng)

    components = spec.params.components
    d = components[0].dim
    normals = rng.standard_normal((len(ids), d))
    obs = np.empty((len(ids), d))
    for k, comp in enumerate(components):
        sel = labels == k
        if sel.any():
            L = np.linalg.cholesky(comp.sigma)
            obs[sel] = comp.mu + normals[sel] @ L.T

    nx, ny, nz = spec.dims
    coords = coords_of_ids(ids, spec.dims)
    data = np.zeros((1 + d, nx, ny, nz), dtype=np.float32)
    data[0] = mask
    for j in range(d):
        data[1 + j, coords[:, 0], coords[:, 1], coords[:, 2]] = obs[:, j]
    header = VolumeHeader(dims=spec.dims, channels=(MASK_CHANNEL,) + spec.channel_names)
    volume = Volume(header=header, data=data)

    label_data = np.zeros((2, nx, ny, nz), dtype=np.float32)
    label_data[0] = mask
    label_data[1, coords[:, 0], coords[:, 1], coords[:, 2]] = labels
    label_header = VolumeHeader(dims=spec.dims, channels=(MASK_CHANNEL, "label"))
    label_volume = Volume(header=label_header, data=label_data)
    return volume, label_volume


def generate_ensemble(spec: PhantomSpec) -> list[tuple[Volume, Volume]]:
    """n_heads independent phantoms sharing the true parameters.

    Head h uses an independent child seed spawned from spec.seed, so the
    ensemble is reproducible as a whole and heads are statistically
    independent.
    """
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_heads)
    out = []
    for child in seeds:
        head_seed = int(child.generate_state(1)[0])
        out.append(generate_phantom(spec, seed=head_seed))
    return out


def true_labels_at(label_volume: Volume, ids: np.ndarray) -> np.ndarray:
    """Integer labels at the given voxel ids from a phantom label volume."""
    coords = coords_of_ids(ids, label_volume.dims)
    lab = label_volume.channel("label")[coords[:, 0], coords[:, 1], coords[:, 2]]
    return lab.astype(np.int64)


def same_label_fraction(labels: np.ndarray, lattice: Lattice) -> float:
    """Fraction of masked 6-neighbour pairs whose endpoints share a label."""
    if len(lattice.pairs) == 0:
        raise DataError("lattice has no neighbour pairs")
    a = labels[lattice.pairs[:, 0]]
    b = labels[lattice.pairs[:, 1]]
    return float((a == b).mean())
