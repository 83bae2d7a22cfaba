"""Model assessment: MAE, windowed residual curves, and LOOCV orchestration.

Residuals follow the convention r = truth - prediction and are binned by
the TRUE target value into contiguous non-overlapping windows (default
width 20 target units), giving per-window mean, mean absolute value, and
standard deviation for residual curves with spread bands.

Leave-one-out cross-validation treats each head (volume) of an ensemble
as the held-out subject once: the model is fitted on the pooled data of
the other heads and evaluated on every head, filling one column of the
(head x excluded-head) MAE matrix.  Diagonal entries are the honest
held-out scores.  A failed fold leaves its column missing (NaN) rather
than aborting the run.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pseudoct.errors import DataError, PseudoCtError
from pseudoct.hilbert import (
    HilbertOrder,
    SequencedData,
    min_covering_order,
    sequence_volume,
    summarize_segments,
)
from pseudoct.volume_io import Volume, observations_at

DEFAULT_WINDOW_WIDTH = 20.0


def mae(ct: np.ndarray, sct: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean absolute error over (optionally masked) voxels."""
    ct = np.asarray(ct, dtype=np.float64).reshape(-1)
    sct = np.asarray(sct, dtype=np.float64).reshape(-1)
    if ct.shape != sct.shape:
        raise DataError(f"length mismatch: {ct.shape[0]} truth vs {sct.shape[0]} prediction")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape != ct.shape:
            raise DataError(f"mask length {mask.shape[0]} does not match {ct.shape[0]} voxels")
        ct = ct[mask]
        sct = sct[mask]
    if ct.shape[0] == 0:
        raise DataError("no voxels to evaluate")
    return float(np.abs(ct - sct).mean())


@dataclass
class ResidualBins:
    """Windowed residual statistics over the true target range."""

    window_width: float
    lo: np.ndarray  # (W,) window lower edges
    hi: np.ndarray  # (W,) window upper edges (last one closed)
    count: np.ndarray  # (W,) voxels per window
    mean_residual: np.ndarray
    mean_abs_residual: np.ndarray
    sd_residual: np.ndarray

    @property
    def n_windows(self) -> int:
        return len(self.lo)

    def to_rows(self) -> list[dict]:
        rows = []
        for i in range(self.n_windows):
            rows.append(
                {
                    "lo": self.lo[i],
                    "hi": self.hi[i],
                    "count": int(self.count[i]),
                    "mean_residual": self.mean_residual[i],
                    "mean_abs_residual": self.mean_abs_residual[i],
                    "sd_residual": self.sd_residual[i],
                }
            )
        return rows


def smoothed_residuals(ct: np.ndarray, sct: np.ndarray,
                       window_width: float = DEFAULT_WINDOW_WIDTH) -> ResidualBins:
    """Bin residuals (truth - prediction) by the true value into fixed windows.

    Windows start at min(ct) and are [lo, lo + width) except the last,
    which closes at max(ct) so every voxel lands in exactly one window.
    Empty windows keep count 0 and NaN statistics.
    """
    ct = np.asarray(ct, dtype=np.float64).reshape(-1)
    sct = np.asarray(sct, dtype=np.float64).reshape(-1)
    if ct.shape != sct.shape:
        raise DataError(f"length mismatch: {ct.shape[0]} truth vs {sct.shape[0]} prediction")
    if ct.shape[0] == 0:
        raise DataError("no voxels to bin")
    if not (window_width > 0):
        raise DataError(f"window width must be positive, got {window_width!r}")
    r = ct - sct
    lo0 = float(ct.min())
    span = float(ct.max()) - lo0
    n_win = max(1, int(np.ceil(span / window_width))) if span > 0 else 1
    idx = np.floor((ct - lo0) / window_width).astype(np.int64)
    np.clip(idx, 0, n_win - 1, out=idx)
    count = np.zeros(n_win, dtype=np.int64)
    mean_r = np.full(n_win, np.nan)
    mean_abs = np.full(n_win, np.nan)
    sd = np.full(n_win, np.nan)
    for i in range(n_win):
        sel = r[idx == i]
        count[i] = sel.shape[0]
        if count[i]:
            mean_r[i] = sel.mean()
            mean_abs[i] = np.abs(sel).mean()
            sd[i] = sel.std()
    lo = lo0 + window_width * np.arange(n_win)
    hi = lo + window_width
    hi[-1] = float(ct.max())
    return ResidualBins(
        window_width=float(window_width),
        lo=lo,
        hi=hi,
        count=count,
        mean_residual=mean_r,
        mean_abs_residual=mean_abs,
        sd_residual=sd,
    )


def group_mean_table(params) -> np.ndarray:
    """Per-class target means, sorted ascending (any model family)."""
    return np.sort([c.mu_y for c in params.components])


@dataclass
class FoldRecord:
    """What happened in one LOOCV fold (training heads exclude the fold head)."""

    fold: int
    training_heads: list[int]
    n_training_voxels: int
    chosen_init: str | None = None
    converged: bool | None = None
    n_iter: int | None = None
    group_means: list[float] | None = None
    error: str | None = None


@dataclass
class LoocvReport:
    """MAE matrix (rows: evaluated head, columns: excluded head) plus fold logs."""

    family: str
    K: int
    head_names: list[str]
    mae_matrix: np.ndarray  # (n_heads, n_heads); NaN marks a missing cell
    folds: list[FoldRecord]
    config: dict = field(default_factory=dict)

    @property
    def column_means(self) -> np.ndarray:
        """Per-fold mean MAE over all heads (the table's summary row)."""
        # a failed fold's column is all NaN and should stay NaN silently
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=RuntimeWarning)
            return np.nanmean(self.mae_matrix, axis=0)

    @property
    def held_out_mae(self) -> np.ndarray:
        """Diagonal: each head scored by the model that excluded it."""
        return np.diag(self.mae_matrix)


def _target_and_covariates(volume: Volume, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    obs = observations_at(volume, ids)
    if obs.shape[1] < 2:
        raise DataError("head volumes need a target channel and at least one covariate")
    return obs[:, 0], obs[:, 1:]


def fit_gmm_best_init(pooled_obs: np.ndarray, K: int, seed: int = 0,
                      tol: float | None = None, max_iter: int | None = None):
    """Fit from k-means and agglomerative starts; keep the best final loglik.

    Returns (init name, fitted params, report).
    """
    from pseudoct.gmm import fit_gmm, hierarchical_init, kmeans_init
    from pseudoct.hmm import DEFAULT_MAX_ITER, DEFAULT_TOL

    tol = DEFAULT_TOL if tol is None else tol
    max_iter = DEFAULT_MAX_ITER if max_iter is None else max_iter
    candidates = [
        ("kmeans", kmeans_init(pooled_obs, K, seed=seed)),
        ("hierarchical", hierarchical_init(pooled_obs, K)),
    ]
    best = None
    errors = []
    for name, init in candidates:
        try:
            fitted, report = fit_gmm(init, pooled_obs, tol=tol, max_iter=max_iter)
        except PseudoCtError as e:
            errors.append(f"{name}: {e}")
            continue
        if best is None or report.loglik_trace[-1] > best[2].loglik_trace[-1]:
            best = (name, fitted, report)
    if best is None:
        raise PseudoCtError("all initializations failed: " + "; ".join(errors))
    return best


def fit_hmrf_best_init(obs_list, lattices, K: int, seed: int, tol: float, max_iter: int,
                       burn_in: int, n_samples: int):
    """Fit from k-means- and agglomerative-derived starts (independent-field
    potentials from the mixture weights, beta 0); keep the best final
    pseudo-log-likelihood.  Returns (init name, fitted params, report).
    """
    from pseudoct.gmm import hierarchical_init, kmeans_init
    from pseudoct.hmrf import MrfParams, em_gradient_fit

    pooled = np.concatenate(obs_list, axis=0)
    candidates = []
    for name, gmm_init in (
        ("kmeans", kmeans_init(pooled, K, seed=seed)),
        ("hierarchical", hierarchical_init(pooled, K)),
    ):
        alpha = np.log(gmm_init.weights[0]) - np.log(gmm_init.weights)
        init = MrfParams(alpha=alpha, beta=np.zeros(K), components=gmm_init.components)
        candidates.append((name, init))
    best = None
    errors = []
    for name, init in candidates:
        try:
            fitted, report = em_gradient_fit(
                init, obs_list, lattices, tol=tol, max_iter=max_iter,
                burn_in=burn_in, n_samples=n_samples, seed=seed,
            )
        except PseudoCtError as e:
            errors.append(f"{name}: {e}")
            continue
        # no tractable joint likelihood: compare final pooled pseudo-likelihood
        if best is None or report.loglik_trace[-1] > best[2].loglik_trace[-1]:
            best = (name, fitted, report)
    if best is None:
        raise PseudoCtError("all initializations failed: " + "; ".join(errors))
    return best


def pooled_sequence(seqs: list[SequencedData]) -> SequencedData:
    """Concatenate the segments of several sequenced heads into one dataset.

    All heads must share curve order and channels; the recorded offset is
    the first head's and is nominal for a pooled object.
    """
    if not seqs:
        raise DataError("no sequenced heads to pool")
    first = seqs[0]
    for s in seqs[1:]:
        if s.order != first.order:
            raise DataError(f"curve order mismatch: {s.order.p} vs {first.order.p}")
        if s.channels != first.channels:
            raise DataError(f"channel mismatch: {s.channels} vs {first.channels}")
    segments = [seg for s in seqs for seg in s.segments]
    return SequencedData(
        segments=segments, order=first.order, offset=first.offset,
        channels=first.channels, summary=summarize_segments(segments),
    )


def hmm_single_head_inits(seqs: list[SequencedData], K: int, seeds: list[int],
                          tol: float, max_iter: int) -> list:
    """One fitted chain model per head, each from its own k-means start.

    These per-head fits are the initialization pool for pooled ensemble
    fits: head j's fit never sees any other head's data.
    """
    from pseudoct.gmm import kmeans_init
    from pseudoct.hmm import HmmParams, baum_welch

    fits = []
    for sq, seed in zip(seqs, seeds):
        obs = np.concatenate([s.observations for s in sq.segments])
        g = kmeans_init(obs, K, seed=seed)
        init = HmmParams(
            pi=g.weights, trans=np.tile(g.weights, (K, 1)), components=g.components
        )
        fitted, _ = baum_welch(init, sq, tol=tol, max_iter=max_iter)
        fits.append(fitted)
    return fits


def run_loocv(
    heads: list[Volume],
    family: str,
    K: int,
    head_names: list[str] | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    seed: int = 0,
    burn_in: int = 100,
    n_samples: int = 200,
    hilbert_order: int | None = None,
    workers: int = 1,
) -> LoocvReport:
    """Fit on all-but-one head, score every head, for each choice of fold.

    Family is one of "gmm", "hmm", "hmrf".  The chain family sequences
    each head along the Hilbert curve (shared order; smallest covering
    cube by default) and pools segments across training heads; the field
    family keeps one lattice per head; the mixture pools voxels.  The
    initialization search follows the family's strategy: per-training-head
    single-head fits for the chain, k-means plus agglomerative starts for
    the other two.  Fold f of the fit uses the f-th child of the base
    seed, so the whole report is deterministic and folds can run in any
    order (``workers`` > 1 runs them in threads).
    """
    from pseudoct import gmm as gmm_mod
    from pseudoct import hmm as hmm_mod
    from pseudoct import hmrf as hmrf_mod

    if family not in ("gmm", "hmm", "hmrf"):
        raise DataError(f"unknown family {family!r}; use 'gmm', 'hmm', or 'hmrf'")
    n_heads = len(heads)
    if n_heads < 2:
        raise DataError("LOOCV needs at least 2 heads")
    if K < 1:
        raise DataError("K must be >= 1")
    if head_names is None:
        head_names = [f"head_{i}" for i in range(n_heads)]
    if len(head_names) != n_heads:
        raise DataError(f"{len(head_names)} names for {n_heads} heads")
    if tol is None:
        tol = hmrf_mod.DEFAULT_TOL if family == "hmrf" else hmm_mod.DEFAULT_TOL
    if max_iter is None:
        max_iter = hmrf_mod.DEFAULT_MAX_ITER if family == "hmrf" else hmm_mod.DEFAULT_MAX_ITER

    # per-head structures, computed once and shared across folds
    if family == "hmm":
        order = HilbertOrder(hilbert_order) if hilbert_order else min_covering_order(
            tuple(np.max([h.dims for h in heads], axis=0))
        )
        seqs = [sequence_volume(h, order) for h in heads]
        head_obs = [np.concatenate([s.observations for s in sq.segments]) for sq in seqs]
        head_ids = [np.concatenate([s.voxel_ids for s in sq.segments]) for sq in seqs]
    else:
        lattices = [hmrf_mod.Lattice.from_mask(h.mask) for h in heads]
        head_ids = [lat.ids for lat in lattices]
        head_obs = [observations_at(h, ids) for h, ids in zip(heads, head_ids)]
    truths = [
        observations_at(h, ids)[:, 0] for h, ids in zip(heads, head_ids)
    ]

    fold_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_heads)]

    # chain family: single-head fits double as the init pool for every fold
    single_fits = None
    if family == "hmm":
        single_fits = hmm_single_head_inits(seqs, K, fold_seeds, tol, max_iter)

    mae_matrix = np.full((n_heads, n_heads), np.nan)
    folds: list[FoldRecord] = []

    def run_fold(i: int) -> tuple[FoldRecord, np.ndarray | None]:
        training = [j for j in range(n_heads) if j != i]
        n_train_vox = int(sum(head_obs[j].shape[0] for j in training))
        record = FoldRecord(fold=i, training_heads=training, n_training_voxels=n_train_vox)
        try:
            if family == "gmm":
                pooled = np.concatenate([head_obs[j] for j in training], axis=0)
                name, fitted, report = fit_gmm_best_init(pooled, K, fold_seeds[i], tol, max_iter)

                def predict(l):
                    return gmm_mod.predict_ct_gmm(fitted, head_obs[l][:, 1:]).values

            elif family == "hmm":
                train_data = pooled_sequence([seqs[j] for j in training])
                inits = [single_fits[j] for j in training]
                fitted, report = hmm_mod.multi_start_fit(inits, train_data, tol=tol, max_iter=max_iter)
                name = "single-head-inits"

                def predict(l):
                    return hmm_mod.predict_ct(fitted, seqs[l]).values

            else:
                name, fitted, report = fit_hmrf_best_init(
                    [head_obs[j] for j in training], [lattices[j] for j in training],
                    K, fold_seeds[i], tol, max_iter, burn_in, n_samples,
                )

                def predict(l):
                    return hmrf_mod.predict_ct_mrf(
                        fitted, head_obs[l][:, 1:], lattices[l],
                        burn_in=burn_in, n_samples=n_samples, seed=fold_seeds[i],
                    ).values

            record.chosen_init = name
            record.converged = report.converged
            record.n_iter = report.n_iter
            record.group_means = group_mean_table(fitted).tolist()
            column = np.array([mae(truths[l], predict(l)) for l in range(n_heads)])
            return record, column
        except PseudoCtError as e:
            record.error = str(e)
            return record, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_fold, range(n_heads)))
    else:
        results = [run_fold(i) for i in range(n_heads)]
    for i, (record, column) in enumerate(results):
        folds.append(record)
        if column is not None:
            mae_matrix[:, i] = column

    config = {
        "family": family,
        "K": K,
        "tol": tol,
        "max_iter": max_iter,
        "seed": seed,
        "burn_in": burn_in,
        "n_samples": n_samples,
        "hilbert_order": hilbert_order,
        "workers": workers,
    }
    return LoocvReport(
        family=family, K=K, head_names=head_names,
        mae_matrix=mae_matrix, folds=folds, config=config,
    )


def _fmt(x: float) -> str:
    """Fixed CSV float format; empty string for missing values."""
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return f"{x:.10g}"


def write_mae_matrix_csv(report: LoocvReport, path: str | Path) -> None:
    """head x excluded-head MAE table with a final column-mean row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["head"] + [f"excl_{n}" for n in report.head_names])
        for l, name in enumerate(report.head_names):
            w.writerow([name] + [_fmt(v) for v in report.mae_matrix[l]])
        w.writerow(["mean"] + [_fmt(v) for v in report.column_means])


def write_group_means_csv(report: LoocvReport, path: str | Path) -> None:
    """Per-fold sorted class target means (one row per fold and class)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["fold", "class", "mu_y"])
        for rec in report.folds:
            if rec.group_means is None:
                w.writerow([report.head_names[rec.fold], "", ""])
                continue
            for k, v in enumerate(rec.group_means):
                w.writerow([report.head_names[rec.fold], k, _fmt(v)])


def write_residual_bins_csv(bins: ResidualBins, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["lo", "hi", "count", "mean_residual", "mean_abs_residual", "sd_residual"])
        for row in bins.to_rows():
            w.writerow(
                [
                    _fmt(row["lo"]),
                    _fmt(row["hi"]),
                    row["count"],
                    _fmt(row["mean_residual"]),
                    _fmt(row["mean_abs_residual"]),
                    _fmt(row["sd_residual"]),
                ]
            )
