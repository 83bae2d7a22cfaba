"""Command-line front end wiring the modules into reproducible pipelines.

Every successful run writes ``run_manifest.json`` into the output
directory: schema version, package version, subcommand, the fully
resolved configuration (defaults included, paths absolute), and wall
time.  Re-running with ``--from-manifest run_manifest.json`` replays the
stored subcommand and configuration and reproduces all output CSVs
bit-identically.

Randomness policy: each run takes one top-level ``--seed``.  Operations
expand it deterministically with numpy SeedSequence spawning (ensemble
heads, cross-validation folds, and sampler chains each consume one child
in a fixed documented order); nothing reads ambient entropy.

Exit codes: 0 success, 2 usage error, 3 data error (malformed or
inconsistent inputs), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from pseudoct import __version__
from pseudoct.errors import DataError, NumericalError
from pseudoct.volume_io import Volume, VolumeHeader, coords_of_ids, load_volume, save_volume

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "run_manifest.json"


def _parse_offset(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"offset must be 'x,y,z', got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"offset must be three integers: {e}")


def discover_heads(ensemble_dir: str | Path) -> list[Path]:
    """Volume basenames in a directory, sorted by name.

    A head is any ``<stem>.json`` with volume header fields and a
    ``<stem>.raw`` sibling; label volumes (``*_labels``) and manifests
    are skipped.
    """
    d = Path(ensemble_dir)
    if not d.is_dir():
        raise DataError(f"ensemble directory not found: {d}")
    found = []
    for header_path in sorted(d.glob("*.json")):
        stem = header_path.stem
        if stem.endswith("_labels") or header_path.name == MANIFEST_NAME:
            continue
        if not header_path.with_suffix(".raw").exists():
            continue
        try:
            doc = json.loads(header_path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and {"dims", "channels", "dtype"} <= doc.keys():
            found.append(header_path.with_suffix(""))
    if not found:
        raise DataError(f"no volume header/payload pairs found in {d}")
    return found


def _load_heads(ensemble_dir: str | Path) -> tuple[list[Volume], list[str]]:
    paths = discover_heads(ensemble_dir)
    return [load_volume(p) for p in paths], [p.stem for p in paths]


def _prediction_volume(like: Volume, voxel_ids: np.ndarray, values: np.ndarray) -> Volume:
    """Wrap per-voxel predictions as a (mask, sCT) volume shaped like the input."""
    from pseudoct.volume_io import MASK_CHANNEL

    data = np.zeros((2,) + like.dims, dtype=np.float32)
    data[0] = like.mask
    coords = coords_of_ids(voxel_ids, like.dims)
    data[1, coords[:, 0], coords[:, 1], coords[:, 2]] = values
    header = VolumeHeader(dims=like.dims, channels=(MASK_CHANNEL, "sCT"),
                          voxel_size_mm=like.header.voxel_size_mm)
    return Volume(header=header, data=data)


def _check_covariate_channels(volume: Volume, obs_dim: int) -> None:
    """Fail early, naming channels, when a volume cannot feed a model."""
    have = list(volume.value_channels)
    if len(have) not in (obs_dim - 1, obs_dim):
        want = obs_dim - 1
        raise DataError(
            f"model expects {want} covariate channel{'s' if want != 1 else ''} "
            f"(optionally preceded by the target), volume has {len(have)}: {have}"
        )


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n")


# --- subcommand runners (each takes the parsed namespace, returns artifact notes) ---


def _run_phantom(args) -> dict:
    from pseudoct.phantom import PhantomSpec, generate_ensemble

    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise DataError(f"phantom spec not found: {spec_path}")
    try:
        doc = json.loads(spec_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed phantom spec JSON: {e}") from e
    spec = PhantomSpec.from_dict(doc)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = Path(args.out)
    names = []
    for h, (observed, labels) in enumerate(generate_ensemble(spec)):
        name = f"head_{h:03d}"
        save_volume(observed, out / name)
        save_volume(labels, out / f"{name}_labels")
        names.append(name)
    return {"heads": names, "seed": spec.seed}


def _run_sequence(args) -> dict:
    from pseudoct.hilbert import min_covering_order, sequence_volume

    volume = load_volume(args.volume)
    order = args.hilbert_order if args.hilbert_order else min_covering_order(volume.dims)
    seq = sequence_volume(volume, order, offset=args.offset)
    doc = {
        "volume": str(Path(args.volume)),
        "order": seq.order.p,
        "offset": list(seq.offset),
        "channels": list(seq.channels),
        "summary": seq.summary.to_dict(),
    }
    _write_json(doc, Path(args.out) / "sequence_summary.json")
    return {"summary": doc["summary"]}


def _fit_common_out(args, name: str, fitted, report) -> dict:
    from pseudoct.model_io import save_model

    out = Path(args.out)
    save_model(fitted, out / "model.json")
    report_doc = report.to_dict()
    report_doc["chosen_init"] = name
    _write_json(report_doc, out / "fit_report.json")
    return {
        "chosen_init": name,
        "final_loglik": report.loglik_trace[-1],
        "n_iter": report.n_iter,
        "converged": report.converged,
    }


def _run_fit_gmm(args) -> dict:
    from pseudoct.evaluate import fit_gmm_best_init
    from pseudoct.volume_io import masked_voxel_ids, observations_at

    heads, _ = _load_heads(args.ensemble)
    pooled = np.concatenate(
        [observations_at(h, masked_voxel_ids(h)) for h in heads], axis=0
    )
    name, fitted, report = fit_gmm_best_init(
        pooled, args.k, seed=args.seed, tol=args.tol, max_iter=args.max_iter
    )
    return _fit_common_out(args, name, fitted, report)


def _run_fit_hmm(args) -> dict:
    from pseudoct.evaluate import hmm_single_head_inits, pooled_sequence
    from pseudoct.hilbert import min_covering_order, sequence_volume
    from pseudoct.hmm import multi_start_fit

    heads, _ = _load_heads(args.ensemble)
    order = args.hilbert_order if args.hilbert_order else min_covering_order(
        tuple(np.max([h.dims for h in heads], axis=0))
    )
    seqs = [sequence_volume(h, order) for h in heads]
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(len(heads))]
    inits = hmm_single_head_inits(seqs, args.k, seeds, args.tol, args.max_iter)
    fitted, report = multi_start_fit(inits, pooled_sequence(seqs),
                                     tol=args.tol, max_iter=args.max_iter)
    return _fit_common_out(args, "single-head-inits", fitted, report)


def _run_fit_hmrf(args) -> dict:
    from pseudoct.evaluate import fit_hmrf_best_init
    from pseudoct.hmrf import Lattice, observations_for_lattice

    heads, _ = _load_heads(args.ensemble)
    lattices = [Lattice.from_volume(h) for h in heads]
    obs_list = [observations_for_lattice(h, lat) for h, lat in zip(heads, lattices)]
    name, fitted, report = fit_hmrf_best_init(
        obs_list, lattices, args.k, args.seed, args.tol, args.max_iter,
        args.burn_in, args.samples,
    )
    return _fit_common_out(args, name, fitted, report)


def _run_predict(args) -> dict:
    from pseudoct.model_io import load_model

    params = load_model(args.model)
    volume = load_volume(args.volume)
    _check_covariate_channels(volume, params.components[0].dim)
    family = params.to_dict()["family"]
    if family == "gmm":
        from pseudoct.gmm import predict_ct_gmm
        from pseudoct.volume_io import masked_voxel_ids, observations_at

        ids = masked_voxel_ids(volume)
        pred = predict_ct_gmm(params, observations_at(volume, ids))
        pred_ids = ids
    elif family == "hmm":
        from pseudoct.hilbert import min_covering_order, sequence_volume
        from pseudoct.hmm import predict_ct

        order = args.hilbert_order if args.hilbert_order else min_covering_order(volume.dims)
        seq = sequence_volume(volume, order)
        pred = predict_ct(params, seq)
        pred_ids = pred.voxel_ids
    else:
        from pseudoct.hmrf import Lattice, observations_for_lattice, predict_ct_mrf

        lattice = Lattice.from_volume(volume)
        obs = observations_for_lattice(volume, lattice)
        pred = predict_ct_mrf(params, obs, lattice, burn_in=args.burn_in,
                              n_samples=args.samples, seed=args.seed)
        pred_ids = pred.voxel_ids
    out_vol = _prediction_volume(volume, pred_ids, pred.values)
    save_volume(out_vol, Path(args.out) / "prediction")
    return {"family": family, "n_voxels": int(len(pred_ids))}


def _run_evaluate(args) -> dict:
    from pseudoct.evaluate import mae, smoothed_residuals, write_residual_bins_csv
    from pseudoct.volume_io import masked_voxel_ids, observations_at

    truth = load_volume(args.truth)
    prediction = load_volume(args.prediction)
    if truth.dims != prediction.dims:
        raise DataError(f"dims mismatch: truth {truth.dims} vs prediction {prediction.dims}")
    for vol, role in ((truth, "truth"), (prediction, "prediction")):
        if not vol.value_channels:
            raise DataError(f"{role} volume has no value channels (only a mask)")
    both = truth.mask & prediction.mask
    joint = Volume(
        header=VolumeHeader(dims=truth.dims, channels=("mask",)),
        data=both[None].astype(np.float32),
    )
    ids = masked_voxel_ids(joint)
    if len(ids) == 0:
        raise DataError("truth and prediction masks do not overlap")
    ct = observations_at(truth, ids, (truth.value_channels[0],))[:, 0]
    sct = observations_at(prediction, ids, (prediction.value_channels[0],))[:, 0]
    value = mae(ct, sct)
    bins = smoothed_residuals(ct, sct, args.window_width)
    out = Path(args.out)
    write_residual_bins_csv(bins, out / "residual_bins.csv")
    _write_json(
        {
            "mae": value,
            "n_voxels": int(len(ids)),
            "truth_channel": truth.value_channels[0],
            "prediction_channel": prediction.value_channels[0],
            "window_width": args.window_width,
        },
        out / "metrics.json",
    )
    return {"mae": value, "n_voxels": int(len(ids))}


def _run_loocv(args) -> dict:
    from pseudoct.evaluate import run_loocv, write_group_means_csv, write_mae_matrix_csv

    heads, names = _load_heads(args.ensemble)
    report = run_loocv(
        heads, args.family, args.k, head_names=names,
        tol=args.tol, max_iter=args.max_iter, seed=args.seed,
        burn_in=args.burn_in, n_samples=args.samples,
        hilbert_order=args.hilbert_order, workers=args.workers,
    )
    out = Path(args.out)
    write_mae_matrix_csv(report, out / "mae_matrix.csv")
    write_group_means_csv(report, out / "group_means.csv")
    fold_docs = [dataclasses.asdict(rec) for rec in report.folds]
    _write_json(
        {"family": report.family, "K": report.K, "heads": report.head_names,
         "folds": fold_docs},
        out / "loocv_report.json",
    )
    failed = [rec.fold for rec in report.folds if rec.error is not None]
    return {
        "held_out_mae": [None if np.isnan(v) else float(v) for v in report.held_out_mae],
        "failed_folds": failed,
    }


_RUNNERS = {
    "phantom": _run_phantom,
    "sequence": _run_sequence,
    "fit-gmm": _run_fit_gmm,
    "fit-hmm": _run_fit_hmm,
    "fit-hmrf": _run_fit_hmrf,
    "predict": _run_predict,
    "evaluate": _run_evaluate,
    "loocv": _run_loocv,
}


def _add_fit_flags(p: argparse.ArgumentParser, gibbs: bool) -> None:
    p.add_argument("--k", type=int, required=True, help="number of latent classes")
    p.add_argument("--tol", type=float, default=None, help="convergence tolerance")
    p.add_argument("--max-iter", type=int, default=None, help="iteration cap")
    p.add_argument("--seed", type=int, default=0, help="top-level random seed")
    if gibbs:
        p.add_argument("--burn-in", type=int, default=None, help="Gibbs burn-in sweeps")
        p.add_argument("--samples", type=int, default=None, help="Gibbs sample sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudoct",
        description="Latent-class regression pipelines for pseudo-CT estimation from MRI.",
    )
    parser.add_argument("--from-manifest", metavar="FILE", default=None,
                        help="replay a previous run from its manifest")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = sub.add_parser("phantom", help="generate a synthetic ensemble from a spec JSON")
    p.add_argument("--spec", required=True, help="phantom spec JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the seed in the spec JSON")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sequence", help="linearize a volume along the space-filling curve")
    p.add_argument("--volume", required=True, help="volume basename or header path")
    p.add_argument("--hilbert-order", type=int, default=None, help="curve order (default: smallest covering)")
    p.add_argument("--offset", type=_parse_offset, default=None, help="placement offset 'x,y,z'")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-gmm", help="fit the independent-voxel mixture model")
    p.add_argument("--ensemble", required=True, help="directory of head volumes")
    _add_fit_flags(p, gibbs=False)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-hmm", help="fit the hidden Markov chain model")
    p.add_argument("--ensemble", required=True, help="directory of head volumes")
    _add_fit_flags(p, gibbs=False)
    p.add_argument("--hilbert-order", type=int, default=None, help="curve order (default: smallest covering)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-hmrf", help="fit the hidden Markov random field model")
    p.add_argument("--ensemble", required=True, help="directory of head volumes")
    _add_fit_flags(p, gibbs=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("predict", help="predict the target volume from covariates")
    p.add_argument("--model", required=True, help="fitted model JSON")
    p.add_argument("--volume", required=True, help="input volume basename")
    p.add_argument("--seed", type=int, default=0, help="top-level random seed")
    p.add_argument("--burn-in", type=int, default=None, help="Gibbs burn-in sweeps")
    p.add_argument("--samples", type=int, default=None, help="Gibbs sample sweeps")
    p.add_argument("--hilbert-order", type=int, default=None, help="curve order (default: smallest covering)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="score a prediction against the truth")
    p.add_argument("--truth", required=True, help="truth volume basename")
    p.add_argument("--prediction", required=True, help="predicted volume basename")
    p.add_argument("--window-width", type=float, default=20.0, help="residual window width")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("loocv", help="leave-one-out cross-validation over an ensemble")
    p.add_argument("--family", required=True, choices=("gmm", "hmm", "hmrf"))
    p.add_argument("--ensemble", required=True, help="directory of head volumes")
    _add_fit_flags(p, gibbs=True)
    p.add_argument("--hilbert-order", type=int, default=None, help="curve order (default: smallest covering)")
    p.add_argument("--workers", type=int, default=1, help="parallel fold workers")
    p.add_argument("--out", required=True, help="output directory")

    return parser


_PATH_FLAGS = ("spec", "volume", "ensemble", "model", "truth", "prediction", "out")


def _resolve_config(args: argparse.Namespace) -> dict:
    """Fully resolved flag dict (defaults filled, paths absolute) for the manifest."""
    from pseudoct import hmm, hmrf

    config = {k: v for k, v in vars(args).items() if k not in ("from_manifest", "subcommand")}
    # Gibbs defaults depend on the subcommand: fitting E-steps use short
    # chains, prediction uses long ones.
    if "burn_in" in config and config["burn_in"] is None:
        config["burn_in"] = (hmrf.DEFAULT_PREDICT_BURN_IN if args.subcommand == "predict"
                             else hmrf.DEFAULT_FIT_BURN_IN)
    if "samples" in config and config["samples"] is None:
        config["samples"] = (hmrf.DEFAULT_PREDICT_SAMPLES if args.subcommand == "predict"
                             else hmrf.DEFAULT_FIT_SAMPLES)
    # convergence defaults depend on the model family being fitted
    field_fit = args.subcommand == "fit-hmrf" or config.get("family") == "hmrf"
    if "tol" in config and config["tol"] is None:
        config["tol"] = hmrf.DEFAULT_TOL if field_fit else hmm.DEFAULT_TOL
    if "max_iter" in config and config["max_iter"] is None:
        config["max_iter"] = hmrf.DEFAULT_MAX_ITER if field_fit else hmm.DEFAULT_MAX_ITER
    for key in _PATH_FLAGS:
        if config.get(key) is not None:
            config[key] = str(Path(config[key]).resolve())
    if "offset" in config and config["offset"] is not None:
        config["offset"] = list(config["offset"])
    return config


def _namespace_from_config(subcommand: str, config: dict) -> argparse.Namespace:
    ns = argparse.Namespace(subcommand=subcommand, from_manifest=None, **config)
    if getattr(ns, "offset", None) is not None:
        ns.offset = tuple(ns.offset)
    return ns


def write_manifest(out_dir: str | Path, subcommand: str, config: dict,
                   wall_time_s: float) -> Path:
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "package_version": __version__,
        "subcommand": subcommand,
        "config": config,
        "wall_time_s": wall_time_s,
    }
    path = Path(out_dir) / MANIFEST_NAME
    _write_json(doc, path)
    return path


def load_manifest(path: str | Path) -> tuple[str, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest JSON: {e}") from e
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise DataError(
            f"manifest schema version {version!r} not supported "
            f"(expected {MANIFEST_SCHEMA_VERSION})"
        )
    subcommand = doc.get("subcommand")
    if subcommand not in _RUNNERS:
        raise DataError(f"manifest names unknown subcommand {subcommand!r}")
    config = doc.get("config")
    if not isinstance(config, dict):
        raise DataError("manifest has no config object")
    return subcommand, config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.from_manifest is not None:
        if args.subcommand is not None:
            parser.error("--from-manifest replaces the subcommand; give only one")
        try:
            subcommand, config = load_manifest(args.from_manifest)
        except DataError as e:
            print(f"error [data]: {e}", file=sys.stderr)
            return 3
        args = _namespace_from_config(subcommand, config)
        args.subcommand = subcommand
    elif args.subcommand is None:
        parser.error("a subcommand (or --from-manifest) is required")
    config = _resolve_config(args)
    runner_args = _namespace_from_config(args.subcommand, config)
    started = time.perf_counter()
    try:
        notes = _RUNNERS[args.subcommand](runner_args)
    except DataError as e:
        print(f"error [data]: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"error [numerical]: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error [data]: {e}", file=sys.stderr)
        return 3
    wall = time.perf_counter() - started
    manifest = write_manifest(runner_args.out, args.subcommand, config, wall)
    summary = {"subcommand": args.subcommand, "manifest": str(manifest), **notes}
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
