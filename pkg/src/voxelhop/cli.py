"""Command-line interface.

Exit codes: 0 success, 2 file or format problem, 3 bad configuration,
4 shape mismatch, 5 degenerate data. Errors are written to stderr as one JSON
object.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, load_config, preset_text
from .errors import ConfigError, DimensionError, InsufficientDataError, VoxelHopError
from .formats import (ManifestEntry, block_mean, load_dataset, read_manifest, read_volume,
                      write_manifest, write_volume)

THREADS_ENV = "VOXELHOP_THREADS"
EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_SHAPE, EXIT_DATA = 0, 2, 3, 4, 5

log = logging.getLogger("voxelhop")


class CliError(Exception):
    def __init__(self, message: str, code: int, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


# -- helpers -----------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, infinities and NaN null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), allow_nan=False, **kw)


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@contextmanager
def _single_threaded_blas():
    # multithreaded BLAS may change summation order; --threads caps our own workers
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}", EXIT_CONFIG)
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be >= 1, got {n}", EXIT_CONFIG)
    return n


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k, None) for k in ("seed", "repeats", "keep_fraction")}
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def _dataset(args):
    vols, labels, ids = load_dataset(args.manifest, getattr(args, "split", None))
    if not vols:
        raise InsufficientDataError(f"{args.manifest}: no samples selected")
    return vols, labels, ids


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _report_files(out: Path, stem: str, report_dict: dict, ids, labels, scores, roc_pts) -> None:
    from .plotting import roc_figure

    _write_json(out / f"{stem}.json", report_dict)
    _write_csv(out / f"{stem}_scores.csv", ["id", "label", "score"],
               [[i, int(l), _fmt(s)] for i, l, s in zip(ids, labels, scores)])
    if roc_pts is not None:
        _write_csv(out / f"{stem}_roc.csv", ["fpr", "tpr", "threshold"],
                   [[_fmt(a), _fmt(b), _fmt(t)] for a, b, t in roc_pts])
        pts = np.asarray(roc_pts, dtype=np.float64)
        roc_figure(pts[:, 0], pts[:, 1], report_dict["auc"], out / f"{stem}_roc.png")


# -- commands ----------------------------------------------------------------------

def cmd_synth(args) -> dict:
    from .synth import SynthSpec, labels_for, synth_volume

    S1, S2, K, C = args.dims
    if S1 != S2:
        raise DimensionError(f"the two horizontal extents must match, got {S1} and {S2}")
    spec = SynthSpec(S=S1, K=K, C=C, n_controls=args.controls, n_patients=args.patients,
                     signal_amplitude=args.amplitude, noise_sigma=args.noise, seed=args.seed)
    if args.config:
        load_config(args.config).validate((S1, K, C))
    out = _out_dir(args.out)
    entries = []
    for j, y in enumerate(labels_for(spec)):
        sid = f"{'ctl' if y == 0 else 'pat'}_{j:03d}"
        path = out / f"{sid}.vxh"
        write_volume(path, synth_volume(spec, j, int(y)), args.dtype)
        entries.append(ManifestEntry(path, int(y), sid))
    write_manifest(out / "manifest.json", entries)
    return {"manifest": str(out / "manifest.json"), "n_samples": len(entries),
            "dims": [S1, S2, K, C]}


def cmd_resize(args) -> dict:
    factors = tuple(args.factors)
    src = Path(args.input)
    if src.suffix == ".json":
        out = _out_dir(args.output)
        entries = []
        for e in read_manifest(src):
            dst = out / Path(e.path).name
            write_volume(dst, block_mean(read_volume(e.path), factors), args.dtype)
            entries.append(ManifestEntry(dst, e.label, e.id, e.split))
        write_manifest(out / "manifest.json", entries)
        return {"manifest": str(out / "manifest.json"), "n_samples": len(entries)}
    data = block_mean(read_volume(src), factors)
    write_volume(args.output, data, args.dtype)
    return {"output": str(args.output), "dims": list(data.shape)}


def cmd_plan(args) -> dict:
    cfg = load_config(args.config)
    S, K, C = args.dims
    plan = cfg.plan((S, K, C))
    if args.format == "table":
        for row in plan.table():
            print("  ".join(f"{c:<28}" for c in row).rstrip())
    else:
        print(_dumps(plan.to_dict(), indent=2))
    if not plan.ok:
        raise ConfigError(f"illegal configuration: {plan.reason}", plan)
    return {}


def cmd_fit(args) -> dict:
    from .model import count_parameters, fit, save
    from .plotting import energy_figure
    from .saab import energy_curve

    cfg = _config(args)
    vols, labels, ids = _dataset(args)
    S0, _, K0, C = vols[0].shape
    plan = cfg.validate((S0, K0, C))
    with _single_threaded_blas():
        model = fit(vols, labels, cfg, threads=args.threads)
    save(model, args.out)
    out = _out_dir(args.report_dir or Path(args.out).parent)
    rows, spectra = [], {}
    for i, stage in enumerate(model.cascade.banks):
        for c, bank in enumerate(stage):
            spectra[(i, c)] = bank.spectrum
            for idx, frac in energy_curve(bank):
                rows.append([i + 1, c, idx, _fmt(bank.spectrum[idx - 1]), _fmt(frac),
                             int(idx <= bank.F - 1)])
    _write_csv(out / "energy_curves.csv",
               ["stage", "channel", "ac_index", "eigenvalue", "cumulative_energy", "kept"], rows)
    energy_figure(spectra, out / "energy_curves.png")
    train_scores = [model.score(v) for v in vols]
    report = {
        "model": str(args.out),
        "n_samples": len(vols),
        "input_dims": [S0, S0, K0, C],
        "plan": plan.to_dict(),
        "filters": [[b.F for b in stage] for stage in model.cascade.banks],
        "parameters": count_parameters(model),
        "train_accuracy": float(np.mean((np.array(train_scores) > model.threshold) == labels)),
        "config": cfg.to_dict(),
    }
    _write_json(out / "fit_report.json", report)
    return {"model": str(args.out), "report": str(out / "fit_report.json"),
            "parameters": report["parameters"]["total"]}


def cmd_eval(args) -> dict:
    from .model import accuracy, auc, confusion, load, roc

    model = load(args.model)
    vols, labels, ids = _dataset(args)
    with _single_threaded_blas(), ThreadPoolExecutor(max(1, min(args.threads, len(vols)))) as ex:
        scores = list(ex.map(model.score, vols))
    report = {
        "model": str(args.model),
        "n_samples": len(vols),
        "threshold": model.threshold,
        "accuracy": accuracy(scores, labels, model.threshold),
        "confusion": confusion(scores, labels, model.threshold),
        "samples": [{"id": i, "label": int(l), "score": s, "predicted": int(s > model.threshold)}
                    for i, l, s in zip(ids, labels, scores)],
    }
    pts = None
    if np.unique(labels).size == 2:
        report["auc"] = auc(scores, labels)
        pts = [tuple(map(float, p)) for p in roc(scores, labels)]
        report["roc"] = [list(p) for p in pts]
    out = _out_dir(args.out_dir)
    _report_files(out, "eval", report, ids, labels, scores, pts)
    return {k: report[k] for k in ("accuracy", "auc") if k in report}


def cmd_loocv(args) -> dict:
    from .model import loocv
    from .plotting import sweep_figure

    cfg = _config(args)
    vols, labels, ids = _dataset(args)
    workers = max(1, min(args.threads, len(vols)))
    with _single_threaded_blas():
        result = loocv(vols, labels, cfg, ids=ids, threads=workers,
                       keep_fractions=args.keep_sweep)
    out = _out_dir(args.out_dir)
    reports = result if isinstance(result, dict) else {cfg.keep_fraction: result}
    summary = {}
    for keep, rep in reports.items():
        stem = "loocv" if args.keep_sweep is None else f"loocv_keep{keep:g}"
        _report_files(out, stem, rep.to_dict(), rep.ids, rep.labels, rep.scores, rep.roc)
        summary[f"{keep:g}"] = {"auc": rep.auc, "accuracy": rep.accuracy,
                                "auc_mean": rep.auc_mean, "auc_std": rep.auc_std,
                                "accuracy_mean": rep.accuracy_mean,
                                "accuracy_std": rep.accuracy_std}
    if args.keep_sweep is not None:
        keeps = sorted(reports)
        _write_csv(out / "keep_sweep.csv", ["keep_fraction", "auc_mean", "auc_std",
                                            "accuracy_mean", "accuracy_std"],
                   [[_fmt(k), _fmt(reports[k].auc_mean), _fmt(reports[k].auc_std),
                     _fmt(reports[k].accuracy_mean), _fmt(reports[k].accuracy_std)] for k in keeps])
        sweep_figure(keeps, [reports[k].auc_mean for k in keeps], out / "keep_sweep.png",
                     "kept fraction of features", [reports[k].auc_std for k in keeps])
    return summary if args.keep_sweep is not None else next(iter(summary.values()))


def cmd_inspect(args) -> dict:
    from .model import count_parameters, load

    m = load(args.model)
    S0, K0, C = m.input_dims
    info = {
        "format_version": m.format_version,
        "input_dims": [S0, S0, K0, C],
        "n_stages": m.n_stages,
        "filters": [[b.F for b in stage] for stage in m.cascade.banks],
        "window_lengths": [[b.n for b in stage] for stage in m.cascade.banks],
        "selected_features": [m_.n_kept for m_ in m.masks],
        "lag_out_dims": [u.out_dim for u in m.lags],
        "threshold": m.threshold,
        "parameters": count_parameters(m),
        "config": m.config.to_dict(),
    }
    print(_dumps(info, indent=2, sort_keys=True))
    return {}


def cmd_preset(args) -> dict:
    sys.stdout.write(preset_text(args.name))
    return {}


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxelhop", description="VoxelHop volumetric classifier")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker thread cap (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic two-class cohort")
    s.add_argument("--out", required=True)
    s.add_argument("--controls", type=int, default=20)
    s.add_argument("--patients", type=int, default=26)
    s.add_argument("--dims", type=int, nargs=4, default=[110, 110, 30, 3], metavar=("S", "S", "K", "C"))
    s.add_argument("--amplitude", type=float, default=1.25)
    s.add_argument("--noise", type=float, default=0.003)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dtype", choices=("f4", "f8"), default="f8")
    s.add_argument("--config", help="check the dims against this config or preset")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("resize", help="block-mean downsampling of a volume or a manifest")
    s.add_argument("input")
    s.add_argument("output", help="volume file, or a folder when the input is a manifest")
    s.add_argument("--factors", type=int, nargs="+", required=True)
    s.add_argument("--dtype", choices=("f4", "f8"), default="f4")
    s.set_defaults(func=cmd_resize)

    s = sub.add_parser("plan", help="print the per-stage shape trace")
    s.add_argument("--config", default="standard")
    s.add_argument("--dims", type=int, nargs=3, default=[110, 30, 3], metavar=("S", "K", "C"))
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.set_defaults(func=cmd_plan)

    def data_args(s, config=True):
        s.add_argument("--manifest", required=True)
        s.add_argument("--split")
        if config:
            s.add_argument("--config", default="standard", help="config file or preset name")
            s.add_argument("--seed", type=int)

    s = sub.add_parser("fit", help="train a model")
    data_args(s)
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--report-dir")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", help="score a manifest with a trained model")
    data_args(s, config=False)
    s.add_argument("--model", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("loocv", help="leave-one-out evaluation")
    data_args(s)
    s.add_argument("--repeats", type=int)
    s.add_argument("--keep-fraction", type=float)
    s.add_argument("--keep-sweep", type=float, nargs="+",
                   help="evaluate several kept fractions with shared per-fold cascades")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_loocv)

    s = sub.add_parser("inspect", help="print model metadata")
    s.add_argument("model")
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("preset", help="print a bundled config")
    s.add_argument("name", choices=PRESETS)
    s.set_defaults(func=cmd_preset)
    return p


def _error_payload(exc: BaseException) -> tuple[int, dict]:
    if isinstance(exc, CliError):
        return exc.code, {"error": "usage", "message": str(exc), **exc.extra}
    if isinstance(exc, ConfigError):
        payload = {"error": "config", "message": str(exc)}
        if exc.report is not None:
            payload["plan"] = exc.report.to_dict() if hasattr(exc.report, "to_dict") else exc.report
        return EXIT_CONFIG, payload
    if isinstance(exc, VoxelHopError):
        kind = {EXIT_IO: "io", EXIT_SHAPE: "shape", EXIT_DATA: "data"}.get(exc.exit_code, "error")
        return exc.exit_code, {"error": kind, "message": str(exc)}
    if isinstance(exc, OSError):
        payload = {"error": "io", "message": str(exc)}
        if exc.filename is not None:
            payload["path"] = str(exc.filename)
        elif str(exc).startswith("missing volume file: "):
            payload["path"] = str(exc).split(": ", 1)[1]
        return EXIT_IO, payload
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.threads is None:
            args.threads = default_threads()
        elif args.threads < 1:
            raise CliError("--threads must be >= 1", EXIT_CONFIG)
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code, payload = _error_payload(exc)
        payload["exit_code"] = code
        print(_dumps(payload), file=sys.stderr)
        return code
    if result:
        print(_dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
