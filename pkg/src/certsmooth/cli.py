"""Command-line front end.

Subcommands: certify | cascade | maxradius | focal | eval | losses |
scan-sigma | emit-noise | ingest.  Run parameters come from an optional
JSON config file (versioned schema, see :class:`certsmooth.harness.RunConfig`)
with command-line flags taking precedence; every batch output embeds the
effective config for auditability.

Exit codes: 0 success, 2 configuration error, 3 protocol or file error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration, harness
from .classifiers import (
    NoiseBatchSpec,
    ProtocolError,
    classifier_from_dict,
    emit_noise_batch,
    ingest_predictions,
)
from .harness import ConfigError, RunConfig
from .multipolicy import FocalInstance, focal_certify, focal_optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3

_RUN_METHOD = {"certify": "single", "cascade": "cascade", "maxradius": "maxradius"}


def _add_common_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--sigma", type=float, help="single smoothing scale")
    p.add_argument("--sigmas", help="comma-separated increasing scales")
    p.add_argument("--p0", type=float, help="abstention threshold (default 0.5)")
    p.add_argument("--alpha", type=float, help="significance level (default 0.001)")
    p.add_argument("--n", type=int, help="estimation samples (default 10000)")
    p.add_argument("--n0", type=int, help="selection samples (default 100)")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--classifier", help="classifier definition JSON path")
    p.add_argument("--dataset", help="dataset spec JSON path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", "-j", type=int,
                   help="worker threads (or CERTSMOOTH_THREADS)")
    p.add_argument("--no-timing", action="store_true",
                   help="zero the ms column for byte-identical CSVs")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="certsmooth",
        description="multi-scale randomized smoothing certification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, descr in (
        ("certify", "single-scale batch certification"),
        ("cascade", "cascaded multi-scale certification"),
        ("maxradius", "max-radius policy certification"),
    ):
        p = sub.add_parser(name, help=descr)
        _add_common_run_flags(p)

    p = sub.add_parser("focal", help="focal smoothing: solve an instance or run a batch")
    _add_common_run_flags(p)
    p.add_argument("--a", help="comma-separated budget coefficients a_k")
    p.add_argument("--t2", type=float, help="t^2 = sigma0^2/sigma1^2 - 1")
    p.add_argument("--p", help="comma-separated per-mask confidences")
    p.add_argument("--sigma0", type=float, help="off-mask noise scale")
    p.add_argument("--sigma1", type=float, help="on-mask noise scale")
    p.add_argument("--masks", help="JSON list of binary masks for batch mode")
    p.add_argument("--grid-step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=5e-4)

    p = sub.add_parser("eval", help="recompute metrics from a records CSV")
    p.add_argument("--records", required=True, help="records.csv from a previous run")
    p.add_argument("--classifier", help="classifier JSON (for empirical accuracy)")
    p.add_argument("--dataset", help="dataset spec JSON (for empirical accuracy)")
    p.add_argument("--p0", type=float, default=0.5)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("losses", help="calibration losses over a soft-prediction CSV")
    p.add_argument("--input", required=True,
                   help="CSV: sample_id,noise_id,y,p_0..p_{C-1}")
    p.add_argument("--p0", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=calibration.DEFAULT_LAMBDA)
    p.add_argument("--alpha-w", type=float, default=calibration.DEFAULT_ALPHA_WEIGHT)
    p.add_argument("--denoiser-loss", type=float, default=0.0)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("scan-sigma", help="critical-sigma scan for one sample")
    p.add_argument("--classifier", help="classifier JSON (default quadrant task)")
    p.add_argument("--x", required=True, help="comma-separated point coordinates")
    p.add_argument("--y", type=int, required=True, help="true label")
    p.add_argument("--range", default="0.05:2.0", help="sigma_lo:sigma_hi")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--n", help="MC samples per sigma, or 'exact'", default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("emit-noise", help="write a reproducible noise batch file")
    p.add_argument("--x", required=True, help="comma-separated point coordinates")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sample-id", type=int, default=0)
    p.add_argument("--out", required=True, help="output file path")

    p = sub.add_parser("ingest", help="validate and tally a prediction dump")
    p.add_argument("--predictions", required=True, help="prediction dump path")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sample-id", type=int, default=0)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", help="output directory")

    return parser


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _load_json(path, kind: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ProtocolError(f"cannot read {kind} file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {kind} file {path}: {exc}") from None


def _effective_config(args) -> RunConfig:
    doc = _load_json(args.config, "config") if args.config else {}
    config = RunConfig.from_dict(doc) if doc else RunConfig()
    overrides: dict = {"method": _RUN_METHOD.get(args.command, config.method)}
    if args.command == "focal":
        overrides["method"] = "focal"
    if getattr(args, "sigma", None) is not None:
        overrides["sigmas"] = (args.sigma,)
    if getattr(args, "sigmas", None):
        overrides["sigmas"] = tuple(_parse_floats(args.sigmas))
    for flag in ("p0", "alpha", "n", "n0", "seed"):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[flag] = val
    if getattr(args, "classifier", None):
        overrides["classifier"] = _load_json(args.classifier, "classifier")
    if getattr(args, "dataset", None):
        overrides["dataset"] = _load_json(args.dataset, "dataset")
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("CERTSMOOTH_THREADS", "").strip()
        threads = int(env) if env else None
    if threads is not None:
        overrides["threads"] = threads
    if getattr(args, "no_timing", False):
        overrides["timing"] = False
    if getattr(args, "sigma0", None) is not None:
        overrides["focal_sigma0"] = args.sigma0
    if getattr(args, "sigma1", None) is not None:
        overrides["focal_sigma1"] = args.sigma1
    if getattr(args, "masks", None):
        overrides["focal_masks"] = tuple(tuple(m) for m in json.loads(args.masks))
    try:
        return replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _resolve_task(config: RunConfig):
    handle = (classifier_from_dict(config.classifier) if config.classifier
              else harness.default_classifier())
    spec = config.dataset or harness.default_dataset_spec()
    dataset = harness.make_gaussian_mixture(spec)
    if dataset.dim != handle.dim:
        raise ConfigError(
            f"dataset dim {dataset.dim} does not match classifier dim {handle.dim}"
        )
    return dataset, handle


def _emit_json(doc: dict, out, name: str) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    sys.stdout.write(text)


def _cmd_run(args) -> int:
    config = _effective_config(args)
    dataset, handle = _resolve_task(config)
    out = args.out or "certsmooth-out"
    records, summary = harness.run_batch(dataset, handle, config, out_dir=out)
    print(f"wrote {len(records)} records to {out}/records.csv "
          f"(acr={summary.acr:.4f}, abstention={summary.abstention_rate:.3f})")
    return EXIT_OK


def _cmd_focal(args) -> int:
    if args.a or args.p:
        if args.a:
            if args.t2 is None:
                raise ConfigError("--a requires --t2")
            a = np.asarray(_parse_floats(args.a))
            sigma1 = 1.0 / math.sqrt(args.t2 + 1.0)  # any pair with this ratio
            inst = FocalInstance(a=a, t_sq=args.t2, sigma0=1.0, sigma1=sigma1)
            sol = focal_optimize(inst, grid_step=args.grid_step, tol=args.tol)
            doc = {"b": sol.b.tolist(), "radius": sol.radius, "a": a.tolist(),
                   "t2": args.t2}
        else:
            if args.sigma0 is None or args.sigma1 is None:
                raise ConfigError("--p requires --sigma0 and --sigma1")
            p = _parse_floats(args.p)
            cert = focal_certify(p, args.sigma0, args.sigma1, alpha=args.alpha,
                                 n=args.n, grid_step=args.grid_step, tol=args.tol)
            doc = {
                "radius": cert.radius,
                "abstained": cert.abstained,
                "p_hat": cert.p_hat,
                "b": None if cert.solution is None else cert.solution.b.tolist(),
            }
        _emit_json(doc, args.out, "focal.json")
        return EXIT_OK
    # batch mode over a dataset
    if not args.masks:
        raise ConfigError("focal batch mode requires --masks (or use --a/--p)")
    return _cmd_run(args)


def _cmd_eval(args) -> int:
    try:
        records = harness.read_records_csv(args.records)
    except OSError as exc:
        raise ProtocolError(str(exc)) from None
    except ValueError as exc:
        raise ProtocolError(f"bad records CSV: {exc}") from None
    if not records:
        raise ProtocolError("records CSV holds no rows")
    clean_correct = None
    if args.classifier and args.dataset:
        handle = classifier_from_dict(_load_json(args.classifier, "classifier"))
        dataset = harness.make_gaussian_mixture(_load_json(args.dataset, "dataset"))
        clean = np.array([handle.classify(p) for p in dataset.points])
        clean_correct = (clean == dataset.labels)[: len(records)]
    eps = RunConfig().epsilons
    summary = harness.summarize(records, eps, clean_correct, args.p0)
    _emit_json({"metrics": summary.to_dict()}, args.out, "summary.json")
    if args.out:
        harness.write_svg_curve(summary.epsilons, summary.certified_accuracy,
                                Path(args.out) / "curve.svg")
    return EXIT_OK


def _read_predictions_csv(path):
    """Soft-prediction CSV: sample_id,noise_id,y,p_0..p_{C-1} (sorted rows)."""
    samples: dict = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 4 or header[:3] != ["sample_id", "noise_id", "y"]:
                raise ProtocolError(f"{path}: expected header sample_id,noise_id,y,p_0,...")
            for row in reader:
                sid, nid, y = int(row[0]), int(row[1]), int(row[2])
                probs = [float(v) for v in row[3:]]
                samples.setdefault(sid, {"y": y, "rows": []})
                samples[sid]["rows"].append((nid, probs))
    except OSError as exc:
        raise ProtocolError(str(exc)) from None
    except (ValueError, IndexError) as exc:
        raise ProtocolError(f"{path}: malformed row ({exc})") from None
    if not samples:
        raise ProtocolError(f"{path}: no prediction rows")
    out = []
    for sid in sorted(samples):
        rows = sorted(samples[sid]["rows"])
        out.append((sid, samples[sid]["y"], np.array([p for _, p in rows])))
    return out


def _cmd_losses(args) -> int:
    data = _read_predictions_csv(args.input)
    brier_vals, ac_vals = [], []
    for _, y, probs in data:
        value, _ = calibration.brier_loss(probs, y, args.p0)
        brier_vals.append(value)
        if probs.shape[0] >= 2:
            ac, _, _ = calibration.anti_consistency_loss(probs[0], probs[1], y)
            ac_vals.append(ac)
    brier = float(np.mean(brier_vals))
    ac = float(np.mean(ac_vals)) if ac_vals else 0.0
    total = calibration.total_objective(args.denoiser_loss, brier, ac,
                                        args.lam, args.alpha_w)
    doc = {"brier": brier, "anti_consistency": ac, "total": total,
           "lambda": args.lam, "alpha_w": args.alpha_w,
           "denoiser_loss": args.denoiser_loss, "num_samples": len(data)}
    _emit_json(doc, args.out, "losses.json")
    return EXIT_OK


def _cmd_scan_sigma(args) -> int:
    handle = (classifier_from_dict(_load_json(args.classifier, "classifier"))
              if args.classifier else harness.default_classifier())
    x = np.asarray(_parse_floats(args.x))
    try:
        lo, hi = (float(v) for v in args.range.split(":"))
    except ValueError:
        raise ConfigError(f"--range must be lo:hi, got {args.range!r}") from None
    n_or_exact = "exact" if args.n == "exact" else int(args.n)
    critical = harness.critical_sigma_scan(handle, x, args.y, (lo, hi),
                                           args.step, n_or_exact, args.seed)
    doc = {
        "critical_sigma": None if math.isinf(critical) else critical,
        "above_range": math.isinf(critical),
        "range": [lo, hi],
        "step": args.step,
        "mode": "exact" if n_or_exact == "exact" else {"n": n_or_exact},
    }
    _emit_json(doc, args.out, "critical_sigma.json")
    return EXIT_OK


def _cmd_emit_noise(args) -> int:
    x = np.asarray(_parse_floats(args.x))
    spec = NoiseBatchSpec(sample_id=args.sample_id, sigma=args.sigma, n=args.n,
                          rng_seed=args.seed, dim=x.size)
    emit_noise_batch(spec, x, args.out)
    print(f"wrote {args.n} noisy rows to {args.out}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    spec = NoiseBatchSpec(sample_id=args.sample_id, sigma=args.sigma, n=args.n,
                          rng_seed=args.seed, dim=args.dim)
    labels = ingest_predictions(spec, args.predictions, args.num_classes)
    counts = np.bincount(labels, minlength=args.num_classes or 0)
    doc = {"n": int(labels.size), "counts": counts.tolist(),
           "top_class": int(np.argmax(counts)) if counts.size else None}
    _emit_json(doc, args.out, "votes.json")
    return EXIT_OK


_HANDLERS = {
    "certify": _cmd_run,
    "cascade": _cmd_run,
    "maxradius": _cmd_run,
    "focal": _cmd_focal,
    "eval": _cmd_eval,
    "losses": _cmd_losses,
    "scan-sigma": _cmd_scan_sigma,
    "emit-noise": _cmd_emit_noise,
    "ingest": _cmd_ingest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ProtocolError, OSError) as exc:
        print(f"protocol/file error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ValueError as exc:  # ConfigError and invalid parameter values
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
