"""Command line entry point: ``obq <subcommand> ...``.

Exit codes: 0 success, 2 input error, 3 grid cap exceeded, 4 strict-mode failure.
Every output file gets a ``<out>.manifest.json`` sidecar recording the command
line, seed, version, SHA-256 of each input and a timestamp (taken from
SOURCE_DATE_EPOCH when set, for reproducible manifests).
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict
from importlib import metadata

import numpy as np

from obq import boxio, consistency, experiments, geometry, heatmap, loss

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CAP = 3
EXIT_STRICT = 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        t = datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    else:
        t = datetime.datetime.now(tz=datetime.timezone.utc)
    return t.isoformat()


def write_manifest(out_path, argv, seed, inputs, extra=None):
    manifest = {
        "command_line": " ".join(["obq", *argv]),
        "seed": seed,
        "version": _version(),
        "inputs": {str(p): _digest(p) for p in inputs},
        "timestamp": _timestamp(),
    }
    if extra:
        manifest.update(extra)
    with open(f"{out_path}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{v:.9g}"
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _write_spec(out, spec):
    with open(f"{out}.spec.json", "w") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, geometry.OrientedBox):
        return boxio.box_to_dict(o)
    if hasattr(o, "value"):
        return o.value
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _read_boxes(path, allow_empty=False):
    try:
        return boxio.read_boxes(path, allow_empty)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except boxio.BoxFileError as exc:
        raise CliError(str(exc)) from None


def _read_heatmap(path):
    try:
        return heatmap.read_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    except heatmap.GridCapError as exc:
        raise CliError(str(exc), EXIT_CAP) from None
    except ValueError as exc:
        raise CliError(str(exc)) from None


# ---------------------------------------------------------------- subcommands


def cmd_heatmap(args, argv):
    boxes, _ = _read_boxes(args.boxes)
    try:
        grid = heatmap.Grid(args.width, args.height, args.origin_x, args.origin_y, args.stride)
    except heatmap.GridCapError as exc:
        raise CliError(str(exc), EXIT_CAP) from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    build = heatmap.global_label if args.label == "gaussian" else heatmap.centerness_label
    hm = build(boxes, grid)
    heatmap.write_csv(hm, args.out)
    write_manifest(args.out, argv, args.seed, [args.boxes])
    if args.pgm:
        heatmap.write_pgm(hm, args.pgm)
        write_manifest(args.pgm, argv, args.seed, [args.boxes])


def cmd_score(args, argv):
    hm = _read_heatmap(args.heatmap)
    boxes, ids = _read_boxes(args.boxes)
    inputs = [args.heatmap, args.boxes]
    gt_ious = None
    if args.gt:
        gts, _ = _read_boxes(args.gt)
        inputs.append(args.gt)
        gt_ious = [max(geometry.exact_iou(b, g) for g in gts) for b in boxes]
    lite = None
    if args.lite:
        try:
            top_k = "all" if args.top_k == "all" else int(args.top_k)
            lite = consistency.LiteConfig(top_k, args.gamma)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    reports = consistency.batch_quality(boxes, hm, args.metric, ids, gt_ious, lite, args.threads)
    failed = [r for r in reports if r.error is not None]
    if failed and args.strict:
        raise CliError(f"{len(failed)} box(es) could not be scored: {failed[0].error}", EXIT_STRICT)
    with open(args.out, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict()) + "\n")
    write_manifest(args.out, argv, args.seed, inputs)


def cmd_iou(args, argv):
    a, ida = _read_boxes(args.a)
    b, idb = _read_boxes(args.b)
    if args.cross:
        pairs = [(i, j) for i in range(len(a)) for j in range(len(b))]
    else:
        if len(a) != len(b):
            raise CliError(f"box files differ in length ({len(a)} vs {len(b)}); use --cross for all pairs")
        pairs = [(i, i) for i in range(len(a))]
    if args.samples < 1:
        raise CliError("--samples must be >= 1")

    def one(p):
        i, j = p
        if args.mode == "exact":
            return geometry.exact_iou(a[i], b[j])
        # one sub-seed per row so results do not depend on evaluation order
        return geometry.mc_iou(a[i], b[j], args.samples, args.seed + len(a) * j + i)

    values = experiments.ordered_map(one, pairs, args.threads)
    rows = [{"id_a": ida[i], "id_b": idb[j], "iou": v} for (i, j), v in zip(pairs, values)]
    write_csv(args.out, ("id_a", "id_b", "iou"), rows)
    write_manifest(args.out, argv, args.seed, [args.a, args.b])


def cmd_loss(args, argv):
    pred = _read_heatmap(args.pred)
    label = _read_heatmap(args.label)
    try:
        cfg = loss.LossConfig(args.alpha, args.beta, args.lam, "literal" if args.ld_literal else "focal")
        value = loss.ld_loss(pred, label, cfg)
        grad = loss.ld_loss_grad(pred, label, cfg) if args.grad_out else None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    result = {"ld_loss": value, "negative_branch": cfg.negative}
    if args.l_cls is not None or args.l_loc is not None:
        try:
            result["total_loss"] = loss.total_loss(args.l_cls or 0.0, args.l_loc or 0.0, value, cfg)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    text = json.dumps(result, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        write_manifest(args.out, argv, args.seed, [args.pred, args.label])
    if grad is not None:
        heatmap.write_csv(grad, args.grad_out)
        write_manifest(args.grad_out, argv, args.seed, [args.pred, args.label])


def cmd_sweep(args, argv):
    gt = geometry.OrientedBox(0.0, 0.0, args.gt_w, args.gt_h, math.radians(args.gt_theta))
    rng = None if args.lo is None and args.hi is None else (args.lo, args.hi)
    if rng is not None and None in rng:
        raise CliError("--lo and --hi must be given together")
    if rng is not None and args.kind == "angle":
        rng = (math.radians(rng[0]), math.radians(rng[1]))
    try:
        spec = experiments.SweepSpec(args.kind, gt, rng, args.steps, args.stride, args.ar_mode)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    rows = experiments.run_sweep(spec, threads=args.threads)
    write_csv(args.out, experiments.SWEEP_COLUMNS + ("flagged",), rows)
    summary = {
        f"mean_abs_err_{m.value}": experiments.sweep_errors(rows, m) for m in consistency.MetricKind
    }
    _write_spec(args.out, {"sweep": asdict(spec), "summary": summary})
    write_manifest(args.out, argv, args.seed, [])


def _gen_from_args(args):
    return experiments.GenParams(
        center_jitter=args.center_jitter,
        size_jitter=args.size_jitter,
        angle_jitter=math.radians(args.angle_jitter),
        stride=args.stride,
    )


def cmd_correlate(args, argv):
    gen = _gen_from_args(args)
    try:
        report, table = experiments.run_correlation(
            args.n, args.seed, args.metric, gen, gamma=args.gamma, threads=args.threads
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    cols = ("pair", "gt_iou", "q_viou", "q_mae", "q_kld")
    rows = [{"pair": i, **{k: float(v[i]) for k, v in table.items()}} for i in range(report.n)]
    write_csv(args.out, cols, rows)
    _write_spec(
        args.out,
        {"n_pairs": args.n, "seed": args.seed, "gamma": args.gamma, "gen": asdict(gen), "report": report.to_dict()},
    )
    write_manifest(args.out, argv, args.seed, [])


def _parse_rows(text):
    rows = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            d1, d2 = (float(v) for v in part.split(","))
        except ValueError:
            raise CliError(f"bad perturbation row {part!r}; expected 'd1,d2'") from None
        rows.append((d1, d2))
    if not rows:
        raise CliError("no perturbation rows given")
    return rows


def cmd_robustness(args, argv):
    gen = _gen_from_args(args)
    try:
        specs = [experiments.PerturbSpec(d1, d2, args.seed) for d1, d2 in _parse_rows(args.rows)]
        rows = experiments.run_robustness(
            args.n, args.seed, specs, gen, args.metric, baseline=not args.no_baseline, threads=args.threads
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    write_csv(args.out, experiments.ROBUSTNESS_COLUMNS, rows)
    _write_spec(
        args.out,
        {"n_pairs": args.n, "seed": args.seed, "metric": args.metric, "gen": asdict(gen), "rows": [asdict(s) for s in specs]},
    )
    write_manifest(args.out, argv, args.seed, [])


# ---------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")

    p = argparse.ArgumentParser(prog="obq", description="Pixel-level localization quality for oriented boxes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("heatmap", parents=[common], help="rasterize a position-heatmap label")
    s.add_argument("--boxes", required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--origin-x", type=float, default=0.0)
    s.add_argument("--origin-y", type=float, default=0.0)
    s.add_argument("--stride", type=float, default=1.0)
    s.add_argument("--label", choices=("gaussian", "centerness"), default="gaussian")
    s.add_argument("--pgm", help="also write a 16-bit PGM preview")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_heatmap)

    s = sub.add_parser("score", parents=[common], help="quality scores of predicted boxes")
    s.add_argument("--heatmap", required=True)
    s.add_argument("--boxes", required=True)
    s.add_argument("--gt", help="GT boxes; adds gt_iou (best match) to each record")
    s.add_argument("--metric", choices=[m.value for m in consistency.MetricKind], default="viou")
    s.add_argument("--lite", action="store_true")
    s.add_argument("--top-k", default="1500")
    s.add_argument("--gamma", type=float, default=0.5)
    s.add_argument("--strict", action="store_true", help="exit 4 if any box cannot be scored")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("iou", parents=[common], help="IoU between two box files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--mode", choices=("exact", "mc"), default="exact")
    s.add_argument("--samples", type=int, default=1_000_000)
    s.add_argument("--cross", action="store_true", help="all pairs instead of line-by-line")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_iou)

    s = sub.add_parser("loss", parents=[common], help="heatmap loss between prediction and label")
    s.add_argument("--pred", required=True)
    s.add_argument("--label", required=True)
    s.add_argument("--alpha", type=float, default=0.25)
    s.add_argument("--beta", type=float, default=2.0)
    s.add_argument("--lam", type=float, default=1.5)
    s.add_argument("--ld-literal", action="store_true", help="use the literal -(1-a)(1-x)^b log x negative branch")
    s.add_argument("--l-cls", type=float)
    s.add_argument("--l-loc", type=float)
    s.add_argument("--grad-out")
    s.add_argument("--out")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("sweep", parents=[common], help="metric scores along a one-parameter sweep")
    s.add_argument("--kind", choices=[k.value for k in experiments.SweepKind], required=True)
    s.add_argument("--lo", type=float, help="range start (degrees for angle, GT widths for offset, factor for aspect)")
    s.add_argument("--hi", type=float)
    s.add_argument("--steps", type=int, default=25)
    s.add_argument("--stride", type=float, default=1.0)
    s.add_argument("--gt-w", type=float, default=100.0)
    s.add_argument("--gt-h", type=float, default=50.0)
    s.add_argument("--gt-theta", type=float, default=0.0, help="degrees")
    s.add_argument("--ar-mode", choices=("height", "area"), default="height")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    def gen_args(s):
        s.add_argument("--n", type=int, default=1000)
        s.add_argument("--metric", choices=[m.value for m in consistency.MetricKind], default="viou")
        s.add_argument("--center-jitter", type=float, default=0.15)
        s.add_argument("--size-jitter", type=float, default=0.15)
        s.add_argument("--angle-jitter", type=float, default=7.5, help="degrees")
        s.add_argument("--stride", type=float, default=1.0)
        s.add_argument("--out", required=True)

    s = sub.add_parser("correlate", parents=[common], help="correlation of quality with exact IoU")
    gen_args(s)
    s.add_argument("--gamma", type=float, default=1.0, help="pixel sampling ratio")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("robustness", parents=[common], help="heatmap vs scalar perturbation study")
    gen_args(s)
    s.add_argument("--rows", default="0,0;0.1,0.2;0.2,0.3;0.3,0.4", help="';'-separated d1,d2 rows")
    s.add_argument("--no-baseline", action="store_true", help="skip the box-level arm")
    s.set_defaults(func=cmd_robustness)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("obq: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        args.func(args, argv)
    except CliError as exc:
        print(f"obq: error: {exc}", file=sys.stderr)
        return exc.code
    except heatmap.GridCapError as exc:
        print(f"obq: error: {exc}", file=sys.stderr)
        return EXIT_CAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
