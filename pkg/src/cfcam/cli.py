"""Command line entry point: explain, evaluate, robustness, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every output file
carries the resolved run configuration: JSON files embed a "config" object,
CSV/SVG files start with a `# config:` comment, and binary outputs get a
run_config.json sidecar. Log level comes from the CFCAM_LOG env var.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bundle import discover_bundles, open_bundle
from .cfcam import CfCamParams
from .clustering import ClusteringParams
from .errors import CfcamError
from .inference import forward_probs
from .methods import (ALL_METHODS, CF_CAM, GRADIENT_METHODS,
                      compute_heatmap_timed, heatmap_at_image_size)
from .metrics import (EvalReport, auc, deletion_curve, insertion_curve,
                      top_fraction_mask)
from .robustness import DEFAULT_LEVELS, NoiseSpec, robustness_sweep
from .tensor_core import save_array_file
from .viz import save_overlay_png, svg_line_plot

log = logging.getLogger("cfcam")

INSERTION_BLUR_SIGMA = 10.0


class UsageError(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfcam",
        description="Generate and evaluate CF-CAM saliency maps from "
                    "exported explain bundles.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p1", type=float, default=75.0,
                        help="dominant-channel L2 percentile (default 75)")
    common.add_argument("--p2", type=float, default=10.0,
                        help="epsilon percentile of pairwise distances (default 10)")
    common.add_argument("--sigma", type=float, default=5.0,
                        help="cross-channel Gaussian filter sigma (default 5.0)")
    common.add_argument("--sigma-r", type=float, default=0.1,
                        help="bilateral range parameter; accepted for config "
                             "compatibility, unused by the Gaussian filter path")
    common.add_argument("--single-softmax", action="store_true",
                        help="skip the first softmax stage of the weighting")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output directory")

    p_explain = sub.add_parser("explain", parents=[common],
                               help="write heatmap artifacts for one bundle")
    p_explain.add_argument("--bundle", required=True)
    p_explain.add_argument("--method", required=True,
                           help=f"one of: {', '.join(ALL_METHODS)}")
    p_explain.set_defaults(func=cmd_explain)

    eval_common = argparse.ArgumentParser(add_help=False, parents=[common])
    eval_common.add_argument("--bundles", required=True,
                             help="directory of bundle directories")
    eval_common.add_argument("--steps", type=int, default=50,
                             help="deletion/insertion curve steps (default 50)")
    eval_common.add_argument("--topk", type=float, default=50.0,
                             help="AD/AI keep-top-K%% of salient pixels (default 50)")
    eval_common.add_argument("--ad-mask", choices=("binary", "soft"),
                             default="binary")
    eval_common.add_argument("--normalize-curves", action="store_true",
                             help="divide curves by the unperturbed endpoint")
    eval_common.add_argument("--jobs", type=int, default=1)
    eval_common.add_argument("--dump-partition", action="store_true",
                             help="write the CF-CAM channel partition per bundle")

    p_eval = sub.add_parser("evaluate", parents=[eval_common],
                            help="faithfulness metrics over a bundle set")
    p_eval.add_argument("--method", required=True,
                        help="comma-separated method names")
    p_eval.set_defaults(func=cmd_evaluate)

    p_rob = sub.add_parser("robustness", parents=[common],
                           help="gradient-noise robustness sweep")
    p_rob.add_argument("--bundles", required=True)
    p_rob.add_argument("--method", default=",".join(GRADIENT_METHODS),
                       help="comma-separated gradient-based methods")
    p_rob.add_argument("--sigmas", default=",".join(
        str(int(s)) for s in DEFAULT_LEVELS))
    p_rob.add_argument("--trials", type=int, default=5)
    p_rob.add_argument("--noise-mode", choices=("relative", "absolute"),
                       default="relative")
    p_rob.add_argument("--jobs", type=int, default=1)
    p_rob.set_defaults(func=cmd_robustness)

    p_abl = sub.add_parser("ablate", parents=[eval_common],
                           help="CF-CAM ablation arms vs. the default")
    p_abl.add_argument("--arm", required=True, choices=("no-l2", "kmeans"))
    p_abl.add_argument("--k", type=int, default=None,
                       help="K-Means cluster count (default: DBSCAN's count)")
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("CFCAM_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CfcamError as exc:
        print(f"cfcam: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cfcam: {exc}", file=sys.stderr)
        return 1


def _parse_methods(raw, allowed=ALL_METHODS):
    methods = [m.strip() for m in raw.split(",") if m.strip()]
    if not methods:
        raise UsageError("no method given")
    for m in methods:
        if m not in allowed:
            raise UsageError(f"unknown method {m!r} "
                             f"(expected one of: {', '.join(allowed)})")
    return methods


def _cf_params(args):
    return CfCamParams(sigma_filter=args.sigma,
                       clustering=ClusteringParams(p1=args.p1, p2=args.p2),
                       single_softmax=args.single_softmax)


def _resolved_config(args, command):
    # out/jobs never influence results; keeping them out makes reruns into
    # different directories byte-identical
    skip = {"func", "command", "out", "jobs"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg["command"] = command
    return cfg


def _atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, payload):
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows, config):
    lines = ["# config: " + json.dumps(config, sort_keys=True)]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _open_bundle_set(root):
    dirs = discover_bundles(root)
    if not dirs:
        raise CfcamError(f"no bundles found under {root}")
    return dirs


# ---------------------------------------------------------------------------
# explain


def cmd_explain(args):
    methods = _parse_methods(args.method)
    if len(methods) != 1:
        raise UsageError("explain takes exactly one method")
    method = methods[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _resolved_config(args, "explain")
    bundle = open_bundle(args.bundle)
    params = _cf_params(args)
    _warmup(bundle, [method], params)
    heatmap, details = compute_heatmap_timed(method, bundle, params=params,
                                             seed=args.seed)
    save_array_file(out / "heatmap.npy", heatmap)
    save_overlay_png(out / "overlay.png", bundle.pixels,
                     heatmap_at_image_size(heatmap, bundle))
    if method == CF_CAM:
        payload = details["partition"].to_dict()
        payload["config"] = config
        _write_json(out / "partition.json", payload)
    _write_json(out / "timing.json", {
        "method": method, "bundle": bundle.bundle_id,
        "explain_ms": details["explain_ms"], "config": config})
    _write_json(out / "run_config.json", {"config": config})
    log.info("explain %s on %s -> %s", method, bundle.bundle_id, out)
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _warmup(bundle, methods, params):
    """Untimed first pass so JIT compilation/cache loads stay out of T_infer."""
    from .methods import compute_heatmap
    for method in methods:
        compute_heatmap(method, bundle, params=params)


def _evaluate_bundle(bundle, method, args, params):
    """Metrics for one (bundle, method) pair: AD/AI inputs, AUCs, timing."""
    heatmap, details = compute_heatmap_timed(method, bundle, params=params,
                                             seed=args.seed)
    up = heatmap_at_image_size(heatmap, bundle)
    image = bundle.image
    cls = bundle.class_index
    y = forward_probs(bundle.graphs.full, image, cls)
    if args.ad_mask == "binary":
        keep = top_fraction_mask(up, args.topk / 100.0)
        masked = image.copy()
        masked[~keep] = 0.0
    else:
        masked = image * up[:, :, None].astype(image.dtype)
    o = forward_probs(bundle.graphs.full, masked, cls)
    del_curve = deletion_curve(bundle.graphs.full, image, up, args.steps, cls)
    ins_curve = insertion_curve(bundle.graphs.full, image, up, args.steps, cls,
                                blur_sigma=INSERTION_BLUR_SIGMA)
    if args.normalize_curves:
        del_curve = del_curve.normalized(0)
        ins_curve = ins_curve.normalized(-1)
    return {
        "bundle": bundle.bundle_id,
        "full_prob": y,
        "masked_prob": o,
        "drop": max(0.0, y - o) / y,
        "increase": 1.0 if o > y else 0.0,
        "auc_del": auc(del_curve),
        "auc_ins": auc(ins_curve),
        "explain_ms": details["explain_ms"],
        "curves": {"deletion": del_curve, "insertion": ins_curve},
        "partition": details.get("partition"),
    }


def _run_over_bundles(bundle_dirs, worker, jobs):
    """Apply worker(dir) across bundles; returns ({dir: result}, {dir: error})."""
    results, failures = {}, {}

    def run(d):
        try:
            return d, worker(d), None
        except CfcamError as exc:
            return d, None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, bundle_dirs))
    else:
        outcomes = [run(d) for d in bundle_dirs]
    for d, res, err in outcomes:
        if err is None:
            results[d] = res
        else:
            failures[Path(d).name] = err
            log.warning("bundle %s failed: %s", d, err)
    return results, failures


def cmd_evaluate(args):
    methods = _parse_methods(args.method)
    out = Path(args.out)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    config = _resolved_config(args, "evaluate")
    params = _cf_params(args)
    bundle_dirs = _open_bundle_set(args.bundles)
    try:
        _warmup(open_bundle(bundle_dirs[0]), methods, params)
    except CfcamError:
        pass  # a broken first bundle is reported by the main loop

    def worker(d):
        bundle = open_bundle(d)
        rows = {}
        for method in methods:
            rows[method] = _evaluate_bundle(bundle, method, args, params)
        return rows

    results, failures = _run_over_bundles(bundle_dirs, worker, args.jobs)
    if not results:
        raise CfcamError(f"every bundle failed: {failures}")

    per_method = {m: [] for m in methods}
    for d in sorted(results):
        for method in methods:
            row = results[d][method]
            per_method[method].append(row)
            for kind, curve in row["curves"].items():
                name = f"{row['bundle']}__{method}__{kind}.csv"
                _write_csv(out / "curves" / name,
                           ["fraction", "probability"],
                           list(zip(curve.fractions.tolist(),
                                    curve.probs.tolist())), config)
            if args.dump_partition and row["partition"] is not None:
                _write_json(out / f"partition_{row['bundle']}.json",
                            {**row["partition"].to_dict(), "config": config})

    metric_rows = []
    timing_rows = []
    report = {"config": config, "failures": failures, "methods": {}}
    for method in methods:
        method_report = EvalReport(method=method, per_image=per_method[method])
        agg = method_report.aggregate()
        report["methods"][method] = method_report.to_dict()
        metric_rows.append((method, agg["ad_percent"], agg["ai_percent"],
                            agg["auc_del"], agg["auc_ins"]))
        timing_rows.append((method, agg["t_infer_ms"]))

    _write_csv(out / "metrics.csv",
               ["method", "ad_percent", "ai_percent", "auc_del", "auc_ins"],
               metric_rows, config)
    _write_csv(out / "timing.csv", ["method", "t_infer_ms"], timing_rows, config)
    _write_json(out / "report.json", report)
    _write_json(out / "run_config.json", {"config": config})
    return 0


# ---------------------------------------------------------------------------
# robustness


def cmd_robustness(args):
    methods = _parse_methods(args.method)
    rejected = [m for m in methods if m not in GRADIENT_METHODS]
    if rejected:
        raise UsageError(
            f"{', '.join(rejected)}: not gradient-based; the robustness sweep "
            f"accepts only {', '.join(GRADIENT_METHODS)}")
    try:
        levels = tuple(float(s) for s in args.sigmas.split(",") if s.strip())
    except ValueError as exc:
        raise UsageError(f"bad --sigmas list: {exc}")
    if not levels:
        raise UsageError("empty --sigmas list")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _resolved_config(args, "robustness")
    spec = NoiseSpec(levels=levels, mode=args.noise_mode,
                     trials=args.trials, seed=args.seed)
    params = _cf_params(args)
    bundle_dirs = _open_bundle_set(args.bundles)
    bundles = [open_bundle(d) for d in bundle_dirs]
    curves = robustness_sweep(bundles, methods, spec, params, jobs=args.jobs)

    _write_csv(out / "robustness.csv",
               ["method", "sigma", "mean_ssim", "mean_mse"],
               curves.rows(), config)
    panels = []
    for metric, label in (("mean_ssim", "SSIM"), ("mean_mse", "MSE")):
        series = [{"label": m, "x": list(curves.levels),
                   "y": getattr(curves, metric)[m]} for m in sorted(methods)]
        panels.append({"title": f"Average {label} vs. noise level",
                       "xlabel": "noise sigma", "ylabel": label,
                       "series": series})
    svg_line_plot(out / "robustness.svg", panels,
                  title="Gradient-noise robustness",
                  comment="config: " + json.dumps(config, sort_keys=True))
    _write_json(out / "run_config.json", {"config": config})
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args):
    out = Path(args.out)
    (out / "partitions").mkdir(parents=True, exist_ok=True)
    config = _resolved_config(args, "ablate")
    params = _cf_params(args)
    bundle_dirs = _open_bundle_set(args.bundles)
    arms = {"default": None, args.arm: args.arm}
    try:
        _warmup(open_bundle(bundle_dirs[0]), [CF_CAM], params)
    except CfcamError:
        pass

    def worker(d):
        bundle = open_bundle(d)
        rows = {}
        for label, arm in arms.items():
            heatmap, details = compute_heatmap_timed(
                CF_CAM, bundle, params=params, ablation_arm=arm,
                kmeans_k=args.k, seed=args.seed)
            up = heatmap_at_image_size(heatmap, bundle)
            image = bundle.image
            cls = bundle.class_index
            y = forward_probs(bundle.graphs.full, image, cls)
            keep = top_fraction_mask(up, args.topk / 100.0)
            masked = image.copy()
            masked[~keep] = 0.0
            o = forward_probs(bundle.graphs.full, masked, cls)
            rows[label] = {
                "bundle": bundle.bundle_id,
                "drop": max(0.0, y - o) / y,
                "increase": 1.0 if o > y else 0.0,
                "explain_ms": details["explain_ms"],
                "partition": details["partition"],
            }
        return rows

    results, failures = _run_over_bundles(bundle_dirs, worker, args.jobs)
    if not results:
        raise CfcamError(f"every bundle failed: {failures}")

    table = {}
    for label in arms:
        rows = [results[d][label] for d in sorted(results)]
        table[label] = {
            "ad_percent": 100.0 * float(np.mean([r["drop"] for r in rows])),
            "ai_percent": 100.0 * float(np.mean([r["increase"] for r in rows])),
            "t_infer_ms": float(np.mean([r["explain_ms"] for r in rows])),
        }
        for r in rows:
            _write_json(out / "partitions" / f"{r['bundle']}__{label}.json",
                        {**r["partition"].to_dict(), "config": config})
    variant = args.arm
    report = {
        "config": config,
        "failures": failures,
        "rows": {variant: table[variant], "default": table["default"]},
        "delta_vs_default": {
            k: table[variant][k] - table["default"][k]
            for k in ("ad_percent", "ai_percent", "t_infer_ms")},
    }
    _write_json(out / "ablation_report.json", report)
    _write_csv(out / "ablation.csv",
               ["variant", "ad_percent", "ai_percent"],
               [(variant, table[variant]["ad_percent"], table[variant]["ai_percent"]),
                ("default", table["default"]["ad_percent"],
                 table["default"]["ai_percent"])],
               config)
    _write_json(out / "run_config.json", {"config": config})
    return 0


if __name__ == "__main__":
    sys.exit(main())
