"""Command-line driver: run experiments, compare methods, sweep parameters
and run the verification suites.

    adp run     --experiment deconv1d --method maid --seed 1 --out runs/x
    adp compare --seed 1 --out runs/cmp
    adp sweep   --experiment motion2d --method tv_only --grid motion2d.alpha=0.3,0.6
    adp verify  --suite lemma3

Exit codes: 0 success, 1 failed verification, 2 configuration error,
3 numeric failure.
"""
from __future__ import annotations

import os

if "ADP_THREADS" in os.environ:  # must precede the first numpy import
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["ADP_THREADS"])

import argparse
import hashlib
import sys
import time
from importlib import resources

import numpy as np

from . import baselines, metrics_io, verify
from .hypergradient import NegativeCurvatureError
from .lower_solvers import SolveDiverged
from .maid import BacktrackingStalled, MAIDConfig, RunTrace, maid_run
from .problems import build_deconv1d, build_motion2d, build_semiblind2d, solve_lower_at

EXPERIMENTS = ("deconv1d", "motion2d", "semiblind2d")
METHODS = ("maid", "ift", "unrolled", "tv_only")


class ConfigError(Exception):
    pass


def _coerce(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def parse_config_text(text: str) -> dict:
    """Flat key=value file with optional [section] headers prefixing keys."""
    cfg = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        full = f"{section}.{key}" if section else key
        cfg[full] = _coerce(value)
    return cfg


def load_defaults() -> dict:
    text = resources.files("adp").joinpath("defaults.cfg").read_text(encoding="utf-8")
    return parse_config_text(text)


def resolve_config(config_path=None, overrides=(), **direct) -> dict:
    """defaults.cfg <- config file <- --set overrides <- direct CLI flags."""
    cfg = load_defaults()
    known = set(cfg)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                user = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        for key, value in user.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            cfg[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(value)
    for key, value in direct.items():
        if value is not None:
            cfg[key] = value
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}; choose from {EXPERIMENTS}")
    if cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}; choose from {METHODS}")
    return cfg


def write_resolved(cfg: dict, out_dir: str) -> None:
    lines = [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    with open(os.path.join(out_dir, "config_resolved"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def build_experiment(cfg: dict):
    name = cfg["experiment"]
    seed = cfg["seed"]
    if name == "deconv1d":
        upper = build_deconv1d(
            seed=seed,
            n=cfg["deconv1d.n"],
            num_pieces=cfg["deconv1d.num_pieces"],
            blur_sigma=cfg["deconv1d.blur_sigma"],
            noise_sigma=cfg["deconv1d.noise_sigma"],
            l1=cfg["deconv1d.l1"],
            l2=cfg["deconv1d.l2"],
            smoothing_nu=cfg["deconv1d.smoothing_nu"],
        )
        upper.mu_floor = cfg["deconv1d.mu_floor"]
    else:
        builder = build_motion2d if name == "motion2d" else build_semiblind2d
        kwargs = dict(
            image_path=cfg["image"] or None,
            seed=seed,
            size=(cfg["crop_h"], cfg["crop_w"]),
            alpha=cfg[f"{name}.alpha"],
            beta=cfg[f"{name}.beta"],
            nu=cfg[f"{name}.nu"],
            noise_sigma=cfg[f"{name}.noise_sigma"],
            kernel_size=cfg[f"{name}.kernel_size"],
        )
        if name == "semiblind2d":
            kwargs["gauss_sigma"] = cfg["semiblind2d.gauss_sigma"]
        upper = builder(**kwargs)
        upper.mu_floor = cfg[f"{name}.mu_floor"]
    per_exp = cfg.get(f"{name}.lower_max_iters", 0)
    upper.lower_max_iters = per_exp if per_exp > 0 else cfg["lower.max_iters"]
    return upper


def maid_config(cfg: dict) -> MAIDConfig:
    name = cfg["experiment"]
    eps0 = cfg.get(f"{name}.maid_eps0", 0) or cfg["maid.eps0"]
    alpha0 = cfg.get(f"{name}.maid_alpha0", 0) or cfg["maid.alpha0"]
    max_bt = cfg.get(f"{name}.maid_max_bt", 0) or cfg["maid.max_bt"]
    cg_max = cfg.get(f"{name}.maid_cg_max_iters", 0) or cfg["maid.cg_max_iters"]
    delta0 = cfg["maid.delta0"] if eps0 == cfg["maid.eps0"] else eps0
    return MAIDConfig(
        rho_up=cfg["maid.rho_up"],
        rho_down=cfg["maid.rho_down"],
        nu_up=cfg["maid.nu_up"],
        nu_down=cfg["maid.nu_down"],
        max_bt=max_bt,
        lam=cfg["maid.lam"],
        eps0=eps0,
        delta0=delta0,
        alpha0=alpha0,
        eps_stop=cfg["maid.eps_stop"],
        max_upper_iters=cfg["maid.max_upper_iters"],
        max_accuracy_rounds=cfg["maid.max_accuracy_rounds"],
        cg_max_iters=cg_max,
    )


def run_method(upper, method: str, cfg: dict):
    """Dispatch one optimization method; returns (b, x, trace)."""
    if method == "maid":
        return maid_run(upper, maid_config(cfg))
    if method == "ift":
        bc = baselines.BaselineConfig(
            method="ift",
            lower_iters=cfg["ift.lower_iters"],
            upper_iters=cfg["ift.upper_iters"],
            upper_step=cfg["ift.upper_step"],
            step_x=cfg["ift.step_x"],
            cg_tol=cfg["ift.cg_tol"],
            cg_max_iters=cfg["ift.cg_max_iters"],
        )
        return baselines.run_ift(upper, bc)
    if method == "unrolled":
        bc = baselines.BaselineConfig(
            method="unrolled",
            lower_iters=cfg["unrolled.lower_iters"],
            upper_iters=cfg["unrolled.upper_iters"],
            upper_step=cfg["unrolled.upper_step"],
            step_x=cfg["unrolled.step_x"],
        )
        return baselines.run_unrolled(upper, bc)
    if method == "tv_only":
        t0 = time.perf_counter()
        res = solve_lower_at(upper, upper.b0, eps=cfg["tv_only.eps"],
                             max_iters=cfg["tv_only.max_iters"])
        trace = RunTrace(method="tv_only")
        trace.append(0, upper.loss(res.x_tilde, upper.b0), res.grad_norm,
                     res.epsilon_achieved, 0.0, 0.0, res.iters, 0,
                     time.perf_counter() - t0)
        trace.final_loss = upper.loss(res.x_tilde, upper.b0)
        return upper.b0, res.x_tilde, trace
    raise ConfigError(f"unknown method {method!r}")


def _plot_1d_reconstruction(upper, x, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(upper.ground_truth, label="ground truth", lw=1.2)
    ax.plot(upper.y_delta, label="blurred + noisy", lw=0.8, alpha=0.7)
    ax.plot(x, label="reconstruction", lw=1.2)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_artifacts(upper, b, x, trace, out_dir: str) -> metrics_io.MetricReport:
    if x.ndim == 1:
        _plot_1d_reconstruction(upper, x, os.path.join(out_dir, "reconstruction.png"))
    else:
        metrics_io.save_png(x, os.path.join(out_dir, "reconstruction.png"))
    metrics_io.save_kernel_image(b, os.path.join(out_dir, "kernel.png"))
    metrics_io.save_kernel_image(np.abs(b.data - upper.b0.data),
                                 os.path.join(out_dir, "kernel_diff.png"))
    metrics_io.write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    report = metrics_io.metric_report(x, upper.ground_truth)
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"psnr_db = {report.psnr_db!r}\n")
        fh.write(f"ssim = {report.ssim!r}\n")
        fh.write(f"rel_l2_error = {report.rel_l2_error!r}\n")
        fh.write(f"final_loss = {trace.final_loss!r}\n")
    return report


def _sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def cmd_run(args) -> int:
    try:
        cfg = resolve_config(args.config, args.set or (), experiment=args.experiment,
                             method=args.method, seed=args.seed, out=args.out)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(cfg, out_dir)
    try:
        upper = build_experiment(cfg)
        b, x, trace = run_method(upper, cfg["method"], cfg)
    except (SolveDiverged, NegativeCurvatureError, BacktrackingStalled) as exc:
        trace_path = os.path.join(out_dir, "trace_failed.csv")
        if isinstance(exc, BacktrackingStalled):
            metrics_io.write_trace_csv(exc.trace, trace_path)
        else:
            metrics_io.write_trace_csv(RunTrace(), trace_path)
        print(f"numeric failure: {exc} (trace: {trace_path})", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    report = write_run_artifacts(upper, b, x, trace, out_dir)
    print(f"{cfg['experiment']}/{cfg['method']}: final loss {trace.final_loss:.6g}, "
          f"psnr {report.psnr_db:.2f} dB, ssim {report.ssim:.4f}, "
          f"rel L2 {report.rel_l2_error:.4f}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_compare(args) -> int:
    try:
        cfg = resolve_config(args.config, args.set or (), experiment="deconv1d",
                             seed=args.seed, out=args.out)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(cfg, out_dir)
    rows = []
    traces = []
    try:
        for method in ("ift", "unrolled", "maid"):
            upper = build_experiment(cfg)  # identical data and initialization
            t0 = time.perf_counter()
            b, x, trace = run_method(upper, method, cfg)
            wall = time.perf_counter() - t0
            traces.append(trace)
            rows.append({
                "method": method,
                "final_loss": trace.final_loss,
                "lower_iters": trace.lower_iters_cum[-1] if len(trace) else 0,
                "wall_s": wall,
                "rel_l2_error": metrics_io.rel_l2_error(x, upper.ground_truth),
                "b0_sha": _sha(upper.b0.data),
                "x0_sha": _sha(upper.x0),
            })
    except (SolveDiverged, NegativeCurvatureError, BacktrackingStalled) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    metrics_io.render_plots(traces, out_dir)
    summary = os.path.join(out_dir, "summary.csv")
    with open(summary, "w", encoding="utf-8") as fh:
        cols = ["method", "final_loss", "lower_iters", "wall_s", "rel_l2_error",
                "b0_sha", "x0_sha"]
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
    same_init = (len({r["b0_sha"] for r in rows}) == 1
                 and len({r["x0_sha"] for r in rows}) == 1)
    for row in rows:
        print(f"{row['method']:>9}: loss {row['final_loss']:.6g}  "
              f"lower iters {row['lower_iters']:>7}  wall {row['wall_s']:.1f}s  "
              f"rel L2 {row['rel_l2_error']:.4f}")
    print(f"identical initialization across methods: {same_init}")
    print(f"summary: {summary}")
    return 0


def cmd_sweep(args) -> int:
    try:
        cfg = resolve_config(args.config, args.set or (), experiment=args.experiment,
                             method=args.method, seed=args.seed, out=args.out)
        grids = []
        for item in args.grid or ():
            if "=" not in item:
                raise ConfigError(f"--grid expects key=v1,v2,..., got {item!r}")
            key, values = item.split("=", 1)
            key = key.strip()
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r} in --grid")
            grids.append((key, [_coerce(v) for v in values.split(",")]))
        if not grids:
            raise ConfigError("sweep needs at least one --grid key=v1,v2,...")
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(cfg, out_dir)

    combos = [{}]
    for key, values in grids:
        combos = [dict(c, **{key: v}) for c in combos for v in values]
    results = []
    try:
        for combo in combos:
            local = dict(cfg)
            local.update(combo)
            upper = build_experiment(local)
            b, x, trace = run_method(upper, local["method"], local)
            report = metrics_io.metric_report(x, upper.ground_truth)
            tag = ",".join(f"{k}={v}" for k, v in combo.items())
            results.append((tag, trace.final_loss, report))
            print(f"{tag}: loss {trace.final_loss:.6g}, psnr {report.psnr_db:.2f}, "
                  f"ssim {report.ssim:.4f}, rel L2 {report.rel_l2_error:.4f}")
    except (SolveDiverged, NegativeCurvatureError, BacktrackingStalled) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    with open(os.path.join(out_dir, "sweep_summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("combo,final_loss,psnr_db,ssim,rel_l2_error\n")
        for tag, loss, report in results:
            fh.write(f"\"{tag}\",{loss!r},{report.psnr_db!r},{report.ssim!r},"
                     f"{report.rel_l2_error!r}\n")
    return 0


def cmd_verify(args) -> int:
    try:
        results = verify.run_suites(args.suite or None, mutate=args.mutate)
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adp",
        description="Adaptive inexact bilevel optimization for learned deconvolution kernels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")

    p_run = sub.add_parser("run", help="run one experiment with one method")
    p_run.add_argument("--experiment", choices=EXPERIMENTS, default=None)
    p_run.add_argument("--method", choices=METHODS, default=None)
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run ift, unrolled and maid on deconv1d")
    common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="grid sweep over config keys")
    p_sweep.add_argument("--experiment", choices=EXPERIMENTS, default=None)
    p_sweep.add_argument("--method", choices=METHODS, default=None)
    p_sweep.add_argument("--grid", action="append", metavar="KEY=V1,V2,...")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ver = sub.add_parser("verify", help="run oracle/property suites")
    p_ver.add_argument("--suite", action="append", choices=sorted(verify.SUITES),
                       help="run only the named suite (repeatable)")
    p_ver.add_argument("--mutate", choices=["mixed_second_transpose"],
                       help="inject a sign error to exercise the fd suite (testing aid)")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
