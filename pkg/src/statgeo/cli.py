"""Command-line surface: toygen, geodesic, metric-grid, land, kl, exp, log.

Exit codes: 0 success, 1 usage/parse error, 2 numerical failure. Failures
emit machine-readable JSON on stderr. Every subcommand is deterministic
given its seed; --profile writes wall-time diagnostics to stderr so the
payload stays byte-reproducible. Batch evaluation fans out over a thread
pool sized by --threads (or the STATGEO_THREADS variable), with outputs
assembled in lattice order regardless of completion order.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, io
from . import decoder as dec_mod
from . import geodesic as geo
from . import land as land_mod
from . import metric as met
from .errors import NonConvergence, StatGeoError
from .families import McKl
from .metric import GridMetric, KlProbeMetric, PullbackMetric
from .rng import RngStream
from .toy import toy_circle_codes


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise _UsageError(f"cannot parse vector {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"cannot parse integers {text!r}") from exc


def _threads(args) -> int:
    env = os.environ.get("STATGEO_THREADS")
    if env is not None:
        return max(1, int(env))
    return max(1, args.threads)


def _energy_config(args) -> geo.EnergyConfig:
    return geo.EnergyConfig(
        n_disc=args.n_disc,
        segments=args.segments,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        gradient_mode=args.gradient_mode,
        jitter=args.jitter,
        objective=args.objective,
        mc_samples=args.mc_samples,
    )


def _add_optimizer_args(p):
    p.add_argument("--n-disc", type=int, default=200, help="energy discretization N")
    p.add_argument("--segments", type=int, default=4, help="spline segments")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.add_argument("--gradient-mode", choices=["fd", "analytic"], default="analytic")
    p.add_argument("--jitter", type=float, default=1e-4)
    p.add_argument("--objective", choices=["kl", "categorical"], default="kl")
    p.add_argument("--mc-samples", type=int, default=None,
                   help="sampled KL inside the optimizer (common random numbers)")


def _load_metric(args):
    if getattr(args, "grid", None):
        return GridMetric(io.load_grid(args.grid))
    dec = io.load_decoder(args.decoder)
    return PullbackMetric(dec)


def _print_json(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=1) + "\n")


def _write_csv(path, header_cols, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(io.CSV_HEADER + "\n")
        writer = csv.writer(fh)
        writer.writerow(header_cols)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# subcommands


def _cmd_toygen(args) -> int:
    codes = toy_circle_codes(args.n, args.noise, RngStream(args.seed))
    io.save_codes(codes, args.out)
    _print_json({"version": __version__, "n": args.n, "out": args.out})
    return 0


def _resolve_endpoints(args):
    if args.z0 is not None and args.z1 is not None:
        return _vector(args.z0), _vector(args.z1)
    if args.codes is not None and args.i0 is not None and args.i1 is not None:
        codes = io.load_codes(args.codes)
        return codes[args.i0], codes[args.i1]
    raise _UsageError("give either --z0/--z1 or --codes with --i0/--i1")


def _cmd_geodesic(args) -> int:
    timings = {}
    t0 = time.perf_counter()
    dec = io.load_decoder(args.decoder)
    z0, z1 = _resolve_endpoints(args)
    timings["load"] = time.perf_counter() - t0

    cfg = _energy_config(args)
    rng = RngStream(args.seed)
    t0 = time.perf_counter()
    result = geo.minimize_energy_detailed(z0, z1, dec, cfg, rng)
    timings["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ts = np.linspace(0.0, 1.0, args.samples + 1)
    zs, _ = result.curve.eval(ts)
    params = dec_mod.forward_stacked(dec, zs)
    fam = dec.family
    per_feature = params.reshape(len(ts), dec.feature_count, fam.param_dim)
    seg_kl = np.concatenate(
        [[0.0], fam.kl(per_feature[:-1], per_feature[1:]).sum(axis=-1)]
    )
    if args.out:
        header = (
            ["t"]
            + [f"z{i}" for i in range(dec.latent_dim)]
            + [f"eta{i}" for i in range(dec.param_dim)]
            + ["segment_kl"]
        )
        rows = np.column_stack([ts, zs, params, seg_kl])
        _write_csv(args.out, header, rows)
    timings["write"] = time.perf_counter() - t0

    length = geo.curve_length(result.curve, dec, cfg.n_disc)
    _print_json(
        {
            "version": __version__,
            "energy": result.energy,
            "length": length,
            "straight_energy": result.straight_energy,
            "iterations": result.iterations,
            "converged": result.converged,
        }
    )
    if args.profile:
        sys.stderr.write(
            json.dumps({"profile": timings, "iterations": result.iterations}) + "\n"
        )
    return 0


def _probe_validation_error(dec, z, m, radius=0.1, directions=8) -> float:
    angles = 2.0 * np.pi * np.arange(directions) / directions
    total = 0.0
    for ang in angles:
        delta = radius * np.array([np.cos(ang), np.sin(ang)])
        kl_val = met._decoded_kl(dec, z, z + delta, None)
        total += abs(kl_val - 0.5 * delta @ m @ delta)
    return total / directions


def _cmd_metric_grid(args) -> int:
    timings = {}
    t0 = time.perf_counter()
    dec = io.load_decoder(args.decoder)
    bounds = np.asarray(_vector(args.bounds)).reshape(-1, 2)
    resolution = _ints(args.resolution)
    timings["load"] = time.perf_counter() - t0

    if args.mode == "pullback":
        source = PullbackMetric(dec)
    else:
        source = KlProbeMetric(dec, eps=args.eps)

    t0 = time.perf_counter()
    grid = met.grid_build(source, bounds, resolution, args.sigma, threads=_threads(args))
    timings["evaluate"] = time.perf_counter() - t0

    extra = {}
    if args.mode == "kl-probe":
        t0 = time.perf_counter()
        threads = _threads(args)
        work = list(zip(grid.points, grid.tensors))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                errors = list(
                    pool.map(lambda pm: _probe_validation_error(dec, pm[0], pm[1]), work)
                )
        else:
            errors = [_probe_validation_error(dec, p, m) for p, m in work]
        extra["validation_error"] = [float(e) for e in errors]
        extra["epsilon"] = args.eps
        extra["clamped"] = int(source.clamp_count)
        timings["validate"] = time.perf_counter() - t0

    io.save_grid(grid, args.out, mode=args.mode, extra=extra)
    _print_json(
        {
            "version": __version__,
            "points": int(np.prod(resolution)),
            "mode": args.mode,
            "out": args.out,
        }
    )
    if args.profile:
        sys.stderr.write(json.dumps({"profile": timings}) + "\n")
    return 0


def _cmd_land(args) -> int:
    rng = RngStream(args.seed)
    metric = _load_metric(args)
    codes = io.load_codes(args.codes)
    cfg = land_mod.LandFitConfig(
        max_iters=args.max_iters, mc_samples=args.mc_samples, exp_steps=args.exp_steps
    )
    exit_code = 0
    try:
        model = land_mod.land_fit(codes, metric, cfg=cfg, rng=rng)
    except NonConvergence as exc:
        model = exc.last
        exit_code = 2
        sys.stderr.write(
            json.dumps({"error": "NonConvergence", "message": str(exc)}) + "\n"
        )
    metric_ref = args.grid if args.grid else args.decoder
    io.save_json(io.land_to_dict(model, metric_ref=metric_ref), args.out_model)

    if args.out_density:
        bounds = np.asarray(_vector(args.density_bounds)).reshape(-1, 2)
        res = _ints(args.density_resolution)
        axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        logpdf = land_mod.land_logpdf_batch(model, pts, rng.child(5))
        tensors = model.metric.eval_batch(pts)
        _, logdet = np.linalg.slogdet(tensors)
        _, logdet_mu = np.linalg.slogdet(model.metric.eval(model.mean))
        # density against Lebesgue via the relative volume element
        dens = np.exp(logpdf + 0.5 * (logdet - logdet_mu))
        header = [f"z{i}" for i in range(pts.shape[1])] + ["density"]
        _write_csv(args.out_density, header, np.column_stack([pts, dens]))

    _print_json(
        {
            "version": __version__,
            "mean": [float(v) for v in model.mean],
            "norm_const": float(model.norm_const),
            "converged": bool(model.converged),
            "out_model": args.out_model,
        }
    )
    return exit_code


def _cmd_kl(args) -> int:
    dec = io.load_decoder(args.decoder)
    z1, z2 = _vector(args.z1), _vector(args.z2)
    mc = None
    if args.mc_samples:
        if args.seed is None:
            raise _UsageError("--seed is required with --mc-samples")
        mc = McKl(RngStream(args.seed), args.mc_samples)
    kl_val = met._decoded_kl(dec, z1, z2, mc)
    m = met.pullback(dec, z1)
    delta = z2 - z1
    quad = float(0.5 * delta @ m @ delta)
    _print_json(
        {
            "version": __version__,
            "kl": kl_val,
            "quadratic_approx": quad,
            "gap": abs(kl_val - quad),
        }
    )
    return 0


def _cmd_exp(args) -> int:
    metric = _load_metric(args)
    z, v = _vector(args.z), _vector(args.v)
    endpoint, ts, path = geo.exp_map(
        metric, z, v, steps=args.steps, return_path=True
    )
    if args.out:
        header = ["t"] + [f"z{i}" for i in range(z.size)]
        _write_csv(args.out, header, np.column_stack([ts, path]))
    _print_json({"version": __version__, "endpoint": [float(x) for x in endpoint]})
    return 0


def _cmd_log(args) -> int:
    z, y = _vector(args.z), _vector(args.y)
    rng = RngStream(args.seed)
    if args.grid:
        target = GridMetric(io.load_grid(args.grid))
        cfg = _energy_config(args)
        v = geo.log_map(target, z, y, cfg, rng)
        length = float(np.linalg.norm(v))
    else:
        dec = io.load_decoder(args.decoder)
        cfg = _energy_config(args)
        v = geo.log_map(dec, z, y, cfg, rng)
        length = float(np.linalg.norm(v))
    _print_json(
        {"version": __version__, "v": [float(x) for x in v], "length": length}
    )
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="statgeo", description=__doc__)
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toygen", help="noisy circle latent codes")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_toygen)

    p = sub.add_parser("geodesic", help="shortest path between two latent points")
    p.add_argument("--decoder", required=True)
    p.add_argument("--z0")
    p.add_argument("--z1")
    p.add_argument("--codes")
    p.add_argument("--i0", type=int)
    p.add_argument("--i1", type=int)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--profile", action="store_true")
    _add_optimizer_args(p)
    p.set_defaults(fn=_cmd_geodesic)

    p = sub.add_parser("metric-grid", help="tensor lattice over a latent box")
    p.add_argument("--decoder", required=True)
    p.add_argument("--mode", choices=["pullback", "kl-probe"], default="pullback")
    p.add_argument("--bounds", required=True, help="x0,x1,y0,y1 per axis pairs")
    p.add_argument("--resolution", required=True, help="nx,ny")
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", action="store_true")
    p.set_defaults(fn=_cmd_metric_grid)

    p = sub.add_parser("land", help="fit a Riemannian normal density")
    p.add_argument("--decoder")
    p.add_argument("--grid")
    p.add_argument("--codes", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=40)
    p.add_argument("--mc-samples", type=int, default=256)
    p.add_argument("--exp-steps", type=int, default=20)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-density")
    p.add_argument("--density-bounds", default="-2,2,-2,2")
    p.add_argument("--density-resolution", default="40,40")
    p.set_defaults(fn=_cmd_land)

    p = sub.add_parser("kl", help="divergence and its quadratic approximation")
    p.add_argument("--decoder", required=True)
    p.add_argument("--z1", required=True)
    p.add_argument("--z2", required=True)
    p.add_argument("--mc-samples", type=int, default=None)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=_cmd_kl)

    p = sub.add_parser("exp", help="exponential map (geodesic shooting)")
    p.add_argument("--decoder")
    p.add_argument("--grid")
    p.add_argument("--z", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_exp)

    p = sub.add_parser("log", help="logarithmic map (shortest-path velocity)")
    p.add_argument("--decoder")
    p.add_argument("--grid")
    p.add_argument("--z", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_optimizer_args(p)
    p.set_defaults(fn=_cmd_log)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 1
    try:
        return args.fn(args)
    except _UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 1
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1
    except StatGeoError as exc:
        doc = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "t", None) is not None:
            doc["t"] = exc.t
        sys.stderr.write(json.dumps(doc) + "\n")
        return 2
    except np.linalg.LinAlgError as exc:
        sys.stderr.write(
            json.dumps({"error": "LinAlgError", "message": str(exc)}) + "\n"
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
