"""Command-line front end: ``hypokinetic {rates,simulate,hierarchy,verify,sweep}``.

Exit codes: 0 success, 1 verification failure, 2 validation error,
3 runtime or stability error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import acceptance, rates, uq
from .config import Config, ConfigError, load_config
from .operators import CoercivityError
from .solver import Scenario, StabilityError, certify, fit_decay_rate, integrate, measure_constants, slowest_decay

log = logging.getLogger("hypokinetic")

EXIT_OK, EXIT_VERIFY, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
THREADS_ENV = "HYPOKINETIC_THREADS"


class UsageError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _parse_list(text: str | None, conv=float) -> list:
    if text is None:
        return []
    try:
        return [conv(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    return max(1, min(cap, n_tasks))


def _load(args) -> tuple[Config, Scenario]:
    cfg = load_config(args.config)
    if getattr(args, "scaling", None):
        cfg.override("scaling", "scaling", args.scaling)
    kns = _parse_list(getattr(args, "kn", None))
    if len(kns) > 1:
        raise UsageError("this subcommand takes a single --kn value; use `sweep` for lists")
    if kns:
        cfg.override("scaling", "kn", kns[0])
    if getattr(args, "lmax", None) is not None:
        cfg.override("uq", "lmax", args.lmax)
    return cfg, cfg.validate()


def _out_dir(args, cfg: Config) -> Path:
    return Path(args.out if args.out else cfg["output"]["dir"])


# ---------------------------------------------------------------------------
# rates


RATE_COLUMNS = [
    "kn", "scaling", "alpha_kn", "beta_kn", "gamma_kn", "eps0", "lambda_lower", "branch",
    "lambda_parabolic", "eps0_parabolic", "lambda_highfield", "eps0_highfield", "highfield_branch",
    "lambda_numeric", "eps_star", "c_eps",
]  # fmt: skip


def rate_rows(constants: rates.CoercivityConstants | None, kns, scaling: str, acd=None) -> list[dict]:
    rows = []
    for kn in kns:
        if acd is not None:
            a, c, d = acd
            scaled = (math.nan, math.nan, math.nan)
        else:
            sc = rates.rescale(constants, kn, scaling)
            a, c, d = sc.constants.acd
            scaled = (sc.alpha_kn, sc.beta_kn, sc.gamma_kn)
        lp, ep = rates.lower_bound_parabolic(a, c, d)
        lh, eh, br = rates.lower_bound_highfield(a, c, d)
        lam_num, eps_star = rates.lambda_numeric(a, c, d)
        if lp >= lh:
            lam, eps0, branch = lp, ep, "parabolic_bound"
        else:
            lam, eps0, branch = lh, eh, br
        rows.append(
            dict(
                kn=kn, scaling=scaling, alpha_kn=scaled[0], beta_kn=scaled[1], gamma_kn=scaled[2],
                eps0=eps0, lambda_lower=lam, branch=branch, lambda_parabolic=lp, eps0_parabolic=ep,
                lambda_highfield=lh, eps0_highfield=eh, highfield_branch=br, lambda_numeric=lam_num,
                eps_star=eps_star, c_eps=rates.c_const(eps0),
            )  # fmt: skip
        )
    return rows


def cmd_rates(args) -> int:
    triple = [args.alpha, args.beta, args.gamma]
    acd_in = [args.a, args.c, args.d]
    scaling = args.scaling or "kinetic"
    kns = _parse_list(args.kn) or [1.0]
    acd = None
    if any(v is not None for v in triple):
        if any(v is None for v in triple):
            raise UsageError("--alpha, --beta and --gamma must be given together")
        if not all(math.isfinite(v) and v > 0 for v in triple):
            raise UsageError("--alpha, --beta and --gamma must be positive")
        constants = rates.CoercivityConstants(*triple)
    elif any(v is not None for v in acd_in):
        if any(v is None for v in acd_in):
            raise UsageError("--a, --c and --d must be given together")
        if not all(math.isfinite(v) and v > 0 for v in acd_in):
            raise UsageError("--a, --c and --d must be positive")
        if any(kn != 1 for kn in kns):
            raise UsageError("--a/--c/--d describe an already scaled problem; --kn must be 1")
        constants, acd = None, tuple(acd_in)
    elif args.config:
        _, scen = _load(argparse.Namespace(config=args.config, scaling=None, kn=None, lmax=None))
        system = scen.system()
        constants = measure_constants(system.T, system.L)
        print(f"measured alpha = {constants.alpha:.10g}, beta = {constants.beta:.10g}, gamma = {constants.gamma:.10g}")
    else:
        raise UsageError("missing --alpha (give --alpha/--beta/--gamma, --a/--c/--d or --config)")
    if scaling == "kinetic" and any(kn != 1 for kn in kns):
        raise UsageError("the kinetic scaling has kn = 1; pass --scaling parabolic or highfield")
    for kn in kns:
        if not 0 < kn <= 1:
            raise UsageError(f"kn must lie in (0, 1], got {kn}")
    rows = rate_rows(constants, kns, scaling, acd)
    print(f"{'kn':>8} {'scaling':>10} {'eps0':>10} {'lambda_lower':>13} {'lambda_num':>11} {'C(eps0)':>9}  branch")
    for r in rows:
        print(
            f"{r['kn']:>8.3g} {r['scaling']:>10} {r['eps0']:>10.6g} {r['lambda_lower']:>13.6g} "
            f"{r['lambda_numeric']:>11.6g} {r['c_eps']:>9.6g}  {r['branch']}"
        )
        print(
            f"{'':>8} {'':>10} parabolic bound {r['lambda_parabolic']:.6g} (eps0 {r['eps0_parabolic']:.6g}), "
            f"high-field bound {r['lambda_highfield']:.6g} (eps0 {r['eps0_highfield']:.6g}, {r['highfield_branch']})"
        )
    if args.out:
        path = Path(args.out) / "rates.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RATE_COLUMNS)
            for r in rows:
                w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in RATE_COLUMNS])
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / sweep


def run_simulation(scen: Scenario, out_dir: str | Path, fit_window: float = 0.5) -> dict:
    """Integrate one scenario and write ``norms.csv`` and ``summary.json`` to ``out_dir``."""
    out_dir = Path(out_dir)
    system = scen.system()
    constants, plan = certify(system)
    dt = scen.time_step()
    traj = integrate(system, scen.initial_field(), dt, scen.t_end, plan.eps0, save_every=scen.save_every)
    traj.write_csv(out_dir / "norms.csv")
    fit = fit_decay_rate(traj.times, traj.norms, fit_window, floor=acceptance.FIT_FLOOR)
    envelope = plan.c_eps * np.exp(-(plan.lambda_lower - 0.01) * traj.times) * traj.norms[0]
    summary = dict(
        model=scen.model,
        scaling=scen.scaling,
        kn=scen.kn,
        dt=dt,
        n_steps=int(round(scen.t_end / dt)),
        constants=asdict(constants),
        rate_plan=asdict(plan),
        fitted_rate=fit,
        fit_window=fit_window,
        fitted_rate_ok=bool(fit >= plan.lambda_lower - 0.01),
        envelope_ok=bool(np.all(traj.norms <= envelope * (1 + 1e-12))),
        slowest_decay=slowest_decay(system),
        max_entropy_increase=traj.max_entropy_increase,
        mass_drift=float(np.max(np.abs(traj.masses - traj.masses[0]))),
    )
    _write_json(out_dir / "summary.json", summary)
    return summary


def cmd_simulate(args) -> int:
    cfg, scen = _load(args)
    out = _out_dir(args, cfg)
    s = run_simulation(scen, out, cfg["output"]["fit_window"])
    print(
        f"{scen.model} {scen.scaling} Kn={scen.kn:g}: lambda_lower = {s['rate_plan']['lambda_lower']:.6g}, "
        f"fitted rate = {s['fitted_rate']:.6g}, mass drift = {s['mass_drift']:.2e}"
    )
    print(f"wrote {out / 'norms.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def _sweep_task(task):
    scen, out_dir, window = task
    try:
        return run_simulation(scen, out_dir, window), None
    except (StabilityError, CoercivityError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    base = cfg.validate()
    kns = _parse_list(args.kn) or [cfg["scaling"]["kn"]]
    scalings = _parse_list(args.scaling, str) or [cfg["scaling"]["scaling"]]
    out = _out_dir(args, cfg)
    tasks = []
    for scaling in scalings:
        for kn in kns:
            try:
                scen = replace(base, scaling=scaling, kn=kn)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            tasks.append((scen, out / f"{scaling}_kn{kn:g}", cfg["output"]["fit_window"]))
    workers = worker_count(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    cols = ["scaling", "kn", "lambda_lower", "lambda_numeric", "eps0", "branch", "fitted_rate", "mass_drift"]
    out.mkdir(parents=True, exist_ok=True)
    failed = False
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for (scen, _, _), (s, err) in zip(tasks, results):
            if err:
                failed = True
                print(f"{scen.scaling} Kn={scen.kn:g}: {err}", file=sys.stderr)
                continue
            p = s["rate_plan"]
            w.writerow(
                [scen.scaling, _fmt(scen.kn), _fmt(p["lambda_lower"]), _fmt(p["lambda_numeric"]), _fmt(p["eps0"]),
                 p["branch"], _fmt(s["fitted_rate"]), _fmt(s["mass_drift"])]
            )  # fmt: skip
            print(f"{scen.scaling:>10} Kn={scen.kn:<8g} lambda_lower={p['lambda_lower']:.5g} fitted={s['fitted_rate']:.5g}")
    print(f"wrote {out / 'sweep.csv'} ({len(tasks)} scenarios, {workers} worker(s))")
    return EXIT_RUNTIME if failed else EXIT_OK


# ---------------------------------------------------------------------------
# hierarchy


def cmd_hierarchy(args) -> int:
    cfg, scen = _load(args)
    lmax = cfg["uq"]["lmax"]
    H = cfg["initial"]["h"]
    sigma = scen.sigma
    out = _out_dir(args, cfg)
    hier = uq.solve_hierarchy(scen, sigma, lmax, scen.z, H=H)
    bc, _, plan = uq.bound_constants(scen, sigma, scen.z, H)
    series = uq.bound_series(hier.times, lmax, bc)
    uq.write_hierarchy_csv(out / "hierarchy.csv", hier, series)
    with (out / "radius.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lmax", "radius_proxy"])
        for m in range(5, lmax + 1):
            proxy = min(uq.estimate_radius(hier.norms[i, : m + 1], m) for i in range(1, len(hier.times)))
            w.writerow([m, _fmt(proxy)])
    viol = uq.count_violations(hier, series)
    print(
        f"{sigma.kind} sigma, {scen.scaling} Kn={scen.kn:g}, lmax={lmax}, H={H:g}: "
        f"lambda_z = {bc.lambda_z:.6g}, eps_z = {bc.eps_z:.6g}; bound violations: {viol}"
    )
    print(f"wrote {out / 'hierarchy.csv'} and {out / 'radius.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    cfg, scen = _load(args)
    sigma = scen.sigma
    sigmas = [acceptance.affine_sigma(), acceptance.analytic_sigma()]
    if cfg["sigma"]["kind"] != "constant":
        sigmas = [sigma if s.kind == sigma.kind else s for s in sigmas]
    results = acceptance.run_all(
        scen,
        sigmas=sigmas,
        H=cfg["initial"]["h"],
        collocation_nodes=cfg["uq"]["collocation_nodes"],
        report=lambda r: print(r.line(), flush=True),
    )
    failed = [r for r in results if r.passed is False]
    print(f"{len(results) - len(failed)} of {len(results)} criteria without failure")
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypokinetic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, lmax=False):
        p.add_argument("--config", metavar="PATH", help="INI scenario file (defaults apply when omitted)")
        p.add_argument("--out", metavar="DIR", help="output directory (default: [output] dir)")
        p.add_argument("--kn", metavar="LIST", help="Knudsen number(s), comma-separated")
        p.add_argument("--scaling", metavar="NAME", help="kinetic, parabolic or highfield")
        if lmax:
            p.add_argument("--lmax", type=int, metavar="N", help="highest z-derivative order")

    p = sub.add_parser("rates", help="decay-rate certificates from (alpha, beta, gamma)")
    common(p)
    for name in ("alpha", "beta", "gamma"):
        p.add_argument(f"--{name}", type=float)
    for name in ("a", "c", "d"):
        p.add_argument(f"--{name}", type=float, help="scaled constant (alternative to alpha/beta/gamma)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("simulate", help="integrate one scenario; writes norms.csv")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hierarchy", help="z-derivative hierarchy; writes hierarchy.csv and radius.csv")
    common(p, lmax=True)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("verify", help="run the acceptance checks on a scenario")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="simulate over lists of Kn and scalings in parallel")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hypokinetic: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as exc:
        print(f"hypokinetic: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StabilityError as exc:
        print(f"hypokinetic: stability error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CoercivityError, FloatingPointError, ArithmeticError) as exc:
        print(f"hypokinetic: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"hypokinetic: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
