"""Command-line front end: ``rotorlattice simulate|oracle|check|version``.

Exit codes: 0 success, 1 check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .analysis import to_json
from .checks import SUITES, run_suite
from .config import ConfigError, RunConfig
from .integrators import IntegratorError, ensemble
from .measure import PolynomialObservable, energy_polynomial
from .model import Configuration
from .oracle import HeatKernel, QuadraticObservable, constant_A, constant_A_limit, quadratic_curve

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
ORACLE_TASKS = ("heat", "quadratic", "constantA")


def fmt(x: float) -> str:
    """17 significant digits, '.' decimal, independent of locale."""
    return format(float(x), ".17g")


def _header(cfg: RunConfig) -> str:
    return f"# config_hash={cfg.hash} seed={cfg['run.seed']} version={__version__}\n"


def _write(cfg: RunConfig, name: str, text: str) -> str:
    out_dir = cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _observables(cfg: RunConfig, model) -> list[tuple[str, PolynomialObservable]]:
    out = []
    for item in filter(None, (s.strip() for s in cfg["run.observables"].split(";"))):
        try:
            poly = PolynomialObservable.parse(item)
        except ValueError as exc:
            raise ConfigError("run.observables", str(exc)) from None
        if poly.variables() and max(poly.variables()) >= model.n_sites:
            raise ConfigError("run.observables", f"{item!r} refers to a site outside the lattice")
        out.append((item, poly))
    return out


def cmd_simulate(cfg: RunConfig) -> int:
    model = cfg.model()
    obs = _observables(cfg, model)
    if cfg["run.start"] == "measure":
        start = cfg.measure()
    else:
        x0 = np.zeros(model.n_sites)
        x0[0] = 1.0
        start = Configuration(x0, model)
    res = ensemble(start, cfg["run.ntraj"], cfg["run.T"], cfg.spec(), obs, cfg["run.seed"], model,
                   epochs=cfg["run.epochs"], backend=cfg.backend, threads=cfg.threads)
    written = []
    if "csv" in cfg.formats:
        lines = [_header(cfg), "t,observable,mean,var,stderr\n"]
        for e, t in enumerate(res.times):
            for k, name in enumerate(res.names):
                lines.append(f"{fmt(t)},{name},{fmt(res.mean[e, k])},{fmt(res.var[e, k])},{fmt(res.stderr[e, k])}\n")
        written.append(_write(cfg, "simulate.csv", "".join(lines)))
    if "json" in cfg.formats:
        summary = {"config_hash": cfg.hash, "seed": cfg["run.seed"], "n_traj": res.n_traj,
                   "scheme": res.spec.scheme, "dt": res.spec.dt, "order": res.spec.order, "beta": res.spec.beta,
                   "epochs": len(res.times), "observables": res.names,
                   "max_rel_V_drift": res.max_rel_V_drift, "flags": res.flags}
        written.append(_write(cfg, "simulate.json", to_json(summary) + "\n"))
    for path in written:
        print(path)
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, task: str) -> int:
    rows = []
    if task == "constantA":
        b = cfg["model.b"]
        rows.append(("", "A", constant_A(b)))
        rows.append(("", "A_limit", constant_A_limit(b)))
    elif task == "heat":
        lat = cfg.lattice()
        t = cfg["oracle.t"]
        kern = HeatKernel(lat.dim, t, cfg["model.b"] ** 2, cfg["oracle.form"], lat.side).field(lat)
        rows.extend((t, str(site), v) for site, v in enumerate(kern))
    else:
        mu = cfg.measure()
        model = mu.model
        text = cfg["oracle.f"].strip()
        try:
            poly = energy_polynomial(model) if text == "V" else PolynomialObservable.parse(text)
            f = QuadraticObservable.from_polynomial(poly, model.n_sites)
        except ValueError as exc:
            raise ConfigError("oracle.f", str(exc)) from None
        times = cfg.floats("oracle.times")
        for t, g in zip(times, quadratic_curve(f, times, model, cfg["model.beta"])):
            rows.append((t, "mean", g.mean(mu)))
            rows.append((t, "var", g.variance(mu)))
    lines = [_header(cfg), "t,label,value\n"]
    lines.extend(f"{t if t == '' else fmt(t)},{label},{fmt(v)}\n" for t, label, v in rows)
    print(_write(cfg, f"oracle_{task}.csv", "".join(lines)))
    return EXIT_OK


def cmd_check(cfg: RunConfig, suite: str) -> int:
    reports = run_suite(cfg, suite)
    body = "[\n" + ",\n".join("  " + r.to_json() for r in reports) + "\n]\n"
    print(_write(cfg, f"check_{suite}.json", body))
    failed = False
    for r in reports:
        print(f"{r.status:6s} {r.name}")
        failed |= r.passed is False
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotorlattice", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run an ensemble and export epoch statistics")
    s.add_argument("config")
    o = sub.add_parser("oracle", help="evaluate a closed-form reference")
    o.add_argument("config")
    o.add_argument("--task", choices=ORACLE_TASKS, required=True)
    c = sub.add_parser("check", help="run a check suite")
    c.add_argument("config")
    c.add_argument("--suite", choices=SUITES + ("all",), default="all")
    sub.add_parser("version", help="print the package version")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        cfg = RunConfig.from_file(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.task)
        return cmd_check(cfg, args.suite)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegratorError as exc:
        print(f"config error: integrator: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
