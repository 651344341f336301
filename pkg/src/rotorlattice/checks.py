"""Check suites run by ``rotorlattice check``; each returns :class:`CheckReport` objects."""

from __future__ import annotations

import math

import numpy as np

from . import analysis as an
from .analysis import CheckReport
from .config import RunConfig
from .integrators import IntegratorSpec, ensemble
from .measure import PolynomialObservable
from .oracle import QuadraticObservable, variance_curve

SUITES = ("conservation", "balance", "decay", "nash", "liggett", "gap", "beta", "clt")
BETA_GRID = (0.0, 1e-3, 0.1, 0.5, 1.0)


def balance_pairs(lattice) -> list[tuple[str, str]]:
    """Fixed battery of 20 ``(f, g)`` pairs of degree at most two near the origin."""
    a = 0
    b = lattice.shift(0, 0, 1)
    c = lattice.shift(0, 0, 2)
    d = lattice.shift(0, lattice.dim - 1, 1) if lattice.dim > 1 else lattice.shift(0, 0, -1)
    xa, xb, xc, xd = (f"x{s}" for s in (a, b, c, d))
    return [
        (xa, xb),
        (xa, xc),
        (f"{xa}^2", f"{xb}^2"),
        (f"{xa}^2", f"{xc}^2"),
        (f"{xa}*{xb}", f"{xa}^2"),
        (xa, f"{xa}*{xb}"),
        (f"{xa} + {xb}", f"{xb}^2"),
        (f"{xa}^2 + {xb}", xc),
        (f"{xa}*{xb}", f"{xb}*{xc}"),
        (f"{xa}*{xc}", f"{xb}^2"),
        (f"{xa}^2 - {xb}^2", f"{xc}^2"),
        (xa, xd),
        (f"{xa}^2", f"{xd}^2"),
        (f"{xa}*{xd}", f"{xb}^2"),
        (xb, f"2*{xa} - {xc}"),
        (f"{xa}^2", f"{xa}*{xb} + {xc}"),
        (f"{xb}^2", f"{xa}*{xc}"),
        (f"{xa} + {xc}", f"{xb}*{xd}"),
        (f"{xa}^2 + {xb}^2", f"{xb}^2 + {xc}^2"),
        (xc, f"{xa}^2 + {xa}"),
    ]


def _report(cfg: RunConfig, name, claim, passed, measured, tolerances, flags=None) -> CheckReport:
    return CheckReport(name, claim, passed, measured, tolerances, cfg["run.seed"], cfg.hash, flags or [])


def _oracle_side(cfg: RunConfig) -> int:
    """Large torus for exponent fits under diagonal ``M``; the configured one otherwise."""
    return max(cfg["check.oracle_L"], cfg["lattice.L"]) if cfg.stencil().is_diagonal else cfg["lattice.L"]


def _step_flags(cfg: RunConfig, dt: float | None = None) -> list[str]:
    """Warn when the step is coarse against the fastest linear relaxation time ``1 / (N b^2)``."""
    dt = cfg["integrator.dt"] if dt is None else dt
    rate = cfg["lattice.N"] * cfg.stencil().center ** 2
    if dt * rate > 0.25:
        return [f"coarse step: dt * N * b^2 = {dt * rate:g} > 0.25; splitting bias may dominate"]
    return []


def check_conservation(cfg: RunConfig) -> list[CheckReport]:
    model = cfg.model()
    spec = cfg.spec(beta=0.0)
    flags = ["beta set to 0: the contraction does not conserve V"] if cfg["model.beta"] else []
    res = ensemble(cfg.measure(), cfg["run.ntraj"], cfg["run.T"], spec, [], cfg["run.seed"], model,
                   epochs=cfg["run.epochs"], backend=cfg.backend, threads=cfg.threads)
    steps = int(round(cfg["run.T"] / spec.dt))
    if spec.scheme == "split_exact":
        tol = 1e-12 if model.is_diagonal else 1e-8
        passed = res.max_rel_V_drift <= tol
    else:
        tol = None
        passed = None
        flags.append(f"{spec.scheme} does not conserve V; drift reported only")
    return [_report(cfg, "conservation", "V is conserved along every trajectory", passed,
                    {"max_rel_V_drift": res.max_rel_V_drift, "steps": steps, "scheme": spec.scheme},
                    {"max_rel_V_drift": tol}, flags)]


def check_balance(cfg: RunConfig) -> list[CheckReport]:
    measure = cfg.measure()
    pairs = balance_pairs(measure.model.lattice)
    times = cfg.floats("check.balance_times")
    res = an.balance_battery(pairs, times, measure, cfg["run.ntraj"], cfg["run.seed"], cfg.spec(beta=0.0),
                             cfg.backend, cfg.threads)
    out = []
    for t, rows in res.items():
        zs = [r.z for r in rows]
        frac = float(np.mean([abs(z) <= 3.0 for z in zs]))
        out.append(_report(cfg, f"balance_t{t:g}", "E[f P_t g] = E[g P_t f] for a battery of pairs",
                           frac >= 0.95,
                           {"t": t, "n_traj": cfg["run.ntraj"], "pass_fraction": frac, "z": zs,
                            "pairs": [f"{f} | {g}" for f, g in pairs]},
                           {"abs_z": 3.0, "pass_fraction": 0.95}, _step_flags(cfg)))
    return out


def check_decay(cfg: RunConfig) -> list[CheckReport]:
    N = cfg["lattice.N"]
    flags = ["beta set to 0 for the polynomial decay law"] if cfg["model.beta"] else []
    mu_big = cfg.measure(_oracle_side(cfg))
    lo, hi = an.fit_window(mu_big.model.lattice.side, mu_big.model.center)
    t = np.geomspace(lo, hi, 40)
    f_big = QuadraticObservable.from_polynomial(PolynomialObservable.var(0, 2), mu_big.model.n_sites)
    fit = an.fit_power_law(t, variance_curve(f_big, t, mu_big))
    oracle_ok = abs(fit.exponent + N / 2) <= 0.05

    mu = cfg.measure()
    f = QuadraticObservable.from_polynomial(PolynomialObservable.var(0, 2), mu.model.n_sites)
    ts = cfg.floats("check.decay_times")
    exact = variance_curve(f, ts, mu)
    mc, se = an.mc_variance_curve(mu, ts, cfg["run.ntraj"], cfg["run.seed"], cfg.spec(beta=0.0),
                                  backend=cfg.backend, threads=cfg.threads)
    flags += _step_flags(cfg)
    z = (mc - exact) / np.where(se > 0, se, np.inf)
    consistent = bool(np.all(np.abs(z) <= 3.0))
    try:
        mc_fit = an.fit_power_law(ts, mc)
        mc_ok = abs(mc_fit.exponent - fit.exponent) <= 0.3
        mc_exp = mc_fit.exponent
    except an.AnalysisError as exc:
        mc_ok, mc_exp = False, math.nan
        flags.append(f"MC fit failed: {exc}")
    return [_report(cfg, "decay", "Var(P_t x_0^2) decays like t^(-N/2)", oracle_ok and consistent and mc_ok,
                    {"oracle_fit": fit, "oracle_side": mu_big.model.lattice.side, "mc_times": ts,
                     "mc_var": mc, "mc_stderr": se, "oracle_var": exact, "mc_z": z,
                     "mc_consistent": consistent, "mc_exponent": mc_exp},
                    {"exponent": 0.05, "mc_exponent": 0.3, "abs_z": 3.0}, flags)]


def _nash_family(measure):
    fam = [("x0^2", "x0^2"), ("x0*x1", "x0*x1")]
    for ell in (2, 4, 8):
        if 2 * ell <= measure.model.lattice.side:
            fam.append((f"box{ell}", an.box_observable(measure, ell)))
    return fam


def check_nash(cfg: RunConfig) -> list[CheckReport]:
    L = cfg["lattice.L"]
    vals, details = [], {}
    for side in (L, 2 * L):
        mu = cfg.measure(side)
        terms, c2 = an.nash_check(_nash_family(mu), mu)
        vals.append(c2)
        details[f"L{side}"] = {t.label: t.ratio for t in terms}
    stable = abs(vals[1] / vals[0] - 1.0) <= 0.2
    return [_report(cfg, "nash", "empirical Nash constant, reported", bool(np.all(np.isfinite(vals)) and stable),
                    {"C2": vals, "ratios": details}, {"stability": 0.2})]


def check_liggett(cfg: RunConfig) -> list[CheckReport]:
    L = cfg["lattice.L"]
    vals, details = [], {}
    for side in (L, 2 * L):
        pts, c1, flags = an.liggett_check("x0^2", [0.0, 0.5, 1.0, 2.0, 4.0], cfg.measure(side))
        vals.append(c1)
        details[f"L{side}"] = [p.ratio for p in pts]
    stable = abs(vals[1] / vals[0] - 1.0) <= 0.2
    return [_report(cfg, "liggett", "empirical Liggett constant, reported",
                    bool(np.all(np.isfinite(vals)) and stable), {"C1": vals, "ratios": details},
                    {"stability": 0.2})]


def check_gap(cfg: RunConfig) -> list[CheckReport]:
    mu = cfg.measure(_oracle_side(cfg))
    side = mu.model.lattice.side
    ells = [e for e in (4, 8, 16, 32, 64) if 2 * e <= side]
    if len(ells) < 2:
        ells = [e for e in (1, 2, 3, 4) if 2 * e <= side]
    ratios, fit = an.no_gap_scan(ells, mu)
    return [_report(cfg, "gap", "Dirichlet/variance ratio of box functions tends to 0 like 1/ell",
                    abs(fit.exponent + 1.0) <= 0.02, {"ells": ells, "ratios": ratios, "slope": fit.exponent},
                    {"slope": 0.02})]


def check_beta(cfg: RunConfig) -> list[CheckReport]:
    N = cfg["lattice.N"]
    mu = cfg.measure(_oracle_side(cfg))
    if not mu.model.is_diagonal:
        return [_report(cfg, "beta", "decay class across beta", None, {}, {},
                        ["skipped: the scan needs diagonal M"])]
    pts = an.phase_transition_scan(BETA_GRID, cfg["check.beta_T"], mu)
    by = {p.beta: p for p in pts}
    ok0 = by[0.0].classification == "polynomial" and abs(by[0.0].power.exponent + N / 2) <= 0.1
    ok_exp = all(by[b].classification == "exponential" and abs(by[b].exponential.rate / (4 * b) - 1) <= 0.05
                 for b in (0.5, 1.0))
    mono = an.is_monotone(pts)
    return [_report(cfg, "beta", "polynomial decay at beta=0, exponential for large beta",
                    ok0 and ok_exp and mono,
                    {"points": [{"beta": p.beta, "class": p.classification, "power": p.power,
                                 "exponential": p.exponential, "power_share": p.power_share,
                                 "exp_share": p.exp_share} for p in pts],
                     "monotone": mono, "beta_c_bracket": list(an.bracket_beta_c(pts))},
                    {"exponent": 0.1, "rate_rel": 0.05, "share_margin": an.SHARE_MARGIN})]


def check_clt(cfg: RunConfig) -> list[CheckReport]:
    spec = IntegratorSpec(cfg["integrator.scheme"], cfg["check.clt_dt"], cfg["integrator.order"], 0.0)
    res = an.clt_stats("x0", cfg.floats("check.clt_T"), cfg["run.ntraj"], cfg["run.seed"], cfg.measure(), spec,
                       backend=cfg.backend, threads=cfg.threads)
    last = res.stats[-1]
    flat = all(abs(d) <= 3.0 * se for _, d, se in res.diffs)
    gauss = abs(last.skewness) <= 3 * last.skew_stderr and abs(last.excess_kurtosis) <= 3 * last.kurt_stderr
    return [_report(cfg, "clt", "S_T / sqrt(T) has flat variance and Gaussian moments", flat and gauss,
                    {"stats": [vars(s) for s in res.stats], "var_diffs": [list(d) for d in res.diffs]},
                    {"sigma": 3.0}, res.flags + _step_flags(cfg, spec.dt))]


RUNNERS = {
    "conservation": check_conservation,
    "balance": check_balance,
    "decay": check_decay,
    "nash": check_nash,
    "liggett": check_liggett,
    "gap": check_gap,
    "beta": check_beta,
    "clt": check_clt,
}


def run_suite(cfg: RunConfig, suite: str) -> list[CheckReport]:
    names = SUITES if suite == "all" else (suite,)
    out = []
    for name in names:
        out.extend(RUNNERS[name](cfg))
    return out
