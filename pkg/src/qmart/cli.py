"""Command-line front end: ``qmart {calibrate,price,figure1,bohm,check}``.

Every command computes all of its artifacts in memory first and then
writes them atomically (temporary file plus rename), so a failing run
leaves no partial files behind. Floats are written with 17 significant
digits; reruns of the same scenario are byte-identical.

Exit codes: 0 success, 1 invalid scenario or guard violation, 2 a
diagnostic threshold exceeded (``calibrate``, ``check``), 3 Monte Carlo and
PDE prices disagree (``price``).
"""

from __future__ import annotations

import argparse
import collections
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np
from scipy.stats import norm

from .bohmian import (
    CFLError,
    bohm_trajectories,
    classical_free_ensemble,
    continuity_residual,
    fit_power_law,
    hje_residual,
    ks_statistic,
    polar_decompose,
)
from .config import ConfigError, ScenarioConfig, load_config
from .evolution import EvolutionConfig, free_packet, iterate_states
from .feynman_kac import GENERATOR_ID, McConfig, mc_price
from .hamiltonians import (
    HamiltonianOperator,
    PotentialSpec,
    build_gaussian_hamiltonian,
    check_pseudo_hermitian,
    similarity_transform,
)
from .numerics import Grid, MetricWeight, WaveFunction, trapezoid
from .pricing import (
    DiscountFactorModel,
    ForwardTarget,
    PricingModel,
    calibrate_constant_c,
    calibrate_potential,
    calibrate_potential_2d,
    df_curve,
    martingale_report,
    martingale_report_2d,
    price_payout,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_THRESHOLD = 2
EXIT_DISAGREE = 3


# ---------------------------------------------------------------- output


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _plain(obj):
    """Convert numpy scalars and arrays so ``json`` can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def json_bytes(obj):
    return (json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def table_bytes(columns, rows, kind):
    if kind == "json":
        return json_bytes({"columns": list(columns), "rows": [list(r) for r in rows]})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue().encode()


def write_outputs(out_dir, files):
    """Write every file to a temporary name first, then rename them all."""
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, payload in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, os.path.join(out_dir, name)))
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


class Outputs:
    def __init__(self, kind):
        self.kind = kind
        self.files = {}

    def table(self, stem, columns, rows):
        self.files[f"{stem}.{self.kind}"] = table_bytes(columns, rows, self.kind)

    def json(self, name, obj):
        self.files[name] = json_bytes(obj)

    def text(self, name, lines):
        self.files[name] = ("\n".join(lines) + "\n").encode()


# ---------------------------------------------------------------- shared setup


def _fail(cfg, section, key, message):
    raise ConfigError(f"{cfg.where(section, key)}: {section}.{key} {message}")


def _df_model(cfg):
    m = cfg.model
    if m.target == "exp" and m.epsilon != 0.0:
        _fail(cfg, "model", "epsilon", "must be 0 for the plain exponential target")
    return DiscountFactorModel(m.epsilon, m.guard_fraction)


def _grid_1d(cfg):
    return Grid.centered(cfg.grid.half_width, cfg.grid.n, center=cfg.model.x0)


def _calibrated_potential(cfg, grid):
    """The martingale potential of the one-factor scenario."""
    m = cfg.model
    df = _df_model(cfg)
    if m.target == "exp":
        return PotentialSpec.constant(calibrate_constant_c(m.sigma)), ForwardTarget(df)
    target = ForwardTarget(df)
    try:
        df.check_domain(max(abs(grid.x_min), abs(grid.x_max)))
    except ValueError as exc:
        raise ConfigError(f"{cfg.where('grid', 'half_width')}: {exc}") from None
    return calibrate_potential(target, m.sigma, grid, method=m.calibration), target


def _require_diffusive(cfg):
    if cfg.evolution.mode != "diffusive":
        _fail(cfg, "evolution", "mode", "must be 'diffusive' for pricing and calibration")


def _potential_summary(samples):
    lo, hi = float(np.min(samples)), float(np.max(samples))
    if lo == hi:
        return f"C = {lo:.10g} (uniform)"
    return f"C ranges over [{lo:.10g}, {hi:.10g}]"


# ---------------------------------------------------------------- commands


def cmd_calibrate(cfg):
    _require_diffusive(cfg)
    m, out = cfg.model, Outputs(cfg.output.format)
    threshold = cfg.calibrate.defect_threshold
    if m.factors == 1:
        grid = _grid_1d(cfg)
        potential, target = _calibrated_potential(cfg, grid)
        model = PricingModel(grid, m.sigma, potential, dt=cfg.evolution.dt)
        report = martingale_report(model, target, m.T, m.x0, cfg.evolution.n_checkpoints)
        samples = potential.samples(grid)
        out.table("potential", ["x", "C"], zip(grid.nodes, samples))
        at_x0 = f"C(x0) = {float(np.interp(m.x0, grid.nodes, samples)):.10g}"
    else:
        if m.x0 != 0.0:
            _fail(cfg, "model", "x0", "must be 0 for the two-factor model")
        if m.target != "forward":
            _fail(cfg, "model", "target", "must be 'forward' for the two-factor model")
        df = _df_model(cfg)
        xg = Grid.centered(cfg.grid.half_width, cfg.grid.n_x2)
        yg = Grid.centered(cfg.grid.half_width_y, cfg.grid.n_y)
        try:
            df.check_domain(max(abs(yg.x_min), abs(yg.x_max)))
        except ValueError as exc:
            raise ConfigError(f"{cfg.where('grid', 'half_width_y')}: {exc}") from None
        method = "analytic" if m.calibration == "auto" else m.calibration
        potential = calibrate_potential_2d(m.sigma, m.sigma_y, df, xg, yg, method=method)
        report = martingale_report_2d(
            m.sigma, m.sigma_y, df, potential, m.T, cfg.evolution.dt_2d, cfg.evolution.n_checkpoints
        )
        samples = potential.values
        xx, yy = np.meshgrid(xg.nodes, yg.nodes, indexing="ij")
        out.table("potential", ["x", "y", "C"], zip(xx.ravel(), yy.ravel(), samples.ravel()))
        at_x0 = f"C(0, 0) = {float(samples[xg.n // 2, yg.n // 2]):.10g}"
    out.table("martingale", ["t", "expectation", "defect"], report.rows())
    ok = report.defect <= threshold
    out.text(
        "summary.txt",
        [
            f"factors: {m.factors}",
            f"sigma: {m.sigma:.10g}",
            f"epsilon: {m.epsilon:.10g}",
            f"potential: {_potential_summary(samples)}",
            f"potential at origin: {at_x0}",
            f"martingale defect: {report.defect:.6e} over {len(report.times)} checkpoints to T = {m.T:.10g}",
            f"threshold: {threshold:.6e}",
            f"status: {'ok' if ok else 'FAILED'}",
        ],
    )
    return out, EXIT_OK if ok else EXIT_THRESHOLD


def black_call(S0, K, T, sigma):
    """Zero-rate Black call price."""
    sd = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + 0.5 * sd**2) / sd
    return S0 * norm.cdf(d1) - K * norm.cdf(d1 - sd)


def cmd_price(cfg):
    _require_diffusive(cfg)
    m, out = cfg.model, Outputs(cfg.output.format)
    if m.factors != 1:
        _fail(cfg, "model", "factors", "must be 1 for pricing")
    grid = _grid_1d(cfg)
    potential, _ = _calibrated_potential(cfg, grid)
    model = PricingModel(grid, m.sigma, potential, dt=cfg.evolution.dt)
    density = model.density(m.x0, m.T)
    mc_cfg = McConfig(
        cfg.mc.n_paths, cfg.mc.n_steps, cfg.mc.seed, m.sigma, m.x0, m.T, cfg.mc.batch_size
    )
    c_mc = potential.value if potential.is_constant else potential
    h = grid.h

    def spot(x):
        return m.S0 * np.exp(np.asarray(x) - m.x0)

    def call(k):
        return lambda x: np.maximum(spot(x) - k, 0.0)

    payouts = {
        "call": call(m.strike),
        "put": lambda x: np.maximum(m.strike - spot(x), 0.0),
        "unit": lambda x: np.ones(np.shape(x)),
    }
    rows, agree_all = {}, True

    def compare(pde, f):
        nonlocal agree_all
        res = mc_price(f, c_mc, mc_cfg, frame="pricing")
        z = (res.estimate - pde) / res.std_error if res.std_error > 0 else 0.0
        agree = abs(z) <= cfg.price.n_se
        agree_all &= agree
        return {"pde": pde, "mc": res.estimate, "mc_se": res.std_error, "z": z, "agree": agree}, res

    for name, f in payouts.items():
        rows[name], _ = compare(price_payout(f, density), f)
    # Arrow-Debreu: point density against a one-cell box on the paths
    ad_pde = float(np.interp(m.x0, grid.nodes, density.values.real))
    box = lambda x: (np.abs(np.asarray(x) - m.x0) <= 0.5 * h) / h
    rows["arrow_debreu"], last = compare(ad_pde, box)

    report = {
        "scenario": {"S0": m.S0, "strike": m.strike, "T": m.T, "sigma": m.sigma,
                     "epsilon": m.epsilon, "x0": m.x0},
        "grid": {"n": grid.n, "half_width": cfg.grid.half_width, "dt": cfg.evolution.dt},
        "potential": _potential_summary(potential.samples(grid)),
        "payouts": rows,
        "agreement": agree_all,
        "n_se": cfg.price.n_se,
        "mc": {"generator": GENERATOR_ID, "n_paths": mc_cfg.n_paths, "n_steps": mc_cfg.n_steps,
               "seed": mc_cfg.seed, "n_rejected": last.n_rejected},
    }
    if m.epsilon == 0.0:
        report["black_call"] = black_call(m.S0, m.strike, m.T, m.sigma)
    if cfg.price.strikes:
        ladder = []
        for k in cfg.price.strikes:
            entry, _ = compare(price_payout(call(k), density), call(k))
            ladder.append((k, entry["pde"], entry["mc"], entry["mc_se"], entry["agree"]))
        report["agreement"] = agree_all
        out.table("strike_ladder", ["strike", "pde_call", "mc_call", "mc_se", "agree"], ladder)
    out.json("price.json", report)
    return out, EXIT_OK if agree_all else EXIT_DISAGREE


def figure1_rows(epsilon, x_max, n_points, guard_fraction=0.9):
    x = x_max * np.linspace(-1.0, 1.0, n_points)
    pos = df_curve(DiscountFactorModel(abs(epsilon), guard_fraction), x)
    neg = df_curve(DiscountFactorModel(-abs(epsilon), guard_fraction), x)
    return list(zip(x, pos, neg))


def cmd_figure1(cfg):
    f, out = cfg.figure1, Outputs(cfg.output.format)
    try:
        rows = figure1_rows(f.epsilon, f.x_max, f.n_points, cfg.model.guard_fraction)
    except ValueError as exc:
        raise ConfigError(f"{cfg.where('figure1', 'x_max')}: {exc}") from None
    out.table("figure1", ["x", "DF_pos_eps", "DF_neg_eps"], rows)
    return out, EXIT_OK


def _classical_velocities(b, seed):
    """Free-particle velocities ``sigma^2 p`` with ``p`` from the packet's momentum law."""
    spread = b.sigma**2 / (2.0 * b.width)
    draws = [np.random.default_rng([seed, i, 1]).standard_normal() for i in range(b.n_particles)]
    return b.sigma**2 * b.momentum + spread * np.array(draws)


def cmd_bohm(cfg):
    b, out = cfg.bohm, Outputs(cfg.output.format)
    grid = Grid.centered(b.half_width, b.n, center=b.center)
    h_op = build_gaussian_hamiltonian(grid, b.sigma, 0.0)
    psi0 = WaveFunction(grid, free_packet(grid.nodes, 0.0, b.sigma, b.width, b.center, b.momentum))
    evo = EvolutionConfig.over(b.T, b.dt, "unitary")
    last = collections.deque(maxlen=1)

    def states():
        for state in iterate_states(psi0, h_op, evo):
            last.append(state)
            yield state

    ens = bohm_trajectories(states(), b.n_particles, b.seed, b.sigma, record_every=b.record_every)
    final = last[0]
    times = ens.times
    variance = ens.variance()
    exact = b.width**2 + b.sigma**4 * times**2 / (4.0 * b.width**2)
    classical = classical_free_ensemble(_classical_velocities(b, b.seed), times, b.center)
    classical_var = np.var(classical, axis=0)

    def fit(values):
        sel = (times >= b.fit_t_min) & (values > 0)
        if np.count_nonzero(sel) < 2:
            return None, None
        return fit_power_law(times[sel], values[sel])

    beta, r2 = fit(variance)
    cbeta, cr2 = fit(classical_var)
    n_saved = min(b.n_saved, ens.n_particles)
    traj = [
        (i, t, ens.positions[i, j]) for i in range(n_saved) for j, t in enumerate(times)
    ]
    out.table("trajectories", ["particle", "time", "position"], traj)
    out.table(
        "variance",
        ["time", "variance", "exact_variance", "classical_variance"],
        zip(times, variance, exact, classical_var),
    )
    out.json(
        "bohm_summary.json",
        {
            "n_particles": ens.n_particles,
            "seed": b.seed,
            "grid": {"n": grid.n, "half_width": b.half_width, "dt": evo.dt},
            "ks_statistic": ks_statistic(ens.positions[:, -1], final),
            "fit_t_min": b.fit_t_min,
            "beta": beta,
            "r2": r2,
            "classical_beta": cbeta,
            "classical_r2": cr2,
            "flagged_fraction": ens.flagged_fraction,
            "variance_curve": {"times": times, "variance": variance},
        },
    )
    return out, EXIT_OK


def _perturb(op, x, delta):
    """Copy of ``op`` with ``delta`` added to the super-diagonal entry nearest ``x``."""
    grid = op.grid
    i = int(np.clip(np.argmin(np.abs(grid.nodes - x)), 1, grid.n - 3))
    matrix = op.matrix.tolil(copy=True)
    matrix[i, i + 1] += delta
    return HamiltonianOperator(grid, matrix.tocsr(), op.coordinate, "unchecked", op.metric)


def cmd_check(cfg):
    m, c, out = cfg.model, cfg.check, Outputs(cfg.output.format)
    if m.factors != 1:
        _fail(cfg, "model", "factors", "must be 1 for the diagnostics")
    grid = _grid_1d(cfg)
    potential, _ = _calibrated_potential(cfg, grid)
    h_op = build_gaussian_hamiltonian(grid, m.sigma, potential)
    metric = MetricWeight.log_price(grid) if c.metric == "log_price" else MetricWeight.flat(grid)
    op = similarity_transform(h_op, metric) if c.operator == "K" else h_op
    if c.perturbation:
        op = _perturb(op, c.perturb_x, c.perturbation)
    defect = check_pseudo_hermitian(op, metric)

    x = grid.nodes
    packet = free_packet(x, 0.0, m.sigma, c.width, m.x0, c.momentum)
    transformed = c.operator == "K" and not metric.is_flat
    if transformed:
        packet = packet / metric.rho
    psi0 = WaveFunction(grid, packet)
    evo = EvolutionConfig.over(c.T, c.dt, "unitary")
    eta = metric.eta
    norm0 = trapezoid(eta * psi0.density, grid.h)
    drift = 0.0
    tail = collections.deque(maxlen=3)
    for state in iterate_states(psi0, op, evo):
        drift = max(drift, abs(trapezoid(eta * state.density, grid.h) / norm0 - 1.0))
        tail.append(state)
    fields = [polar_decompose(s, floor=c.floor) for s in tail]
    c_samples = potential.samples(grid)
    if transformed:
        hje = hje_residual(fields, m.sigma, "pseudo", potential=c_samples - m.sigma**2 / 8.0)
    else:
        hje = hje_residual(fields, m.sigma, "hermitian", potential=c_samples)
    cont = continuity_residual(fields, m.sigma, metric)

    checks = {
        "pseudo_hermitian_defect": (defect, c.defect_max),
        "eta_norm_drift": (drift, c.drift_max),
        "hje_residual": (hje, c.hje_max),
        "continuity_residual": (cont, c.continuity_max),
    }
    passed = all(v <= limit for v, limit in checks.values())
    out.json(
        "diagnostics.json",
        {
            "operator": c.operator,
            "metric": c.metric,
            "perturbation": c.perturbation,
            "checks": {
                k: {"value": v, "threshold": limit, "ok": v <= limit}
                for k, (v, limit) in checks.items()
            },
            "passed": passed,
        },
    )
    return out, EXIT_OK if passed else EXIT_THRESHOLD


COMMANDS = {
    "calibrate": cmd_calibrate,
    "price": cmd_price,
    "figure1": cmd_figure1,
    "bohm": cmd_bohm,
    "check": cmd_check,
}


# ---------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qmart",
        description="Martingale pricing with quantum-mechanical generators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "calibrate": "calibrate the potential and tabulate the martingale defect",
        "price": "price payouts on the PDE and Monte Carlo engines",
        "figure1": "tabulate the discount factor for a pair of epsilon values",
        "bohm": "simulate a Bohmian ensemble for the free packet",
        "check": "pseudo-Hermiticity, norm and residual diagnostics",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="PATH", help="YAML scenario file")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, help="override the Monte Carlo and ensemble seeds")
        p.add_argument("--grid-n", type=int, help="override the number of grid nodes")
        p.add_argument("--format", choices=["csv", "json"], help="table format")
    return parser


def _apply_flags(cfg, args):
    overrides = {}
    if args.seed is not None:
        overrides.update(mc__seed=args.seed, bohm__seed=args.seed)
    if args.grid_n is not None:
        if args.command == "bohm":
            overrides["bohm__n"] = args.grid_n
        elif args.command == "calibrate" and cfg.model.factors == 2:
            overrides["grid__n_x2"] = args.grid_n
        else:
            overrides["grid__n"] = args.grid_n
    if args.format is not None:
        overrides["output__format"] = args.format
    return cfg.with_overrides(**overrides) if overrides else cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        cfg = _apply_flags(cfg, args)
        out, code = COMMANDS[args.command](cfg)
    except CFLError as exc:
        print(f"error: {exc}; suggested dt <= {exc.suggested_dt:.3g}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    written = write_outputs(args.out, out.files)
    for path in written:
        print(path)
    if code == EXIT_THRESHOLD:
        print(f"{args.command}: threshold exceeded, see outputs", file=sys.stderr)
    elif code == EXIT_DISAGREE:
        print("price: Monte Carlo and PDE prices disagree", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
