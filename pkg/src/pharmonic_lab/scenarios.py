"""Scenario pipelines behind the CLI; each returns tables, scalars and checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import conservation, duality, gauge, lorentz, neck, pharmonic, wente
from .elliptic import triangle_weight
from .grid import DISC, Field, build_grid


@dataclass
class Check:
    name: str
    tag: str
    value: float
    threshold: float
    op: str
    passed: bool = False

    def __post_init__(self):
        v, t = float(self.value), float(self.threshold)
        self.passed = bool({"<=": v <= t, ">=": v >= t, "==": v == t}[self.op]) if math.isfinite(v) else False


@dataclass
class Plot:
    name: str
    table: str
    x: str
    y: list
    logx: bool = False
    logy: bool = False
    xlabel: str = ""
    ylabel: str = ""


@dataclass
class ScenarioResult:
    scenario: str
    scalars: dict = dc_field(default_factory=dict)
    tables: dict = dc_field(default_factory=dict)
    checks: list = dc_field(default_factory=list)
    plots: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def tags(self) -> list[str]:
        return sorted({c.tag for c in self.checks})

    def check(self, name, tag, value, threshold, op="<="):
        c = Check(name, tag, float(value), float(threshold), op)
        self.checks.append(c)
        return c


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    run: Callable
    defaults: dict
    seeded: bool
    summary: str
    tags: tuple


# ---------------------------------------------------------------------------
# sphere-disc


def run_sphere_disc(cfg: dict) -> ScenarioResult:
    p, h = cfg["p"], cfg["h"]
    res = ScenarioResult("sphere-disc")
    data = pharmonic.equator_data() if cfg["bc"] == "equator" else pharmonic.constant_data()
    rows = []
    for hh in (h, h / 2):
        grid = build_grid(DISC, hh)
        st = pharmonic.solve_sphere_pharmonic(data, p, grid=grid, tol=cfg["tol"])
        rows.append({
            "h": hh, "energy": st.energy, "dirichlet": st.energy - grid.tri_area.sum() if p == 2.0 else math.nan,
            "conservation_residual": pharmonic.sphere_conservation_residual(st.u, p, grid),
            "el_residual": pharmonic.sphere_el_residual(st.u, p, grid),
            "iterations": st.iterations, "converged": int(st.converged),
        })
    res.tables["refinement"] = rows
    ratio = rows[1]["conservation_residual"] / max(rows[0]["conservation_residual"], 1e-300)
    res.scalars.update(energy=rows[0]["energy"], residual_ratio=ratio)
    res.check("solver_converged", "sphere.solve", min(r["converged"] for r in rows), 1, ">=")
    if p == 2.0:
        target = 4 * math.pi if cfg["bc"] == "equator" else 0.0
        res.scalars["dirichlet_target"] = target
        res.check("dirichlet_energy_error", "sphere.energy", abs(rows[0]["dirichlet"] - target),
                  0.05 * max(target, 1e-3))
    if rows[0]["conservation_residual"] > 1e-10:
        res.check("conservation_residual_ratio", "sphere.conservation", ratio, 0.65)
    res.plots.append(Plot("refinement", "refinement", "h", ["conservation_residual", "el_residual"],
                          True, True, "h", "weak residual"))
    return res


# ---------------------------------------------------------------------------
# gauge-synthetic


def run_gauge_synthetic(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("gauge-synthetic")
    grid = build_grid(DISC, cfg["h"])
    Om, Q_exact = gauge.pure_gauge_omega(grid)
    g = gauge.extract_gauge(Om, 1.0, tol=cfg["tol"], grid=grid, sigma=math.inf)
    rel = g.energy / g.initial_energy
    res.scalars.update(pure_gauge_relative_energy=rel, pure_gauge_iterations=g.iterations)
    res.check("pure_gauge_relative_energy", "gauge.pure", rel, 1e-6)
    rows = []
    x, y = grid.points.T
    f = Field(grid, 1.0 + x * x + y * y)
    for k in range(cfg["n_cases"]):
        Om = conservation.random_omega(grid, cfg["m"], cfg["energy"], triangle_weight(grid, f.values),
                                       seed=cfg["seed"] + k)
        r = gauge.extract_gauge(Om, f, tol=cfg["tol"], grid=grid, sigma=cfg["sigma"])
        rows.append({"case": k, "initial_energy": r.initial_energy, "final_energy": r.energy,
                     "energy_ratio": r.energy / r.initial_energy, "iterations": r.iterations,
                     "orthogonality": r.orthogonality, "converged": int(r.converged)})
    res.tables["random_cases"] = rows
    res.check("max_energy_ratio", "gauge.decrease", max(r["energy_ratio"] for r in rows), 1.0)
    res.check("orthogonality", "gauge.orthogonal", max(r["orthogonality"] for r in rows + [{"orthogonality": g.orthogonality}]), 1e-10)
    res.plots.append(Plot("energy_ratio", "random_cases", "case", ["energy_ratio"], False, False, "case", "final / initial"))
    return res


# ---------------------------------------------------------------------------
# conservation-sweep


def _pipeline_config(cfg):
    return conservation.PipelineConfig(M=cfg["M"], k_max=cfg["k_max"], sigma=cfg["sigma"])


def run_conservation_sweep(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("conservation-sweep")
    pc = _pipeline_config(cfg)
    grid = build_grid(DISC, cfg["h"])
    rows = []
    for k in range(cfg["n_cases"]):
        case = conservation.synthetic_case(grid, cfg["m"], cfg["energy"], cfg["p"], seed=cfg["seed"] + k)
        pair = conservation.build_conservation_law(case.u, cfg["p"], case.Omega, pc, grid)
        est = pair.estimates
        rows.append({"case": k, "omega_energy": case.omega_energy, "max_ratio": max(pair.contraction_ratios, default=0.0),
                     "iterations": len(pair.history), "I3_constant": est["I3_constant"],
                     "I4_constant": est["I4_constant"], "C_measured": est["C_measured"],
                     "C2_measured": est["C2_measured"], "residual": pair.residual, "el_residual": pair.el_residual,
                     "diagnostic_D": pair.diagnostic_D})
    res.tables["cases"] = rows
    Ds = []
    for hh in (cfg["h"], cfg["h"] / 2):
        gg = build_grid(DISC, hh)
        case = conservation.synthetic_case(gg, cfg["m"], cfg["energy"], cfg["p"], seed=cfg["seed"])
        pair = conservation.build_conservation_law(case.u, cfg["p"], case.Omega, pc, gg)
        Ds.append({"h": hh, "diagnostic_D": pair.diagnostic_D, "residual": pair.residual})
    res.tables["refinement"] = Ds
    C = [r["C_measured"] for r in rows]
    mid = 0.5 * (max(C) + min(C))
    spread = (max(C) - min(C)) / (2 * mid) if mid > 0 else math.inf
    factor = Ds[0]["diagnostic_D"] / max(Ds[1]["diagnostic_D"], 1e-300)
    res.scalars.update(C_min=min(C), C_max=max(C), C_spread=spread, D_factor=factor)
    res.check("max_contraction_ratio", "conservation.contraction", max(r["max_ratio"] for r in rows), 0.9)
    res.check("max_omega_energy", "conservation.small_energy", max(r["omega_energy"] for r in rows), 0.01 + 1e-12)
    res.check("D_refinement_factor", "conservation.exactness", factor, 1.5, ">=")
    res.check("constant_spread", "conservation.estimates", spread, 0.5)
    res.plots.append(Plot("constants", "cases", "case", ["C_measured", "I3_constant", "I4_constant"],
                          False, False, "case", "measured constant"))
    return res


# ---------------------------------------------------------------------------
# wente-suite


def run_wente_suite(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("wente-suite")
    grid = build_grid(DISC, cfg["h"])
    rows = wente.wente_suite(grid, cfg["n_pairs"], cfg["seed"])
    res.tables["suite"] = rows
    x, y = grid.points.T
    phi, cert = wente.solve_weighted_wente(1.0, Field(grid, x), Field(grid, y), grid=grid)
    err = float(np.abs(phi.values - (x * x + y * y - 1.0) / 4.0).max())
    cmax = max(r["constant"] for r in rows)
    res.scalars.update(max_constant=cmax, closed_form_error=err, n_cases=len(rows))
    res.check("max_constant", "wente.constant", cmax, wente.CONSTANT_CAP)
    res.check("max_sup_ratio", "wente.sup", max(r["sup_ratio"] for r in rows), wente.SUP_FACTOR)
    res.check("closed_form_error", "wente.closed_form", err, 3 * cfg["h"] ** 2)
    res.plots.append(Plot("constants", "suite", "case", ["constant"], False, True, "case", "measured constant"))
    return res


# ---------------------------------------------------------------------------
# lorentz-suite


def lorentz_corpus(grid, n: int, seed: int) -> list[tuple[str, np.ndarray]]:
    """Node fields cycling through smooth, radial-power, indicator and bump families."""
    rng = np.random.default_rng(seed)
    x, y = grid.points.T
    r = np.hypot(x, y)
    out = []
    for k in range(n):
        kind = k % 4
        if kind == 0:
            out.append((f"smooth{k}", wente.random_smooth(grid, rng)))
        elif kind == 1:
            a = rng.uniform(0.05, 0.6)
            out.append((f"power{k}", np.maximum(r, grid.h) ** (-a)))
        elif kind == 2:
            c, rad = rng.uniform(-0.4, 0.4, 2), rng.uniform(0.1, 0.5)
            out.append((f"indicator{k}", (np.hypot(x - c[0], y - c[1]) < rad).astype(float)))
        else:
            c, s = rng.uniform(-0.5, 0.5, 2), rng.uniform(0.05, 0.4)
            out.append((f"bump{k}", np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2) / (2 * s * s))))
    return out


def run_lorentz_suite(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("lorentz-suite")
    grid = build_grid(DISC, cfg["h"])
    r = grid.centroids
    ind = Field(grid, (np.hypot(r[:, 0], r[:, 1]) < 0.5).astype(float), "cell")
    chk = lorentz.holder_lorentz_check(ind, 3.0, area=grid.domain_area)
    exact = lorentz.indicator_ratio_exact(3.0)
    res.scalars.update(indicator_ratio=chk.ratio, indicator_exact=exact)
    res.check("indicator_relative_error", "lorentz.indicator", abs(chk.ratio / exact - 1.0), 0.02)
    rows = []
    for name, g in lorentz_corpus(grid, cfg["n_cases"], cfg["seed"]):
        fld = Field(grid, g)
        for p in cfg["p_list"]:
            c = lorentz.holder_lorentz_check(fld, p, area=grid.domain_area)
            rows.append({"field": name, "p": p, "lhs": c.lhs, "rhs": c.rhs, "ratio": c.ratio})
    res.tables["corpus"] = rows
    mx = max(rw["ratio"] for rw in rows)
    res.scalars["max_ratio"] = mx
    res.check("max_corpus_ratio", "lorentz.holder", mx, 1.5)
    pairs = [lorentz.pairing_check(Field(grid, g)) for _, g in lorentz_corpus(grid, cfg["n_cases"], cfg["seed"])]
    res.scalars.update(pairing_max_ratio=max(c.ratio for c in pairs),
                       pairing_weight_l2inf=pairs[0].weight_l2inf,
                       pairing_constant_measured=max(c.lhs / c.l21 for c in pairs))
    res.check("pairing_ratio", "lorentz.pairing", res.scalars["pairing_max_ratio"], 1.0 + 1e-12)
    res.plots.append(Plot("ratios", "corpus", "p", ["ratio"], False, False, "p", "lhs / rhs"))
    return res


# ---------------------------------------------------------------------------
# duality-probe


def run_duality_probe(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("duality-probe")
    grid = build_grid(DISC, cfg["h"])
    u = duality.probe_map(grid)
    probe = duality.commutator_probe(None, u, cfg["p_list"], grid=grid)
    rows = probe.rows()
    for row in rows:
        rep = duality.disc_l21_report(Field(grid, u), row["p"], None, grid=grid)
        row.update(lhs=rep.lhs, term1=rep.term1, term2=rep.term2, term3=rep.term3)
    res.tables["rho"] = rows
    for t in (0.25, 0.5):
        c = [duality.disc_l21_report(Field(grid, u), p, None, t, grid=grid).constant_measured
             for p in probe.p]
        res.scalars[f"disc_constant_t{t}"] = max(c)
    res.scalars.update(slope=probe.slope, intercept=probe.intercept, scale=probe.scale, rho_at_2=probe.rho_at_2)
    res.check("commutator_slope", "duality.commutator", probe.slope, 0.8, ">=")
    res.check("rho_at_2", "duality.identity", probe.rho_at_2, 1e-8 * probe.scale)
    res.plots.append(Plot("rho", "rho", "p", ["rho"], False, True, "p", "rho"))
    return res


# ---------------------------------------------------------------------------
# neck-annulus


def run_neck_annulus(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("neck-annulus")
    rows = []
    probes = {}
    for kind in ("bounded", "violating"):
        pr = neck.c_star_decay_probe(cfg["deltas"], cfg["K"], kind, n_theta=cfg["n_theta"])
        probes[kind] = pr
        for d, p, c, prod, lm in zip(pr.deltas, pr.ps, pr.c_star, pr.product, pr.log_mode_norm):
            rows.append({"family": kind, "delta": d, "p": p, "c_star": c, "product": prod, "log_mode_norm": lm})
    res.tables["decay"] = rows
    b, v = probes["bounded"], probes["violating"]
    res.scalars.update(bounded_ratio=b.ratio, bounded_exponent=b.growth_exponent,
                       violating_exponent=v.growth_exponent)
    res.check("bounded_family_ratio", "neck.cstar_decay", b.ratio, 10.0)
    res.check("bounded_family_not_flagged", "neck.cstar_decay", int(b.flagged), 0, "==")
    res.check("control_flagged", "neck.control", int(v.flagged), 1, "==")
    delta = cfg["delta"]
    p = 2.0 + cfg["K"] / math.log(1.0 / delta)
    grid = neck.annulus_for(delta, cfg["n_theta"])
    st = neck.solve_annulus(grid, p, lambda t: np.stack([np.cos(t), np.sin(t)]),
                            lambda t: np.stack([delta * np.cos(t), delta * np.sin(t)]))
    rep = neck.neck_report(st.u, p, delta, grid=grid, sigma=cfg["sigma"])
    res.tables["radii"] = rep.rows()
    d = rep.as_dict()
    res.scalars.update({f"neck_{k}": d[k] for k in ("delta", "p", "K", "M_param", "L", "oscillation",
                                                    "angular_l21", "angular_l21_alt", "omega_energy")})
    res.scalars["neck_c_star_weak"] = d["c_star_weak"]
    res.check("c_star_finite", "neck.report", float(np.isfinite(np.asarray(rep.c_star_values)).all()), 1, "==")
    res.plots.append(Plot("decay", "decay", "delta", ["product"], True, True, "delta", "|C*| log^((p-1)/p)(1/delta)"))
    return res


# ---------------------------------------------------------------------------
# morrey-decay


def _analytic_pairs(grid):
    x, y = grid.points.T
    return {"linear": np.stack([x, y], 1), "quadratic": np.stack([x * x - y * y, 2 * x * y], 1)}


def run_morrey_decay(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("morrey-decay")
    h = cfg["h"]
    grid = build_grid(DISC, h)
    prow, mrow = [], []
    for name, u in _analytic_pairs(grid).items():
        pm = neck.pohozaev_margin(Field(grid, u), 2.0, C=1.0, grid=grid)
        prow.append({"map": name, "p": 2.0, "C": 1.0, "min_margin": pm["min"], "max_abs_margin": pm["max_abs"]})
        res.check(f"pohozaev_{name}", "neck.pohozaev", pm["max_abs"], 5 * h)
    md = neck.morrey_decay(Field(grid, _analytic_pairs(grid)["linear"]), 2.0, grid=grid)
    mrow.append({"map": "linear", "p": 2.0, "alpha": md["alpha"], "hole_filling_max": md["hole_filling_max"]})
    res.check("alpha_linear_error", "neck.morrey", abs(md["alpha"] - 2.0), 0.1)
    alphas = []
    for p in cfg["p_list"]:
        st = pharmonic.solve_sphere_pharmonic(pharmonic.equator_data(), p, grid=grid, tol=cfg["tol"])
        pm = neck.pohozaev_margin(st.u, p, C=cfg["C"], grid=grid)
        prow.append({"map": "sphere", "p": p, "C": cfg["C"], "min_margin": pm["min"], "max_abs_margin": pm["max_abs"]})
        res.check(f"pohozaev_sphere_p{p:g}", "neck.pohozaev", pm["min"], -5 * h, ">=")
        m = neck.morrey_decay(st.u, p, grid=grid)
        mrow.append({"map": "sphere", "p": p, "alpha": m["alpha"], "hole_filling_max": m["hole_filling_max"]})
        alphas.append(m["alpha"])
    res.tables["pohozaev"] = prow
    res.tables["morrey"] = mrow
    if len(alphas) >= 2:
        res.scalars["alpha_spread"] = max(alphas) - min(alphas)
        res.check("alpha_uniform_in_p", "neck.morrey_uniform", max(alphas) - min(alphas), 0.5)
    res.plots.append(Plot("alpha", "morrey", "p", ["alpha"], False, False, "p", "alpha"))
    return res


# ---------------------------------------------------------------------------
# registry

SCENARIOS = {s.name: s for s in (
    ScenarioSpec("sphere-disc", run_sphere_disc, {"p": 2.0, "h": 0.04, "bc": "equator", "tol": 1e-8}, False,
                 "sphere-target solve on the disc, energy oracle and conservation residual under refinement",
                 ("sphere.solve", "sphere.energy", "sphere.conservation")),
    ScenarioSpec("gauge-synthetic", run_gauge_synthetic,
                 {"h": 0.04, "m": 3, "n_cases": 10, "energy": 0.01, "tol": 1e-9, "sigma": 0.05}, True,
                 "gauge extraction on a pure gauge and on random small potentials",
                 ("gauge.pure", "gauge.decrease", "gauge.orthogonal")),
    ScenarioSpec("conservation-sweep", run_conservation_sweep,
                 {"h": 0.04, "p": 2.0, "m": 3, "n_cases": 10, "energy": 0.01, "k_max": 40, "M": None,
                  "sigma": 0.05}, True,
                 "conservation-law pipeline over a synthetic batch, with refinement of the exactness diagnostic",
                 ("conservation.contraction", "conservation.small_energy", "conservation.exactness",
                  "conservation.estimates")),
    ScenarioSpec("wente-suite", run_wente_suite, {"h": 0.02, "n_pairs": 20}, True,
                 "weighted Wente certificates over random pairs and three weights",
                 ("wente.constant", "wente.sup", "wente.closed_form")),
    ScenarioSpec("lorentz-suite", run_lorentz_suite, {"h": 0.02, "n_cases": 30, "p_list": [2.25, 2.5, 3.0]}, True,
                 "Holder-Lorentz bound on the indicator oracle and a field corpus",
                 ("lorentz.indicator", "lorentz.holder", "lorentz.pairing")),
    ScenarioSpec("duality-probe", run_duality_probe, {"h": 0.02, "p_list": [2.05, 2.1, 2.2, 2.3, 2.4]}, False,
                 "commutator scaling of the stream and weight operators",
                 ("duality.commutator", "duality.identity")),
    ScenarioSpec("neck-annulus", run_neck_annulus,
                 {"deltas": [1e-2, 1e-3, 1e-4], "K": 0.5, "n_theta": 64, "delta": 1e-3, "sigma": 0.05}, False,
                 "flux-constant decay over shrinking annuli, negative control and a neck report",
                 ("neck.cstar_decay", "neck.control", "neck.report")),
    ScenarioSpec("morrey-decay", run_morrey_decay, {"h": 0.04, "p_list": [2.1, 2.2, 2.4], "C": 2.0, "tol": 1e-8},
                 False, "Pohozaev margins and Morrey exponents for analytic and sphere maps",
                 ("neck.pohozaev", "neck.morrey", "neck.morrey_uniform")),
)}
