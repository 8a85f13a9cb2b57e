"""
Subcommand pipelines: each takes a Scenario, writes its CSV artifacts under
the output directory and returns the list of written paths.
"""
import logging

import numpy as np
import pandas as pd

from core.characteristics import hamiltonian_drift, integrate_fan, jacobian_check
from core.density import amplitude_frame, build_generalized_density, density_frame, masses
from core.manifold import SHOCK_COLUMNS, essential, singularities, slice_fan, track_shocks
from expr.numdiff import d_dx
from oracle.godunov import godunov
from oracle.hopf_lax import hopf_lax_grid
from oracle.kf_lattice import kf_lattice, lattice_from_initial
from oracle.tunnel import run_lattices, tunnel_compare
from regularize.blend import RegularizationParams
from regularize.limit_study import limit_study
from regularize.surgery import surgered_fan, surgery
from utils.csv_out import write_csv
from utils.errors import ConfigurationError
from verify.hj import fan_hj_residual, transport_residual
from verify.identity import FanSolution, identity_suite

logger = logging.getLogger(__name__)

ORACLES = ("hopf-lax", "godunov", "kf-lattice", "tunnel-compare")
SINGULARITY_COLUMNS = ["t", "x", "x0"]
MERGE_COLUMNS = ["t", "x", "left", "right", "child"]
SURGERY_COLUMNS = ["epsilon", "beta", "A_shift", "t1_star", "a1", "a2", "c_at_T", "minJ_over_eps"]


def output_times(scenario, fan):
    times = fan.times[::scenario.output_every]
    if times[-1] != fan.times[-1]:
        times = np.append(times, fan.times[-1])
    return times


def build_fan(scenario, threads=1):
    return integrate_fan(scenario.model, scenario.S0, scenario.x0_grid, scenario.T, scenario.h_t,
                         scenario.a_field, scenario.dS0, scenario.x_box, threads)


def build_density(scenario, fan):
    shocks, merge_events = track_shocks(fan)
    return build_generalized_density(fan, scenario.rho0, shocks, merge_events, scenario.a_field,
                                     scenario.stratum_decay)


def _essential_frame(fan, times, x_grid):
    return pd.concat([essential(slice_fan(fan, float(t)), x_grid).to_frame() for t in times],
                     ignore_index=True)


def _shock_frame(gd):
    frames = []
    for s in gd.shocks:
        frame = s.path[SHOCK_COLUMNS].copy()
        frame.insert(0, "shock_id", s.id)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["shock_id"] + SHOCK_COLUMNS)
    return pd.concat(frames, ignore_index=True)


# ---------------------- subcommands ----------------------

def run_evolve(scenario, out_dir, threads=1):
    fan = build_fan(scenario, threads)
    gd = build_density(scenario, fan)
    times = output_times(scenario, fan)
    report = jacobian_check(fan)
    checks = pd.DataFrame([
        {"check": "jacobian_max_deviation", "value": report.max_deviation, "t": report.t, "x0": report.x0},
        {"check": "hamiltonian_drift", "value": hamiltonian_drift(fan), "t": np.nan, "x0": np.nan},
    ])
    return [
        write_csv(fan.to_frame(scenario.output_every), out_dir, "fan.csv"),
        write_csv(_essential_frame(fan, times, scenario.x_grid), out_dir, "essential.csv"),
        write_csv(density_frame(gd, times, scenario.x_grid), out_dir, "density.csv"),
        write_csv(masses(gd, times), out_dir, "masses.csv"),
        write_csv(checks, out_dir, "checks.csv"),
    ]


def run_singularity(scenario, out_dir, threads=1):
    fan = build_fan(scenario, threads)
    births = singularities(fan)
    frame = pd.DataFrame([{"t": b.t, "x": b.x, "x0": b.x0} for b in births], columns=SINGULARITY_COLUMNS)
    if births:
        logger.info("First singularity at t*=%.6g, x*=%.6g", births[0].t, births[0].x)
    return [write_csv(frame, out_dir, "singularity.csv", SINGULARITY_COLUMNS)]


def run_shock(scenario, out_dir, threads=1):
    fan = build_fan(scenario, threads)
    gd = build_density(scenario, fan)
    merges = pd.DataFrame([{"t": m.t, "x": m.x, "left": m.left, "right": m.right, "child": m.child}
                           for m in gd.merges], columns=MERGE_COLUMNS)
    return [
        write_csv(_shock_frame(gd), out_dir, "shocks.csv"),
        write_csv(amplitude_frame(gd), out_dir, "amplitudes.csv"),
        write_csv(merges, out_dir, "merges.csv", MERGE_COLUMNS),
        write_csv(masses(gd, output_times(scenario, fan)), out_dir, "masses.csv"),
    ]


def run_verify(scenario, out_dir, threads=1):
    fan = build_fan(scenario, threads)
    gd = build_density(scenario, fan)
    solution = FanSolution(gd)
    report = identity_suite(solution, scenario.bump_count, scenario.seed, scenario.levels, gd.merges, threads)
    times = np.linspace(scenario.h_t, scenario.T, scenario.hj_points)
    x_grid = np.linspace(scenario.x_min, scenario.x_max, scenario.hj_points)
    residuals = pd.DataFrame([
        {"check": "hj_residual", "value": fan_hj_residual(fan, times, x_grid)},
        {"check": "transport_residual", "value": transport_residual(gd, times, x_grid)},
    ])
    return [
        write_csv(report.frame, out_dir, "identity.csv"),
        write_csv(residuals, out_dir, "residuals.csv"),
    ]


def run_oracle(scenario, kind, out_dir, threads=1):
    if kind not in ORACLES:
        raise ConfigurationError(f"unknown oracle '{kind}' (choose from {', '.join(ORACLES)})")
    model = scenario.model
    if kind == "hopf-lax":
        fan = build_fan(scenario, threads)
        frames = []
        for t in output_times(scenario, fan)[1:]:
            S_fan = essential(slice_fan(fan, float(t)), scenario.x_grid).S
            S_hl = hopf_lax_grid(model, scenario.S0, scenario.x_grid, float(t))
            frames.append(pd.DataFrame({"t": float(t), "x": scenario.x_grid, "S_hopf_lax": S_hl,
                                        "S_essential": S_fan, "abs_diff": np.abs(S_hl - S_fan)}))
        return [write_csv(pd.concat(frames, ignore_index=True), out_dir, "hopf_lax.csv")]
    if kind == "godunov":
        p0 = scenario.dS0 if scenario.dS0 is not None else (lambda x: d_dx(scenario.S0, x))
        times = np.arange(0, int(round(scenario.T / scenario.h_t)) + 1, scenario.output_every) * scenario.h_t
        result = godunov(model, p0, scenario.T, scenario.x_grid, out_times=times[times > 0])
        shocks = pd.DataFrame([{"t": t, "x_s": x} for t, xs in zip(result.times, result.shocks) for x in xs],
                              columns=["t", "x_s"])
        return [write_csv(result.to_frame(), out_dir, "godunov.csv"),
                write_csv(shocks, out_dir, "godunov_shocks.csv", ["t", "x_s"])]
    if not scenario.h_schedule or scenario.lattice_range is None:
        raise ConfigurationError(f"oracle '{kind}' needs tunnel.h and tunnel.x_range")
    if kind == "kf-lattice":
        frames = []
        for h in scenario.h_schedule:
            start = lattice_from_initial(scenario.S0, scenario.rho0, h, *scenario.lattice_range,
                                         scenario.lattice_dx)
            for snap in kf_lattice(model, start, scenario.T):
                frame = snap.to_frame()
                frame.insert(0, "h", h)
                frames.append(frame)
        return [write_csv(pd.concat(frames, ignore_index=True), out_dir, "lattice.csv")]
    fan = build_fan(scenario, threads)
    gd = build_density(scenario, fan)
    lattices = run_lattices(model, scenario.S0, scenario.rho0, scenario.h_schedule, scenario.lattice_range,
                            scenario.lattice_dx, scenario.T, threads)
    return [write_csv(tunnel_compare(gd, lattices, scenario.compare_window), out_dir, "tunnel.csv")]


def _surgery_study(scenario, threads):
    fan = build_fan(scenario, threads)
    births = singularities(fan)
    if not births:
        raise ConfigurationError("surgery needs a singularity before T")
    birth = births[0]
    rows = []
    for eps in sorted(scenario.eps_schedule, reverse=True):
        params = RegularizationParams(eps, beta=scenario.beta, profile=scenario.profile, t1=scenario.t1,
                                      c_mode=scenario.c_mode, C_target=scenario.C_target)
        curve = surgery(scenario.model, fan, birth.t, birth.x0, params.beta, params.t1)
        sf = surgered_fan(scenario.model, curve, params, scenario.T, scenario.h_t, scenario.a_field)
        after = sf.times >= sf.t1_star
        minJ = float(np.min(sf.J[after][:, sf.blended])) / eps if sf.blended.any() else np.nan
        a1, a2 = curve.angle_points
        rows.append({"epsilon": eps, "beta": params.beta, "A_shift": sf.A_shift, "t1_star": curve.t1_star,
                     "a1": a1, "a2": a2, "c_at_T": float(sf.c[-1]), "minJ_over_eps": minJ})
    return pd.DataFrame(rows, columns=SURGERY_COLUMNS)


def run_limit_study(scenario, out_dir, threads=1):
    if not scenario.eps_schedule:
        raise ConfigurationError("limit-study needs regularization.epsilon")
    if not scenario.model.is_homogeneous:
        return [write_csv(_surgery_study(scenario, threads), out_dir, "surgery.csv", SURGERY_COLUMNS)]
    frame = limit_study(scenario, scenario.eps_schedule, scenario.regularization, threads)
    if not frame.attrs.get("monotone", True):
        logger.warning("limit study errors are not monotone along the schedule")
    return [write_csv(frame, out_dir, "limit_study.csv")]
