"""Scenario engine: co-simulates plant, storage, leader and controllers.

One scenario is one deterministic fixed-step loop.  Per step: schedule
updates, leader measurement/update, per-agent trigger evaluation and
event handling (zero-order-hold control), limited-integrator update of
the power ratios with local constraints, a plant RK4 step driven by the
resulting references, and recording.  Identical specs produce bit
identical results; there is no randomness anywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (EventRecord, GainSet, HeldSample, VARIANTS,
                         consensus_errors, control_input, measurement_error,
                         reconstruct_xi, reconstruct_zeta, trigger_check)
from .netgraph import CommTopology, check_feasibility, grounded_matrix, laplacian
from .plant import PlantModel, PlantState, solve_load_phases, step_plant, sync_frequency
from .storage import (BessState, BessUnit, ConstraintConfig, LeaderState,
                      apply_local_constraints, fleet_k_soc, leader_reference)

__all__ = [
    "ScenarioSpec",
    "RunResult",
    "run_scenario",
    "settling_time",
    "event_statistics",
    "overshoot",
    "compare_initial_scaling",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete, immutable description of one simulation run."""

    name: str
    model: PlantModel
    units: tuple
    topology: CommTopology
    gains: GainSet
    load_schedule: tuple            # ((t, total watts), ...), sorted, t0 = 0
    soc_init: tuple
    lambda_init: tuple
    leader_soc_init: float
    horizon: float
    dt: float = 1e-3
    variant: str = "proposed"
    res_scale_schedule: tuple = ((0.0, 1.0),)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    control_start: float = 0.0
    trigger_mode: str = "sampled"   # or "reconstructed"
    rest_phi: float = 1e-12
    leader_period: float = 0.0      # 0 -> 10 * dt
    ic_scale: float = 1.0
    newton_tol: float = 1e-8
    description: str = ""

    def __post_init__(self):
        n = self.topology.n_agents
        if len(self.units) != n:
            raise ValueError(f"{len(self.units)} units but {n} comm agents")
        if len(self.model.bess_idx) != n:
            raise ValueError(f"plant has {len(self.model.bess_idx)} BESS nodes "
                             f"but fleet has {n} units")
        if len(self.soc_init) != n or len(self.lambda_init) != n:
            raise ValueError("soc_init and lambda_init must have one entry per agent")
        if self.horizon <= 0.0 or self.dt <= 0.0:
            raise ValueError("horizon and dt must be > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.trigger_mode not in ("sampled", "reconstructed"):
            raise ValueError("trigger_mode must be 'sampled' or 'reconstructed'")
        for sched, what in ((self.load_schedule, "load_schedule"),
                            (self.res_scale_schedule, "res_scale_schedule")):
            times = [t for t, _ in sched]
            if not sched or times[0] > 0.0:
                raise ValueError(f"{what} must start at t = 0")
            if any(a >= b for a, b in zip(times, times[1:])):
                raise ValueError(f"{what} times must be strictly increasing")

    @property
    def k_soc(self) -> float:
        return fleet_k_soc(self.units)

    @property
    def p_dis_total(self) -> float:
        return float(sum(u.p_dis for u in self.units))


@dataclass
class RunResult:
    """Time series, event log and scalar metrics of one completed run."""

    spec_name: str
    t: np.ndarray
    lam: np.ndarray          # (T, n)
    soc: np.ndarray          # (T, n)
    omega_dev: np.ndarray    # (T, n)  BESS-node frequency deviations
    p_inj: np.ndarray        # (T, n)  BESS-node injections
    p_ref: np.ndarray        # (T, n)
    f_value: np.ndarray      # (T, n)  last trigger values (NaN while inactive)
    lambda_star: np.ndarray  # (T,)    leader ratio reference
    soc_leader: np.ndarray   # (T,)
    omega_syn: np.ndarray    # (T,)    steady-state formula on current refs
    load_total: np.ndarray   # (T,)
    events: list
    feasibility: object
    metrics: dict

    @property
    def n_agents(self) -> int:
        return self.lam.shape[1]


def _schedule_value(schedule, t: float) -> float:
    """Piecewise-constant lookup: last entry with start <= t."""
    value = schedule[0][1]
    for ts, v in schedule:
        if ts <= t + 1e-12:
            value = v
        else:
            break
    return value


def settling_time(times: np.ndarray, series: np.ndarray, reference,
                  tol: float = None, hold: float = 0.5):
    """First t with max_i |x_i - ref| <= tol over the whole [t, t+hold] window.

    `series` is (T,) or (T, n); `reference` a scalar or a (T,) trajectory.
    Returns None when no window inside the horizon qualifies.  Default
    tolerance is 1e-3 * max(1, |reference|) evaluated pointwise.
    """
    times = np.asarray(times, float)
    x = np.asarray(series, float)
    if x.ndim == 1:
        x = x[:, None]
    ref = np.broadcast_to(np.asarray(reference, float), times.shape)
    if tol is None:
        tolv = 1e-3 * np.maximum(1.0, np.abs(ref))
    else:
        if tol <= 0.0:
            raise ValueError("tol must be > 0")
        tolv = np.full_like(times, tol)
    err = np.max(np.abs(x - ref[:, None]), axis=1)
    ok = err <= tolv
    if times[-1] - times[0] < hold:
        return None
    dt = times[1] - times[0] if len(times) > 1 else 0.0
    win = max(1, int(round(hold / dt))) if dt > 0 else 1
    # run-length trick: first index i with ok[i:i+win+1] all true and window in range
    bad = ~ok
    # suffix count of consecutive ok starting at each index
    run = np.zeros(len(ok), dtype=int)
    cnt = 0
    for i in range(len(ok) - 1, -1, -1):
        cnt = 0 if bad[i] else cnt + 1
        run[i] = cnt
    for i in range(len(ok)):
        if times[i] + hold > times[-1] + 1e-12:
            break
        if run[i] >= win + 1:
            return float(times[i])
    return None


def event_statistics(records):
    """Fleet and per-agent event-count / interval statistics."""
    agents = sorted({r.agent for r in records})
    per_agent = {}
    all_intervals = []
    for a in agents:
        ints = [r.interval for r in records if r.agent == a]
        all_intervals.extend(ints)
        per_agent[a] = {
            "count": len(ints),
            "mean_interval": float(np.mean(ints)) if ints else None,
            "min_interval": float(np.min(ints)) if ints else None,
        }
    fleet = {
        "count": len(records),
        "mean_interval": float(np.mean(all_intervals)) if all_intervals else None,
        "min_interval": float(np.min(all_intervals)) if all_intervals else None,
        "per_agent": per_agent,
    }
    return fleet


def overshoot(series: np.ndarray, start, final) -> float:
    """Worst relative excursion past `final` in the approach direction.

    series is (T,) or (T, n); start/final are scalars or per-agent arrays.
    Returns 0 when no trajectory crosses its target or the step is
    degenerate.
    """
    x = np.asarray(series, float)
    if x.ndim == 1:
        x = x[:, None]
    q0 = np.broadcast_to(np.asarray(start, float), (x.shape[1],))
    qf = np.broadcast_to(np.asarray(final, float), (x.shape[1],))
    step = qf - q0
    worst = 0.0
    for k in range(x.shape[1]):
        if abs(step[k]) < 1e-15:
            continue
        past = (x[:, k] - qf[k]) * np.sign(step[k])
        worst = max(worst, float(past.max()) / abs(step[k]))
    return max(0.0, worst)


class _AgentIO:
    """Per-agent event bookkeeping shared by both trigger modes."""

    def __init__(self, n: int):
        self.held = [HeldSample() for _ in range(n)]
        self.last_event_t = np.zeros(n)
        self.rate = np.zeros(n)  # current zeta_dot estimate (reconstruction)


def run_scenario(spec: ScenarioSpec) -> RunResult:
    """Execute one scenario; deterministic in every detail."""
    model = spec.model
    topo = spec.topology
    gains = spec.gains
    n = topo.n_agents
    adj = topo.adjacency
    deg = topo.degrees
    gpin = topo.pinning
    k_soc = spec.k_soc
    p_dis = np.array([u.p_dis for u in spec.units])
    p_dis_total = spec.p_dis_total
    dt = spec.dt
    steps = int(round(spec.horizon / dt))
    leader_period = spec.leader_period if spec.leader_period > 0 else 10.0 * dt
    leader_stride = max(1, int(round(leader_period / dt)))

    Q = grounded_matrix(laplacian(topo), topo)
    feas = check_feasibility(gains, Q)
    if spec.variant == "proposed" and not feas.feasible:
        log.warning("%s: gain conditions not certified (cond1=%.3g, cond2=%.3g, "
                    "rho_upper=%.3g); running anyway", spec.name,
                    feas.cond1_value, feas.cond2_value, feas.rho_upper)

    # load split weights over load nodes
    loads = model.load_idx
    weights = model.p_load[loads]
    weights = (weights / weights.sum()) if weights.sum() > 0 else (
        np.full(len(loads), 1.0 / max(1, len(loads))))

    def load_vector(total: float) -> np.ndarray:
        v = np.zeros(model.n)
        v[loads] = total * weights
        return v

    # initial conditions, deviations scaled about the leader values
    load_total0 = _schedule_value(spec.load_schedule, 0.0)
    res_scale0 = _schedule_value(spec.res_scale_schedule, 0.0)
    p_mis0 = load_total0 - res_scale0 * float(np.sum(model.p_nom[model.res_idx]))
    lam_star0 = leader_reference(p_mis0, spec.units)
    s = spec.leader_soc_init + spec.ic_scale * (
        np.asarray(spec.soc_init, float) - spec.leader_soc_init)
    lam = np.clip(lam_star0 + spec.ic_scale * (
        np.asarray(spec.lambda_init, float) - lam_star0), -1.0, 1.0)
    q = k_soc * lam
    p_ref = lam * p_dis
    leader = LeaderState.initial(spec.leader_soc_init, lam_star0, k_soc)

    # plant: solve initial load phases for a consistent algebraic start
    phase0, resid0 = solve_load_phases(model, np.zeros(model.n),
                                       load_vector(load_total0), spec.newton_tol)
    p0 = model.injections(phase0)
    refs = np.zeros(model.n)
    refs[model.res_idx] = res_scale0 * model.p_nom[model.res_idx]
    refs[model.bess_idx] = p_ref
    omega0 = np.full(model.n, np.nan)
    omega0[model.dyn_idx] = -model.kp[model.dyn_idx] * (
        p0[model.dyn_idx] - refs[model.dyn_idx])
    plant = PlantState(phase=phase0, omega_dev=omega0, p_inj=p0, t=0.0,
                       residual=resid0)

    io = _AgentIO(n)
    u = np.zeros(n)
    active = False
    activation_times = []
    release_armed_at = None
    events: list = []
    recon = spec.trigger_mode == "reconstructed"

    T = steps + 1
    rec = {
        "t": np.zeros(T), "lam": np.zeros((T, n)), "soc": np.zeros((T, n)),
        "omega_dev": np.zeros((T, n)), "p_inj": np.zeros((T, n)),
        "p_ref": np.zeros((T, n)), "f": np.full((T, n), np.nan),
        "lam_star": np.zeros(T), "soc_r": np.zeros(T), "omega_syn": np.zeros(T),
        "load": np.zeros(T),
    }
    residual_max = 0.0
    imbalance_max = 0.0
    bracket_max = np.zeros(n)
    soc_lo_arr = np.array([un.soc_lo for un in spec.units])
    soc_hi_arr = np.array([un.soc_hi for un in spec.units])

    def current_phi_true():
        xi = deg * s - adj @ s + gpin * (s - leader.soc_r)
        ze = deg * q - adj @ q + gpin * (q - leader.q_r)
        return xi, ze, gains.alpha * xi + gains.beta * ze

    def rate_vector() -> np.ndarray:
        # zeta_dot from currently known inputs; leader rate is 0 between jumps
        return (deg + gpin) * u - adj @ u

    def rebase_agent(i: int, t: float, xi, ze, phi, new_u: float):
        io.held[i].reset(t, float(xi[i]), float(ze[i]), float(phi[i]), new_u)

    def omega_formula(res_scale, load_total) -> float:
        refs_now = np.zeros(model.n)
        refs_now[model.res_idx] = res_scale * model.p_nom[model.res_idx]
        refs_now[model.bess_idx] = p_ref
        return sync_frequency(model, refs_now, load_vector(load_total))

    def record(k, t, f_vals, lam_star, omega_s, load_total):
        rec["t"][k] = t
        rec["lam"][k] = lam
        rec["soc"][k] = s
        rec["omega_dev"][k] = plant.omega_dev[model.bess_idx]
        rec["p_inj"][k] = plant.p_inj[model.bess_idx]
        rec["p_ref"][k] = p_ref
        rec["f"][k] = f_vals
        rec["lam_star"][k] = lam_star
        rec["soc_r"][k] = leader.soc_r
        rec["omega_syn"][k] = omega_s
        rec["load"][k] = load_total

    record(0, 0.0, np.full(n, np.nan), lam_star0, omega_formula(res_scale0,
           load_total0), load_total0)

    omega_meas = omega_formula(res_scale0, load_total0)
    lam_star_meas = lam_star0

    for k in range(steps):
        t = k * dt
        load_total = _schedule_value(spec.load_schedule, t)
        res_scale = _schedule_value(spec.res_scale_schedule, t)
        p_load_vec = load_vector(load_total)
        p_mis = load_total - res_scale * float(np.sum(model.p_nom[model.res_idx]))

        # leader measurement tick: ratio reference and deadband frequency
        if k % leader_stride == 0:
            lam_star_new = leader_reference(p_mis, spec.units)
            leader_jumped = abs(lam_star_new - leader.lambda_r) > 0.0
            leader.lambda_r = lam_star_new
            leader.q_r = k_soc * lam_star_new
            lam_star_meas = lam_star_new
            omega_meas = omega_formula(res_scale, load_total)
            if recon and active and leader_jumped:
                # pinned agents silently refresh their base at a leader jump
                xi, ze, phi = current_phi_true()
                r = rate_vector()
                for i in np.nonzero(gpin > 0)[0]:
                    rebase_agent(int(i), t, xi, ze, phi, io.held[i].u)
                    io.held[i].segments.append((t, float(r[i])))

        # controller activation: start time plus (optional) deadband latch
        if not active and t + 1e-12 >= spec.control_start:
            trip = (not spec.constraints.enabled) or (
                abs(omega_meas) > spec.constraints.freq_band)
            if trip:
                active = True
                activation_times.append(t)
                release_armed_at = None
                xi, ze, phi = current_phi_true()
                for i in range(n):
                    new_u = control_input(spec.variant, float(phi[i]), gains)
                    rebase_agent(i, t, xi, ze, phi, new_u)
                    io.last_event_t[i] = t
                    if recon:
                        io.held[i].segments = []
                u = np.array([io.held[i].u for i in range(n)])
                if recon:
                    r = rate_vector()
                    for i in range(n):
                        io.held[i].segments.append((t, float(r[i])))

        f_vals = np.full(n, np.nan)
        if active:
            xi_true, ze_true, phi_true = current_phi_true()
            if recon:
                phi_now = np.empty(n)
                for i in range(n):
                    h = io.held[i]
                    zh = reconstruct_zeta(h.zeta, h.event_time, h.segments, t)
                    xh = reconstruct_xi(h.xi, h.zeta, h.event_time, h.segments, t)
                    phi_now[i] = gains.alpha * xh + gains.beta * zh
            else:
                phi_now = phi_true
            e = np.array([measurement_error(spec.variant, float(phi_now[i]),
                                            io.held[i], gains) for i in range(n)])
            fired = np.zeros(n, dtype=bool)
            changed = np.zeros(n, dtype=bool)
            for i in range(n):
                hit, f = trigger_check(float(e[i]), float(phi_now[i]), gains.rho)
                f_vals[i] = f
                if not hit:
                    continue
                if abs(phi_now[i]) <= spec.rest_phi:
                    # numerical consensus: freeze the input, no event recorded
                    if io.held[i].u != 0.0:
                        io.held[i].u = 0.0
                        changed[i] = True
                    continue
                # real event: pull fresh neighborhood samples, rebuild input
                new_u = control_input(spec.variant, float(phi_true[i]), gains)
                events.append(EventRecord(agent=i, time=t,
                                          interval=t - io.last_event_t[i],
                                          f_value=float(f)))
                rebase_agent(i, t, xi_true, ze_true, phi_true, new_u)
                io.last_event_t[i] = t
                fired[i] = True
                changed[i] = True
                ap = abs(phi_true[i])
                if ap > 1e-300:
                    bracket_max[i] = max(
                        bracket_max[i],
                        gains.k1 * gains.gamma1 * ap ** (gains.gamma1 - 1.0)
                        + gains.k2 * gains.gamma2 * ap ** (gains.gamma2 - 1.0)
                        + gains.k3)
            if changed.any():
                u = np.array([io.held[i].u for i in range(n)])
                if recon:
                    r = rate_vector()
                    touched = changed | (adj @ changed.astype(float) > 0)
                    for i in np.nonzero(touched)[0]:
                        if fired[i]:
                            io.held[i].segments = [(t, float(r[i]))]
                        else:
                            io.held[i].segments.append((t, float(r[i])))

        # limited integrator with exact-in-step double integration; while the
        # secondary layer is held, q stays frozen but the SoC keeps draining
        # at the held reference and the leader re-anchors to the fleet.
        if active:
            q_new = k_soc * np.clip((q + u * dt) / k_soc, -1.0, 1.0)
            leader_ds = leader.q_r * dt
        else:
            q_new = q
            leader_ds = float(np.mean(q)) * dt
        if spec.constraints.enabled:
            # SoC protection cuts the integrator of out-of-bounds agents
            q_new = np.where((s <= soc_lo_arr) | (s >= soc_hi_arr), 0.0, q_new)
        s = s + 0.5 * (q + q_new) * dt
        if np.any((s < 0.0) | (s > 1.0)):
            log.warning("%s: SoC clamped to [0,1] at t=%.3f", spec.name, t)
            s = np.clip(s, 0.0, 1.0)
        q = q_new
        lam = q / k_soc
        leader.soc_r += leader_ds

        if spec.constraints.enabled:
            for i, unit in enumerate(spec.units):
                st = BessState(soc=float(s[i]), lam=float(lam[i]),
                               q=float(q[i]), p_ref=float(lam[i] * p_dis[i]))
                st, _ = apply_local_constraints(st, unit, omega_meas, True,
                                                spec.constraints)
                s[i], lam[i], q[i] = st.soc, st.lam, st.q

            # sustained consensus releases the deadband latch
            if active:
                err = float(np.max(np.abs(lam - leader.lambda_r)))
                if err < spec.constraints.consensus_tol:
                    if release_armed_at is None:
                        release_armed_at = t
                    elif t - release_armed_at >= spec.constraints.release_hold:
                        active = False
                else:
                    release_armed_at = None

        p_ref = lam * p_dis

        # plant step with the (possibly updated) references
        refs = np.zeros(model.n)
        refs[model.res_idx] = res_scale * model.p_nom[model.res_idx]
        refs[model.bess_idx] = p_ref
        plant = step_plant(model, plant, refs, p_load_vec, dt, spec.newton_tol)
        residual_max = max(residual_max, plant.residual)
        imbalance_max = max(imbalance_max, abs(float(np.sum(plant.p_inj))))

        record(k + 1, (k + 1) * dt, f_vals, leader.lambda_r, omega_formula(
            res_scale, load_total), load_total)

    stats = event_statistics(events)
    tau = settling_time(rec["t"], rec["lam"], rec["lam_star"])
    final_err = float(np.max(np.abs(rec["lam"][-1] - rec["lam_star"][-1])))
    metrics = {
        "settling_time": tau,
        "settled": tau is not None,
        "final_consensus_error": final_err,
        "final_frequency_error": float(abs(rec["omega_syn"][-1])),
        "final_soc_spread": float(rec["soc"][-1].max() - rec["soc"][-1].min()),
        "event_count": stats["count"],
        "mean_event_interval": stats["mean_interval"],
        "min_event_interval": stats["min_interval"],
        "activation_times": activation_times,
        "newton_residual_max": residual_max,
        "power_imbalance_max": imbalance_max,
        "event_rate_bracket_max": bracket_max.tolist(),
        "feasible": feas.feasible,
    }
    # overshoot of q over the first post-activation stage (reference step)
    if activation_times:
        t0 = activation_times[0]
        k0 = int(round(t0 / dt))
        after = [ts for ts, _ in spec.load_schedule if ts > t0]
        after += [ts for ts, _ in spec.res_scale_schedule if ts > t0]
        t1 = min(after) if after else spec.horizon
        k1 = int(round(t1 / dt))
        q_series = k_soc * rec["lam"][k0:k1 + 1]
        q_inf = k_soc * rec["lam_star"][min(k1, T - 1)]
        metrics["overshoot"] = overshoot(q_series, q_series[0], q_inf)
    else:
        metrics["overshoot"] = 0.0

    return RunResult(
        spec_name=spec.name, t=rec["t"], lam=rec["lam"], soc=rec["soc"],
        omega_dev=rec["omega_dev"], p_inj=rec["p_inj"], p_ref=rec["p_ref"],
        f_value=rec["f"], lambda_star=rec["lam_star"], soc_leader=rec["soc_r"],
        omega_syn=rec["omega_syn"], load_total=rec["load"], events=events,
        feasibility=feas, metrics=metrics)


def compare_initial_scaling(spec: ScenarioSpec, variants=VARIANTS,
                            scale_factors=(1.0, 10.0)) -> list:
    """Settling-time grid over controller variants x IC scale factors."""
    scale_factors = list(scale_factors)
    if len(scale_factors) < 2:
        raise ValueError("need at least two scale factors")
    rows = []
    for variant in variants:
        for scale in scale_factors:
            run = run_scenario(replace(spec, variant=variant, ic_scale=scale,
                                       name=f"{spec.name}[{variant},x{scale:g}]"))
            rows.append({
                "variant": variant,
                "ic_scale": scale,
                "settling_time": run.metrics["settling_time"],
                "overshoot": run.metrics["overshoot"],
                "mean_event_interval": run.metrics["mean_event_interval"],
                "final_consensus_error": run.metrics["final_consensus_error"],
            })
    return rows
