"""Physical microgrid model.

Lossless sinusoidal line flows, p-f droop at the generating nodes, and
the semi-explicit index-1 DAE formed by droop-node phase dynamics plus
algebraic load-bus power balance.  Voltage magnitudes are held at their
nominal value; only the active-power/frequency branch is modeled.

Sign convention: injections are positive into the network.  Load demand
is stored as a non-negative magnitude p_load with injection -p_load.
BESS power is positive when discharging, negative when charging, with a
single positive droop gain (the charging-mode sign lives in the signed
power, not in the gain).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhysNode",
    "Line",
    "PlantModel",
    "PlantState",
    "PlantError",
    "NewtonError",
    "line_power",
    "droop_frequency",
    "solve_load_phases",
    "step_plant",
    "sync_frequency",
    "total_mismatch",
    "check_capacity",
]

log = logging.getLogger(__name__)

V_NOM = 311.0          # volts, per-phase amplitude baseline
DEFAULT_KP = 2e-5      # rad/s per watt, default mapping of a 0.02-style table entry


class PlantError(RuntimeError):
    pass


class NewtonError(PlantError):
    """Load-phase solve failed; carries the last residual."""

    def __init__(self, msg: str, residual: float):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class PhysNode:
    """One bus: a renewable source (RES), a battery inverter (BESS) or a load."""

    id: str
    kind: str                     # "RES" | "BESS" | "LOAD"
    v_mag: float = V_NOM
    kp: float = DEFAULT_KP        # droop gain, RES/BESS only
    p_nom: float = 0.0            # RES nominal injection, W
    p_rat: float = float("inf")   # RES rating, W
    p_load: float = 0.0           # load magnitude, W (injection is -p_load)

    def __post_init__(self):
        if self.kind not in ("RES", "BESS", "LOAD"):
            raise PlantError(f"unknown node kind {self.kind!r}")
        if self.v_mag <= 0.0:
            raise PlantError(f"node {self.id}: v_mag must be > 0")
        if self.kind in ("RES", "BESS"):
            if self.kp <= 0.0:
                raise PlantError(f"node {self.id}: droop gain must be > 0")
        if self.kind == "RES" and not 0.0 <= self.p_nom <= self.p_rat:
            raise PlantError(f"node {self.id}: need 0 <= p_nom <= p_rat")
        if self.kind == "LOAD" and self.p_load < 0.0:
            raise PlantError(f"node {self.id}: p_load must be >= 0")


@dataclass(frozen=True)
class Line:
    """Lossless line between two buses, |Z| in ohms at delta = 90 degrees."""

    i: int
    j: int
    x_ohm: float

    def __post_init__(self):
        if self.x_ohm <= 0.0:
            raise PlantError(f"line ({self.i},{self.j}): reactance must be > 0")
        if self.i == self.j:
            raise PlantError(f"line endpoints must differ, got ({self.i},{self.j})")


class PlantModel:
    """Static network data with index arrays precomputed for the solver."""

    def __init__(self, nodes, lines):
        self.nodes = list(nodes)
        self.lines = list(lines)
        n = len(self.nodes)
        for ln in self.lines:
            if not (0 <= ln.i < n and 0 <= ln.j < n):
                raise PlantError(f"line ({ln.i},{ln.j}) references unknown node")
        self.n = n
        self.kinds = np.array([nd.kind for nd in self.nodes])
        self.dyn_idx = np.nonzero(self.kinds != "LOAD")[0]
        self.load_idx = np.nonzero(self.kinds == "LOAD")[0]
        self.res_idx = np.nonzero(self.kinds == "RES")[0]
        self.bess_idx = np.nonzero(self.kinds == "BESS")[0]
        if len(self.dyn_idx) == 0:
            raise PlantError("model needs at least one droop (RES/BESS) node")
        self.kp = np.array([nd.kp if nd.kind != "LOAD" else np.nan
                            for nd in self.nodes])
        self.v = np.array([nd.v_mag for nd in self.nodes])
        self.p_nom = np.array([nd.p_nom for nd in self.nodes])
        self.p_load = np.array([nd.p_load for nd in self.nodes])
        self._li = np.array([ln.i for ln in self.lines], dtype=int)
        self._lj = np.array([ln.j for ln in self.lines], dtype=int)
        self._c = np.array([self.v[ln.i] * self.v[ln.j] / ln.x_ohm
                            for ln in self.lines])
        if not _phys_connected(n, self._li, self._lj):
            raise PlantError("power network must be connected")
        # signed incidence matrix: injections(phase) = B @ (c * sin(B.T phase))
        m = len(self.lines)
        self._B = np.zeros((n, m))
        self._B[self._li, np.arange(m)] = 1.0
        self._B[self._lj, np.arange(m)] = -1.0

    def injections(self, phase: np.ndarray) -> np.ndarray:
        """Net power injected into the network at each bus for given phases."""
        return self._B @ (self._c * np.sin(self._B.T @ phase))

    def power_scale(self, p_load_total: float) -> float:
        return max(1.0, abs(p_load_total) + float(np.sum(self.p_nom)))


def _phys_connected(n, li, lj) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    adj = [[] for _ in range(n)]
    for a, b in zip(li, lj):
        adj[a].append(b)
        adj[b].append(a)
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if not seen[y]:
                seen[y] = True
                stack.append(y)
    return bool(seen.all())


@dataclass
class PlantState:
    """Dynamic plant state: phases, frequency deviations, injections."""

    phase: np.ndarray
    omega_dev: np.ndarray  # rad/s, NaN at load nodes
    p_inj: np.ndarray      # W
    t: float = 0.0
    residual: float = 0.0  # last load-balance residual, W


def line_power(v_i: float, v_j: float, phi_i: float, phi_j: float, z: float) -> float:
    """Active power sent from bus i to bus j over a lossless line."""
    if z <= 0.0:
        raise PlantError(f"line reactance must be > 0, got {z}")
    return v_i * v_j * np.sin(phi_i - phi_j) / z


def droop_frequency(node: PhysNode, p_inj: float, p_ref: float) -> float:
    """Frequency deviation of a droop node: -kp * (p_inj - p_ref)."""
    if node.kind == "LOAD":
        raise PlantError(f"node {node.id}: loads have no droop characteristic")
    return -node.kp * (p_inj - p_ref)


def solve_load_phases(model: PlantModel, phase: np.ndarray, p_load: np.ndarray,
                      tol: float = 1e-8, max_iter: int = 50) -> tuple:
    """Newton solve of the algebraic load rows; returns (phase, residual).

    Dynamic-node phases are held fixed; the load-node phases are updated
    until the balance  -p_load_i - sum_j flow_ij  has infinity norm at or
    below tol * power_scale.  Non-convergence raises NewtonError with the
    last residual (infeasible loading or a load beyond line capacity).
    """
    phase = phase.copy()
    loads = model.load_idx
    if len(loads) == 0:
        return phase, 0.0
    scale = model.power_scale(float(np.sum(p_load)))
    tol_abs = tol * scale
    B_L = model._B[loads]
    residual = np.inf
    for _ in range(max_iter):
        diff = model._B.T @ phase
        F = -p_load[loads] - B_L @ (model._c * np.sin(diff))
        residual = float(np.max(np.abs(F)))
        if residual <= tol_abs:
            return phase, residual
        # d p_load-row / d phi = B_L diag(c cos) B_L^T, balance is its negative
        J = -(B_L * (model._c * np.cos(diff))) @ B_L.T
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular load Jacobian: {exc}", residual) from None
        # keep Newton inside the sin() monotone region
        step = np.clip(step, -0.5, 0.5)
        phase[loads] += step
    raise NewtonError(
        f"load-phase Newton did not converge in {max_iter} iterations "
        f"(residual {residual:.3e} W)", residual)


def _derivative(model: PlantModel, phase: np.ndarray, refs: np.ndarray,
                p_load: np.ndarray, tol: float):
    """Phase derivative of droop nodes after re-solving the load rows."""
    phase, residual = solve_load_phases(model, phase, p_load, tol)
    p = model.injections(phase)
    dphi = np.zeros(model.n)
    dyn = model.dyn_idx
    dphi[dyn] = -model.kp[dyn] * (p[dyn] - refs[dyn])
    return dphi, phase, p, residual


def step_plant(model: PlantModel, state: PlantState, refs: np.ndarray,
               p_load: np.ndarray, dt: float, tol: float = 1e-8) -> PlantState:
    """Advance droop-node phases one RK4 step and re-solve the load rows.

    refs holds the per-node power reference (p_nom for RES, the secondary
    reference for BESS, ignored at loads); p_load the per-node demand
    magnitudes.  Load phases are re-solved at every stage, making this a
    semi-explicit index-1 integrator.
    """
    if dt <= 0.0:
        raise PlantError(f"dt must be > 0, got {dt}")
    phase = state.phase
    k1, ph1, _, _ = _derivative(model, phase, refs, p_load, tol)
    k2, ph2, _, _ = _derivative(model, ph1 + 0.5 * dt * k1, refs, p_load, tol)
    k3, ph3, _, _ = _derivative(model, ph2 + 0.5 * dt * k2, refs, p_load, tol)
    k4, ph4, _, _ = _derivative(model, ph3 + dt * k3, refs, p_load, tol)
    new_phase = phase.copy()
    dyn = model.dyn_idx
    new_phase[dyn] += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)[dyn]
    new_phase[model.load_idx] = ph4[model.load_idx]  # warm start, re-solved below
    new_phase, residual = solve_load_phases(model, new_phase, p_load, tol)
    p = model.injections(new_phase)
    omega = np.full(model.n, np.nan)
    omega[dyn] = -model.kp[dyn] * (p[dyn] - refs[dyn])
    return PlantState(phase=new_phase, omega_dev=omega, p_inj=p,
                      t=state.t + dt, residual=residual)


def sync_frequency(model: PlantModel, refs: np.ndarray, p_load: np.ndarray) -> float:
    """Steady-state common frequency deviation for frozen references.

    (sum of RES nominals + sum of BESS references - total load) divided
    by the sum of inverse droop gains over all droop nodes.
    """
    num = (float(np.sum(refs[model.res_idx]))
           + float(np.sum(refs[model.bess_idx]))
           - float(np.sum(p_load[model.load_idx])))
    den = float(np.sum(1.0 / model.kp[model.dyn_idx]))
    return num / den


def total_mismatch(model: PlantModel, p_load: np.ndarray,
                   res_scale: float = 1.0) -> float:
    """Total power mismatch: total load magnitude minus scaled RES nominals."""
    return float(np.sum(p_load[model.load_idx])
                 - res_scale * np.sum(model.p_nom[model.res_idx]))


def check_capacity(model: PlantModel, load_levels, p_dis_total: float,
                   p_cha_total: float, res_scale: float = 1.0) -> bool:
    """True iff the BESS fleet can cover the load band around the RES output.

    Requires max-load mismatch <= total discharge power and min-load
    mismatch >= total (negative) charge power.
    """
    levels = np.asarray(list(load_levels), dtype=float)
    if levels.size == 0:
        raise PlantError("load schedule must contain at least one level")
    p_res = res_scale * float(np.sum(model.p_nom[model.res_idx]))
    return bool(levels.max() - p_res <= p_dis_total
                and levels.min() - p_res >= p_cha_total)
