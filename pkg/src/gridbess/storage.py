"""Battery state-of-charge dynamics, the power-ratio integrator, and the
virtual-leader reference model.

Each BESS carries a ratio lambda_i = p_ref_i / p_dis_i; equal ratios
realize proportional sharing of the total mismatch.  SoC follows coulomb
counting of the reference power, so s_dot = k_soc * lambda with
k_soc = -p_dis / (capacity * v_dc) equal across the fleet.  The
secondary integrator q = k_soc * lambda is limited so lambda stays in
[-1, 1], and Algorithm-style local constraints (frequency deadband hold,
SoC bound cut-off) act on top of it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "BessUnit",
    "BessState",
    "LeaderState",
    "ConstraintConfig",
    "soc_derivative",
    "leader_reference",
    "step_leader",
    "integrate_lambda",
    "apply_local_constraints",
]

log = logging.getLogger(__name__)

DEFAULT_V_DC = 800.0      # volts
DEFAULT_K_SOC = -2e-4     # 1/s at full discharge


@dataclass(frozen=True)
class BessUnit:
    """Static battery parameters of one BESS."""

    id: str
    capacity: float          # coulombs
    v_dc: float              # volts
    p_dis: float             # W, > 0
    p_cha: float             # W, < 0
    soc_hi: float = 0.8
    soc_lo: float = 0.2

    def __post_init__(self):
        if not (self.p_cha < 0.0 < self.p_dis):
            raise ValueError(f"{self.id}: need p_cha < 0 < p_dis")
        if self.capacity <= 0.0 or self.v_dc <= 0.0:
            raise ValueError(f"{self.id}: capacity and v_dc must be > 0")
        if not 0.0 <= self.soc_lo < self.soc_hi <= 1.0:
            raise ValueError(f"{self.id}: need 0 <= soc_lo < soc_hi <= 1")

    @property
    def k_soc(self) -> float:
        """SoC rate at full discharge, -p_dis / (capacity * v_dc); negative."""
        return -self.p_dis / (self.capacity * self.v_dc)

    @classmethod
    def from_k_soc(cls, id: str, p_dis: float, p_cha: float,
                   k_soc: float = DEFAULT_K_SOC, v_dc: float = DEFAULT_V_DC,
                   **kw) -> "BessUnit":
        """Build a unit whose capacity realizes the requested k_soc."""
        if k_soc >= 0.0:
            raise ValueError("k_soc must be negative")
        capacity = p_dis / (-k_soc * v_dc)
        return cls(id=id, capacity=capacity, v_dc=v_dc, p_dis=p_dis,
                   p_cha=p_cha, **kw)


def fleet_k_soc(units) -> float:
    """Common k_soc of the fleet; rejects units that disagree beyond 1e-9."""
    ks = np.array([u.k_soc for u in units])
    if np.any(np.abs(ks - ks[0]) > 1e-9 * np.abs(ks[0])):
        raise ValueError("k_soc must be equal across the fleet "
                         f"(got spread {ks.min():.3e}..{ks.max():.3e})")
    return float(ks[0])


@dataclass
class BessState:
    """Dynamic state of one BESS: SoC, ratio, integrator state, reference."""

    soc: float
    lam: float
    q: float
    p_ref: float

    @classmethod
    def initial(cls, unit: BessUnit, soc: float, lam: float = 0.0) -> "BessState":
        lam = float(np.clip(lam, -1.0, 1.0))
        return cls(soc=soc, lam=lam, q=unit.k_soc * lam, p_ref=lam * unit.p_dis)


@dataclass
class LeaderState:
    """Virtual leader: reference SoC trajectory and consensus ratio."""

    soc_r: float
    lambda_r: float
    q_r: float

    @classmethod
    def initial(cls, soc_r: float, lambda_r: float, k_soc: float) -> "LeaderState":
        return cls(soc_r=soc_r, lambda_r=lambda_r, q_r=k_soc * lambda_r)


@dataclass(frozen=True)
class ConstraintConfig:
    """Algorithm-style local constraints: deadband hold and SoC cut-off."""

    enabled: bool = False
    freq_band: float = 2.0 * np.pi * 0.1   # rad/s
    release_hold: float = 0.5              # s of consensus before re-arming
    consensus_tol: float = 1e-3


def soc_derivative(unit: BessUnit, p_ref: float) -> float:
    """Coulomb-counting SoC rate for a given reference power (1/s)."""
    return -p_ref / (unit.capacity * unit.v_dc)


def leader_reference(p_mis: float, units) -> float:
    """Consensus ratio lambda* = total mismatch over total discharge power."""
    total_dis = float(sum(u.p_dis for u in units))
    if not units or total_dis <= 0.0:
        raise ValueError("fleet must contain at least one unit with p_dis > 0")
    return p_mis / total_dis


def step_leader(leader: LeaderState, p_mis: float, units, k_soc: float,
                dt: float) -> LeaderState:
    """Advance the virtual leader one step.

    lambda_r tracks the (piecewise-constant) consensus ratio for the
    current mismatch; soc_r integrates exactly since q_r is constant
    within the step.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    lam_r = leader_reference(p_mis, units)
    q_r = k_soc * lam_r
    return LeaderState(soc_r=leader.soc_r + leader.q_r * dt,
                       lambda_r=lam_r, q_r=q_r)


def integrate_lambda(state: BessState, unit: BessUnit, u: float,
                     dt: float) -> BessState:
    """Advance (q, lambda, p_ref, soc) one step under held input u.

    q integrates u; lambda = q / k_soc is clamped to [-1, 1] (limited
    integrator) and the clamp is reflected back into q.  SoC uses the
    trapezoid of q so its slew rate respects the clamp even when u is
    large within the step.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    k_soc = unit.k_soc
    q_raw = state.q + u * dt
    lam = float(np.clip(q_raw / k_soc, -1.0, 1.0))
    q_new = k_soc * lam
    soc = state.soc + 0.5 * (state.q + q_new) * dt
    if not 0.0 <= soc <= 1.0:
        log.warning("%s: SoC clamped to [0,1] (was %.4f)", unit.id, soc)
        soc = float(np.clip(soc, 0.0, 1.0))
    return BessState(soc=soc, lam=lam, q=q_new, p_ref=lam * unit.p_dis)


def apply_local_constraints(state: BessState, unit: BessUnit, omega_syn: float,
                            ctrl_active: bool, cfg: ConstraintConfig):
    """Frequency deadband and SoC bounds; returns (state, ctrl_active).

    While inactive and |omega_syn| inside the band, the reference is held
    (no integration happens upstream).  Crossing the band latches
    ctrl_active; release is handled by the engine after sustained
    consensus.  At either SoC bound the integrator state q is forced to
    zero, which also zeroes lambda and the power reference.
    """
    if cfg.enabled and not ctrl_active and abs(omega_syn) > cfg.freq_band:
        ctrl_active = True
    if cfg.enabled and (state.soc >= unit.soc_hi or state.soc <= unit.soc_lo):
        state = replace(state, lam=0.0, q=0.0, p_ref=0.0)
    return state, ctrl_active
