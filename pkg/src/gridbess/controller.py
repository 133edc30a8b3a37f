"""Secondary control laws and event-triggering machinery.

Implements the combined fractional/superlinear/linear consensus law

    u_i = -k1 sig(phi_i)^g1 - k2 sig(phi_i)^g2 - k3 phi_i,

its two comparison baselines (fractional-only and linear-only), the
measurement-error trigger f_i = |e_i| - rho |phi_i|, and the discrete
reconstruction of the neighborhood errors (xi_i, zeta_i) from samples
and piecewise-constant derivative segments, which removes the need for
continuous neighbor monitoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GainSet",
    "HeldSample",
    "EventRecord",
    "sig_pow",
    "consensus_errors",
    "control_input_proposed",
    "control_input_finite_baseline",
    "control_input_asymptotic_baseline",
    "measurement_error",
    "trigger_check",
    "reconstruct_zeta",
    "reconstruct_xi",
    "homogeneity_triples",
]

VARIANTS = ("proposed", "finite_baseline", "asymptotic_baseline")


@dataclass(frozen=True)
class GainSet:
    """Secondary-controller gains.

    k1, k2, k3 weight the fractional, superlinear and linear terms;
    alpha and beta mix the state error xi and rate error zeta into
    phi = alpha*xi + beta*zeta; gamma1 in (0,1) and gamma2 > 1 are the
    sig-power exponents; rho > 0 is the trigger threshold and d > 0 the
    free Young's-inequality parameter of the feasibility conditions.
    """

    k1: float
    k2: float
    k3: float
    alpha: float
    beta: float
    gamma1: float = 0.5
    gamma2: float = 1.5
    rho: float = 0.1
    d: float = 1.0

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "alpha", "beta", "rho", "d"):
            v = getattr(self, name)
            if not v > 0.0:
                raise ValueError(f"gain {name} must be > 0, got {v}")
        if not 0.0 < self.gamma1 < 1.0:
            raise ValueError(f"gamma1 must be in (0,1), got {self.gamma1}")
        if not self.gamma2 > 1.0:
            raise ValueError(f"gamma2 must be > 1, got {self.gamma2}")


@dataclass
class HeldSample:
    """Zero-order-hold state of one agent between its own events.

    Neighbor/self/leader samples are refreshed at the agent's event
    instants; `u` stays frozen in between.  In reconstruction mode the
    derivative segments (t, zeta_dot) accumulate whenever a value in the
    closed neighborhood changes, so xi/zeta can be rebuilt from discrete
    information alone.
    """

    event_time: float = 0.0
    xi: float = 0.0
    zeta: float = 0.0
    phi: float = 0.0
    u: float = 0.0
    segments: list = field(default_factory=list)  # [(t_start, zeta_dot), ...]

    def reset(self, t: float, xi: float, zeta: float, phi: float, u: float):
        self.event_time = t
        self.xi = xi
        self.zeta = zeta
        self.phi = phi
        self.u = u
        self.segments = []


@dataclass(frozen=True)
class EventRecord:
    agent: int
    time: float
    interval: float
    f_value: float


def sig_pow(x: float, gamma: float):
    """|x|^gamma * sgn(x); odd in x, and sig_pow(0, gamma) = 0."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return np.abs(x) ** gamma * np.sign(x)


def consensus_errors(i: int, s, q, s_r: float, q_r: float, adjacency, pinning,
                     alpha: float, beta: float):
    """Neighborhood errors (xi_i, zeta_i, phi_i) for agent i.

    xi_i = sum_{j in N_i} (s_i - s_j) + g_i (s_i - s_r) and zeta_i the
    analogue in q, with the uniform follower-minus-leader sign so that
    the stacked vectors satisfy xi = Q s_hat and zeta = Q q_hat.
    """
    adjacency = np.asarray(adjacency, float)
    nbrs = np.nonzero(adjacency[i])[0]
    s = np.asarray(s, float)
    q = np.asarray(q, float)
    if np.any(np.isnan(s[nbrs])) or np.any(np.isnan(q[nbrs])):
        raise ValueError(f"missing neighbor sample for agent {i}")
    g = pinning[i]
    xi = float(np.sum(s[i] - s[nbrs]) + g * (s[i] - s_r))
    zeta = float(np.sum(q[i] - q[nbrs]) + g * (q[i] - q_r))
    return xi, zeta, alpha * xi + beta * zeta


def control_input_proposed(phi_i: float, gains: GainSet) -> float:
    """Full secondary law: fractional + superlinear + linear feedback on phi."""
    return float(-gains.k1 * sig_pow(phi_i, gains.gamma1)
                 - gains.k2 * sig_pow(phi_i, gains.gamma2)
                 - gains.k3 * phi_i)


def control_input_finite_baseline(phi_i: float, gains: GainSet) -> float:
    """Fractional-power term only (classical finite-time baseline)."""
    return float(-gains.k1 * sig_pow(phi_i, gains.gamma1))


def control_input_asymptotic_baseline(phi_i: float, k3: float) -> float:
    """Linear consensus baseline u = -k3 phi."""
    if k3 <= 0.0:
        raise ValueError(f"k3 must be > 0, got {k3}")
    return float(-k3 * phi_i)


def control_input(variant: str, phi_i: float, gains: GainSet) -> float:
    if variant == "proposed":
        return control_input_proposed(phi_i, gains)
    if variant == "finite_baseline":
        return control_input_finite_baseline(phi_i, gains)
    if variant == "asymptotic_baseline":
        return control_input_asymptotic_baseline(phi_i, gains.k3)
    raise ValueError(f"unknown controller variant {variant!r}")


def measurement_error(variant: str, phi_current: float, held: HeldSample,
                      gains: GainSet) -> float:
    """e_i(t) = u_i(held) - u_i(current), both through the same law."""
    return held.u - control_input(variant, phi_current, gains)


def trigger_check(e_i: float, phi_i: float, rho: float):
    """Trigger value f_i = |e_i| - rho |phi_i|; fires when f_i >= 0."""
    if rho <= 0.0:
        raise ValueError(f"rho must be > 0, got {rho}")
    f = abs(e_i) - rho * abs(phi_i)
    return f >= 0.0, f


def _validated_segments(segments, t_k: float, t: float):
    if not segments:
        raise ValueError("empty derivative segment list")
    times = [seg[0] for seg in segments]
    if abs(times[0] - t_k) > 1e-12:
        raise ValueError("first segment must start at the event time")
    if any(t1 >= t2 for t1, t2 in zip(times, times[1:])):
        raise ValueError("derivative segments must be strictly increasing in time")
    if t < t_k - 1e-12:
        raise ValueError("query time precedes the event time")
    return times


def reconstruct_zeta(zeta_base: float, t_k: float, segments, t: float) -> float:
    """zeta_i(t) from its sampled base value and piecewise-constant derivative.

    segments is [(t_h, zeta_dot_h), ...] with t_0 = t_k; each rate holds
    until the next segment start (the last one holds through t).
    """
    times = _validated_segments(segments, t_k, t)
    val = zeta_base
    for idx, (t_h, rate) in enumerate(segments):
        t_end = times[idx + 1] if idx + 1 < len(times) else t
        if t_end <= t_h:
            continue
        if t_h >= t:
            break
        val += rate * (min(t_end, t) - t_h)
    return val


def reconstruct_xi(xi_base: float, zeta_base: float, t_k: float, segments,
                   t: float) -> float:
    """xi_i(t) by double integration of the piecewise-constant zeta rate.

    Accumulates exactly: xi(t) = xi(t_k) + integral of zeta over [t_k, t]
    with zeta itself rebuilt segment by segment, so the result matches
    quadrature of reconstruct_zeta to rounding error even across segment
    boundaries.
    """
    times = _validated_segments(segments, t_k, t)
    xi = xi_base
    zeta = zeta_base
    for idx, (t_h, rate) in enumerate(segments):
        t_end = times[idx + 1] if idx + 1 < len(times) else t
        if t_h >= t:
            break
        dt_seg = min(t_end, t) - t_h
        if dt_seg <= 0.0:
            continue
        xi += zeta * dt_seg + 0.5 * rate * dt_seg * dt_seg
        zeta += rate * dt_seg
    return xi


def homogeneity_triples(gains: GainSet):
    """Homogeneity (weight, degree) pairs at the origin and at infinity.

    Near the origin the closed loop is homogeneous of degree -1 with
    weights 1/(1-gamma1); at infinity of degree +1 with weights
    1/(gamma2-1).  gamma1 -> 1 or gamma2 -> 1 are poles of the formulas.
    """
    if not 0.0 < gains.gamma1 < 1.0:
        raise ValueError(f"gamma1 must be in (0,1), got {gains.gamma1}")
    if not gains.gamma2 > 1.0:
        raise ValueError(f"gamma2 must be > 1, got {gains.gamma2}")
    r_z = 1.0 / (1.0 - gains.gamma1)
    r_infty = 1.0 / (gains.gamma2 - 1.0)
    if not (math.isfinite(r_z) and math.isfinite(r_infty)):
        raise ValueError("homogeneity weights overflow for the given exponents")
    return (r_z, -1.0), (r_infty, 1.0)
