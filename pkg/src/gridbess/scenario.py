"""Scenario files: strict JSON loading and validation.

A scenario file mirrors engine.ScenarioSpec field for field.  Unknown
keys are rejected everywhere, every module-level invariant is checked at
load time, and errors name the offending field path.  Bundled scenario
files live in the package's scenarios/ directory.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import GainSet
from .engine import ScenarioSpec
from .netgraph import CommTopology, GraphError
from .plant import Line, PhysNode, PlantError, PlantModel, DEFAULT_KP, V_NOM
from .storage import BessUnit, ConstraintConfig

__all__ = ["ScenarioError", "load_scenario", "scenario_from_dict",
           "bundled_scenarios", "bundled_path"]


class ScenarioError(ValueError):
    """Scenario file is unreadable or violates a validation rule."""


def _reject_unknown(d: dict, allowed, where: str):
    extra = set(d) - set(allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown keys {sorted(extra)}")


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}: missing required key '{key}'")
    return d[key]


def _num(d: dict, key: str, where: str, default=None):
    if key not in d:
        if default is None:
            raise ScenarioError(f"{where}: missing required key '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _schedule(raw, where: str):
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(f"{where}: expected a non-empty list of [t, value]")
    out = []
    for k, entry in enumerate(raw):
        if (not isinstance(entry, list)) or len(entry) != 2:
            raise ScenarioError(f"{where}[{k}]: expected [time, value]")
        out.append((float(entry[0]), float(entry[1])))
    if out[0][0] > 0.0:
        raise ScenarioError(f"{where}: first entry must start at t = 0")
    if any(a[0] >= b[0] for a, b in zip(out, out[1:])):
        raise ScenarioError(f"{where}: times must be strictly increasing")
    return tuple(out)


_NODE_KEYS = {"id", "kind", "v_mag", "kp", "p_nom_w", "p_rat_w", "p_load_w"}
_UNIT_KEYS = {"id", "p_dis_w", "p_cha_w", "v_dc", "capacity_c", "k_soc",
              "soc_hi", "soc_lo"}
_GAIN_KEYS = {"k1", "k2", "k3", "alpha", "beta", "gamma1", "gamma2", "rho", "d"}
_CONSTRAINT_KEYS = {"enabled", "freq_band_hz", "release_hold_s",
                    "consensus_tol", "soc_hi", "soc_lo"}
_TOP_KEYS = {"name", "description", "plant", "bess_units", "comm", "gains",
             "variant", "load_schedule", "res_scale_schedule", "soc_init",
             "lambda_init", "leader_soc_init", "constraints", "control_start_s",
             "horizon_s", "dt_s", "trigger_mode", "rest_phi", "leader_period_s",
             "ic_scale", "newton_tol"}


def _build_nodes(raw, where: str):
    nodes = []
    for k, nd in enumerate(raw):
        w = f"{where}[{k}]"
        if not isinstance(nd, dict):
            raise ScenarioError(f"{w}: expected an object")
        _reject_unknown(nd, _NODE_KEYS, w)
        kind = _need(nd, "kind", w)
        try:
            if kind == "RES":
                p_nom = _num(nd, "p_nom_w", w)
                nodes.append(PhysNode(
                    id=str(_need(nd, "id", w)), kind="RES",
                    v_mag=_num(nd, "v_mag", w, V_NOM),
                    kp=_num(nd, "kp", w, DEFAULT_KP),
                    p_nom=p_nom, p_rat=_num(nd, "p_rat_w", w, p_nom)))
            elif kind == "BESS":
                nodes.append(PhysNode(
                    id=str(_need(nd, "id", w)), kind="BESS",
                    v_mag=_num(nd, "v_mag", w, V_NOM),
                    kp=_num(nd, "kp", w, DEFAULT_KP)))
            elif kind == "LOAD":
                nodes.append(PhysNode(
                    id=str(_need(nd, "id", w)), kind="LOAD",
                    v_mag=_num(nd, "v_mag", w, V_NOM),
                    p_load=_num(nd, "p_load_w", w, 1.0)))
            else:
                raise ScenarioError(f"{w}.kind: must be RES, BESS or LOAD")
        except PlantError as exc:
            raise ScenarioError(f"{w}: {exc}") from None
    return nodes


def _build_units(raw, soc_hi, soc_lo, where: str):
    units = []
    for k, ud in enumerate(raw):
        w = f"{where}[{k}]"
        if not isinstance(ud, dict):
            raise ScenarioError(f"{w}: expected an object")
        _reject_unknown(ud, _UNIT_KEYS, w)
        if ("capacity_c" in ud) == ("k_soc" in ud):
            raise ScenarioError(f"{w}: give exactly one of capacity_c or k_soc")
        kw = dict(
            p_dis=_num(ud, "p_dis_w", w),
            p_cha=_num(ud, "p_cha_w", w),
            soc_hi=_num(ud, "soc_hi", w, soc_hi),
            soc_lo=_num(ud, "soc_lo", w, soc_lo),
        )
        try:
            if "capacity_c" in ud:
                units.append(BessUnit(id=str(_need(ud, "id", w)),
                                      capacity=_num(ud, "capacity_c", w),
                                      v_dc=_num(ud, "v_dc", w, 800.0),
                                      p_dis=kw["p_dis"], p_cha=kw["p_cha"],
                                      soc_hi=kw["soc_hi"], soc_lo=kw["soc_lo"]))
            else:
                units.append(BessUnit.from_k_soc(
                    id=str(_need(ud, "id", w)), p_dis=kw["p_dis"],
                    p_cha=kw["p_cha"], k_soc=_num(ud, "k_soc", w),
                    v_dc=_num(ud, "v_dc", w, 800.0),
                    soc_hi=kw["soc_hi"], soc_lo=kw["soc_lo"]))
        except ValueError as exc:
            raise ScenarioError(f"{w}: {exc}") from None
    return units


def scenario_from_dict(doc: dict, name_hint: str = "scenario") -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ScenarioError("top level: expected a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "top level")
    name = str(doc.get("name", name_hint))

    plant_doc = _need(doc, "plant", "top level")
    _reject_unknown(plant_doc, {"nodes", "lines"}, "plant")
    nodes = _build_nodes(_need(plant_doc, "nodes", "plant"), "plant.nodes")
    lines = []
    for k, ld in enumerate(_need(plant_doc, "lines", "plant")):
        w = f"plant.lines[{k}]"
        _reject_unknown(ld, {"i", "j", "x_ohm"}, w)
        try:
            lines.append(Line(i=int(_need(ld, "i", w)), j=int(_need(ld, "j", w)),
                              x_ohm=_num(ld, "x_ohm", w)))
        except PlantError as exc:
            raise ScenarioError(f"{w}: {exc}") from None
    try:
        model = PlantModel(nodes, lines)
    except PlantError as exc:
        raise ScenarioError(f"plant: {exc}") from None

    cons_doc = doc.get("constraints", {})
    _reject_unknown(cons_doc, _CONSTRAINT_KEYS, "constraints")
    constraints = ConstraintConfig(
        enabled=bool(cons_doc.get("enabled", False)),
        freq_band=2.0 * np.pi * _num(cons_doc, "freq_band_hz", "constraints", 0.1),
        release_hold=_num(cons_doc, "release_hold_s", "constraints", 0.5),
        consensus_tol=_num(cons_doc, "consensus_tol", "constraints", 1e-3),
    )
    soc_hi = _num(cons_doc, "soc_hi", "constraints", 0.8)
    soc_lo = _num(cons_doc, "soc_lo", "constraints", 0.2)

    units = _build_units(_need(doc, "bess_units", "top level"), soc_hi, soc_lo,
                         "bess_units")
    bess_nodes = [nodes[i] for i in model.bess_idx]
    if len(units) != len(bess_nodes):
        raise ScenarioError(f"bess_units: {len(units)} units for "
                            f"{len(bess_nodes)} BESS plant nodes")
    for u, nd in zip(units, bess_nodes):
        if u.id != nd.id:
            raise ScenarioError(f"bess_units: unit id {u.id!r} does not match "
                                f"plant BESS node id {nd.id!r} (order matters)")

    comm_doc = _need(doc, "comm", "top level")
    _reject_unknown(comm_doc, {"edges", "pinning"}, "comm")
    try:
        topology = CommTopology.from_edges(
            n_agents=len(units),
            edges=[tuple(e) for e in _need(comm_doc, "edges", "comm")],
            pinning=_need(comm_doc, "pinning", "comm"))
    except GraphError as exc:
        raise ScenarioError(f"comm: {exc}") from None

    gains_doc = _need(doc, "gains", "top level")
    _reject_unknown(gains_doc, _GAIN_KEYS, "gains")
    try:
        gains = GainSet(**{k: float(v) for k, v in gains_doc.items()})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"gains: {exc}") from None

    soc_init = [float(v) for v in _need(doc, "soc_init", "top level")]
    lambda_init = [float(v) for v in _need(doc, "lambda_init", "top level")]
    if any(not 0.0 <= v <= 1.0 for v in soc_init):
        raise ScenarioError("soc_init: entries must lie in [0, 1]")

    try:
        spec = ScenarioSpec(
            name=name,
            model=model,
            units=tuple(units),
            topology=topology,
            gains=gains,
            variant=str(doc.get("variant", "proposed")),
            load_schedule=_schedule(_need(doc, "load_schedule", "top level"),
                                    "load_schedule"),
            res_scale_schedule=_schedule(doc.get("res_scale_schedule",
                                                 [[0.0, 1.0]]),
                                         "res_scale_schedule"),
            soc_init=tuple(soc_init),
            lambda_init=tuple(lambda_init),
            leader_soc_init=_num(doc, "leader_soc_init", "top level"),
            constraints=constraints,
            control_start=_num(doc, "control_start_s", "top level", 0.0),
            horizon=_num(doc, "horizon_s", "top level"),
            dt=_num(doc, "dt_s", "top level", 1e-3),
            trigger_mode=str(doc.get("trigger_mode", "sampled")),
            rest_phi=_num(doc, "rest_phi", "top level", 1e-12),
            leader_period=_num(doc, "leader_period_s", "top level", 0.0),
            ic_scale=_num(doc, "ic_scale", "top level", 1.0),
            newton_tol=_num(doc, "newton_tol", "top level", 1e-8),
            description=str(doc.get("description", "")),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None

    # fleet must be able to cover the load band when constraints expect it
    if constraints.enabled:
        levels = [v for _, v in spec.load_schedule]
        p_cha_total = float(sum(u.p_cha for u in units))
        from .plant import check_capacity
        if not check_capacity(model, levels, spec.p_dis_total, p_cha_total):
            raise ScenarioError("load_schedule: fleet cannot compensate the "
                                "scheduled load band (capacity check failed)")
    return spec


def load_scenario(path) -> ScenarioSpec:
    """Load and validate a scenario file; errors carry the field path."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error at line {exc.lineno}, "
                            f"column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, name_hint=path.stem)


def bundled_scenarios():
    """Names of the scenario files shipped with the package."""
    root = resources.files("gridbess") / "scenarios"
    return sorted(p.name[:-len(".json")] for p in root.iterdir()
                  if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    root = resources.files("gridbess") / "scenarios"
    p = root / f"{name}.json"
    if not p.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}; "
                            f"available: {bundled_scenarios()}")
    return Path(str(p))
