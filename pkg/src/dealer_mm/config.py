"""JSON run configuration: schema, defaults and validation.

Every key is checked against the schema below; unknown keys are errors.
Optional keys fall back to defaults, and each applied default is recorded
in ``RunConfig.defaults_applied`` (and logged) for provenance.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .hamiltonians import RampFunction
from .model import ExecutionCost, IntensityCurve, ModelError, ModelParams, SizeGrid
from .simulator import SimConfig
from .solver import InventoryGrid, SolverSettings

log = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("phi", "impact_k", "gamma", "lambda_scale", "lambda_bid", "lambda_ask")

_MODEL_REQUIRED = ("sigma", "impact_k", "gamma", "horizon_T", "q_max", "bid_curve", "ask_curve", "sizes", "cost")
_MODEL_DEFAULTS = {"delta_floor": 10.0}
_CURVE_KEYS = ("lambda_max", "alpha", "beta")
_COST_REQUIRED = ("eta", "phi")
_COST_DEFAULTS = {"v_max": 5000.0}
_GRID_DEFAULTS = {"n_nodes": 201, "ramp_width": None}
_SOLVER_DEFAULTS = {"n_steps": 500, "tol": 1e-10, "max_iter": 500, "damping": 0.5}
_SIM_DEFAULTS = {
    "n_paths": 10_000,
    "dt_sim": 1e-5,
    "seed": 20210601,
    "start_inventories": [float(q) for q in range(-100, 101, 10)],
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class Sweep:
    """Ordered list of parameter overrides, each solved independently."""

    points: tuple[tuple[tuple[str, float], ...], ...]

    @property
    def labels(self) -> list[tuple[str, str]]:
        out = []
        for point in self.points:
            names = "+".join(k for k, _ in point)
            values = "/".join("%.17g" % v for _, v in point)
            out.append((names, values))
        return out


@dataclass
class RunConfig:
    model: ModelParams
    n_nodes: int
    ramp_width: float
    solver: SolverSettings
    sim: SimConfig
    sweep: Sweep | None = None
    defaults_applied: list[str] = field(default_factory=list)

    @property
    def grid(self) -> InventoryGrid:
        return InventoryGrid.uniform(self.model.q_max, self.n_nodes)

    @property
    def ramp(self) -> RampFunction:
        return RampFunction(self.ramp_width)

    def to_dict(self) -> dict:
        """Resolved document with every default materialised; reloads to an equal config."""
        m = self.model
        doc = {
            "model": {
                "sigma": m.sigma, "impact_k": m.impact_k, "gamma": m.gamma, "horizon_T": m.horizon_T,
                "q_max": m.q_max, "delta_floor": m.delta_floor,
                "bid_curve": asdict(m.bid_curve), "ask_curve": asdict(m.ask_curve),
                "sizes": {"sizes": list(m.sizes.sizes), "probs": list(m.sizes.probs)},
                "cost": asdict(m.cost),
            },
            "grid": {"n_nodes": self.n_nodes, "ramp_width": self.ramp_width},
            "solver": asdict(self.solver),
            "sim": {
                "n_paths": self.sim.n_paths, "dt_sim": self.sim.dt_sim, "seed": self.sim.seed,
                "start_inventories": list(self.sim.start_inventories),
            },
        }
        if self.sweep is not None:
            doc["sweep"] = {"points": [dict(p) for p in self.sweep.points]}
        return doc


class _Checker:
    def __init__(self):
        self.errors: list[str] = []
        self.defaults: list[str] = []

    def section(self, doc, path, required=(), defaults=None, allow_missing=False):
        defaults = defaults or {}
        if doc is None:
            if allow_missing:
                doc = {}
            else:
                self.errors.append(f"{path}: missing required section")
                return None
        if not isinstance(doc, dict):
            self.errors.append(f"{path}: expected an object, got {type(doc).__name__}")
            return None
        known = set(required) | set(defaults)
        for key in doc:
            if key not in known:
                self.errors.append(f"{path}.{key}: unknown key")
        out = {}
        for key in required:
            if key not in doc:
                self.errors.append(f"{path}.{key}: missing required key")
            else:
                out[key] = doc[key]
        for key, default in defaults.items():
            if key in doc:
                out[key] = doc[key]
            else:
                out[key] = default
                self.defaults.append(f"{path}.{key} = {default!r} (default)")
        return out

    def number(self, value, path, integer=False):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
        if ok and integer and float(value) != int(value):
            ok = False
        if not ok:
            self.errors.append(f"{path}: expected a finite {'integer' if integer else 'number'}, got {value!r}")
            return None
        return int(value) if integer else float(value)

    def build(self, path, factory, *args, **kwargs):
        if any(a is None for a in args) or any(v is None for v in kwargs.values()):
            return None
        try:
            return factory(*args, **kwargs)
        except (ModelError, ValueError) as exc:
            self.errors.append(f"{path}: {exc}")
            return None


def _curve(ck: _Checker, doc, path):
    sec = ck.section(doc, path, _CURVE_KEYS)
    if sec is None or any(k not in sec for k in _CURVE_KEYS):
        return None
    vals = {k: ck.number(sec[k], f"{path}.{k}") for k in _CURVE_KEYS}
    return ck.build(path, IntensityCurve, **vals)


def _sizes(ck: _Checker, doc, path):
    sec = ck.section(doc, path, ("sizes", "probs"))
    if sec is None or "sizes" not in sec or "probs" not in sec:
        return None
    if not isinstance(sec["sizes"], list) or not isinstance(sec["probs"], list):
        ck.errors.append(f"{path}: sizes and probs must be lists")
        return None
    sizes = [ck.number(v, f"{path}.sizes[{i}]") for i, v in enumerate(sec["sizes"])]
    probs = [ck.number(v, f"{path}.probs[{i}]") for i, v in enumerate(sec["probs"])]
    if None in sizes or None in probs:
        return None
    return ck.build(f"{path} (SizeGrid)", SizeGrid, tuple(sizes), tuple(probs))


def _sweep(ck: _Checker, doc, path="sweep"):
    if not isinstance(doc, dict):
        ck.errors.append(f"{path}: expected an object")
        return None
    if "points" in doc:
        for key in doc:
            if key != "points":
                ck.errors.append(f"{path}.{key}: unknown key (use either 'points' or 'parameter'/'values')")
        raw = doc["points"]
        if not isinstance(raw, list) or not raw:
            ck.errors.append(f"{path}.points: expected a non-empty list of objects")
            return None
        points = []
        for i, pt in enumerate(raw):
            if not isinstance(pt, dict) or not pt:
                ck.errors.append(f"{path}.points[{i}]: expected a non-empty object")
                continue
            items = []
            for key, value in pt.items():
                if key not in SWEEP_PARAMETERS:
                    ck.errors.append(f"{path}.points[{i}].{key}: unknown sweep parameter")
                    continue
                v = ck.number(value, f"{path}.points[{i}].{key}")
                if v is not None:
                    items.append((key, v))
            points.append(tuple(items))
        return Sweep(tuple(points))
    sec = ck.section(doc, path, ("parameter", "values"))
    if sec is None or "parameter" not in sec or "values" not in sec:
        return None
    name = sec["parameter"]
    if name not in SWEEP_PARAMETERS:
        ck.errors.append(f"{path}.parameter: must be one of {', '.join(SWEEP_PARAMETERS)}, got {name!r}")
        return None
    values = sec["values"]
    if not isinstance(values, list) or len(values) < 2:
        ck.errors.append(f"{path}.values: need a list of at least two values")
        return None
    nums = [ck.number(v, f"{path}.values[{i}]") for i, v in enumerate(values)]
    if None in nums:
        return None
    return Sweep(tuple(((name, v),) for v in nums))


def parse_config(doc) -> RunConfig:
    ck = _Checker()
    if not isinstance(doc, dict):
        raise ConfigError([f"document: expected a JSON object, got {type(doc).__name__}"])
    top = ck.section(doc, "document", (), {"model": None, "grid": None, "solver": None, "sim": None, "sweep": None})
    ck.defaults = [d for d in ck.defaults if not d.startswith("document.")]
    model_doc = top.get("model")
    model = ck.section({} if model_doc is None else model_doc, "model", _MODEL_REQUIRED, _MODEL_DEFAULTS)
    params = None
    if model is not None:
        scalars = {}
        for key in ("sigma", "impact_k", "gamma", "horizon_T", "q_max", "delta_floor"):
            if key in model:
                scalars[key] = ck.number(model[key], f"model.{key}")
        bid = _curve(ck, model.get("bid_curve"), "model.bid_curve") if "bid_curve" in model else None
        ask = _curve(ck, model.get("ask_curve"), "model.ask_curve") if "ask_curve" in model else None
        sizes = _sizes(ck, model.get("sizes"), "model.sizes") if "sizes" in model else None
        cost = None
        if "cost" in model:
            csec = ck.section(model["cost"], "model.cost", _COST_REQUIRED, _COST_DEFAULTS)
            if csec is not None and all(k in csec for k in _COST_REQUIRED):
                cvals = {k: ck.number(csec[k], f"model.cost.{k}") for k in ("eta", "phi", "v_max")}
                cost = ck.build("model.cost", ExecutionCost, **cvals)
        if all(k in scalars for k in ("sigma", "impact_k", "gamma", "horizon_T", "q_max", "delta_floor")):
            params = ck.build("model", ModelParams, bid_curve=bid, ask_curve=ask, sizes=sizes, cost=cost, **scalars)

    grid = ck.section(top.get("grid") if top else None, "grid", (), _GRID_DEFAULTS, allow_missing=True) or {}
    n_nodes = ck.number(grid.get("n_nodes", 201), "grid.n_nodes", integer=True)
    ramp_width = grid.get("ramp_width")
    if n_nodes is not None and (n_nodes < 3 or n_nodes % 2 == 0):
        ck.errors.append(f"grid.n_nodes: must be odd and >= 3 so that 0 is a node, got {n_nodes}")
        n_nodes = None
    if params is not None and n_nodes is not None:
        g = ck.build("grid", InventoryGrid.uniform, params.q_max, n_nodes)
        if g is not None:
            ck.build("grid", g.offsets, params.sizes.sizes)
            if ramp_width is None:
                ramp_width = g.step
                ck.defaults = [d.replace("grid.ramp_width = None", f"grid.ramp_width = {g.step!r}") for d in ck.defaults]
    if ramp_width is not None:
        ramp_width = ck.number(ramp_width, "grid.ramp_width")
        if ramp_width is not None and params is not None and not 0 < ramp_width < params.q_max:
            ck.errors.append(f"grid.ramp_width: must lie in (0, q_max), got {ramp_width}")

    ssec = ck.section(top.get("solver") if top else None, "solver", (), _SOLVER_DEFAULTS, allow_missing=True) or {}
    solver = ck.build(
        "solver", SolverSettings,
        ck.number(ssec.get("n_steps", 500), "solver.n_steps", integer=True),
        ck.number(ssec.get("tol", 1e-10), "solver.tol"),
        ck.number(ssec.get("max_iter", 500), "solver.max_iter", integer=True),
        ck.number(ssec.get("damping", 0.5), "solver.damping"),
    )

    msec = ck.section(top.get("sim") if top else None, "sim", (), _SIM_DEFAULTS, allow_missing=True) or {}
    starts = msec.get("start_inventories", _SIM_DEFAULTS["start_inventories"])
    if not isinstance(starts, list) or not starts:
        ck.errors.append("sim.start_inventories: expected a non-empty list")
        starts = None
    else:
        starts = [ck.number(v, f"sim.start_inventories[{i}]") for i, v in enumerate(starts)]
        starts = None if None in starts else tuple(starts)
    sim = ck.build(
        "sim", SimConfig,
        ck.number(msec.get("n_paths", 10_000), "sim.n_paths", integer=True),
        ck.number(msec.get("dt_sim", 1e-5), "sim.dt_sim"),
        ck.number(msec.get("seed", 0), "sim.seed", integer=True),
        starts,
    )
    if sim is not None and params is not None:
        ck.build("sim", sim.validate_against, params)
        grid_obj = InventoryGrid.uniform(params.q_max, n_nodes) if n_nodes is not None else None
        if grid_obj is not None:
            for q0 in sim.start_inventories:
                if abs(grid_obj.q_nodes[grid_obj.index_of(q0)] - q0) > 1e-9:
                    ck.errors.append(f"sim.start_inventories: {q0} is not a grid node")

    sweep = None
    if top and top.get("sweep") is not None:
        sweep = _sweep(ck, top["sweep"])

    if ck.errors:
        raise ConfigError(ck.errors)
    for line in ck.defaults:
        log.info("config default applied: %s", line)
    return RunConfig(params, n_nodes, float(ramp_width), solver, sim, sweep, ck.defaults)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    return parse_config(doc)


def apply_sweep_point(params: ModelParams, point) -> ModelParams:
    """Return ``params`` with one sweep point's overrides applied."""
    for name, value in point:
        if name == "phi":
            params = params.replace(cost=ExecutionCost(params.cost.eta, value, params.cost.v_max))
        elif name == "impact_k":
            params = params.replace(impact_k=value)
        elif name == "gamma":
            params = params.replace(gamma=value)
        elif name == "lambda_scale":
            params = params.replace(bid_curve=params.bid_curve.scaled(value), ask_curve=params.ask_curve.scaled(value))
        elif name == "lambda_bid":
            c = params.bid_curve
            params = params.replace(bid_curve=IntensityCurve(value, c.alpha, c.beta))
        elif name == "lambda_ask":
            c = params.ask_curve
            params = params.replace(ask_curve=IntensityCurve(value, c.alpha, c.beta))
        else:
            raise KeyError(name)
    return params
