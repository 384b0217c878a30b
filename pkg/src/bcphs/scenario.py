"""JSON scenario files and CSV/JSON artifact writers."""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import IoConfig, SystemSpec, StructureError
from .discretize import GridConfig
from .models import PRESETS, BeamParams, preset
from .simulate import SolverConfig

SCHEMA = "bcphs-scenario/1"


class ScenarioError(ValueError):
    """Invalid scenario document; ``where`` names the offending field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class Design:
    name: str
    L: list  # diagonal entries or a full square matrix

    def matrix(self) -> np.ndarray:
        L = np.asarray(self.L, dtype=float)
        return np.diag(L) if L.ndim == 1 else L


@dataclass
class Scenario:
    """Everything needed to reproduce one batch run.

    ``model`` holds exactly one of ``preset`` (with optional ``params``) or
    ``inline`` (``P``, ``interval``, ``H``, ``W_B``, ``W_C``, ``C_m``, ``L``).
    Initial conditions are polynomial coefficients (ascending powers of the
    position) per state component; an empty list means zero.
    """

    model: dict
    grid: dict = field(default_factory=lambda: {"n_d": 140, "scheme": "auto", "trace_order": 1})
    solver: dict = field(default_factory=lambda: {"scheme": "matrix_exponential", "dt": 1e-3,
                                                  "t_end": 8.0, "stride": 10})
    initial: dict = field(default_factory=dict)
    designs: list = field(default_factory=list)
    sweep: dict | None = None
    analyses: list = field(default_factory=lambda: ["regime", "deflection"])
    output: str = "out"
    open_loop: bool = False
    schema: str = SCHEMA

    # -- construction -------------------------------------------------------

    def __post_init__(self):
        if self.schema != SCHEMA:
            raise ScenarioError("schema", f"expected {SCHEMA!r}, got {self.schema!r}")
        if not isinstance(self.model, dict):
            raise ScenarioError("model", "must be an object")
        has_p, has_i = "preset" in self.model, "inline" in self.model
        if has_p == has_i:
            raise ScenarioError("model", "give exactly one of 'preset' or 'inline'")
        if has_p and self.model["preset"] not in PRESETS:
            raise ScenarioError("model.preset", f"unknown preset {self.model['preset']!r}; "
                                f"expected one of {list(PRESETS)}")
        self.designs = [d if isinstance(d, Design) else _design(d, i)
                        for i, d in enumerate(self.designs)]
        try:
            self.solver_config()
        except ValueError as exc:
            raise ScenarioError("solver", str(exc)) from None
        try:
            self.grid_config()
        except (TypeError, ValueError) as exc:
            raise ScenarioError("grid", str(exc)) from None
        for key in ("plant", "observer"):
            for i, c in enumerate(self.initial.get(key, [])):
                if not all(isinstance(v, (int, float)) for v in c):
                    raise ScenarioError(f"initial.{key}[{i}]", "coefficients must be numbers")
        if self.sweep is not None:
            if set(self.sweep) - {"base", "scale_min", "scale_max", "points"}:
                raise ScenarioError("sweep", "allowed keys: base, scale_min, scale_max, points")
            if int(self.sweep.get("points", 0)) < 1:
                raise ScenarioError("sweep.points", "need at least one point")

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("<root>", "scenario must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ScenarioError(sorted(extra)[0], "unknown field")
        if "model" not in doc:
            raise ScenarioError("model", "missing")
        return cls(**doc)

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["designs"] = [asdict(x) for x in self.designs]
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # -- derived objects ------------------------------------------------------

    def solver_config(self, **override) -> SolverConfig:
        return SolverConfig(**{**self.solver, **override})

    def grid_config(self, **override) -> GridConfig:
        return GridConfig(**{**self.grid, **override})

    def all_designs(self) -> list:
        """Explicit designs followed by the log-spaced sweep points, if any."""
        out = list(self.designs)
        if self.sweep:
            base = np.asarray(self.sweep["base"], dtype=float)
            pts = int(self.sweep["points"])
            scales = np.geomspace(float(self.sweep.get("scale_min", 0.1)),
                                  float(self.sweep.get("scale_max", 10.0)), pts)
            out += [Design(f"x{c:.4g}", (c * base).tolist()) for c in scales]
        return out

    def build(self, design: Design | None = None) -> tuple:
        """``(SystemSpec, IoConfig)`` for ``design`` (default gain when ``None``)."""
        L = None if design is None else design.matrix()
        if "preset" in self.model:
            name = self.model["preset"]
            params = dict(self.model.get("params", {}))
            try:
                if name.startswith("beam"):
                    spec, io = preset(name, params=BeamParams(**params))
                else:
                    spec, io = preset(name, **params)
            except TypeError as exc:
                raise ScenarioError("model.params", str(exc)) from None
            if "C_m" in self.model:
                io = io.with_measurement(np.asarray(self.model["C_m"], float),
                                         np.eye(len(self.model["C_m"])) if L is None else L)
            elif L is not None:
                io = io.with_gain(L)
            return spec, io
        inl = self.model["inline"]
        try:
            spec = SystemSpec(tuple(np.asarray(p, float) for p in inl["P"]),
                              tuple(inl.get("interval", (0.0, 1.0))),
                              np.asarray(inl["H"], float))
            io = IoConfig(np.asarray(inl["W_B"], float), np.asarray(inl["W_C"], float),
                          None if inl.get("C_m") is None else np.asarray(inl["C_m"], float),
                          None if inl.get("L") is None else np.asarray(inl["L"], float))
        except KeyError as exc:
            raise ScenarioError(f"model.inline.{exc.args[0]}", "missing") from None
        except (StructureError, ValueError) as exc:
            raise ScenarioError("model.inline", str(exc)) from None
        if L is not None:
            io = io.with_gain(L)
        return spec, io

    def initial_profile(self, which: str, spec: SystemSpec):
        """Callable ``zeta -> (len, n)`` state profile, or ``None`` for zero."""
        coeffs = self.initial.get(which)
        if coeffs is None and which == "plant":
            coeffs = default_plant_initial(self.model)
        if not coeffs:
            return None
        if len(coeffs) != spec.state_dim:
            raise ScenarioError(f"initial.{which}", f"need {spec.state_dim} components")

        def profile(z):
            z = np.asarray(z, dtype=float)
            return np.stack([np.polynomial.polynomial.polyval(z, c) if len(c) else 0 * z
                             for c in coeffs], axis=-1)
        return profile


def _design(d, i) -> Design:
    if not isinstance(d, dict) or "L" not in d:
        raise ScenarioError(f"designs[{i}]", "each design needs an 'L' entry")
    return Design(str(d.get("name", f"design{i + 1}")), d["L"])


def default_plant_initial(model: dict) -> list:
    """Equilibrium under tip load for beams, a half sine for the wave."""
    name = model.get("preset", "")
    if name.startswith("beam"):
        return [[], [-0.9, 1.0]]
    if name == "wave":
        return [[], [0.0, 1.0, -1.0]]
    return []


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def fmt(v) -> str:
    """Full-precision decimal (17 significant digits)."""
    return format(float(v), ".17g")


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, doc):
    atomic_write_text(path, json.dumps(_jsonable(doc), indent=2) + "\n")
