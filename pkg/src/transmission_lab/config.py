"""JSON experiment configuration.

A config is one JSON object with the keys below; anything else is rejected.

=============  ==============================================================
``grid``       ``dimension`` (2), ``lower`` (-1), ``upper`` (1),
               ``nodes_per_axis`` (65)
``problem``    ``F1``/``F2`` operator objects (Laplacian), ``boundary``
               (``{"oracle": {...}}`` or ``{"constant": x}``), ``rhs`` (1),
               ``delta`` (``"auto"`` = ``rhs * h**2``, or a number)
``solver``     fields of :class:`~transmission_lab.solver.SolverConfig`
``diagnostics`` request passed to :func:`~transmission_lab.diagnostics.run_diagnostics`
``sweep``      ``nodes_per_axis`` or ``h`` list, ``C0`` list, ``operators``
               list of ``{"F1", "F2"}`` overrides
``output_dir`` where artifacts go (``"out"``)
``seed``       integer recorded in the manifest (0)
``workers``    sweep worker count before the environment cap (1)
=============  ==============================================================
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .discretization import Grid
from .elliptic_ops import laplacian, operator_from_config
from .errors import InvalidInputError
from .oracles import oracle_from_config
from .solver import ProblemSpec, SolverConfig

TOP_KEYS = {"grid", "problem", "solver", "diagnostics", "sweep", "output_dir", "seed", "workers"}
PROBLEM_KEYS = {"F1", "F2", "boundary", "rhs", "delta"}
SWEEP_KEYS = {"nodes_per_axis", "h", "C0", "operators"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise InvalidInputError(f"'{where}' must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInputError(f"unknown keys in '{where}': {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    raw: dict
    grid: Grid
    solver: SolverConfig
    diagnostics: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output_dir: Path = Path("out")
    seed: int = 0
    workers: int = 1

    @property
    def problem_cfg(self) -> dict:
        return self.raw.get("problem", {})

    def operators(self):
        d = self.grid.d
        p = self.problem_cfg
        F1 = operator_from_config(p["F1"], d) if "F1" in p else laplacian(d)
        F2 = operator_from_config(p["F2"], d) if "F2" in p else laplacian(d)
        return F1, F2

    def oracle(self):
        """The boundary oracle, or ``None`` for constant data."""
        b = self.problem_cfg.get("boundary", {"constant": 0.0})
        if "oracle" in b:
            return oracle_from_config(b["oracle"], self.operators()[0], self.grid.d)
        return None

    def problem(self) -> ProblemSpec:
        F1, F2 = self.operators()
        p = self.problem_cfg
        orc = self.oracle()
        if orc is None:
            c = float(p.get("boundary", {}).get("constant", 0.0))
            g = lambda x: c + 0.0 * x[..., 0]  # noqa: E731
        else:
            g = orc
        delta = p.get("delta", "auto")
        delta = None if delta in (None, "auto") else float(delta)
        return ProblemSpec(self.grid, F1, F2, g, float(p.get("rhs", 1.0)), delta)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, nodes_per_axis=None, C0=None, operators=None) -> "ExperimentConfig":
        """A copy with one sweep point applied (the ``sweep`` block removed)."""
        raw = copy.deepcopy(self.raw)
        raw.pop("sweep", None)
        if nodes_per_axis is not None:
            raw.setdefault("grid", {})["nodes_per_axis"] = int(nodes_per_axis)
        if C0 is not None:
            raw.setdefault("diagnostics", {})["C0"] = float(C0)
        if operators:
            raw.setdefault("problem", {}).update(operators)
        return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, TOP_KEYS, "config")
    grid = Grid.from_config(raw.get("grid", {}))
    p = raw.get("problem", {})
    _check_keys(p, PROBLEM_KEYS, "problem")
    b = p.get("boundary", {"constant": 0.0})
    _check_keys(b, {"oracle", "constant"}, "problem.boundary")
    if len(b) != 1:
        raise InvalidInputError("problem.boundary needs exactly one of 'oracle', 'constant'")
    s = raw.get("solver", {})
    names = {f.name for f in fields(SolverConfig)}
    _check_keys(s, names, "solver")
    solver = SolverConfig(**s)
    diag = raw.get("diagnostics", {})
    _check_keys(diag, {"centers", "radii", "j_range", "nondeg_radii", "C0", "checks", "delta"},
                "diagnostics")
    sweep = raw.get("sweep", {})
    _check_keys(sweep, SWEEP_KEYS, "sweep")
    seed = raw.get("seed", 0)
    workers = raw.get("workers", 1)
    if not isinstance(seed, int) or not isinstance(workers, int) or workers < 1:
        raise InvalidInputError("'seed' must be an integer and 'workers' a positive integer")
    cfg = ExperimentConfig(raw, grid, solver, diag, sweep, Path(raw.get("output_dir", "out")),
                           seed, workers)
    cfg.problem()  # surface problem errors at parse time
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    """Cartesian product of the sweep axes, as override dicts."""
    sw = cfg.sweep
    if "h" in sw and "nodes_per_axis" in sw:
        raise InvalidInputError("sweep takes either 'h' or 'nodes_per_axis', not both")
    width = cfg.grid.upper[0] - cfg.grid.lower[0]
    if "h" in sw:
        ns = []
        for h in sw["h"]:
            n = width / float(h)
            if abs(n - round(n)) > 1e-9:
                raise InvalidInputError(f"h={h} does not divide the domain width {width}")
            ns.append(int(round(n)) + 1)
    else:
        ns = list(sw.get("nodes_per_axis", [None]))
    C0s = list(sw.get("C0", [None]))
    ops = list(sw.get("operators", [None]))
    for o in ops:
        if o is not None:
            _check_keys(o, {"F1", "F2"}, "sweep.operators[]")
    return [{"nodes_per_axis": n, "C0": c, "operators": o}
            for o in ops for c in C0s for n in ns]
