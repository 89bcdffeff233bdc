"""Experiment plans: validation, cached spectral data, batch execution.

A plan is a YAML file. Every plan kind expands into a set of independent
OTOC series tasks followed by one deterministic analysis step.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import pathlib
import shutil
import tempfile
import threading
import time

import numpy as np
import yaml

from . import __version__
from .engine import DEGENERACY_TOL, SpectralData, eigendecompose, gibbs_state, parity_labels
from .models import (MAX_CHAIN_SITES, MAX_COLLECTIVE_DIM, BudgetError, ModelKind, ModelSpec,
                     OperatorSpec, build_annni_hamiltonian, build_lmg_hamiltonian,
                     spin_flip_parity)
from .otoc import WEIGHT_CUTOFF, OTOCSeries, compute_otoc_series, write_series
from .scaling import (DEFAULT_EPSILON, EPSILON_SWEEP, AnalysisError, ExponentSet, InvarianceBase,
                      RescaleMode, butterfly_form_checks, crossing_estimate, extract_scrambling_time,
                      find_first_minimum, fit_butterfly_velocity, fit_dynamical_exponent, fit_nu,
                      fmin_collapse, normalized_series, operator_pair, partner_base,
                      scaling_invariance_check)

log = logging.getLogger(__name__)

PLAN_KINDS = ("SeriesRun", "InvarianceCheck", "FminScan", "TminScan", "LightCone",
              "ButterflyForms", "LocateQCP")
CACHE_ENV = "OTOC_CACHE_DIR"
WORKERS_ENV = "OTOC_WORKERS"
DEFAULT_CACHE = pathlib.Path.home() / ".cache" / "otoc_scaling"

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2


class PlanError(ValueError):
    def __init__(self, field, message, line=None):
        self.field, self.line = field, line
        where = f" (line {line})" if line else ""
        super().__init__(f"{field}{where}: {message}")


# ---------------------------------------------------------------------------
# plan parsing


def _key_lines(node, prefix=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[".".join(path)] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


@dataclasses.dataclass
class ExperimentPlan:
    kind: str
    model: dict
    params: dict
    grid: dict
    exponents: ExponentSet | None
    output: pathlib.Path
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    mode: str | None = None
    contrast: dict = dataclasses.field(default_factory=dict)
    budgets: dict = dataclasses.field(default_factory=dict)
    degeneracy_tol: float = DEGENERACY_TOL
    weight_cutoff: float = WEIGHT_CUTOFF
    site: int | None = None
    plan_hash: str = ""
    source: str | None = None

    def knobs(self) -> dict:
        return {"epsilon": self.epsilon, "degeneracy_tol": self.degeneracy_tol,
                "weight_cutoff": self.weight_cutoff, "grid": self.grid, "budgets": self.budgets}


_MODEL_FIELDS = {"ANNNI": {"kind", "J", "delta", "boundary"}, "LMG": {"kind", "J", "gamma"}}
_TOP_FIELDS = {"kind", "model", "params", "grid", "exponents", "output", "seed", "epsilon",
               "mode", "contrast", "budgets", "degeneracy_tol", "weight_cutoff", "site"}
_REQUIRED = {
    "SeriesRun": ("L", "T"),
    "InvarianceCheck": ("L", "T", "b"),
    "FminScan": ("L",),
    "TminScan": ("L",),
    "LightCone": ("L", "T", "r"),
    "ButterflyForms": ("L", "T", "r"),
    "LocateQCP": ("L",),
}


def _as_list(value, field, line, cast=float):
    items = value if isinstance(value, list) else [value]
    try:
        return [cast(v) for v in items]
    except (TypeError, ValueError):
        raise PlanError(field, f"expected number(s), got {value!r}", line) from None


def _int(v):
    if isinstance(v, bool) or float(v) != int(float(v)):
        raise ValueError(v)
    return int(float(v))


def parse_plan(text: str, source: str | None = None, base_dir=None) -> ExperimentPlan:
    """Parse and validate a plan; errors name the field and its line."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise PlanError("<file>", str(exc).splitlines()[0], mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise PlanError("<file>", "a plan must be a mapping")
    lines = _key_lines(node)
    ln = lines.get

    unknown = set(raw) - _TOP_FIELDS
    if unknown:
        key = sorted(unknown)[0]
        raise PlanError(key, "unknown field", ln(key))
    kind = raw.get("kind")
    if kind not in PLAN_KINDS:
        raise PlanError("kind", f"must be one of {', '.join(PLAN_KINDS)}", ln("kind"))

    model = raw.get("model")
    if not isinstance(model, dict) or model.get("kind") not in _MODEL_FIELDS:
        raise PlanError("model.kind", "model.kind must be ANNNI or LMG", ln("model.kind") or ln("model"))
    extra = set(model) - _MODEL_FIELDS[model["kind"]]
    if extra:
        key = sorted(extra)[0]
        raise PlanError(f"model.{key}", f"not a field of {model['kind']}", ln(f"model.{key}"))

    raw_params = raw.get("params") or {}
    if not isinstance(raw_params, dict):
        raise PlanError("params", "must be a mapping", ln("params"))
    params = {}
    for key, value in raw_params.items():
        field = f"params.{key}"
        if key not in ("L", "T", "lam", "h", "r", "b"):
            raise PlanError(field, "unknown parameter", ln(field))
        cast = _int if key in ("L", "r") else float
        params[key] = _as_list(value, field, ln(field), cast)
    for key in _REQUIRED[kind]:
        if key not in params:
            raise PlanError(f"params.{key}", f"required for {kind}", ln("params"))
    if ("lam" in params) == ("h" in params):
        raise PlanError("params.lam", "give exactly one of params.lam or params.h", ln("params"))
    if any(L < 1 for L in params["L"]):
        raise PlanError("params.L", "system sizes must be positive", ln("params.L"))
    if any(T < 0 for T in params.get("T", [])):
        raise PlanError("params.T", "temperatures must be >= 0", ln("params.T"))
    if model["kind"] == "ANNNI" and kind != "LocateQCP" and "r" not in params:
        raise PlanError("params.r", "ANNNI plans need operator separations r", ln("params"))

    exponents = None
    if raw.get("exponents") is not None:
        ex = raw["exponents"]
        try:
            exponents = ExponentSet(float(ex["nu"]), float(ex["z"]), float(ex.get("delta_F", 0.0)),
                                    None if ex.get("lambda_c") is None else float(ex["lambda_c"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError("exponents", f"invalid exponent set ({exc})", ln("exponents")) from None
    if "h" in params and (exponents is None or exponents.lambda_c is None):
        raise PlanError("exponents.lambda_c", "needed to turn params.h into fields", ln("params.h"))
    if kind in ("InvarianceCheck", "ButterflyForms") and exponents is None:
        raise PlanError("exponents", f"required for {kind}", ln("kind"))
    if kind == "InvarianceCheck":
        if exponents.lambda_c is None:
            raise PlanError("exponents.lambda_c", "required for InvarianceCheck", ln("exponents"))
        for key in ("L", "T", "lam", "h", "r"):
            if len(params.get(key, [0])) != 1:
                raise PlanError(f"params.{key}", "InvarianceCheck takes a single base value",
                                ln(f"params.{key}"))
    counts = {"TminScan": 3, "LocateQCP": 2, "FminScan": 2}
    if kind in counts and len(params["L"]) < counts[kind]:
        raise PlanError("params.L", f"{kind} needs at least {counts[kind]} sizes", ln("params.L"))
    if kind in ("LightCone", "ButterflyForms") and len(params["r"]) < 3:
        raise PlanError("params.r", "a light cone needs at least 3 distances", ln("params.r"))

    grid = raw.get("grid")
    if not isinstance(grid, dict) or "t_max" not in grid:
        raise PlanError("grid.t_max", "grid needs t_max", ln("grid"))
    try:
        grid = {k: float(v) for k, v in grid.items()}
    except (TypeError, ValueError):
        raise PlanError("grid", "grid entries must be numbers", ln("grid")) from None
    if set(grid) - {"t_max", "dt", "n", "max_phase_step"}:
        key = sorted(set(grid) - {"t_max", "dt", "n", "max_phase_step"})[0]
        raise PlanError(f"grid.{key}", "unknown grid field", ln(f"grid.{key}"))
    if grid["t_max"] <= 0 or grid.get("dt", 1) <= 0 or grid.get("n", 2) < 2:
        raise PlanError("grid", "t_max and dt must be positive, n >= 2", ln("grid"))

    mode = raw.get("mode")
    if kind == "InvarianceCheck":
        mode = mode or ("Global" if model["kind"] == "LMG" else "LocalUnitary")
        try:
            RescaleMode(mode)
        except ValueError:
            raise PlanError("mode", "must be LocalUnitary, Global or General", ln("mode")) from None

    budgets = {"max_chain_sites": MAX_CHAIN_SITES, "max_collective_dim": MAX_COLLECTIVE_DIM,
               "max_grid": 200_000}
    for key, value in (raw.get("budgets") or {}).items():
        if key not in budgets:
            raise PlanError(f"budgets.{key}", "unknown budget", ln(f"budgets.{key}"))
        budgets[key] = int(value)

    epsilon = float(raw.get("epsilon", DEFAULT_EPSILON))
    if not 0 < epsilon < 1:
        raise PlanError("epsilon", "must lie in (0, 1)", ln("epsilon"))

    output = raw.get("output", "otoc_out")
    if not isinstance(output, str) or not output:
        raise PlanError("output", f"must be a path string, got {output!r}", ln("output"))
    output = pathlib.Path(output)
    if not output.is_absolute() and base_dir is not None:
        output = pathlib.Path(base_dir) / output
    return ExperimentPlan(
        kind=kind, model=dict(model), params=params, grid=grid, exponents=exponents,
        output=output, seed=int(raw.get("seed", 0)), epsilon=epsilon, mode=mode,
        contrast=dict(raw.get("contrast") or {}), budgets=budgets,
        degeneracy_tol=float(raw.get("degeneracy_tol", DEGENERACY_TOL)),
        weight_cutoff=float(raw.get("weight_cutoff", WEIGHT_CUTOFF)),
        site=raw.get("site"), plan_hash=hashlib.sha256(text.encode()).hexdigest(), source=source)


def load_plan(path) -> ExperimentPlan:
    path = pathlib.Path(path)
    return parse_plan(path.read_text(), str(path), base_dir=path.parent)


# ---------------------------------------------------------------------------
# spectral cache


class SpectralCache:
    """Memoized eigendecompositions, optionally persisted as ``.npz`` files.

    Keys are SHA-256 digests of the canonical spec serialization. Entries
    loaded from disk must reproduce the Hamiltonian before they are used;
    otherwise they are recomputed and overwritten.
    """

    def __init__(self, directory=None, budgets=None, enabled=True):
        self.directory = pathlib.Path(directory) if directory else None
        self.enabled = enabled and self.directory is not None
        self.budgets = budgets or {}
        self.hits = 0
        self.misses = 0
        self.warnings = []
        self._memory = {}
        self._locks = {}
        self._guard = threading.Lock()

    @staticmethod
    def key(spec: ModelSpec) -> str:
        return hashlib.sha256(spec.canonical().encode()).hexdigest()

    def _hamiltonian(self, spec):
        if spec.kind is ModelKind.ANNNI:
            return build_annni_hamiltonian(spec, self.budgets.get("max_chain_sites", MAX_CHAIN_SITES))
        return build_lmg_hamiltonian(spec, self.budgets.get("max_collective_dim", MAX_COLLECTIVE_DIM))

    def get(self, spec: ModelSpec) -> SpectralData:
        key = self.key(spec)
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key in self._memory:
                with self._guard:
                    self.hits += 1
                return self._memory[key]
            H = self._hamiltonian(spec)
            sd = self._load(key, spec, H)
            with self._guard:
                if sd is None:
                    self.misses += 1
                else:
                    self.hits += 1
            if sd is None:
                sd = eigendecompose(H)
                self._store(key, sd)
            self._memory[key] = sd
            return sd

    def _path(self, key):
        return self.directory / f"{key}.npz"

    def _load(self, key, spec, H):
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                if str(data["spec"]) != spec.canonical():
                    raise ValueError("spec mismatch")
                vecs = data["eigenvectors"]
                sd = SpectralData(data["eigenvalues"], vecs, spec,
                                  parity_labels(vecs, spin_flip_parity(spec)))
            if np.max(np.abs(sd.reconstruct() - H.matrix)) > 1e-10 * max(1.0, np.max(np.abs(H.matrix))):
                raise ValueError("reconstruction check failed")
        except Exception as exc:  # noqa: BLE001 - any unreadable entry is recomputed
            msg = f"corrupt cache entry {path.name} ({exc}); recomputed"
            log.warning(msg)
            with self._guard:
                self.warnings.append(msg)
            return None
        return sd

    def _store(self, key, sd):
        if not self.enabled:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".npz.tmp")
        os.close(fd)
        with open(tmp, "wb") as fh:
            np.savez(fh, eigenvalues=sd.eigenvalues, eigenvectors=sd.eigenvectors,
                     spec=np.array(sd.spec.canonical()))
        os.replace(tmp, self._path(key))


def spectral_cache(spec: ModelSpec, cache: SpectralCache) -> SpectralData:
    return cache.get(spec)


def clean_cache(directory=None) -> pathlib.Path:
    directory = pathlib.Path(directory or os.environ.get(CACHE_ENV) or DEFAULT_CACHE)
    if directory.exists():
        shutil.rmtree(directory)
    return directory


# ---------------------------------------------------------------------------
# tasks


@dataclasses.dataclass(frozen=True)
class SeriesTask:
    spec: ModelSpec
    W: OperatorSpec
    V: OperatorSpec
    T: float
    times: tuple
    lambda_c: float | None = None

    @property
    def name(self) -> str:
        s = self.spec
        r = "global" if self.W.form != "LocalPauli" else f"W{self.W.site}_V{self.V.site}"
        return f"{s.kind.value}_L{s.L}_lam{s.lam!r}_T{self.T!r}_{r}_n{len(self.times)}"

    def key(self) -> str:
        blob = json.dumps([self.spec.canonical(), self.W.to_dict(), self.V.to_dict(), repr(self.T),
                           [repr(t) for t in self.times]], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _model_template(plan) -> ModelSpec:
    m = dict(plan.model)
    kind = m.pop("kind")
    if kind == "ANNNI":
        return ModelSpec.annni(1, 0.0, **m)
    return ModelSpec.lmg(1, 0.0, **m)


def _fields(plan):
    if "lam" in plan.params:
        return plan.params["lam"]
    return [plan.exponents.lambda_c + h for h in plan.params["h"]]


def _grid(plan, sd: SpectralData | None = None):
    g = plan.grid
    if "n" in g:
        n = int(g["n"])
    elif "dt" in g:
        n = int(round(g["t_max"] / g["dt"])) + 1
    else:
        e_max = float(np.max(np.abs(sd.eigenvalues)))
        n = max(2, int(np.ceil(g["t_max"] * e_max / g.get("max_phase_step", 0.5))) + 1)
    return np.linspace(0.0, g["t_max"], n)


def _lambda_c(plan):
    return plan.exponents.lambda_c if plan.exponents is not None else None


class Runner:
    """Executes tasks of one plan against a shared spectral cache."""

    def __init__(self, plan: ExperimentPlan, cache: SpectralCache, workers: int = 1):
        self.plan = plan
        self.cache = cache
        self.workers = max(1, workers)
        self.results: dict[str, OTOCSeries] = {}
        self.status: dict[str, dict] = {}
        self._lock = threading.Lock()

    def times_for(self, spec):
        if {"n", "dt"} & set(self.plan.grid):
            return _grid(self.plan)
        return _grid(self.plan, self.cache.get(spec))

    def _check_budget(self, task):
        b = self.plan.budgets
        if len(task.times) > b["max_grid"]:
            raise BudgetError(f"grid length {len(task.times)} exceeds max_grid {b['max_grid']}")
        if task.spec.kind is ModelKind.ANNNI and task.spec.L > b["max_chain_sites"]:
            raise BudgetError(f"L={task.spec.L} exceeds max_chain_sites {b['max_chain_sites']}")
        if task.spec.kind is ModelKind.LMG and task.spec.L + 1 > b["max_collective_dim"]:
            raise BudgetError(f"dim {task.spec.L + 1} exceeds max_collective_dim {b['max_collective_dim']}")

    def compute(self, task: SeriesTask) -> OTOCSeries:
        key = task.key()
        with self._lock:
            if key in self.results:
                return self.results[key]
        self._check_budget(task)
        sd = self.cache.get(task.spec)
        state = gibbs_state(sd, task.T, self.plan.degeneracy_tol)
        s = compute_otoc_series(task.spec, task.W, task.V, state, np.array(task.times), sd=sd,
                                lambda_c=task.lambda_c, cutoff=self.plan.weight_cutoff)
        with self._lock:
            self.results[key] = s
        return s

    def _run_one(self, task):
        name = task.name
        t0 = time.perf_counter()
        try:
            s = self.compute(task)
        except BudgetError as exc:
            return name, {"status": "skipped", "reason": str(exc)}
        except Exception as exc:  # noqa: BLE001 - recorded per task, run continues
            log.exception("task %s failed", name)
            return name, {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
        csv_path, meta_path = write_series(s, self.plan.output / "series" / f"{name}.csv")
        return name, {"status": "ok", "csv": str(csv_path.relative_to(self.plan.output)),
                      "meta": str(meta_path.relative_to(self.plan.output)),
                      "seconds": round(time.perf_counter() - t0, 3)}

    def run(self, tasks):
        (self.plan.output / "series").mkdir(parents=True, exist_ok=True)
        unique = list({t.key(): t for t in tasks}.values())
        if self.workers == 1:
            done = [self._run_one(t) for t in unique]
        else:
            with concurrent.futures.ThreadPoolExecutor(self.workers) as pool:
                done = list(pool.map(self._run_one, unique))
        for name, info in done:
            self.status[name] = info

    def series(self, task) -> OTOCSeries | None:
        return self.results.get(task.key())

    def series_fn(self, spec, W, V, T, times, lambda_c=None):
        task = SeriesTask(spec, W, V, float(T), tuple(float(t) for t in times), lambda_c)
        s = self.series(task)
        if s is None:
            raise AnalysisError(f"series {task.name} is unavailable")
        return s


# ---------------------------------------------------------------------------
# plan kinds


def _task(plan, runner, spec, T, r, site=None):
    W, V = operator_pair(spec, r, site)
    return SeriesTask(spec, W, V, float(T), tuple(float(t) for t in runner.times_for(spec)), _lambda_c(plan))


def _skip_budget(fn, *args):
    try:
        return fn(*args)
    except BudgetError:
        return None


def _r_values(plan, spec):
    return plan.params.get("r", [None]) if spec.kind is ModelKind.ANNNI else [None]


def _sweep_tasks(plan, runner, temps=None):
    template = _model_template(plan)
    tasks = []
    for L, T, lam in itertools.product(plan.params["L"], temps or plan.params.get("T", [0.0]),
                                       _fields(plan)):
        spec = template.replace(L=L, lam=lam)
        for r in _r_values(plan, spec):
            t = _skip_budget(_task, plan, runner, spec, T, r, plan.site)
            if t is None:
                runner.status[f"{spec.kind.value}_L{L}_lam{lam!r}_T{T!r}"] = {
                    "status": "skipped", "reason": "budget exceeded"}
            else:
                tasks.append(t)
    return tasks


def _series_summary(s):
    return {"L": s.meta["L"], "lam": s.meta["lam"], "T": s.meta["T"], "r": s.meta["r"],
            "F0": [s.values[0].real, s.values[0].imag],
            "max_abs_F": float(np.max(np.abs(s.values)))}


def run_series(plan, runner):
    tasks = _sweep_tasks(plan, runner)
    runner.run(tasks)
    return {"series": [_series_summary(runner.series(t)) for t in tasks if runner.series(t)]}


def _invariance_tasks(plan, runner, e):
    template = _model_template(plan)
    spec = template.replace(L=plan.params["L"][0], lam=_fields(plan)[0])
    r = plan.params["r"][0] if spec.kind is ModelKind.ANNNI else None
    base = InvarianceBase(spec, plan.params["T"][0], _grid(plan, None if {"n", "dt"} & set(plan.grid)
                                                          else runner.cache.get(spec)),
                          r, plan.site)
    tasks = []
    for b in plan.params["b"]:
        cfg = partner_base(base, e, b)
        W, V = operator_pair(cfg.spec, cfg.r, cfg.site, cfg.axis)
        tasks.append(SeriesTask(cfg.spec, W, V, float(cfg.T), tuple(float(t) for t in cfg.times),
                                e.lambda_c))
    return base, tasks


def run_invariance(plan, runner):
    e = plan.exponents
    base, tasks = _invariance_tasks(plan, runner, e)
    variants = {"exponents": e}
    if plan.contrast:
        variants["contrast"] = e.replace(**{k: float(v) for k, v in plan.contrast.items()})
        tasks += _invariance_tasks(plan, runner, variants["contrast"])[1]
    runner.run(tasks)
    report = {"mode": plan.mode, "b": plan.params["b"]}
    for label, ex in variants.items():
        rep = scaling_invariance_check(base, plan.params["b"], ex, plan.mode, runner.series_fn)
        report[label] = {"cost": rep.cost, "exponents": dataclasses.asdict(ex), "notes": rep.notes}
    if "contrast" in report:
        report["contrast_ratio"] = report["contrast"]["cost"] / report["exponents"]["cost"] \
            if report["exponents"]["cost"] > 0 else None
    return report


def _fmin_points(plan, runner, tasks):
    points = []
    for t in tasks:
        s = runner.series(t)
        if s is None:
            continue
        m = find_first_minimum(normalized_series(s))
        points.append({"L": t.spec.L, "lam": t.spec.lam, "h": s.meta["h"], "t_min": m.t_min,
                       "F_min": m.F_min})
    return points


def run_fmin_scan(plan, runner):
    tasks = _sweep_tasks(plan, runner, plan.params.get("T", [0.0])[:1])
    runner.run(tasks)
    points = _fmin_points(plan, runner, tasks)
    if plan.exponents is None or plan.exponents.lambda_c is None:
        raise AnalysisError("FminScan needs exponents.lambda_c to define h")
    triples = [(p["L"], p["h"], p["F_min"]) for p in points]
    fit = fit_nu(triples)
    report = {"points": points, "nu": fit.nu, "cost": fit.cost,
              "scan": {"nu": list(map(float, fit.scan[0])), "cost": list(map(float, fit.scan[1]))}}
    probes = sorted({plan.exponents.nu, *map(float, plan.contrast.get("nu", []))})
    report["cost_at"] = {repr(nu): fmin_collapse(triples, nu) for nu in probes}
    return report


def run_tmin_scan(plan, runner):
    tasks = _sweep_tasks(plan, runner, plan.params.get("T", [0.0])[:1])
    runner.run(tasks)
    points = _fmin_points(plan, runner, tasks)
    lam = _fields(plan)
    report = {"points": points}
    for value in lam:
        pts = [(p["L"], p["t_min"]) for p in points if p["lam"] == value]
        fit = fit_dynamical_exponent(pts)
        report.setdefault("fits", []).append({"lam": value, "z": fit.exponent, "stderr": fit.stderr,
                                              "prefactor": fit.prefactor, "residual": fit.residual})
    report["z"] = report["fits"][0]["z"]
    report["z_stderr"] = report["fits"][0]["stderr"]
    return report


def _cones(plan, runner, tasks):
    groups = {}
    for t in tasks:
        groups.setdefault((t.spec.L, t.T, t.spec.lam), {})[t.V.site - t.W.site] = runner.series(t)
    cones = []
    for (L, T, lam), by_r in sorted(groups.items()):
        entry = {"L": L, "T": T, "lam": lam, "h": lam - _lambda_c(plan) if _lambda_c(plan) is not None else None}
        if any(s is None for s in by_r.values()):
            entry["error"] = "missing series"
            cones.append(entry)
            continue
        entry["sensitivity"] = {repr(eps): {str(r): extract_scrambling_time(s, eps)
                                            for r, s in sorted(by_r.items())}
                                for eps in sorted({*EPSILON_SWEEP, plan.epsilon})}
        cone = [(r, extract_scrambling_time(s, plan.epsilon)) for r, s in sorted(by_r.items())]
        if any(ts is None for _, ts in cone):
            entry["error"] = "no scrambling on grid"
        else:
            try:
                entry["fit"] = fit_butterfly_velocity(cone, plan.epsilon).to_dict()
            except AnalysisError as exc:
                entry["error"] = str(exc)
        cones.append(entry)
    return cones


def run_light_cone(plan, runner):
    tasks = _sweep_tasks(plan, runner)
    runner.run(tasks)
    return {"epsilon": plan.epsilon, "cones": _cones(plan, runner, tasks)}


def run_butterfly_forms(plan, runner):
    report = run_light_cone(plan, runner)
    data = [(c["T"], c["h"] or 0.0, c["L"], c["fit"]["v_B"]) for c in report["cones"] if "fit" in c]
    checks = butterfly_form_checks(data, plan.exponents)
    report["checks"] = [dataclasses.asdict(c) for c in checks]
    return report


def run_locate(plan, runner):
    tasks = _sweep_tasks(plan, runner, plan.params.get("T", [0.0])[:1])
    runner.run(tasks)
    points = _fmin_points(plan, runner, tasks)
    curves = {}
    for L in plan.params["L"]:
        pts = sorted((p["lam"], p["F_min"]) for p in points if p["L"] == L)
        if pts:
            curves[L] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    est = crossing_estimate(curves)
    return {"points": points, **est.to_dict()}


_DISPATCH = {
    "SeriesRun": run_series,
    "InvarianceCheck": run_invariance,
    "FminScan": run_fmin_scan,
    "TminScan": run_tmin_scan,
    "LightCone": run_light_cone,
    "ButterflyForms": run_butterfly_forms,
    "LocateQCP": run_locate,
}


# ---------------------------------------------------------------------------
# manifest


@dataclasses.dataclass
class RunManifest:
    plan_hash: str
    plan_kind: str
    tasks: dict
    artifacts: dict
    wall_clock: float
    engine_version: str
    knobs: dict
    cache: dict
    status: str
    error: str | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.status == "success" else EXIT_PARTIAL

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, (ModelSpec, OperatorSpec)):
        return obj.to_dict()
    return obj


def execute_plan(path_or_plan, cache_dir=None, workers=None, use_cache=True) -> RunManifest:
    """Run every task of a plan, write artifacts and ``manifest.json``."""
    plan = path_or_plan if isinstance(path_or_plan, ExperimentPlan) else load_plan(path_or_plan)
    cache_dir = cache_dir or os.environ.get(CACHE_ENV) or DEFAULT_CACHE
    workers = workers or int(os.environ.get(WORKERS_ENV, "1"))
    cache = SpectralCache(cache_dir, plan.budgets, enabled=use_cache)
    runner = Runner(plan, cache, workers)
    plan.output.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    error = None
    try:
        report = _DISPATCH[plan.kind](plan, runner)
    except (AnalysisError, BudgetError) as exc:
        report, error = None, str(exc)
    wall = time.perf_counter() - t0

    artifacts = {"series": sorted(info["csv"] for info in runner.status.values() if "csv" in info)}
    if report is not None:
        report = {"plan_kind": plan.kind, "knobs": plan.knobs(), **report}
        (plan.output / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
        artifacts["report"] = "report.json"
    ok = error is None and all(info["status"] == "ok" for info in runner.status.values())
    manifest = RunManifest(
        plan_hash=plan.plan_hash, plan_kind=plan.kind, tasks=dict(sorted(runner.status.items())),
        artifacts=artifacts, wall_clock=round(wall, 3), engine_version=__version__,
        knobs={**plan.knobs(), "seed": plan.seed, "workers": workers},
        cache={"directory": str(cache_dir) if use_cache else None, "hits": cache.hits,
               "misses": cache.misses, "warnings": cache.warnings},
        status="success" if ok else "partial", error=error)
    (plan.output / "manifest.json").write_text(json.dumps(_clean(manifest.to_dict()), indent=2) + "\n")
    return manifest
