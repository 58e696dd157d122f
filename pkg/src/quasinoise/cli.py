"""Command-line driver: one scenario file, one task per run, one report out.

Exit status is 0 on success, 1 on validation errors and 2 when a resource limit or
a convergence criterion stops the computation.  Errors go to stderr as JSON that
matches ``schemas/error.schema.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from . import _accel
from .core import ConvergenceError, DensityState, HermitianObservable, ResourceError, ValidationError
from .moments import (
    add_gaussian_noise,
    calibrate_gaussian_noise,
    cauchy_schwarz_check,
    constant,
    moments_of_quasi,
    moments_to_cumulants,
    poly_mul,
)
from .noise import (
    DELTA_GROUPS,
    ConvolvedDensity,
    NoiseModel,
    OffSupport,
    delta_correlated_failure,
    density_eval,
    long_sequence_failure,
    noise_floor_estimate,
    positivity_decide,
)
from .quasiprob import DEFAULT_ATOM_LIMIT, Schedule, quasi_distribution, table1_setup
from .weakmeas import DEFAULT_ETAS, weak_limit

TASKS = (
    "quasi",
    "convolve-eval",
    "positivity",
    "long-sequence",
    "moments",
    "calibrate",
    "cs-check",
    "weak-limit",
    "noise-floor",
    "table1-demo",
)
SCENARIO_FREE = ("noise-floor", "table1-demo")
JSON_DIGITS = 17
CSV_DIGITS = 12
LIMIT_KEYS = ("atoms", "points")


# --- schemas and formatting -----------------------------------------------------------


def load_schema(name: str) -> dict:
    text = resources.files("quasinoise").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate_document(doc, schema_name: str) -> None:
    """Raise :class:`ValidationError` naming the JSON path of the first problem."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ValidationError(err.message, _json_path(err.absolute_path))


def format_float(x: float, digits: int) -> str:
    return f"{x:.{digits}g}"


def dumps(obj, digits: int = JSON_DIGITS) -> str:
    """JSON with every float at a fixed number of significant digits.

    Non-finite floats become ``null``.
    """

    def enc(o, indent):
        pad = "  " * (indent + 1)
        end = "  " * indent
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            o = float(o)
            return format_float(o, digits) if math.isfinite(o) else "null"
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, indent + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if len(o) == 0:
                return "[]"
            if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, indent + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, indent + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


# --- scenario ---------------------------------------------------------------------------


def _complex_matrix(entries) -> np.ndarray:
    def c(v):
        return complex(v[0], v[1]) if isinstance(v, list) else complex(v)

    return np.array([[c(v) for v in row] for row in entries], dtype=np.complex128)


def _rewrap(exc: ValidationError, path: str) -> ValidationError:
    return ValidationError(exc.message, path)


@dataclass
class Scenario:
    dimension: int
    observables: dict
    state: DensityState | None
    schedule: Schedule | None
    noise: NoiseModel | None
    hamiltonian: HermitianObservable | None = None
    tasks: list = field(default_factory=list)

    def options(self, task: str) -> dict:
        for entry in self.tasks:
            if entry.get("task") == task:
                return {k: v for k, v in entry.items() if k != "task"}
        return {}

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ValidationError("section is required by this task", f"$.{name if name != 'state' else 'initial_state'}")


def parse_scenario(doc) -> Scenario:
    validate_document(doc, "scenario")
    dim = doc.get("dimension")
    observables = {}
    for name, entries in doc.get("observables", {}).items():
        path = f"$.observables.{name}"
        try:
            obs = HermitianObservable(_complex_matrix(entries))
        except ValidationError as exc:
            raise _rewrap(exc, path) from None
        if dim is not None and obs.dim != dim:
            raise ValidationError(f"observable is {obs.dim}x{obs.dim}, dimension is {dim}", path)
        observables[name] = obs
    if dim is None and observables:
        dim = next(iter(observables.values())).dim

    hamiltonian = None
    if "hamiltonian" in doc:
        try:
            hamiltonian = HermitianObservable(_complex_matrix(doc["hamiltonian"]))
        except ValidationError as exc:
            raise _rewrap(exc, "$.hamiltonian") from None
        if dim is not None and hamiltonian.dim != dim:
            raise ValidationError("hamiltonian dimension differs from the scenario dimension", "$.hamiltonian")

    state = None
    if "initial_state" in doc:
        st = doc["initial_state"]
        key = "vector" if "vector" in st else "density"
        try:
            if key == "vector":
                state = DensityState.pure(np.array([complex(*v) if isinstance(v, list) else complex(v) for v in st["vector"]]))
            else:
                state = DensityState(_complex_matrix(st["density"]))
        except ValidationError as exc:
            raise _rewrap(exc, f"$.initial_state.{key}") from None
        if dim is not None and state.dim != dim:
            raise ValidationError(f"state dimension {state.dim} differs from {dim}", f"$.initial_state.{key}")

    schedule = None
    if "schedule" in doc:
        names = list(observables)
        steps = []
        for k, step in enumerate(doc["schedule"]):
            if step["observable"] not in observables:
                raise ValidationError(f"unknown observable {step['observable']!r}", f"$.schedule[{k}].observable")
            steps.append((names.index(step["observable"]), float(step.get("time", k))))
        try:
            schedule = Schedule(tuple(steps), tuple(observables[n] for n in names), hamiltonian)
        except ValidationError as exc:
            raise _rewrap(exc, "$.schedule") from None

    noise = None
    if "noise" in doc:
        nd = doc["noise"]
        groups = nd.get("groups")
        try:
            noise = NoiseModel(
                nd["kind"],
                tuple(nd["params"]),
                None if groups is None else tuple(tuple(g) for g in groups),
                None if "group_kinds" not in nd else tuple(nd["group_kinds"]),
            )
        except ValidationError as exc:
            raise _rewrap(exc, "$.noise") from None
    return Scenario(dim or 0, observables, state, schedule, noise, hamiltonian, list(doc.get("tasks", [])))


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read scenario: {exc.strerror}", None) from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc.msg} at line {exc.lineno} column {exc.colno}", None) from None
    return parse_scenario(doc)


# --- tasks ------------------------------------------------------------------------------


@dataclass
class Limits:
    atoms: int = DEFAULT_ATOM_LIMIT
    points: int = 5_000_000


def parse_limits(text: str | None) -> Limits:
    limits = Limits()
    if not text:
        return limits
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in LIMIT_KEYS:
            raise ValidationError(f"expected key=value with key in {LIMIT_KEYS}, got {part!r}", "--limits")
        try:
            v = int(float(value))
        except ValueError:
            raise ValidationError(f"limit {key} is not a number", "--limits") from None
        if v <= 0:
            raise ValidationError(f"limit {key} must be positive", "--limits")
        setattr(limits, key, v)
    return limits


def _opt(opts: dict, key: str, default, kind=float):
    if key not in opts:
        return default
    try:
        return kind(opts[key])
    except (TypeError, ValueError):
        raise ValidationError(f"option {key} has the wrong type", f"$.tasks.{key}") from None


def _parse_poly(spec, n: int, name: str) -> dict:
    if not isinstance(spec, dict):
        raise ValidationError("polynomial must map 'e1,e2,...' exponent keys to coefficients", f"$.tasks.{name}")
    poly = {}
    for key, coef in spec.items():
        try:
            e = tuple(int(x) for x in str(key).split(","))
        except ValueError:
            raise ValidationError(f"bad exponent key {key!r}", f"$.tasks.{name}") from None
        if len(e) != n or min(e) < 0:
            raise ValidationError(f"exponent key {key!r} needs {n} non-negative entries", f"$.tasks.{name}")
        poly[e] = float(coef)
    return poly


def _quasi(sc: Scenario, limits: Limits):
    sc.require("state", "schedule")
    return quasi_distribution(sc.state, sc.schedule, limits.atoms)


def task_quasi(sc, limits):
    q = _quasi(sc, limits)
    atoms = [{"outcome": [float(x) for x in o], "weight": float(w)} for o, w in zip(q.outcomes, q.weights)]
    return {"n": q.n, "atoms": atoms, "total": q.total}


def task_table1(sc, limits):
    rho, sched = table1_setup()
    q = quasi_distribution(rho, sched, limits.atoms)
    entries = [{"a": float(a), "b": float(b), "q": q.weight((a, b))} for a in (-1, 0, 1) for b in (-1, 1)]
    return {"entries": entries}


def task_convolve(sc, limits):
    sc.require("noise")
    q = _quasi(sc, limits)
    dens = ConvolvedDensity(q, sc.noise)
    points = sc.options("convolve-eval").get("points")
    points = [list(map(float, o)) for o in q.outcomes] if points is None else points
    values = []
    for k, pt in enumerate(points):
        try:
            v = density_eval(dens, pt)
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(getattr(exc, "message", exc)), f"$.tasks.points[{k}]") from None
        off = isinstance(v, OffSupport)
        values.append({"point": [float(x) for x in pt], "value": None if off else float(v), "off_support": off})
    return {"values": values}


def task_positivity(sc, limits):
    sc.require("noise")
    opts = sc.options("positivity")
    q = _quasi(sc, limits)
    report = positivity_decide(
        ConvolvedDensity(q, sc.noise),
        box_margin=_opt(opts, "box_margin", None),
        grid_step=_opt(opts, "grid_step", None),
        max_points=_opt(opts, "max_points", limits.points, int),
    )
    return report.to_json()


def task_long_sequence(sc, limits):
    sc.require("noise")
    opts = sc.options("long-sequence")
    if sc.noise.kind == DELTA_GROUPS:
        raise ValidationError("long-sequence uses independent per-step noise", "$.noise.kind")
    if sc.state is not None and sc.state.dim != 2:
        raise ValidationError("long-sequence runs on a qubit", "$.initial_state")
    n_max = _opt(opts, "n_max", 64, int)
    if n_max < 2:
        raise ValidationError("n_max must be at least 2", "$.tasks.n_max")
    out = {"independent": long_sequence_failure(n_max, sc.noise, sc.state).to_json()}
    if opts.get("delta_correlated", True):
        pa, pb = sc.noise.params[0], sc.noise.params[-1]
        out["delta_correlated"] = delta_correlated_failure(
            (sc.noise.kind, pa), (sc.noise.kind, pb), sc.state
        ).to_json()
    return out


def _moments(sc, limits, K):
    if not 1 <= K <= 12:
        raise ValidationError("K must lie in 1..12", "$.tasks.K")
    return moments_of_quasi(_quasi(sc, limits), K)


def task_moments(sc, limits):
    m = _moments(sc, limits, _opt(sc.options("moments"), "K", 4, int))
    return {"moments": m.to_json(), "cumulants": moments_to_cumulants(m).to_json()}


def task_calibrate(sc, limits):
    opts = sc.options("calibrate")
    D = _opt(opts, "D", 3, int)
    if D < 1:
        raise ValidationError("D must be at least 1", "$.tasks.D")
    m = _moments(sc, limits, 2 * D)
    res = calibrate_gaussian_noise(
        m, D, bracket_width=_opt(opts, "bracket_width", 1e-6), direction=opts.get("direction")
    )
    return {"D": D, **res.to_json()}


def task_cs_check(sc, limits):
    sc.require("schedule")
    opts = sc.options("cs-check")
    n = sc.schedule.n
    if "u" in opts:
        u = _parse_poly(opts["u"], n, "u")
    elif n == 2:
        u = poly_mul({(0, 0): 1.0, (2, 0): -1.0}, {(0, 0): 0.5, (0, 1): -0.5})
    else:
        raise ValidationError("option u is required unless the schedule has two steps", "$.tasks.u")
    v = _parse_poly(opts["v"], n, "v") if "v" in opts else constant(n)
    deg = max(max(sum(e) for e in u), max(sum(e) for e in v))
    m = _moments(sc, limits, max(2 * deg, 1))
    variance = _opt(opts, "noise_variance", 0.0)
    if variance < 0:
        raise ValidationError("noise_variance must be non-negative", "$.tasks.noise_variance")
    if variance > 0:
        m = add_gaussian_noise(m, [variance] * n)
    lhs, rhs, violated = cauchy_schwarz_check(m, u, v, tol=_opt(opts, "tol", 1e-12))
    return {"lhs": lhs, "rhs": rhs, "violated": violated, "noise_variance": variance}


def task_weak_limit(sc, limits):
    sc.require("state", "schedule")
    opts = sc.options("weak-limit")
    selection = [int(s) for s in opts.get("selection", range(sc.schedule.n))]
    etas = opts.get("eta_list", DEFAULT_ETAS)
    report = weak_limit(sc.state, sc.schedule, selection, etas)
    return {"selection": selection, **report.to_json()}


def task_noise_floor(sc, limits):
    opts = {} if sc is None else sc.options("noise-floor")
    keys = ("particle_count", "box_side", "duration_seconds", "micro_length", "micro_time_meters")
    return noise_floor_estimate(**{k: float(opts[k]) for k in keys if k in opts}).to_json()


HANDLERS = {
    "quasi": task_quasi,
    "convolve-eval": task_convolve,
    "positivity": task_positivity,
    "long-sequence": task_long_sequence,
    "moments": task_moments,
    "calibrate": task_calibrate,
    "cs-check": task_cs_check,
    "weak-limit": task_weak_limit,
    "noise-floor": task_noise_floor,
    "table1-demo": task_table1,
}


# --- CSV --------------------------------------------------------------------------------


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def _cell(v, digits=CSV_DIGITS) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format_float(float(v), digits) if math.isfinite(v) else "nan"
    return str(v)


def to_csv(task: str, result: dict) -> str:
    """Stable per-task columns; tasks without a natural table use ``field,value`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if task == "quasi":
        w.writerow([f"x{i}" for i in range(result["n"])] + ["weight"])
        for atom in result["atoms"]:
            w.writerow([_cell(x) for x in atom["outcome"]] + [_cell(atom["weight"])])
    elif task == "table1-demo":
        w.writerow(["a", "b", "q"])
        for e in result["entries"]:
            w.writerow([_cell(e["a"]), _cell(e["b"]), _cell(e["q"])])
    elif task == "convolve-eval":
        n = len(result["values"][0]["point"]) if result["values"] else 0
        w.writerow([f"x{i}" for i in range(n)] + ["value", "off_support"])
        for e in result["values"]:
            w.writerow([_cell(x) for x in e["point"]] + [_cell(e["value"]), _cell(e["off_support"])])
    elif task == "moments":
        w.writerow(["index", "moment", "cumulant"])
        for key, val in result["moments"]["values"].items():
            w.writerow([key, _cell(val), _cell(result["cumulants"]["values"][key])])
    elif task == "weak-limit":
        w.writerow(["eta", "value"])
        for eta, val in zip(result["eta_list"], result["values"]):
            w.writerow([_cell(eta), _cell(val)])
        w.writerow([])
        w.writerow(["field", "value"])
        for key in ("extrapolated", "reference", "discrepancy", "fitted_order", "flagged", "note"):
            w.writerow([key, _cell(result[key])])
    else:
        w.writerow(["field", "value"])
        for key, val in _flatten(result):
            w.writerow([key, _cell(val)])
    return buf.getvalue()


# --- entry point ------------------------------------------------------------------------


def run(scenario_path: str | None, task: str, output_path: str | None = None, fmt: str = "json",
        threads: int | None = None, limits: str | None = None) -> int:
    """Execute one task; returns the process exit status."""
    try:
        if task not in HANDLERS:
            raise ValidationError(f"unknown task {task!r}; choose from {', '.join(TASKS)}", "--task")
        if fmt not in ("json", "csv"):
            raise ValidationError(f"unknown format {fmt!r}", "--format")
        lim = parse_limits(limits)
        if threads is not None:
            if threads < 1:
                raise ValidationError("thread count must be positive", "--threads")
            _accel.set_threads(threads)
        if scenario_path is None:
            if task not in SCENARIO_FREE:
                raise ValidationError("this task needs --scenario", "--scenario")
            sc = None
        else:
            sc = load_scenario(scenario_path)
        result = HANDLERS[task](sc, lim)
        report = {"task": task, "result": result}
        if fmt == "json":
            text = dumps(report)
            validate_document(json.loads(text), "report")
        else:
            text = to_csv(task, result)
    except ValidationError as exc:
        return _fail("validation", exc.message, exc.path, 1)
    except ResourceError as exc:
        return _fail("resource", str(exc), None, 2)
    except MemoryError:
        return _fail("resource", "out of memory", None, 2)
    except ConvergenceError as exc:
        return _fail("convergence", str(exc), None, 2)

    if output_path is None:
        sys.stdout.write(text)
    else:
        with open(output_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return 0


def _fail(kind: str, message: str, path: str | None, code: int) -> int:
    sys.stderr.write(dumps({"error": {"type": kind, "message": message, "path": path, "exit_code": code}}))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quasinoise", description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", help="scenario JSON file (optional for noise-floor and table1-demo)")
    parser.add_argument("--task", required=True, help=f"one of: {', '.join(TASKS)}")
    parser.add_argument("--out", help="output file (default: stdout)")
    parser.add_argument("--format", default="json", help="json (17 significant digits) or csv (12)")
    parser.add_argument("--threads", type=int, help="cap on worker threads for the numeric kernels")
    parser.add_argument("--limits", help="comma-separated caps, e.g. atoms=1000000,points=2000000")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.scenario, args.task, args.out, args.format, args.threads, args.limits)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
