"""Scenario documents, the MC-vs-FDMC benchmark harness and result output."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from fdmc.errors import FdmcError, ScenarioError
from fdmc.estimators import EstimateResult, fdmc_estimate, mc_estimate
from fdmc.linalg import GaussianDist
from fdmc.process import ChannelModel, ChannelSet, LinearSde, build_fdd
from fdmc.sampling import (
    ObstacleTrack,
    PlanMode,
    SamplingPlan,
    default_filter_alpha,
    equidistant_plan,
    equitime_plan,
    importance_filter,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "method",
    "cp",
    "ci_halfwidth",
    "confidence",
    "trials",
    "points_used",
    "wall_time_s",
    "seed",
    "epsilon_bound",
]
DEFAULTS = {
    "trials": 100_000,
    "confidence": 0.95,
    "seed": 0,
    "filter_alpha": None,
    "exact_step": False,
    "sampling": {"mode": PlanMode.ROOTSOLVE.value, "N": 5000, "N_ed": 200},
}
CHANNEL_DEFAULTS = {"c": 0.0, "G": 0.0, "mu0": 0.0, "mudot0": 0.0, "sigma_x": 0.0, "sigma_v": 0.0, "rho": 0.0}
INTEGER_FIELDS = {"trials", "seed", "N", "N_ed"}
# fields that do not change any numeric output
UNHASHED = {"description"}


def load_schema() -> dict:
    return json.loads(resources.files("fdmc.data").joinpath("scenario.schema.json").read_text())


def shipped_scenario(name: str) -> Path | None:
    """Path of a scenario bundled with the package, or None."""
    ref = resources.files("fdmc.data").joinpath(name)
    return Path(str(ref)) if name.endswith(".json") and ref.is_file() else None


@dataclass(frozen=True, eq=False)
class Scenario:
    horizon_s: float
    vehicle_radius_m: float
    model: ChannelSet | LinearSde
    obstacles: tuple[ObstacleTrack, ...]
    trials: int
    sampling_mode: PlanMode
    n_equitime: int
    n_equidistant: int
    filter_alpha: float | None
    confidence: float
    seed: int
    exact_step: bool = False
    name: str = ""
    document: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def hash(self) -> str:
        return scenario_hash(self.document)

    def with_overrides(self, **changes) -> Scenario:
        """Copy with top-level fields replaced, keeping the document in sync."""
        doc = json.loads(json.dumps(self.document))
        doc.update({k: v for k, v in changes.items() if v is not None})
        return _build(doc)


def _canonical(value, key: str | None = None):
    if isinstance(value, dict):
        return {k: _canonical(v, k) for k, v in sorted(value.items()) if k not in UNHASHED}
    if isinstance(value, list):
        return [_canonical(v, key) for v in value]
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if key in INTEGER_FIELDS:
        return int(value)
    return float(value)


def scenario_hash(document: dict) -> str:
    """SHA-256 of the canonical form: sorted keys, numbers normalized, descriptions dropped."""
    text = json.dumps(_canonical(document), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _value_lines(text: str) -> dict[tuple, int]:
    """Map each JSON path (tuple of keys/indices) to the line where its value starts."""
    decoder = json.JSONDecoder()
    lines: dict[tuple, int] = {}

    def skip(i):
        while i < len(text) and text[i] in " \t\r\n":
            i += 1
        return i

    def walk(i, path):
        i = skip(i)
        lines[path] = text.count("\n", 0, i) + 1
        if text[i] == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = json.decoder.scanstring(text, skip(i) + 1)
                i = skip(i)
                i = walk(i + 1, path + (key,))
                i = skip(i)
                if text[i] == "}":
                    return i + 1
                i += 1
        if text[i] == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(walk(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = decoder.raw_decode(text, i)
        return end

    walk(0, ())
    return lines


def parse_scenario(text: str) -> Scenario:
    """Validate a JSON scenario document and build a :class:`Scenario`.

    Raises:
        ScenarioError: on malformed JSON, schema violations or invalid values;
            the message names the field and its line.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON: {exc.msg}", line=exc.lineno) from exc
    lines = _value_lines(text)

    def line_of(path) -> int | None:
        path = tuple(path)
        while path and path not in lines:
            path = path[:-1]
        return lines.get(path)

    errors = sorted(jsonschema.Draft202012Validator(load_schema()).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        name = ".".join(str(p) for p in path) or None
        raise ScenarioError(err.message, field=name, line=line_of(path))
    try:
        return _build(doc)
    except ScenarioError as exc:
        if exc.line is None and exc.field is not None:
            path = [int(p) if p.isdigit() else p for p in exc.field.split(".")]
            raise ScenarioError(str(exc).split(": ", 1)[-1], field=exc.field, line=line_of(path)) from None
        raise


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def _require(ok: bool, field_name: str, message: str):
    if not ok:
        raise ScenarioError(message, field=field_name)


def _build(doc: dict) -> Scenario:
    doc = json.loads(json.dumps(doc))
    for key, value in DEFAULTS.items():
        if key == "sampling":
            doc["sampling"] = {**value, **doc.get("sampling", {})}
        else:
            doc.setdefault(key, value)

    T, r = float(doc["horizon_s"]), float(doc["vehicle_radius_m"])
    _require(T > 0, "horizon_s", f"horizon must be positive, got {T}")
    _require(r > 0, "vehicle_radius_m", f"radius must be positive, got {r}")

    if "channels" in doc:
        chans = []
        for k, spec in enumerate(doc["channels"]):
            spec = {**CHANNEL_DEFAULTS, **spec}
            doc["channels"][k] = spec
            try:
                chans.append(ChannelModel(**spec))
            except FdmcError as exc:
                raise ScenarioError(str(exc), field=f"channels.{k}") from None
        model = ChannelSet(tuple(chans))
    else:
        s = doc["sde"]
        try:
            model = LinearSde(s["A"], s["c"], s["S"], GaussianDist(s["mean0"], s["cov0"]), s["Tp"], s["Tv"])
        except (FdmcError, ValueError) as exc:
            raise ScenarioError(str(exc), field="sde") from None
        _require(1 <= model.dim <= 3, "sde.Tp", f"spatial dimension must be 1 to 3, got {model.dim}")

    obstacles = []
    for k, ob in enumerate(doc["obstacles"]):
        ob.setdefault("velocity", [0.0] * len(ob["center0"]))
        _require(ob["radius"] > 0, f"obstacles.{k}.radius", f"radius must be positive, got {ob['radius']}")
        _require(
            len(ob["center0"]) == model.dim == len(ob["velocity"]),
            f"obstacles.{k}.center0",
            f"obstacle vectors must have {model.dim} entries",
        )
        obstacles.append(ObstacleTrack(ob["center0"], ob["velocity"], ob["radius"]))

    samp = doc["sampling"]
    _require(doc["trials"] >= 1, "trials", f"trial count must be positive, got {doc['trials']}")
    _require(samp["N"] >= 1, "sampling.N", f"N must be positive, got {samp['N']}")
    _require(samp["N_ed"] >= 1, "sampling.N_ed", f"N_ed must be positive, got {samp['N_ed']}")
    _require(0 < doc["confidence"] < 1, "confidence", f"confidence must lie in (0, 1), got {doc['confidence']}")
    alpha = doc["filter_alpha"]
    _require(alpha is None or 0 < alpha < 1, "filter_alpha", f"filter_alpha must lie in (0, 1), got {alpha}")

    return Scenario(
        horizon_s=T,
        vehicle_radius_m=r,
        model=model,
        obstacles=tuple(obstacles),
        trials=int(doc["trials"]),
        sampling_mode=PlanMode(samp["mode"]),
        n_equitime=int(samp["N"]),
        n_equidistant=int(samp["N_ed"]),
        filter_alpha=None if alpha is None else float(alpha),
        confidence=float(doc["confidence"]),
        seed=int(doc["seed"]),
        exact_step=bool(doc["exact_step"]),
        name=doc.get("name", ""),
        document=doc,
    )


def plan_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2,))))


def fdmc_plan(sc: Scenario) -> SamplingPlan:
    """The unfiltered FDMC plan: ``N_ed`` points in the configured mode."""
    if sc.sampling_mode is PlanMode.EQUITIME:
        return equitime_plan(sc.horizon_s, sc.n_equidistant)
    return equidistant_plan(sc.model, sc.horizon_s, sc.n_equidistant, sc.sampling_mode, rng=plan_rng(sc.seed))


def filtered_plan(sc: Scenario, plan: SamplingPlan | None = None) -> tuple[SamplingPlan, SamplingPlan]:
    plan = plan if plan is not None else fdmc_plan(sc)
    alpha = sc.filter_alpha if sc.filter_alpha is not None else default_filter_alpha(len(plan))
    return plan, importance_filter(plan, sc.model, sc.obstacles, sc.vehicle_radius_m, alpha)


@dataclass
class RunReport:
    results: dict[str, EstimateResult]
    retained_intervals: list[tuple[float, float]]
    scenario_hash: str
    speedup: float | None = None

    def to_dict(self) -> dict:
        return {
            "results": {k: v.to_dict() for k, v in self.results.items()},
            "retained_intervals": [list(iv) for iv in self.retained_intervals],
            "scenario_hash": self.scenario_hash,
            "speedup": self.speedup,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunReport:
        return cls(
            results={k: EstimateResult(**v) for k, v in data["results"].items()},
            retained_intervals=[tuple(iv) for iv in data["retained_intervals"]],
            scenario_hash=data["scenario_hash"],
            speedup=data["speedup"],
        )


def run_benchmark(sc: Scenario, methods=("mc", "fdmc"), workers: int = 1) -> RunReport:
    """Run the requested estimators on ``sc``.

    FDMC wall time covers plan selection, filtering, FDD construction and
    sampling; MC wall time covers path propagation.
    """
    methods = set(methods)
    unknown = methods - {"mc", "fdmc"}
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    results: dict[str, EstimateResult] = {}
    intervals: list[tuple[float, float]] = []

    if "mc" in methods:
        results["mc"] = mc_estimate(
            sc.model,
            sc.obstacles,
            sc.vehicle_radius_m,
            sc.horizon_s,
            sc.n_equitime,
            sc.trials,
            sc.seed,
            confidence=sc.confidence,
            workers=workers,
            exact_step=sc.exact_step,
        )
        log.info("mc: cp=%.6g +/- %.3g in %.2fs", results["mc"].cp, results["mc"].ci_halfwidth, results["mc"].wall_time_s)

    if "fdmc" in methods:
        start = time.perf_counter()
        plan, kept = filtered_plan(sc)
        fdd = build_fdd(sc.model, kept.times, sc.horizon_s) if len(kept) else None
        res = fdmc_estimate(
            fdd,
            sc.obstacles,
            sc.vehicle_radius_m,
            sc.trials,
            sc.seed,
            confidence=sc.confidence,
            workers=workers,
            epsilon_bound=len(plan) * kept.alpha,
        )
        results["fdmc"] = dataclasses.replace(res, wall_time_s=time.perf_counter() - start)
        intervals = kept.retained_intervals(plan)
        log.info(
            "fdmc: cp=%.6g +/- %.3g from %d of %d points in %.2fs",
            res.cp,
            res.ci_halfwidth,
            len(kept),
            len(plan),
            results["fdmc"].wall_time_s,
        )

    speedup = None
    if "mc" in results and "fdmc" in results and results["fdmc"].wall_time_s > 0:
        speedup = results["mc"].wall_time_s / results["fdmc"].wall_time_s
    return RunReport(results, intervals, sc.hash, speedup)


def _fmt(value) -> str:
    # repr gives the shortest round-tripping form and ignores the locale
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_csv(report: RunReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for method in ("mc", "fdmc"):
        if method in report.results:
            row = report.results[method].to_dict()
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_results(report: RunReport, fmt: str, path: str | Path) -> None:
    """Write ``report`` as CSV (one row per method) or as lossless JSON."""
    if fmt == "csv":
        text = results_csv(report)
    elif fmt == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def read_report(path: str | Path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))


def emit_plot_data(sc: Scenario, report: RunReport | None, path: str | Path) -> list[Path]:
    """Write CSV series for the sampling-density and scene figures into directory ``path``.

    * ``sampling_x.csv`` -- expected x position against time for the equitime
      and equidistant plans of equal size.
    * ``trajectory.csv`` -- expected vehicle position on a dense time grid.
    * ``obstacles.csv`` -- obstacle centers on the same grid.
    * ``intervals.csv`` -- time intervals kept by the importance filter.
    """
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create plot directory {out}: {exc.strerror or exc}") from exc
    written = []

    def write(name, header, rows):
        target = out / name
        with target.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[_fmt(v) for v in row] for row in rows])
        written.append(target)

    plan = fdmc_plan(sc)
    equi = equitime_plan(sc.horizon_s, len(plan))
    rows = []
    for label, p in (("equitime", equi), ("equidistant", plan)):
        xs = sc.model.position_mean(p.times)[:, 0]
        rows += [(label, float(t), float(x)) for t, x in zip(p.times, xs)]
    write("sampling_x.csv", ["plan", "t", "expected_x"], rows)

    grid = np.linspace(0.0, sc.horizon_s, 1001)
    pos = sc.model.position_mean(grid)
    axes = ["x", "y", "z"][: sc.dim]
    write("trajectory.csv", ["t", *axes], [(float(t), *map(float, p)) for t, p in zip(grid, pos)])
    rows = []
    for j, ob in enumerate(sc.obstacles):
        rows += [(j + 1, float(t), *map(float, c)) for t, c in zip(grid, ob.center(grid))]
    write("obstacles.csv", ["obstacle", "t", *axes], rows)

    intervals = report.retained_intervals if report is not None and "fdmc" in report.results else None
    if intervals is None:
        base, kept = filtered_plan(sc, plan)
        intervals = kept.retained_intervals(base)
    write("intervals.csv", ["interval", "t_start", "t_end"], [(k + 1, a, b) for k, (a, b) in enumerate(intervals)])
    return written
