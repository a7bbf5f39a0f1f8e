"""Experiment pipelines: TOML configs, staged runs, hashed manifests and reports."""

import asyncio
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, NamedTuple, Optional

import async_timeout
import numpy as np
from cryptography.hazmat.primitives import hashes

from . import extension, gridset, porosity, spectral, weights
from .const import (
    MANIFEST_NAME,
    MIN_RESOLVED_CELLS,
    PROJECTION_TOLERANCE,
    PSH_TOLERANCE,
    STAGE_FUP_NORM,
    STAGE_FUP_SCAN,
    STAGE_GENERATOR,
    STAGE_KINDS,
    STAGE_MODIFY,
    STAGE_POROSITY,
    STAGE_PSH_CHECK,
    STAGE_TIMEOUT,
    STAGE_WEIGHT_BUILD,
    STATUS_FAILED,
    STATUS_PASSED,
    STATUS_SKIPPED,
    SUMMARY_NAME,
)
from .exceptions import FupLabConfigError, FupLabError, FupLabFormatError, FupLabStageError
from .modification import ModifiedWeight, modify_weight, q_partial_sums, save_any_weight
from .models import (
    Artifact,
    CantorSpec,
    ExperimentConfig,
    Manifest,
    SampleSpec,
    ScanEntry,
    StageDescriptor,
    StageRecord,
)
from .sampling import sphere_directions

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_LOGGER = logging.getLogger("fuplab")

_FAMILIES = ("cantor", "sierpinski", "box-porous")
_HISTOGRAM_BINS = 20

# Stage kind -> (number of inputs allowed, kinds those inputs may come from)
_INPUTS = {
    STAGE_GENERATOR: ((0,), ()),
    STAGE_POROSITY: ((1,), (STAGE_GENERATOR,)),
    STAGE_WEIGHT_BUILD: ((1,), (STAGE_GENERATOR,)),
    STAGE_MODIFY: ((1,), (STAGE_WEIGHT_BUILD,)),
    STAGE_PSH_CHECK: ((1,), (STAGE_WEIGHT_BUILD, STAGE_MODIFY)),
    STAGE_FUP_SCAN: ((0,), ()),
    STAGE_FUP_NORM: ((1, 2), (STAGE_GENERATOR,)),
}


class StageOutcome(NamedTuple):
    passed: Optional[bool]
    values: Dict[str, Any]
    files: List[str]
    product: Any = None


def file_digest(path: str) -> str:
    """Hex SHA-256 of a file."""

    digest = hashes.Hash(hashes.SHA256())
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b""):
            digest.update(chunk)
    return digest.finalize().hex()


def _artifact_kind(path: str) -> str:
    name = os.path.basename(path)
    for suffix, kind in ((".gset", "gset"), (".weight.json", "weight"), (".cert.json", "cert"),
                         (".scan.csv", "scan"), (".fit.json", "fit"), (".porosity.json", "porosity")):
        if name.endswith(suffix):
            return kind
    return "data"


def _stage_from_table(table: Dict[str, Any]) -> StageDescriptor:
    if not isinstance(table, dict):
        raise FupLabConfigError("every [[stage]] entry must be a table")
    params = dict(table)
    try:
        kind = params.pop("kind")
        name = params.pop("name")
    except KeyError as err:
        raise FupLabConfigError(f"stage is missing {err}") from err
    inputs = params.pop("inputs", None)
    single = params.pop("input", None)
    if inputs is None:
        inputs = [] if single is None else [single]
    elif single is not None:
        raise FupLabConfigError(f"stage {name} sets both input and inputs")
    if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
        raise FupLabConfigError(f"stage {name} inputs must be stage names")
    return StageDescriptor(str(kind), str(name), params, tuple(inputs))


def parse_config(data: Dict[str, Any], base_dir: str = ".") -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a decoded TOML document."""

    try:
        name = str(data.get("name", "experiment"))
        seed = int(data.get("seed", 0))
        output_dir = os.path.join(base_dir, str(data.get("output_dir", "out")))
        tolerances = {str(k): float(v) for k, v in data.get("tolerances", {}).items()}
    except (TypeError, ValueError, AttributeError) as err:
        raise FupLabConfigError(f"malformed experiment header: {err}") from err
    stages = data.get("stage", [])
    if not isinstance(stages, list):
        raise FupLabConfigError("stage must be an array of tables")
    cfg = ExperimentConfig(name, [_stage_from_table(table) for table in stages], seed, output_dir, tolerances)
    validate_config(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    """Read a TOML experiment file; output_dir is taken relative to the file."""

    try:
        with open(path, "rb") as fp:
            data = tomllib.load(fp)
    except OSError as err:
        raise FupLabConfigError(f"cannot read {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise FupLabConfigError(f"{path} is not valid TOML: {err}") from err
    return parse_config(data, os.path.dirname(os.path.abspath(path)))


def validate_config(cfg: ExperimentConfig) -> None:
    if not 0 <= cfg.seed < 2 ** 64:
        raise FupLabConfigError(f"seed must be a 64-bit unsigned integer, got {cfg.seed}")
    produced: Dict[str, str] = {}
    for stage in cfg.pipeline:
        if stage.kind not in STAGE_KINDS:
            raise FupLabConfigError(f"unknown stage kind {stage.kind!r} in stage {stage.name}")
        if not stage.name or stage.name in produced:
            raise FupLabConfigError(f"stage names must be unique and non-empty, got {stage.name!r}")
        counts, sources = _INPUTS[stage.kind]
        if len(stage.inputs) not in counts:
            raise FupLabConfigError(f"{stage.kind} stage {stage.name} takes {counts} inputs, got {len(stage.inputs)}")
        for ref in stage.inputs:
            if ref not in produced:
                raise FupLabConfigError(f"stage {stage.name} reads {ref!r}, which no earlier stage produces")
            if produced[ref] not in sources:
                raise FupLabConfigError(f"stage {stage.name} cannot read the output of {produced[ref]} stage {ref}")
        if stage.kind == STAGE_GENERATOR and stage.params.get("family", "cantor") not in _FAMILIES:
            raise FupLabConfigError(f"unknown family {stage.params.get('family')!r} in stage {stage.name}")
        if stage.kind == STAGE_FUP_SCAN and len(stage.params.get("depths", [])) < 3:
            raise FupLabConfigError(f"fup-scan stage {stage.name} needs at least three depths")
        produced[stage.name] = stage.kind


def cantor_spec(params: Dict[str, Any]) -> CantorSpec:
    """CantorSpec from dim/base/digits/depth parameters; digits may be one list or one list per axis."""

    dim = int(params.get("dim", 2))
    base = int(params.get("base", 3))
    digits = params.get("digits", [0, 2])
    depth = int(params.get("depth", 1))
    if digits and isinstance(digits[0], list):
        return CantorSpec(dim, base, tuple(tuple(sorted(int(d) for d in axis)) for axis in digits), depth)
    return CantorSpec.uniform(dim, base, [int(d) for d in digits], depth)


class StageContext(NamedTuple):
    output_dir: str
    seed: int
    tolerances: Dict[str, float]
    inputs: List[Any]


def _path(ctx: StageContext, stage: StageDescriptor, suffix: str) -> str:
    return os.path.join(ctx.output_dir, stage.name + suffix)


def _run_generator(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    params = stage.params
    family = params.get("family", "cantor")
    if family == "sierpinski":
        s = gridset.gen_sierpinski(int(params["depth"]))
    elif family == "box-porous":
        s = gridset.gen_box_porous(int(params.get("dim", 2)), int(params.get("base", 3)), int(params["depth"]),
                                   int(params.get("seed", ctx.seed)), int(params.get("removed", 1)))
    else:
        s = gridset.gen_cantor_product(cantor_spec(params), frequency=bool(params.get("frequency", False)))
    path = _path(ctx, stage, ".gset")
    gridset.save_gridset(s, path)
    measure = gridset.lebesgue_measure(s)
    return StageOutcome(None, {"cells": s.count, "side": s.side, "measure": str(measure)}, [path], s)


def _run_porosity(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    s = ctx.inputs[0]
    params = stage.params
    shape = params.get("shape", "line")
    if shape == "box":
        L = int(params.get("L", 3))
        levels = porosity.box_porosity_levels(s, L)
        data = {"kind": "box", "L": L, "levels": {str(n): ok for n, ok in levels.items()}}
        passed = all(levels.values())
    else:
        a0 = float(params.get("a0", MIN_RESOLVED_CELLS * s.scale))
        a1 = float(params.get("a1", s.scale * s.side))
        nu = params.get("nu")
        seed = int(params.get("seed", ctx.seed))
        if shape == "ball":
            report = porosity.analyze_ball_porosity(s, a0, a1, nu, seed=seed)
        else:
            report = porosity.analyze_line_porosity(s, a0, a1, int(params.get("directions", 8)), nu, seed=seed)
        data = report.as_dict()
        passed = report.nu_max >= float(nu) if nu is not None else report.nu_max > 0
    path = _path(ctx, stage, ".porosity.json")
    with open(path, "w") as fp:
        json.dump(data, fp, indent=2)
    return StageOutcome(passed, {k: v for k, v in data.items() if not isinstance(v, (dict, list))}, [path])


def _run_weight_build(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    Y = ctx.inputs[0]
    params = stage.params
    try:
        alpha = float(params["alpha"])
    except KeyError as err:
        raise FupLabConfigError(f"weight-build stage {stage.name} needs alpha") from err
    w = weights.build_damping_weight(Y, float(params.get("nu", 0.1)), float(params.get("mu", 10 * math.sqrt(2))),
                                     alpha, float(params.get("s", weights.DEFAULT_S)))
    passed, worst, checked = weights.damping_lower_bound_check(w, Y)
    path = _path(ctx, stage, ".weight.json")
    weights.save_weight(w, path)
    values = {"shells": w.shells, "lower_bound_margin": worst, "points_checked": checked}
    return StageOutcome(passed, values, [path], w)


def _projection_spread(mw: ModifiedWeight, directions: int) -> float:
    """Largest deviation of a modified shell's projection from q_k, relative to the shell's scale."""

    dirs = sphere_directions(mw.dim, directions)
    spread = 0.0
    for k, correction in mw.corrections.items():
        scale = max(1.0, abs(mw.q[k]))
        if correction.table is not None:
            scale = max(scale, float(np.max(np.abs(correction.table))))
        values = weights.spherical_projection(mw.modified_piece(k), dirs)
        spread = max(spread, float(np.max(np.abs(values - mw.q[k]))) / scale)
    return spread


def _run_modify(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    params = stage.params
    kwargs = {key: int(params[key]) for key in ("samples", "max_samples", "start") if key in params}
    mw = modify_weight(ctx.inputs[0], **kwargs)
    spread = _projection_spread(mw, int(params.get("directions", 100)))
    tolerance = ctx.tolerances.get("projection", PROJECTION_TOLERANCE)
    path = _path(ctx, stage, ".weight.json")
    save_any_weight(mw, path)
    sums = q_partial_sums(mw)
    values = {
        "q": {str(k): v for k, v in sorted(mw.q.items())},
        "q_abs_sum": sums[-1][1] if sums else 0.0,
        "projection_spread": spread,
    }
    return StageOutcome(spread <= tolerance, values, [path], mw)


def _run_psh_check(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    w = ctx.inputs[0]
    params = stage.params
    spec = SampleSpec(
        count=int(params.get("count", SampleSpec().count)),
        seed=int(params.get("seed", ctx.seed)),
        radius=params.get("radius"),
        y_min=float(params.get("y_min", SampleSpec().y_min)),
        y_max=float(params.get("y_max", SampleSpec().y_max)),
        adversarial=bool(params.get("adversarial", True)),
        hilbert_lines=int(params.get("hilbert_lines", SampleSpec().hilbert_lines)),
        extra_lines=int(params.get("extra_lines", 0)),
    )
    C = params.get("C", "auto")
    scan = None
    if C == "auto":
        scan = extension.scan_constants(w, spec)
        C = max(scan.C1, scan.C2)
    cert = extension.psh_certificate(w, float(C), spec, ctx.tolerances.get("psh", PSH_TOLERANCE))
    data = cert.as_dict()
    data["scan"] = None if scan is None else scan._asdict()
    path = _path(ctx, stage, ".cert.json")
    with open(path, "w") as fp:
        json.dump(data, fp, indent=2)
    values = {"C": float(C), "global_min": cert.global_min, "real_locus_margin": cert.real_locus_margin,
              "points": len(cert.sample_points)}
    return StageOutcome(cert.passed, values, [path], cert)


def _run_fup_scan(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    params = stage.params
    spec = cantor_spec(params)
    N_list = [spec.base ** int(depth) for depth in params["depths"]]
    window = params.get("window")
    scan = spectral.fup_scan(spec, N_list, None if window is None else tuple(window), seed=ctx.seed)
    delta = spectral.cantor_dimension(spec)
    trivial = all(
        entry.norm <= 2 * spectral.trivial_bound(2 * delta, spec.dim, 1.0 / entry.N) for entry in scan.entries
    )
    min_beta = float(params.get("min_beta", 0.0))
    files = spectral.write_scan_csv(scan, _path(ctx, stage, ".scan.csv"))
    values = {"beta": scan.beta, "C_fit": scan.C_fit, "fit_residual": scan.fit_residual,
              "entries": len(scan.entries), "within_trivial_bound": trivial}
    return StageOutcome(trivial and scan.beta >= min_beta, values, files, scan)


def _run_fup_norm(stage: StageDescriptor, ctx: StageContext) -> StageOutcome:
    X = ctx.inputs[0]
    Y = ctx.inputs[-1]
    N = stage.params.get("N")
    entry = spectral.power_iteration(X, Y, None if N is None else int(N), seed=ctx.seed)
    path = _path(ctx, stage, ".scan.csv")
    spectral.write_entries_csv([entry], path)
    return StageOutcome(None, {"N": entry.N, "norm": entry.norm, "iterations": entry.iterations}, [path], entry)


_RUNNERS: Dict[str, Callable[[StageDescriptor, StageContext], StageOutcome]] = {
    STAGE_GENERATOR: _run_generator,
    STAGE_POROSITY: _run_porosity,
    STAGE_WEIGHT_BUILD: _run_weight_build,
    STAGE_MODIFY: _run_modify,
    STAGE_PSH_CHECK: _run_psh_check,
    STAGE_FUP_SCAN: _run_fup_scan,
    STAGE_FUP_NORM: _run_fup_norm,
}


def stage_seed(seed: int, index: int) -> int:
    """Per-stage seed drawn from the experiment seed."""

    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _relative(path: str, root: str) -> str:
    return os.path.relpath(path, root).replace(os.sep, "/")


class Experiment:
    """Runs the stages of one config in order, one at a time, each in a worker thread."""

    def __init__(self, cfg: ExperimentConfig, stage_timeout: float = STAGE_TIMEOUT, workers: Optional[int] = None):
        self._cfg = cfg
        self._stage_timeout = stage_timeout
        self._workers = workers or spectral.fft_workers()
        self._lock = asyncio.Lock()
        self._executor: Optional[ThreadPoolExecutor] = None
        self._products: Dict[str, Any] = {}
        self._records: List[StageRecord] = []
        self._artifacts: List[Artifact] = []

    @property
    def output_dir(self) -> str:
        return self._cfg.output_dir

    async def _run_stage(self, index: int, stage: StageDescriptor) -> StageOutcome:
        ctx = StageContext(
            self.output_dir,
            int(stage.params.get("seed", stage_seed(self._cfg.seed, index))),
            self._cfg.tolerances,
            [self._products[name] for name in stage.inputs],
        )
        loop = asyncio.get_running_loop()
        try:
            async with self._lock:
                async with async_timeout.timeout(self._stage_timeout):
                    return await loop.run_in_executor(self._executor, _RUNNERS[stage.kind], stage, ctx)
        except asyncio.TimeoutError as err:
            raise FupLabStageError(f"stage {stage.name} exceeded {self._stage_timeout}s") from err
        except (FupLabError, ArithmeticError, KeyError, TypeError, ValueError, OSError) as err:
            raise FupLabStageError(f"stage {stage.name} failed: {err}") from err

    async def run(self) -> Manifest:
        """Execute the pipeline and write the manifest; a failing stage halts the rest."""

        os.makedirs(self.output_dir, exist_ok=True)
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self._workers)
        halted = False
        for index, stage in enumerate(self._cfg.pipeline):
            if halted:
                self._records.append(StageRecord(stage.name, stage.kind, STATUS_SKIPPED, None, [], 0.0, {}))
                continue

            _LOGGER.debug("Running %s stage %s", stage.kind, stage.name)
            start = time.perf_counter()
            try:
                outcome = await self._run_stage(index, stage)
            except FupLabStageError as err:
                _LOGGER.error("Stage %s failed", stage.name, exc_info=err)
                self._records.append(StageRecord(stage.name, stage.kind, STATUS_FAILED, False, [],
                                                 time.perf_counter() - start, {}, str(err)))
                halted = True
                continue

            seconds = time.perf_counter() - start
            self._products[stage.name] = outcome.product
            paths = []
            for path in outcome.files:
                relative = _relative(path, self.output_dir)
                self._artifacts.append(Artifact(relative, file_digest(path), _artifact_kind(path), stage.name))
                paths.append(relative)
            status = STATUS_FAILED if outcome.passed is False else STATUS_PASSED
            self._records.append(StageRecord(stage.name, stage.kind, status, outcome.passed, paths, seconds,
                                             outcome.values))
            _LOGGER.info("Stage %s %s in %.2fs", stage.name, status, seconds)
            halted = outcome.passed is False

        manifest = Manifest(self._cfg.name, self._cfg.seed, list(self._records), list(self._artifacts))
        write_manifest(manifest, os.path.join(self.output_dir, MANIFEST_NAME))
        return manifest

    async def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=False)
            self._executor = None

    async def __aenter__(self) -> "Experiment":
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.close()


async def run_experiment(cfg: ExperimentConfig, stage_timeout: float = STAGE_TIMEOUT) -> Manifest:
    async with Experiment(cfg, stage_timeout) as experiment:
        return await experiment.run()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def manifest_to_dict(manifest: Manifest) -> Dict[str, Any]:
    return {
        "name": manifest.name,
        "seed": manifest.seed,
        "stages": [_jsonable(record._asdict()) for record in manifest.stages],
        "artifacts": [artifact._asdict() for artifact in manifest.artifacts],
    }


def write_manifest(manifest: Manifest, path: str) -> None:
    with open(path, "w") as fp:
        json.dump(manifest_to_dict(manifest), fp, indent=2, sort_keys=True)


def load_manifest(path: str, verify: bool = True) -> Manifest:
    """Read a manifest and check every recorded digest against the file next to it."""

    try:
        with open(path) as fp:
            data = json.load(fp)
        stages = [StageRecord(**record) for record in data["stages"]]
        artifacts = [Artifact(**artifact) for artifact in data["artifacts"]]
        manifest = Manifest(data["name"], int(data["seed"]), stages, artifacts)
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise FupLabFormatError(f"malformed manifest {path}: {err}") from err

    root = os.path.dirname(os.path.abspath(path))
    for artifact in manifest.artifacts if verify else []:
        target = os.path.join(root, artifact.path)
        if not os.path.exists(target):
            raise FupLabFormatError(f"manifest lists missing artifact {artifact.path}")
        if file_digest(target) != artifact.sha256:
            raise FupLabFormatError(f"digest mismatch for {artifact.path}")
    return manifest


def _summary_line(record: StageRecord) -> str:
    flag = "-" if record.passed is None else ("yes" if record.passed else "no")
    line = f"{record.name:<20} {record.kind:<13} {record.status:<8} passed={flag} {record.seconds:8.2f}s"
    if record.error:
        line += f"  error: {record.error}"
    return line


def emit_report(manifest: Manifest, output_dir: str) -> List[str]:
    """Write the text summary plus (log N, log norm) columns per scan and eigenvalue histograms per certificate.

    Returns the written paths relative to output_dir.
    """

    written = [SUMMARY_NAME]
    lines = []
    if manifest.stages:
        lines.append(f"experiment {manifest.name} (seed {manifest.seed})")
        lines += [_summary_line(record) for record in manifest.stages]
        lines.append("all passed" if manifest.all_passed else "FAILED")

    for artifact in manifest.artifacts:
        source = os.path.join(output_dir, artifact.path)
        if artifact.kind == "scan":
            entries = spectral.read_entries_csv(source)
            target = f"{artifact.stage}.loglog.csv"
            with open(os.path.join(output_dir, target), "w", newline="") as fp:
                writer = csv.writer(fp)
                writer.writerow(["log_N", "log_norm"])
                for entry in entries:
                    log_norm = repr(math.log(entry.norm)) if entry.norm > 0 else "-inf"
                    writer.writerow([repr(math.log(entry.N)), log_norm])
            written.append(target)
        elif artifact.kind == "cert":
            with open(source) as fp:
                eigenvalues = json.load(fp)["min_eig"]
            target = f"{artifact.stage}.eigenvalues.csv"
            with open(os.path.join(output_dir, target), "w", newline="") as fp:
                writer = csv.writer(fp)
                writer.writerow(["bin_low", "bin_high", "count"])
                if eigenvalues:
                    counts, edges = np.histogram(eigenvalues, bins=_HISTOGRAM_BINS)
                    for low, high, count in zip(edges[:-1], edges[1:], counts):
                        writer.writerow([repr(float(low)), repr(float(high)), int(count)])
            written.append(target)

    with open(os.path.join(output_dir, SUMMARY_NAME), "w") as fp:
        fp.write("\n".join(lines) + ("\n" if lines else ""))
    return written


def scan_entries(manifest: Manifest, output_dir: str) -> Dict[str, List[ScanEntry]]:
    """Scan rows of every scan artifact, keyed by stage."""

    return {
        artifact.stage: spectral.read_entries_csv(os.path.join(output_dir, artifact.path))
        for artifact in manifest.artifacts
        if artifact.kind == "scan"
    }
