"""fuplab data models."""

from fractions import Fraction
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .const import HILBERT_LINES, POWER_SEED, PSH_SAMPLES, SAMPLE_Y_MAX, SAMPLE_Y_MIN


class CantorSpec(NamedTuple):
    dim: int
    base: int
    kept_digits: Tuple[Tuple[int, ...], ...]
    depth: int

    @classmethod
    def uniform(cls, dim: int, base: int, digits, depth: int) -> "CantorSpec":
        """Same kept digits on every axis."""

        return cls(dim, base, tuple(tuple(sorted(digits)) for _ in range(dim)), depth)

    @property
    def side(self) -> int:
        return self.base ** self.depth


class GridSet(NamedTuple):
    """Finite union of closed lattice cells.

    Cell (i_1, ..., i_d) is the cube offset + scale * [i, i + 1] in R^d.
    """

    dim: int
    side: int
    mask: np.ndarray
    offset: Tuple[float, ...]
    scale: float

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def cells(self) -> np.ndarray:
        return np.argwhere(self.mask)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.offset, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.scale * self.side

    @property
    def extent(self) -> float:
        """Diameter of the embedded bounding box."""

        return float(self.scale * self.side * np.sqrt(self.dim))

    def same_grid(self, other: "GridSet") -> bool:
        return self.dim == other.dim and self.side == other.side


class SetTransform(NamedTuple):
    kind: str
    factor: Fraction = Fraction(1)
    vector: Tuple[int, ...] = ()
    radius: int = 0
    resample: int = 1


class Witness(NamedTuple):
    shape: str
    center: Tuple[float, ...]
    scale: float
    direction: Optional[Tuple[float, ...]] = None


class PorosityReport(NamedTuple):
    kind: str
    nu_max: float
    scale_range: Tuple[float, float]
    witness: Optional[Witness]
    directions_tested: int
    sampled: bool = False
    samples: int = 0
    note: str = ""

    def as_dict(self) -> Dict[str, Any]:
        data = self._asdict()
        data["scale_range"] = list(self.scale_range)
        data["witness"] = None if self.witness is None else self.witness._asdict()
        return data


class ScanEntry(NamedTuple):
    N: int
    norm: float
    iterations: int
    residual: float


class FupScan(NamedTuple):
    dim: int
    entries: List[ScanEntry]
    beta: float
    C_fit: float
    fit_window: Tuple[int, int]
    fit_residual: float


class GrowthReport(NamedTuple):
    radii: np.ndarray
    G_star: np.ndarray
    integral_value: float
    tail_bound: float
    diverged: bool
    increments: Dict[int, float]


class RegularityReport(NamedTuple):
    order: int
    c_reg: float
    per_shell: Dict[int, float]
    samples: int


class ComplexPoint(NamedTuple):
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def of(cls, x, y=None) -> "ComplexPoint":
        x = np.asarray(x, dtype=float)
        y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
        return cls(x, y)

    @property
    def z(self) -> np.ndarray:
        return self.x + 1j * self.y

    @property
    def y_norm(self) -> float:
        return float(np.linalg.norm(self.y))

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.x, self.x) + np.dot(self.y, self.y)))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.z)))


class HermitianForm(NamedTuple):
    entries: np.ndarray

    def quadratic(self, v) -> float:
        v = np.asarray(v, dtype=complex)
        return float(np.real(np.vdot(v, self.entries @ v)))

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.hermitian_part())[0])

    def hermitian_part(self) -> np.ndarray:
        return 0.5 * (self.entries + self.entries.conj().T)

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def __add__(self, other):
        if isinstance(other, HermitianForm):
            return HermitianForm(self.entries + other.entries)
        return NotImplemented

    def scaled(self, factor: float) -> "HermitianForm":
        return HermitianForm(self.entries * factor)


class ConstantScan(NamedTuple):
    C1: float
    C2: float
    line_min: float
    line_max: float
    lines: int


class SampleSpec(NamedTuple):
    """Where a certificate looks: Halton points with |x| <= radius and y_min <= |y| <= y_max.

    radius None means the support radius of the weight. `extra` holds explicit
    ComplexPoints appended to the sample.
    """

    count: int = PSH_SAMPLES
    seed: int = POWER_SEED
    radius: Optional[float] = None
    y_min: float = SAMPLE_Y_MIN
    y_max: float = SAMPLE_Y_MAX
    adversarial: bool = True
    hilbert_lines: int = HILBERT_LINES
    extra_lines: int = 0
    extra: Tuple[Any, ...] = ()


class PshCertificate(NamedTuple):
    sample_points: List[ComplexPoint]
    min_eig: List[float]
    global_min: float
    constant_C: float
    tolerance: float
    real_locus_margin: float
    witness: Optional[ComplexPoint]

    @property
    def passed(self) -> bool:
        return self.global_min >= -self.tolerance

    def as_dict(self) -> Dict[str, Any]:
        return {
            "sample_points": [[list(p.x), list(p.y)] for p in self.sample_points],
            "min_eig": list(self.min_eig),
            "global_min": self.global_min,
            "constant_C": self.constant_C,
            "tolerance": self.tolerance,
            "real_locus_margin": self.real_locus_margin,
            "witness": None if self.witness is None else [list(self.witness.x), list(self.witness.y)],
            "passed": self.passed,
        }


class StageDescriptor(NamedTuple):
    kind: str
    name: str
    params: Dict[str, Any]
    inputs: Tuple[str, ...] = ()


class ExperimentConfig(NamedTuple):
    name: str
    pipeline: List[StageDescriptor]
    seed: int
    output_dir: str
    tolerances: Dict[str, float]


class Artifact(NamedTuple):
    path: str
    sha256: str
    kind: str
    stage: str


class StageRecord(NamedTuple):
    name: str
    kind: str
    status: str
    passed: Optional[bool]
    artifacts: List[str]
    seconds: float
    values: Dict[str, Any]
    error: Optional[str] = None


class Manifest(NamedTuple):
    name: str
    seed: int
    stages: List[StageRecord]
    artifacts: List[Artifact]

    @property
    def all_passed(self) -> bool:
        return all(stage.status == "passed" and stage.passed is not False for stage in self.stages)
