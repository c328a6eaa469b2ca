from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import Tolerances
from app.services.mesh_service import GENERATOR_PARAMS


class ComplexValue(BaseModel):
    """Complex scalar split into real and imaginary parts for JSON."""
    re: float = Field(..., description="Real part")
    im: float = Field(..., description="Imaginary part")

    @classmethod
    def of(cls, z: complex) -> "ComplexValue":
        z = complex(z)
        return cls(re=z.real, im=z.imag)

    def __complex__(self) -> complex:
        return complex(self.re, self.im)

    def __abs__(self) -> float:
        return abs(complex(self))


# Checker outputs

class IdentityReport(BaseModel):
    """Pointwise identity residual on one mesh. Per-vertex fields are kept in memory only."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str = Field(..., description="Mesh kind")
    n_vertices: int = Field(..., description="Vertex count")
    h: float = Field(..., description="Maximum edge length")
    residual_max: float = Field(..., description="max_i |lhs_i - rhs_i|")
    residual_l2: float = Field(..., description="M-weighted L2 norm of the residual")
    scale: float = Field(..., description="M-weighted L2 norm of rhs, the natural size of either side")
    roundoff_scale: float = Field(
        ..., description="M-weighted L2 norm of |f|(|A||f|)/M, the size rounding errors in either side scale with"
    )
    exact_balance: ComplexValue = Field(..., description="sum_i [conj(f_i)(Af)_i - f_i(A conj f)_i], raw")
    lhs: Optional[np.ndarray] = Field(None, exclude=True, description="Divergence of the cell flux")
    rhs: Optional[np.ndarray] = Field(None, exclude=True, description="-2i Im(conj(f) Lf) + 2i Im(V)|f|^2")


class CycleWinding(BaseModel):
    """Winding number of a field around one generator cycle."""
    label: str = Field(..., description="Cycle label")
    winding: int = Field(..., description="Total phase change divided by 2*pi")


class CycleObstruction(BaseModel):
    """Closed loop along which the phase does not close up."""
    label: str = Field(..., description="Generator label, or 'fundamental' for a spanning-tree cycle")
    vertices: List[int] = Field(..., description="Closed vertex loop (first == last)")
    winding: int = Field(..., description="Winding number of the field along the loop")


class PhaseReport(BaseModel):
    """Topological and energetic phase data of a nowhere-vanishing field."""
    windings: List[CycleWinding] = Field(default_factory=list, description="One entry per generator cycle")
    global_log_exists: bool = Field(..., description="A global continuous branch of log f exists")
    n_components: int = Field(..., description="Connected components of the mesh")
    component_ranges: List[float] = Field(
        default_factory=list, description="max u - min u per component, u = Im log f along a spanning tree"
    )
    phase_energy: float = Field(..., description="sum_cells measure * |f|^2_cell * |grad u|^2")
    energy_scale: float = Field(..., description="max|A_ij| * sum_i |f_i|^2")
    obstruction: Optional[CycleObstruction] = Field(None, description="Cycle obstructing the logarithm")


class ZeroCertificate(BaseModel):
    """Vertex where |f| is numerically zero, or a cell certified to contain a zero of the interpolant."""
    kind: Literal["vertex", "edge", "cell"] = Field(..., description="Where the zero sits")
    index: int = Field(..., description="Vertex index or cell index")
    vertices: List[int] = Field(..., description="Vertices of the certified simplex")
    modulus: float = Field(..., description="|f| at the reported location (interpolated inside cells)")
    location: List[float] = Field(..., description="Coordinates of the reported location")


class TheoremVerdict(BaseModel):
    """Outcome of a theorem checker."""
    theorem: Literal[1, 2] = Field(..., description="Which theorem was checked")
    hypotheses_satisfied: bool = Field(..., description="All hypotheses hold for the input")
    conclusion_verified: bool = Field(..., description="Conclusion holds; only meaningful with hypotheses")
    diagnostics: List[str] = Field(default_factory=list, description="Human-readable reasoning")
    relative_sigma: Optional[float] = Field(None, description="Relative smallest singular value of the input")
    imaginary_balance: Optional[float] = Field(None, description="|sum Im(V)|f|^2 M| (Theorem 1)")
    witness_vertex: Optional[int] = Field(None, description="Vertex where f is smallest on supp Im V")
    witness_ratio: Optional[float] = Field(None, description="|f| / max|f| at the witness vertex")
    phase_ranges: Optional[List[float]] = Field(None, description="Per-component phase ranges (Theorem 2)")
    phase_energy: Optional[float] = Field(None, description="Phase Dirichlet energy (Theorem 2)")
    globally_constant: Optional[bool] = Field(None, description="Phase constant on the whole (connected) mesh")
    obstruction: Optional[CycleObstruction] = Field(None, description="Winding obstruction (Theorem 2)")


class CutoffRow(BaseModel):
    """One member chi_n of a cutoff family applied to a kernel pair."""
    index: int = Field(..., description="n")
    plateau: float = Field(..., description="Radius where chi stops being 1")
    ramp: float = Field(..., description="Radius where chi reaches 0")
    grad_sup: float = Field(..., description="max over cells of |grad chi|")
    integral: float = Field(..., description="sum_i chi_i Im(V_i) |f_i|^2 M_ii")
    lhs: ComplexValue = Field(..., description="Summation-by-parts form of -<grad chi, flux>")
    gap: float = Field(..., description="|lhs - 2i * integral|")


class CutoffSeries(BaseModel):
    """Cutoff-limit experiment output."""
    rows: List[CutoffRow] = Field(default_factory=list)
    limit: float = Field(..., description="sum_i Im(V_i)|f_i|^2 M_ii (chi == 1)")
    scale: float = Field(..., description="sum_i |Im V_i| |f_i|^2 M_ii")
    monotone: bool = Field(..., description="|integral| non-increasing along the family (roundoff slack)")
    l2_mass: float = Field(..., description="sum_i M_ii |f_i|^2")
    gradient_energy: float = Field(..., description="Re(f^H A f)")


# Experiment configuration

ExperimentId = Literal[
    "identity-convergence", "theorem1", "theorem2", "counterexample", "cutoff-limit", "balance-fuzz"
]


def _split_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ExperimentSpec(BaseModel):
    """[experiment] section."""
    model_config = ConfigDict(extra="forbid")

    id: ExperimentId = Field(..., description="Which experiment to run")
    seed: int = Field(0, description="Seed for every random draw of the run")


class MeshSpec(BaseModel):
    """[mesh] and [mesh.params] sections."""
    model_config = ConfigDict(extra="forbid")

    generator: str = Field(..., description="Mesh generator name")
    levels: int = Field(1, ge=1, description="Meshes in the study: the base mesh and levels - 1 refinements")
    params: Dict[str, float] = Field(default_factory=dict, description="Generator parameters by name")

    @model_validator(mode="after")
    def check_generator(self):
        if self.generator not in GENERATOR_PARAMS:
            raise ValueError(f"unknown mesh generator '{self.generator}'")
        unknown = set(self.params) - set(GENERATOR_PARAMS[self.generator])
        if unknown:
            raise ValueError(f"unknown parameters for {self.generator}: {sorted(unknown)}")
        return self


class FieldSpec(BaseModel):
    """[field] section."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["smooth", "winding", "gaussian-chirp", "random", "component-phase", "eigenmode", "file"] = "smooth"
    winding: int = Field(1, description="Winding number k of exp(i k theta)")
    decay: float = Field(0.5, gt=0, description="Gaussian decay a in exp(-a r^2 + i c r^2)")
    chirp: float = Field(0.5, description="Chirp c in exp(-a r^2 + i c r^2)")
    phases: List[float] = Field(default_factory=lambda: [0.0, 1.0], description="Constant phase per component")
    path: Optional[str] = Field(None, description="Field file for kind = file")

    @field_validator("phases", mode="before")
    @classmethod
    def split_phases(cls, value):
        return _split_list(value)


class PotentialSpec(BaseModel):
    """[potential] section."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["constant", "bump", "inverse-design", "file"] = "inverse-design"
    real: float = Field(0.0, description="Real part of the constant value or bump amplitude")
    imag: float = Field(0.0, description="Imaginary part of the constant value or bump amplitude")
    radius: float = Field(0.5, gt=0, description="Bump radius")
    center: Optional[List[float]] = Field(None, description="Bump center; defaults to the bounding-box center")
    path: Optional[str] = Field(None, description="Potential file for kind = file")

    @field_validator("center", mode="before")
    @classmethod
    def split_center(cls, value):
        return _split_list(value)


class SpectralSpec(BaseModel):
    """[spectral] section."""
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-10, gt=0, description="Inverse-iteration convergence threshold")
    max_iter: int = Field(300, ge=1, description="Inverse-iteration cap")
    shift: Optional[float] = Field(None, description="Eigenvalue target; default min(Re V) - 1 (ground state)")


class CutoffSpec(BaseModel):
    """[cutoff] section."""
    model_config = ConfigDict(extra="forbid")

    plateaus: List[float] = Field(
        default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 4.0, 25.0], description="Plateau radius per family member"
    )
    width: float = Field(1.0, gt=0, description="ramp - plateau")
    metric: Literal["euclidean", "graph"] = "euclidean"
    center: Optional[int] = Field(None, ge=0, description="Center vertex; default nearest the bounding-box center")
    random: int = Field(20, ge=0, description="Random cutoffs per case in weak-identity checks")

    @field_validator("plateaus", mode="before")
    @classmethod
    def split_plateaus(cls, value):
        return _split_list(value)


class FuzzSpec(BaseModel):
    """[fuzz] section."""
    model_config = ConfigDict(extra="forbid")

    cases: int = Field(100, ge=1, description="Random cases")
    generators: List[str] = Field(
        default_factory=lambda: ["circle", "interval", "disk", "annulus", "torus", "strip"],
        description="Mesh generators cycled through by the cases",
    )
    workers: Optional[int] = Field(None, ge=1, description="Thread workers; default from LAB_WORKERS")

    @field_validator("generators", mode="before")
    @classmethod
    def split_generators(cls, value):
        return _split_list(value)


class OutputSpec(BaseModel):
    """[output] section."""
    model_config = ConfigDict(extra="forbid")

    dir: Optional[str] = Field(None, description="Output directory; default LAB_OUTPUT_DIR/<experiment id>")
    report: str = Field("report.json", description="Report file name")
    series: str = Field("series.csv", description="Series CSV file name")
    timings: str = Field("timings.csv", description="Wall-clock CSV file name")


class ExperimentConfig(BaseModel):
    """One experiment run, as read from a configuration file."""
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentSpec
    mesh: MeshSpec
    field: FieldSpec = Field(default_factory=FieldSpec)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    spectral: SpectralSpec = Field(default_factory=SpectralSpec)
    cutoff: CutoffSpec = Field(default_factory=CutoffSpec)
    fuzz: FuzzSpec = Field(default_factory=FuzzSpec)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    output: OutputSpec = Field(default_factory=OutputSpec)


# Run report

ToleranceClass = Literal["roundoff", "balance", "discretization", "spectral", "order", "phase", "cutoff", "info"]


class Measurement(BaseModel):
    """One reported number with the tolerance class it is judged under."""
    name: str = Field(..., description="What was measured")
    value: float = Field(..., description="Measured value")
    tolerance_class: ToleranceClass = Field(..., description="Tolerance class of the comparison")
    threshold: Optional[float] = Field(None, description="Bound the value was compared against")
    passed: Optional[bool] = Field(None, description="Comparison outcome; None for informational values")


class CaseResult(BaseModel):
    """Everything one case of an experiment produced."""
    name: str = Field(..., description="Case label")
    passed: bool = Field(..., description="All assertions of the case held")
    measurements: List[Measurement] = Field(default_factory=list)
    verdicts: List[TheoremVerdict] = Field(default_factory=list)
    phase: Optional[PhaseReport] = None
    identity: Optional[IdentityReport] = None
    cutoff: Optional[CutoffSeries] = None
    error: Optional[str] = Field(None, description="Downstream error with case context")
    wall_clock: float = Field(0.0, exclude=True, description="Seconds; written to the timings file only")


class EnvironmentStamp(BaseModel):
    """Versions of the numerical stack that produced a report."""
    python: str
    numpy: str
    scipy: str
    pydantic: str


class RunReport(BaseModel):
    """Report document of one experiment run."""
    experiment: str = Field(..., description="Experiment id")
    passed: bool = Field(..., description="All cases passed")
    config: ExperimentConfig = Field(..., description="Configuration echo")
    cases: List[CaseResult] = Field(default_factory=list)
    environment: EnvironmentStamp
