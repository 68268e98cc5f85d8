from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional

from pydantic import AfterValidator, BaseModel, ConfigDict, Field

from transferability.bounds import BoundReport
from transferability.constants import DEFAULT_CLAMP, DEFAULT_GRID_POINTS, DEFAULT_SIGN_DRAWS, SCHEMA_VERSION
from transferability.domains import LabeledJoint
from transferability.dgalgo import AttackResult, EpochRecord, OptimizationCertificate
from transferability.measures import BoundCertificate, TransferReport
from transferability.nnet import Architecture, OptimizerSpec


def _resolve(path: Path) -> Path:
    return path.expanduser().resolve()


ResolvedPath = Annotated[Path, AfterValidator(_resolve)]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class GenConfig(_Block):
    """Domain generation."""
    kind: Literal["rotated_gaussian", "example1", "counterexample"] = "rotated_gaussian"
    n_domains: int = Field(6, ge=1)
    angles_deg: List[float] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0]
    n_per: int = Field(2000, ge=1)
    n_classes: int = Field(2, ge=2)
    sigma: float = Field(0.3, gt=0.0)
    radius: float = Field(1.0, gt=0.0)
    intensity: float = Field(0.1, gt=0.0, le=0.5)


class ArchConfig(_Block):
    hidden_dims: List[int] = [64, 64]
    feature_dim: Optional[int] = Field(16, ge=1)
    clamp: float = Field(DEFAULT_CLAMP, gt=0.0, lt=0.5)


class TrainConfig(_Block):
    algo: Literal["erm", "transfer"] = "transfer"
    data_dir: Optional[ResolvedPath] = None
    target_id: int = Field(0, ge=0)
    epochs: int = Field(20, ge=0)
    n_inner: int = Field(30, ge=1)
    delta: float = Field(10.0, ge=0.0)
    lam: float = Field(1.0, ge=0.0)
    ascent: OptimizerSpec = OptimizerSpec(kind="gradient_ascent", learning_rate=0.01, steps=30)
    descent: OptimizerSpec = OptimizerSpec(kind="adam", learning_rate=0.005, steps=10)
    certify: bool = False
    n_mixtures: int = Field(50, ge=1)
    n_ball_samples: int = Field(20, ge=0)
    probe_pairs: int = Field(100, ge=1)


class AttackConfig(_Block):
    checkpoint: Optional[ResolvedPath] = None
    data_dir: Optional[ResolvedPath] = None
    target_id: int = Field(0, ge=0)
    deltas: List[float] = [0.0, 0.5, 1.0, 2.0]
    iterations: int = Field(20, ge=0)
    steps_per_selection: int = Field(1, ge=1)
    optimizer: OptimizerSpec = OptimizerSpec(kind="gradient_ascent", learning_rate=0.05, steps=1)
    label: Optional[str] = None


class MeasureConfig(_Block):
    source: Optional[ResolvedPath] = None
    target: Optional[ResolvedPath] = None
    gamma_delta: Optional[float] = Field(None, ge=0.0)
    gamma_scale: float = Field(0.8, gt=0.0)
    n_grid: int = Field(DEFAULT_GRID_POINTS, ge=2)
    loss: Literal["zero_one", "cross_entropy"] = "zero_one"
    clamp: float = Field(DEFAULT_CLAMP, gt=0.0, lt=0.5)
    n_labels: int = Field(2, ge=2)


class BoundConfig(_Block):
    m: int = Field(1000, ge=1)
    k: int = Field(1000, ge=1)
    delta: float = Field(0.05, gt=0.0, lt=1.0)
    d_vc: Optional[int] = Field(None, ge=1)
    d_nat: Optional[int] = Field(None, ge=1)
    K: int = Field(2, ge=2)
    C: float = Field(1.0, gt=0.0)
    r_m: Optional[float] = Field(None, ge=0.0)
    r_k: Optional[float] = Field(None, ge=0.0)
    source_csv: Optional[ResolvedPath] = None
    target_csv: Optional[ResolvedPath] = None
    n_sign_draws: int = Field(DEFAULT_SIGN_DRAWS, ge=1)
    n_grid: int = Field(201, ge=2)


class ReportConfig(_Block):
    inputs: List[ResolvedPath] = []


class ExperimentConfig(_Block):
    """Validated configuration of one CLI invocation."""
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = Field(ge=0, le=2 ** 64 - 1)
    out: ResolvedPath = Path("runs/default")
    log_file: Optional[str] = "transferability.log"
    gen: GenConfig = GenConfig()
    arch: ArchConfig = ArchConfig()
    train: TrainConfig = TrainConfig()
    attack: AttackConfig = AttackConfig()
    measure: MeasureConfig = MeasureConfig()
    bound: BoundConfig = BoundConfig()
    report: ReportConfig = ReportConfig()


class Envelope(BaseModel):
    """Wrapper written around every JSON result."""
    kind: str
    schema_version: Literal[1] = SCHEMA_VERSION
    payload: dict


class DomainEntry(BaseModel):
    domain_id: int
    seed: int
    file: str
    n: int


class Manifest(BaseModel):
    generator: str
    seed: int
    n_labels: int
    domains: List[DomainEntry]


class MeasureReport(BaseModel):
    source: str
    target: str
    transfer: TransferReport
    label_shift_tv: float
    tv_unnormalized: Optional[float] = None
    tv_half: Optional[float] = None
    hdh: Optional[float] = None
    target_bound: Optional[BoundCertificate] = None


class Checkpoint(BaseModel):
    arch: Architecture
    theta_g: List[float]
    theta: List[float]


class TrainSummary(BaseModel):
    algo: Literal["erm", "transfer"]
    seed: int
    delta: Optional[float] = None
    lam: Optional[float] = None
    eta: Optional[float] = None
    epochs: List[EpochRecord] = []
    theta_adv: Optional[List[float]] = None
    checkpoint: str


class AttackSweep(BaseModel):
    label: str
    checkpoint: str
    results: List[AttackResult]


class SlackRow(BaseModel):
    source: str
    inequality: str
    slack: float
    holds: bool


class ReportSummary(BaseModel):
    n_inputs: int
    kinds: Dict[str, int]
    accuracy_files: List[str]
    slack_table: Optional[str] = None
    slacks: List[SlackRow] = []
    min_slack: Optional[float] = None


RESULT_MODELS: Dict[str, type] = {
    "joint": LabeledJoint,
    "manifest": Manifest,
    "measure_report": MeasureReport,
    "checkpoint": Checkpoint,
    "train_result": TrainSummary,
    "certificate": OptimizationCertificate,
    "attack_sweep": AttackSweep,
    "bound_report": BoundReport,
    "report_summary": ReportSummary,
}
