"""Pydantic models for dpgrad-lab."""

import math
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from .gradients import Layout

STAGES = ("clip", "clip+noise", "clip+noise+compress")


def _null_is_unbounded(value):
    return math.inf if value is None else value


# JSON carries an unbounded epsilon (sigma = 0) as null
Epsilon = Annotated[float, BeforeValidator(_null_is_unbounded), Field(ge=0)]


class PrivacyParams(BaseModel):
    """Clipping radius C, noise multiplier sigma and target delta."""

    model_config = ConfigDict(frozen=True)

    clip_radius: float = Field(gt=0, allow_inf_nan=False)
    noise_multiplier: float = Field(ge=0, allow_inf_nan=False)
    delta: float = Field(gt=0, lt=1)
    noise_placement: Literal["per_sample", "on_sum"] = "per_sample"


class PrivacySpend(BaseModel):
    """Accumulated privacy cost after a number of steps."""

    model_config = ConfigDict(frozen=True)

    steps: int = Field(ge=0)
    epsilon: Epsilon
    delta: float
    alpha: Optional[float] = None


class DenoiseConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: float = Field(ge=0, lt=1)
    gamma: float = Field(ge=0, le=1)
    privacy: PrivacyParams
    tie_break: Literal["velocity", "acceleration"] = "velocity"

    @model_validator(mode="after")
    def _require_per_sample_noise(self) -> "DenoiseConfig":
        # the second clip acts on individually noised rows
        if self.privacy.noise_placement != "per_sample":
            raise ValueError("denoise requires per_sample noise placement")
        return self


class ClippingModelInputs(BaseModel):
    """Inputs of the approximate gradient-error model."""

    model_config = ConfigDict(frozen=True)

    g_norm: float = Field(ge=0, allow_inf_nan=False)
    m: int = Field(ge=1)
    sigma: float = Field(ge=0, allow_inf_nan=False)


class ErrorReport(BaseModel):
    """n-trial MSE split into squared bias and variance (1/n normalization)."""

    mse: float = Field(ge=0)
    bias_sq: float = Field(ge=0)
    variance: float = Field(ge=0)
    n: int = Field(ge=2)
    stage: Optional[str] = None


class StageBreakdown(BaseModel):
    reports: List[ErrorReport]

    @model_validator(mode="after")
    def _check_stages(self) -> "StageBreakdown":
        labels = tuple(r.stage for r in self.reports)
        if labels != STAGES:
            raise ValueError(f"stage labels must be {STAGES}, got {labels}")
        return self

    def __getitem__(self, stage: str) -> ErrorReport:
        return self.reports[STAGES.index(stage)]


class TaskSpec(BaseModel):
    """Seeded synthetic classification task (or the gradient oracle)."""

    model_config = ConfigDict(frozen=True)

    generator: Literal["gaussian-blobs", "two-rings", "synthetic-gradient-oracle"]
    classes: int = Field(default=2, ge=2)
    input_dim: int = Field(default=16, ge=2)
    train_size: int = Field(default=2000, ge=1)
    test_size: int = Field(default=500, ge=1)
    separation: float = Field(default=4.0, gt=0)
    spread: float = Field(default=1.0, gt=0)
    seed: int = 0


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    architecture: Literal["logistic-regression", "mlp-1-hidden"]
    input_dim: int = Field(ge=1)
    classes: int = Field(ge=2)
    hidden_width: int = Field(default=32, ge=1)

    @property
    def layout(self) -> Layout:
        d, k, h = self.input_dim, self.classes, self.hidden_width
        if self.architecture == "logistic-regression":
            return Layout.from_sizes([("weight", d * k), ("bias", k)])
        return Layout.from_sizes(
            [
                ("hidden.weight", d * h),
                ("hidden.bias", h),
                ("output.weight", h * k),
                ("output.bias", k),
            ]
        )

    @property
    def parameter_count(self) -> int:
        return self.layout.size


class OracleSpec(BaseModel):
    """Gradient fixture with a prescribed true gradient g."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(default=256, ge=1)
    layers: int = Field(default=4, ge=1)
    g_norm: float = Field(default=0.5, ge=0)
    scale: float = Field(default=0.05, ge=0)
    batch_size: int = Field(default=16, ge=1)

    @model_validator(mode="after")
    def _check_layers(self) -> "OracleSpec":
        if self.layers > self.dim:
            raise ValueError("oracle cannot have more layers than coordinates")
        return self

    @property
    def layout(self) -> Layout:
        base, extra = divmod(self.dim, self.layers)
        return Layout.from_sizes(
            (f"layer{i}", base + (1 if i < extra else 0)) for i in range(self.layers)
        )


class EpochRecord(BaseModel):
    epoch: int
    test_accuracy: float
    train_loss: float
    bytes: int
    epsilon: Epsilon


class RunRecord(BaseModel):
    """Outcome of one training run."""

    seed: int
    epochs: List[EpochRecord] = Field(default_factory=list)
    final_accuracy: float = 0.0
    total_bytes: int = 0
    privacy_trace: List[PrivacySpend] = Field(default_factory=list)
    clip_radius: Optional[float] = None
    delta: Optional[float] = None
    diverged: bool = False

    @model_validator(mode="after")
    def _check_final_accuracy(self) -> "RunRecord":
        if self.epochs:
            expected = final_accuracy([e.test_accuracy for e in self.epochs])
            if not math.isclose(self.final_accuracy, expected, rel_tol=1e-12, abs_tol=1e-12):
                raise ValueError("final_accuracy must average the last 10 epochs")
        return self


def final_accuracy(accuracies: List[float]) -> float:
    """Mean of the last min(10, epochs) per-epoch accuracies."""
    if not accuracies:
        return 0.0
    tail = accuracies[-10:]
    return sum(tail) / len(tail)


class CellSummary(BaseModel):
    """JSON summary of one grid cell."""

    model_config = ConfigDict(extra="forbid")

    config_hash: str
    variant: Literal["plain", "denoise"]
    sigma: float
    compress_kind: str
    rate: Optional[float] = None
    rank: Optional[int] = None
    seeds: List[int]
    final_accuracy: float
    per_seed_final_accuracy: List[float]
    epsilon: Epsilon
    delta: float
    bytes: int
    clip_radius: List[Optional[float]]
    diverged_seeds: List[int] = Field(default_factory=list)
    # clip+noise+compress MSE on the first minibatch at initialization
    gradient_mse: Optional[float] = None
    per_seed_gradient_mse: List[float] = Field(default_factory=list)
    # seed-averaged test accuracy per epoch, moving-averaged over analysis.smoothing_width
    accuracy_curve: List[float] = Field(default_factory=list)
    accountant: str = "rdp-no-subsampling-upper-bound"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(_Section):
    """Configuration for an experiment, addressed by dotted keys."""

    class TaskConfig(_Section):
        generator: Literal["gaussian-blobs", "two-rings", "synthetic-gradient-oracle"] = (
            "gaussian-blobs"
        )
        classes: int = Field(default=2, ge=2)
        input_dim: int = Field(default=16, ge=2)
        train_size: int = Field(default=2000, ge=1)
        test_size: int = Field(default=500, ge=1)
        separation: float = Field(default=4.0, gt=0)
        spread: float = Field(default=1.0, gt=0)

    class ModelConfig(_Section):
        architecture: Literal["logistic-regression", "mlp-1-hidden"] = "logistic-regression"
        hidden_width: int = Field(default=32, ge=1)

    class TrainConfig(_Section):
        epochs: int = Field(default=20, ge=1)
        lr: float = Field(default=0.5, gt=0)
        batch_size: int = Field(default=32, ge=1)

    class PrivacyConfig(_Section):
        enabled: bool = True
        sigma: float = Field(default=0.0, ge=0)
        clip: Union[float, Literal["median", "optimal"]] = "median"
        delta: Union[float, Literal["auto"]] = "auto"
        noise_placement: Literal["per_sample", "on_sum"] = "per_sample"
        accountant_orders: Literal["default", "dense"] = "default"

        @model_validator(mode="after")
        def _check_values(self) -> "ExperimentConfig.PrivacyConfig":
            if isinstance(self.clip, float) and not self.clip > 0:
                raise ValueError("privacy.clip must be positive")
            if isinstance(self.delta, float) and not 0 < self.delta < 1:
                raise ValueError("privacy.delta must lie in (0, 1)")
            return self

    class CompressConfig(_Section):
        kind: Literal["none", "topk", "powersgd"] = "topk"
        rate: float = Field(default=1.0, ge=1)
        rank: int = Field(default=1, ge=1)
        payload_bits: Literal[16, 32, 64] = 16
        scope: Literal["layer", "model"] = "layer"
        power_iterations: int = Field(default=1, ge=1)
        error_feedback: bool = True

    class DenoiseSection(_Section):
        enabled: bool = False
        beta: float = Field(default=0.9, ge=0, lt=1)
        gamma: float = Field(default=0.9, ge=0, le=1)
        tie_break: Literal["velocity", "acceleration"] = "velocity"

        @model_validator(mode="after")
        def _require_explicit_decays(self) -> "ExperimentConfig.DenoiseSection":
            if self.enabled and not {"beta", "gamma"} <= self.model_fields_set:
                raise ValueError(
                    "denoise.beta and denoise.gamma must be set when denoise is enabled"
                )
            return self

    class OracleConfig(_Section):
        dim: int = Field(default=256, ge=1)
        layers: int = Field(default=4, ge=1)
        g_norm: float = Field(default=0.5, ge=0)
        scale: float = Field(default=0.05, ge=0)
        batch_size: int = Field(default=16, ge=1)
        steps: int = Field(default=200, ge=1)

    class AnalysisConfig(_Section):
        trials: int = Field(default=100, ge=2)
        smoothing_width: int = Field(default=20, ge=1)

    class GridConfig(_Section):
        sigmas: List[float] = Field(default_factory=lambda: [0.0, 0.4, 0.8])
        rates: List[float] = Field(default_factory=lambda: [1.0, 16.0, 256.0])
        ranks: List[int] = Field(default_factory=lambda: [1, 16])
        variants: List[Literal["plain", "denoise"]] = Field(
            default_factory=lambda: ["plain", "denoise"]
        )
        seeds: int = Field(default=1, ge=1)

    class LoggingConfig(_Section):
        level: str = "INFO"
        file: Optional[str] = None

    task: TaskConfig = Field(default_factory=TaskConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    privacy: PrivacyConfig = Field(default_factory=PrivacyConfig)
    compress: CompressConfig = Field(default_factory=CompressConfig)
    denoise: DenoiseSection = Field(default_factory=DenoiseSection)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    def task_spec(self, seed: int) -> TaskSpec:
        return TaskSpec(seed=seed, **self.task.model_dump())

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            architecture=self.model.architecture,
            input_dim=self.task.input_dim,
            classes=self.task.classes,
            hidden_width=self.model.hidden_width,
        )

    def oracle_spec(self) -> OracleSpec:
        return OracleSpec(**self.oracle.model_dump(exclude={"steps"}))


class SweepPoint(BaseModel):
    clip_radius: float
    report: ErrorReport
    model_error: float


class ClippingSweep(BaseModel):
    """Empirical error against clipping radius, with the model overlay."""

    points: List[SweepPoint]
    g_norm: float
    norm_estimator: str
    c_star: float

    @property
    def empirical_argmin(self) -> float:
        return min(self.points, key=lambda p: p.report.mse).clip_radius


class DenoiseStepRow(BaseModel):
    step: int
    flag: Literal["velocity", "acceleration"]
    residual_norm_v: float
    residual_norm_a: float
    mse_receiver: float
