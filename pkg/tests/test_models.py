import pytest
from pydantic import ValidationError

from dpgrad_lab.models import (
    STAGES,
    DenoiseConfig,
    EpochRecord,
    ErrorReport,
    ExperimentConfig,
    ModelSpec,
    OracleSpec,
    PrivacyParams,
    RunRecord,
    StageBreakdown,
    final_accuracy,
)


def _epochs(accuracies):
    return [
        EpochRecord(epoch=i, test_accuracy=a, train_loss=1.0, bytes=0, epsilon=0.0)
        for i, a in enumerate(accuracies)
    ]


def test_experiment_config_from_nested_dict():
    config = ExperimentConfig(
        **{
            "privacy": {"sigma": 0.8, "clip": 1.5, "delta": 1e-5},
            "compress": {"kind": "powersgd", "rank": 4},
            "logging": {"level": "DEBUG", "file": "/tmp/dpgrad.log"},
        }
    )
    assert config.privacy.clip == 1.5
    assert config.compress.rank == 4
    assert config.task.generator == "gaussian-blobs"
    assert config.logging.file == "/tmp/dpgrad.log"


def test_experiment_config_rejects_unknown_fields():
    with pytest.raises(ValidationError):
        ExperimentConfig(**{"privacy": {"sigmaa": 0.8}})


def test_clip_accepts_keywords_and_positive_numbers():
    assert ExperimentConfig(**{"privacy": {"clip": "optimal"}}).privacy.clip == "optimal"
    with pytest.raises(ValidationError):
        ExperimentConfig(**{"privacy": {"clip": -1.0}})


def test_specs_derived_from_config():
    config = ExperimentConfig(**{"model": {"architecture": "mlp-1-hidden", "hidden_width": 8}})
    assert config.model_spec().parameter_count == 16 * 8 + 8 + 8 * 2 + 2
    assert config.task_spec(3).seed == 3
    assert config.oracle_spec() == OracleSpec()


def test_model_spec_layout():
    spec = ModelSpec(architecture="logistic-regression", input_dim=5, classes=3)
    assert [layer.name for layer in spec.layout.layers] == ["weight", "bias"]
    assert spec.parameter_count == 18


def test_oracle_layout_spreads_remainder():
    spec = OracleSpec(dim=10, layers=3)
    assert [layer.size for layer in spec.layout.layers] == [4, 3, 3]
    with pytest.raises(ValidationError):
        OracleSpec(dim=2, layers=3)


def test_privacy_params_validation():
    params = PrivacyParams(clip_radius=1.0, noise_multiplier=0.0, delta=1e-5)
    assert params.noise_placement == "per_sample"
    with pytest.raises(ValidationError):
        PrivacyParams(clip_radius=0.0, noise_multiplier=1.0, delta=1e-5)
    with pytest.raises(ValidationError):
        PrivacyParams(clip_radius=1.0, noise_multiplier=1.0, delta=1.0)


def test_denoise_config_requires_per_sample_noise():
    params = PrivacyParams(clip_radius=1.0, noise_multiplier=1.0, delta=1e-5)
    assert DenoiseConfig(beta=0.9, gamma=0.9, privacy=params).privacy == params
    on_sum = params.model_copy(update={"noise_placement": "on_sum"})
    with pytest.raises(ValidationError):
        DenoiseConfig(beta=0.9, gamma=0.9, privacy=on_sum)


def test_final_accuracy_averages_last_ten_epochs():
    accuracies = [0.0] * 5 + [1.0] * 10
    assert final_accuracy(accuracies) == 1.0
    assert final_accuracy([0.5, 0.7]) == pytest.approx(0.6)
    assert final_accuracy([]) == 0.0


def test_run_record_checks_final_accuracy():
    record = RunRecord(seed=0, epochs=_epochs([0.5, 0.7]), final_accuracy=0.6)
    assert record.final_accuracy == pytest.approx(0.6)
    with pytest.raises(ValidationError):
        RunRecord(seed=0, epochs=_epochs([0.5, 0.7]), final_accuracy=0.7)


def test_stage_breakdown_requires_ordered_stages():
    reports = [ErrorReport(mse=1.0, bias_sq=0.5, variance=0.5, n=10, stage=s) for s in STAGES]
    breakdown = StageBreakdown(reports=reports)
    assert breakdown["clip+noise"].stage == "clip+noise"
    with pytest.raises(ValidationError):
        StageBreakdown(reports=list(reversed(reports)))
