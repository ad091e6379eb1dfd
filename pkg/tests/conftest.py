import numpy as np
import pytest

from interpaug.data import SynthConfig, generate_synthetic
from interpaug.harness import ExperimentConfig

_criteria: list[tuple[str, str, str]] = []


@pytest.fixture(scope="session")
def small_ds():
    """3 centres x 24 samples at 32 px: enough for protocol/harness tests."""
    return generate_synthetic(SynthConfig(samples_per_centre=24, image_size=32), seed=3)


def tiny_config(tmp_path, **kw) -> ExperimentConfig:
    cfg = ExperimentConfig(output_dir=str(tmp_path))
    cfg.data.synthetic = SynthConfig(samples_per_centre=24, image_size=32)
    cfg.data.seed = 3
    cfg.data.layout.size = (32, 32)
    cfg.epochs.segmentation = 2
    cfg.epochs.classifier = 2
    cfg.optim.batch_size = 8
    cfg.model.width = 8
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _criteria.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_criteria, key=lambda r: int(r[0].split()[0])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {name}" + (f" -- {detail}" if detail else ""))
