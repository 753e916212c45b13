import pytest
import torch

from msgdd.core import ModelConfig, OptimizerConfig, RunConfig

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


@pytest.fixture
def tiny_config(tmp_path):
    """32x32, two scales, a handful of synthetic samples; trains in seconds."""
    return RunConfig(
        model=ModelConfig(scales=2, base_channels=4),
        optim=OptimizerConfig(batch_size=8, epochs=2),
        image_size=32,
        split_train=16,
        split_val=8,
        split_test=8,
        output_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def acceptance_report():
    def record(criterion, name, ok, detail=""):
        line = f"criterion {criterion} [{'PASS' if ok else 'FAIL'}] {name}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
