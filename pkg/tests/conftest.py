import pytest
import torch

from ulwb.datagen import CorpusSpec, generate_dataset
from ulwb.lm_core import ModelConfig, xavier_init

TINY = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, max_seq_len=64, seed=0)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_model():
    return xavier_init(TINY, 0)


@pytest.fixture
def tiny_model64():
    return xavier_init(TINY, 0).double()


@pytest.fixture(scope="session")
def small_dataset():
    """A dataset at 1/8 of the default counts (fast to generate)."""
    return generate_dataset(CorpusSpec(seed=0).scaled(0.125))


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.SUMMARY:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.SUMMARY):
        terminalreporter.write_line(mod.SUMMARY[number])
