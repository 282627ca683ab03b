import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from duriano import dsp, toy
from duriano.model import DurIANo
from duriano.train import Trainer

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cfg():
    return dsp.StftConfig()


@pytest.fixture(scope="session")
def fbank(cfg):
    return dsp.build_mel_filterbank(cfg)


@pytest.fixture(scope="session")
def toy_pair(cfg):
    return toy.toy_examples(("toy_a", "toy_b"), cfg)


def run_overfit(examples, steps=200, seed=0):
    model_cfg, train_cfg = toy.overfit_setup(seed)
    model = DurIANo(model_cfg, seed=seed)
    trainer = Trainer(model, examples, train_cfg)
    losses = [trainer.train_step().loss for _ in range(steps)]
    return trainer, np.array(losses)


@pytest.fixture(scope="session")
def overfit(toy_pair):
    """The 200-step two-phrase run, shared by the end-to-end checks."""
    return run_overfit(toy_pair)


@pytest.fixture
def accept(request):
    """Record one acceptance verdict; the terminal summary prints every verdict."""
    def record(name, ok, detail=""):
        request.config.stash.setdefault(_VERDICTS, []).append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"

    return record


_VERDICTS = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, [])
    if not verdicts:
        return
    terminalreporter.section("acceptance")
    for name, ok, detail in verdicts:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
