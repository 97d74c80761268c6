import time
from dataclasses import dataclass

import pytest

from phantoms import phantom_set
from sstdunet.pipeline.config import RunConfig
from sstdunet.pipeline.train import TrainResult, mean_dice, train
from sstdunet.volio import AugmentConfig

TRAIN_SEEDS = tuple(range(8))
HELDOUT_SEEDS = (100, 101, 102, 103)


def overfit_config(**train_changes) -> RunConfig:
    """Test-scale model with a short, aggressive schedule for fitting 8 phantoms."""
    from dataclasses import replace

    cfg = RunConfig(augment=AugmentConfig.disabled())
    tc = replace(cfg.train, learning_rate=3e-3, lr_end=3e-4, warmup_epochs=2, total_epochs=125,
                 batch_size=2, augment=False, max_steps=500, target_train_dice=0.97, seed=0)
    return replace(cfg, train=replace(tc, **train_changes))


@dataclass
class PhantomRun:
    result: TrainResult
    seconds: float
    train_dice: float
    heldout_dice: float
    train_set: list
    heldout_set: list


@pytest.fixture(scope="session")
def phantom_run() -> PhantomRun:
    train_set = phantom_set(TRAIN_SEEDS)
    heldout = phantom_set(HELDOUT_SEEDS)
    start = time.perf_counter()
    res = train(train_set, [], overfit_config())
    seconds = time.perf_counter() - start
    return PhantomRun(res, seconds, mean_dice(res.model, train_set), mean_dice(res.model, heldout),
                      train_set, heldout)


def pytest_terminal_summary(terminalreporter):
    import acceptance_report

    if not acceptance_report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance_report.RESULTS):
        terminalreporter.write_line(acceptance_report.line(number))
