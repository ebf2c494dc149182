import numpy as np
import pytest

from rlgs2d.dataset import DatasetConfig, synth_dataset
from rlgs2d.splat2d import AffineView, SplatScene
from rlgs2d.trainer import HyperParams, TrainConfig, Trainer


def random_scene(rng, n, extent=16.0, budget=None):
    return SplatScene(
        rng.uniform(0.25 * extent, 0.75 * extent, (n, 2)),
        rng.uniform(0.0, 1.0, (n, 2)),
        rng.uniform(-3.0, 3.0, n),
        rng.uniform(0.0, 1.0, (n, 3)),
        rng.normal(0.0, 1.0, n),
        rng.uniform(0.0, 1.0, n),
        budget or max(n, 1),
    )


def random_view(rng):
    lin = np.eye(2) + rng.uniform(-0.2, 0.2, (2, 2))
    return AffineView(lin, rng.uniform(-0.5, 0.5, 2))


def small_dataset(seed=0, size=32, views=10, gt_splats=600):
    cfg = DatasetConfig(views=views, height=size, width=size, gt_splats=gt_splats)
    return synth_dataset(cfg, np.random.default_rng(seed))


def small_train_config(**kw):
    base = dict(total_iters=200, densify_interval=40, densify_start=40, budget=400, init_grid=8, log_interval=50)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    return small_dataset()


@pytest.fixture
def tiny_trainer(tiny_data):
    return Trainer(tiny_data.train_views, tiny_data.test_views, small_train_config(), HyperParams())


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
