import pytest

from cct import pipeline
from cct.config import ExperimentConfig
from cct.losses import ABLATION_ROWS

TINY = [
    "dataset.total_classes=6", "dataset.source_count=4", "dataset.target_count=4", "dataset.dim=8",
    "dataset.per_class=40", "dataset.source_per_class=40", "dataset.source_test_per_class=5",
    "model.hidden=[16,16]", "train.iterations=30", "train.eval_every=10",
    "train.pretrain_epochs_source=2", "train.pretrain_epochs_target=2",
]

REFERENCE_SEEDS = (0, 1, 2, 3, 4)


def tiny_config(*extra):
    return ExperimentConfig().with_overrides([*TINY, *extra])


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture(scope="session")
def reference_runs():
    """Rows a, b and f of the ablation on the reference benchmark, seeds 0-4.

    Maps row name to a list of RunResult, one per seed. Datasets and
    pretrained backbones are shared across rows of the same seed.
    """
    cfg = ExperimentConfig()
    cache = {}
    return {
        row: [pipeline.run_with_flags(cfg, ABLATION_ROWS[row], seed, cache) for seed in REFERENCE_SEEDS]
        for row in "abf"
    }
