import time
from dataclasses import dataclass

import numpy as np
import pytest

from medgrad.model import ClipModel, ModelConfig, TrainConfig, train
from medgrad.synthdata import Dataset, generate_dataset, split_dataset
from medgrad.synthdata.dataset import template_vocabulary

REFERENCE_SEED = 42


@dataclass
class ReferenceRun:
    dataset: Dataset
    train_pairs: list
    test_pairs: list
    initial: ClipModel
    model: ClipModel
    history: list
    seconds: float


@pytest.fixture(scope="session")
def reference_run() -> ReferenceRun:
    """Toy model trained once per session: K=8, 800 pairs, seed 42, 30 epochs, batch 64."""
    ds = generate_dataset(800, k_classes=8, seed=REFERENCE_SEED)
    train_pairs, test_pairs = split_dataset(ds.pairs, 0.75, seed=REFERENCE_SEED)
    model = ClipModel(ModelConfig(vocab_size=len(ds.vocab)), seed=REFERENCE_SEED)
    initial = model.copy()
    start = time.perf_counter()
    result = train(model, ds.subset(train_pairs), TrainConfig(epochs=30, batch_size=64, seed=REFERENCE_SEED))
    return ReferenceRun(ds, train_pairs, test_pairs, initial, model, result.history, time.perf_counter() - start)


TINY = dict(
    image_size=16,
    patch_size=4,
    vision_layers=1,
    vision_heads=2,
    vision_dim=16,
    text_layers=1,
    text_heads=2,
    text_dim=16,
    context_length=32,
    embed_dim=8,
    mlp_ratio=2,
)


@pytest.fixture(scope="session")
def tiny_data() -> Dataset:
    return generate_dataset(24, k_classes=4, seed=0, image_size=16)


@pytest.fixture
def tiny_model(tiny_data) -> ClipModel:
    return ClipModel(ModelConfig(vocab_size=len(tiny_data.vocab), **TINY), seed=0)


@pytest.fixture(scope="session")
def vocab():
    return template_vocabulary(8)


# acceptance criteria record "criterion N: PASS|FAIL ..." lines here
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
