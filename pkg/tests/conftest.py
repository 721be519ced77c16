"""Shared fixtures: datasets and trained weights reused across test modules."""

import time

import pytest

from l2p.learner import TrainConfig, init_weights, ridge_oracle, train
from l2p.surrogate import SmoothSpec, gen_dataset, make_toy_denoiser

SESSION_START = time.perf_counter()
SUITE_BUDGET_S = 60.0

T, D = 50, 64
TRAIN_BASE_SEED = 100
HELDOUT_BASE_SEED = 200
N_TRAIN = 50
N_HELDOUT = 10

# Heavier noise flattens the regression spectrum so 200 fixed-size epochs
# land near the closed-form optimum (see tests/test_acceptance.py notes).
NOISY_SPEC = SmoothSpec(noise_scale=0.6)


@pytest.fixture(scope="session")
def smooth_train_set():
    return gen_dataset(TRAIN_BASE_SEED, N_TRAIN, T, D)


@pytest.fixture(scope="session")
def heldout_smooth():
    return [gen_dataset(HELDOUT_BASE_SEED + i, 1, T, D) for i in range(N_HELDOUT)]


@pytest.fixture(scope="session")
def trained_smooth(smooth_train_set):
    return train(smooth_train_set, TrainConfig())


@pytest.fixture(scope="session")
def noisy_train_set():
    return gen_dataset(TRAIN_BASE_SEED, N_TRAIN, T, D, spec=NOISY_SPEC)


@pytest.fixture(scope="session")
def trained_noisy(noisy_train_set):
    return train(noisy_train_set, TrainConfig())


@pytest.fixture(scope="session")
def oracle_noisy(noisy_train_set):
    return ridge_oracle(noisy_train_set, 1e-6)


@pytest.fixture(scope="session")
def toy_model():
    return make_toy_denoiser(0, T, D)


@pytest.fixture(scope="session")
def denoiser_train_set():
    return gen_dataset(TRAIN_BASE_SEED, N_TRAIN, T, D, kind="denoiser", model_seed=0)


@pytest.fixture(scope="session")
def trained_denoiser(denoiser_train_set):
    return train(denoiser_train_set, TrainConfig())


@pytest.fixture(scope="session")
def naive_weights():
    return init_weights(T)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - SESSION_START
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(
        f"criterion 12: full suite wall time {elapsed:.1f}s < {SUITE_BUDGET_S:.0f}s -> {verdict}"
    )
