import numpy as np
import pytest

from hyperrna.featurize import build_features
from hyperrna.model import HyperRNAModel, ModelConfig
from hyperrna.synthetic import synthetic_protein, synthetic_rna


def toy_graph(seed=0, n_rna=8, n_prot=0, k=4, num_rbf=4, d_v=4):
    rng = np.random.default_rng(seed)
    prot = synthetic_protein(n_prot, rng) if n_prot else None
    return build_features(synthetic_rna(n_rna, rng), prot, k=k, num_rbf=num_rbf, d_v=d_v, name=f"toy{seed}")


def toy_config(**overrides):
    # d_e = 4 * num_rbf + 32 token columns
    base = dict(d_e=48, d_v=4, d_h=4, num_rbf=4, heads=3, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def toy_model(seed=0, **overrides):
    return HyperRNAModel(toy_config(**overrides), seed=seed)


@pytest.fixture
def graph():
    return toy_graph()


@pytest.fixture
def model():
    return toy_model()


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
