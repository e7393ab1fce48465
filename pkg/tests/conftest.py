import os
from pathlib import Path

import numpy as np
import pytest

from kgattack.kg_core import load_dataset

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("KGATTACK_DATA_DIR", ROOT / "data"))

# |E|, |R|, train, valid, test
TABLE1 = {
    "UMLS": (135, 46, 5216, 652, 661),
    "KINSHIP": (104, 25, 8544, 1068, 1074),
    "WN18RR": (40943, 22, 86835, 3034, 3134),
    "NELL-995-h100": (22411, 43, 50314, 3763, 3746),
    "FB15k-237": (14541, 237, 272115, 17535, 20466),
}
NODE_DEGREE = {"UMLS": 38.6, "KINSHIP": 82.1, "WN18RR": 2.1, "NELL-995-h100": 2.2, "FB15k-237": 18.7}


def dataset_dir(name):
    path = DATA_DIR / name
    if not (path / "train.txt").exists():
        pytest.skip(f"dataset {name} not present under {DATA_DIR}")
    return path


@pytest.fixture(scope="session")
def umls():
    return load_dataset(dataset_dir("UMLS"))


@pytest.fixture(scope="session")
def kinship():
    return load_dataset(dataset_dir("KINSHIP"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
