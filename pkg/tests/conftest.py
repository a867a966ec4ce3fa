import numpy as np
import pytest

from raredetect.dataset import Dataset
from raredetect.synth import SynthSpec, generate


def dataset_from_synth(data):
    return Dataset.from_arrays(data.sample_ids, data.patient_ids, data.features, data.labels, data.condition_names)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_synth():
    spec = SynthSpec(P=12, n_frequent=3, n_rare=2, frequent_samples=60, rare_samples=8, normal_samples=60, seed=3)
    return generate(spec)


@pytest.fixture(scope="session")
def small_dataset(small_synth):
    return dataset_from_synth(small_synth)


def write_csvs(tmp_path, data):
    f = tmp_path / "features.csv"
    l = tmp_path / "labels.csv"
    f.write_text(data.features_csv(), encoding="utf-8")
    l.write_text(data.labels_csv(), encoding="utf-8")
    return f, l


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
