import dataclasses
import time

import numpy as np
import pytest

from viewprox import dataset, evaluation, model, signal, synth
from viewprox.trace import write_trace_csv

COUNTS = (37, 41, 37)


@pytest.fixture(scope="session")
def synthetic_subjects():
    """The deterministic 115-subject corpus (seed 0); about 10 s to build."""
    return synth.generate_dataset(COUNTS, seed=0)


@pytest.fixture(scope="session")
def processed_subjects(synthetic_subjects):
    return [signal.preprocess(r.trace) for r in synthetic_subjects]


def shuffled_labels(subjects, seed=0):
    labels = [s.label for s in subjects]
    perm = np.random.default_rng(seed).permutation(len(labels))
    return [dataclasses.replace(s, label=labels[i]) for s, i in zip(subjects, perm)]


@pytest.fixture(scope="session")
def crossval_report(processed_subjects):
    return evaluation.run_crossval(processed_subjects, model.SchemeConfig.default(2), seed=0)


@pytest.fixture(scope="session")
def shuffled_report(processed_subjects):
    return evaluation.run_crossval(shuffled_labels(processed_subjects), model.SchemeConfig.default(2), seed=0)


@pytest.fixture(scope="session")
def manifest_path(synthetic_subjects, tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    (root / "traces").mkdir()
    entries = []
    for r in synthetic_subjects:
        path = root / "traces" / f"{r.subject_id}.csv"
        write_trace_csv(path, r.trace)
        entries.append(dataset.ManifestEntry(r.subject_id, r.label, path, r.trace.frame_count))
    dataset.write_manifest(root / "manifest.csv", entries)
    return root / "manifest.csv"


ACCEPTANCE_LINES = pytest.StashKey[list]()


class Criterion:
    def __init__(self, config, number, title, limit_s):
        self.config, self.number, self.title, self.limit_s = config, number, title, limit_s
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        in_time = self.limit_s is None or elapsed < self.limit_s
        ok = exc_type is None and in_time
        limit = "" if self.limit_s is None else f" / limit {self.limit_s:g} s"
        reason = "" if exc_type is None else f" [{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}]"
        line = f"{'PASS' if ok else 'FAIL'}  criterion {self.number}: {self.title}. {self.detail}{reason} ({elapsed:.1f} s{limit})"
        print(line)
        self.config.stash.setdefault(ACCEPTANCE_LINES, []).append((self.number, line))
        if exc_type is None and not in_time:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f} s, limit {self.limit_s} s")
        return False


@pytest.fixture
def criterion(request):
    def make(number, title, limit_s=None):
        return Criterion(request.config, number, title, limit_s)

    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
