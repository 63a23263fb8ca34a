import numpy as np
import pytest

from hemofield.anatomy import build_case, sample_spec


@pytest.fixture(scope="session")
def case_spec():
    # a seed whose lesions sit on more than one branch
    for seed in range(100):
        spec = sample_spec(seed)
        if len({les.branch_id for les in spec.lesions}) >= 2:
            return spec
    raise RuntimeError("no suitable seed")


@pytest.fixture(scope="session")
def built_case(case_spec):
    mesh, tree = build_case(case_spec)
    return case_spec, mesh, tree


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Ten featurized low-resolution cases (8 train / 1 val / 1 test)."""
    from hemofield.case import featurize_dataset, generate_dataset
    out = tmp_path_factory.mktemp("tiny")
    manifest = generate_dataset(out, 10, seed=5, rings_per_mm=1.0, segments=16, n_jobs=1)
    featurize_dataset(manifest, k_eig=32, n_jobs=1)
    return manifest


def rng_for(*key):
    return np.random.default_rng(list(key))


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Remember one acceptance outcome; all of them are printed at the end of the run."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
