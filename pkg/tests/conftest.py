import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    from pliunfold.phantom import PhantomSpec

    return PhantomSpec(shape=(96, 6, 96), pixel_um=20.8, center=(48.0, 48.0), radius_range=(12.0, 36.0),
                       mesh_shape=(12, 60), seed=3)


@pytest.fixture(scope="session")
def small_truth(small_spec):
    from pliunfold.phantom import generate_phantom

    return generate_phantom(small_spec)


@pytest.fixture(scope="session")
def default_truth():
    from pliunfold.phantom import PhantomSpec, generate_phantom

    return generate_phantom(PhantomSpec())


# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
