import numpy as np
import pytest

from specnorm import spectral

D_ORTHO_TOL = 1e-8

# every eigensystem produced by a solver during the current test
_produced: list = []
_acceptance_lines: list = []


@pytest.fixture(scope="session", autouse=True)
def _record_eigensystems():
    original = spectral._finish

    def recording(*args, **kwargs):
        es = original(*args, **kwargs)
        _produced.append(es)
        return es

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(spectral, "_finish", recording)
        yield


@pytest.fixture(autouse=True)
def d_orthonormal_guard():
    """Fail any test whose solvers returned eigenvectors that are not D-orthonormal."""
    _produced.clear()
    yield
    worst = max((es.orthonormality_residual() for es in _produced), default=0.0)
    _produced.clear()
    assert worst < D_ORTHO_TOL, f"D-orthonormality residual {worst:.3g}"


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, ok: bool, detail: str):
        _acceptance_lines.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_acceptance_lines[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def figure1():
    """The one-cluster circle dataset on a dense graph, split at t=0."""
    from specnorm.datagen import gen_circle_clusters
    from specnorm.diagnostics import initial_spectrum
    from specnorm.graph import Partition, build_affinity

    # seed 1: no cluster point strays onto the circle
    cloud = gen_circle_clusters(5000, 1, 0.01, seed=1)
    g = build_affinity(cloud.points, 64, 8, dense=True)
    part = Partition.from_truth(cloud.truth, cloud.cluster_id)
    pair, es0 = initial_spectrum(g, part, 41)
    return {"cloud": cloud, "graph": g, "part": part, "pair": pair, "es0": es0}
