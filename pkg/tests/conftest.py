import os
from pathlib import Path

import numpy as np
import pytest

from eprc import autodiff as ad
from eprc import kernels
from eprc.data import data_dir

# $EPRC_DATA_DIR, then the library default, then the location used on the build machine
MNIST_DIR = next((d for d in (data_dir(), Path("/root/data/mnist"))
                  if (d / "t10k-images-idx3-ubyte").exists()), data_dir())


@pytest.fixture
def f64():
    with ad.precision("float64"):
        yield


@pytest.fixture(params=["compiled", "python"])
def backend(request):
    if request.param == "compiled" and not kernels.compiled_available():
        pytest.skip("compiled extension not built")
    kernels.use_compiled(request.param == "compiled")
    yield request.param
    kernels.use_compiled(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_gradients(fn, arrays, h=1e-5, tol=1e-4):
    """Compare autodiff gradients of scalar ``fn(*tensors)`` with central differences."""
    with ad.precision("float64"):
        leaves = [ad.Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        out = fn(*leaves)
        analytic = ad.grad(out, leaves)
        errors = []
        for i, a in enumerate(arrays):
            def f(x, i=i):
                args = [ad.Tensor(np.array(b, dtype=np.float64)) for b in arrays]
                args[i] = ad.Tensor(x)
                return float(fn(*args).data)
            numeric = ad.numerical_gradient(f, np.array(a, dtype=np.float64), h)
            errors.append(ad.relative_error(analytic[i], numeric))
    assert max(errors) <= tol, errors
    return max(errors)


def random_artifacts(spec, seed=0, spread=2.0):
    """Finalized-looking artifacts with Laplace latents and empirical frequency tables."""
    from eprc.container import ModelArtifacts
    from eprc.decoders import init_decoder
    from eprc.density import table_from_probabilities

    r = np.random.default_rng(seed)
    art = ModelArtifacts(spec)
    for g in spec.groups:
        art.psi[g.name] = init_decoder(g.decoder, g.ell, 0.05, spec.kernel_hw(g.name), seed=seed)
        art.psi[g.name].shift.data[:] = r.normal(0, 0.1, g.ell)
        for s in g.slots:
            rows = spec.slot(s).shape.size // g.ell
            art.integers[s] = np.round(r.laplace(0, spread, (rows, g.ell))).astype(np.int64)
        sym = art.group_symbols(g.name)
        tables = []
        for c in range(g.ell):
            lo, hi = int(sym[:, c].min()), int(sym[:, c].max())
            counts = np.bincount(sym[:, c] - lo, minlength=hi - lo + 1)
            tables.append(table_from_probabilities(lo, hi, np.concatenate([[1e-6], counts, [1e-6]])))
        art.tables[g.name] = tables
    return art


_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one pass/fail line for the terminal summary."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])
