import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynrec.encoding import EncodingOperator, forward
from dynrec.phantom import PhantomSpec, dynamic_phantom, synth_coilmaps
from dynrec.sampling import MaskSpec, make_vd_mask

settings.register_profile(
    "dynrec", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("dynrec")


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def standard_case():
    """Fixed-seed cardiac phantom, 64x64x8 frames, 4 coils, 4x VD mask."""
    x = dynamic_phantom(PhantomSpec(64, 64, 8, "cardiac", seed=0))
    sens = synth_coilmaps(64, 64, 4, 0)
    m = make_vd_mask(MaskSpec(64, 8, 4, 0.08, 3.0, True, 0))
    op = EncodingOperator(sens, m)
    return {"x": x, "sens": sens, "mask": m, "op": op, "y_meas": forward(op, x)}


# ------------------------------------------------------------ acceptance log

_ACCEPTANCE = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self, log, number, title, budget):
        self.log, self.number, self.title, self.budget = log, number, title, budget
        self.notes = []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, kind, err, tb):
        elapsed = time.perf_counter() - self.t0
        detail = "; ".join(self.notes)
        ok = err is None and elapsed < self.budget
        if err is not None:
            detail = (detail + "; " if detail else "") + (str(err).splitlines() or [kind.__name__])[0]
        elif elapsed >= self.budget:
            detail = (detail + "; " if detail else "") + f"over budget {self.budget:g} s"
        status = "PASS" if ok else "FAIL"
        self.log[self.number] = f"criterion {self.number:2d} {status}  {self.title} ({elapsed:.1f} s) {detail}".rstrip()
        print(self.log[self.number])
        if err is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f} s, budget {self.budget:g} s")
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title, budget_s) as c:`` times a block and logs PASS/FAIL."""
    log = request.config.stash.setdefault(_ACCEPTANCE, {})
    return lambda number, title, budget: _Criterion(log, number, title, budget)


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_ACCEPTANCE, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        terminalreporter.write_line(log[number])
