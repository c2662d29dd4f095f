import math

import numpy as np
import pytest

from trimeta import MetaDataset, load_cdp
from trimeta.mathkernel import norm_cdf
from trimeta.trimming import normalized_weights

# reference CDP proportions kept at alpha = (0, 0.340)
CDP_KEPT = [0.5546, 1.0000, 0.0000, 0.2043, 0.4520, 0.4305, 0.7614, 0.9427, 0.1904, 0.8084]


@pytest.fixture(scope="session")
def cdp():
    return load_cdp()


def random_dataset(rng, n=None, name="random"):
    n = int(rng.integers(3, 40)) if n is None else n
    se = rng.uniform(0.05, 1.0, n)
    y = rng.normal(0.0, 1.0) + rng.normal(0.0, rng.uniform(0.0, 1.0), n) + se * rng.standard_normal(n)
    return MetaDataset.from_arrays(y, se, name=name)


def upper_residual(ds, b_hi, alpha):
    v = normalized_weights(ds)
    return float(np.dot(v, norm_cdf((ds.effects - b_hi) / ds.ses))) - alpha


def lower_residual(ds, b_lo, alpha):
    v = normalized_weights(ds)
    return float(np.dot(v, norm_cdf((b_lo - ds.effects) / ds.ses))) - alpha


def bisection_oracle(ds, alpha, steps=1_000_000):
    """Upper bound by plain bisection, with an independent bracket search."""
    y, s = ds.effects, ds.ses
    v = 1 / s**2
    v = v / v.sum()

    def g(b):
        return math.fsum(vi * 0.5 * math.erfc((b - yi) / (si * math.sqrt(2))) for vi, yi, si in zip(v, y, s)) - alpha

    lo, hi = float(y.min()) - 1.0, float(y.max()) + 1.0
    while g(lo) < 0:
        lo -= 2 * (hi - lo)
    while g(hi) > 0:
        hi += 2 * (hi - lo)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    entry = _criteria.setdefault(str(mark.args[0]), [])
    details = [v for k, v in item.user_properties if k == "detail"]
    entry.append((item.name, rep.passed, "; ".join(details)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_criteria, key=int):
        checks = _criteria[key]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({sum(p for _, p, _ in checks)}/{len(checks)} checks)")
        for name, passed, detail in checks:
            tr.write_line(f"    [{'pass' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
