import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

sys.path.insert(0, str(Path(__file__).parent))

from posedist.geom import RigidTransform  # noqa: E402

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    m = item.get_closest_marker("acceptance")
    if m is None:
        return
    cid, title = m.args
    rec = _ACCEPTANCE.setdefault(cid, {"title": title, "status": "PASS"})
    if call.excinfo is not None:
        if call.excinfo.errisinstance(pytest.skip.Exception):
            if rec["status"] == "PASS":
                rec["status"] = "SKIP"
        else:
            rec["status"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(k):
        return [int(p) if p.isdigit() else p for p in k.replace(".", " ").split()]

    for cid in sorted(_ACCEPTANCE, key=order):
        rec = _ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:<3} {rec['status']:<4} {rec['title']}")


def random_transform(rng, trans_scale=50.0) -> RigidTransform:
    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(R, rng.normal(scale=trans_scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
