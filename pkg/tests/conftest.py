import math

import numpy as np
import pytest

from fiberdet.geometry import Ellipse


def brute_force_mask(e: Ellipse, width: int, height: int) -> np.ndarray:
    """Membership by scanning every pixel center with scalar math."""
    mask = np.zeros((height, width), dtype=bool)
    c, s = math.cos(e.theta), math.sin(e.theta)
    for j in range(height):
        for i in range(width):
            dx, dy = i + 0.5 - e.cx, j + 0.5 - e.cy
            u = (dx * c + dy * s) / e.semi_major
            v = (-dx * s + dy * c) / e.semi_minor
            mask[j, i] = u * u + v * v <= 1.0
    return mask


def paint(ellipses, width, height, fg=200, bg=50):
    """Solid ellipses on a flat background, independent of the renderer."""
    img = np.full((height, width), bg, dtype=np.uint8)
    ys, xs = np.mgrid[0:height, 0:width] + 0.5
    for e in ellipses:
        c, s = math.cos(e.theta), math.sin(e.theta)
        dx, dy = xs - e.cx, ys - e.cy
        u = (dx * c + dy * s) / e.semi_major
        v = (-dx * s + dy * c) / e.semi_minor
        img[u * u + v * v <= 1] = fg
    return img


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(key, title): end-to-end acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    key, title = marker.args
    if rep.when != "call" and key in _ACCEPTANCE:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _ACCEPTANCE[key] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[key]
        line = f"{status} [{key}] {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
