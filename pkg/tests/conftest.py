import numpy as np
import pytest

from trimgs.core import Camera, GaussianScene, logit

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}
# free-form tables printed after the criteria lines
REPORTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    for title, body in REPORTS:
        terminalreporter.write_line("")
        terminalreporter.write_line(title)
        for line in body.splitlines():
            terminalreporter.write_line(line)


def axis_camera(width=32, height=32, f=40.0):
    """Identity extrinsics looking down +z, principal point at the image centre."""
    return Camera(fx=f, fy=f, cx=width / 2, cy=height / 2, world_to_camera=np.eye(4), width=width, height=height)


def make_scene(means, scales, opacities, colors, rotations=None, extent=1.0, sh1=None, ids=None):
    means = np.asarray(means, dtype=float).reshape(-1, 3)
    n = len(means)
    rot = np.tile([1.0, 0, 0, 0], (n, 1)) if rotations is None else rotations
    return GaussianScene(
        means=means,
        log_scales=np.log(np.broadcast_to(np.asarray(scales, dtype=float), (n, 3))),
        rotations=rot,
        opacity_logits=logit(np.broadcast_to(np.asarray(opacities, dtype=float), (n,))),
        colors=np.broadcast_to(np.asarray(colors, dtype=float), (n, 3)),
        scene_extent=extent,
        sh1=sh1,
        ids=ids,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
