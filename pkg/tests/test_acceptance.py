"""The ten end-to-end acceptance criteria, each at its stated tolerance.

Every test records ``(passed, detail)`` into ``conftest.ACCEPTANCE`` before
asserting, so the terminal summary lists one PASS/FAIL line per criterion.
"""
import math
import time

import numpy as np
import pytest

import conftest
from trimgs.backward import ParamGradients, backward_render
from trimgs.core import Camera
from trimgs.densify import DensifyConfig, split_oversized
from trimgs.experiments import (
    PLANE_NORMALS,
    PLANE_TAU,
    compare_runs,
    floater_removal,
    format_runs,
    gamma_sweep,
    table1_direction,
    with_densify_interval,
)
from trimgs.georeg import NormalConfig, depth_to_normal
from trimgs.gradlab import gradient_closed_form, numeric_gradient
from trimgs.metrics import chamfer_distance, chamfer_distance_bruteforce, voxel_downsample
from trimgs.render import RenderOptions, render, render_reference
from trimgs.synth import random_scene
from trimgs.trim import contribution_single_view_normalized, contribution_single_view_raw

from test_metrics import per_voxel_oracle
from test_trim import per_pixel_contributions


def record(n, ok, detail):
    conftest.ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


# ---------------------------------------------------------------- 1


def test_criterion_01_gradient_inequality():
    t0 = time.perf_counter()
    problems, worst = [], 0.0
    for T in (0.5, 1.0, 2.0):
        vals = {}
        for name, s in (("T/4", T / 4), ("T/2", T / 2)):
            closed = gradient_closed_form(s, T)
            num = numeric_gradient(s, T)
            rel = abs(num - closed) / abs(closed)
            worst = max(worst, rel)
            vals[name] = (closed, num)
            if rel >= 1e-4:
                problems.append(f"T={T:g} {name} rel err {rel:.3g}")
        for kind, idx in (("closed", 0), ("numeric", 1)):
            if not abs(vals["T/4"][idx]) > 2 * abs(vals["T/2"][idx]):
                problems.append(f"T={T:g} {kind} |L'(T/4)| <= 2|L'(T/2)|")
    dt = time.perf_counter() - t0
    if dt >= 5:
        problems.append(f"runtime {dt:.1f}s")
    detail = (f"max numeric-vs-closed rel err {worst:.3g}, {dt:.2f}s"
              + ("" if not problems else "; " + "; ".join(problems)))
    record(1, not problems, detail)


# ---------------------------------------------------------------- 2


def test_criterion_02_compositing_closure():
    t0 = time.perf_counter()
    worst_closure = worst_ref = 0.0
    rng = np.random.default_rng(2024)
    for k in range(20):
        n = int(rng.integers(1, 201))
        scene, cam = random_scene(n, seed=500 + k, sh=k % 2 == 0)
        out = render(scene, cam)
        worst_closure = max(worst_closure, float(np.abs(out.weight_sum + out.final_transmittance - 1).max()))
        worst_ref = max(worst_ref, float(np.abs(out.color - render_reference(scene, cam)).max()))
    dt = time.perf_counter() - t0
    ok = worst_closure <= 1e-5 and worst_ref <= 1e-4 and dt < 30
    record(2, ok, f"closure err {worst_closure:.2e}, vs reference {worst_ref:.2e}, {dt:.1f}s")


# ---------------------------------------------------------------- 3


def test_criterion_03_gradient_check():
    t0 = time.perf_counter()
    h = 1e-6
    worst, checked, bad = 0.0, 0, []
    for k in range(10):
        rng = np.random.default_rng(3000 + k)
        n = int(rng.integers(5, 21))
        scene, cam = random_scene(n, seed=1000 + k, sh=True)
        G = rng.normal(size=(cam.height, cam.width, 3))
        loss = lambda: float(np.sum(G * render(scene, cam).color))  # noqa: E731
        grads = backward_render(scene, cam, G)
        for name in ParamGradients.FIELDS:
            flat = getattr(scene, name).reshape(-1)
            g = getattr(grads, name).reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                lp = loss()
                flat[i] = old - h
                lm = loss()
                flat[i] = old
                fd = (lp - lm) / (2 * h)
                err = abs(fd - g[i]) / max(abs(fd), 1e-7)
                worst = max(worst, err)
                checked += 1
                if err >= 1e-3:
                    bad.append((k, name, i))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 120
    record(3, ok, f"{checked} parameters, worst rel err {worst:.2e}, {len(bad)} over 1e-3, {dt:.1f}s")


# ---------------------------------------------------------------- 4


def test_criterion_04_contribution_oracle():
    worst_raw = worst_norm = worst_cons = 0.0
    for k in range(10):
        scene, cam = random_scene(10 + 15 * k, seed=4000 + k)
        raw, _ = contribution_single_view_raw(scene, cam)
        norm, _ = contribution_single_view_normalized(scene, cam, 0.5)
        o_raw, o_norm, _ = per_pixel_contributions(scene, cam, 0.5)
        worst_raw = max(worst_raw, float(np.abs(raw - o_raw).max()))
        worst_norm = max(worst_norm, float(np.abs(norm - o_norm).max()))
        T = render(scene, cam, RenderOptions(early_stop=False)).final_transmittance
        worst_cons = max(worst_cons, abs(float(raw.sum()) - float(np.sum(1 - T))))
    ok = worst_raw <= 1e-5 and worst_norm <= 1e-5 and worst_cons <= 1e-4
    record(4, ok, f"raw {worst_raw:.1e}, normalized {worst_norm:.1e}, conservation {worst_cons:.1e}")


# ---------------------------------------------------------------- 5


def test_criterion_05_floater_removal():
    res = floater_removal(seed=1)
    norm, base = res.removed_fraction["normalized"], res.removed_fraction["opacity_baseline"]
    ok = norm >= 0.9 and base <= 0.2
    record(5, ok, f"{res.n_floaters} floaters: normalized removes {norm:.0%}, opacity baseline {base:.0%}, "
                  f"unnormalized {res.removed_fraction['unnormalized']:.0%}")


# ---------------------------------------------------------------- 6


def test_criterion_06_size_bucket_direction():
    stats = table1_direction(seed=0)
    conftest.REPORTS.append(("size-bucketed normalized gradient (checkerboard)", stats.table()))
    vals = ", ".join(f"{stats.means[b]:.4g}" if b in stats.means else "-" for b in range(4))
    record(6, stats.strictly_decreasing(), f"bucket means {vals}")


# ---------------------------------------------------------------- 7 to 9 share one set of plane runs


@pytest.fixture(scope="module")
def plane_runs():
    variants = {
        "trim": {},
        "no-trim": {"trim": False},
        "no-normal-loss": {"normal": NormalConfig(window=PLANE_NORMALS.window, normal_weight=0.0)},
        "densify-100": {"densify_config": with_densify_interval(100)},
    }
    runs = {r.label: r for r in compare_runs(variants, iterations=2000, seed=0)}
    conftest.REPORTS.append(("plane runs (2000 iterations, seed 0)", format_runs(list(runs.values()))))
    return runs


@pytest.mark.slow
def test_criterion_07_trimming_improves_geometry(plane_runs):
    a, b = plane_runs["trim"], plane_runs["no-trim"]
    dpsnr = abs(a.psnr - b.psnr)
    ok = a.chamfer < b.chamfer and dpsnr < 1.0 and max(a.seconds, b.seconds) < 600
    record(7, ok, f"CD {a.chamfer:.5f} (trim) vs {b.chamfer:.5f}, PSNR gap {dpsnr:.2f} dB, "
                  f"runs {a.seconds:.0f}s/{b.seconds:.0f}s")


def plane_depth(cam, normal, d):
    """z-depth of the plane ``normal . X = d`` (camera space) through each pixel centre."""
    u = np.arange(cam.width) + 0.5
    v = np.arange(cam.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    return d / (rays @ normal)


@pytest.mark.slow
def test_criterion_08_normal_regularisation(plane_runs):
    cam = Camera(fx=40, fy=40, cx=16, cy=16, world_to_camera=np.eye(4), width=32, height=32)
    worst = 0.0
    for deg in (0, 15, 30, 45, 60):
        for axis in (0, 1):
            t = math.radians(deg)
            n = np.array([0.0, 0.0, -1.0])
            n[1 - axis] = math.sin(t)
            n[2] = -math.cos(t)
            d = float(n @ np.array([0, 0, 3.0]))
            for k in (3, 9):
                est = depth_to_normal(plane_depth(cam, n, d), cam, NormalConfig(window=k))
                h = k // 2
                worst = max(worst, float(np.abs(est[h:-h, h:-h] - n).max()))
    on, off = plane_runs["trim"].normal_error, plane_runs["no-normal-loss"].normal_error
    ok = worst <= 1e-3 and on < off
    record(8, ok, f"tilted planes max err {worst:.1e}; angular error {on:.2f} deg with loss vs {off:.2f} without")


@pytest.mark.slow
def test_criterion_09_scale_control(plane_runs):
    from conftest import make_scene

    parent = make_scene([[0, 0, 0]], [0.5, 0.1, 0.1], 0.5, [1, 1, 1])
    kids, n = split_oversized(parent, DensifyConfig(tau_s=0.2, split_k=2, shrink_factor=1.6))
    arith = n == 1 and len(kids) == 2 and np.allclose(kids.scales, [0.3125, 0.0625, 0.0625], rtol=1e-12)
    p99 = plane_runs["densify-100"].p99_scale
    ok = arith and p99 <= PLANE_TAU * 1.05
    record(9, ok, f"p99 max scale {p99:.4f} vs bound {PLANE_TAU * 1.05:.4f}; split arithmetic {'ok' if arith else 'wrong'}")


# ---------------------------------------------------------------- 10


@pytest.mark.slow
def test_criterion_10_eval_and_gamma_sweep():
    exact = True
    for k in range(10):
        rng = np.random.default_rng(10_000 + k)
        a = rng.normal(size=(int(rng.integers(1, 501)), 3))
        b = rng.normal(size=(int(rng.integers(1, 501)), 3))
        exact &= chamfer_distance(a, b) == chamfer_distance_bruteforce(a, b)
    voxel_ok = True
    for k in range(5):
        pts = np.random.default_rng(20_000 + k).uniform(-1, 1, (1000, 3))
        voxel_ok &= np.array_equal(voxel_downsample(pts, 0.2), per_voxel_oracle(pts, 0.2))
    runs = gamma_sweep((0.25, 0.5, 0.75), iterations=2000, seed=0)
    table = format_runs(runs)
    conftest.REPORTS.append(("gamma sweep (plane, 2000 iterations)", table))
    sweep_ok = len(runs) == 3 and all(np.isfinite([r.chamfer, r.psnr]).all() for r in runs)
    ok = exact and voxel_ok and sweep_ok
    record(10, ok, f"chamfer exact {exact}, voxel oracle {voxel_ok}, sweep rows {len(runs)}")
