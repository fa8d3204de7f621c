"""Contribution scores against hand values and a per-pixel numpy recomputation."""
import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimgs.core import GaussianScene, project_scene
from trimgs.render import RenderOptions, alpha_image, depth_order, pixel_grid, render
from trimgs.synth import random_scene
from trimgs.trim import (
    TrimConfig,
    contribution_multi_view,
    contribution_opacity_baseline,
    contribution_single_view_normalized,
    contribution_single_view_raw,
    lowest_fraction,
    top_k_mean,
    trim_by_score,
    trim_step,
)

from conftest import axis_camera, make_scene

seeds = st.integers(0, 10_000)


def per_pixel_contributions(scene, cam, gamma):
    """Independent per-pixel compositing over the whole image, no tiles, no early stop."""
    proj = project_scene(scene, cam)
    px, py = pixel_grid(cam)
    T = np.ones((cam.height, cam.width))
    n = len(scene)
    raw, norm, count = np.zeros(n), np.zeros(n), np.zeros(n, dtype=int)
    for i in depth_order(scene, proj):
        a = alpha_image(proj, i, px, py)
        m = a > 0
        raw[i] = np.sum(a[m] * T[m])
        norm[i] = np.sum(a[m] ** gamma * T[m] ** (1 - gamma))
        count[i] = m.sum()
        T *= 1 - a
    return raw, np.divide(norm, count, out=np.zeros(n), where=count > 0), count


def _flat(opacity, depth, color=(1, 1, 1), ids=None):
    """Scale large enough that alpha is constant to 1e-9 over a 10x10 image."""
    return make_scene([[0, 0, depth]], 1e4, opacity, color, ids=ids)


def _stack(front, back):
    return GaussianScene(
        np.vstack([front.means, back.means]), np.vstack([front.log_scales, back.log_scales]),
        np.vstack([front.rotations, back.rotations]),
        np.concatenate([front.opacity_logits, back.opacity_logits]),
        np.vstack([front.colors, back.colors]), scene_extent=1.0,
        ids=np.concatenate([front.ids, back.ids]),
    )


CAM10 = axis_camera(10, 10, f=10.0)


def test_raw_unoccluded_hundred_pixels():
    raw, count = contribution_single_view_raw(_flat(0.5, 3.0), CAM10)
    assert count[0] == 100
    assert raw[0] == pytest.approx(50.0, abs=1e-6)


def test_raw_behind_opaque_occluder():
    scene = _stack(_flat(0.999, 2.0, ids=[0]), _flat(0.5, 3.0, ids=[1]))
    raw, count = contribution_single_view_raw(scene, CAM10)
    # the front alpha clamps to 0.99
    assert raw[1] == pytest.approx(100 * 0.5 * 0.01, abs=1e-6)
    assert count.tolist() == [100, 100]


def test_normalized_unoccluded_uniform_alpha():
    c, _ = contribution_single_view_normalized(_flat(0.64, 3.0), CAM10, gamma=0.5)
    assert c[0] == pytest.approx(0.8, abs=1e-6)


def test_gamma_one_ignores_occluders():
    back = _flat(0.64, 3.0, ids=[1])
    alone, _ = contribution_single_view_normalized(back, CAM10, gamma=1.0)
    both, _ = contribution_single_view_normalized(_stack(_flat(0.9, 2.0, ids=[0]), back), CAM10, gamma=1.0)
    assert both[1] == pytest.approx(alone[0], abs=1e-12)
    assert alone[0] == pytest.approx(0.64, abs=1e-6)


@pytest.mark.parametrize("gamma", [0.0, 0.25, 0.5, 0.9])
def test_opaque_occluder_strictly_lowers_score(gamma):
    back = _flat(0.64, 3.0, ids=[1])
    alone, _ = contribution_single_view_normalized(back, CAM10, gamma)
    both, _ = contribution_single_view_normalized(_stack(_flat(0.999, 2.0, ids=[0]), back), CAM10, gamma)
    assert both[1] < alone[0]


def test_two_gaussian_stack_gamma_quarter():
    cam = axis_camera(24, 24)
    scene = make_scene([[0.05, 0, 2.0], [-0.05, 0.02, 3.0]], [[0.3, 0.2, 0.1], [0.4, 0.4, 0.1]], [0.7, 0.6],
                       [[1, 0, 0], [0, 1, 0]])
    got, cnt = contribution_single_view_normalized(scene, cam, 0.25)
    _, want, wcnt = per_pixel_contributions(scene, cam, 0.25)
    np.testing.assert_array_equal(cnt, wcnt)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 50), st.sampled_from([0.0, 0.25, 0.5, 1.0]))
def test_matches_per_pixel_oracle(seed, n, gamma):
    scene, cam = random_scene(n, seed=seed, width=32, height=32)
    raw, cnt = contribution_single_view_raw(scene, cam)
    norm, _ = contribution_single_view_normalized(scene, cam, gamma)
    w_raw, w_norm, w_cnt = per_pixel_contributions(scene, cam, gamma)
    np.testing.assert_array_equal(cnt, w_cnt)
    np.testing.assert_allclose(raw, w_raw, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(norm, w_norm, rtol=1e-9, atol=1e-12)
    assert np.all((norm >= 0) & (norm <= 1))


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(1, 150))
def test_raw_conservation(seed, n):
    scene, cam = random_scene(n, seed=seed)
    raw, _ = contribution_single_view_raw(scene, cam)
    out = render(scene, cam, RenderOptions(early_stop=False))
    assert abs(raw.sum() - np.sum(1 - out.final_transmittance)) < 1e-4


def test_raw_agrees_with_render_weight_records():
    scene, cam = random_scene(40, seed=21)
    out = render(scene, cam, RenderOptions(records=True, early_stop=False, record_cap=64))
    assert out.weight_records.overflow.max() == 0
    raw, _ = contribution_single_view_raw(scene, cam)
    rec = out.weight_records
    for j, gid in enumerate(scene.ids):
        assert raw[j] == pytest.approx(np.sum(np.where(rec.gaussian_id == gid, rec.weight, 0.0)), abs=1e-10)


def test_zero_coverage_gaussian():
    scene = make_scene([[0, 0, 3.0], [100.0, 0, 3.0]], 0.3, 0.5, [1, 1, 1])
    raw, cnt = contribution_single_view_raw(scene, axis_camera(16, 16))
    norm, _ = contribution_single_view_normalized(scene, axis_camera(16, 16))
    assert raw[1] == 0 and cnt[1] == 0 and norm[1] == 0


def test_top_k_mean_examples():
    per_view = np.array([[0.9, 0.5, 0.4, 0.3, 0.2, 0.1]]).T
    score, views = top_k_mean(per_view, np.ones_like(per_view, dtype=int), 5)
    assert score[0] == pytest.approx(0.46)
    assert views[0].tolist() == [0, 1, 2, 3, 4]
    score, _ = top_k_mean(np.array([[0.7]]), np.ones((1, 1), dtype=int), 5)
    assert score[0] == 0.7
    pv = np.array([[0.3], [0.0], [0.6], [0.9], [0.0], [0.0]])
    cov = np.array([[1], [0], [1], [1], [0], [0]])
    score, views = top_k_mean(pv, cov, 5)
    assert score[0] == pytest.approx(0.6)
    assert views[0].tolist() == [3, 2, 0, -1, -1]
    score, views = top_k_mean(np.zeros((3, 1)), np.zeros((3, 1), dtype=int), 5)
    assert score[0] == 0 and np.all(views == -1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), seeds)
def test_top_k_mean_against_sort(V, k, seed):
    rng = np.random.default_rng(seed)
    pv = rng.random((V, 10))
    cov = rng.integers(0, 2, (V, 10))
    score, views = top_k_mean(pv, cov, k)
    for j in range(10):
        vals = sorted(pv[cov[:, j] > 0, j], reverse=True)[:k]
        assert score[j] == pytest.approx(np.mean(vals) if vals else 0.0)
        assert (views[j] >= 0).sum() == min(k, int((cov[:, j] > 0).sum()))


def test_trim_counts_and_separation():
    n = 100
    scene = make_scene(np.zeros((n, 3)), 0.1, 0.5, [1, 1, 1])
    score = np.ones(n)
    zero = np.random.default_rng(0).choice(n, 10, replace=False)
    score[zero] = 0.0
    trimmed, removed = trim_by_score(scene, score, 0.10)
    assert len(trimmed) == 90
    assert sorted(removed.tolist()) == sorted(scene.ids[zero].tolist())


def test_trim_ties_by_ascending_id():
    scene = make_scene(np.zeros((20, 3)), 0.1, 0.5, [1, 1, 1], ids=np.arange(20)[::-1].copy())
    _, removed = trim_by_score(scene, np.zeros(20), 0.1)
    assert removed.tolist() == [0, 1]
    assert lowest_fraction(np.zeros(20), np.arange(20)[::-1], 0.1).tolist() == [19, 18]


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(10, 200), st.floats(0.05, 0.5))
@pytest.mark.filterwarnings("ignore:trim fraction")
def test_trim_separates_scores(seed, n, frac):
    scene = make_scene(np.zeros((n, 3)), 0.1, 0.5, [1, 1, 1])
    score = np.random.default_rng(seed).integers(0, 5, n).astype(float)
    trimmed, removed = trim_by_score(scene, score, frac)
    k = int(np.floor(frac * n))
    assert len(removed) == k and len(trimmed) == n - k
    gone = np.isin(scene.ids, removed)
    if k:
        assert score[gone].max() <= score[~gone].min()


def test_tiny_fraction_warns_and_keeps_everything():
    scene = make_scene(np.zeros((5, 3)), 0.1, 0.5, [1, 1, 1])
    with pytest.warns(RuntimeWarning):
        trimmed, removed = trim_by_score(scene, np.arange(5.0), 0.1)
    assert len(trimmed) == 5 and len(removed) == 0


def test_config_validation():
    for kw in ({"gamma": 1.5}, {"fraction": 0.0}, {"fraction": 1.0}, {"interval": 0}, {"metric": "size"}):
        with pytest.raises(ValueError):
            TrimConfig(**kw)


def test_opacity_baseline():
    scene = make_scene(np.zeros((2, 3)), 0.1, [0.5, 0.2], [1, 1, 1])
    scene.opacity_logits[0] = 0.0
    assert contribution_opacity_baseline(scene)[0] == 0.5


def test_baseline_and_gamma_one_rank_unoccluded_splats_alike():
    cam = axis_camera(64, 64, f=60)
    xs = np.linspace(-0.6, 0.6, 5)
    scene = make_scene([[x, 0, 3.0] for x in xs], 0.05, [0.3, 0.9, 0.5, 0.7, 0.1], [1, 1, 1])
    c, _ = contribution_single_view_normalized(scene, cam, gamma=1.0)
    np.testing.assert_array_equal(np.argsort(c), np.argsort(contribution_opacity_baseline(scene)))


def test_occluded_floater_ranks_high_for_baseline_low_for_normalized():
    cam = axis_camera(32, 32)
    wall = make_scene([[0, 0, 2.0]], [5.0, 5.0, 0.01], 0.995, [0.5, 0.5, 0.5], ids=[0])
    visible = make_scene([[0.3, 0.3, 1.5], [-0.3, 0.3, 1.5]], 0.05, 0.6, [1, 0, 0], ids=[1, 2])
    floater = make_scene([[0, 0, 3.0]], 0.1, 0.98, [0, 1, 0], ids=[3])
    scene = _stack(_stack(wall, visible), floater)
    base = contribution_opacity_baseline(scene)
    norm, _ = contribution_single_view_normalized(scene, cam, 0.5)
    assert np.argsort(np.argsort(base))[3] >= 2
    assert np.argmin(norm) == 3


def test_multi_view_camera_permutation_invariance():
    scene, cam = random_scene(60, seed=4)
    from trimgs.core import Camera

    cams = []
    for k, ang in enumerate([0.0, 0.1, -0.15, 0.2]):
        c, s = np.cos(ang), np.sin(ang)
        w2c = np.eye(4)
        w2c[:3, :3] = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
        cams.append(Camera(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy, world_to_camera=w2c,
                           width=cam.width, height=cam.height))
    cfg = TrimConfig(top_k=2)
    a = contribution_multi_view(scene, cams, cfg).score
    b = contribution_multi_view(scene, cams[::-1], cfg).score
    np.testing.assert_allclose(a, b, atol=1e-15)
    t1, r1 = trim_step(scene, cams, cfg)
    t2, r2 = trim_step(scene, cams[::-1], cfg)
    assert r1.tolist() == r2.tolist()


def test_single_view_score_equals_view_score():
    scene, cam = random_scene(30, seed=8)
    table = contribution_multi_view(scene, [cam])
    c, _ = contribution_single_view_normalized(scene, cam)
    np.testing.assert_array_equal(table.score, c)


def test_csv_output(tmp_path):
    scene, cam = random_scene(12, seed=2)
    table = contribution_multi_view(scene, [cam, cam], TrimConfig(top_k=1))
    table.write_csv(tmp_path / "pv.csv", tmp_path / "agg.csv")
    with open(tmp_path / "agg.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["gaussian_id"]) for r in rows] == scene.ids.tolist()
    np.testing.assert_array_equal([float(r["C"]) for r in rows], table.score)
    with open(tmp_path / "pv.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24 and set(rows[0]) == {"gaussian_id", "view_id", "C_k", "pixel_count"}


def test_trim_is_deterministic():
    scene, cam = random_scene(80, seed=13)
    r1 = trim_step(scene, [cam])[1]
    r2 = trim_step(scene.copy(), [cam])[1]
    assert r1.tolist() == r2.tolist() and len(r1) == 8
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        trim_step(scene, [cam])
