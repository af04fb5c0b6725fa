"""Acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line. Run directly with
``python3 tests/test_acceptance.py`` or through pytest, which repeats the
lines in the terminal summary.
"""

import functools
import json
import math
import time

import numpy as np

from mvcond import io
from mvcond.camgeo import Camera, forward_warp, reproject_points
from mvcond.curation import dynamic_score_frame, dynamic_score_sequence, frame_score, nonrigid_masks_from_flow, small_viewpoint_filter
from mvcond.depthalign import AlignParams, SparseGuidance, _KeypointProblem, align_sparse, lwlr_recover, synth_matches
from mvcond.metrics import psnr, ssim
from mvcond.pipeline import PipelineConfig, hole_fill_generate, run
from mvcond.robustfit import ransac_circle
from mvcond.synthetic import camera_at, circle_tracks, intrinsics, render, rigid_flow, sweep_trajectory
from mvcond.vcond import ScheduleParams, ViewSet, add_noise, build_condition, corrupt, f_of_t, w_of_t

RESULTS: dict[int, str] = {}


def criterion(n: int, title: str, limit_s: float | None = None):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - t0
                if limit_s is not None:
                    assert elapsed < limit_s, f"runtime {elapsed:.2f}s exceeds {limit_s}s"
            except Exception as exc:
                elapsed = time.perf_counter() - t0
                line = f"FAIL criterion {n:2d} {title} ({elapsed:.2f}s): {exc}"
                RESULTS[n] = line
                print(line)
                raise
            line = f"PASS criterion {n:2d} {title} ({elapsed:.2f}s) {detail}".rstrip()
            RESULTS[n] = line
            print(line)
        return wrapper
    return deco


@criterion(1, "schedule values", limit_s=1.0)
def test_c01_schedule_values():
    assert abs(w_of_t(1000) - 1.0) <= 1e-12
    assert abs(w_of_t(300) - 0.8) <= 1e-12
    assert abs(w_of_t(650) - 0.9) <= 1e-12
    ws = [w_of_t(t) for t in range(0, 1001)]
    assert all(b >= a for a, b in zip(ws, ws[1:]))
    assert f_of_t(1000, ScheduleParams(beta_f=0.2)) == 200


@criterion(2, "condition endpoints", limit_s=10.0)
def test_c02_condition_endpoints():
    n, h, w, c = 5, 64, 64, 3
    gen = np.random.default_rng(2)
    frames = gen.random((n, h, w, c))
    masks = gen.random((n, h, w)) < 0.3
    views = ViewSet(frames, (0, 2), masks)
    sched = ScheduleParams()
    zero_w = ScheduleParams(v_decay_end=0.0)

    noise = gen.standard_normal(frames.shape)
    x_t = add_noise(frames, 1000, gen.standard_normal(frames.shape), sched)
    cond = build_condition(views, x_t, 1000, noise, sched)
    c_t = corrupt(views, 1000, noise, sched)
    tg = list(views.target_indices)
    assert np.array_equal(cond.values[tg], c_t[tg])

    x_t = add_noise(frames, 150, gen.standard_normal(frames.shape), zero_w)
    cond = build_condition(views, x_t, 150, noise, zero_w)
    assert cond.weight == 0.0
    assert np.array_equal(cond.values[tg], x_t[tg])

    for k in range(100):
        g = np.random.default_rng(1000 + k)
        t = int(g.integers(1, 1001))
        x_t = add_noise(frames, t, g.standard_normal(frames.shape), sched)
        cond = build_condition(views, x_t, t, g.standard_normal(frames.shape), sched)
        assert np.array_equal(cond.values[[0, 2]], frames[[0, 2]])
        assert not cond.mask[[0, 2]].any()


@criterion(3, "LWLR exactness", limit_s=30.0)
def test_c03_lwlr_exact():
    h, w = 128, 160
    gen = np.random.default_rng(3)
    vs, us = np.mgrid[0:h, 0:w]
    d_hat = 2.0 + np.sin(us / 17.0) + 0.5 * np.cos(vs / 11.0) + 0.3 * gen.random((h, w))
    idx = gen.choice(h * w, 400, replace=False)
    gv, gu = np.divmod(idx, w)
    target = 2.0 * d_hat[gv, gu] + 1.0
    guidance = SparseGuidance(np.stack([gu, gv], -1).astype(float), target,
                              np.full(400, 2.0), np.full(400, 1.0), np.zeros(400))
    res = lwlr_recover(d_hat, guidance, b=0.2, lam=1e-8)
    err = float(np.max(np.abs(res.depth - (2.0 * d_hat + 1.0))))
    assert err < 1e-5, err
    assert np.array_equal(res.depth[gv, gu], target)
    return f"max err {err:.2e}"


def _three_camera_scene(h=120, w=160):
    K = intrinsics(h, w)
    src = camera_at((0.0, 0.0, 0.0), 0.0, K)
    anchors = {1: camera_at((0.35, -0.05, 0.1), -0.06, K), 2: camera_at((-0.3, 0.08, 0.2), 0.05, K, pitch=0.03)}
    _, gt = render(src, h, w)
    return src, anchors, gt


@criterion(4, "keypoint alignment", limit_s=60.0)
def test_c04_keypoint_alignment():
    src, anchors, gt = _three_camera_scene()
    gen = np.random.default_rng(4)
    scale = gen.uniform(0.5, 2.0, gt.shape)
    shift = gen.uniform(-0.2, 0.2, gt.shape)
    corrupted = np.where(gt > 0, scale * gt + shift, 0.0)
    matches = synth_matches(gt, src, anchors, 1024, rng_seed=4)
    assert len(matches.keypoints()) == 1024
    guid = align_sparse(corrupted, matches, src, anchors, AlignParams(max_keypoints=1024))
    rows, cols = guid.cells()
    rel = np.abs(guid.depth - gt[rows, cols]) / gt[rows, cols]
    med, worst = float(np.median(rel)), float(guid.residual.max())
    assert len(guid) == 1024, len(guid)
    assert med < 0.01, med
    assert worst < 0.1, worst
    return f"median rel err {med:.2e}, max residual {worst:.2e}px"


@criterion(5, "gradient check")
def test_c05_gradient_check():
    src, anchors, gt = _three_camera_scene()
    matches = synth_matches(gt, src, anchors, 100, rng_seed=5)
    gen = np.random.default_rng(5)
    worst = 0.0
    for group in matches.keypoints():
        i0 = group[0]
        prob = _KeypointProblem(matches.src_px[i0], [(anchors[int(matches.anchor_view[i])], matches.dst_px[i])
                                                     for i in group], src, gt.shape)
        s = math.log(matches.src_depth[i0] * gen.uniform(0.5, 2.0))
        eps = 1e-5
        fd = (prob.loss(s + eps) - prob.loss(s - eps)) / (2 * eps)
        g = prob.grad(s)
        worst = max(worst, abs(g - fd) / abs(fd))
    assert worst < 1e-4, worst
    return f"max rel err {worst:.2e}"


def _table_oracle(i: int, c: int) -> float:
    # i, c in hundredths
    if i == 0 and c == 0:
        return 0.0
    if i >= 12 and c >= 35:
        return 2.0
    if i >= 12 and 20 <= c < 35:
        return 1.5
    if i < 12 and 20 <= c < 35:
        return 1.0
    if i < 12 and c < 20:
        return 0.5
    return 1.5  # the two cells the published table leaves open


def _mask_with_score(h, w, score):
    m = np.zeros((h, w), dtype=bool)
    if score == 0.5:
        m[0, 0] = True
    elif score == 2.0:
        m[h // 4:3 * h // 4, w // 4:3 * w // 4] = True
    return m


@criterion(6, "curation tables")
def test_c06_curation_tables():
    for i in range(101):
        for c in range(101):
            assert frame_score(i / 100, c / 100) == _table_oracle(i, c), (i, c)
    assert dynamic_score_frame(np.zeros((40, 40), bool))[2] == 0.0
    for n in (4, 8, 12, 20):
        k_flip = math.ceil(0.25 * n / 0.5)  # frames at 0.5 needed to reach 0.25N
        for k in range(n + 1):
            masks = [_mask_with_score(40, 40, 0.5 if j < k else 0.0) for j in range(n)]
            res = dynamic_score_sequence(masks)
            assert res.total == 0.5 * k
            assert res.dynamic == (k >= k_flip), (n, k)
        total_eq = [_mask_with_score(40, 40, 2.0)] + [_mask_with_score(40, 40, 0.0)] * 7
        assert dynamic_score_sequence(total_eq).dynamic  # total 2 == 0.25 * 8


@criterion(7, "non-rigid detection")
def test_c07_nonrigid_detection():
    h, w = 96, 128
    K = intrinsics(h, w)
    c0 = camera_at((0.0, 0.0, 0.0), 0.0, K)
    c1 = camera_at((0.2, 0.0, 0.0), 0.0, K)
    _, depth = render(c0, h, w)
    flow = rigid_flow(depth, c0, c1)
    rigid = nonrigid_masks_from_flow([flow])[0]
    assert not rigid.any()

    moved = flow.copy()
    block = np.zeros((h, w), dtype=bool)
    block[40:60, 70:90] = True
    moved[block, 1] += 3.0  # across the horizontal epipolar lines
    mask = nonrigid_masks_from_flow([moved])[0]
    iou = (mask & block).sum() / (mask | block).sum()
    fpr = (mask & ~block).sum() / (~block).sum()
    assert iou >= 0.7, iou
    assert fpr <= 0.01, fpr
    return f"IoU {iou:.3f}, FPR {fpr:.4f}"


@criterion(8, "small-viewpoint filter")
def test_c08_small_viewpoint():
    small = circle_tracks(100, 30, np.random.default_rng(8).uniform(0.5, 3.0, 100), seed=1)
    large = circle_tracks(100, 30, np.random.default_rng(9).uniform(50, 120, 100), seed=2)
    assert small_viewpoint_filter(small)[0] is False
    assert small_viewpoint_filter(large)[0] is True
    mixed = circle_tracks(100, 30, np.r_[np.full(50, 2.0), np.full(50, 60.0)], seed=3)
    assert small_viewpoint_filter(mixed)[0] is True

    hits = 0
    for seed in range(100):
        g = np.random.default_rng(seed)
        r = g.uniform(10, 80)
        ctr = g.uniform(100, 300, 2)
        ang = g.uniform(0, 2 * np.pi, 70)
        inl = ctr + r * np.stack([np.cos(ang), np.sin(ang)], -1) + g.normal(0, 0.2, (70, 2))
        out = g.uniform(0, 400, (30, 2))
        pts = g.permutation(np.vstack([inl, out]))
        fit = ransac_circle(pts, rng_seed=seed)
        hits += abs(fit.radius - r) <= 0.5
    assert hits >= 95, hits
    return f"{hits}/100 circle fits within 0.5px"


def _brute_zbuffer(depth, src, dst, hw):
    h, w = depth.shape
    best = {}
    for v in range(h):
        for u in range(w):
            if not depth[v, u] > 0:
                continue
            uv, z = reproject_points(np.array([[u, v]], float), np.array([depth[v, u]]), src, dst)
            if not z[0] > 0:
                continue
            tu, tv = math.floor(uv[0, 0] + 0.5), math.floor(uv[0, 1] + 0.5)
            if 0 <= tu < hw[1] and 0 <= tv < hw[0]:
                key = (tv, tu)
                if key not in best or z[0] < best[key][0]:
                    best[key] = (z[0], v * w + u)
    return best


@criterion(9, "warping")
def test_c09_warping():
    h, w = 48, 64
    K = intrinsics(h, w)
    cam = camera_at((0.1, 0.0, 0.0), 0.02, K)
    img, depth = render(cam, h, w)
    ident = forward_warp(img, depth, cam, cam)
    assert np.array_equal(ident.image, img)
    assert np.array_equal(ident.depth, depth)
    assert ident.mask.all()

    # fronto-parallel plane under sideways translation shifts uniformly
    Z = 4.0
    src = Camera(K, np.eye(4))
    for tx in (0.05, 0.13, -0.21):
        T = np.eye(4)
        T[0, 3] = -tx
        dst = Camera(K, T)
        vs, us = np.mgrid[0:h, 0:w].astype(float)
        coords = np.stack([us, vs], -1)
        res = forward_warp(coords, np.full((h, w), Z), src, dst)
        shift = -K[0, 0] * tx / Z
        tv, tu = np.nonzero(res.mask)
        du = res.image[tv, tu, 0] + shift - tu
        dv = res.image[tv, tu, 1] - tv
        assert res.mask.any()
        assert np.all(np.abs(du) <= 0.5) and np.all(dv == 0)

    gen = np.random.default_rng(9)
    Kc = intrinsics(32, 32)
    for trial in range(20):
        depth = gen.uniform(1.0, 5.0, (32, 32))
        depth[gen.random((32, 32)) < 0.1] = 0.0
        a = camera_at((0.0, 0.0, 0.0), 0.0, Kc)
        b = camera_at(gen.uniform(-0.5, 0.5, 3), gen.uniform(-0.2, 0.2), Kc, pitch=gen.uniform(-0.1, 0.1))
        src_img = np.arange(32 * 32, dtype=float).reshape(32, 32)
        res = forward_warp(src_img, depth, a, b)
        best = _brute_zbuffer(depth, a, b, (32, 32))
        assert res.mask.sum() == len(best)
        for (tv, tu), (z, idx) in best.items():
            assert res.mask[tv, tu]
            assert abs(res.depth[tv, tu] - z) <= 1e-12 * z
            assert res.image[tv, tu] == idx


@criterion(10, "end-to-end oracle closure", limit_s=120.0)
def test_c10_pipeline_closure(tmp_path):
    h, w, n = 240, 320, 16
    cams = sweep_trajectory(n, h, w)
    scene = tmp_path / "scene"
    (scene / "gt").mkdir(parents=True)
    (scene / "depth").mkdir()
    for i, cam in enumerate(cams):
        img, depth = render(cam, h, w)
        io.write_ppm(scene / "gt" / f"view_{i:04d}.ppm", img)
        io.write_pfm(scene / "depth" / f"depth_{i:04d}.pfm", depth)
    io.write_camera_json(scene / "cameras.json", cams)
    base = {"trajectory": "cameras.json", "input_views": ["gt/view_0000.ppm"], "depth_dir": "depth",
            "gt_dir": "gt", "gt_depth_dir": "depth", "synth_matches": True, "chunk": 5, "seed": 10}

    (scene / "oracle.json").write_text(json.dumps({**base, "generator": "oracle", "output_dir": "out_oracle"}))
    summary = run(PipelineConfig.load(scene / "oracle.json"))
    assert summary["status"] == "complete"
    assert len(summary["views"]) == n
    assert all(v["psnr"] == 99.0 for v in summary["views"])
    for i in range(n):
        assert np.array_equal(io.read_ppm(scene / "out_oracle" / "views" / f"view_{i:04d}.ppm"),
                              io.read_ppm(scene / "gt" / f"view_{i:04d}.ppm"))

    (scene / "fill.json").write_text(json.dumps({**base, "generator": "holefill", "output_dir": "out_fill"}))
    summary = run(PipelineConfig.load(scene / "fill.json"))
    assert summary["status"] == "complete"
    assert len(list((scene / "out_fill" / "views").glob("view_*.ppm"))) == n
    inter = scene / "out_fill" / "intermediate"
    for j in range(1, n):
        warp = io.load_image(inter / f"warp_{j:04d}.ppm")
        mask = io.read_mask(inter / f"mask_{j:04d}.pgm")
        # NaN under every uncovered pixel: any pixel the fill misses stays NaN
        probe = np.where(mask[..., None], warp, np.nan)
        filled = hole_fill_generate([probe], [mask], [warp])[0]
        assert np.isfinite(filled).all()
        assert np.array_equal(filled[mask], warp[mask])


@criterion(11, "metrics")
def test_c11_metrics():
    gen = np.random.default_rng(11)
    a = gen.random((64, 64, 3))
    noise = gen.choice([-0.1, 0.1], a.shape)  # MSE exactly 0.01
    p = psnr(a, a + noise)
    assert abs(p - 20.0) <= 0.01, p
    assert ssim(a, a) == 1.0
    from test_metrics import brute_ssim
    worst = 0.0
    for k in range(5):
        x = gen.random((16, 16, 3))
        y = np.clip(x + gen.normal(0, 0.1, x.shape), 0, 1)
        worst = max(worst, abs(ssim(x, y) - brute_ssim(x, y)))
    assert worst < 1e-6, worst
    return f"psnr {p:.4f}, ssim max diff {worst:.1e}"


@criterion(12, "I/O round trips")
def test_c12_io_roundtrips(tmp_path):
    gen = np.random.default_rng(12)
    for k in range(1000):
        h, w = (int(x) for x in gen.integers(1, 24, 2))
        kind = k % 4
        if kind == 0:
            c = (1, 3)[int(gen.integers(2))]
            arr = gen.standard_normal((h, w) if c == 1 else (h, w, 3)).astype(np.float32)
            arr.flat[gen.integers(arr.size)] = gen.choice([np.inf, -np.inf, 0.0, -0.0, 3.4e38])
            io.write_pfm(tmp_path / "x.pfm", arr)
            got = io.read_pfm(tmp_path / "x.pfm")
        elif kind == 1:
            arr = (gen.standard_normal((h, w, 2)) * 50).astype(np.float32)
            io.write_flo(tmp_path / "x.flo", arr)
            got = io.read_flo(tmp_path / "x.flo")
        elif kind == 2:
            arr = gen.integers(0, 256, (h, w, 3), dtype=np.uint8)
            io.write_ppm(tmp_path / "x.ppm", arr)
            got = io.read_ppm(tmp_path / "x.ppm")
        else:
            arr = gen.integers(0, 256, (h, w), dtype=np.uint8)
            io.write_pgm(tmp_path / "x.pgm", arr)
            got = io.read_pgm(tmp_path / "x.pgm")
        assert got.dtype == arr.dtype and got.shape == arr.shape
        assert got.tobytes() == arr.tobytes(), kind


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                if "tmp_path" in fn.__code__.co_varnames or "tmp_path" in getattr(fn, "__wrapped__", fn).__code__.co_varnames:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except Exception:
                failed += 1
    sys.exit(1 if failed else 0)
