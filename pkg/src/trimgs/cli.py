"""Command-line entry point: ``trimgs <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as tio

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _configs(path: Optional[str]):
    values = tio.read_config(path) if path else {}
    return tio.build_configs(values, path or "<defaults>")


def _bg(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"--background needs r,g,b; got {text!r}")
    return tuple(parts)


def cmd_render(a) -> int:
    from .render import RenderOptions, render

    scene = tio.read_scene_ply(a.scene)
    cams = tio.read_cameras(a.cameras)
    out = Path(a.output)
    out.mkdir(parents=True, exist_ok=True)
    opts = RenderOptions(background=_bg(a.background))
    for k, cam in enumerate(cams):
        r = render(scene, cam, opts)
        tio.write_ppm(out / f"color_{k:03d}.ppm", np.clip(r.color, 0, 1))
        tio.write_tgsf(out / f"color_{k:03d}.tgsf", r.color)
        tio.write_tgsf(out / f"depth_{k:03d}.tgsf", r.median_depth)
        tio.write_tgsf(out / f"normal_{k:03d}.tgsf", r.normal_map)
        tio.write_tgsf(out / f"alpha_{k:03d}.tgsf", 1.0 - r.final_transmittance)
    print(f"rendered {len(cams)} views to {out}")
    return EXIT_OK


def cmd_train(a) -> int:
    from dataclasses import replace

    from .georeg import train

    cfg = _configs(a.config)
    tcfg = replace(cfg["train"], seed=a.seed) if a.seed is not None else cfg["train"]
    if a.iterations is not None:
        tcfg = replace(tcfg, iterations=a.iterations)
    if tcfg.dump_dir is None:
        tcfg = replace(tcfg, dump_dir=str(Path(a.output).resolve().parent))
    scene, cams, targets, _ = tio.read_bundle(a.scenedir)
    res = train(scene, cams, targets, tcfg, cfg["normal"], cfg["densify"], cfg["trim"])
    tio.write_scene_ply(a.output, res.scene)
    if a.log:
        res.write_log(a.log)
    last = res.records()[-1]
    print(f"iterations {tcfg.iterations}  gaussians {len(res.scene)}  psnr {last['psnr']:.3f} dB  -> {a.output}")
    return EXIT_OK


def cmd_trim(a) -> int:
    from .trim import contribution_multi_view, trim_by_score

    cfg = _configs(a.config)["trim"]
    scene = tio.read_scene_ply(a.scene)
    cams = tio.read_cameras(a.cameras)
    table = contribution_multi_view(scene, cams, cfg)
    trimmed, removed = trim_by_score(scene, table.score, cfg.fraction)
    if a.dump:
        dump = Path(a.dump)
        table.write_csv(dump.with_name(dump.stem + "_per_view" + dump.suffix), dump)
    if a.output:
        tio.write_scene_ply(a.output, trimmed)
    print(f"metric {cfg.metric}  removed {len(removed)} of {len(scene)}")
    return EXIT_OK


def cmd_eval_points(a) -> int:
    from .metrics import chamfer_distance, default_voxel_size, voxel_downsample

    pa, pb = tio.read_points_ply(a.a), tio.read_points_ply(a.b)
    v = a.voxel if a.voxel is not None else default_voxel_size(np.concatenate([pa, pb]))
    da, db = voxel_downsample(pa, v), voxel_downsample(pb, v)
    print(f"CD raw        {chamfer_distance(pa, pb):.9g}  ({len(pa)} vs {len(pb)} points)")
    print(f"CD voxel {v:g}  {chamfer_distance(da, db):.9g}  ({len(da)} vs {len(db)} points)")
    return EXIT_OK


def _load_image(path: Path) -> np.ndarray:
    return tio.read_tgsf(path) if path.suffix == ".tgsf" else tio.read_ppm(path)


def cmd_eval_images(a) -> int:
    from .metrics import psnr

    da, db = Path(a.dir_a), Path(a.dir_b)
    names = sorted(p.name for p in da.iterdir() if p.suffix in (".ppm", ".tgsf"))
    pairs = [n for n in names if (db / n).exists()]
    if not pairs:
        raise tio.FormatError(db, "images", f"no image names in common with {da}")
    vals = []
    for n in pairs:
        ia, ib = _load_image(da / n), _load_image(db / n)
        if ia.ndim != 3 or ia.shape[-1] != 3:
            continue
        vals.append(psnr(ia, ib))
        print(f"{n}  {vals[-1]:.4f} dB")
    if not vals:
        raise tio.FormatError(da, "images", "no colour images to compare")
    print(f"mean  {float(np.mean(vals)):.4f} dB  ({len(vals)} images)")
    return EXIT_OK


def cmd_stats(a) -> int:
    from dataclasses import replace

    from .georeg import collect_gradient_stats

    cfg = _configs(a.config)
    tcfg = replace(cfg["train"], seed=a.seed) if a.seed is not None else cfg["train"]
    scene, cams, targets, _ = tio.read_bundle(a.scenedir)
    stats, _ = collect_gradient_stats(scene, cams, targets, a.window, a.warmup, tcfg, cfg["normal"])
    print(stats.table())
    if stats.below_range:
        print(f"({stats.below_range} Gaussians below the smallest bucket)")
    return EXIT_OK


def cmd_grad_demo(a) -> int:
    from .gradlab import loss_sweep, verify_inequality

    for T in a.T:
        print(verify_inequality(T).format())
    if a.sweep:
        T = a.T[0]
        mus, curves = loss_sweep(T)
        with open(a.sweep, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mu"] + [f"L_sigma_{s:g}" for s in curves])
            for i, m in enumerate(mus):
                w.writerow([repr(float(m))] + [repr(float(c[i])) for c in curves.values()])
        print(f"sweep written to {a.sweep}")
    return EXIT_OK


def cmd_synth(a) -> int:
    from .synth import SynthParams, make_scene

    kw = {"floater_rate": a.floaters, "position_noise": a.noise, "scale_inflation": a.inflate,
          "n_views": a.views, "width": a.size, "height": a.size}
    if a.n is not None:
        kw["n_gaussians"] = a.n
    syn, init = make_scene(a.kind, SynthParams(**kw), seed=a.seed or 0)
    tio.write_bundle(a.output, syn, init, seed=a.seed or 0)
    print(f"{a.kind}: {len(init)} Gaussians ({len(syn.floater_ids)} floaters), {len(syn.cameras)} views -> {a.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trimgs", description=__doc__)
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = hardware default)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render colour, depth and normal maps")
    r.add_argument("scene")
    r.add_argument("cameras")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--background", default="0,0,0")
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("train", help="optimise a scene bundle")
    t.add_argument("scenedir")
    t.add_argument("-c", "--config")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--log")
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("trim", help="one contribution-based trimming step")
    tr.add_argument("scene")
    tr.add_argument("cameras")
    tr.add_argument("-c", "--config")
    tr.add_argument("-o", "--output")
    tr.add_argument("--dump")
    tr.set_defaults(func=cmd_trim)

    e = sub.add_parser("eval", help="point-cloud or image metrics")
    esub = e.add_subparsers(dest="what", required=True)
    ep = esub.add_parser("points")
    ep.add_argument("a")
    ep.add_argument("b")
    ep.add_argument("--voxel", type=float)
    ep.set_defaults(func=cmd_eval_points)
    ei = esub.add_parser("images")
    ei.add_argument("dir_a")
    ei.add_argument("dir_b")
    ei.set_defaults(func=cmd_eval_images)

    s = sub.add_parser("stats", help="size-bucketed normalised gradient table")
    s.add_argument("scenedir")
    s.add_argument("-c", "--config")
    s.add_argument("--window", type=int, default=300)
    s.add_argument("--warmup", type=int, default=0)
    s.set_defaults(func=cmd_stats)

    g = sub.add_parser("grad-demo", help="1D wide-Gaussian gradient analysis")
    g.add_argument("--T", type=float, nargs="+", default=[1.0])
    g.add_argument("--sweep")
    g.set_defaults(func=cmd_grad_demo)

    sy = sub.add_parser("synth", help="write a synthetic scene bundle")
    sy.add_argument("kind")
    sy.add_argument("-o", "--output", required=True)
    sy.add_argument("--floaters", type=float, default=0.0)
    sy.add_argument("--noise", type=float, default=0.0)
    sy.add_argument("--inflate", type=float, default=1.0)
    sy.add_argument("--views", type=int, default=6)
    sy.add_argument("--size", type=int, default=64, help="image width and height")
    sy.add_argument("-n", type=int, help="initial Gaussian count including floaters")
    sy.set_defaults(func=cmd_synth)
    return p


def cli_main(argv: Optional[List[str]] = None) -> int:
    from .georeg import NumericalAbort

    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    if a.threads and a.threads > 0:
        import numba

        numba.set_num_threads(min(a.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return a.func(a)
    except NumericalAbort as exc:
        where = f" (state dumped to {exc.dump_path})" if exc.dump_path else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
