"""Command-line interface: run episodes, bench policy matrices, dump renders
and voxel fields, and calibrate the uncertainty threshold."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import SplatPlanError
from .geometry import CameraIntrinsics, look_at_or_fallback
from .harness import ALL_POLICIES, PolicyConfig, bench, calibrate_pristine_threshold, run_episode
from .images import save_float_map, save_heatmap_png, save_png, save_ppm
from .reasoner import ServiceConfig
from .render import RenderConfig, render
from .scenes import DEFAULT_SCENES, scene_config_by_name
from .simworld import NoiseConfig, SimWorld
from .uncertainty import entropy_map
from .voxel import build_field, sample_sphere, scatter_and_fill, save_field, sphere_positions


def _fail(kind: str, message: str, code: int = 1) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _policy_config(args) -> PolicyConfig:
    llm = None
    if args.backend == "llm":
        if args.no_network:
            raise ValueError("--no-network forbids the llm backend")
        if not args.llm_endpoint:
            raise ValueError("--llm-endpoint is required with --backend llm")
        llm = ServiceConfig(
            endpoint=args.llm_endpoint,
            model=args.llm_model,
            api_key_env=args.llm_key_env,
            timeout_s=args.llm_timeout,
        )
    backend = "rule" if args.no_network else args.backend
    return PolicyConfig(
        policy=args.policy,
        view_budget=args.budget,
        seed=args.seed,
        reasoner_backend=backend,
        llm=llm,
        xi_t=_load_xi(args.xi_t_file) if getattr(args, "xi_t_file", None) else None,
        noise_enabled=not args.no_noise,
    )


def _load_xi(path) -> float:
    with open(path) as f:
        return float(json.load(f)["xi_t"])


def cmd_run(args) -> int:
    cfg = _policy_config(args)
    out_dir = Path(args.output)
    log = run_episode(args.scene, cfg, out_dir=out_dir)
    print(json.dumps(log.summary(), indent=2))
    return 0 if log.status == "ok" else _fail("EpisodeFailed", log.error)


def cmd_bench(args) -> int:
    scenes = args.scenes.split(",")
    policies = args.policies.split(",")
    for p in policies:
        if p not in ALL_POLICIES:
            raise ValueError(f"unknown policy {p!r}")
    seeds = list(range(args.seed, args.seed + args.episodes))
    rows, table = bench(
        scenes, policies, seeds, out_dir=args.output, jobs=args.jobs,
        view_budget=args.budget, noise_enabled=not args.no_noise,
    )
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"bench complete: {len(rows)} episodes, {len(failed)} failed -> {args.output}")
    for (scene, policy), cell in table.items():
        if cell:
            print(f"  {scene:10s} {policy:18s} fscore={cell['fscore']:.4f} acr={cell['acr_percent']:.2f}%")
    return 0 if not failed else _fail("BenchEpisodesFailed", f"{len(failed)} episodes failed")


def _load_world(args) -> SimWorld:
    world_dir = Path(args.world) if getattr(args, "world", None) else None
    if world_dir and (world_dir / "world.json").exists():
        return SimWorld.load(world_dir)
    scene = scene_config_by_name(args.scene)
    scene.seed = args.seed
    return SimWorld.from_scene(scene, noise=NoiseConfig(enabled=not args.no_noise))


def cmd_render(args) -> int:
    world = _load_world(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    intr = CameraIntrinsics.square(args.size, args.fov)
    radius = 2.5 * world.truth.bbox_half_diagonal
    positions = sphere_positions(world.truth.centroid, radius, args.views, world.support_height)
    for i, pos in enumerate(positions):
        pose = look_at_or_fallback(pos, world.truth.centroid)
        rv = render(world.current, pose, intr, RenderConfig())
        save_png(out / f"view_{i:02d}.png", rv.color)
        save_ppm(out / f"view_{i:02d}.ppm", rv.color)
        save_float_map(out / f"view_{i:02d}_depth.f32", rv.depth)
        ent = entropy_map(rv)
        save_heatmap_png(out / f"view_{i:02d}_entropy.png", ent)
        save_float_map(out / f"view_{i:02d}_entropy.f32", ent)
    print(f"wrote {args.views} views to {out}")
    return 0


def cmd_inspect(args) -> int:
    world = _load_world(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    truth = world.truth
    intr = CameraIntrinsics.square(args.size, args.fov)
    radius = 2.5 * truth.bbox_half_diagonal
    extent = float(max(truth.bbox_max - truth.bbox_min))
    xi_t = calibrate_pristine_threshold(world, intr)
    field = build_field(truth, cell_size=extent / 16.0, margin=radius + extent,
                        support_height=world.support_height)
    samples = sample_sphere(world.current, truth, radius, 12, intr, xi_t,
                            support_height=world.support_height)
    field = scatter_and_fill(field, samples)
    save_field(field, out / "field.json", out / "field.npz")
    with open(out / "samples.json", "w") as f:
        json.dump(
            [{"position": s.position.tolist(), "omega": s.omega} for s in samples],
            f, indent=2,
        )
    print(f"wrote voxel field ({field.dims}) and {len(samples)} samples to {out}")
    return 0


def cmd_calibrate(args) -> int:
    world = _load_world(args)
    intr = CameraIntrinsics.square(args.size, args.fov)
    xi_t = calibrate_pristine_threshold(world, intr, count=args.views, quantile=args.quantile)
    payload = {"xi_t": xi_t, "quantile": args.quantile, "scene": args.scene, "views": args.views}
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(payload, f, indent=2)
    print(json.dumps(payload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatplan",
        description="Active splat-reconstruction planning: episodes, benchmarks, inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scene=True):
        if scene:
            p.add_argument("--scene", default="mug",
                           help="scene name (box|mug|figurine) or config file (.json/.toml)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-noise", action="store_true", help="disable actuation noise")
        p.add_argument("--no-network", action="store_true",
                       help="guarantee zero network use (forces the rule-based reasoner)")

    p_run = sub.add_parser("run", help="run one episode")
    common(p_run)
    p_run.add_argument("--policy", default="air", choices=ALL_POLICIES)
    p_run.add_argument("--budget", type=int, default=20)
    p_run.add_argument("--output", default="runs/episode")
    p_run.add_argument("--xi-t-file", default=None, help="threshold file from `calibrate`")
    p_run.add_argument("--backend", default="rule", choices=("rule", "llm"))
    p_run.add_argument("--llm-endpoint", default=None)
    p_run.add_argument("--llm-model", default="gpt-4o")
    p_run.add_argument("--llm-key-env", default="SPLATPLAN_LLM_KEY")
    p_run.add_argument("--llm-timeout", type=float, default=30.0)
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="policy x scene comparison matrix")
    common(p_bench, scene=False)
    p_bench.add_argument("--scenes", default="box,mug,figurine")
    p_bench.add_argument("--policies", default="air,uncertainty_greedy,uniform,random")
    p_bench.add_argument("--episodes", type=int, default=10, help="seeds per cell")
    p_bench.add_argument("--budget", type=int, default=20)
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.add_argument("--output", default="runs/bench")
    p_bench.set_defaults(func=cmd_bench, backend="rule", llm_endpoint=None)

    p_render = sub.add_parser("render", help="dump views and heatmaps for a world state")
    common(p_render)
    p_render.add_argument("--world", default=None, help="saved world directory")
    p_render.add_argument("--views", type=int, default=6)
    p_render.add_argument("--size", type=int, default=128)
    p_render.add_argument("--fov", type=float, default=45.0)
    p_render.add_argument("--output", default="runs/render")
    p_render.set_defaults(func=cmd_render)

    p_inspect = sub.add_parser("inspect", help="dump the voxel field and score data")
    common(p_inspect)
    p_inspect.add_argument("--world", default=None)
    p_inspect.add_argument("--size", type=int, default=48)
    p_inspect.add_argument("--fov", type=float, default=45.0)
    p_inspect.add_argument("--output", default="runs/inspect")
    p_inspect.set_defaults(func=cmd_inspect)

    p_cal = sub.add_parser("calibrate", help="calibrate the entropy threshold on a pristine scene")
    common(p_cal)
    p_cal.add_argument("--views", type=int, default=12)
    p_cal.add_argument("--size", type=int, default=48)
    p_cal.add_argument("--fov", type=float, default=45.0)
    p_cal.add_argument("--quantile", type=float, default=0.99)
    p_cal.add_argument("--output", default="runs/xi_t.json")
    p_cal.set_defaults(func=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SplatPlanError as exc:
        return _fail(type(exc).__name__, str(exc))
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
