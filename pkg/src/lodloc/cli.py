"""``lodloc`` command line: instancing, rendering, localization, bundles and benchmarks.

Every solver hyperparameter is a flag whose default is the standard
configuration, so ``lodloc localize`` with no tuning flags runs the full
pipeline. A JSON file passed with ``--config`` supplies defaults for any flag;
explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .camera import Intrinsics, Pose4
from .cost import merge_to_semantic
from .evaluation import summarize, to_csv, to_text
from .kernels import PreparedScene, default_threads
from .lod_model import CapacityError, ObjParseError, instancify, load_instanced, parse_obj, write_instanced_model
from .masks import MaskSet
from .raster import render_instance_map
from .solver import ConfigError, Evaluator, RefineConfig, SearchSpace, localize
from .synth import Corruption, PriorOffset, QuerySpec, SceneSpec, TrajectorySpec, generate_benchmark, load_bundle

log = logging.getLogger("lodloc")

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_DEGENERATE = 0, 2, 3, 4

VARIANTS = ("full", "no-select", "no-refine", "semantic", "merged")


class InputError(Exception):
    """Unreadable or malformed input file."""


@dataclass(frozen=True)
class RunConfig:
    variant: str
    cost_kind: str
    space: SearchSpace
    refine: RefineConfig
    threads: int
    budget: int

    @classmethod
    def from_args(cls, a, prior: Pose4 | None = None, seed: int | None = None) -> "RunConfig":
        if a.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {a.variant!r}")
        cost = a.cost
        if a.variant == "semantic":
            cost = "semantic"
        elif a.variant == "merged" and cost == "semantic":
            raise ConfigError("the merged variant needs an instance cost (confidence or area)")
        space = SearchSpace(prior or Pose4(0, 0, 0, 0), a.range_xy_m, a.range_z_m, a.range_yaw_deg,
                            a.grid_step_m, a.grid_step_m, a.grid_step_yaw_deg)
        refine = RefineConfig(a.iters, a.beams, a.candidates, a.sigma_m, a.yaw_perturb_deg, a.gamma,
                              rng_seed=a.seed if seed is None else seed)
        return cls(a.variant, cost, space, refine, a.threads, a.budget)


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("render size must be positive")
    return w, h


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: line {e.lineno}: {e.msg}") from None


def _load_model(path):
    try:
        return load_instanced(path)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except ObjParseError as e:
        raise InputError(f"{path}: {e}") from None


def _add_solver_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("solver")
    g.add_argument("--cost", choices=("confidence", "area", "semantic"), default="confidence")
    g.add_argument("--variant", choices=VARIANTS, default="full")
    g.add_argument("--grid-step-m", type=float, default=10.0)
    g.add_argument("--grid-step-yaw-deg", type=float, default=5.0)
    g.add_argument("--range-xy-m", type=float, default=30.0)
    g.add_argument("--range-z-m", type=float, default=10.0)
    g.add_argument("--range-yaw-deg", type=float, default=15.0)
    g.add_argument("--iters", type=int, default=40)
    g.add_argument("--beams", type=int, default=2)
    g.add_argument("--candidates", type=int, default=52)
    g.add_argument("--sigma-m", type=float, default=1.5)
    g.add_argument("--yaw-perturb-deg", type=float, default=2.0)
    g.add_argument("--gamma", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None, help="worker threads (default: $LODLOC_THREADS or all cores)")
    g.add_argument("--budget", type=int, default=50_000, help="maximum coarse grid size")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lodloc", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON file of flag defaults (keys use underscores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("instancify", help="split an OBJ into per-building instances")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.obj and PREFIX.instances")
    p.add_argument("--weld-tolerance", type=float, default=1e-6)

    p = sub.add_parser("render", help="render an instance map to PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--pose", required=True, help="JSON pose file")
    p.add_argument("--intrinsics", help="JSON intrinsics file (default: --render-size at --hfov-deg)")
    p.add_argument("--render-size", type=_size, default=(640, 360))
    p.add_argument("--hfov-deg", type=float, default=45.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("localize", help="localize one query")
    p.add_argument("--model", help="instanced model (default: the bundle's)")
    p.add_argument("--bundle", help="benchmark bundle directory")
    p.add_argument("--query", help="query name inside the bundle, e.g. q0003")
    p.add_argument("--masks", help="mask set file (instead of --bundle/--query)")
    p.add_argument("--prior", help="prior pose file (instead of --bundle/--query)")
    p.add_argument("--intrinsics", help="intrinsics file (instead of --bundle/--query)")
    p.add_argument("--out", help="write the result record here (default: stdout)")
    _add_solver_flags(p)

    p = sub.add_parser("bench", help="run every bundle query, one CSV row per variant/cost pair")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", help="override the bundle's model")
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--pair", action="append", metavar="VARIANT:COST",
                   help="variant/cost pair to run; repeatable (default: --variant with --cost)")
    p.add_argument("--no-timing", action="store_true", help="leave mean_ms empty so reruns are byte-identical")
    p.add_argument("--method", default="lodloc")
    _add_solver_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic benchmark bundle")
    p.add_argument("--scene", help="JSON scene spec")
    p.add_argument("--queries", help="JSON query spec: corruption, prior_offset, trajectory, hfov_deg")
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--render-size", type=_size, default=(640, 360))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = _read_json(args.config)
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    if getattr(args, "threads", 0) is None:
        args.threads = default_threads()
    return args


# --------------------------------------------------------------------------
# commands


def cmd_instancify(a) -> int:
    try:
        text = Path(a.input).read_text()
    except FileNotFoundError:
        raise InputError(f"{a.input}: no such file") from None
    try:
        model = instancify(parse_obj(text), a.weld_tolerance)
    except ObjParseError as e:
        raise InputError(f"{a.input}: {e}") from None
    obj, manifest = write_instanced_model(model)
    Path(a.out + ".obj").write_text(obj)
    Path(a.out + ".instances").write_text(manifest)
    print(f"{len(model.instance_ids)} instances")
    return EXIT_OK


def cmd_render(a) -> int:
    model = _load_model(a.model)
    pose = Pose4.from_dict(_read_json(a.pose))
    if a.intrinsics:
        intr = Intrinsics.from_dict(_read_json(a.intrinsics))
    else:
        intr = Intrinsics.from_fov(*a.render_size, a.hfov_deg)
    render_instance_map(model, intr, pose).save_png(a.out)
    return EXIT_OK


def _evaluator(scene, intr, masks: MaskSet, run: RunConfig) -> Evaluator:
    if run.variant == "merged":
        masks = merge_to_semantic(masks)
    return Evaluator.build(scene, intr, masks, run.cost_kind, n_threads=run.threads)


def _run_query(scene, intr, masks, prior, run: RunConfig, volume_out=None):
    ev = _evaluator(scene, intr, masks, run)
    return localize(ev, prior, run.space.recentered(prior), run.refine,
                    select=run.variant != "no-select", do_refine=run.variant != "no-refine",
                    budget=run.budget, volume_out=volume_out)


def cmd_localize(a) -> int:
    if a.bundle:
        if not a.query:
            raise ConfigError("--bundle needs --query")
        bundle = _load_bundle(a.bundle)
        match = [q for q in bundle.queries if q.name == a.query]
        if not match:
            raise ConfigError(f"query {a.query!r} not in bundle")
        q = match[0]
        masks, prior, intr = q.masks, q.prior, q.intrinsics
        model = _load_model(a.model) if a.model else bundle.model
    else:
        if not (a.model and a.masks and a.prior and a.intrinsics):
            raise ConfigError("need --bundle/--query or all of --model, --masks, --prior, --intrinsics")
        model = _load_model(a.model)
        try:
            masks = MaskSet.loads(Path(a.masks).read_text())
        except FileNotFoundError:
            raise InputError(f"{a.masks}: no such file") from None
        except (ValueError, KeyError) as e:
            raise InputError(f"{a.masks}: {e}") from None
        prior = Pose4.from_dict(_read_json(a.prior))
        intr = Intrinsics.from_dict(_read_json(a.intrinsics))
    run = RunConfig.from_args(a, prior)
    res = _run_query(PreparedScene.from_model(model), intr, masks, prior, run)
    text = json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    if res.degenerate:
        log.warning("query has no usable masks; returned the prior")
        return EXIT_DEGENERATE
    return EXIT_OK


def _load_bundle(path):
    try:
        return load_bundle(path)
    except FileNotFoundError as e:
        raise InputError(f"{path}: missing {Path(e.filename).name if e.filename else 'file'}") from None
    except (ObjParseError, json.JSONDecodeError, KeyError) as e:
        raise InputError(f"{path}: {e}") from None


def _pairs(a) -> list[tuple[str, str]]:
    if not a.pair:
        return [(a.variant, "semantic" if a.variant == "semantic" else a.cost)]
    out = []
    for item in a.pair:
        variant, _, cost = item.partition(":")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        cost = cost or ("semantic" if variant == "semantic" else a.cost)
        if cost not in ("confidence", "area", "semantic"):
            raise ConfigError(f"unknown cost {cost!r}")
        out.append((variant, cost))
    return out


def run_bench(bundle, pairs, a, model=None, volumes: dict | None = None):
    """One summary per (variant, cost) pair; queries run in index order.

    If ``volumes`` is a dict, the coarse cost volume of every query is
    appended to ``volumes[(variant, cost)]``.
    """
    scene = PreparedScene.from_model(model or bundle.model)
    summaries = []
    for variant, cost in pairs:
        ns = argparse.Namespace(**{**vars(a), "variant": variant, "cost": cost})
        results = []
        vols = volumes.setdefault((variant, cost), []) if volumes is not None else None
        for i, q in enumerate(bundle.queries):
            run = RunConfig.from_args(ns, q.prior, seed=a.seed * 1_000_003 + i)
            results.append((_run_query(scene, q.intrinsics, q.masks, q.prior, run, vols), q.gt))
            log.info("%s/%s %s done", variant, cost, q.name)
        summaries.append(summarize(results, a.method, variant, run.cost_kind))
    return summaries


def cmd_bench(a) -> int:
    bundle = _load_bundle(a.bundle)
    if not bundle.queries:
        raise ConfigError("bundle has no queries")
    model = _load_model(a.model) if a.model else None
    summaries = run_bench(bundle, _pairs(a), a, model)
    Path(a.out).write_text(to_csv(summaries, with_time=not a.no_timing))
    sys.stdout.write(to_text(summaries))
    return EXIT_OK


def cmd_synth(a) -> int:
    scene = SceneSpec.from_dict(_read_json(a.scene)) if a.scene else SceneSpec()
    q = _read_json(a.queries) if a.queries else {}
    known = {"corruption", "prior_offset", "trajectory", "hfov_deg", "min_area", "min_component_area"}
    if set(q) - known:
        raise ConfigError(f"unknown query spec keys: {', '.join(sorted(set(q) - known))}")
    intr = Intrinsics.from_fov(*a.render_size, q.get("hfov_deg", 45.0))
    template = QuerySpec(Pose4(0, 0, 0, 0), intr, Corruption(**q.get("corruption", {})),
                         PriorOffset(**q.get("prior_offset", {})), min_area=q.get("min_area", 25),
                         min_component_area=q.get("min_component_area", 0))
    traj = TrajectorySpec.from_dict(q.get("trajectory", {}))
    bundle = generate_benchmark(scene, a.n_queries, traj, template, a.out, a.seed)
    print(f"{len(bundle.queries)} queries written to {a.out}")
    return EXIT_OK


COMMANDS = {"instancify": cmd_instancify, "render": cmd_render, "localize": cmd_localize,
            "bench": cmd_bench, "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"lodloc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as e:
        print(f"lodloc: {e}", file=sys.stderr)
        return EXIT_PARSE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as e:
        print(f"lodloc: {e}", file=sys.stderr)
        return EXIT_PARSE
    except KeyError as e:
        print(f"lodloc: missing field {e} in an input record", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, CapacityError, TypeError, ValueError) as e:
        print(f"lodloc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
