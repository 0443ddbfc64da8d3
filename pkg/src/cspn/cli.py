"""Command-line front end: ``cspn <command> [flags]``.

Every command is deterministic for fixed inputs and flags. Failures exit
with status 1 (2 for bad flags) and a one-line message on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import parallel
from .affinity import Mode, guided_affinity, normalize
from .autodiff import GUIDE_THETA_BETA, LearnConfig, gradcheck, train_toy, write_history_csv
from .bench import OPERATORS, parse_size, run_bench, write_bench_csv
from .disparity import (CostVolume, depth_metrics, flatten_metrics, soft_argmin, stereo_metrics,
                        write_metrics_csv)
from .formats import (make_scene, read_affinity, read_pfm, read_pgm, read_samples_csv, read_stack,
                      sample_sparse, write_affinity, write_pfm, write_pgm, write_samples_csv)
from .grid import BinaryMask, FeatureGrid
from .propagate import PropagationConfig, complete_depth, run, smooth_fill
from .pyramid import PyramidSpec, build_pyramid_fused, pyramid_branches

log = logging.getLogger("cspn")

MODES = [m.value for m in Mode]


class _Parser(argparse.ArgumentParser):
    """Flag errors as one line on stderr, exit status 2."""

    def error(self, message):
        self.exit(2, f"{self.prog}: {message}\n")


def _read_map(path) -> FeatureGrid:
    return read_pgm(path) if str(path).lower().endswith(".pgm") else read_pfm(path)


def _csv_list(text: str, conv=int) -> list:
    return [conv(t) for t in text.split(",") if t.strip()]


def _add_affinity_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--guide", help="guide image (PGM) for RBF affinities")
    src.add_argument("--affinity", help="directory holding a raw affinity plane stack")
    p.add_argument("--k", type=int, default=3, help="kernel size (odd)")
    p.add_argument("--iters", type=int, default=24)
    p.add_argument("--mode", choices=MODES, default=Mode.ABS_SUM_ANCHOR.value)
    p.add_argument("--theta-alpha", type=float, default=20.0)
    p.add_argument("--theta-beta", type=float, default=GUIDE_THETA_BETA,
                   help="intensity bandwidth on the [0, 1] guide scale")
    p.add_argument("--theta-gamma", type=float, default=3.0)
    p.add_argument("--w1", type=float, default=1.0)
    p.add_argument("--w2", type=float, default=0.0)


def _load_affinity(args, shape):
    if args.affinity:
        field = read_affinity(args.affinity)
    else:
        field = guided_affinity(read_pgm(args.guide), args.k, theta_beta=args.theta_beta,
                                theta_gamma=args.theta_gamma, w1=args.w1, w2=args.w2,
                                theta_alpha=args.theta_alpha)
    if (field.height, field.width) != tuple(shape[:2]):
        raise ValueError(f"affinity is {field.height}x{field.width} but the map is {shape[0]}x{shape[1]}")
    return field


def _cfg(args) -> PropagationConfig:
    return PropagationConfig(args.iters, Mode(args.mode), args.k, args.workers)


def cmd_make_scene(args) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(args.height, args.width, args.regions, args.seed)
    samples = sample_sparse(scene.depth_gt, args.samples, args.seed)
    write_pgm(scene.guide, out / "guide.pgm")
    write_pfm(scene.depth_gt, out / "depth_gt.pfm")
    write_samples_csv(samples, out / "samples.csv")
    write_pfm(smooth_fill(samples), out / "init.pfm")


def cmd_propagate(args) -> None:
    h0 = read_pfm(args.input)
    field = _load_affinity(args, h0.shape)
    write_pfm(run(h0, normalize(field, args.mode), _cfg(args)), args.out)


def cmd_complete(args) -> None:
    depth = read_pfm(args.depth)
    samples = read_samples_csv(args.samples, depth.shape[:2])
    field = _load_affinity(args, depth.shape)
    out = complete_depth(depth, samples, normalize(field, args.mode), _cfg(args))
    write_pfm(out, args.out)


def cmd_pool(args) -> None:
    grid = read_pfm(args.input)
    spec = PyramidSpec(args.pyramid, sizes=[parse_size(s) for s in args.sizes.split(",")],
                       rates=_csv_list(args.rates), kernel_size=args.k)
    weights = None
    if args.pyramid == "cspp":
        if not args.weights:
            raise ValueError("--pyramid cspp needs --weights")
        weights = _read_map(args.weights)
    elif args.pyramid == "acspp" and args.guide:
        g = read_pgm(args.guide)
        weights = [guided_affinity(g, args.k, theta_beta=args.theta_beta, w2=0.0) for _ in spec.rates]
    if args.level is None:
        out = build_pyramid_fused(grid, spec, weights, workers=args.workers)
    else:
        branches = pyramid_branches(grid, spec, weights, args.workers)
        if not 0 <= args.level < len(branches):
            raise ValueError(f"--level must be in 0..{len(branches) - 1}")
        out = branches[args.level]
    write_pfm(out, args.out)


def cmd_regress(args) -> None:
    planes, _, _ = read_stack(args.costs)
    write_pfm(soft_argmin(CostVolume(planes)), args.out)


def cmd_metrics(args) -> None:
    pred, gt = read_pfm(args.pred), read_pfm(args.gt)
    valid = None
    if args.mask:
        valid = BinaryMask(read_pgm(args.mask).values[:, :, 0] > 0)
    else:
        valid = BinaryMask(gt.values[:, :, 0] > 0)
    metrics = depth_metrics(pred, gt, valid) if args.kind == "depth" else stereo_metrics(pred, gt, valid)
    if args.out:
        write_metrics_csv(metrics, args.out)
    else:
        sys.stdout.write("name,value\n")
        for name, v in flatten_metrics(metrics):
            sys.stdout.write(f"{name},{v:.17g}\n")


def cmd_gradcheck(args) -> int:
    rep = gradcheck((args.height, args.width), args.k, args.iters, args.mode, args.seed, args.eps)
    text = "\n".join(["name,value"] + rep.lines()) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    if rep.max_rel > args.tol:
        sys.stderr.write(f"gradcheck: max relative error {rep.max_rel:.3e} exceeds {args.tol:g}\n")
        return 1
    return 0


def cmd_train_toy(args) -> None:
    scene = make_scene(args.height, args.width, args.regions, args.seed)
    samples = sample_sparse(scene.depth_gt, args.samples, args.seed)
    cfg = LearnConfig(step_size=args.step_size, steps=args.steps, loss=args.loss, mode=args.mode, seed=args.seed)
    prop = PropagationConfig(args.iters, Mode(args.mode), args.k, args.workers)
    field, history = train_toy(scene, samples, cfg, prop)
    write_history_csv(history, args.history)
    if args.affinity_out:
        write_affinity(field, args.affinity_out)
    log.info("loss %.6g -> %.6g over %d steps", history[0], history[-1], len(history) - 1)


def cmd_bench(args) -> None:
    sizes = [parse_size(s) for s in args.sizes.split(",")]
    ops = args.operators.split(",")
    for op in ops:
        if op not in OPERATORS:
            raise ValueError(f"unknown operator {op!r}; choose from {','.join(OPERATORS)}")

    def progress(r):
        log.info("%s %dx%d k=%d iters=%d workers=%d: %.4fs", r.operator, r.width, r.height,
                 r.kernel_size, r.iterations, r.workers, r.wall_time)

    records = run_bench(sizes, _csv_list(args.kernels), _csv_list(args.iters), _csv_list(args.workers_list),
                        ops, args.repeats, args.depth, args.seed, progress)
    write_bench_csv(records, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cspn", description=__doc__.splitlines()[0])
    parser.add_argument("--workers", type=int, default=None,
                        help=f"worker threads (default: ${parallel.WORKERS_ENV} or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-scene", help="write a synthetic guide/depth/samples set")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("propagate", help="run N propagation steps on a map")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_affinity_flags(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("complete", help="depth completion that keeps sparse samples")
    p.add_argument("--depth", required=True, help="initial dense depth (PFM)")
    p.add_argument("--samples", required=True, help="row,col,value CSV")
    p.add_argument("--out", required=True)
    _add_affinity_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("pool", help="pyramid pooling variants")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pyramid", choices=["spp", "cspp", "aspp", "acspp"], default="spp")
    p.add_argument("--sizes", default="64x64,32x32,16x16,8x8", help="pooled sizes as WIDTHxHEIGHT")
    p.add_argument("--rates", default="6,12,18,24")
    p.add_argument("--weights", help="weight map (PFM or PGM) for cspp")
    p.add_argument("--guide", help="guide (PGM) for acspp affinities")
    p.add_argument("--theta-beta", type=float, default=GUIDE_THETA_BETA)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--level", type=int, default=None, help="write one upsampled level instead of the fused map")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("regress", help="soft-argmin over a cost volume plane stack")
    p.add_argument("--costs", required=True, help="directory with planes.txt and one PFM per disparity")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("metrics", help="depth or stereo error metrics as name,value CSV")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--kind", choices=["depth", "stereo"], default="depth")
    p.add_argument("--mask", help="PGM; nonzero pixels are evaluated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="analytic vs central-difference gradients")
    p.add_argument("--height", type=int, default=5)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--mode", choices=MODES, default=Mode.ABS_SUM_ANCHOR.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="learn per-pixel affinities on a synthetic scene")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--step-size", type=float, default=1000.0)
    p.add_argument("--loss", choices=["L1", "L2"], default="L1")
    p.add_argument("--mode", choices=MODES, default=Mode.POSITIVE_NO_CENTER.value)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--iters", type=int, default=24)
    p.add_argument("--history", required=True, help="step,loss CSV")
    p.add_argument("--affinity-out", help="directory for the learned affinity planes")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("bench", help="time operators over sizes and worker counts")
    p.add_argument("--sizes", default="320x240,640x480,1024x768")
    p.add_argument("--kernels", default="3")
    p.add_argument("--iters", default="4")
    p.add_argument("--workers", dest="workers_list", default="1,2,4,8", help="comma-separated worker counts")
    p.add_argument("--operators", default=",".join(OPERATORS))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--depth", type=int, default=4, help="volume depth for cspn3d_step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.workers is None:
            args.workers = parallel.default_workers()
        rc = args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"cspn {args.command}: {msg}\n")
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
