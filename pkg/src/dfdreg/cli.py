"""Command line entry point (``dfdreg``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import as_generator, make_phantom, random_phantom, random_phantoms
from .dfd import DfdContext
from .exceptions import DFDError
from .experiments import (
    NOISE_LEVELS,
    ConvergenceConfig,
    reconstruct,
    reconstruct_learned,
    run_convergence_study,
    run_mse_table,
    write_records_csv,
)
from .filters import Filter, NeighbourSpec, verify_filter
from .learned import (
    TrainConfig,
    filter_from_learned,
    load_params,
    save_params,
    train_on_images,
)
from .noise import NoiseKind, noisy
from .radon import RadonGeometry, default_n_offsets, fbp, radon_forward

log = logging.getLogger("dfdreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def _size_for(n_offsets: int) -> int:
    for p in range(3, 16):
        if default_n_offsets(2**p) == n_offsets:
            return 2**p
    raise UsageError(f"cannot infer image size from {n_offsets} offsets; pass --size")


def _geometry(size, sino=None, n_angles=None, n_offsets=None, angle_range="half_turn"):
    if sino is not None:
        return RadonGeometry(
            size or _size_for(sino.n_offsets), sino.n_angles, sino.n_offsets, sino.angle_range
        )
    return RadonGeometry.for_size(size, n_angles, n_offsets, angle_range)


def _load_images(folder):
    paths = sorted(
        p for p in Path(folder).iterdir() if p.suffix.lower() in (".fflt", ".pgm")
    )
    if not paths:
        raise UsageError(f"no .fflt or .pgm images in {folder}")
    return [io.read_image(p) for p in paths]


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(a):
    if a.kind == "random":
        img = random_phantom(a.size, as_generator(a.seed, 0x50))
    else:
        img = make_phantom(a.kind, a.size)
    io.write_image(img, a.out)


def cmd_project(a):
    img = io.read_image(a.image)
    g = _geometry(img.width, None, a.angles, a.offsets, a.angle_range)
    io.write_sinogram(radon_forward(img, g), a.out)


def cmd_noise(a):
    y = io.read_sinogram(a.sinogram)
    io.write_sinogram(noisy(y, a.kind, a.delta, a.seed), a.out)


def cmd_fbp(a):
    y = io.read_sinogram(a.sinogram)
    io.write_image(fbp(y, _geometry(a.size, y)), a.out)


def cmd_train(a):
    if a.images:
        images = _load_images(a.images)
        size = images[0].width
    else:
        size = a.size
        images = random_phantoms(a.n_images, size, seed=a.seed)
    g = RadonGeometry.for_size(size, a.angles, a.offsets)
    ctx = DfdContext.for_geometry(g, a.levels)
    n_val = max(1, len(images) // 5) if len(images) > 1 else 0
    cfg = TrainConfig(
        delta=a.delta,
        noise_kind=a.noise,
        n_train=len(images) - n_val,
        n_val=n_val,
        epochs=a.epochs,
        seed=a.seed,
    )
    res = train_on_images(images, cfg, ctx)
    save_params(res.params, a.out)
    log.info("best epoch %d", res.best_epoch)


def _context_for_params(params, g):
    kap = params.kappas
    return DfdContext.for_geometry(g, len(kap), float(kap.max()))


def cmd_reconstruct(a):
    y = io.read_sinogram(a.sinogram)
    g = _geometry(a.size, y)
    if a.params:
        params = load_params(a.params)
        out = reconstruct_learned(y, params, _context_for_params(params, g))
    else:
        ctx = DfdContext.for_geometry(g, a.levels)
        out = reconstruct(y, Filter.named(a.filter), a.alpha, ctx)
    io.write_image(out, a.out)


def cmd_verify_filter(a):
    if a.params:
        params = load_params(a.params)
        f = filter_from_learned(params)
        kappas = params.kappas
        alphas = _floats(a.alphas) if a.alphas else [params.delta]
    else:
        f = Filter.named(a.filter)
        kappas = _floats(a.kappas)
        alphas = _floats(a.alphas)
    xs = np.linspace(-a.x_max, a.x_max, 2 * a.x_points + 1)
    spec = NeighbourSpec(a.L, a.alpha_tilde, a.q_family)
    report = verify_filter(f, alphas, kappas, xs, spec, c=a.c, K=a.K)
    io.write_json(report, a.report or a.out)


def cmd_mse_table(a):
    size = a.size
    g = RadonGeometry.for_size(size, a.angles, a.offsets)
    ctx = DfdContext.for_geometry(g, a.levels)
    kinds = [k.strip() for k in a.kinds.split(",")]
    deltas = _floats(a.deltas)
    train_imgs = random_phantoms(a.n_train + a.n_val, size, seed=a.seed)
    test_imgs = random_phantoms(a.n_test, size, seed=a.seed + 1)
    params = {}
    for kind in kinds:
        for d in deltas:
            if d == 0:
                continue
            cfg = TrainConfig(
                delta=d, noise_kind=kind, n_train=a.n_train, n_val=a.n_val,
                epochs=a.epochs, seed=a.seed,
            )
            params[(kind, d)] = train_on_images(train_imgs, cfg, ctx).params
    records = run_mse_table(test_imgs, kinds, deltas, params, ctx, seed=a.seed)
    write_records_csv(records, a.out)


def cmd_convergence(a):
    deltas = tuple(2.0 ** -k for k in range(a.levels_delta))
    cfg = ConvergenceConfig(
        deltas=deltas,
        alpha_rule=a.rule,
        c=a.c,
        filter=Filter.named(a.filter),
        trials=a.trials,
        seed=a.seed,
        n=a.n,
    )
    if a.mode == "ct":
        g = RadonGeometry.for_size(a.size)
        ctx = DfdContext.for_geometry(g)
        rec = run_convergence_study(cfg, ctx, make_phantom("shepp_logan", a.size))
    else:
        rec = run_convergence_study(cfg)
    rec.to_csv(a.out)
    if a.summary:
        io.write_json({"slope": rec.slope, "slope_ci": list(rec.slope_ci), **rec.meta}, a.summary)


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=False)
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfdreg", description="Non-linear filtered DFD regularization for CT.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("phantom", help="write a test image")
    p.add_argument("--kind", default="shepp_logan", choices=["shepp_logan", "disks", "checker", "random"])
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", help="forward Radon transform")
    p.add_argument("--image", required=True)
    p.add_argument("--angles", type=int)
    p.add_argument("--offsets", type=int)
    p.add_argument("--angle-range", default="half_turn", choices=["half_turn", "full_turn"])
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("noise", help="add calibrated noise to a sinogram")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--kind", default="gaussian", choices=[k.value for k in NoiseKind])
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("fbp", help="filtered backprojection")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--size", type=int)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("train", help="train a learned filter for one noise level")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--noise", default="gaussian", choices=[k.value for k in NoiseKind])
    p.add_argument("--images", help="folder of training images (.fflt/.pgm)")
    p.add_argument("--n-images", type=int, default=40)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--angles", type=int)
    p.add_argument("--offsets", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--epochs", type=int, default=4000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="filtered DFD reconstruction")
    p.add_argument("--sinogram", required=True)
    p.add_argument("--params", help="learned filter JSON")
    p.add_argument("--filter", default="identity")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--size", type=int)
    p.add_argument("--levels", type=int)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("verify-filter", help="check filter conditions")
    p.add_argument("--filter", default="example_cubic")
    p.add_argument("--params", help="learned filter JSON")
    p.add_argument("--alphas", default="")
    p.add_argument("--kappas", default="0.35355339059327373,0.5,0.7071067811865476,1.0")
    p.add_argument("--x-max", type=float, default=50.0)
    p.add_argument("--x-points", type=int, default=1000)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--alpha-tilde", type=float, default=1.0)
    p.add_argument("--q-family", default="norm_q", choices=["norm_q", "smallest_q"])
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--K", type=float, default=2.0)
    p.add_argument("--report")
    p.set_defaults(func=cmd_verify_filter)

    p = sub.add_parser("mse-table", help="FBP vs learned MSE per noise kind and level")
    p.add_argument("--kinds", default=",".join(k.value for k in NoiseKind))
    p.add_argument("--deltas", default=",".join(str(d) for d in NOISE_LEVELS))
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--angles", type=int)
    p.add_argument("--offsets", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--n-train", type=int, default=24)
    p.add_argument("--n-val", type=int, default=8)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--epochs", type=int, default=4000)
    p.set_defaults(func=cmd_mse_table)

    p = sub.add_parser("convergence", help="convergence-rate study")
    p.add_argument("--mode", default="diagonal", choices=["diagonal", "ct"])
    p.add_argument("--rule", default="proportional", choices=["proportional", "quadratic"])
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--filter", default="example_cubic")
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--levels-delta", type=int, default=9, help="deltas 2^0 ... 2^-(k-1)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--summary", help="optional JSON with the fitted slope")
    p.set_defaults(func=cmd_convergence)

    for p in sub.choices.values():
        _common(p)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config``; command line wins."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg = io.read_json(args.config)
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(k.replace("-", "_") for k in cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if not (args.out or getattr(args, "report", None)):
            raise UsageError(f"{args.command}: --out is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        return 1
    except DFDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (DFDError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
