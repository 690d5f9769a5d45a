"""Command-line front end: fuse, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 input/format/usage error, 2 numerical error.
Output files are written atomically (temp then rename), so error paths
never leave partial files behind.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import (DimensionError, FormatError, InputError, NumericalError,
                     UsageError)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; this artifact reserves 2 for
    numerical failures, so usage problems are re-raised as exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ivfuse", description="infrared/visible image fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    fuse = sub.add_parser("fuse", help="fuse one aligned pair with a checkpoint")
    fuse.add_argument("--ir", required=True)
    fuse.add_argument("--vis", required=True)
    fuse.add_argument("--out", required=True)
    fuse.add_argument("--ckpt", required=True)
    fuse.add_argument("--config")
    fuse.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="train on a directory of aligned pairs")
    train.add_argument("--data", required=True, help="directory with ir/ and vis/ subdirectories")
    train.add_argument("--out", required=True, help="checkpoint output path")
    train.add_argument("--config")
    train.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("eval", help="nine-metric report for fused results")
    ev.add_argument("--ir", required=True)
    ev.add_argument("--vis", required=True)
    ev.add_argument("--fused", required=True)
    ev.add_argument("--csv", required=True)
    ev.add_argument("--seed", type=int, default=0)

    gc = sub.add_parser("gradcheck", help="finite-difference verification suite")
    gc.add_argument("--op", help="run a single named check")
    gc.add_argument("--list", action="store_true", help="list check names")
    gc.add_argument("--seed", type=int, default=0)

    ab = sub.add_parser("ablate", help="desk-scale ablation sweep")
    ab.add_argument("--config")
    ab.add_argument("--out", required=True, help="CSV output path")
    ab.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_fuse(args) -> int:
    from .autodiff import Tensor
    from .generator import generate, load_generator
    from .imgio import crop_to, load_image, pad_to_multiple, save_image
    from .runconfig import load_run_config

    params = load_generator(args.ckpt)
    if args.config:
        fcfg, _ = load_run_config(args.config)
        if fcfg != params.config:
            raise InputError("--config disagrees with the architecture stored in --ckpt")
    ir = load_image(args.ir)
    vis = load_image(args.vis)
    if ir.shape != vis.shape:
        raise InputError(f"source extents differ: {ir.shape} vs {vis.shape}")
    m = params.config.downsample_multiple
    ir_p, crop = pad_to_multiple(ir, m)
    vis_p, _ = pad_to_multiple(vis, m)
    fused = generate(Tensor(ir_p[None, None].astype(np.float32)),
                     Tensor(vis_p[None, None].astype(np.float32)), params)
    save_image(args.out, crop_to(fused.data[0, 0], crop))
    print(f"wrote {args.out} ({crop[1]}x{crop[0]})")
    return 0


def _cmd_train(args) -> int:
    from .imgio import load_pairs
    from .runconfig import load_run_config
    from .training import TrainConfig, train

    if args.config:
        fcfg, tcfg = load_run_config(args.config)
    else:
        from .generator import FusionConfig
        fcfg, tcfg = FusionConfig(), TrainConfig()
    if args.seed:
        tcfg.seed = args.seed
    pairs = load_pairs(os.path.join(args.data, "ir"), os.path.join(args.data, "vis"))
    dataset = [(ir, vis) for _, ir, vis in pairs]
    _, log = train(dataset, tcfg, fusion_config=fcfg, out_path=args.out)
    from .checkpoint import atomic_write_bytes
    atomic_write_bytes(args.out + ".log.csv", log.to_csv().encode())
    final = log.entries[-1]
    print(f"trained {final.step} steps, final loss {final.loss_total:.6f}; wrote {args.out}")
    return 0


def _iter_triples(args):
    from .imgio import load_image, load_pairs

    if all(os.path.isfile(p) for p in (args.ir, args.vis, args.fused)):
        yield (os.path.splitext(os.path.basename(args.fused))[0],
               load_image(args.ir), load_image(args.vis), load_image(args.fused))
        return
    if not all(os.path.isdir(p) for p in (args.ir, args.vis, args.fused)):
        raise InputError("eval: --ir/--vis/--fused must be all files or all directories")
    for stem, ir, vis in load_pairs(args.ir, args.vis):
        fused_path = None
        for ext in (".pgm", ".png"):
            cand = os.path.join(args.fused, stem + ext)
            if os.path.isfile(cand):
                fused_path = cand
                break
        if fused_path is None:
            raise InputError(f"eval: no fused image for stem {stem!r} in {args.fused}")
        yield stem, ir, vis, load_image(fused_path)


def _cmd_eval(args) -> int:
    from .checkpoint import atomic_write_bytes
    from .metrics import evaluate_all, reports_to_csv

    reports = [evaluate_all(ir, vis, fused, name=stem)
               for stem, ir, vis, fused in _iter_triples(args)]
    atomic_write_bytes(args.csv, reports_to_csv(reports).encode())
    print(f"wrote {args.csv} ({len(reports)} triples)")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import GRADCHECK_SUITE, run_gradcheck

    if args.list:
        for name in GRADCHECK_SUITE:
            print(name)
        return 0
    names = [args.op] if args.op else list(GRADCHECK_SUITE)
    unknown = [n for n in names if n not in GRADCHECK_SUITE]
    if unknown:
        raise InputError(f"unknown gradcheck op(s): {', '.join(unknown)}; "
                         f"use --list to see the suite")
    worst_fail = False
    for name in names:
        err, tol = run_gradcheck(name, seed=args.seed)
        ok = err < tol
        worst_fail |= not ok
        print(f"{name:28s} max_rel_err={err:.3e}  tol={tol:.0e}  {'ok' if ok else 'FAIL'}")
    if worst_fail:
        raise NumericalError("gradient check exceeded tolerance")
    return 0


def _cmd_ablate(args) -> int:
    from .runconfig import load_run_config
    from .training import (ablation_matrix, ablation_run, desk_ablation_defaults)

    base_fusion, base_train = desk_ablation_defaults(seed=args.seed)
    if args.config:
        fcfg, tcfg = load_run_config(args.config)
        base_fusion, base_train = fcfg, tcfg
    rows = ablation_run(ablation_matrix(), base_fusion, base_train, args.out,
                        progress=lambda msg: print(msg, flush=True))
    print(f"wrote {args.out} ({len(rows)} configurations)")
    return 0


_COMMANDS = {"fuse": _cmd_fuse, "train": _cmd_train, "eval": _cmd_eval,
             "gradcheck": _cmd_gradcheck, "ablate": _cmd_ablate}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InputError, FormatError, DimensionError, UsageError, FileNotFoundError,
            NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
