"""
Finite-difference verification of every analytic gradient.
"""

import argparse
import json
import logging
from pathlib import Path

from core.errors import UsageError
from services.autodiff import CHECK_KINDS, TOLERANCES, grad_check

logger = logging.getLogger(__name__)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """Exit 0 only if every checked kind stays below its tolerance on every seed."""
    if args.seeds < 1:
        raise UsageError(f"--seeds must be positive, got {args.seeds}")
    kinds = CHECK_KINDS if args.kind == "all" else (args.kind,)
    results = {}
    failed = False
    for kind in kinds:
        worst = max(grad_check(kind, seed, args.eps) for seed in range(args.seed, args.seed + args.seeds))
        ok = worst < TOLERANCES[kind]
        failed = failed or not ok
        results[kind] = {"worst_relative_error": worst, "tolerance": TOLERANCES[kind], "ok": ok}
        print(f"{kind:>9}: worst relative error {worst:.3e} (tolerance {TOLERANCES[kind]:.0e}) {'ok' if ok else 'FAIL'}")
    if args.out:
        target = Path(args.out)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w") as f:
            json.dump(results, f, indent=2)
            f.write("\n")
    return 1 if failed else 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("gradcheck", help="Compare analytic gradients with central differences")
    parser.add_argument("--kind", choices=("all",) + CHECK_KINDS, default="all")
    parser.add_argument("--seeds", type=int, default=20, help="Random instances per kind")
    parser.add_argument("--seed", type=int, default=0, help="First seed")
    parser.add_argument("--eps", type=float, default=1e-6)
    parser.add_argument("--out", default=None, help="Write results as JSON")
    parser.set_defaults(func=cmd_gradcheck)
