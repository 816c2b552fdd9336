"""
Device listing command.
"""

import argparse
import logging

from core.config import get_config
from services.model_zoo import build_registry, export_registry, registry_rows

logger = logging.getLogger(__name__)


def cmd_list(args: argparse.Namespace) -> int:
    """Print one row per synthetic device: id, model name, conditioning value, parameter count."""
    cond_points = args.cond_points if args.cond_points is not None else get_config().render.cond_points
    registry = build_registry(args.models_dir, cond_points)
    print(f"{'id':>5}  {'model':<32} {'cond':>6}  {'params':>8}")
    for row in registry_rows(registry):
        cond = "-" if row.conditioning_value is None else f"{row.conditioning_value:g}"
        print(f"{row.device_id:>5}  {row.model_name:<32} {cond:>6}  {row.param_count:>8}")
    for path, reason in registry.failures:
        print(f"skipped {path}: {reason}")
    if args.export:
        export_registry(registry, args.export)
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("list", help="List the synthetic devices of a capture directory")
    parser.add_argument("models_dir", help="Directory of capture JSON files")
    parser.add_argument("--cond-points", type=int, default=None, help="Conditioning values per conditioned capture")
    parser.add_argument("--export", default=None, help="Also write the registry manifest to this JSON path")
    parser.set_defaults(func=cmd_list)
