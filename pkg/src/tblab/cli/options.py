"""Shared command-line options and their mapping onto :class:`RunConfig`."""

import argparse
from pathlib import Path
from typing import Any

from tblab.core.config import RunConfig, load_config
from tblab.editing.config import EDITOR_PRESETS


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """``--config`` and the path flags every command accepts."""
    parser.add_argument("--config", type=Path, help="TOML config file (format tb-cfg-1)")
    parser.add_argument("--corpus", type=Path, help="corpus JSON Lines file")
    parser.add_argument("--checkpoint", type=Path, help="base-model checkpoint")
    parser.add_argument("--output-dir", type=Path, help="root of the run directories")
    parser.add_argument("--seed", type=int, help="selection and sampling seed")


def add_editor_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--editor", choices=sorted(EDITOR_PRESETS), help="editor preset")
    parser.add_argument(
        "--lambdas",
        type=float,
        nargs=3,
        metavar=("EDIT", "LOC", "MLOC"),
        help="loss weights; override the preset's",
    )
    parser.add_argument("--target-params", help='"D", "V", "DV" or comma-separated tensor names')
    parser.add_argument(
        "--loss-combination",
        help="comma-separated subset of RI,NI,CI for the multimodal locality loss (empty for none)",
    )
    parser.add_argument("--max-steps", type=int, help="optimisation steps per edit")
    parser.add_argument("--learning-rate", type=float, help="editor step size")


def add_attribution_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma", type=float, help="Distance-score acceptance threshold")
    parser.add_argument("--top-k", type=int, help="attention sources per accepted token")
    parser.add_argument("--keep-mode", choices=["layer", "union"], help="key tokens kept when masking")
    parser.add_argument("--stride", type=int, help="layers added per masking-sweep row")


def _put(tree: dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    for key in parents:
        tree = tree.setdefault(key, {})
    tree[leaf] = value


# argparse dest -> config key
_FLAG_KEYS = {
    "corpus": "paths.corpus",
    "checkpoint": "paths.checkpoint",
    "output_dir": "paths.output_dir",
    "seed": "selection.seed",
    "edits": "selection.n_edits",
    "jobs": "selection.jobs",
    "diagnostics": "selection.diagnostics",
    "full": "report.full",
    "consistency": "report.consistency",
    "records": "world.n_records",
    "max_steps": "editor.max_steps",
    "learning_rate": "editor.learning_rate",
    "gamma": "attribution.gamma",
    "top_k": "attribution.top_k",
    "keep_mode": "attribution.keep_mode",
    "stride": "attribution.sweep_stride",
}


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """
    Nested config overrides for every flag that was given.

    Examples
    --------
    >>> overrides_from_args(argparse.Namespace(seed=3, jobs=None))
    {'selection': {'seed': 3}}
    """
    overrides: dict[str, Any] = {}
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            _put(overrides, key, value)
    editor = getattr(args, "editor", None)
    if editor is not None:
        _put(overrides, "editor.name", editor)
        _put(overrides, "editor.lambdas", list(EDITOR_PRESETS[editor]["lambdas"]))
    if getattr(args, "lambdas", None) is not None:
        _put(overrides, "editor.lambdas", list(args.lambdas))
    targets = getattr(args, "target_params", None)
    if targets is not None:
        names = [t.strip() for t in targets.split(",") if t.strip()]
        _put(overrides, "editor.target_params", names[0] if len(names) == 1 else names)
    combination = getattr(args, "loss_combination", None)
    if combination is not None:
        _put(
            overrides,
            "editor.loss_combination",
            [t.strip().upper() for t in combination.split(",") if t.strip()],
        )
    return overrides


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Load ``--config`` (if any) and apply the flags on top."""
    return load_config(getattr(args, "config", None), overrides_from_args(args))
