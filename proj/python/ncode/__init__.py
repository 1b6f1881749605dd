"""Neurally-controlled ODEs: coupled state/weight flows and the augmented adjoint."""

import json

from . import _core
from ._core import (
    BudgetError,
    ConfigError,
    Error,
    InputError,
    MigrationError,
    NumericalError,
    OptimizerError,
    ParameterError,
    ShapeError,
    UnsupportedError,
    fit_vdp,
    gen_annuli,
    latent_flow_encode,
    vdp_observe,
)

__version__ = _core.__version__

TASKS = ("reflection", "annuli", "vdp_fit", "memorize", "latent_flow_ae")


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def default_config(task, variant="ncode"):
    """Full default config of a task as a dict."""
    return json.loads(_core.default_config(task, variant))


def normalize_config(config):
    """Validated config with every omitted field filled in."""
    return json.loads(_core.normalize_config(_text(config)))


def train(config):
    """Train from a config dict or JSON text.

    Returns a dict with metrics rows, final_loss, final_accuracy, params,
    steps and the checkpoint JSON text.
    """
    return _core.train(_text(config))


def grad_check(config):
    """Gradient of the configured engine against central differences."""
    return _core.grad_check(_text(config))


def evaluate_checkpoint(checkpoint):
    """(eval_loss, eval_accuracy) of a checkpoint (JSON text or dict)."""
    return _core.evaluate_checkpoint(_text(checkpoint))


def predict(checkpoint, inputs):
    """Model outputs for a list of input rows."""
    return _core.predict(_text(checkpoint), [list(map(float, r)) for r in inputs])


def cli(*args):
    """Run the command-line tool in-process; returns (exit_code, stdout, stderr)."""
    return _core.cli([str(a) for a in args])


__all__ = [
    "TASKS",
    "BudgetError",
    "ConfigError",
    "Error",
    "InputError",
    "MigrationError",
    "NumericalError",
    "OptimizerError",
    "ParameterError",
    "ShapeError",
    "UnsupportedError",
    "cli",
    "default_config",
    "evaluate_checkpoint",
    "fit_vdp",
    "gen_annuli",
    "grad_check",
    "latent_flow_encode",
    "normalize_config",
    "predict",
    "train",
    "vdp_observe",
]
