"""Reaction-diffusion competition solvers (finite volumes, FI/SI stepping, GMsFEM)."""

import json as _json

from ._rdms import (
    SolveError,
    harmonic_average,
    ode_reference,
    preset,
    reaction,
    structured_grid_faces,
)
from ._rdms import _Problem, _run

__all__ = [
    "Problem",
    "SolveError",
    "harmonic_average",
    "ode_reference",
    "preset",
    "reaction",
    "run",
    "structured_grid_faces",
]


class Problem(_Problem):
    """Grid, subdomains and operators built from a config dict."""

    def __init__(self, config):
        super().__init__(_json.dumps(config))


def run(config):
    """Run a full experiment from a config dict and return a summary dict."""
    return _run(_json.dumps(config))
