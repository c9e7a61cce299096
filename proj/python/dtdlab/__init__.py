"""Distributed TD(lambda) policy evaluation: simulator, exact fixed point and bound evaluators."""

from ._core import *  # noqa: F401,F403
from ._core import Error, InvariantError, __doc__  # noqa: F401

import json as _json
import os as _os


def run_config(path):
    """Run an experiment from a JSON config file; relative paths resolve against its directory."""
    with open(path) as f:
        text = f.read()
    return run_experiment(text, _os.path.dirname(_os.path.abspath(path)))  # noqa: F405


def run_dict(config, base_dir="."):
    """Run an experiment from a config given as a dict."""
    return run_experiment(_json.dumps(config), base_dir)  # noqa: F405
