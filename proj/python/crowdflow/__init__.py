"""Attentive crowd flow prediction: C++ core exposed through pybind11."""

import os
import shutil
import subprocess

try:
    from ._crowdflow import *  # noqa: F401,F403
    from ._crowdflow import __doc__  # noqa: F401
except ImportError:
    from _crowdflow import *  # noqa: F401,F403
    from _crowdflow import __doc__  # noqa: F401


def cli_path():
    """Location of the command-line tool, or None."""
    env = os.environ.get("CROWDFLOW_CLI")
    if env:
        return env
    bundled = os.path.join(os.path.dirname(__file__), "bin", "crowdflow")
    if os.path.exists(bundled):
        return bundled
    return shutil.which("crowdflow")


def run_cli(*args, check=False):
    """Runs the command-line tool and returns the CompletedProcess."""
    exe = cli_path()
    if exe is None:
        raise FileNotFoundError("crowdflow executable not found")
    return subprocess.run([exe, *map(str, args)], capture_output=True, text=True, check=check)
