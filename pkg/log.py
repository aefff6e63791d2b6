"""
Logging setup.

Status lines look like the rest of the project's console output:

    [14:02:11] 📐 lower hull: 101 samples → 37 pieces
"""

import logging

ROOT = "convexreg"
FORMAT = "[%(asctime)s] %(message)s"
DATEFMT = "%H:%M:%S"


def get_logger(name: str) -> logging.Logger:
    """Logger under the convexreg namespace (e.g. convexreg.geometry)."""
    short = name.rsplit(".", 1)[-1]
    return logging.getLogger(f"{ROOT}.{short}")


def setup(verbose: bool = False) -> logging.Logger:
    """Install a single console handler on the convexreg root logger."""
    root = logging.getLogger(ROOT)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(getattr(h, "_convexreg", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(FORMAT, datefmt=DATEFMT))
        handler._convexreg = True
        root.addHandler(handler)
    root.propagate = False
    return root
