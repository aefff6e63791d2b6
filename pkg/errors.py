"""
Error hierarchy for convexreg.

Every error carries a category and an exit code so the CLI can report a
single machine-readable line:

    error: <category>: <message>

Errors raised inside the fitting procedure also carry the step they came
from (SMOOTHING / GRID / CONVEXIFICATION), set by pipeline.run_procedure.
"""


class ConvexRegError(Exception):
    """Base class for all expected failures."""

    category = "internal"
    exit_code = 1

    def __init__(self, message: str, step: str | None = None):
        super().__init__(message)
        self.step = step

    def cli_line(self) -> str:
        step = f" [{self.step}]" if self.step else ""
        return f"error: {self.category}{step}: {self}"


# ── Usage / input ───────────────────────────────────────────────────────

class UsageError(ConvexRegError):
    category = "usage"
    exit_code = 2


class ParseError(ConvexRegError):
    """CSV / JSON content that cannot be read. Message cites row and column."""

    category = "parse"
    exit_code = 3


class InvalidInputError(ConvexRegError):
    category = "input"
    exit_code = 6


class UnsupportedDimensionError(InvalidInputError):
    pass


# ── Geometry ────────────────────────────────────────────────────────────

class GeometryError(ConvexRegError):
    category = "geometry"
    exit_code = 4


class InvalidDomainError(GeometryError):
    pass


class InvalidGridError(GeometryError):
    pass


class DegenerateGeometryError(GeometryError):
    pass


class OutOfDomainError(GeometryError):
    pass


# ── Smoothing ───────────────────────────────────────────────────────────

class SmoothingError(ConvexRegError):
    category = "smoothing"
    exit_code = 5


class EmptyWindowError(SmoothingError):
    pass


class BandwidthSelectionError(SmoothingError):
    pass


class SamplingError(SmoothingError):
    pass


# ── Simulation ──────────────────────────────────────────────────────────

class SimulationError(ConvexRegError):
    category = "simulation"
    exit_code = 7

    def __init__(self, message: str, replication: int | None = None, step: str | None = None):
        super().__init__(message, step=step)
        self.replication = replication
