"""
Reading and writing: CSV data, envelope JSON and run manifests.

CSV input: comma separated, UTF-8, header row, '.' decimals. Blank lines and
lines starting with '#' are skipped (band files carry a "# width: ..." line).

Envelope JSON (field order fixed, floats with 17 significant digits):

    {"dim": 1,
     "pieces": [{"a": [-4], "b": 1}, ...],
     "domain": {"vertices": [[0], [1]]},
     "shape": "convex"}

Concave envelopes store the pieces of the negated (convex) problem and
"shape": "concave".
"""

import csv
import hashlib
import io
import json
import math
import subprocess
from dataclasses import asdict, dataclass, field

import numpy as np

from errors import ParseError
from geometry import ConvexEnvelope, PolyhedralDomain, make_box_domain
from smoothing import Dataset

FALLBACK_VERSION = "convexreg 0.1.0"


# ── CSV input ───────────────────────────────────────────────────────────

@dataclass
class TabularInput:
    path: str
    columns: list[str]
    x_columns: list[str]
    y_column: str
    xs: np.ndarray
    ys: np.ndarray

    @property
    def rows(self) -> int:
        return len(self.ys)

    def dataset(self) -> Dataset:
        return Dataset(self.xs, self.ys)


def _data_lines(f):
    for lineno, line in enumerate(f, start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield lineno, line


def read_table(path: str, x_cols: list[str] | None = None, y_col: str | None = None) -> TabularInput:
    """Parse a CSV file. Defaults: y = last column, x = every other column."""
    try:
        f = open(path, encoding="utf-8", newline="")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from None
    with f:
        lines = list(_data_lines(f))
    if not lines:
        raise ParseError(f"{path}: empty file (no header row)")

    linenos = [n for n, _ in lines]
    rows = list(csv.reader(line for _, line in lines))
    header = [h.strip() for h in rows[0]]
    y_col = y_col or header[-1]
    x_cols = list(x_cols) if x_cols else [h for h in header if h != y_col]
    for col in [*x_cols, y_col]:
        if col not in header:
            raise ParseError(f"{path}: missing column {col!r} (header: {', '.join(header)})")
    if not x_cols:
        raise ParseError(f"{path}: no x columns besides {y_col!r}")

    wanted = [header.index(c) for c in [*x_cols, y_col]]
    values = np.empty((len(rows) - 1, len(wanted)))
    for r, (row, lineno) in enumerate(zip(rows[1:], linenos[1:])):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        for k, idx in enumerate(wanted):
            cell = row[idx].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {lineno}, column {header[idx]!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {lineno}, column {header[idx]!r}: non-finite value {cell!r}")
            values[r, k] = v
    if len(values) == 0:
        raise ParseError(f"{path}: header only, no data rows")
    return TabularInput(path, header, x_cols, y_col, values[:, :-1], values[:, -1])


def read_csv(path: str, x_cols: list[str] | None = None, y_col: str | None = None) -> Dataset:
    return read_table(path, x_cols, y_col).dataset()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(1024 * 1024):
            h.update(chunk)
    return h.hexdigest()


# ── CSV output ──────────────────────────────────────────────────────────

def fmt(v) -> str:
    """Shortest repr that round-trips the float."""
    return repr(float(v))


def table_text(header: list[str], columns: list, footer: list[str] = ()) -> str:
    """Header row first, then the data, then `# ` metadata lines."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([fmt(v) for v in row])
    for line in footer:
        out.write(f"# {line}\n")
    return out.getvalue()


def band_text(band) -> str:
    """x, center, lower, upper, halfwidth, with the band width in a trailing `# width:` line."""
    return table_text(
        ["x", "center", "lower", "upper", "halfwidth"],
        [band.points, band.centers, band.lower, band.upper, band.halfwidths],
        footer=[f"width: {band.width:.4f}", "constants: " + json.dumps(band.constants, sort_keys=True)],
    )


# ── Envelope JSON ───────────────────────────────────────────────────────

def _num(v) -> str:
    return format(float(v), ".17g")


def _vec(vs) -> str:
    return "[" + ", ".join(_num(v) for v in vs) + "]"


def envelope_to_json(envelope: ConvexEnvelope) -> str:
    pieces = ",\n    ".join(f'{{"a": {_vec(p.gradient)}, "b": {_num(p.offset)}}}' for p in envelope.pieces)
    vertices = ", ".join(_vec(v) for v in envelope.domain.vertices)
    return (f'{{"dim": {envelope.dim},\n'
            f' "pieces": [\n    {pieces}],\n'
            f' "domain": {{"vertices": [{vertices}]}},\n'
            f' "shape": "{envelope.shape}"}}\n')


def _domain_from_vertices(dim: int, vertices: np.ndarray) -> PolyhedralDomain:
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    on_corners = np.all((vertices == lo) | (vertices == hi))
    if len(vertices) == 2 ** dim and on_corners and len(np.unique(vertices, axis=0)) == 2 ** dim:
        return make_box_domain(lo, hi)
    return PolyhedralDomain(dim, vertices)


def envelope_from_json(text: str) -> ConvexEnvelope:
    try:
        data = json.loads(text)
        dim = int(data["dim"])
        gradients = np.array([p["a"] for p in data["pieces"]], dtype=float).reshape(-1, dim)
        offsets = np.array([p["b"] for p in data["pieces"]], dtype=float)
        vertices = np.array(data["domain"]["vertices"], dtype=float).reshape(-1, dim)
        shape = data.get("shape", "convex")
    except json.JSONDecodeError as e:
        raise ParseError(f"envelope JSON: line {e.lineno}, column {e.colno}: {e.msg}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"envelope JSON: malformed field ({e})") from None
    return ConvexEnvelope(gradients, offsets, _domain_from_vertices(dim, vertices), shape=shape)


# ── Manifest ────────────────────────────────────────────────────────────

def version_string() -> str:
    """git describe of the working tree, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5, check=True)
        return out.stdout.strip() or FALLBACK_VERSION
    except (OSError, subprocess.SubprocessError):
        return FALLBACK_VERSION


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: int | None = None
    input_digest: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)    # relpath → sha256
    timings: dict[str, float] = field(default_factory=dict)
    version: str = field(default_factory=version_string)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            data = json.loads(text)
            return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
        except (json.JSONDecodeError, TypeError) as e:
            raise ParseError(f"manifest: {e}") from None

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_json(f.read())
        except OSError as e:
            raise ParseError(f"{path}: {e.strerror}") from None
