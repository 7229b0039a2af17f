"""CSV and JSON formats of the laboratory.

Numbers are written with 17 significant digits and '\\n' line ends so that the
same run always produces the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataFormatError
from .models import RadialField, RadialGrid, Trajectory


__all__ = [
    "FIELD_HEADER",
    "FORMAT_VERSION",
    "PROFILE_HEADER",
    "SWEEP_HEADER",
    "TRAJECTORY_HEADER",
    "format_number",
    "read_field_csv",
    "write_field_csv",
    "write_json",
    "write_profile_csv",
    "write_sweep_csv",
    "write_trajectory_csv",
]

FORMAT_VERSION = 1
FIELD_HEADER = ("r", "re_u", "im_u")
PROFILE_HEADER = ("r", "Q")
TRAJECTORY_HEADER = ("t", "mass", "kinetic_a", "l4", "energy", "V", "dV", "d2V")
SWEEP_HEADER = (
    "a",
    "lambda",
    "ME_ratio",
    "MK_ratio",
    "predicted",
    "observed",
    "t_blowup",
    "scatter_distance",
    "agreement",
    "error",
)
GRID_TOLERANCE = 1e-9


def format_number(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(value) for value in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(buffer.getvalue())
    return path


def write_field_csv(path: Path, u: RadialField) -> Path:
    rows = zip(u.grid.r, u.values.real, u.values.imag)
    return _write_rows(path, FIELD_HEADER, rows)


def write_profile_csv(path: Path, profile: RadialField) -> Path:
    return _write_rows(path, PROFILE_HEADER, zip(profile.grid.r, profile.values.real))


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    rows = (
        (s.t, s.f.mass, s.f.kinetic_a, s.f.l4, s.f.energy_a, s.V, s.dV, s.d2V)
        for s in traj.samples
    )
    return _write_rows(path, TRAJECTORY_HEADER, rows)


def write_sweep_csv(path: Path, rows: Iterable[Mapping[str, Any]]) -> Path:
    return _write_rows(path, SWEEP_HEADER, ([row.get(key) for key in SWEEP_HEADER] for row in rows))


def write_json(path: Path, payload: Mapping[str, Any], config: Mapping[str, Any]) -> Path:
    document = {"format_version": FORMAT_VERSION, "config": dict(config), **payload}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(json.dumps(document, indent=2, sort_keys=True, allow_nan=False, default=_jsonable))
        handle.write("\n")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise DataFormatError(f"{column} is not a number: {text!r}", line=line) from exc


def read_field_csv(path: Path) -> RadialField:
    """Read a field written as r,re_u,im_u (or a profile r,Q) on a uniform node set r_j = j*h."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise DataFormatError("file is empty", line=1)
    header = tuple(part.strip() for part in header)
    if header not in (FIELD_HEADER, PROFILE_HEADER):
        raise DataFormatError(
            f"expected header {','.join(FIELD_HEADER)} or {','.join(PROFILE_HEADER)}, got {','.join(header)}",
            line=1,
        )
    radii: list[float] = []
    values: list[complex] = []
    lines: list[int] = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"expected {len(header)} columns, got {len(row)}", line=line)
        r = _parse_float(row[0], line, header[0])
        real = _parse_float(row[1], line, header[1])
        imag = _parse_float(row[2], line, header[2]) if len(row) == 3 else 0.0
        if not all(np.isfinite((r, real, imag))):
            raise DataFormatError("non-finite value", line=line)
        if radii and r <= radii[-1]:
            raise DataFormatError(f"radius {r} does not increase", line=line)
        radii.append(r)
        values.append(complex(real, imag))
        lines.append(line)
    if not radii:
        raise DataFormatError("no data rows", line=2)

    nodes = np.asarray(radii)
    h = nodes[0]
    if not h > 0:
        raise DataFormatError(f"first radius must be positive, got {h}", line=lines[0])
    expected = h * np.arange(1, nodes.size + 1)
    off = np.nonzero(np.abs(nodes - expected) > GRID_TOLERANCE * max(1.0, expected[-1]))[0]
    if off.size:
        raise DataFormatError(
            f"radius {nodes[off[0]]} is not on the uniform grid r_j = j*{h}", line=lines[int(off[0])]
        )
    grid = RadialGrid(r_max=float(expected[-1]), n=nodes.size)
    return RadialField(grid, np.asarray(values))
