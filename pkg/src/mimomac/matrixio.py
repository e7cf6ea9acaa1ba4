"""Text format for complex matrices and precoder files.

Layout: ``#``-prefixed comment lines, then ``key value`` header lines, then
one row per line with interleaved real/imaginary parts (2 * cols floats,
row-major).  Precoder files carry ``antennas`` and ``constellation`` headers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ScenarioParseError


def _split_document(path: str | Path) -> tuple[dict, list[list[float]]]:
    header: dict[str, str] = {}
    rows: list[list[float]] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read matrix file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            if len(parts) == 2 and not rows:
                header[parts[0]] = parts[1]
            else:
                raise ScenarioParseError(f"{path}:{lineno}: unparsable line {raw!r}") from None
    return header, rows


def _rows_to_matrix(rows: list[list[float]], path) -> np.ndarray:
    if not rows:
        raise ScenarioParseError(f"{path}: no matrix rows found")
    width = len(rows[0])
    if width % 2 or any(len(r) != width for r in rows):
        raise ScenarioParseError(f"{path}: rows must all hold 2*cols floats")
    arr = np.array(rows, dtype=float)
    return arr[:, 0::2] + 1j * arr[:, 1::2]


def read_matrix(path: str | Path) -> np.ndarray:
    _, rows = _split_document(path)
    return _rows_to_matrix(rows, path)


def write_matrix(path: str | Path, matrix: np.ndarray, header: dict | None = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"{key} {value}")
    for row in matrix:
        lines.append(" ".join(f"{z.real:.17g} {z.imag:.17g}" for z in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_precoder(path: str | Path, expect_antennas: int | None = None) -> np.ndarray:
    """Load a precoder matrix file, checking the antenna-count header."""
    header, rows = _split_document(path)
    mat = _rows_to_matrix(rows, path)
    if mat.shape[0] != mat.shape[1]:
        raise ScenarioParseError(f"{path}: precoder must be square, got {mat.shape}")
    declared = header.get("antennas")
    if declared is not None and int(declared) != mat.shape[0]:
        raise ScenarioParseError(
            f"{path}: header antennas={declared} does not match {mat.shape[0]} rows"
        )
    if expect_antennas is not None and mat.shape[0] != expect_antennas:
        raise ScenarioParseError(
            f"{path}: precoder is {mat.shape[0]}x{mat.shape[0]}, expected {expect_antennas}"
        )
    return mat


def write_precoder(path: str | Path, matrix: np.ndarray, constellation: str) -> None:
    matrix = np.asarray(matrix, dtype=complex)
    write_matrix(
        path,
        matrix,
        header={"antennas": matrix.shape[0], "constellation": constellation},
    )
