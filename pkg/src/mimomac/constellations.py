"""Channel-input constellations: Gaussian signaling plus unit-energy QPSK and 16-QAM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError

#: Largest admissible joint constellation size for exhaustive evaluation.
ENUMERATION_GUARD = 2**16


@dataclass(frozen=True, eq=False)
class Constellation:
    """A per-antenna symbol alphabet.

    ``points`` is empty for Gaussian signaling; discrete alphabets have zero
    mean and unit average energy.
    """

    kind: str  # "gaussian" | "qpsk" | "qam16"
    points: np.ndarray = field(repr=False)
    cardinality: int

    @property
    def is_discrete(self) -> bool:
        return self.kind != "gaussian"


GAUSSIAN = Constellation("gaussian", np.empty(0, dtype=complex), 0)
QPSK = Constellation(
    "qpsk",
    np.array([a + 1j * b for a in (1.0, -1.0) for b in (1.0, -1.0)]) / np.sqrt(2.0),
    4,
)
QAM16 = Constellation(
    "qam16",
    np.array([a + 1j * b for a in (-3.0, -1.0, 1.0, 3.0) for b in (-3.0, -1.0, 1.0, 3.0)])
    / np.sqrt(10.0),
    16,
)

_BY_NAME = {"gaussian": GAUSSIAN, "qpsk": QPSK, "qam16": QAM16, "16qam": QAM16}


def by_name(name: str) -> Constellation:
    try:
        return _BY_NAME[name.strip().lower()]
    except KeyError:
        raise KeyError(f"unknown constellation {name!r}; expected gaussian, qpsk or qam16") from None


def enumeration_size(constellation: Constellation, antennas: int) -> int:
    return constellation.cardinality**antennas


def enumerate_symbol_vectors(constellation: Constellation, antennas: int) -> np.ndarray:
    """All C**M data vectors of i.i.d. symbols, shape (C**M, M).

    Raises a capacity error beyond the exhaustive guard; callers should fall
    back to sampled estimation in that regime.
    """
    if not constellation.is_discrete:
        raise ValueError("cannot enumerate a Gaussian input")
    total = enumeration_size(constellation, antennas)
    if total > ENUMERATION_GUARD:
        raise CapacityError(
            f"{constellation.kind} over {antennas} antennas needs {total} vectors "
            f"(> {ENUMERATION_GUARD}); use Monte-Carlo sampling of the input instead"
        )
    pts = constellation.points
    c = constellation.cardinality
    out = np.empty((total, antennas), dtype=complex)
    for m in range(antennas):
        reps = c ** (antennas - m - 1)
        tile = total // (c * reps)
        out[:, m] = np.tile(np.repeat(pts, reps), tile)
    return out
