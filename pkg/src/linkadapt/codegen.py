"""Randomized search for the shipped QC-LDPC base matrices.

Run once to regenerate ``linkadapt/codes/*.txt``::

    python -m linkadapt.codegen --seed 2024 --out src/linkadapt/codes

Every base matrix has ``cols = 12`` and ``Z = 48`` (``n = 576``).  The parity
part uses a dual-diagonal staircase whose first column has weight three with
equal outer shifts, which keeps the parity block invertible; information
columns get weight-3 random placements.  Candidates are accepted only if the
lifted matrix is full rank and free of 4-cycles.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .qcldpc import (
    BUILTIN_CODE_FILES,
    BaseMatrix,
    CodeConstructionError,
    expand_base,
    format_base_matrix,
    gf2_rank,
    validate_no_4cycles,
)

Z = 48
COLS = 12
ROWS_BY_RATE = {"1/2": 6, "2/3": 4, "3/4": 3}
INFO_COLUMN_WEIGHT = 3


def _candidate(rows: int, cols: int, Z: int, rng: np.random.Generator) -> BaseMatrix:
    k_b = cols - rows
    s = np.full((rows, cols), -1, dtype=np.int64)
    for c in range(k_b):
        w = min(INFO_COLUMN_WEIGHT, rows)
        for r in rng.choice(rows, size=w, replace=False):
            s[r, c] = rng.integers(Z)
    a = rng.integers(1, Z)
    s[0, k_b] = a
    s[rows - 1, k_b] = a
    s[rows // 2, k_b] = 0
    for j in range(1, rows):
        s[j - 1, k_b + j] = 0
        s[j, k_b + j] = 0
    return BaseMatrix(s)


def search_base_matrix(rows: int, cols: int, Z: int, rng: np.random.Generator, max_tries: int = 20000) -> BaseMatrix:
    """First random candidate that is 4-cycle free and lifts to full rank."""
    for _ in range(max_tries):
        base = _candidate(rows, cols, Z, rng)
        if not validate_no_4cycles(base, Z):
            continue
        if gf2_rank(expand_base(base, Z)) == rows * Z:
            return base
    raise CodeConstructionError(f"no valid {rows}x{cols} base matrix found in {max_tries} tries")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", type=Path, default=Path(__file__).parent / "codes")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for rate, rows in ROWS_BY_RATE.items():
        base = search_base_matrix(rows, COLS, Z, rng)
        path = args.out / BUILTIN_CODE_FILES[rate]
        path.write_text(format_base_matrix(base, Z))
        print(f"rate {rate}: wrote {path}")


if __name__ == "__main__":
    main()
