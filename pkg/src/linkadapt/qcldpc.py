"""Quasi-cyclic LDPC codes: lifting, systematic encoding and BP decoding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from .crc import as_bits

NULL_SHIFT = -1
MSG_CLAMP = 30.0
DEFAULT_MAX_ITERATIONS = 50

_TANH_LIMIT = np.tanh(MSG_CLAMP / 2.0)


class CodeConstructionError(ValueError):
    """Raised for malformed base matrices or rank-deficient parity checks."""


@dataclass(frozen=True)
class BaseMatrix:
    """Protograph shift table; ``-1`` marks an all-zero ``Z x Z`` block."""

    shifts: np.ndarray

    def __post_init__(self) -> None:
        s = np.array(self.shifts, dtype=np.int64)
        if s.ndim != 2 or s.size == 0:
            raise CodeConstructionError("base matrix must be a nonempty 2-D grid")
        if np.any(s < NULL_SHIFT):
            r, c = np.argwhere(s < NULL_SHIFT)[0]
            raise CodeConstructionError(f"invalid shift {s[r, c]} at row {r}, col {c}")
        s.setflags(write=False)
        object.__setattr__(self, "shifts", s)

    @property
    def rows(self) -> int:
        return self.shifts.shape[0]

    @property
    def cols(self) -> int:
        return self.shifts.shape[1]

    def check_lifting(self, Z: int) -> None:
        if Z < 1:
            raise CodeConstructionError(f"lifting factor must be >= 1, got {Z}")
        bad = np.argwhere(self.shifts >= Z)
        if bad.size:
            r, c = bad[0]
            raise CodeConstructionError(f"shift {self.shifts[r, c]} at row {r}, col {c} is not below Z={Z}")


def expand_base(base: BaseMatrix, Z: int) -> np.ndarray:
    """Lift ``base`` to a binary parity-check matrix of shape ``(rows*Z, cols*Z)``.

    A shift ``s`` becomes the identity with columns cyclically moved right by
    ``s``: row ``i`` of the block has its one in column ``(i + s) mod Z``.
    """
    base.check_lifting(Z)
    H = np.zeros((base.rows * Z, base.cols * Z), dtype=np.uint8)
    idx = np.arange(Z)
    for r in range(base.rows):
        for c in range(base.cols):
            s = base.shifts[r, c]
            if s >= 0:
                H[r * Z + idx, c * Z + (idx + s) % Z] = 1
    return H


def validate_no_4cycles(base: BaseMatrix, Z: int) -> bool:
    """True iff the lifted Tanner graph has no cycles of length four."""
    s = base.shifts
    for a in range(base.rows):
        for d in range(a + 1, base.rows):
            cols = np.flatnonzero((s[a] >= 0) & (s[d] >= 0))
            # a 4-cycle through columns b, e needs s_ab - s_db == s_ae - s_de (mod Z)
            diffs = (s[a, cols] - s[d, cols]) % Z
            if np.unique(diffs).size != diffs.size:
                return False
    return True


def gf2_rank(M: np.ndarray) -> int:
    return len(_rref(M)[1])


def _rref(M: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2), pivoting from the rightmost column.

    Scanning right to left puts pivots on the parity columns of the usual
    ``[info | parity]`` layout, so information bits keep the leading positions.
    """
    R = (np.asarray(M, dtype=np.uint8) & 1).copy()
    m, n = R.shape
    pivots: list[int] = []
    r = 0
    for col in range(n - 1, -1, -1):
        if r == m:
            break
        hits = np.flatnonzero(R[r:, col]) + r
        if hits.size == 0:
            continue
        p = hits[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        others = np.flatnonzero(R[:, col])
        others = others[others != r]
        R[others] ^= R[r]
        pivots.append(col)
        r += 1
    return R, pivots


def derive_generator(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Systematic generator for the null space of ``H``.

    Returns ``(G, perm)`` where ``G = [I_k | P]`` is expressed in permuted
    column order and transmit column ``perm[j]`` carries permuted column ``j``.
    So ``c = zeros(n); c[perm] = u @ G % 2`` gives a codeword in transmit order.
    """
    H = np.asarray(H, dtype=np.uint8)
    m, n = H.shape
    R, pivots = _rref(H)
    if len(pivots) < m:
        raise CodeConstructionError(
            f"parity-check matrix is rank deficient: rank {len(pivots)} < {m} rows "
            f"({m - len(pivots)} dependent rows)"
        )
    pivot_set = set(pivots)
    info = [c for c in range(n) if c not in pivot_set]
    perm = np.array(info + pivots, dtype=np.int64)
    # row i of R has its pivot at pivots[i], so R[:, perm] = [A | I_m]
    A = R[:m][:, info]
    k = n - m
    G = np.concatenate([np.eye(k, dtype=np.uint8), A.T.copy()], axis=1)
    return G, perm


@dataclass(frozen=True)
class _TannerGraph:
    """Edge lists in check-major order plus the per-variable edge index."""

    edge_var: np.ndarray
    check_ptr: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray

    @classmethod
    def from_H(cls, H: np.ndarray) -> "_TannerGraph":
        checks, variables = np.nonzero(H)  # row-major, so grouped by check
        m, n = H.shape
        check_ptr = np.concatenate([[0], np.cumsum(np.bincount(checks, minlength=m))])
        var_ptr = np.concatenate([[0], np.cumsum(np.bincount(variables, minlength=n))])
        var_edges = np.argsort(variables, kind="stable")
        return cls(variables.astype(np.int64), check_ptr.astype(np.int64), var_ptr.astype(np.int64), var_edges.astype(np.int64))


@dataclass(frozen=True, eq=False)
class CodeSpec:
    """A lifted QC-LDPC code with its generator and decoding graph."""

    name: str
    base: BaseMatrix
    Z: int
    H: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    perm: np.ndarray = field(repr=False)

    @classmethod
    def from_base(cls, base: BaseMatrix, Z: int, name: str = "") -> "CodeSpec":
        H = expand_base(base, Z)
        G, perm = derive_generator(H)
        for arr in (H, G, perm):
            arr.setflags(write=False)
        code = cls(name or f"QC({base.cols * Z},{(base.cols - base.rows) * Z})", base, Z, H, G, perm)
        code._build_graph()
        return code

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.G.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def info_positions(self) -> np.ndarray:
        """Transmit positions of the systematic bits ``u[0..k-1]``."""
        return self.perm[: self.k]

    def _build_graph(self) -> None:
        object.__setattr__(self, "_graph", _TannerGraph.from_H(self.H))
        object.__setattr__(self, "_G_float", self._transmit_generator().astype(np.float64))

    def _transmit_generator(self) -> np.ndarray:
        Gt = np.zeros_like(self.G)
        Gt[:, self.perm] = self.G
        return Gt

    def checksum(self) -> str:
        return hashlib.sha256(self.H.tobytes()).hexdigest()


@dataclass(frozen=True)
class DecodeResult:
    u_hat: np.ndarray
    converged: bool
    iterations_used: int
    word: np.ndarray  # hard decision on all n transmit positions


def encode(u, spec: CodeSpec) -> np.ndarray:
    """Codeword ``u G mod 2`` in transmit order."""
    bits = as_bits(u, "u")
    if bits.size != spec.k:
        raise ValueError(f"expected {spec.k} information bits, got {bits.size}")
    c = bits.astype(np.float64) @ spec._G_float
    return (c.astype(np.int64) & 1).astype(np.uint8)


def syndrome(spec: CodeSpec, word) -> np.ndarray:
    bits = as_bits(word, "word")
    if bits.size != spec.n:
        raise ValueError(f"expected a word of {spec.n} bits, got {bits.size}")
    return _syndrome(spec, bits)


def _syndrome(spec: CodeSpec, bits: np.ndarray) -> np.ndarray:
    g = spec._graph
    return (np.add.reduceat(bits[g.edge_var], g.check_ptr[:-1]) & 1).astype(np.uint8)


@numba.njit(cache=True)
def _check_extrinsic(t, check_ptr, out):
    # leave-one-out products per check via prefix/suffix sweeps (no division)
    for c in range(check_ptr.size - 1):
        lo, hi = check_ptr[c], check_ptr[c + 1]
        acc = 1.0
        for e in range(lo, hi):
            out[e] = acc
            acc *= t[e]
        acc = 1.0
        for e in range(hi - 1, lo - 1, -1):
            v = out[e] * acc
            acc *= t[e]
            if v > _TANH_LIMIT:
                v = _TANH_LIMIT
            elif v < -_TANH_LIMIT:
                v = -_TANH_LIMIT
            out[e] = v


@numba.njit(cache=True)
def _variable_update(L, half_r, var_ptr, var_edges, edge_var, check_ptr, half_q, hard):
    # half_r holds atanh(ext) = r/2; writes q/2 for the next tanh and returns
    # True when the hard decision satisfies every check
    for v in range(var_ptr.size - 1):
        tot = L[v]
        for i in range(var_ptr[v], var_ptr[v + 1]):
            tot += 2.0 * half_r[var_edges[i]]
        hard[v] = 1 if tot < 0.0 else 0
        for i in range(var_ptr[v], var_ptr[v + 1]):
            e = var_edges[i]
            q = tot - 2.0 * half_r[e]
            if q > MSG_CLAMP:
                q = MSG_CLAMP
            elif q < -MSG_CLAMP:
                q = -MSG_CLAMP
            half_q[e] = 0.5 * q
    for c in range(check_ptr.size - 1):
        par = 0
        for e in range(check_ptr[c], check_ptr[c + 1]):
            par ^= hard[edge_var[e]]
        if par:
            return False
    return True


def bp_decode(spec: CodeSpec, llrs, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> DecodeResult:
    """Flooding sum-product decoding with tanh/atanh check updates.

    Positive LLRs favour bit 0.  Decoding stops after the first iteration
    whose hard decision satisfies every parity check.  Messages are clamped
    to +/-30.
    """
    L = np.asarray(llrs, dtype=np.float64)
    if L.shape != (spec.n,):
        raise ValueError(f"expected {spec.n} LLRs, got shape {L.shape}")
    if not np.all(np.isfinite(L)):
        raise ValueError("LLRs must be finite")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")

    g = spec._graph
    half_q = 0.5 * np.clip(L[g.edge_var], -MSG_CLAMP, MSG_CLAMP)
    ext = np.empty_like(half_q)
    hard = np.empty(spec.n, dtype=np.uint8)
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        _check_extrinsic(np.tanh(half_q), g.check_ptr, ext)
        converged = _variable_update(
            L, np.arctanh(ext), g.var_ptr, g.var_edges, g.edge_var, g.check_ptr, half_q, hard
        )
        if converged:
            break
    return DecodeResult(hard[spec.info_positions], converged, it, hard)


# --- code-definition files -------------------------------------------------

BUILTIN_CODE_FILES = {
    "1/2": "qc576_r12.txt",
    "2/3": "qc576_r23.txt",
    "3/4": "qc576_r34.txt",
}


def parse_base_matrix(text: str, source: str = "<string>") -> tuple[BaseMatrix, int]:
    """Parse ``Z rows cols`` followed by ``rows`` lines of ``cols`` shifts."""
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise CodeConstructionError(f"{source}: empty code-definition file")
    lineno, header = lines[0]
    try:
        Z, rows, cols = (int(x) for x in header)
    except ValueError:
        raise CodeConstructionError(f"{source}:{lineno}: header must be 'Z rows cols'") from None
    body = lines[1:]
    if len(body) != rows:
        raise CodeConstructionError(f"{source}: expected {rows} rows, found {len(body)}")
    grid = []
    for lineno, tokens in body:
        if len(tokens) != cols:
            raise CodeConstructionError(f"{source}:{lineno}: expected {cols} entries, found {len(tokens)}")
        try:
            row = [int(x) for x in tokens]
        except ValueError:
            raise CodeConstructionError(f"{source}:{lineno}: non-integer entry") from None
        for c, s in enumerate(row):
            if s < NULL_SHIFT or s >= Z:
                raise CodeConstructionError(
                    f"{source}:{lineno}: shift {s} in column {c} outside [-1, {Z - 1}]"
                )
        grid.append(row)
    return BaseMatrix(np.array(grid)), Z


def format_base_matrix(base: BaseMatrix, Z: int) -> str:
    width = len(str(Z - 1)) + 1
    out = [f"{Z} {base.rows} {base.cols}"]
    out += [" ".join(f"{s:>{width}d}" for s in row) for row in base.shifts]
    return "\n".join(out) + "\n"


def load_code(path: str | Path, name: str = "") -> CodeSpec:
    path = Path(path)
    base, Z = parse_base_matrix(path.read_text(), str(path))
    return _checked_code(base, Z, name or path.stem, str(path))


def _checked_code(base: BaseMatrix, Z: int, name: str, source: str) -> CodeSpec:
    try:
        code = CodeSpec.from_base(base, Z, name)
    except CodeConstructionError as exc:
        raise CodeConstructionError(f"{source}: {exc}") from None
    if not validate_no_4cycles(base, Z):
        raise CodeConstructionError(f"{source}: lifted graph contains 4-cycles")
    GH = (code._transmit_generator().astype(np.int64) @ code.H.T.astype(np.int64)) & 1
    if GH.any():
        raise CodeConstructionError(f"{source}: generator is not orthogonal to H")
    return code


def builtin_code_text(rate_label: str) -> str:
    return resources.files("linkadapt.codes").joinpath(BUILTIN_CODE_FILES[rate_label]).read_text()


@lru_cache(maxsize=None)
def builtin_code(rate_label: str) -> CodeSpec:
    """One of the three shipped n=576 codes, keyed by ``"1/2"``, ``"2/3"``, ``"3/4"``."""
    fname = BUILTIN_CODE_FILES[rate_label]
    base, Z = parse_base_matrix(builtin_code_text(rate_label), fname)
    return _checked_code(base, Z, f"R{rate_label}", fname)


def builtin_codes() -> list[CodeSpec]:
    return [builtin_code(r) for r in BUILTIN_CODE_FILES]
