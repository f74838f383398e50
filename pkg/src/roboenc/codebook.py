"""Random orthogonal class-encoding codebooks.

A codebook maps each of k classes to a length-l row (l >= k), the rows
mutually orthogonal and all scaled to the same norm beta. Rows come from
orthogonalizing a seeded standard-normal matrix; modified Gram-Schmidt
with one re-orthogonalization pass keeps the dot products near machine
precision even at l in the thousands, where the classical recurrence
degrades.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, CorruptCodebook, DegenerateInput, FormatError, GenerationError
from .seeding import rng

ORTHO_TOL = 1e-9       # |C_i . C_j| <= beta^2 * ORTHO_TOL for i != j
NORM_TOL = 1e-12       # | ||C_i|| - beta | <= beta * NORM_TOL
_RESIDUAL_FLOOR = 1e-8
_MAX_RESAMPLES = 8

_MAGIC = b"ROCB"
_VERSION = 1


@dataclass(frozen=True)
class Codebook:
    k: int
    l: int
    beta: float
    rows: np.ndarray  # (k, l), row i is the encoding of class i
    seed: int

    def unit_rows(self) -> np.ndarray:
        """Rows rescaled to unit norm (the underlying orthonormal basis)."""
        return self.rows / self.beta

    def validate(self) -> None:
        if self.rows.shape != (self.k, self.l):
            raise CorruptCodebook(f"rows shape {self.rows.shape} != ({self.k}, {self.l})")
        gram = self.rows @ self.rows.T
        off = gram - np.diag(np.diag(gram))
        if np.max(np.abs(off)) > self.beta ** 2 * ORTHO_TOL:
            raise CorruptCodebook("rows are not orthogonal")
        norms = np.linalg.norm(self.rows, axis=1)
        if np.max(np.abs(norms - self.beta)) > self.beta * NORM_TOL:
            raise CorruptCodebook("row norms deviate from beta")


def default_beta(l: int) -> float:
    """Scale used when none is given: half the encoding length."""
    return l / 2.0


def gram_schmidt(m: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of a k x l matrix (k <= l).

    Modified Gram-Schmidt followed by a second full pass; raises
    DegenerateInput when a residual collapses below 1e-8 of the row's
    original norm, signalling (near-)linear dependence.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-d matrix, got shape {m.shape}")
    k, l = m.shape
    if l < k:
        raise ContractError(f"need at least as many columns as rows, got {k}x{l}")

    e = m.copy()
    for _pass in range(2):
        for i in range(k):
            for j in range(i):
                e[i] -= (e[i] @ e[j]) * e[j]
            norm = np.linalg.norm(e[i])
            original = np.linalg.norm(m[i])
            if norm < _RESIDUAL_FLOOR * max(original, 1.0):
                err = DegenerateInput(f"row {i} is numerically dependent on earlier rows")
                err.row = i
                raise err
            e[i] /= norm
    return e


def generate_codebook(k: int, l: int, beta: float | None = None, seed: int = 0) -> Codebook:
    """Draw a seeded standard-normal matrix and orthogonalize it.

    A degenerate draw gets its offending row redrawn, up to 8 attempts;
    for continuous Gaussian rows this is essentially never needed, but
    the guard keeps generation total.
    """
    if l < k:
        raise ContractError(f"encoding length {l} must be >= class count {k}")
    if beta is None:
        beta = default_beta(l)
    if beta <= 0:
        raise ContractError("beta must be positive")

    gen = rng(seed, "codebook")
    m = gen.standard_normal((k, l))
    for attempt in range(_MAX_RESAMPLES + 1):
        try:
            e = gram_schmidt(m)
            break
        except DegenerateInput as exc:
            if attempt == _MAX_RESAMPLES:
                raise GenerationError("codebook generation kept hitting degenerate rows") from exc
            m[exc.row] = gen.standard_normal(l)
    cb = Codebook(k=k, l=l, beta=float(beta), rows=e * beta, seed=seed)
    cb.validate()
    return cb


def save_codebook(cb: Codebook, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIdQ", _VERSION, cb.k, cb.l, cb.beta, cb.seed))
        fh.write(np.ascontiguousarray(cb.rows, dtype="<f8").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<IIIdQ")
    if len(blob) < 4 + header:
        raise FormatError("codebook file truncated")
    if blob[:4] != _MAGIC:
        raise FormatError("bad codebook magic")
    version, k, l, beta, seed = struct.unpack_from("<IIIdQ", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported codebook version {version}")
    body = blob[4 + header:]
    if len(body) != k * l * 8:
        raise FormatError(f"codebook payload is {len(body)} bytes, expected {k * l * 8}")
    rows = np.frombuffer(body, dtype="<f8").reshape(k, l).astype(np.float64)
    cb = Codebook(k=k, l=l, beta=beta, rows=rows, seed=seed)
    cb.validate()
    return cb


def export_codebook_json(cb: Codebook, path) -> None:
    """Human-inspectable mirror of the binary format."""
    doc = {
        "k": cb.k,
        "l": cb.l,
        "beta": cb.beta,
        "seed": cb.seed,
        "rows": cb.rows.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
