"""Shared data model: sparse vectors, labeled examples, finite distributions,
samples, margin losses and the deterministic random stream contract.

Every randomized routine in the package takes an :class:`RngStream`.  Streams
are keyed by a 64-bit master seed and a 64-bit stream id; the id for a trial is
a hash of ``(seed, tag, index)`` so results never depend on worker count.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

MASK64 = (1 << 64) - 1

# Relative tolerance used when comparing a margin against a threshold.  The
# constructions place margins exactly on the threshold, and a single rounding
# step must not flip the comparison.
MARGIN_TOL = 1e-9

GENERATOR_ID = f"numpy-philox4x64/normal=ziggurat/numpy-{np.__version__}"

STRICT = "strict"
WEAK = "weak"


class DimensionError(ValueError):
    """Raised when two objects live in spaces of different dimension."""


# ----------------------------------------------------------------------------
# random streams
# ----------------------------------------------------------------------------

def derive_stream_id(seed: int, tag: str, index: int = 0) -> int:
    """64-bit stream id from (master seed, purpose tag, trial index)."""
    h = hashlib.blake2b(digest_size=8, person=b"marginlab-rng")
    h.update(int(seed & MASK64).to_bytes(8, "little"))
    h.update(tag.encode("utf-8"))
    h.update(b"\x00")
    h.update(int(index & MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A single-owner random stream (Philox counter-based generator).

    Attribute access falls through to the wrapped :class:`numpy.random.Generator`,
    so ``rng.standard_normal(...)``, ``rng.random(...)`` etc. work directly.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        bitgen = np.random.Philox(np.random.SeedSequence([self.seed, self.stream_id]))
        self.generator = np.random.Generator(bitgen)

    @classmethod
    def derive(cls, seed: int, tag: str, index: int = 0) -> "RngStream":
        return cls(seed, derive_stream_id(seed, tag, index))

    def spawn(self, tag: str, index: int = 0) -> "RngStream":
        """Child stream, independent of how much of this stream was consumed."""
        return RngStream.derive(self.seed, f"{self.stream_id:016x}/{tag}", index)

    def __getattr__(self, name):
        return getattr(self.generator, name)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id:#018x})"


def as_stream(rng: "RngStream | int") -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(rng))


# ----------------------------------------------------------------------------
# vectors and examples
# ----------------------------------------------------------------------------

class SparseVector:
    """Immutable sparse vector: strictly increasing indices, no stored zeros."""

    __slots__ = ("dim", "indices", "values")

    def __init__(self, dim: int, indices: Iterable[int] = (), values: Iterable[float] = ()):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64).ravel()
        val = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                         dtype=np.float64).ravel()
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                order = np.argsort(idx, kind="stable")
                idx, val = idx[order], val[order]
                if np.any(np.diff(idx) == 0):
                    raise ValueError("duplicate index in sparse vector")
            if idx[0] < 0 or idx[-1] >= dim:
                raise ValueError(f"index out of range for dimension {dim}")
            if not np.all(np.isfinite(val)):
                raise ValueError("sparse vector entries must be finite")
            keep = val != 0.0
            idx, val = idx[keep], val[keep]
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __setattr__(self, name, value):
        raise AttributeError("SparseVector is immutable")

    def __reduce__(self):
        return (SparseVector, (self.dim, np.array(self.indices), np.array(self.values)))

    @classmethod
    def from_dense(cls, x: Sequence[float]) -> "SparseVector":
        x = np.asarray(x, dtype=np.float64).ravel()
        nz = np.flatnonzero(x)
        return cls(x.size, nz, x[nz])

    @classmethod
    def from_dict(cls, dim: int, entries: dict) -> "SparseVector":
        keys = sorted(entries)
        return cls(dim, keys, [entries[k] for k in keys])

    @classmethod
    def basis(cls, dim: int, i: int, scale: float = 1.0) -> "SparseVector":
        return cls(dim, [i], [scale])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def squared_norm(self) -> float:
        return math.fsum((self.values * self.values).tolist())

    def norm(self) -> float:
        return math.sqrt(self.squared_norm())

    def values_at(self, idx: np.ndarray) -> np.ndarray:
        """Coordinates at the (possibly repeated) positions ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros(idx.shape)
        if self.indices.size == 0 or idx.size == 0:
            return out
        pos = np.searchsorted(self.indices, idx)
        pos_c = np.minimum(pos, self.indices.size - 1)
        hit = self.indices[pos_c] == idx
        out[hit] = self.values[pos_c[hit]]
        return out

    def dot(self, other: "SparseVector") -> float:
        if self.dim != other.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
        common, ia, ib = np.intersect1d(self.indices, other.indices,
                                        assume_unique=True, return_indices=True)
        if common.size == 0:
            return 0.0
        return math.fsum((self.values[ia] * other.values[ib]).tolist())

    def scaled(self, c: float) -> "SparseVector":
        return SparseVector(self.dim, self.indices, self.values * c)

    def _key(self) -> tuple:
        return (self.dim, self.indices.tobytes(), self.values.tobytes())

    def __eq__(self, other) -> bool:
        return isinstance(other, SparseVector) and self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        shown = ", ".join(f"{i}: {v:.6g}" for i, v in self.entries()[:6])
        more = ", ..." if self.nnz > 6 else ""
        return f"SparseVector(dim={self.dim}, {{{shown}{more}}})"


@dataclass(frozen=True)
class LabeledExample:
    point: SparseVector
    label: int

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.label!r}")


class Hyperplane:
    """Linear classifier ``x -> sign(<x, w>)`` with a cached Euclidean norm."""

    __slots__ = ("weights", "norm")

    def __init__(self, weights: SparseVector):
        if not isinstance(weights, SparseVector):
            weights = SparseVector.from_dense(weights)
        self.weights = weights
        self.norm = weights.norm()

    @classmethod
    def from_dense(cls, w: Sequence[float]) -> "Hyperplane":
        return cls(SparseVector.from_dense(w))

    @property
    def dim(self) -> int:
        return self.weights.dim

    def dense(self) -> np.ndarray:
        return self.weights.dense()

    def normalized(self) -> "Hyperplane":
        if self.norm == 0.0:
            raise ValueError("cannot normalize the zero hyperplane")
        v = self.weights.values / self.norm
        # one correction step keeps the stored norm at or below one
        n = math.sqrt(math.fsum((v * v).tolist()))
        if n > 1.0:
            v = v / n
        return Hyperplane(SparseVector(self.dim, self.weights.indices, v))

    def __repr__(self) -> str:
        return f"Hyperplane(norm={self.norm:.6g}, {self.weights!r})"


def margin(w: Hyperplane, ex: LabeledExample) -> float:
    """Signed margin ``y <x, w>``."""
    return ex.label * ex.point.dot(w.weights)


def _tol(theta: float) -> float:
    return MARGIN_TOL * max(1.0, abs(theta))


def below(margins: np.ndarray, theta: float, mode: str = STRICT) -> np.ndarray:
    """Boolean mask of margins under ``theta`` (``<`` for strict, ``<=`` for weak)."""
    if mode == STRICT:
        return margins < theta - _tol(theta)
    if mode == WEAK:
        return margins <= theta + _tol(theta)
    raise ValueError(f"unknown comparison mode {mode!r}")


# ----------------------------------------------------------------------------
# distributions
# ----------------------------------------------------------------------------

class AtomDistribution:
    """Common interface for finite-support distributions over labeled points.

    Subclasses supply ``n_atoms``, ``dim``, ``radius``, ``atom``, ``probability``,
    ``atom_margins`` and ``draw_indices``; exact losses are sums over atoms.
    """

    n_atoms: int
    dim: int
    radius: float

    def atoms(self) -> Iterator[tuple[LabeledExample, float]]:
        for i in range(self.n_atoms):
            yield self.atom(i), self.probability(i)

    def margin_mass(self, w: Hyperplane, theta: float, mode: str) -> float:
        """Exact probability that ``y <x, w>`` is below ``theta``."""
        m = self.atom_margins(w)
        mask = below(m, theta, mode)
        return math.fsum(self.probabilities()[mask].tolist())

    def probabilities(self) -> np.ndarray:
        return np.array([self.probability(i) for i in range(self.n_atoms)])


class FiniteDistribution(AtomDistribution):
    """Explicit list of ``(LabeledExample, probability)`` pairs."""

    def __init__(self, atoms: Sequence[tuple[LabeledExample, float]], radius: float):
        if not atoms:
            raise ValueError("a distribution needs at least one atom")
        radius = float(radius)
        if not radius > 0:
            raise ValueError("radius must be positive")
        examples = tuple(a for a, _ in atoms)
        probs = np.array([float(p) for _, p in atoms])
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        if total != 1.0:
            probs = probs / total
        dim = examples[0].point.dim
        seen = set()
        for ex in examples:
            if ex.point.dim != dim:
                raise DimensionError("atoms live in different dimensions")
            if ex.point.norm() > radius + 1e-9:
                raise ValueError(f"atom norm {ex.point.norm()} exceeds radius {radius}")
            key = (ex.point, ex.label)
            if key in seen:
                raise ValueError("duplicate atom")
            seen.add(key)
        probs.setflags(write=False)
        self.examples = examples
        self._probs = probs
        self.radius = radius
        self.dim = dim
        self.n_atoms = len(examples)
        self._labels = np.array([ex.label for ex in examples], dtype=np.int64)
        self._cdf = None
        self._matrix = None

    def atom(self, i: int) -> LabeledExample:
        return self.examples[i]

    def probability(self, i: int) -> float:
        return float(self._probs[i])

    def probabilities(self) -> np.ndarray:
        return self._probs

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def matrix(self) -> sp.csr_matrix:
        """Atoms stacked as rows of a CSR matrix."""
        if self._matrix is None:
            indptr = np.zeros(self.n_atoms + 1, dtype=np.int64)
            indptr[1:] = np.cumsum([ex.point.nnz for ex in self.examples])
            ind = np.concatenate([ex.point.indices for ex in self.examples])
            val = np.concatenate([ex.point.values for ex in self.examples])
            self._matrix = sp.csr_matrix((val, ind, indptr), shape=(self.n_atoms, self.dim))
        return self._matrix

    def atom_margins(self, w: Hyperplane, indices: np.ndarray | None = None) -> np.ndarray:
        if w.dim != self.dim:
            raise DimensionError(f"hyperplane dim {w.dim} vs distribution dim {self.dim}")
        scores = self.matrix() @ w.dense()
        out = self.labels * scores
        return out if indices is None else out[indices]

    def draw_indices(self, m: int, rng: RngStream) -> np.ndarray:
        if self._cdf is None:
            cdf = np.cumsum(self._probs)
            cdf[-1] = 1.0
            self._cdf = cdf
        u = rng.random(m)
        idx = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(idx, self.n_atoms - 1)


class SpikedUniformDistribution(AtomDistribution):
    """Uniform over ``u`` points in R^(u+1), all labeled +1.

    Point ``i`` has coordinates ``i`` and ``u`` (the shared last axis) equal to
    ``R/sqrt(2)``.  Atoms are generated on demand; nothing of size ``u`` is
    materialized, so ``u`` in the tens of millions is fine.
    """

    def __init__(self, u: int, radius: float):
        if u < 1:
            raise ValueError("u must be positive")
        self.u = int(u)
        self.radius = float(radius)
        self.dim = self.u + 1
        self.n_atoms = self.u
        self.coord = self.radius / math.sqrt(2.0)

    def atom(self, i: int) -> LabeledExample:
        if not 0 <= i < self.u:
            raise IndexError(i)
        return LabeledExample(SparseVector(self.dim, [i, self.u], [self.coord, self.coord]), 1)

    def probability(self, i: int) -> float:
        return 1.0 / self.u

    def probabilities(self) -> np.ndarray:
        return np.full(self.u, 1.0 / self.u)

    def atom_margins(self, w: Hyperplane, indices: np.ndarray | None = None) -> np.ndarray:
        if w.dim != self.dim:
            raise DimensionError(f"hyperplane dim {w.dim} vs distribution dim {self.dim}")
        if indices is None:
            indices = np.arange(self.u)
        shared = w.weights.values_at(np.array([self.u]))[0]
        return self.coord * (w.weights.values_at(indices) + shared)

    def margin_mass(self, w: Hyperplane, theta: float, mode: str) -> float:
        # Atoms off the support of w all share one margin; count them in bulk.
        if w.dim != self.dim:
            raise DimensionError(f"hyperplane dim {w.dim} vs distribution dim {self.dim}")
        support = w.weights.indices[w.weights.indices < self.u]
        n_hit = int(below(self.atom_margins(w, support), theta, mode).sum())
        if self.u > support.size:
            bulk = self.atom_margins(w, np.array([self._off_support(support)]))
            if below(bulk, theta, mode)[0]:
                n_hit += self.u - support.size
        return n_hit / self.u

    @staticmethod
    def _off_support(support: np.ndarray) -> int:
        # smallest index not in the (sorted) support
        gaps = np.flatnonzero(support != np.arange(support.size))
        return int(gaps[0]) if gaps.size else int(support.size)

    def draw_indices(self, m: int, rng: RngStream) -> np.ndarray:
        # inverse CDF over equal-mass atoms
        idx = np.floor(rng.random(m) * self.u).astype(np.int64)
        return np.minimum(idx, self.u - 1)


# ----------------------------------------------------------------------------
# samples and losses
# ----------------------------------------------------------------------------

class Sample:
    """A multiset of labeled examples.

    Samples drawn from a distribution remember the atom indices, which keeps
    margin evaluation vectorized and memory proportional to ``m``.
    """

    def __init__(self, examples: Sequence[LabeledExample] | None = None, *,
                 source: AtomDistribution | None = None,
                 atom_indices: np.ndarray | None = None):
        if (examples is None) == (source is None):
            raise ValueError("give either explicit examples or (source, atom_indices)")
        if source is not None:
            atom_indices = np.asarray(atom_indices, dtype=np.int64)
            atom_indices.setflags(write=False)
            self.m = int(atom_indices.size)
        else:
            examples = tuple(examples)
            self.m = len(examples)
        self.source = source
        self.atom_indices = atom_indices
        self._examples = examples

    @property
    def examples(self) -> tuple[LabeledExample, ...]:
        if self._examples is None:
            self._examples = tuple(self.source.atom(int(i)) for i in self.atom_indices)
        return self._examples

    @property
    def dim(self) -> int:
        if self.source is not None:
            return self.source.dim
        return self.examples[0].point.dim

    def __len__(self) -> int:
        return self.m

    def __iter__(self):
        return iter(self.examples)

    def margins(self, w: Hyperplane) -> np.ndarray:
        if self.source is not None:
            return self.source.atom_margins(w, self.atom_indices)
        return np.array([margin(w, ex) for ex in self.examples])

    def labels(self) -> np.ndarray:
        if self.source is not None and hasattr(self.source, "labels"):
            return self.source.labels[self.atom_indices]
        return np.array([ex.label for ex in self.examples], dtype=np.int64)

    def dense_matrix(self) -> np.ndarray:
        """Points as rows of a dense ``m x d`` array (small dimensions only)."""
        X = np.zeros((self.m, self.dim))
        for r, ex in enumerate(self.examples):
            X[r, ex.point.indices] = ex.point.values
        return X

    def atom_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct atom indices in the sample and how often each occurs."""
        if self.atom_indices is None:
            raise ValueError("sample was not drawn from a distribution")
        return np.unique(self.atom_indices, return_counts=True)

    def __add__(self, other: "Sample") -> "Sample":
        return Sample(self.examples + other.examples)


def empirical_margin_loss(S: Sample, w: Hyperplane, theta: float, mode: str = STRICT) -> float:
    """Fraction of the sample with margin under ``theta``."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    if S.m == 0:
        raise ValueError("empty sample")
    return int(below(S.margins(w), theta, mode).sum()) / S.m


def exact_out_of_sample_error(D: AtomDistribution, w: Hyperplane) -> float:
    """``Pr_D[y <x, w> <= 0]`` summed exactly over atoms."""
    return D.margin_mass(w, 0.0, WEAK)


def exact_margin_error(D: AtomDistribution, w: Hyperplane, theta: float,
                       mode: str = STRICT) -> float:
    """``Pr_D[y <x, w> < theta]`` (or ``<=`` in weak mode), exactly."""
    return D.margin_mass(w, theta, mode)


def sample_from(D: AtomDistribution, m: int, rng: RngStream) -> Sample:
    """``m`` i.i.d. draws by inverse CDF over the atoms."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return Sample(source=D, atom_indices=D.draw_indices(int(m), rng))


def empirical_distribution(S: Sample, radius: float | None = None) -> FiniteDistribution:
    """Uniform distribution over a sample, merging repeated examples."""
    weights: dict = {}
    for ex in S.examples:
        weights[(ex.point, ex.label)] = weights.get((ex.point, ex.label), 0) + 1
    if radius is None:
        radius = max(p.norm() for p, _ in weights) or 1.0
    atoms = [(LabeledExample(p, y), c / S.m) for (p, y), c in weights.items()]
    return FiniteDistribution(atoms, radius)
