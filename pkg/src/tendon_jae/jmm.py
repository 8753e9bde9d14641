"""Polynomial joint-muscle mapping.

Each muscle's calibrated length is a multivariate polynomial in the joint
angles. Angles are first mapped affinely to [-1, 1] per joint so that the
Gram matrix stays well conditioned at degree 4-6. Coefficients are found by
accumulating normal equations chunk by chunk over a sample stream, so the
grid never has to be held in memory.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CapacityExceeded, InsufficientSamples, LengthMismatch, RankDeficient
from .model import KinematicModel, muscle_lengths_batch

BASIS_LIMIT = 10**6
# Fixed accumulation block; chunking never depends on worker count.
CHUNK = 4096
FORMAT = "tendon_jae.jmm/1"


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    dof_count: int
    degree: int
    multi_indices: np.ndarray  # (B, D) int exponents, graded-lex

    def __len__(self):
        return self.multi_indices.shape[0]

    def __post_init__(self):
        A = self.multi_indices
        D = self.dof_count
        # first-derivative tables: coefficient A[:, j], exponents A - e_j
        d1c = np.empty((D,) + A.shape[:1])
        d1e = np.empty((D,) + A.shape, dtype=int)
        for j in range(D):
            d1c[j] = A[:, j]
            e = A.copy()
            e[:, j] -= 1
            d1e[j] = np.maximum(e, 0)
        d2c = np.empty((D, D) + A.shape[:1])
        d2e = np.empty((D, D) + A.shape, dtype=int)
        for j in range(D):
            for k in range(D):
                e = A.copy()
                e[:, j] -= 1
                e[:, k] -= 1
                c = A[:, j] * (A[:, k] - (1 if j == k else 0))
                d2c[j, k] = np.where((e >= 0).all(axis=1), c, 0)
                d2e[j, k] = np.maximum(e, 0)
        object.__setattr__(self, "_d1", (d1c, d1e))
        object.__setattr__(self, "_d2", (d2c, d2e))

    def _powers(self, x):
        # x: (..., D) -> (..., D, P+1)
        return x[..., :, None] ** np.arange(self.degree + 1)

    def _gather(self, pw, exps):
        # pw (n, D, P+1), exps (B, D) -> (n, B)
        D = self.dof_count
        return np.prod(pw[:, np.arange(D)[None, :], exps], axis=-1)

    def evaluate(self, x) -> np.ndarray:
        """Basis values for normalized inputs, shape (n, B) for (n, D) input."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._gather(self._powers(x), self.multi_indices)

    def gradient(self, x) -> np.ndarray:
        """d phi_b / d x_j at a single point, shape (D, B)."""
        pw = self._powers(np.asarray(x, dtype=float)[None, :])
        d1c, d1e = self._d1
        return np.stack([d1c[j] * self._gather(pw, d1e[j])[0] for j in range(self.dof_count)])

    def hessian(self, x) -> np.ndarray:
        """d^2 phi_b / dx_j dx_k at a single point, shape (D, D, B)."""
        pw = self._powers(np.asarray(x, dtype=float)[None, :])
        d2c, d2e = self._d2
        D = self.dof_count
        out = np.empty((D, D, len(self)))
        for j in range(D):
            for k in range(j, D):
                out[j, k] = d2c[j, k] * self._gather(pw, d2e[j, k])[0]
                out[k, j] = out[j, k]
        return out


def basis_size(dof_count: int, degree: int) -> int:
    return math.comb(dof_count + degree, degree)


def enumerate_basis(dof_count: int, degree: int, limit: int = BASIS_LIMIT) -> MonomialBasis:
    """All monomials of total degree <= ``degree`` in ``dof_count`` variables.

    Ordering is graded: constant first, then by total degree, and within a
    degree the exponent vectors descend lexicographically, so for two
    variables the order is 1, x1, x2, x1^2, x1 x2, x2^2.
    """
    if dof_count < 1 or degree < 0:
        raise ValueError("need dof_count >= 1 and degree >= 0")
    count = basis_size(dof_count, degree)
    if count > limit:
        raise CapacityExceeded(f"{count} monomials for D={dof_count}, P={degree} exceeds limit {limit}")
    A = np.zeros((count, dof_count), dtype=int)
    row = 0
    for d in range(degree + 1):
        # a multiset of variable indices of size d is one monomial of degree d
        for combo in itertools.combinations_with_replacement(range(dof_count), d):
            for v in combo:
                A[row, v] += 1
            row += 1
    A.setflags(write=False)
    return MonomialBasis(dof_count, degree, A)


# --- datasets --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    per_joint_samples: tuple
    ranges: tuple  # ((lo, hi), ...) radians

    def __post_init__(self):
        if len(self.per_joint_samples) != len(self.ranges):
            raise LengthMismatch("per_joint_samples and ranges differ in length")
        for i, n in enumerate(self.per_joint_samples):
            if int(n) != n or n < 2:
                raise ValueError(f"per_joint_samples[{i}] must be an integer >= 2")
        for i, (lo, hi) in enumerate(self.ranges):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"ranges[{i}] must be finite with lo < hi")

    @property
    def total(self) -> int:
        return math.prod(int(n) for n in self.per_joint_samples)

    @classmethod
    def uniform(cls, model: KinematicModel, joints, n: int) -> "DatasetSpec":
        """N samples per joint across each joint's full limit range."""
        idx = [model.joint_index(j) for j in joints]
        return cls(tuple([n] * len(idx)), tuple((model.joints[i].lower_limit, model.joints[i].upper_limit) for i in idx))


@dataclass
class SampleStream:
    """Lazy grid of (theta, calibrated lengths) pairs over selected joints.

    Iteration order is mixed-radix over grid indices with the last joint
    varying fastest. Joints not selected are held at zero.
    """

    model: KinematicModel
    spec: DatasetSpec
    joints: list
    muscles: list
    _axes: list = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.joints) != len(self.spec.per_joint_samples):
            raise LengthMismatch("dataset spec must give one sample count per selected joint")
        self._jidx = np.array([self.model.joint_index(j) for j in self.joints], dtype=int)
        self._midx = np.array([self.model.muscle_index(m) for m in self.muscles], dtype=int)
        self._axes = [np.linspace(lo, hi, int(n)) for n, (lo, hi) in zip(self.spec.per_joint_samples, self.spec.ranges)]
        self._ref = muscle_lengths_batch(self.model, np.zeros((1, self.model.dof)))[0, self._midx]

    def __len__(self):
        return self.spec.total

    @property
    def ranges(self):
        return self.spec.ranges

    def count(self) -> int:
        """Count samples by walking the index grid without evaluating lengths."""
        return sum(1 for _ in itertools.product(*(range(int(n)) for n in self.spec.per_joint_samples)))

    def thetas(self, start: int, stop: int) -> np.ndarray:
        """Grid poses with flat indices in [start, stop), over the selected joints."""
        dims = [int(n) for n in self.spec.per_joint_samples]
        flat = np.arange(start, stop)
        idx = np.unravel_index(flat, dims)
        return np.stack([ax[i] for ax, i in zip(self._axes, idx)], axis=1)

    def block(self, start: int, stop: int):
        th = self.thetas(start, stop)
        full = np.zeros((th.shape[0], self.model.dof))
        full[:, self._jidx] = th
        L = muscle_lengths_batch(self.model, full)[:, self._midx] - self._ref
        return th, L

    def chunks(self, size: int = CHUNK):
        n = len(self)
        for start in range(0, n, size):
            yield self.block(start, min(start + size, n))

    def __iter__(self):
        for th, L in self.chunks():
            yield from zip(th, L)


def sample_grid(model: KinematicModel, spec: DatasetSpec, joints, muscles) -> SampleStream:
    return SampleStream(model, spec, list(joints), list(muscles))


# --- the fitted mapping ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolynomialJMM:
    basis: MonomialBasis
    coefficients: np.ndarray  # (M, B)
    muscle_names: tuple
    joint_names: tuple
    center: np.ndarray
    half_range: np.ndarray

    def __post_init__(self):
        M, B = self.coefficients.shape
        if B != len(self.basis):
            raise LengthMismatch(f"coefficient columns {B} != basis size {len(self.basis)}")
        if M != len(self.muscle_names) or len(self.joint_names) != self.basis.dof_count:
            raise LengthMismatch("name lists do not match coefficient/basis shape")

    @property
    def dof(self):
        return self.basis.dof_count

    def normalize(self, theta):
        return (np.asarray(theta, dtype=float) - self.center) / self.half_range

    def in_domain(self, theta, slack: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.normalize(theta)) <= 1.0 + slack))

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.dof,):
            raise LengthMismatch(f"JMM expects {self.dof} angles ({', '.join(self.joint_names)}), got {theta.shape}")
        return theta


def evaluate(jmm: PolynomialJMM, theta, return_flag: bool = False):
    """Calibrated muscle lengths predicted at ``theta``.

    Accepts one pose (D,) or a batch (n, D). With ``return_flag`` the result
    is ``(lengths, inside)`` where ``inside`` reports whether every pose lies
    in the fitted range; extrapolation is allowed but flagged.
    """
    theta = jmm._check(theta)
    phi = jmm.basis.evaluate(jmm.normalize(theta))
    out = phi @ jmm.coefficients.T
    if theta.ndim == 1:
        out = out[0]
    if return_flag:
        return out, jmm.in_domain(theta)
    return out


def jacobian(jmm: PolynomialJMM, theta) -> np.ndarray:
    """Muscle Jacobian dl/dtheta [m/rad], shape (M, D)."""
    theta = jmm._check(theta)
    dphi = jmm.basis.gradient(jmm.normalize(theta))  # (D, B) w.r.t. normalized x
    return (jmm.coefficients @ dphi.T) / jmm.half_range


def jacobian_directional_derivative(jmm: PolynomialJMM, theta, dtheta) -> np.ndarray:
    """H[i, j] = sum_k d^2 f_i / dtheta_j dtheta_k * dtheta[k], shape (M, D)."""
    theta = jmm._check(theta)
    dtheta = np.asarray(dtheta, dtype=float)
    if dtheta.shape != (jmm.dof,):
        raise LengthMismatch(f"dtheta must have length {jmm.dof}")
    hphi = jmm.basis.hessian(jmm.normalize(theta))  # (D, D, B)
    h = jmm.half_range
    scaled = hphi / (h[:, None, None] * h[None, :, None])
    # contract over k with dtheta, then with coefficients over B
    contracted = np.einsum("jkb,k->jb", scaled, dtheta)
    return jmm.coefficients @ contracted.T


# --- fitting ---------------------------------------------------------------

def _partial_normal_equations(basis, center, half, th, L):
    phi = basis.evaluate((th - center) / half)
    return phi.T @ phi, phi.T @ L


def _buffer(pairs, size):
    th, L = [], []
    for t, l in pairs:
        th.append(np.asarray(t, dtype=float))
        L.append(np.asarray(l, dtype=float))
        if len(th) == size:
            yield np.array(th), np.array(L)
            th, L = [], []
    if th:
        yield np.array(th), np.array(L)


@dataclass
class FitInfo:
    samples: int
    basis_size: int
    rank: int
    condition: float
    ridge_absolute: float


def fit(samples, basis: MonomialBasis, ridge: float = 1e-10, ranges=None, joint_names=None,
        muscle_names=None, workers: int = 1, anchor=None, return_info: bool = False):
    """Least-squares polynomial fit over a stream of (theta, lengths) samples.

    ``ridge`` is relative: the penalty added to the Gram diagonal is
    ``ridge * trace(Gram) / B``. ``ranges`` defaults to the stream's own
    ranges when it is a :class:`SampleStream`. Worker threads only compute
    per-chunk partial sums; those are reduced in chunk order, so the result
    does not depend on ``workers``.

    ``anchor`` (a pose in JMM joint order) shifts the constant term so the
    fitted lengths are exactly zero there, matching the calibration pose.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if isinstance(samples, SampleStream):
        ranges = samples.ranges if ranges is None else ranges
        joint_names = samples.joints if joint_names is None else joint_names
        muscle_names = samples.muscles if muscle_names is None else muscle_names
        n_total = len(samples)
        if n_total < len(basis):
            raise InsufficientSamples(f"{n_total} samples < {len(basis)} basis functions")
        chunks = (
            (lambda s=s: samples.block(s, min(s + CHUNK, n_total))) for s in range(0, n_total, CHUNK)
        )
    else:
        if ranges is None:
            raise ValueError("ranges are required when fitting a plain iterable of samples")
        chunks = ((lambda c=c: c) for c in _buffer(samples, CHUNK))

    ranges = np.asarray(ranges, dtype=float)
    if ranges.shape != (basis.dof_count, 2):
        raise LengthMismatch(f"need one (lo, hi) range per basis variable ({basis.dof_count})")
    center = 0.5 * (ranges[:, 0] + ranges[:, 1])
    half = 0.5 * (ranges[:, 1] - ranges[:, 0])

    def work(make):
        th, L = make()
        if th.shape[1] != basis.dof_count:
            raise LengthMismatch(f"sample has {th.shape[1]} angles, basis expects {basis.dof_count}")
        return th.shape[0], L.shape[1], _partial_normal_equations(basis, center, half, th, L)

    gram = rhs = None
    count = 0
    n_muscles = None
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(work, chunks)
            for n, m, (g, r) in results:
                gram, rhs, count, n_muscles = _reduce(gram, rhs, g, r, count, n, n_muscles, m)
    else:
        for make in chunks:
            n, m, (g, r) = work(make)
            gram, rhs, count, n_muscles = _reduce(gram, rhs, g, r, count, n, n_muscles, m)

    B = len(basis)
    if count < B:
        raise InsufficientSamples(f"{count} samples < {B} basis functions")
    lam = ridge * np.trace(gram) / B
    A = gram + lam * np.eye(B)
    sol, _, rank, sv = scipy.linalg.lstsq(A, rhs, lapack_driver="gelsy")
    eig = np.linalg.eigvalsh(gram)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    if ridge == 0 and rank < B:
        raise RankDeficient(int(rank), B, cond)
    if muscle_names is None:
        muscle_names = [f"m{i}" for i in range(n_muscles)]
    if joint_names is None:
        joint_names = [f"q{i}" for i in range(basis.dof_count)]
    C = np.ascontiguousarray(sol.T)
    if anchor is not None:
        phi0 = basis.evaluate((np.asarray(anchor, dtype=float) - center) / half)[0]
        C[:, 0] -= C @ phi0
    jmm = PolynomialJMM(basis, C, tuple(muscle_names), tuple(joint_names), center, half)
    if return_info:
        return jmm, FitInfo(count, B, int(rank), cond, float(lam))
    return jmm


def _reduce(gram, rhs, g, r, count, n, n_muscles, m):
    if gram is None:
        return g.copy(), r.copy(), n, m
    if m != n_muscles:
        raise LengthMismatch("samples disagree on muscle count")
    gram += g
    rhs += r
    return gram, rhs, count + n, n_muscles


# --- persistence -----------------------------------------------------------

def jmm_to_dict(jmm: PolynomialJMM) -> dict:
    return {
        "format": FORMAT,
        "joint_names": list(jmm.joint_names),
        "muscle_names": list(jmm.muscle_names),
        "basis": {
            "dof_count": jmm.basis.dof_count,
            "degree": jmm.basis.degree,
            "ordering": "graded-lex",
            "multi_indices": jmm.basis.multi_indices.tolist(),
        },
        "normalization": {"center_rad": jmm.center.tolist(), "half_range_rad": jmm.half_range.tolist()},
        "coefficients": {"shape": list(jmm.coefficients.shape), "row_major": jmm.coefficients.ravel().tolist()},
    }


def jmm_from_dict(doc: dict) -> PolynomialJMM:
    if doc.get("format") != FORMAT:
        raise ValueError(f"unsupported JMM format {doc.get('format')!r}")
    b = doc["basis"]
    basis = enumerate_basis(int(b["dof_count"]), int(b["degree"]))
    if "multi_indices" in b and not np.array_equal(np.asarray(b["multi_indices"]), basis.multi_indices):
        raise ValueError("stored multi-indices do not match graded-lex enumeration")
    shape = tuple(doc["coefficients"]["shape"])
    C = np.asarray(doc["coefficients"]["row_major"], dtype=float).reshape(shape)
    norm = doc["normalization"]
    return PolynomialJMM(basis, C, tuple(doc["muscle_names"]), tuple(doc["joint_names"]),
                         np.asarray(norm["center_rad"], dtype=float), np.asarray(norm["half_range_rad"], dtype=float))


def save_jmm(jmm: PolynomialJMM, path):
    # json writes floats with repr(), which round-trips exactly
    with open(path, "w") as fh:
        json.dump(jmm_to_dict(jmm), fh, indent=1)


def load_jmm(path) -> PolynomialJMM:
    with open(path) as fh:
        return jmm_from_dict(json.load(fh))
