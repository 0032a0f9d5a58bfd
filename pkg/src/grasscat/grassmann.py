"""Exact joint, marginal, and conditional probabilities of the determinantal
binary distribution, plus moments and the positivity check.

The distribution over bit vectors y of length q is parametrized by a
nonsingular q x q matrix lam (with sig = lam^-1 cached alongside):

    p(y) = det((lam - I)[R1, R1]) / det(lam),     R1 = {r : y_r = 1},

with the empty minor's determinant defined as 1.  Validity requires lam - I
to be a P0-matrix (all principal minors nonnegative) and det(lam) > 0, which
together make every state probability nonnegative; the probabilities then sum
to one identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConditioningError, ParameterError

_CLAMP = 1e-12  # exact-zero structure produces tiny negative round-off
_CONSISTENCY_TOL = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GrassmannParams:
    """Matrix parameter of the distribution and its cached inverse.

    Construct through :meth:`from_lambda` or :meth:`from_sigma`; both enforce
    ``lam @ sig = I`` elementwise within 1e-10.
    """

    lam: np.ndarray
    sig: np.ndarray

    def __post_init__(self) -> None:
        lam, sig = self.lam, self.sig
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise ParameterError(f"lam must be square, got shape {lam.shape}")
        if sig.shape != lam.shape:
            raise ParameterError("lam and sig shapes differ")
        if lam.size and not (np.isfinite(lam).all() and np.isfinite(sig).all()):
            raise ParameterError("parameters contain non-finite entries")
        q = lam.shape[0]
        if q:
            err = np.abs(lam @ sig - np.eye(q)).max()
            if err > _CONSISTENCY_TOL:
                raise ParameterError(
                    f"lam @ sig deviates from identity by {err:.3e} (tol {_CONSISTENCY_TOL})"
                )
        object.__setattr__(self, "lam", _freeze(lam))
        object.__setattr__(self, "sig", _freeze(sig))

    @classmethod
    def from_lambda(cls, lam: np.ndarray) -> "GrassmannParams":
        lam = np.asarray(lam, dtype=float)
        try:
            sig = np.linalg.inv(lam) if lam.size else np.zeros_like(lam)
        except np.linalg.LinAlgError as exc:
            raise ParameterError(f"lam is singular: {exc}") from exc
        return cls(lam=lam, sig=sig)

    @classmethod
    def from_sigma(cls, sig: np.ndarray) -> "GrassmannParams":
        sig = np.asarray(sig, dtype=float)
        try:
            lam = np.linalg.inv(sig) if sig.size else np.zeros_like(sig)
        except np.linalg.LinAlgError as exc:
            raise ParameterError(f"sig is singular: {exc}") from exc
        return cls(lam=lam, sig=sig)

    @property
    def q(self) -> int:
        return self.lam.shape[0]


@dataclass(frozen=True)
class IndexPartition:
    """Disjoint split of 0..q-1 into S and T, with T further split by
    observed value: T1 (observed 1) and T0 = T minus T1 (observed 0)."""

    S: tuple[int, ...]
    T: tuple[int, ...]
    T1: tuple[int, ...]

    def __post_init__(self) -> None:
        S, T, T1 = map(tuple, (sorted(self.S), sorted(self.T), sorted(self.T1)))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "T1", T1)
        if set(S) & set(T):
            raise ParameterError(f"S and T overlap: {set(S) & set(T)}")
        if not set(T1) <= set(T):
            raise ParameterError("T1 must be a subset of T")

    @property
    def T0(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.T) - set(self.T1)))

    def validate_cover(self, q: int) -> None:
        if set(self.S) | set(self.T) != set(range(q)):
            raise ParameterError(f"S + T must cover 0..{q - 1}")


def _as_index_set(T: Sequence[int], q: int) -> np.ndarray:
    idx = np.asarray(sorted(T), dtype=int)
    if idx.size != len(set(int(i) for i in T)):
        raise ParameterError(f"index set {T} contains duplicates")
    if idx.size and (idx[0] < 0 or idx[-1] >= q):
        raise ParameterError(f"index set {T} out of range 0..{q - 1}")
    return idx


def joint_probability(p: GrassmannParams, y: Sequence[int]) -> float:
    """Probability of the full bit vector ``y``.

    Computed as det((lam - I)[R1, R1]) / det(lam).  Values within 1e-12 below
    zero are clamped to exactly zero; anything more negative is returned as is
    so invalid parameters remain visible.
    """
    y = np.asarray(y)
    if y.shape != (p.q,):
        raise ParameterError(f"y must have length {p.q}, got shape {y.shape}")
    sign_l, logdet_l = np.linalg.slogdet(p.lam) if p.q else (1.0, 0.0)
    if sign_l == 0:
        raise ParameterError("lam is singular")
    r1 = np.flatnonzero(y)
    if r1.size:
        minor = p.lam[np.ix_(r1, r1)] - np.eye(r1.size)
        sign_m, logdet_m = np.linalg.slogdet(minor)
    else:
        sign_m, logdet_m = 1.0, 0.0
    if sign_m == 0:
        return 0.0
    prob = sign_m * sign_l * np.exp(logdet_m - logdet_l)
    if -_CLAMP <= prob < 0.0:
        prob = 0.0
    return float(prob)


def marginal_params(p: GrassmannParams, T: Sequence[int]) -> GrassmannParams:
    """Parameter of the marginal distribution over index set T: just sig[T, T]."""
    idx = _as_index_set(T, p.q)
    if idx.size == 0:
        raise ParameterError("marginal index set must be nonempty")
    sub = p.sig[np.ix_(idx, idx)]
    try:
        return GrassmannParams.from_sigma(sub)
    except ParameterError as exc:
        raise ParameterError(f"sig[T, T] is singular for T={list(idx)}") from exc


def _solve_pivot(block: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """Solve block @ x = rhs, treating (near-)singular blocks as conditioning
    on an event of probability zero."""
    if block.size:
        rcond = 1.0 / np.linalg.cond(block)
        if not np.isfinite(rcond) or rcond < 1e-12:
            raise ConditioningError(
                f"conditioning event has probability zero ({what} is singular)"
            )
    try:
        return np.linalg.solve(block, rhs)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"conditioning event has probability zero ({what} is singular)"
        ) from exc


def conditional_params(p: GrassmannParams, part: IndexPartition) -> GrassmannParams:
    """Parameter of the conditional distribution of y_S given y_T.

    The conditioning matrix is sig with its T1 columns negated and the
    identity added on the T1 diagonal; the conditional parameter is its Schur
    complement onto S.  The equivalent lam-side expression
    ``inv(lam[S,S] - lam[S,T1] inv(lam[T1,T1] - I) lam[T1,S])`` is evaluated
    as well and the two are required to agree within 1e-9.
    """
    part.validate_cover(p.q)
    S = np.asarray(part.S, dtype=int)
    T = np.asarray(part.T, dtype=int)
    T1 = np.asarray(part.T1, dtype=int)
    if S.size == 0:
        raise ParameterError("conditional target set S must be nonempty")

    tilde = p.sig.copy()
    if T1.size:
        tilde[:, T1] *= -1.0
        tilde[T1, T1] += 1.0
    if T.size:
        tt = tilde[np.ix_(T, T)]
        solve_ts = _solve_pivot(tt, tilde[np.ix_(T, S)], "the conditioning block")
        schur = tilde[np.ix_(S, S)] - tilde[np.ix_(S, T)] @ solve_ts
    else:
        schur = tilde[np.ix_(S, S)]

    # cross-check through the lam-side formula whenever it is defined
    lam_ss = p.lam[np.ix_(S, S)]
    if T1.size:
        pivot = p.lam[np.ix_(T1, T1)] - np.eye(T1.size)
        corr = p.lam[np.ix_(S, T1)] @ _solve_pivot(
            pivot, p.lam[np.ix_(T1, S)], "lam[T1,T1] - I"
        )
        lam_form = lam_ss - corr
    else:
        lam_form = lam_ss
    try:
        sig_from_lam = np.linalg.inv(lam_form)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("conditional parameter is singular") from exc
    scale = 1.0 + np.abs(schur).max()
    err = np.abs(sig_from_lam - schur).max()
    if err > 1e-9 * scale:
        raise ParameterError(
            f"conditional parameter forms disagree by {err:.3e}; "
            "the parameter is too ill-conditioned to trust"
        )
    return GrassmannParams.from_sigma(schur)


def moments(p: GrassmannParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix of the dummy bits.

    mean_r = 1 - sig_rr; cov_rs = -sig_rs sig_sr off the diagonal; the
    diagonal carries the Bernoulli variance sig_rr (1 - sig_rr), which is
    forced by y_r**2 = y_r.
    """
    d = np.diag(p.sig).copy()
    mean = 1.0 - d
    cov = -(p.sig * p.sig.T)
    np.fill_diagonal(cov, d * (1.0 - d))
    return mean, cov


def conditional_zero_moments(p: GrassmannParams, r: int, s: int) -> tuple[float, float]:
    """Conditional mean of y_r and covariance of (y_r, y_s) given that every
    other bit is observed as zero."""
    if r == s:
        raise ParameterError("indices r and s must differ")
    lam = p.lam
    if abs(lam[r, r]) < 1e-300:
        raise ConditioningError(f"lam[{r},{r}] is zero; conditional mean undefined")
    cond_mean = 1.0 - 1.0 / lam[r, r]
    denom = lam[r, r] * lam[s, s] - lam[r, s] * lam[s, r]
    if abs(denom) < 1e-300:
        raise ConditioningError("degenerate 2x2 pivot; conditional covariance undefined")
    cond_cov = -lam[r, s] * lam[s, r] / denom**2
    return float(cond_mean), float(cond_cov)


def _minor_dets(mat: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """Determinants of mat[idx, idx] for a batch of equal-size index rows."""
    if subsets.shape[1] == 0:
        return np.ones(subsets.shape[0])
    minors = mat[subsets[:, :, None], subsets[:, None, :]]
    return np.linalg.det(minors)


def all_state_probabilities(p: GrassmannParams, cap: int | None = None) -> np.ndarray:
    """Probabilities of all 2**q states, ordered by the binary value of the
    bit vector with bit 0 least significant."""
    from .caps import bit_cap as _bit_cap
    from .errors import EnumerationCapError

    q = p.q
    limit = _bit_cap(cap)
    if q > limit:
        raise EnumerationCapError(
            f"q={q} exceeds the 2**q enumeration cap (cap {limit}); "
            "rely on the structured-parameter dominance certificate instead"
        )
    lam_mi = p.lam - np.eye(q)
    det_l = np.linalg.det(p.lam) if q else 1.0
    if det_l == 0:
        raise ParameterError("lam is singular")
    masks = np.arange(2**q, dtype=np.int64)
    popcounts = np.zeros(2**q, dtype=int)
    bits = np.zeros((2**q, q), dtype=bool)
    for b in range(q):
        bits[:, b] = (masks >> b) & 1
    popcounts = bits.sum(axis=1)
    probs = np.empty(2**q)
    for k in range(q + 1):
        rows = np.flatnonzero(popcounts == k)
        if rows.size == 0:
            continue
        subsets = np.argsort(~bits[rows], axis=1, kind="stable")[:, :k]
        subsets = np.sort(subsets, axis=1)
        # chunk to bound memory for large q
        chunk = max(1, 2**22 // max(1, k * k))
        for lo in range(0, rows.size, chunk):
            sl = slice(lo, lo + chunk)
            probs[rows[sl]] = _minor_dets(lam_mi, subsets[sl]) / det_l
    return probs


@dataclass(frozen=True)
class P0Report:
    """Outcome of the exhaustive positivity check."""

    n_states: int
    min_probability: float
    argmin_state: tuple[int, ...]
    probability_sum: float
    passed: bool


def check_p0(p: GrassmannParams, cap: int | None = None) -> P0Report:
    """Evaluate all 2**q state probabilities and report the minimum and sum.

    Passing means min >= -1e-12 and |sum - 1| <= 1e-10, which is equivalent
    to lam - I being a P0-matrix with det(lam) > 0 up to round-off.
    """
    probs = all_state_probabilities(p, cap=cap)
    imin = int(np.argmin(probs))
    state = tuple((imin >> b) & 1 for b in range(p.q))
    total = float(probs.sum())
    passed = probs[imin] >= -1e-12 and abs(total - 1.0) <= 1e-10
    return P0Report(
        n_states=probs.size,
        min_probability=float(probs[imin]),
        argmin_state=state,
        probability_sum=total,
        passed=bool(passed),
    )
