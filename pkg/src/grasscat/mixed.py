"""Joint distribution coupling continuous variables with binary dummies.

The joint density over (x in R^p, y in {0,1}^q) is

    p(x, y) = pi_{R1}(sigma) N(x | mu + sigma G^T 1_{R1}, sigma),
    pi_{R1}(sigma) propto det((lam - I)[R1, R1]) exp(1_{R1}^T G sigma G^T 1_{R1} / 2),

normalized over all 2**q subsets R1.  Marginals over any mix of continuous
and binary coordinates stay closed form (a mixture of equal-covariance
normals), and so do conditionals; when conditioning on all continuous
variables the binary block is again of determinantal form with an
exponential tilt applied columnwise.

Index bookkeeping follows an explicit partition: continuous indices split
into (J, L, K) and binary into (S, U, T), where J/S are query coordinates,
L/U are marginalized (missing), and K/T are conditioned on.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .caps import bit_cap
from .errors import EnumerationCapError, ParameterError
from .grassmann import GrassmannParams

_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)  # identity hash lets weight tables memoize
class MixedParams:
    """(mu, sigma) of the continuous block, the binary matrix parameter lam,
    and the (q, p) interaction matrix with rows g_s."""

    mu: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    G: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        G = np.asarray(self.G, dtype=float)
        p = mu.shape[0]
        q = lam.shape[0] if lam.ndim == 2 else 0
        if sigma.shape != (p, p):
            raise ParameterError(f"sigma shape {sigma.shape} != ({p},{p})")
        if lam.ndim != 2 or lam.shape != (q, q):
            raise ParameterError("lam must be square")
        if G.shape != (q, p):
            raise ParameterError(f"G shape {G.shape} != ({q},{p})")
        for name, arr in (("mu", mu), ("sigma", sigma), ("lam", lam), ("G", G)):
            if arr.size and not np.isfinite(arr).all():
                raise ParameterError(f"{name} contains non-finite entries")
        if p:
            if np.abs(sigma - sigma.T).max() > 1e-10:
                raise ParameterError("sigma must be symmetric")
            try:
                np.linalg.cholesky(sigma)
            except np.linalg.LinAlgError as exc:
                raise ParameterError("sigma must be positive definite") from exc
        for name, arr in (("mu", mu), ("sigma", sigma), ("lam", lam), ("G", G)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @property
    def q(self) -> int:
        return self.lam.shape[0]


@dataclass(frozen=True)
class MixedPartition:
    """Explicit split of continuous indices into (J, L, K) and binary indices
    into (S, U, T): query / marginalized / conditioned."""

    J: tuple[int, ...]
    L: tuple[int, ...]
    K: tuple[int, ...]
    S: tuple[int, ...]
    U: tuple[int, ...]
    T: tuple[int, ...]

    def __post_init__(self) -> None:
        for name in ("J", "L", "K", "S", "U", "T"):
            object.__setattr__(self, name, tuple(sorted(getattr(self, name))))

    def validate(self, p: int, q: int) -> None:
        cont = (*self.J, *self.L, *self.K)
        if sorted(cont) != list(range(p)):
            raise ParameterError(f"(J, L, K) must partition 0..{p - 1}")
        binr = (*self.S, *self.U, *self.T)
        if sorted(binr) != list(range(q)):
            raise ParameterError(f"(S, U, T) must partition 0..{q - 1}")


def _subsets(indices: tuple[int, ...]):
    for k in range(len(indices) + 1):
        yield from itertools.combinations(indices, k)


def _check_cap(q: int, cap: int | None) -> None:
    limit = bit_cap(cap)
    if q > limit:
        raise EnumerationCapError(f"q={q} exceeds the 2**q enumeration cap {limit}")


def _minor_det(lam_mi: np.ndarray, r1: tuple[int, ...]) -> float:
    if not r1:
        return 1.0
    idx = np.asarray(r1, dtype=int)
    return float(np.linalg.det(lam_mi[np.ix_(idx, idx)]))


def _log_normal(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = x - mean
    n = d.shape[0]
    if n == 0:
        return 0.0
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, d)
    return float(-0.5 * sol @ sol - np.log(np.diag(chol)).sum() - 0.5 * n * _LOG2PI)


def _weight_terms(
    mp: MixedParams, quad_mat: np.ndarray, subsets_iterable
) -> dict[tuple[int, ...], float]:
    """Unnormalized log-free weights det * exp(quad/2) per subset; computed in
    plain (non-log) space since q is capped small."""
    lam_mi = mp.lam - np.eye(mp.q)
    out: dict[tuple[int, ...], float] = {}
    for r1 in subsets_iterable:
        det = _minor_det(lam_mi, r1)
        if det == 0.0:
            out[r1] = 0.0
            continue
        ind = np.zeros(mp.q)
        ind[list(r1)] = 1.0
        quad = float(ind @ quad_mat @ ind)
        out[r1] = det * np.exp(0.5 * quad)
    return out


@functools.lru_cache(maxsize=64)
def _partition_weights_cached(mp: MixedParams) -> dict[tuple[int, ...], float]:
    quad = mp.G @ mp.sigma @ mp.G.T
    terms = _weight_terms(mp, quad, _subsets(tuple(range(mp.q))))
    total = sum(terms.values())
    if not np.isfinite(total) or total <= 0.0:
        raise ParameterError("mixture normalizer is nonpositive; parameters invalid")
    return {k: v / total for k, v in terms.items()}


def _partition_weights(mp: MixedParams, cap: int | None = None) -> dict[tuple[int, ...], float]:
    _check_cap(mp.q, cap)
    return _partition_weights_cached(mp)


def mixed_joint_density(
    mp: MixedParams, x: np.ndarray, y, cap: int | None = None
) -> float:
    """Density of the full vector (x, y); reduces to a plain normal at q = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.shape != (mp.p,) or y.shape != (mp.q,):
        raise ParameterError("x or y has the wrong length")
    weights = _partition_weights(mp, cap)
    r1 = tuple(int(i) for i in np.flatnonzero(y))
    pi = weights[r1]
    if pi == 0.0:
        return 0.0
    ind = y.astype(float)
    mean = mp.mu + mp.sigma @ mp.G.T @ ind
    return pi * np.exp(_log_normal(x, mean, mp.sigma))


def mixed_marginal_density(
    mp: MixedParams,
    part: MixedPartition,
    x_K: np.ndarray,
    y_T,
    cap: int | None = None,
) -> float:
    """Marginal density of (x_K, y_T): everything else is summed/integrated out."""
    part.validate(mp.p, mp.q)
    x_K = np.asarray(x_K, dtype=float)
    y_T = np.asarray(y_T, dtype=int)
    K = list(part.K)
    T = list(part.T)
    if x_K.shape != (len(K),) or y_T.shape != (len(T),):
        raise ParameterError("x_K or y_T has the wrong length")
    weights = _partition_weights(mp, cap)
    t1 = tuple(t for t, bit in zip(T, y_T) if bit)
    free = tuple(sorted((*part.S, *part.U)))
    if K:
        sigma_kk = mp.sigma[np.ix_(K, K)]
        sigma_ki = mp.sigma[K, :]
    total = 0.0
    for extra in _subsets(free):
        r1 = tuple(sorted((*t1, *extra)))
        pi = weights[r1]
        if pi == 0.0:
            continue
        if K:
            ind = np.zeros(mp.q)
            ind[list(r1)] = 1.0
            mean = mp.mu[K] + sigma_ki @ (mp.G.T @ ind)
            total += pi * np.exp(_log_normal(x_K, mean, sigma_kk))
        else:
            total += pi
    return float(total)


def mixed_conditional_density(
    mp: MixedParams,
    part: MixedPartition,
    x_J: np.ndarray,
    y_S,
    x_K: np.ndarray,
    y_T,
    cap: int | None = None,
) -> float:
    """Conditional density of (x_J, y_S) given (x_K, y_T), with (L, U)
    marginalized out.

    Weights use the Schur complement of the retained continuous block and an
    exponential shift from the conditioning values; the continuous factor is
    the usual Gaussian conditional, one component per assignment of the
    missing binaries.
    """
    part.validate(mp.p, mp.q)
    _check_cap(mp.q, cap)
    x_J = np.asarray(x_J, dtype=float)
    x_K = np.asarray(x_K, dtype=float)
    y_S = np.asarray(y_S, dtype=int)
    y_T = np.asarray(y_T, dtype=int)
    J, L, K = list(part.J), list(part.L), list(part.K)
    S, U, T = list(part.S), list(part.U), list(part.T)
    if x_J.shape != (len(J),) or x_K.shape != (len(K),):
        raise ParameterError("x_J or x_K has the wrong length")
    if y_S.shape != (len(S),) or y_T.shape != (len(T),):
        raise ParameterError("y_S or y_T has the wrong length")

    JL = sorted(J + L)
    if K:
        sigma_kk = mp.sigma[np.ix_(K, K)]
        try:
            kk_inv = np.linalg.inv(sigma_kk)
        except np.linalg.LinAlgError as exc:
            raise ParameterError("sigma[K, K] is singular") from exc
        dx = x_K - mp.mu[K]
        shift_vec = mp.G @ mp.sigma[:, K] @ kk_inv @ dx  # (q,)
        sigma_jl_cond = (
            mp.sigma[np.ix_(JL, JL)]
            - mp.sigma[np.ix_(JL, K)] @ kk_inv @ mp.sigma[np.ix_(K, JL)]
        )
    else:
        shift_vec = np.zeros(mp.q)
        sigma_jl_cond = mp.sigma[np.ix_(JL, JL)]

    g_jl = mp.G[:, JL] if JL else np.zeros((mp.q, 0))
    quad = g_jl @ sigma_jl_cond @ g_jl.T
    lam_mi = mp.lam - np.eye(mp.q)

    def weight(r1: tuple[int, ...]) -> float:
        det = _minor_det(lam_mi, r1)
        if det == 0.0:
            return 0.0
        ind = np.zeros(mp.q)
        ind[list(r1)] = 1.0
        return det * float(np.exp(0.5 * ind @ quad @ ind + ind @ shift_vec))

    t1 = tuple(t for t, bit in zip(T, y_T) if bit)
    s1 = tuple(s for s, bit in zip(S, y_S) if bit)

    denom = 0.0
    for extra in _subsets(tuple(sorted(S + U))):
        denom += weight(tuple(sorted((*t1, *extra))))
    if denom <= 0.0:
        raise ParameterError("conditioning event has zero probability")

    # Gaussian conditional pieces for the J coordinates
    if J:
        pos_j = [JL.index(j) for j in J]
        sigma_j_cond = sigma_jl_cond[np.ix_(pos_j, pos_j)]
        if K:
            base_mean = mp.mu[J] + mp.sigma[np.ix_(J, K)] @ kk_inv @ dx
            cross = (
                mp.sigma[np.ix_(J, JL)]
                - mp.sigma[np.ix_(J, K)] @ kk_inv @ mp.sigma[np.ix_(K, JL)]
            )
        else:
            base_mean = mp.mu[J]
            cross = mp.sigma[np.ix_(J, JL)]

    numer = 0.0
    for extra in _subsets(tuple(U)):
        r1 = tuple(sorted((*t1, *s1, *extra)))
        wgt = weight(r1)
        if wgt == 0.0:
            continue
        if J:
            ind = np.zeros(mp.q)
            ind[list(r1)] = 1.0
            mean = base_mean + cross @ (g_jl.T @ ind)
            numer += wgt * np.exp(_log_normal(x_J, mean, sigma_j_cond))
        else:
            numer += wgt
    return float(numer / denom)


def conditional_binary_given_continuous(
    mp: MixedParams,
    x: np.ndarray,
    T: tuple[int, ...] = (),
    y_T=(),
    cap: int | None = None,
) -> GrassmannParams:
    """Parameter of p(y_S | x, y_T) where S is the complement of T.

    The parameter is I + C_st Exp, with C_st the pivot-reduced block
    (lam - I)[S,S] - lam[S,T1] inv(lam[T1,T1] - I) lam[T1,S] and Exp the
    diagonal of exp(g_s @ (x - mu)) over s in S.  Validity for arbitrary x is
    not guaranteed; callers should check the result when it matters.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (mp.p,):
        raise ParameterError(f"x must have length {mp.p}")
    T = tuple(sorted(int(t) for t in T))
    y_T = np.asarray(y_T, dtype=int)
    if y_T.shape != (len(T),):
        raise ParameterError("y_T length must match T")
    S = tuple(i for i in range(mp.q) if i not in set(T))
    if not S:
        raise ParameterError("S is empty; nothing to condition")
    t1 = [t for t, bit in zip(T, y_T) if bit]
    Sl = list(S)
    lam_mi = mp.lam - np.eye(mp.q)
    core = lam_mi[np.ix_(Sl, Sl)]
    if t1:
        pivot = mp.lam[np.ix_(t1, t1)] - np.eye(len(t1))
        rcond = 1.0 / np.linalg.cond(pivot)
        if not np.isfinite(rcond) or rcond < 1e-12:
            raise ParameterError(
                "lam[T1, T1] - I is singular; conditioning event has zero probability"
            )
        core = core - mp.lam[np.ix_(Sl, t1)] @ np.linalg.solve(
            pivot, mp.lam[np.ix_(t1, Sl)]
        )
    tilt = np.exp(mp.G[Sl, :] @ (x - mp.mu))
    lam_cond = np.eye(len(Sl)) + core * tilt[None, :]
    return GrassmannParams.from_lambda(lam_cond)
