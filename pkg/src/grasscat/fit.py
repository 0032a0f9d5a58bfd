"""Maximum-likelihood estimation of the structured parameters.

The objective is the exact negative log likelihood

    nll = - sum_s n_s [ log det((lam - I)[R1(s), R1(s)]) - log det lam ]

over the observed state counts, with an analytic gradient obtained from
d log det M = trace(M^-1 dM) chained through the structured parametrization.
The dominance certificate is enforced by a smooth squared-hinge penalty on
the free-row margins of B = M C and on the strict margins of C, with the
penalty weight raised on a schedule until the margins are feasible.  The
slack factor C rides along as extra optimization variables; it never enters
the likelihood itself.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.optimize

from .errors import DataError, SchemaError
from .grassmann import GrassmannParams, check_p0, moments
from .schema import Record, VariableKind, VariableSchema, encode_record
from .structure import (
    StructuredParams,
    TAU_C,
    aux_loading_matrix,
    dominance_certificate,
    assemble_lambda,
    free_row_indices,
    middle_factor,
    quasi_diagonal_blocks,
    row_margins,
    validate_shapes,
)

INFEASIBLE_NLL = np.inf  # sentinel for states driven to the domain boundary


@dataclass(frozen=True)
class StateCounts:
    """Multiset of observed dummy states: sufficient statistics for the fit."""

    items: tuple[tuple[tuple[int, ...], int], ...]

    @property
    def n(self) -> int:
        return sum(c for _, c in self.items)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        states = np.asarray([bits for bits, _ in self.items], dtype=int)
        counts = np.asarray([c for _, c in self.items], dtype=float)
        return states, counts


def state_counts(schema: VariableSchema, rows: Iterable[Record | Sequence[int]]) -> StateCounts:
    """Aggregate records into exact state counts, preserving first-occurrence order."""
    counts: dict[tuple[int, ...], int] = {}
    n = 0
    for i, row in enumerate(rows):
        rec = row if isinstance(row, Record) else Record(tuple(int(v) for v in row))
        try:
            bits = encode_record(schema, rec).bits
        except SchemaError as exc:
            raise DataError(f"row {i}: {exc}") from exc
        counts[bits] = counts.get(bits, 0) + 1
        n += 1
    if n == 0:
        raise DataError("dataset is empty")
    return StateCounts(items=tuple(counts.items()))


def empirical_moments(
    schema: VariableSchema, counts: StateCounts
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Empirical dummy mean, covariance, and Pearson correlation."""
    states, weights = counts.as_arrays()
    w = weights / weights.sum()
    mean = w @ states
    centered = states - mean
    cov = (w[:, None] * centered).T @ centered
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(std, std)
    np.fill_diagonal(corr, 1.0)
    return mean, cov, corr


# -- likelihood and analytic gradient ---------------------------------------

def _state_index_arrays(counts: StateCounts) -> list[tuple[np.ndarray, float]]:
    return [
        (np.flatnonzero(np.asarray(bits)), float(c)) for bits, c in counts.items
    ]


def negative_log_likelihood(
    schema: VariableSchema, sp: StructuredParams, counts: StateCounts
) -> float:
    """Exact data NLL; +inf when any observed state has nonpositive probability."""
    validate_shapes(schema, sp)
    lam = np.asarray(assemble_lambda(schema, sp).lam)
    return _nll_of_lambda(lam, counts)


def _nll_of_lambda(lam: np.ndarray, counts: StateCounts) -> float:
    q = lam.shape[0]
    sign_l, logdet_l = np.linalg.slogdet(lam)
    if sign_l <= 0:
        return INFEASIBLE_NLL
    lam_mi = lam - np.eye(q)
    total = 0.0
    n = 0.0
    for idx, c in _state_index_arrays_cache(counts):
        if idx.size:
            sign_m, logdet_m = np.linalg.slogdet(lam_mi[np.ix_(idx, idx)])
            if sign_m <= 0:
                return INFEASIBLE_NLL
            total -= c * logdet_m
        n += c
    return float(total + n * logdet_l)


@functools.lru_cache(maxsize=8)
def _state_index_arrays_cache(counts: StateCounts) -> list[tuple[np.ndarray, float]]:
    return _state_index_arrays(counts)


@dataclass(frozen=True)
class FitGradient:
    """NLL gradient in the natural parameters (b, w, V, omega)."""

    b: tuple[np.ndarray, ...]
    w: tuple[np.ndarray, ...]
    V: np.ndarray
    omega: np.ndarray


def _grad_lambda(lam: np.ndarray, counts: StateCounts) -> np.ndarray:
    """d nll / d lam = N inv(lam)^T - sum_s n_s scatter(inv(minor_s)^T)."""
    q = lam.shape[0]
    lam_mi = lam - np.eye(q)
    n = 0.0
    G = np.zeros((q, q))
    for idx, c in _state_index_arrays_cache(counts):
        if idx.size:
            inv_m = np.linalg.inv(lam_mi[np.ix_(idx, idx)])
            G[np.ix_(idx, idx)] -= c * inv_m.T
        n += c
    G += n * np.linalg.inv(lam).T
    return G


def _chain_b(
    schema: VariableSchema, b_vectors: tuple[np.ndarray, ...], G: np.ndarray
) -> tuple[np.ndarray, ...]:
    """Chain an ambient gradient matrix through the quasi-diagonal core."""
    out = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        bv = b_vectors[j]
        if v.kind is VariableKind.CATEGORICAL:
            out.append(np.exp(bv) * G[s:e, s:e].sum(axis=0))
        else:
            psi = np.exp(np.cumsum(bv))
            contrib = psi * G[s, s:e]
            out.append(contrib[::-1].cumsum()[::-1])
    return tuple(out)


def _reduce_w(schema: VariableSchema, G_ambient: np.ndarray) -> tuple[np.ndarray, ...]:
    """Collapse an ambient (q, a) gradient onto the per-variable w vectors."""
    out = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        if v.kind is VariableKind.CATEGORICAL:
            out.append(G_ambient[s:e].sum(axis=0))
        else:
            out.append(G_ambient[s].copy())
    return tuple(out)


def nll_gradient(
    schema: VariableSchema, sp: StructuredParams, counts: StateCounts
) -> FitGradient:
    """Analytic NLL gradient; exact wherever the NLL is finite."""
    validate_shapes(schema, sp)
    lam = np.asarray(assemble_lambda(schema, sp).lam)
    G = _grad_lambda(lam, counts)
    W = aux_loading_matrix(schema, sp.w, sp.a)
    g_b = _chain_b(schema, sp.b, G)
    g_w = _reduce_w(schema, G @ sp.V * sp.omega[None, :])
    g_V = G.T @ W * sp.omega[None, :]
    g_omega = np.einsum("ra,rc,ca->a", W, G, sp.V) if sp.a else np.zeros(0)
    return FitGradient(b=g_b, w=g_w, V=g_V, omega=g_omega)


# -- dominance penalty -------------------------------------------------------

def _margin_grad_rows(mat: np.ndarray, coeff: np.ndarray) -> np.ndarray:
    """Gradient of sum_k coeff_k * margin_k(mat) with margin = 2|d| - row sum."""
    G = -np.sign(mat) * coeff[:, None]
    diag = np.diag(G).copy() + 2.0 * np.sign(np.diag(mat)) * coeff
    np.fill_diagonal(G, diag)
    return G


@dataclass
class _PenaltyGrads:
    value: float
    b: tuple[np.ndarray, ...]
    w: tuple[np.ndarray, ...]
    V: np.ndarray
    C: np.ndarray


def dominance_penalty(
    schema: VariableSchema, sp: StructuredParams, mu: float, tau_c: float = TAU_C
) -> _PenaltyGrads:
    """Squared-hinge penalty on negative free-row margins of B and on C rows
    below the strict threshold, with its gradient."""
    a = sp.a
    M = middle_factor(schema, sp)
    B = M @ sp.C
    free = free_row_indices(schema, a)
    mb = row_margins(B)
    mc = row_margins(sp.C)
    viol_b = np.zeros_like(mb)
    viol_b[free] = np.maximum(0.0, -mb[free])
    viol_c = np.maximum(0.0, tau_c - mc)
    value = mu * float((viol_b**2).sum() + (viol_c**2).sum())

    # d value / d margin = -2 mu viol
    G_B = _margin_grad_rows(B, -2.0 * mu * viol_b)
    G_C = _margin_grad_rows(sp.C, -2.0 * mu * viol_c)
    G_M = G_B @ sp.C.T
    G_C = G_C + M.T @ G_B

    q = schema.q
    W = aux_loading_matrix(schema, sp.w, a)
    g_b = _chain_b(schema, sp.b, G_M[:q, :q])
    g_w = _reduce_w(schema, G_M[:q, :q] @ sp.V - G_M[:q, q:])
    g_V = G_M[:q, :q].T @ W - G_M[q:, :q].T
    return _PenaltyGrads(value=value, b=g_b, w=g_w, V=g_V, C=G_C)


# -- parameter packing -------------------------------------------------------

def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _Packer:
    """Flat-vector view of (b, w, V, rho, E) with omega = sigmoid(rho) and
    C = I + E."""

    def __init__(self, schema: VariableSchema, a: int, optimize_c: bool):
        self.schema = schema
        self.a = a
        self.optimize_c = optimize_c
        sizes = [v.block_size for v in schema.variables]
        self.n_b = sum(sizes)
        self.n_w = len(sizes) * a
        self.n_v = schema.q * a
        self.n_rho = a
        n = schema.q + a
        self.n_e = n * n if optimize_c else 0
        self.size = self.n_b + self.n_w + self.n_v + self.n_rho + self.n_e

    def pack(self, sp: StructuredParams) -> np.ndarray:
        parts = [np.concatenate(sp.b) if sp.b else np.zeros(0)]
        parts.append(np.concatenate(sp.w) if self.a and sp.w else np.zeros(0))
        parts.append(sp.V.ravel())
        omega = np.clip(sp.omega, 1e-6, 1.0 - 1e-6)
        parts.append(_logit(omega))
        if self.optimize_c:
            n = self.schema.q + self.a
            parts.append((sp.C - np.eye(n)).ravel())
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray) -> StructuredParams:
        schema, a = self.schema, self.a
        pos = 0
        b = []
        for v in schema.variables:
            b.append(x[pos : pos + v.block_size].copy())
            pos += v.block_size
        w = []
        for _ in schema.variables:
            w.append(x[pos : pos + a].copy())
            pos += a
        V = x[pos : pos + self.n_v].reshape(schema.q, a).copy()
        pos += self.n_v
        rho = x[pos : pos + a]
        pos += a
        omega = np.clip(_sigmoid(rho), 1e-6, 1.0 - 1e-6)
        n = schema.q + a
        if self.optimize_c:
            C = np.eye(n) + x[pos : pos + n * n].reshape(n, n)
        else:
            C = np.eye(n)
        return StructuredParams(b=tuple(b), w=tuple(w), V=V, omega=omega, C=C)

    def pack_grad(
        self, sp: StructuredParams, g: FitGradient, g_c: np.ndarray | None
    ) -> np.ndarray:
        parts = [np.concatenate(g.b) if g.b else np.zeros(0)]
        parts.append(np.concatenate(g.w) if self.a and g.w else np.zeros(0))
        parts.append(g.V.ravel())
        omega = sp.omega
        parts.append(g.omega * omega * (1.0 - omega))
        if self.optimize_c:
            n = self.schema.q + self.a
            parts.append((g_c if g_c is not None else np.zeros((n, n))).ravel())
        return np.concatenate(parts)

    def bounds(self, b_cap: float) -> list[tuple[float | None, float | None]]:
        bounds: list[tuple[float | None, float | None]] = []
        bounds += [(-b_cap, b_cap)] * self.n_b
        bounds += [(None, None)] * (self.n_w + self.n_v)
        bounds += [(-13.8, 13.8)] * self.n_rho  # keeps omega inside its clamp
        bounds += [(None, None)] * self.n_e
        return bounds


# -- the fit driver ----------------------------------------------------------

@dataclass
class FitConfig:
    """Knobs for fit_grassmann; every random draw flows from ``seed``."""

    a: int = 2
    max_iter: int = 500
    grad_tol: float = 1e-6
    restarts: int = 3
    seed: int = 0
    mu0: float = 10.0
    mu_factor: float = 10.0
    max_ramps: int = 6
    tau_c: float = TAU_C
    b_cap: float = 30.0
    init_scale: float = 0.1
    penalty: bool = True

    def __post_init__(self) -> None:
        if self.max_iter <= 0 or self.grad_tol <= 0 or self.restarts <= 0:
            raise ValueError("max_iter, grad_tol, and restarts must be positive")
        if self.a < 0:
            raise ValueError("a must be nonnegative")


@dataclass
class FitReport:
    """Outcome of a maximum-likelihood fit."""

    nll: float
    iterations: int
    converged: bool
    feasible: bool
    worst_margin_b: float
    worst_margin_b_raw: float
    worst_margin_c: float
    params: StructuredParams
    mean_model: np.ndarray
    mean_empirical: np.ndarray
    corr_model: np.ndarray
    corr_empirical: np.ndarray
    p0_min: float | None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nll": float(self.nll),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "feasible": bool(self.feasible),
            "worst_margin_b": float(self.worst_margin_b),
            "worst_margin_b_raw": float(self.worst_margin_b_raw),
            "worst_margin_c": float(self.worst_margin_c),
            "p0_min": None if self.p0_min is None else float(self.p0_min),
            "mean_model": [float(v) for v in self.mean_model],
            "mean_empirical": [float(v) for v in self.mean_empirical],
            "max_mean_error": float(
                np.max(np.abs(self.mean_model - self.mean_empirical))
            ),
            "max_corr_error": float(
                np.nanmax(np.abs(self.corr_model - self.corr_empirical))
            ),
            "warnings": list(self.warnings),
        }


def _initial_b(
    schema: VariableSchema, counts: StateCounts, b_cap: float, warn: list[str]
) -> list[np.ndarray]:
    """Independent per-variable empirical log-odds, the always-feasible start."""
    states, weights = counts.as_arrays()
    n = weights.sum()
    out = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        block = states[:, s:e]
        level_counts = np.zeros(v.levels)
        if v.kind is VariableKind.CATEGORICAL:
            levels = np.where(block.sum(axis=1) > 0, block.argmax(axis=1) + 1, 0)
        else:
            levels = block.sum(axis=1)
        for lvl, c in zip(levels, weights):
            level_counts[int(lvl)] += c
        p = level_counts / n
        with np.errstate(divide="ignore"):
            if v.kind is VariableKind.CATEGORICAL:
                raw = np.log(p[1:]) - np.log(p[0])
            else:
                raw = np.log(p[1:]) - np.log(p[:-1])
        clipped = np.clip(np.nan_to_num(raw, nan=0.0, posinf=b_cap, neginf=-b_cap),
                          -b_cap, b_cap)
        if np.any(np.abs(raw) > b_cap) or not np.all(np.isfinite(raw)):
            warn.append(
                f"variable {v.name!r}: empirical log-odds clipped to +-{b_cap} "
                "(a level may be unobserved)"
            )
        out.append(clipped)
    return out


def fit_grassmann(
    schema: VariableSchema,
    data: Iterable[Record | Sequence[int]] | StateCounts,
    config: FitConfig | None = None,
) -> FitReport:
    """Penalized quasi-Newton maximum likelihood over the structured family.

    Runs ``config.restarts`` random initializations, each optimized with
    L-BFGS-B under the squared-hinge dominance penalty whose weight is raised
    until the free-row margins are feasible.  The lowest NLL wins, with ties
    broken by the smaller parameter norm.
    """
    config = config or FitConfig()
    counts = data if isinstance(data, StateCounts) else state_counts(schema, data)
    a = config.a
    mean_emp, _, corr_emp = empirical_moments(schema, counts)
    warn: list[str] = []
    b0 = _initial_b(schema, counts, config.b_cap, warn)

    packer = _Packer(schema, a, optimize_c=config.penalty)
    seed_seq = np.random.SeedSequence(config.seed)
    child_seeds = seed_seq.spawn(config.restarts)

    def objective(x: np.ndarray, mu: float) -> tuple[float, np.ndarray]:
        sp = packer.unpack(x)
        lam = _assemble_raw(schema, sp)
        nll = _nll_of_lambda(lam, counts)
        if not np.isfinite(nll):
            return INFEASIBLE_NLL, np.zeros_like(x)
        g = _gradient_natural(schema, sp, lam, counts)
        if config.penalty and mu > 0.0:
            pen = dominance_penalty(schema, sp, mu, config.tau_c)
            g = FitGradient(
                b=tuple(gb + pb for gb, pb in zip(g.b, pen.b)),
                w=tuple(gw + pw for gw, pw in zip(g.w, pen.w)),
                V=g.V + pen.V,
                omega=g.omega,
            )
            return nll + pen.value, packer.pack_grad(sp, g, pen.C)
        return nll, packer.pack_grad(sp, g, None)

    best: tuple[float, float, dict] | None = None
    total_iters = 0
    for r in range(config.restarts):
        rng = np.random.default_rng(child_seeds[r])
        sp0 = StructuredParams(
            b=tuple(np.array(v) for v in b0),
            w=tuple(rng.normal(0.0, config.init_scale, a) for _ in schema.variables),
            V=rng.normal(0.0, config.init_scale, (schema.q, a)),
            omega=np.full(a, 0.5),
            C=np.eye(schema.q + a),
        )
        x = packer.pack(sp0)
        mu = config.mu0 if config.penalty else 0.0
        success = False
        for ramp in range(config.max_ramps if config.penalty else 1):
            # Restarting L-BFGS-B resets its curvature memory, which reliably
            # escapes the flat-progress stalls the hinge kinks can cause.
            f_prev = np.inf
            for _ in range(10):
                res = scipy.optimize.minimize(
                    objective,
                    x,
                    args=(mu,),
                    method="L-BFGS-B",
                    jac=True,
                    bounds=packer.bounds(config.b_cap),
                    options={"maxiter": config.max_iter, "gtol": config.grad_tol,
                             "ftol": 1e-14},
                )
                x = res.x
                total_iters += int(res.nit)
                success = bool(res.success) or res.status == 1
                if f_prev - res.fun < 1e-9 * max(1.0, abs(res.fun)):
                    break
                f_prev = res.fun
            if not config.penalty:
                break
            if dominance_certificate(schema, packer.unpack(x), config.tau_c).passed:
                break
            mu *= config.mu_factor
        sp_fit = packer.unpack(x)
        feasible = dominance_certificate(schema, sp_fit, config.tau_c).passed
        nll = _nll_of_lambda(_assemble_raw(schema, sp_fit), counts)
        norm = float(np.linalg.norm(packer.pack(sp_fit)))
        cand = {"sp": sp_fit, "feasible": feasible, "success": success}
        key = (nll, norm)
        if best is None or key < (best[0], best[1]):
            best = (nll, norm, cand)

    assert best is not None
    nll, _, cand = best
    sp_fit = cand["sp"]
    params = assemble_lambda(schema, sp_fit)
    report = dominance_certificate(schema, sp_fit, config.tau_c)
    mean_model, _ = moments(params)
    corr_model = model_correlation(params)
    p0_min = None
    if schema.q <= 14:
        p0_min = check_p0(params).min_probability
    return FitReport(
        nll=float(nll),
        iterations=total_iters,
        converged=bool(cand["success"]) and bool(cand["feasible"]),
        feasible=bool(cand["feasible"]),
        worst_margin_b=report.worst_b_free,
        worst_margin_b_raw=report.worst_b_raw,
        worst_margin_c=report.worst_c,
        params=sp_fit,
        mean_model=mean_model,
        mean_empirical=mean_emp,
        corr_model=corr_model,
        corr_empirical=corr_emp,
        p0_min=p0_min,
        warnings=warn,
    )


def _assemble_raw(schema: VariableSchema, sp: StructuredParams) -> np.ndarray:
    K = quasi_diagonal_blocks(schema, sp.b)
    W = aux_loading_matrix(schema, sp.w, sp.a)
    return np.eye(schema.q) + K + (W * sp.omega[None, :]) @ sp.V.T


def _gradient_natural(
    schema: VariableSchema, sp: StructuredParams, lam: np.ndarray, counts: StateCounts
) -> FitGradient:
    G = _grad_lambda(lam, counts)
    W = aux_loading_matrix(schema, sp.w, sp.a)
    return FitGradient(
        b=_chain_b(schema, sp.b, G),
        w=_reduce_w(schema, G @ sp.V * sp.omega[None, :]),
        V=G.T @ W * sp.omega[None, :],
        omega=np.einsum("ra,rc,ca->a", W, G, sp.V) if sp.a else np.zeros(0),
    )


def model_correlation(params: GrassmannParams) -> np.ndarray:
    """Pearson correlation implied by the model moments; exact unit diagonal.

    Entries whose variance vanishes are reported as nan.
    """
    _, cov = moments(params)
    std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(std, std)
    np.fill_diagonal(corr, 1.0)
    return corr
