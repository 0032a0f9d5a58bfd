"""Latent-factor model for categorical/ordinal (optionally plus continuous)
observations, with biplot export.

Given a latent z ~ mixture prior, the conditional of the observations is an
uncorrelated normal for the continuous block times independent categorical
and ordinal pmfs whose linear predictors are beta = b + G (z - mu_z).  The
prior mixture is constructed so that everything stays closed form:

    p(z)    = sum_u pi_u N(z | mu_z + sigma_z G^T u, sigma_z)
    pi_u    propto exp(u^T b + u^T G sigma_z G^T u / 2)
    p(x, y) = pi_y N(x | mu_x + W sigma_z G^T y, psi + W sigma_z W^T)
    p(z|x,y)= N(z | m, S),  S = inv(inv(sigma_z) + W^T psi^-1 W),
              m = mu_z + S (W^T psi^-1 (x - mu_x) + G^T y)

with u ranging over the schema's allowed states only.  The factor score of a
data row is the posterior mean m.  The model's rotational freedom is fixed by
diagonalizing G^T G (its nonzero spectrum equals that of G G^T), with axes
ordered by decreasing eigenvalue share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.optimize

from .errors import DataError, ParameterError, SchemaError
from .fit import StateCounts, state_counts, empirical_moments
from .outputs import SvgCanvas, write_csv
from .schema import (
    Record,
    VariableKind,
    VariableSchema,
    encode_record,
    enumerate_allowed_states,
)

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class FactorModel:
    """Parameters of the latent-factor model.

    psi_noise holds the diagonal of the observation-noise covariance.  The
    canonical gauge is mu_z = 0 and sigma_z = I; fitted models are canonical,
    hand-built ones need not be.
    """

    mu_x: np.ndarray
    psi_noise: np.ndarray
    W_load: np.ndarray
    b: np.ndarray
    G: np.ndarray
    mu_z: np.ndarray
    sigma_z: np.ndarray

    def __post_init__(self) -> None:
        for name in ("mu_x", "psi_noise", "W_load", "b", "G", "mu_z", "sigma_z"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        p_x, p_z, q = self.p_x, self.p_z, self.q
        if self.W_load.shape != (p_x, p_z):
            raise ParameterError(f"W_load shape {self.W_load.shape} != ({p_x},{p_z})")
        if self.G.shape != (q, p_z):
            raise ParameterError(f"G shape {self.G.shape} != ({q},{p_z})")
        if self.sigma_z.shape != (p_z, p_z):
            raise ParameterError(f"sigma_z shape {self.sigma_z.shape} != ({p_z},{p_z})")
        if self.psi_noise.shape != (p_x,):
            raise ParameterError("psi_noise must be the diagonal, one entry per x")
        if p_x and np.any(self.psi_noise <= 0):
            raise ParameterError("psi_noise entries must be positive")
        if p_z:
            sym = np.abs(self.sigma_z - self.sigma_z.T).max()
            if sym > 1e-10:
                raise ParameterError("sigma_z must be symmetric")
            try:
                np.linalg.cholesky(self.sigma_z)
            except np.linalg.LinAlgError as exc:
                raise ParameterError("sigma_z must be positive definite") from exc

    @property
    def p_x(self) -> int:
        return self.mu_x.shape[0]

    @property
    def p_z(self) -> int:
        return self.mu_z.shape[0]

    @property
    def q(self) -> int:
        return self.b.shape[0]

    @property
    def is_canonical(self) -> bool:
        return bool(
            np.all(self.mu_z == 0.0)
            and np.array_equal(self.sigma_z, np.eye(self.p_z))
        )

    @classmethod
    def canonical(
        cls, b: np.ndarray, G: np.ndarray, mu_x=None, psi_noise=None, W_load=None
    ) -> "FactorModel":
        b = np.asarray(b, dtype=float)
        G = np.asarray(G, dtype=float)
        p_z = G.shape[1]
        if mu_x is None:
            mu_x = np.zeros(0)
            psi_noise = np.zeros(0)
            W_load = np.zeros((0, p_z))
        return cls(
            mu_x=mu_x,
            psi_noise=psi_noise,
            W_load=W_load,
            b=b,
            G=G,
            mu_z=np.zeros(p_z),
            sigma_z=np.eye(p_z),
        )


def _allowed_state_matrix(schema: VariableSchema, cap: int | None = None) -> np.ndarray:
    states = enumerate_allowed_states(schema, cap)
    return np.asarray([s.bits for s in states], dtype=float)


def _log_weights(Y: np.ndarray, b: np.ndarray, G: np.ndarray, sigma_z: np.ndarray) -> np.ndarray:
    A = G @ sigma_z @ G.T
    return Y @ b + 0.5 * np.einsum("sq,qr,sr->s", Y, A, Y)


def mixture_weights(
    schema: VariableSchema,
    b: np.ndarray,
    G: np.ndarray,
    sigma_z: np.ndarray,
    cap: int | None = None,
) -> dict[tuple[int, ...], float]:
    """Prior mixture weight of every allowed state; weights sum to one."""
    b = np.asarray(b, dtype=float)
    G = np.asarray(G, dtype=float)
    sigma_z = np.asarray(sigma_z, dtype=float)
    Y = _allowed_state_matrix(schema, cap)
    logw = _log_weights(Y, b, G, sigma_z)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return {
        tuple(int(v) for v in row): float(wi) for row, wi in zip(Y.astype(int), w)
    }


def _gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = x - mean
    n = d.shape[0]
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, d)
    return float(
        -0.5 * sol @ sol - np.log(np.diag(chol)).sum() - 0.5 * n * np.log(2 * np.pi)
    )


def observed_density(
    schema: VariableSchema,
    model: FactorModel,
    y: Sequence[int],
    x: Sequence[float] | None = None,
    cap: int | None = None,
) -> float:
    """Joint density of (x, y); the prior weight alone when p_x = 0.

    Disallowed states return exactly 0.
    """
    bits = tuple(int(v) for v in y)
    weights = mixture_weights(schema, model.b, model.G, model.sigma_z, cap)
    if bits not in weights:
        return 0.0
    pi = weights[bits]
    if model.p_x == 0:
        if x is not None and len(np.atleast_1d(x)):
            raise ParameterError("model has no continuous block but x was given")
        return pi
    if x is None:
        raise ParameterError("model has a continuous block; x is required")
    x = np.asarray(x, dtype=float)
    yv = np.asarray(bits, dtype=float)
    mean = model.mu_x + model.W_load @ model.sigma_z @ model.G.T @ yv
    cov = np.diag(model.psi_noise) + model.W_load @ model.sigma_z @ model.W_load.T
    return pi * np.exp(_gaussian_logpdf(x, mean, cov))


def posterior(
    model: FactorModel, y: Sequence[int], x: Sequence[float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean (the factor score) and covariance of z given (x, y)."""
    yv = np.asarray(y, dtype=float)
    if yv.shape != (model.q,):
        raise ParameterError(f"y must have length {model.q}")
    prec_z = np.linalg.inv(model.sigma_z) if model.p_z else np.zeros((0, 0))
    if model.p_x:
        if x is None:
            raise ParameterError("model has a continuous block; x is required")
        x = np.asarray(x, dtype=float)
        wp = model.W_load.T / model.psi_noise[None, :]
        cov = np.linalg.inv(prec_z + wp @ model.W_load)
        m = model.mu_z + cov @ (wp @ (x - model.mu_x) + model.G.T @ yv)
    else:
        cov = model.sigma_z
        m = model.mu_z + model.sigma_z @ (model.G.T @ yv)
    return m, cov


# -- combined loading vectors ------------------------------------------------

@dataclass(frozen=True)
class CombinedLoadings:
    """Per-variable loading vectors, one per level including the base level.

    vectors[j] has shape (levels_j, p_z); row l is the combined vector of
    level l.  The base rows satisfy g_0 = -sum(g_l) for categorical blocks
    and g_0 = -g_last for ordinal blocks.
    """

    vectors: tuple[np.ndarray, ...]
    labels: tuple[tuple[str, ...], ...]


def combined_loadings(schema: VariableSchema, G: np.ndarray) -> CombinedLoadings:
    """Aggregate the rows of G into one loading vector per variable level."""
    G = np.asarray(G, dtype=float)
    if G.shape[0] != schema.q:
        raise SchemaError(f"G has {G.shape[0]} rows, schema dummy dimension is {schema.q}")
    p_z = G.shape[1]
    vectors = []
    labels = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        rows = G[s:e]
        block_sum = rows.sum(axis=0)
        k = v.block_size
        out = np.zeros((v.levels, p_z))
        if v.kind is VariableKind.CATEGORICAL:
            out[0] = -block_sum / (k + 1)
            for l in range(1, v.levels):
                out[l] = -block_sum / (k + 1) + rows[l - 1]
        else:
            out[0] = -0.5 * block_sum
            run = np.zeros(p_z)
            for l in range(1, v.levels):
                run = run + rows[l - 1]
                out[l] = -0.5 * block_sum + run
        vectors.append(out)
        labels.append(tuple(f"{v.name}={l}" for l in range(v.levels)))
    return CombinedLoadings(vectors=tuple(vectors), labels=tuple(labels))


def _loading_coefficients(schema: VariableSchema, include_base: bool = True) -> np.ndarray:
    """Rows of coefficients c such that each combined vector equals c @ G."""
    rows = []
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        k = v.block_size
        base = np.zeros(schema.q)
        if v.kind is VariableKind.CATEGORICAL:
            base[s:e] = -1.0 / (k + 1)
            if include_base:
                rows.append(base.copy())
            for l in range(1, v.levels):
                c = base.copy()
                c[s + l - 1] += 1.0
                rows.append(c)
        else:
            base[s:e] = -0.5
            if include_base:
                rows.append(base.copy())
            for l in range(1, v.levels):
                c = base.copy()
                c[s : s + l] += 1.0
                rows.append(c)
    return np.asarray(rows)


# -- rotation fixing ----------------------------------------------------------

def fix_rotation(model: FactorModel) -> tuple[FactorModel, np.ndarray]:
    """Diagonalize the loading Gram matrix and order axes by eigenvalue share.

    Applies an orthogonal map Q to the latent space (G -> G Q, W -> W Q,
    mu_z -> Q^T mu_z, sigma_z -> Q^T sigma_z Q), leaving the observed
    distribution unchanged.  Returns the rotated model and the contribution
    ratio of each axis.
    """
    if model.p_z < 1:
        return model, np.zeros(0)
    gram = model.G.T @ model.G
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    Q = eigvecs[:, order]
    for k in range(Q.shape[1]):
        col = Q[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            Q[:, k] = -col
    rotated = FactorModel(
        mu_x=model.mu_x,
        psi_noise=model.psi_noise,
        W_load=model.W_load @ Q,
        b=model.b,
        G=model.G @ Q,
        mu_z=Q.T @ model.mu_z,
        sigma_z=Q.T @ model.sigma_z @ Q,
    )
    total = eigvals.sum()
    ratios = eigvals / total if total > _NORM_EPS else np.zeros_like(eigvals)
    return rotated, ratios


# -- fitting -------------------------------------------------------------------

@dataclass
class FactorFitConfig:
    """Knobs for fit_factor_model."""

    max_iter: int = 1000
    grad_tol: float = 1e-7
    restarts: int = 3
    seed: int = 0
    kappa0: float = 1.0
    kappa_factor: float = 10.0
    max_ramps: int = 6
    norm_spread_tol: float = 1e-3
    init_scale: float = 0.1
    equal_norm: bool = True


@dataclass
class FactorFitReport:
    nll: float
    iterations: int
    converged: bool
    k_params: int
    bic: float
    contribution_ratios: np.ndarray
    mean_model: np.ndarray
    mean_empirical: np.ndarray
    norm_spread: float
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nll": float(self.nll),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "k_params": int(self.k_params),
            "bic": float(self.bic),
            "contribution_ratios": [float(r) for r in self.contribution_ratios],
            "mean_model": [float(v) for v in self.mean_model],
            "mean_empirical": [float(v) for v in self.mean_empirical],
            "max_mean_error": float(
                np.max(np.abs(self.mean_model - self.mean_empirical))
            ),
            "norm_spread": float(self.norm_spread),
            "warnings": list(self.warnings),
        }


def bic_parameter_count(q: int, p_z: int, p_x: int = 0) -> int:
    """Free-parameter count with the rotation gauge removed:
    q biases + q*p_z loadings - p_z(p_z-1)/2, plus (2 + p_z) p_x when a
    continuous block is present."""
    k = q + q * p_z - p_z * (p_z - 1) // 2
    if p_x:
        k += p_x * (2 + p_z)
    return k


def _factor_nll_terms(
    Y_states: np.ndarray, b: np.ndarray, G: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-allowed-state log weight and the log normalizer (canonical gauge)."""
    logw = Y_states @ b + 0.5 * np.einsum("sk,sk->s", Y_states @ G, Y_states @ G)
    m = logw.max()
    logz = m + np.log(np.exp(logw - m).sum())
    return logw, logz


def fit_factor_model(
    schema: VariableSchema,
    data: Iterable[Record | Sequence[int]] | StateCounts,
    p_z: int,
    config: FactorFitConfig | None = None,
    x_data: np.ndarray | None = None,
) -> tuple[FactorModel, FactorFitReport]:
    """Maximum likelihood over (b, G) in the canonical gauge, with the
    equal-norm penalty on all combined loading vectors (shared free target
    norm), then rotation fixing.

    ``x_data`` attaches an (N, p_x) continuous block aligned with the rows;
    (mu_x, psi_noise, W_load) are then estimated jointly.
    """
    config = config or FactorFitConfig()
    if p_z < 0:
        raise ValueError("p_z must be nonnegative")
    if isinstance(data, StateCounts):
        counts = data
        if x_data is not None:
            raise DataError("x_data requires row-level data, not StateCounts")
    else:
        rows = list(data)
        counts = state_counts(schema, rows)
    mean_emp, _, _ = empirical_moments(schema, counts)
    q = schema.q
    Y_states = _allowed_state_matrix(schema)
    obs_states, obs_counts = counts.as_arrays()
    n = obs_counts.sum()

    p_x = 0
    X = None
    Y_rows = None
    if x_data is not None:
        X = np.asarray(x_data, dtype=float)
        if X.ndim != 2 or X.shape[0] != len(rows):
            raise DataError("x_data must be (n_rows, p_x)")
        p_x = X.shape[1]
        Y_rows = np.asarray(
            [encode_record(schema, r).bits for r in rows], dtype=float
        )

    coeffs = _loading_coefficients(schema)

    def split(xvec):
        pos = 0
        b = xvec[pos : pos + q]; pos += q
        G = xvec[pos : pos + q * p_z].reshape(q, p_z); pos += q * p_z
        s = xvec[pos]; pos += 1
        if p_x:
            mu_x = xvec[pos : pos + p_x]; pos += p_x
            tau = xvec[pos : pos + p_x]; pos += p_x
            W = xvec[pos : pos + p_x * p_z].reshape(p_x, p_z); pos += p_x * p_z
        else:
            mu_x = np.zeros(0); tau = np.zeros(0); W = np.zeros((0, p_z))
        return b, G, s, mu_x, tau, W

    def objective(xvec, kappa):
        b, G, s, mu_x, tau, W = split(xvec)
        logw, logz = _factor_nll_terms(Y_states, b, G)
        obs_logw = obs_states @ b + 0.5 * np.einsum(
            "sk,sk->s", obs_states @ G, obs_states @ G
        )
        nll = -float(obs_counts @ obs_logw) + n * logz
        # expectations under the current prior
        pw = np.exp(logw - logz)
        e_u = pw @ Y_states
        e_uu = (Y_states * pw[:, None]).T @ Y_states
        emp_uu = (obs_states * obs_counts[:, None]).T @ obs_states
        g_b = n * e_u - obs_counts @ obs_states
        g_G = (n * e_uu - emp_uu) @ G
        g_s = 0.0
        if config.equal_norm and p_z > 0 and kappa > 0.0:
            vecs = coeffs @ G
            norms = np.linalg.norm(vecs, axis=1)
            diff = norms - s
            nll += kappa * float(diff @ diff)
            safe = norms > _NORM_EPS
            units = np.zeros_like(vecs)
            units[safe] = vecs[safe] / norms[safe, None]
            g_G = g_G + 2.0 * kappa * coeffs.T @ (diff[:, None] * units)
            g_s = -2.0 * kappa * diff.sum()
        g_mu = np.zeros(0); g_tau = np.zeros(0); g_W = np.zeros((0, p_z))
        if p_x:
            psi = np.exp(tau)
            cov = np.diag(psi) + W @ W.T
            prec = np.linalg.inv(cov)
            means = mu_x[None, :] + Y_rows @ G @ W.T
            resid = X - means
            sol = resid @ prec
            _, logdet = np.linalg.slogdet(cov)
            nll += 0.5 * float(np.einsum("ni,ni->", sol, resid))
            nll += 0.5 * len(X) * (logdet + p_x * np.log(2 * np.pi))
            g_mu = -sol.sum(axis=0)
            # covariance part: d nll / d cov = (N prec - prec S prec) / 2
            S = resid.T @ resid
            d_cov = 0.5 * (len(X) * prec - prec @ S @ prec)
            g_tau = np.diag(d_cov) * psi
            g_W = 2.0 * d_cov @ W - sol.T @ (Y_rows @ G)
            g_G = g_G - (Y_rows.T @ sol) @ W
        grad = np.concatenate(
            [g_b, g_G.ravel(), [g_s], g_mu, g_tau, g_W.ravel()]
        )
        return nll, grad

    seed_seq = np.random.SeedSequence(config.seed)
    best = None
    total_iters = 0
    for child in seed_seq.spawn(config.restarts):
        rng = np.random.default_rng(child)
        b0 = _independent_logits(schema, counts)
        G0 = rng.normal(0.0, config.init_scale, (q, p_z))
        s0 = float(np.mean(np.linalg.norm(coeffs @ G0, axis=1))) if p_z else 0.0
        parts = [b0, G0.ravel(), [s0]]
        if p_x:
            parts += [X.mean(axis=0), np.log(np.maximum(X.var(axis=0), 1e-4)),
                      rng.normal(0.0, config.init_scale, (p_x, p_z)).ravel()]
        x0 = np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])
        kappa = config.kappa0 if (config.equal_norm and p_z > 0) else 0.0
        xcur = x0
        success = False
        spread = 0.0
        for ramp in range(config.max_ramps):
            f_prev = np.inf
            for _ in range(10):
                res = scipy.optimize.minimize(
                    objective,
                    xcur,
                    args=(kappa,),
                    method="L-BFGS-B",
                    jac=True,
                    options={"maxiter": config.max_iter, "gtol": config.grad_tol,
                             "ftol": 1e-14},
                )
                xcur = res.x
                total_iters += int(res.nit)
                success = bool(res.success) or res.status == 1
                if f_prev - res.fun < 1e-9 * max(1.0, abs(res.fun)):
                    break
                f_prev = res.fun
            if kappa == 0.0:
                break
            b_f, G_f, *_ = split(xcur)
            norms = np.linalg.norm(coeffs @ G_f, axis=1)
            scale = max(float(norms.mean()), _NORM_EPS)
            spread = float(norms.max() - norms.min()) / scale
            if spread <= config.norm_spread_tol:
                break
            kappa *= config.kappa_factor
        nll_pure, _ = objective(xcur, 0.0)
        key = (float(nll_pure), float(np.linalg.norm(xcur)))
        if best is None or key < best[0]:
            best = (key, xcur, success, spread)

    assert best is not None
    (nll_final, _), xbest, success, spread = best
    b_f, G_f, s_f, mu_f, tau_f, W_f = split(xbest)
    model = FactorModel.canonical(
        b=b_f,
        G=G_f,
        mu_x=mu_f if p_x else None,
        psi_noise=np.exp(tau_f) if p_x else None,
        W_load=W_f if p_x else None,
    )
    model, ratios = fix_rotation(model)
    weights = mixture_weights(schema, model.b, model.G, model.sigma_z)
    mean_model = np.zeros(q)
    for bits, wgt in weights.items():
        mean_model += wgt * np.asarray(bits, dtype=float)
    k = bic_parameter_count(q, p_z, p_x)
    report = FactorFitReport(
        nll=float(nll_final),
        iterations=total_iters,
        converged=bool(success),
        k_params=k,
        bic=float(k * np.log(n) + 2.0 * nll_final),
        contribution_ratios=ratios,
        mean_model=mean_model,
        mean_empirical=mean_emp,
        norm_spread=spread,
    )
    return model, report


def _independent_logits(schema: VariableSchema, counts: StateCounts) -> np.ndarray:
    """Bias init from per-variable empirical frequencies (smoothed)."""
    states, weights = counts.as_arrays()
    n = weights.sum()
    out = np.zeros(schema.q)
    for j, v in enumerate(schema.variables):
        s, e = schema.blocks[j]
        block = states[:, s:e]
        level_counts = np.full(v.levels, 0.5)
        if v.kind is VariableKind.CATEGORICAL:
            levels = np.where(block.sum(axis=1) > 0, block.argmax(axis=1) + 1, 0)
        else:
            levels = block.sum(axis=1)
        for lvl, c in zip(levels, weights):
            level_counts[int(lvl)] += c
        p = level_counts / level_counts.sum()
        if v.kind is VariableKind.CATEGORICAL:
            out[s:e] = np.log(p[1:]) - np.log(p[0])
        else:
            out[s:e] = np.log(p[1:]) - np.log(p[:-1])
    return out


@dataclass
class BicRow:
    p_z: int
    k_params: int
    nll: float
    bic: float


@dataclass
class BicTable:
    rows: list[BicRow]
    chosen: int
    margin: float  # bic gap between the best and the runner-up

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "p_z": r.p_z,
                    "k_params": r.k_params,
                    "nll": float(r.nll),
                    "bic": float(r.bic),
                }
                for r in self.rows
            ],
            "chosen": int(self.chosen),
            "margin": float(self.margin),
        }


def select_dimension_bic(
    schema: VariableSchema,
    data: Iterable[Record | Sequence[int]] | StateCounts,
    p_z_range: Sequence[int],
    config: FactorFitConfig | None = None,
) -> tuple[BicTable, FactorModel, FactorFitReport]:
    """Fit each candidate latent dimension and pick the BIC minimizer
    (ties go to the smaller dimension)."""
    dims = sorted(set(int(p) for p in p_z_range))
    if not dims or any(d < 0 for d in dims):
        raise ValueError("p_z range must be nonempty and nonnegative")
    counts = data if isinstance(data, StateCounts) else state_counts(schema, data)
    rows: list[BicRow] = []
    fits: dict[int, tuple[FactorModel, FactorFitReport]] = {}
    for d in dims:
        model, rep = fit_factor_model(schema, counts, d, config)
        rows.append(BicRow(p_z=d, k_params=rep.k_params, nll=rep.nll, bic=rep.bic))
        fits[d] = (model, rep)
    best = min(rows, key=lambda r: (r.bic, r.p_z))
    others = sorted(r.bic for r in rows if r.p_z != best.p_z)
    margin = (others[0] - best.bic) if others else 0.0
    model, rep = fits[best.p_z]
    return BicTable(rows=rows, chosen=best.p_z, margin=margin), model, rep


# -- biplot --------------------------------------------------------------------

@dataclass(frozen=True)
class BiplotPoint:
    row_id: int
    record: tuple[int, ...]
    score: np.ndarray
    multiplicity: int


@dataclass(frozen=True)
class BiplotData:
    points: tuple[BiplotPoint, ...]
    loading_labels: tuple[str, ...]
    loading_vectors: np.ndarray  # (n_labels, p_z)
    contribution_ratios: np.ndarray
    padded: bool


def biplot_data(
    schema: VariableSchema,
    model: FactorModel,
    data: Iterable[Record | Sequence[int]],
) -> BiplotData:
    """Factor scores per distinct record (sized by multiplicity) plus the
    combined loading vectors, padded to two axes when p_z = 1."""
    model, ratios = fix_rotation(model)
    groups: dict[tuple[int, ...], list[int]] = {}
    order: list[tuple[int, ...]] = []
    for i, row in enumerate(data):
        rec = row if isinstance(row, Record) else Record(tuple(int(v) for v in row))
        key = rec.values
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    if not order:
        raise DataError("dataset is empty")
    points = []
    for key in order:
        bits = encode_record(schema, Record(key)).bits
        m, _ = posterior(model, bits)
        points.append(
            BiplotPoint(
                row_id=groups[key][0],
                record=key,
                score=m,
                multiplicity=len(groups[key]),
            )
        )
    cl = combined_loadings(schema, model.G)
    labels = []
    vecs = []
    for j in range(len(schema)):
        for l, lab in enumerate(cl.labels[j]):
            labels.append(lab)
            vecs.append(cl.vectors[j][l])
    vectors = np.asarray(vecs)
    padded = model.p_z < 2
    if padded:
        pad = 2 - model.p_z
        vectors = np.hstack([vectors, np.zeros((vectors.shape[0], pad))])
        points = [
            BiplotPoint(
                row_id=p.row_id,
                record=p.record,
                score=np.concatenate([p.score, np.zeros(pad)]),
                multiplicity=p.multiplicity,
            )
            for p in points
        ]
        ratios = np.concatenate([ratios, np.zeros(pad)])
    return BiplotData(
        points=tuple(points),
        loading_labels=tuple(labels),
        loading_vectors=vectors,
        contribution_ratios=ratios,
        padded=padded,
    )


def biplot_export(
    schema: VariableSchema,
    model: FactorModel,
    data: Iterable[Record | Sequence[int]],
    out_svg: str,
    out_scores: str,
    out_loadings: str,
) -> BiplotData:
    """Write the scores CSV, loadings CSV, and a two-axis SVG biplot."""
    bp = biplot_data(schema, model, list(data))
    p_axes = bp.loading_vectors.shape[1]
    pc_names = [f"pc{i + 1}" for i in range(p_axes)]
    write_csv(
        out_scores,
        ["row_id", *pc_names, "multiplicity"],
        [
            [p.row_id, *[float(v) for v in p.score], p.multiplicity]
            for p in bp.points
        ],
    )
    loading_rows = []
    idx = 0
    for j, v in enumerate(schema.variables):
        for l in range(v.levels):
            loading_rows.append(
                [v.name, bp.loading_labels[idx], *[float(c) for c in bp.loading_vectors[idx]]]
            )
            idx += 1
    write_csv(out_loadings, ["variable", "level_label", *pc_names], loading_rows)
    _draw_biplot(bp, out_svg)
    return bp


def _draw_biplot(bp: BiplotData, path: str) -> None:
    size = 640
    margin = 70.0
    scores = np.asarray([p.score[:2] for p in bp.points])
    arrows = bp.loading_vectors[:, :2]
    extent = max(
        float(np.abs(scores).max(initial=0.0)),
        float(np.abs(arrows).max(initial=0.0)),
        1e-6,
    ) * 1.15
    span = size - 2 * margin

    def sx(v: float) -> float:
        return margin + (v + extent) / (2 * extent) * span

    def sy(v: float) -> float:
        return size - margin - (v + extent) / (2 * extent) * span

    canvas = SvgCanvas(size, size)
    canvas.line(margin, sy(0.0), size - margin, sy(0.0), stroke="#999", width=0.8)
    canvas.line(sx(0.0), margin, sx(0.0), size - margin, stroke="#999", width=0.8)
    # circle areas exactly proportional to multiplicity, largest radius 9
    max_mult = max(p.multiplicity for p in bp.points)
    for p in bp.points:
        r = 9.0 * np.sqrt(p.multiplicity / max_mult)
        canvas.circle(sx(p.score[0]), sy(p.score[1]), r)
    for label, vec in zip(bp.loading_labels, arrows):
        x2, y2 = sx(vec[0]), sy(vec[1])
        canvas.line(sx(0.0), sy(0.0), x2, y2, stroke="crimson", width=1.4)
        head = _arrow_head(sx(0.0), sy(0.0), x2, y2)
        if head is not None:
            canvas.polygon(head)
        canvas.text(x2 + 4, y2 - 4, label, size=11, fill="crimson")
    pc1 = f"PC1 ({100.0 * bp.contribution_ratios[0]:.1f}%)"
    pc2 = f"PC2 ({100.0 * bp.contribution_ratios[1]:.1f}%)"
    canvas.text(size / 2, size - margin / 3, pc1, size=13, anchor="middle")
    canvas.text(margin / 3, size / 2, pc2, size=13, anchor="middle", rotate=-90.0)
    canvas.save(path)


def _arrow_head(x1: float, y1: float, x2: float, y2: float):
    dx, dy = x2 - x1, y2 - y1
    length = float(np.hypot(dx, dy))
    if length < 1e-9:
        return None
    ux, uy = dx / length, dy / length
    px, py = -uy, ux
    h = 7.0
    wdt = 3.0
    return [
        (x2, y2),
        (x2 - h * ux + wdt * px, y2 - h * uy + wdt * py),
        (x2 - h * ux - wdt * px, y2 - h * uy - wdt * py),
    ]
