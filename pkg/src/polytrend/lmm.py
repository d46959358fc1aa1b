"""Linear mixed models by REML and binomial GLMMs by penalized quasi-likelihood.

Random effects are grouped (one block per group level) with an intercept and
optionally one slope, covariance unstructured or diagonal. The REML objective
profiles out the residual variance and is minimized over the Cholesky factor
of the relative random-effects covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from .glm import DesignMatrix, FittedModel, check_rank, fit_binomial_glm


class MixedModelError(RuntimeError):
    pass


@dataclass
class RandomEffectsSpec:
    """Which random effects to fit.

    ``grouping`` names a grouping column; ``slope_score`` names the covariate
    behind the random slope. With ``ari`` every model carries an
    arithmetic-dose random slope, whatever its fixed-effect scoring.
    """

    grouping: str = "study"
    terms: str = "intercept_plus_slope"
    slope_score: str | None = "ari"
    covariance_structure: str = "unstructured"

    def __post_init__(self):
        if self.terms not in ("intercept_only", "intercept_plus_slope"):
            raise ValueError(f"unknown random terms {self.terms!r}")
        if self.terms == "intercept_plus_slope" and not self.slope_score:
            raise ValueError("a random slope needs slope_score")
        if self.covariance_structure not in ("unstructured", "diagonal"):
            raise ValueError(f"unknown covariance structure {self.covariance_structure!r}")


@dataclass
class RandomEffects:
    """Resolved random-effects design: group label and covariates per row."""

    groups: np.ndarray
    columns: np.ndarray  # (n, q); first column is the intercept
    structure: str = "unstructured"

    def __post_init__(self):
        self.groups = np.asarray(self.groups, dtype=object)
        self.columns = np.asarray(self.columns, dtype=float).reshape(len(self.groups), -1)
        if self.columns.shape[1] > 2:
            raise ValueError("at most an intercept and one slope are supported")

    @classmethod
    def from_arrays(cls, groups, slope=None, structure="unstructured") -> "RandomEffects":
        n = len(groups)
        cols = [np.ones(n)] if slope is None else [np.ones(n), np.asarray(slope, float)]
        return cls(np.asarray(groups, dtype=object), np.column_stack(cols), structure)

    @property
    def q(self) -> int:
        return self.columns.shape[1]

    @property
    def levels(self) -> list:
        return list(dict.fromkeys(self.groups))

    @property
    def n_theta(self) -> int:
        if self.q == 1:
            return 1
        return 3 if self.structure == "unstructured" else 2

    def lambda_matrix(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.q == 1:
            return np.array([[theta[0]]])
        if self.structure == "diagonal":
            return np.diag(theta[:2])
        return np.array([[theta[0], 0.0], [theta[1], theta[2]]])


@dataclass
class MixedFit:
    fixed_effects: np.ndarray
    fixed_covariance: np.ndarray
    G: np.ndarray
    sigma2: float
    blups: dict
    converged: bool
    pql_iterations: int = 0
    theta: np.ndarray | None = None
    reml_objective: float = np.nan
    labels: tuple[str, ...] = ()
    # working problem the final LMM was fitted on; mixed_to_fixed needs it
    design: np.ndarray | None = None
    random: RandomEffects | None = None
    response: np.ndarray | None = None
    weights: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_variance_parameters(self) -> int:
        return (self.random.n_theta if self.random is not None else 0) + 1

    def linear_predictor(self) -> np.ndarray:
        eta = self.design @ self.fixed_effects
        for g, b in self.blups.items():
            m = self.random.groups == g
            eta[m] += self.random.columns[m] @ b
        return eta


# ------------------------------------------------------------------ REML


class _RemlProblem:
    """Per-group cross-products so each objective call costs O(groups * q^3)."""

    def __init__(self, X, random: RandomEffects, y, w):
        self.X, self.random, self.y, self.w = X, random, y, w
        self.n, self.p = X.shape
        # random covariates are rescaled to unit RMS; G is mapped back afterwards
        self.scale = np.sqrt(np.mean(random.columns**2, axis=0))
        self.scale[self.scale == 0] = 1.0
        Z = random.columns / self.scale
        self.Z = Z
        self.blocks = []
        for g in random.levels:
            m = random.groups == g
            Xg, Zg, yg, wg = X[m], Z[m], y[m], w[m]
            self.blocks.append(
                dict(
                    mask=m,
                    XWX=Xg.T @ (wg[:, None] * Xg),
                    XWZ=Xg.T @ (wg[:, None] * Zg),
                    ZWZ=Zg.T @ (wg[:, None] * Zg),
                    XWy=Xg.T @ (wg * yg),
                    ZWy=Zg.T @ (wg * yg),
                    yWy=float(yg @ (wg * yg)),
                )
            )
        self.logdet_w = float(np.sum(np.log(w)))

    def solve(self, theta):
        Lam = self.random.lambda_matrix(theta)
        q = Lam.shape[0]
        XHX = np.zeros((self.p, self.p))
        XHy = np.zeros(self.p)
        yHy = 0.0
        logdet = -self.logdet_w
        parts = []
        for b in self.blocks:
            A = Lam.T @ b["ZWZ"] @ Lam + np.eye(q)
            cA = linalg.cho_factor(A, lower=True)
            logdet += 2.0 * np.sum(np.log(np.diag(cA[0])))
            XZL = b["XWZ"] @ Lam
            yZL = b["ZWy"] @ Lam
            XHX += b["XWX"] - XZL @ linalg.cho_solve(cA, XZL.T)
            XHy += b["XWy"] - XZL @ linalg.cho_solve(cA, yZL)
            yHy += b["yWy"] - yZL @ linalg.cho_solve(cA, yZL)
            parts.append((cA, XZL, yZL))
        cX = linalg.cho_factor(XHX, lower=True)
        beta = linalg.cho_solve(cX, XHy)
        rss = yHy - beta @ XHy
        dof = self.n - self.p
        sigma2 = max(rss, 1e-300) / dof
        logdet_x = 2.0 * np.sum(np.log(np.diag(cX[0])))
        obj = dof * np.log(sigma2) + logdet + logdet_x + dof * (1.0 + np.log(2 * np.pi))
        return dict(
            objective=float(obj), beta=beta, sigma2=sigma2, cX=cX, parts=parts, Lam=Lam
        )

    def objective(self, theta) -> float:
        try:
            return self.solve(theta)["objective"]
        except (linalg.LinAlgError, FloatingPointError, ValueError):
            return np.inf

    def blups(self, sol) -> dict:
        out = {}
        Lam = sol["Lam"]
        for g, b, (cA, XZL, yZL) in zip(self.random.levels, self.blocks, sol["parts"]):
            # Lam A^-1 Lam' Z'W (y - X beta), in rescaled coordinates
            rhs = yZL - sol["beta"] @ XZL
            out[g] = (Lam @ linalg.cho_solve(cA, rhs)) / self.scale
        return out


def _start_theta(random: RandomEffects) -> np.ndarray:
    if random.q == 1:
        return np.array([0.5])
    if random.structure == "diagonal":
        return np.array([0.5, 0.5])
    return np.array([0.5, 0.0, 0.5])


def fit_lmm_reml(
    design,
    random: RandomEffects,
    response,
    weights=None,
    theta=None,
    start=None,
    tol: float = 1e-8,
    max_eval: int = 4000,
) -> MixedFit:
    """REML fit of y = X beta + Z b + e, Var(e) = sigma2 / w, Var(b) = G.

    ``theta`` pins the relative Cholesky factor (no optimization), e.g. zeros
    to force G = 0. Otherwise Nelder-Mead runs from ``start`` and once more
    from a perturbed copy of its optimum.
    """
    X = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, float)
    labels = design.labels if isinstance(design, DesignMatrix) else ()
    y = np.asarray(response, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if not (X.shape[0] == y.size == w.size == len(random.groups)):
        raise ValueError("design, response, weights and groups must align")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    check_rank(X)
    prob = _RemlProblem(X, random, y, w)
    converged = True
    if theta is None:
        if len(random.levels) < 2:
            raise MixedModelError("at least 2 groups are required to estimate variance components")
        x0 = _start_theta(random) if start is None else np.asarray(start, float)
        opts = dict(xatol=1e-9, fatol=tol, maxfev=max_eval, adaptive=False)
        r1 = optimize.minimize(prob.objective, x0, method="Nelder-Mead", options=opts)
        rng = np.random.default_rng(0)
        x1 = r1.x + 0.1 * (np.abs(r1.x) + 0.1) * rng.standard_normal(r1.x.size)
        r2 = optimize.minimize(prob.objective, x1, method="Nelder-Mead", options=opts)
        best = min((r1, r2), key=lambda r: r.fun)
        if not np.isfinite(best.fun):
            raise MixedModelError("REML objective is not finite at any visited point")
        converged = bool(r1.success or r2.success)
        theta = best.x
    theta = np.asarray(theta, dtype=float)
    try:
        sol = prob.solve(theta)
    except linalg.LinAlgError as exc:
        raise MixedModelError(f"singular marginal covariance: {exc}") from exc
    sigma2 = sol["sigma2"]
    S = np.diag(1.0 / prob.scale)
    Lam = sol["Lam"]
    G = sigma2 * S @ Lam @ Lam.T @ S
    cov = sigma2 * linalg.cho_solve(sol["cX"], np.eye(X.shape[1]))
    return MixedFit(
        fixed_effects=sol["beta"],
        fixed_covariance=(cov + cov.T) / 2,
        G=(G + G.T) / 2,
        sigma2=float(sigma2),
        blups=prob.blups(sol),
        converged=converged,
        theta=theta,
        reml_objective=sol["objective"],
        labels=tuple(labels),
        design=X,
        random=random,
        response=y,
        weights=w,
    )


def reml_objective(fit: MixedFit, theta) -> float:
    """-2 REML log-likelihood (sigma2 profiled) of ``fit``'s problem at ``theta``."""
    return _RemlProblem(fit.design, fit.random, fit.response, fit.weights).objective(theta)


# ------------------------------------------------------------------- PQL


def fit_binomial_pql(
    design,
    random: RandomEffects,
    successes,
    failures,
    prior_weights=None,
    max_outer: int = 100,
    tol: float = 1e-6,
) -> MixedFit:
    """Binomial-logit GLMM by penalized quasi-likelihood.

    Alternates working response/weights from the current linear predictor with
    a weighted REML fit, starting from the fixed-effects-only GLM.
    """
    X = design.matrix if isinstance(design, DesignMatrix) else np.asarray(design, float)
    y = np.asarray(successes, dtype=float)
    f = np.asarray(failures, dtype=float)
    pw = np.ones_like(y) if prior_weights is None else np.asarray(prior_weights, dtype=float)
    if len(random.levels) < 2:
        raise MixedModelError("at least 2 groups are required")
    n = y + f
    glm = fit_binomial_glm(design, y, f, pw)
    eta = X @ glm.coefficients
    theta = None
    fit = None
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        mu = special.expit(eta)
        var = np.clip(mu * (1 - mu), 1e-10, None)
        z = eta + (y / n - mu) / var
        wz = pw * n * var
        fit = fit_lmm_reml(design, random, z, wz, start=theta)
        theta = fit.theta
        eta_new = fit.linear_predictor()
        change = np.max(np.abs(eta_new - eta)) / max(1.0, np.max(np.abs(eta)))
        eta = eta_new
        if change < tol:
            converged = True
            break
    fit.pql_iterations = it
    fit.converged = converged and fit.converged
    fit.diagnostics["glm_start"] = glm.coefficients
    return fit


# ---------------------------------------------------------- mixed -> fixed


def mixed_to_fixed(fit: MixedFit, normalize_index: int | None = 1) -> FittedModel:
    """Pseudo-fixed-effect model from a mixed fit.

    Each group's working data are decorrelated with the Cholesky factor of its
    estimated marginal covariance V_g = Z_g G Z_g' + sigma2 W_g^-1; in the
    transformed problem the GLS estimate is ordinary least squares with
    information X*'X* = X'V^-1 X. Score contributions are x*_i e*_i, rescaled so
    the sandwich variance of coefficient ``normalize_index`` equals the
    model-based one.
    """
    X, rnd = fit.design, fit.random
    Xs = np.empty_like(X)
    es = np.empty(X.shape[0])
    resid = fit.response - X @ fit.fixed_effects
    for g in rnd.levels:
        m = rnd.groups == g
        Zg = rnd.columns[m]
        V = Zg @ fit.G @ Zg.T + np.diag(fit.sigma2 / fit.weights[m])
        L = linalg.cholesky(V, lower=True)
        Xs[m] = linalg.solve_triangular(L, X[m], lower=True)
        es[m] = linalg.solve_triangular(L, resid[m], lower=True)
    scores = Xs * es[:, None]
    cov = fit.fixed_covariance
    if normalize_index is not None:
        infl = scores @ cov[:, normalize_index]
        s2 = infl @ infl
        if s2 > 0:
            scores = scores * np.sqrt(cov[normalize_index, normalize_index] / s2)
    df = X.shape[0] - np.linalg.matrix_rank(X) - fit.n_variance_parameters
    return FittedModel(
        coefficients=fit.fixed_effects.copy(),
        covariance=cov.copy(),
        score_contributions=scores,
        residual_df=float(max(df, 0)),
        converged=fit.converged,
        iterations=fit.pql_iterations,
        labels=fit.labels,
        diagnostics={"G": fit.G, "sigma2": fit.sigma2, "transformed_design": Xs},
    )
