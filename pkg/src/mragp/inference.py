"""Hyperparameter posterior, mode search, importance sampling, prediction.

The covariance hyperparameters get a fully Bayesian treatment: an
unnormalized log posterior over the free log-scale parameters, a mode
found by limited-memory BFGS with finite-difference gradients, a Gaussian
proposal built from the numeric Hessian at the mode, and self-normalized
importance sampling. Every quantity downstream of the weights (marginal
summaries, predictions, intervals) is a weighted mixture over the draws.

The mode/proposal/sampling routines accept either a plain callable
mapping a free-parameter vector to a log density, or a Posterior object;
the latter additionally retains per-draw solver state so prediction can
reuse the factorizations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh, LinAlgError
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import norm, skewnorm

from .basis import (
    BasisLayout,
    BasisSystem,
    BoundPoints,
    ConditionalAssembler,
    FullConditional,
)
from .errors import (
    AllEvaluationsFailedError,
    DegenerateWeightsWarning,
    MragpError,
    NotPositiveDefiniteError,
    SingularBlockError,
)
from .geo import as_point_set
from .kernels import HyperParams, PriorSpec, log_hyper_prior
from .partition import RegionTree

_LOG_2PI = float(np.log(2.0 * np.pi))

# supremum of |skewness| over the skew-normal family; method-of-moments
# inversion is infeasible at or beyond it
SKEW_FEASIBLE = 0.9952

GRAD_STEP = 1e-4
HESS_STEP = 1e-3
ESS_WARN_FRACTION = 0.05


class Posterior:
    """Unnormalized hyperparameter posterior for one dataset and tree.

    Precomputes everything that does not depend on the hyperparameters
    (region layout, routed observations, pairwise geometry, the precision
    sparsity pattern) so that each evaluation only fills values and runs
    one numeric factorization. The symbolic factorization is computed on
    the first evaluation and reused for every later one.
    """

    def __init__(self, tree: RegionTree, points, X, y, priors: PriorSpec):
        self.points = as_point_set(points)
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64)
        n = len(self.points)
        if self.X.shape[0] != n or self.y.shape != (n,):
            raise ValueError("points, X and y must agree on n")
        self.priors = priors
        self.layout = BasisLayout(tree)
        self.bound = BoundPoints(self.layout, self.points)
        self.assembler = ConditionalAssembler(self.layout, self.bound, self.X.shape[1])

    @property
    def n_free(self) -> int:
        return self.priors.n_free

    def start_free(self) -> np.ndarray:
        return self.priors.start_point()

    def full_conditional(self, psi: HyperParams, keep_design=False):
        system = BasisSystem(self.layout, psi)
        fc = self.assembler.assemble(
            system, self.X, self.y, self.priors, keep_design=keep_design
        )
        return system, fc

    def evidence_at(self, psi: HyperParams, v=None) -> float:
        """log p(y | psi), fixed effects and basis coefficients integrated out.

        The marginal likelihood is evaluated through the Gaussian identity
        p(y|psi) = p(y|v,psi) p(v|psi) / p(v|y,psi), which holds at every
        v; the default v is the full-conditional mean, the numerically
        stable choice since the conditional quadratic term vanishes there.
        """
        _, fc = self.full_conditional(psi, keep_design=v is not None)
        return _evidence(fc, v)

    def log_unnormalized(self, psi_or_free) -> float:
        if isinstance(psi_or_free, HyperParams):
            psi = psi_or_free
        else:
            psi = self.priors.unpack(np.asarray(psi_or_free, dtype=np.float64))
        return self.evaluate_psi(psi).value

    def evaluate(self, free_vector) -> "PosteriorEval":
        psi = self.priors.unpack(np.asarray(free_vector, dtype=np.float64))
        return self.evaluate_psi(psi)

    def evaluate_psi(self, psi: HyperParams) -> "PosteriorEval":
        try:
            system, fc = self.full_conditional(psi)
        except (NotPositiveDefiniteError, SingularBlockError) as e:
            return PosteriorEval(float("-inf"), psi, None, None, str(e))
        value = log_hyper_prior(psi, self.priors) + _evidence(fc)
        if not np.isfinite(value):
            return PosteriorEval(float("-inf"), psi, None, None, "non-finite value")
        return PosteriorEval(value, psi, system, fc, None)

    def __call__(self, free_vector) -> float:
        return self.evaluate(free_vector).value


@dataclass
class PosteriorEval:
    value: float
    psi: HyperParams
    system: BasisSystem | None
    fc: FullConditional | None
    failure: str | None


def _evidence(fc: FullConditional, v=None) -> float:
    zeta2 = fc.zeta2
    if v is None:
        rss = fc.rss
        quad = fc.quad_prior_at(fc.mean)
        extra = 0.0
    else:
        v = np.asarray(v, dtype=np.float64)
        rss = fc.rss_at(v)
        quad = fc.quad_prior_at(v)
        d = v - fc.mean
        extra = 0.5 * float(d @ fc.q_lower.matvec(d))
    logdet_prior = fc.p * math.log(fc.priors.beta_prior_var) - fc.gamma.sum_logdet
    return (
        -0.5 * (fc.n_obs * (_LOG_2PI + math.log(zeta2)) + rss / zeta2)
        - 0.5 * (logdet_prior + quad)
        - 0.5 * fc.logdet_q
        + extra
    )


def _as_scalar_objective(target):
    if isinstance(target, Posterior):
        return target
    if callable(target):
        return target
    raise TypeError("target must be callable or a Posterior")


@dataclass
class ModeResult:
    x: np.ndarray
    value: float
    n_evaluations: int
    n_iterations: int
    converged: bool


def find_mode(target, start=None, max_iter: int = 25, step: float = GRAD_STEP) -> ModeResult:
    """Maximize a log density with L-BFGS and central-difference gradients.

    Returns the best point ever evaluated (including gradient probes), not
    necessarily the final iterate; with a noisy or cliff-edged objective
    the optimizer's last step can be worse than its best.
    """
    f = _as_scalar_objective(target)
    if start is None:
        if isinstance(target, Posterior):
            start = target.start_free()
        else:
            raise ValueError("start is required for a plain callable target")
    x0 = np.asarray(start, dtype=np.float64).copy()
    state = {"best_x": None, "best_val": -np.inf, "n": 0}

    def neg(x):
        state["n"] += 1
        val = f(np.asarray(x, dtype=np.float64))
        if np.isnan(val):
            val = -np.inf
        if val > state["best_val"]:
            state["best_val"] = val
            state["best_x"] = np.array(x, dtype=np.float64)
        # optimizer-side sentinel; large but finite keeps line searches sane
        return -val if np.isfinite(val) else 1e100

    def grad(x):
        g = np.zeros(len(x))
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = step
            g[i] = (neg(x + e) - neg(x - e)) / (2.0 * step)
        return g

    res = minimize(
        neg, x0, jac=grad, method="L-BFGS-B", options={"maxiter": max_iter}
    )
    if state["best_x"] is None:
        raise AllEvaluationsFailedError(
            "every objective evaluation during mode search returned -inf"
        )
    return ModeResult(
        x=state["best_x"],
        value=state["best_val"],
        n_evaluations=state["n"],
        n_iterations=int(res.nit),
        converged=bool(res.success),
    )


class Proposal:
    """Gaussian importance proposal with a cached Cholesky factor."""

    def __init__(self, mean, cov, floored: bool = False):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.cov = np.asarray(cov, dtype=np.float64)
        if self.cov.shape != (len(self.mean), len(self.mean)):
            raise ValueError("covariance shape does not match mean")
        self.floored = floored
        self._chol = cholesky(self.cov, lower=True)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, n: int, seed) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = x - self.mean
        half = np.linalg.solve(self._chol, d.T)
        quad = np.sum(half * half, axis=0)
        out = -0.5 * (self.dim * _LOG_2PI + self.logdet + quad)
        return out if out.size > 1 else float(out[0])


def build_proposal(target, mode, step: float = HESS_STEP) -> Proposal:
    """Gaussian proposal from the numeric Hessian of the log density at the mode.

    Central second differences, symmetrized, negated, then inverted. If
    the negated Hessian is not positive definite its eigenvalues are
    floored at 1e-6 of the largest before inversion, which always yields
    a usable covariance.
    """
    f = _as_scalar_objective(target)
    x = np.asarray(mode.x if isinstance(mode, ModeResult) else mode, dtype=np.float64)
    d = len(x)
    h = step
    f0 = f(x)
    hess = np.zeros((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            hess[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h * h)
            hess[j, i] = hess[i, j]
    hess = 0.5 * (hess + hess.T)
    prec = -hess
    floored = False
    try:
        c = cho_factor(prec, lower=True)
        cov = cho_solve(c, np.eye(d))
    except LinAlgError:
        w, vecs = eigh(prec)
        wmax = float(w.max())
        if wmax <= 0.0:
            # objective locally flat or convex in every direction; fall
            # back to a unit proposal rather than refusing to sample
            cov = np.eye(d)
        else:
            w = np.maximum(w, 1e-6 * wmax)
            cov = (vecs / w) @ vecs.T
        floored = True
    cov = 0.5 * (cov + cov.T)
    return Proposal(mean=x, cov=cov, floored=floored)


@dataclass
class ISSample:
    free: np.ndarray
    psi: HyperParams | None
    log_target: float
    log_proposal: float
    weight: float
    system: BasisSystem | None = None
    fc: FullConditional | None = None


@dataclass
class ISResult:
    samples: list
    log_c_i: float
    ess: float
    n_failed: int
    draws: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def importance_sample(
    target,
    proposal: Proposal,
    n_is: int,
    seed,
    retain_handles: bool = True,
) -> ISResult:
    """Self-normalized importance sampling from a Gaussian proposal.

    Weights are computed in log space and normalized with log-sum-exp;
    the normalizing-constant estimate log c_I = logsumexp(ratios) - log n
    is reported for diagnostics, as is the effective sample size
    (sum w)^2 / sum w^2. Draws whose target is -inf get weight zero.
    """
    if n_is < 2:
        raise ValueError("n_is must be at least 2")
    f = _as_scalar_objective(target)
    rich = isinstance(target, Posterior)
    draws = proposal.sample(n_is, seed)
    # per-row proposal densities: an injected target that IS the proposal
    # then produces bitwise-constant ratios, hence exactly uniform weights
    log_prop = np.empty(n_is)
    log_t = np.empty(n_is)
    handles = [None] * n_is
    for i in range(n_is):
        log_prop[i] = proposal.logpdf(draws[i])
        if rich:
            ev = target.evaluate(draws[i])
            log_t[i] = ev.value
            if retain_handles and ev.fc is not None:
                handles[i] = (ev.psi, ev.system, ev.fc)
        else:
            val = float(f(draws[i]))
            log_t[i] = val if not np.isnan(val) else -np.inf
    ratios = log_t - log_prop
    lse = float(logsumexp(ratios))
    if not np.isfinite(lse):
        raise AllEvaluationsFailedError(
            "every importance draw had zero posterior mass"
        )
    # shift by the max, not by lse: constant ratios then give exp(0) = 1
    # for every draw and the division yields exactly 1/n_is
    unnorm = np.exp(ratios - np.max(ratios))
    weights = unnorm / unnorm.sum()
    log_c_i = lse - math.log(n_is)
    ess = float(weights.sum() ** 2 / (weights ** 2).sum())
    if ess < ESS_WARN_FRACTION * n_is:
        warnings.warn(
            f"effective sample size {ess:.1f} is below "
            f"{ESS_WARN_FRACTION:.0%} of {n_is} draws; the proposal may be "
            "a poor match to the posterior",
            DegenerateWeightsWarning,
        )
    n_failed = int(np.sum(~np.isfinite(log_t)))
    samples = []
    for i in range(n_is):
        psi, system, fc = handles[i] if handles[i] else (None, None, None)
        if rich and psi is None:
            psi = (
                target.priors.unpack(draws[i])
                if isinstance(target, Posterior)
                else None
            )
        samples.append(
            ISSample(
                free=draws[i],
                psi=psi,
                log_target=float(log_t[i]),
                log_proposal=float(log_prop[i]),
                weight=float(weights[i]),
                system=system,
                fc=fc,
            )
        )
    return ISResult(
        samples=samples,
        log_c_i=log_c_i,
        ess=ess,
        n_failed=n_failed,
        draws=draws,
        weights=weights,
    )


def run_pipeline(
    posterior: Posterior,
    n_is: int,
    seed,
    max_iter: int = 25,
) -> tuple[ModeResult, Proposal, ISResult]:
    """Mode search, proposal construction, importance sampling, in order."""
    mode = find_mode(posterior, max_iter=max_iter)
    prop = build_proposal(posterior, mode)
    result = importance_sample(posterior, prop, n_is, seed)
    return mode, prop, result


# ---------------------------------------------------------------------------
# skew-normal moment matching


def skew_normal_from_moments(mean: float, sd: float, skewness: float):
    """Method-of-moments skew-normal parameters (location, scale, shape).

    Feasible only for |skewness| < 0.9952, the supremum of the family.
    """
    if not sd > 0:
        raise ValueError("sd must be positive")
    if abs(skewness) >= SKEW_FEASIBLE:
        raise ValueError(
            f"|skewness| = {abs(skewness):.4f} is outside the skew-normal family"
        )
    b = math.sqrt(2.0 / math.pi)
    u = (2.0 * abs(skewness) / (4.0 - math.pi)) ** (1.0 / 3.0)
    bd = u / math.sqrt(1.0 + u * u)
    delta = math.copysign(bd / b, skewness)
    omega = sd / math.sqrt(1.0 - bd * bd)
    xi = mean - omega * b * delta
    alpha = delta / math.sqrt(1.0 - delta * delta)
    return xi, omega, alpha


def skew_normal_moments(xi: float, omega: float, alpha: float):
    """Mean, sd and skewness of a skew-normal; inverse of the MoM fit."""
    delta = alpha / math.sqrt(1.0 + alpha * alpha)
    b = math.sqrt(2.0 / math.pi)
    mean = xi + omega * b * delta
    var = omega * omega * (1.0 - b * b * delta * delta)
    skew = (
        (4.0 - math.pi)
        / 2.0
        * (b * delta) ** 3
        / (1.0 - b * b * delta * delta) ** 1.5
    )
    return mean, math.sqrt(var), skew


# ---------------------------------------------------------------------------
# marginal summaries


@dataclass
class MarginalSummary:
    mean: float
    sd: float
    skewness: float
    ci_low: float
    ci_high: float
    method: str  # "skew-normal", "empirical", or "degenerate"


def _atom_quantile(values, weights, q):
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = int(np.searchsorted(cw, q, side="left"))
    return float(v[min(idx, len(v) - 1)])


def _mixture_quantile(means, sds, weights, qs, tol=1e-10):
    """Quantiles of a Gaussian mixture by bisection on the CDF."""
    lo = float(np.min(means - 8.0 * sds))
    hi = float(np.max(means + 8.0 * sds))
    out = []
    for q in qs:
        a, bnd = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + bnd)
            cdf = float(np.sum(weights * norm.cdf((mid - means) / sds)))
            if cdf < q:
                a = mid
            else:
                bnd = mid
            if bnd - a <= tol * max(1.0, abs(mid)):
                break
        out.append(0.5 * (a + bnd))
    return out


def summarize_atoms(values, weights) -> MarginalSummary:
    """Summary of a weighted discrete sample (e.g. hyperparameter draws)."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    mean = float(np.sum(weights * values))
    var = float(np.sum(weights * (values - mean) ** 2))
    if var <= 0.0:
        return MarginalSummary(mean, 0.0, 0.0, mean, mean, "degenerate")
    sd = math.sqrt(var)
    m3 = float(np.sum(weights * (values - mean) ** 3))
    skew = m3 / sd ** 3
    if abs(skew) < SKEW_FEASIBLE:
        xi, omega, alpha = skew_normal_from_moments(mean, sd, skew)
        lo, hi = skewnorm.ppf([0.025, 0.975], alpha, loc=xi, scale=omega)
        return MarginalSummary(mean, sd, skew, float(lo), float(hi), "skew-normal")
    lo = _atom_quantile(values, weights, 0.025)
    hi = _atom_quantile(values, weights, 0.975)
    return MarginalSummary(mean, sd, skew, lo, hi, "empirical")


def summarize_mixture(means, variances, weights) -> MarginalSummary:
    """Summary of a weighted Gaussian mixture (e.g. a mean parameter).

    The marginal of a mean parameter is a mixture of the per-draw Gaussian
    full conditionals; its first three moments have closed forms, from
    which the same skew-normal interval construction applies.
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    mean = float(np.sum(weights * means))
    dev = means - mean
    var = float(np.sum(weights * (variances + dev ** 2)))
    if var <= 0.0:
        return MarginalSummary(mean, 0.0, 0.0, mean, mean, "degenerate")
    sd = math.sqrt(var)
    m3 = float(np.sum(weights * (dev ** 3 + 3.0 * dev * variances)))
    skew = m3 / sd ** 3
    if abs(skew) < SKEW_FEASIBLE:
        xi, omega, alpha = skew_normal_from_moments(mean, sd, skew)
        lo, hi = skewnorm.ppf([0.025, 0.975], alpha, loc=xi, scale=omega)
        return MarginalSummary(mean, sd, skew, float(lo), float(hi), "skew-normal")
    lo, hi = _mixture_quantile(means, np.sqrt(variances), weights, [0.025, 0.975])
    return MarginalSummary(mean, sd, skew, lo, hi, "empirical")


def marginal_summaries(result: ISResult, mean_param_indices=None):
    """Posterior summaries for free hyperparameters and mean parameters.

    Hyperparameter summaries are over the log-scale draws. Mean-parameter
    summaries use the per-draw full-conditional means and variances, so
    the importance sampling must have retained its solver handles.
    Returns (hyper_summaries, mean_param_summaries).
    """
    draws = result.draws
    weights = result.weights
    hyper = [summarize_atoms(draws[:, j], weights) for j in range(draws.shape[1])]
    mean_params = {}
    if mean_param_indices is not None:
        indices = np.asarray(mean_param_indices, dtype=np.int64)
        kept = [(s.weight, s.fc) for s in result.samples if s.fc is not None]
        if not kept:
            raise MragpError(
                "mean-parameter summaries need retained full conditionals"
            )
        w = np.array([k[0] for k in kept])
        w = w / w.sum()
        m = np.stack([k[1].mean[indices] for k in kept])
        v = np.stack([k[1].conditional_var(indices) for k in kept])
        for col, j in enumerate(indices):
            mean_params[int(j)] = summarize_mixture(m[:, col], v[:, col], w)
    return hyper, mean_params


# ---------------------------------------------------------------------------
# prediction


@dataclass
class PredictionResult:
    mean: np.ndarray
    var: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.var)


def _sample_prediction(system, fc, bound, pred_X, out_mean, out_var, batch):
    """Predictive mean and variance at bound points for one draw, in place."""
    p = fc.p
    zeta2 = fc.zeta2
    for g in bound.groups:
        rows = g["rows"]
        blocks = system.point_blocks(g["points"], g["path"], g["geoms"])
        if p:
            gmat = np.hstack([pred_X[rows]] + blocks)
        else:
            gmat = np.hstack(blocks)
        cols = [np.arange(p, dtype=np.int64)] if p else []
        for bfs in g["path"]:
            node = system.layout.nodes[bfs]
            cols.append(np.arange(p + node.col_lo, p + node.col_hi, dtype=np.int64))
        cols = np.concatenate(cols)
        out_mean[rows] = gmat @ fc.mean[cols]
        nloc = len(rows)
        step = batch if batch else nloc
        for s in range(0, nloc, step):
            e = min(s + step, nloc)
            rhs = np.zeros((fc.n_params, e - s))
            rhs[cols] = gmat[s:e].T
            sol = fc.factor.solve(rhs)
            out_var[rows[s:e]] = np.sum(gmat[s:e].T * sol[cols], axis=0) + zeta2


def predict(
    samples,
    pred_points,
    pred_X,
    threads: int = 1,
    batch: int = 512,
    interval: float = 0.95,
) -> PredictionResult:
    """Posterior predictive mean, variance and intervals at new locations.

    Per draw: mean from the full-conditional mean, variance from the
    factorized precision plus that draw's noise variance. Across draws:
    weighted mixture, with the variance combined by the law of total
    variance. Intervals come from the mixture CDF by bisection. The
    result does not depend on the thread count.
    """
    sample_list = list(samples.samples if isinstance(samples, ISResult) else samples)
    live = [s for s in sample_list if s.fc is not None and s.weight > 0.0]
    if not live:
        raise MragpError("prediction needs samples with retained full conditionals")
    layout = live[0].system.layout
    pred_X = np.atleast_2d(np.asarray(pred_X, dtype=np.float64))
    bound = BoundPoints(layout, pred_points)
    npred = len(bound)
    if pred_X.shape[0] != npred:
        raise ValueError("pred_X rows must match prediction points")
    nlive = len(live)
    means = np.zeros((nlive, npred))
    variances = np.zeros((nlive, npred))

    def work(i):
        s = live[i]
        _sample_prediction(
            s.system, s.fc, bound, pred_X, means[i], variances[i], batch
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, range(nlive)))
    else:
        for i in range(nlive):
            work(i)

    w = np.array([s.weight for s in live])
    w = w / w.sum()
    mixture_mean = w @ means
    dev = means - mixture_mean
    mixture_var = w @ variances + w @ (dev ** 2)

    alpha = 0.5 * (1.0 - interval)
    sds = np.sqrt(variances)
    lo = np.empty(npred)
    hi = np.empty(npred)
    for j in range(npred):
        lo[j], hi[j] = _mixture_quantile(
            means[:, j], sds[:, j], w, [alpha, 1.0 - alpha]
        )
    return PredictionResult(mean=mixture_mean, var=mixture_var, ci_low=lo, ci_high=hi)
