"""Numerical verification of the duality formula and its corollaries.

Covers, per block of a target model:

- the duality gap  log E_p[exp h] - (E_q[h] - KL(q||p)), nonnegative and zero
  exactly at the exponential tilt of p by h;
- the induced functional  F{q} = E_q[log pi(theta_-i | theta_i, y)] -
  KL(q || pi(theta_i | y)), concave, bounded by log pi(theta_-i | y), and
  attaining that bound only at the full conditional;
- the information equalities  I = H(theta_-i) - H(theta_-i | theta_i)
  (and the symmetric form), each side computed independently;
- the squashing constant  R = integral of exp E_q[log full conditional] over
  the block, divided by exp KL(q_complement || complement marginal), with the
  pointwise bound  R * q_i <= marginal  and the KL lower bound
  KL(q_i || marginal) >= max{0, raw log value}.

Everything is computed on an explicit grid measure (trapezoid weights) or by
exact summation; densities are renormalized on that measure first, which
makes the Jensen-derived inequalities hold at float precision regardless of
truncation error. Exp-then-integrate steps use log-sum-exp.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from duality_bench.cavi import MeanFieldState
from duality_bench.core import TargetModel
from duality_bench.discrete import DiscreteFactor, DiscreteTarget, _safe_log, _xlogy
from duality_bench.errors import ModelError, SupportError
from duality_bench.gaussian import GaussianFactor, GaussianTarget, kl_divergence
from duality_bench.gaussian import entropy as gaussian_entropy
from duality_bench.gaussian import mutual_information as gaussian_mi
from duality_bench.gibbs import ChainTrace, Estimate, estimate, make_rng
from duality_bench.quadrature import (
    GRID_POINTS_1D,
    GRID_POINTS_2D,
    GridFactor,
    gaussian_grid,
    log_integral,
    tensor_weights,
    trapezoid_weights,
)

__all__ = [
    "DualityProblem",
    "DualityTrial",
    "make_continuous_duality_problem",
    "make_discrete_duality_problem",
    "duality_gap",
    "duality_suite",
    "duality_functional",
    "concavity_probe",
    "InfoEquality",
    "information_equality_check",
    "squashing_constant",
    "squash_pointwise_check",
    "KlBound",
    "kl_lower_bound",
    "ReportOptions",
    "BlockDiagnostics",
    "DiagnosticsReport",
    "build_report",
]

GAP_TOL = 1e-10
ATTAINMENT_TOL = 1e-8
CONCAVITY_TOL = 1e-8
INFO_TOL_CONTINUOUS = 1e-8
INFO_TOL_DISCRETE = 1e-12
SQUASH_TOL = 1e-10
RAW_BOUND_TOL = 1e-10
DISTANT_TV = 1e-4


# --------------------------------------------------------------------------
# Theorem-level duality problems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DualityProblem:
    """A (base p, test function h, candidate q) triple on one space.

    Continuous problems carry a quadrature grid and log densities at its
    nodes, both renormalized on the grid measure; discrete problems carry
    exact pmfs (grid is None) with -inf marking empty cells.
    """

    grid: np.ndarray | None
    log_base: np.ndarray
    test_values: np.ndarray
    log_candidate: np.ndarray

    def __post_init__(self):
        for name in ("log_base", "test_values", "log_candidate"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            g.setflags(write=False)
            object.__setattr__(self, "grid", g)


def _log_density_on_grid(density, grid: np.ndarray) -> np.ndarray:
    if isinstance(density, GaussianFactor):
        if density.dim != 1:
            raise ValueError("duality problems are built on 1-D spaces")
        return np.asarray(density.log_density(grid.reshape(-1, 1)))
    if isinstance(density, GridFactor):
        if not np.array_equal(density.grid, grid):
            raise ValueError("grid factor lives on a different grid")
        return density.log_values.copy()
    if callable(density):
        return np.asarray(density(grid), dtype=float)
    raise TypeError(f"unsupported density type {type(density)}")


def make_continuous_duality_problem(base, test_fn, candidate,
                                    grid=None) -> DualityProblem:
    """Tabulate p, h, q on a shared grid and renormalize on its measure.

    The grid defaults to the union +-8 sigma cover of Gaussian inputs. The
    integrability of exp(h) under p is checked numerically: the integrand
    must have decayed by 1e-12 relative to its peak at both grid ends.
    """
    if grid is None:
        gaussians = [d for d in (base, candidate) if isinstance(d, GaussianFactor)]
        if not gaussians:
            raise ValueError("pass an explicit grid for non-Gaussian densities")
        lo = min(float(d.mean[0]) - 8.0 * float(np.sqrt(d.covariance[0, 0])) for d in gaussians)
        hi = max(float(d.mean[0]) + 8.0 * float(np.sqrt(d.covariance[0, 0])) for d in gaussians)
        grid = np.linspace(lo, hi, GRID_POINTS_1D)
    grid = np.asarray(grid, dtype=float)
    log_p = _log_density_on_grid(base, grid)
    log_q = _log_density_on_grid(candidate, grid)
    h = np.asarray(test_fn(grid), dtype=float)
    if not np.all(np.isfinite(h)):
        raise ModelError("test function must be finite on the working grid")
    integrand = log_p + h
    peak = float(np.max(integrand))
    if max(integrand[0], integrand[-1]) > peak + np.log(1e-12):
        raise ModelError("exp h is not integrable against the base on the working grid")
    log_p = log_p - log_integral(log_p, grid)
    log_q = log_q - log_integral(log_q, grid)
    return DualityProblem(grid=grid, log_base=log_p, test_values=h, log_candidate=log_q)


def make_discrete_duality_problem(base_pmf, test_values,
                                  candidate_pmf) -> DualityProblem:
    p = np.asarray(base_pmf, dtype=float).reshape(-1)
    q = np.asarray(candidate_pmf, dtype=float).reshape(-1)
    h = np.asarray(test_values, dtype=float).reshape(-1)
    if not p.shape == q.shape == h.shape:
        raise ValueError("base, test values, and candidate must share one support")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("pmfs must be nonnegative")
    if np.any((q > 0) & (p <= 0)):
        raise SupportError("candidate has mass outside the base support")
    p = p / p.sum()
    q = q / q.sum()
    return DualityProblem(grid=None, log_base=_safe_log(p), test_values=h,
                          log_candidate=_safe_log(q))


def duality_gap(problem: DualityProblem) -> float:
    """log E_p[exp h] - (E_q[h] - KL(q||p)); always >= -1e-10.

    Equals KL(q || exponential tilt of p by h) on the working measure, hence
    nonnegative up to roundoff and zero exactly at the tilt.
    """
    if problem.grid is not None:
        logw = np.log(trapezoid_weights(problem.grid))
        log_p = problem.log_base + logw
        log_q = problem.log_candidate + logw
        lhs = float(logsumexp(log_p + problem.test_values))
        q_mass = np.exp(log_q)
        e_q_h = float(np.sum(q_mass * problem.test_values))
        kl = float(np.sum(q_mass * (problem.log_candidate - problem.log_base)))
        return lhs - (e_q_h - kl)
    p_mask = problem.log_base > -np.inf
    lhs = float(logsumexp(problem.log_base[p_mask] + problem.test_values[p_mask]))
    q = np.exp(problem.log_candidate)
    q_mask = q > 0
    e_q_h = float(np.sum(q[q_mask] * problem.test_values[q_mask]))
    kl = float(np.sum(q[q_mask] * (problem.log_candidate[q_mask] - problem.log_base[q_mask])))
    return lhs - (e_q_h - kl)


@dataclass(frozen=True)
class DualityTrial:
    trial: int
    family: str
    at_optimum: bool
    gap: float


def duality_suite(family: str, trials: int, seed: int) -> list[DualityTrial]:
    """Randomized duality checks: per trial, one random candidate and the
    exact exponential tilt of the same (p, h).

    Gaussian trials draw p and q with mean in [-2, 2] and variance in
    [0.25, 4], and quadratic test functions h(x) = a + b x - c x^2 with
    a, b in [-1, 1] and c in [0, 0.5] (so exp h stays integrable and the
    tilt is again Gaussian). Discrete trials draw Dirichlet-like positive
    vectors on supports of size 2..8 with h uniform in [-2, 2].
    """
    if trials < 1:
        raise ValueError("empty suite forbidden: trials must be positive")
    if family not in ("gaussian", "discrete"):
        raise ValueError(f"unknown family {family!r}")
    rng = make_rng(seed)
    out: list[DualityTrial] = []
    for t in range(trials):
        if family == "gaussian":
            p = GaussianFactor([rng.uniform(-2, 2)], [[rng.uniform(0.25, 4)]])
            q = GaussianFactor([rng.uniform(-2, 2)], [[rng.uniform(0.25, 4)]])
            a, b = rng.uniform(-1, 1, size=2)
            c = rng.uniform(0, 0.5)

            def h_fn(x, a=a, b=b, c=c):
                return a + b * x - c * x * x

            var_p = float(p.covariance[0, 0])
            mean_p = float(p.mean[0])
            tilt_prec = 1.0 / var_p + 2.0 * c
            tilt_var = 1.0 / tilt_prec
            tilt_mean = tilt_var * (mean_p / var_p + b)
            tilt = GaussianFactor([tilt_mean], [[tilt_var]])
            lo = min(m - 8.0 * s for m, s in (
                (mean_p, np.sqrt(var_p)),
                (float(q.mean[0]), float(np.sqrt(q.covariance[0, 0]))),
                (tilt_mean, np.sqrt(tilt_var)),
            ))
            hi = max(m + 8.0 * s for m, s in (
                (mean_p, np.sqrt(var_p)),
                (float(q.mean[0]), float(np.sqrt(q.covariance[0, 0]))),
                (tilt_mean, np.sqrt(tilt_var)),
            ))
            grid = np.linspace(lo, hi, GRID_POINTS_1D)
            gap_rand = duality_gap(make_continuous_duality_problem(p, h_fn, q, grid))
            gap_tilt = duality_gap(make_continuous_duality_problem(p, h_fn, tilt, grid))
        else:
            n = int(rng.integers(2, 9))
            p = rng.exponential(size=n)
            p /= p.sum()
            q = rng.exponential(size=n)
            q /= q.sum()
            h = rng.uniform(-2, 2, size=n)
            tilt = p * np.exp(h)
            tilt /= tilt.sum()
            gap_rand = duality_gap(make_discrete_duality_problem(p, h, q))
            gap_tilt = duality_gap(make_discrete_duality_problem(p, h, tilt))
        out.append(DualityTrial(trial=t, family=family, at_optimum=False, gap=gap_rand))
        out.append(DualityTrial(trial=t, family=family, at_optimum=True, gap=gap_tilt))
    return out


# --------------------------------------------------------------------------
# The induced functional F and its concavity
# --------------------------------------------------------------------------


class _FunctionalWorkspace:
    """Per-(model, block, complement point) tables for fast F evaluation.

    F{q} = E_q[log pi(c | theta_i, y)] - KL(q || pi(theta_i | y)) for a fixed
    complement value c; the bound is log pi(theta_-i | y) at c.
    """

    def __init__(self, model: TargetModel, i: int, complement_value):
        if not model.has_analytic_marginals:
            raise ModelError("the functional needs analytic marginals")
        dec = model.decomposition
        dec.check_index(i)
        self.model = model
        self.i = i
        if isinstance(model, DiscreteTarget):
            self.discrete = True
            n_i = model.support_sizes[i]
            self.grid = np.arange(n_i, dtype=float)
            self.weights = np.ones(n_i)
            self.log_marginal = _safe_log(model.marginal(i).pmf)
            cflat = model._complement_flat_index(i, complement_value)
            rows = np.moveaxis(model.joint_pmf, i, -1).reshape(-1, n_i)
            with np.errstate(invalid="ignore"):
                # -inf at zero-marginal points; those fail the support check
                self.log_cond_at_c = np.where(
                    self.log_marginal > -np.inf,
                    _safe_log(rows[cflat]) - self.log_marginal, -np.inf)
            self.log_bound = float(_safe_log(
                np.asarray([model.complement_marginal(i).pmf[cflat]]))[0])
            self.conditional_values = self._renormalize(
                model.full_conditional(i, complement_value).pmf)
        else:
            self.discrete = False
            self.grid = model.block_grid(i)
            self.weights = trapezoid_weights(self.grid)
            c = np.asarray(complement_value, dtype=float).reshape(-1)
            points = np.empty((self.grid.size, dec.total_dim))
            points[:, dec.block_slice(i)] = self.grid.reshape(-1, 1)
            points[:, dec.complement_indices(i)] = c
            log_joint = np.asarray(model.log_density(points))
            marg = model.marginal(i)
            self.log_marginal = np.asarray(marg.log_density(self.grid.reshape(-1, 1)))
            self.log_cond_at_c = log_joint - self.log_marginal
            self.log_bound = float(
                model.complement_marginal(i).log_density(c.reshape(1, -1))[0])
            cond = model.full_conditional(i, c)
            self.conditional_values = self._renormalize(
                np.exp(np.asarray(cond.log_density(self.grid.reshape(-1, 1)))))

    def _renormalize(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        mass = float(np.sum(self.weights * values))
        if mass <= 0:
            raise ModelError("candidate density has zero mass on the block grid")
        return values / mass

    def density_values(self, q) -> np.ndarray:
        if isinstance(q, np.ndarray):
            return self._renormalize(q)
        if isinstance(q, DiscreteFactor):
            return self._renormalize(q.pmf)
        if isinstance(q, GridFactor):
            if not np.array_equal(q.grid, self.grid):
                raise ValueError("grid factor lives on a different grid")
            return q.values
        if isinstance(q, GaussianFactor):
            return self._renormalize(
                np.exp(np.asarray(q.log_density(self.grid.reshape(-1, 1)))))
        raise TypeError(f"unsupported candidate type {type(q)}")

    def value(self, q_values: np.ndarray) -> float:
        mass = self.weights * q_values
        support = mass > 0
        if np.any(support & np.isneginf(self.log_marginal)):
            raise SupportError("candidate has mass outside the marginal support")
        e_term = float(np.sum(mass[support] * self.log_cond_at_c[support]))
        with np.errstate(divide="ignore"):
            log_q = np.log(q_values[support])
        kl_term = float(np.sum(mass[support] * (log_q - self.log_marginal[support])))
        return e_term - kl_term

    def tv_from_conditional(self, q_values: np.ndarray) -> float:
        return 0.5 * float(np.sum(self.weights * np.abs(
            q_values - self.conditional_values)))


def duality_functional(model: TargetModel, i: int, complement_value, q) -> float:
    """F{q} at a fixed complement point; <= log pi(theta_-i | y) there,
    with equality only at the full conditional."""
    ws = _FunctionalWorkspace(model, i, complement_value)
    return ws.value(ws.density_values(q))


def concavity_probe(model: TargetModel, i: int, complement_value, p, q,
                    a: float) -> float:
    """F(a p + (1-a) q) - [a F(p) + (1-a) F(q)]; must be >= -1e-8."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("mixture weight must lie in [0, 1]")
    ws = _FunctionalWorkspace(model, i, complement_value)
    pv = ws.density_values(p)
    qv = ws.density_values(q)
    mix = a * pv + (1.0 - a) * qv
    mass = float(np.sum(ws.weights * mix))
    if abs(mass - 1.0) > 1e-10:
        raise ModelError(f"mixture mass {mass!r} deviates from 1 beyond 1e-10")
    return ws.value(mix) - (a * ws.value(pv) + (1.0 - a) * ws.value(qv))


# --------------------------------------------------------------------------
# Information equalities
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InfoEquality:
    """Mutual information and the entropies entering the two equalities.

    Each quantity is computed by its own route (quadrature tensor grid,
    1-D quadrature, exact summation, or its own closed form) - never derived
    from the others - so the residuals are genuine consistency checks.
    """

    mutual_information: float
    complement_entropy: float
    conditional_entropy: float
    block_entropy: float
    conditional_block_entropy: float
    method: str

    @property
    def residual(self) -> float:
        return abs(self.mutual_information
                   - (self.complement_entropy - self.conditional_entropy))

    @property
    def symmetric_residual(self) -> float:
        return abs(self.mutual_information
                   - (self.block_entropy - self.conditional_block_entropy))


def _gaussian_info_quadrature(model: GaussianTarget, i: int) -> InfoEquality:
    dec = model.decomposition
    g1 = gaussian_grid(model.mean[0], np.sqrt(model.covariance[0, 0]), GRID_POINTS_2D)
    g2 = gaussian_grid(model.mean[1], np.sqrt(model.covariance[1, 1]), GRID_POINTS_2D)
    grids = (g1, g2) if i == 0 else (g2, g1)
    w2 = tensor_weights(*grids)
    pts = np.stack([m.reshape(-1) for m in np.meshgrid(*grids, indexing="ij")], axis=1)
    if i == 1:
        pts = pts[:, ::-1]
    log_joint = np.asarray(model.log_density(pts)).reshape(w2.shape)
    x_i, x_c = grids
    log_m_i = np.asarray(model.marginal(i).log_density(x_i.reshape(-1, 1)))
    log_m_c = np.asarray(model.complement_marginal(i).log_density(x_c.reshape(-1, 1)))
    joint = np.exp(log_joint)
    mi = float(np.sum(w2 * joint * (log_joint - log_m_i[:, None] - log_m_c[None, :])))
    w_c = trapezoid_weights(x_c)
    h_c = -float(np.sum(w_c * np.exp(log_m_c) * log_m_c))
    h_cond = -float(np.sum(w2 * joint * (log_joint - log_m_i[:, None])))
    w_i = trapezoid_weights(x_i)
    h_i = -float(np.sum(w_i * np.exp(log_m_i) * log_m_i))
    h_cond_i = -float(np.sum(w2 * joint * (log_joint - log_m_c[None, :])))
    return InfoEquality(mi, h_c, h_cond, h_i, h_cond_i, method="quadrature")


def _gaussian_info_closed_form(model: GaussianTarget, i: int) -> InfoEquality:
    dec = model.decomposition
    mi = gaussian_mi(model, i)
    h_c = gaussian_entropy(model.complement_marginal(i))
    h_i = gaussian_entropy(model.marginal(i))
    # conditional entropies from the Schur-complement covariances
    h_cond = model.conditional_complement(i, model.mean[dec.block_slice(i)]).entropy()
    h_cond_i = model.full_conditional(i, model.mean[dec.complement_indices(i)]).entropy()
    return InfoEquality(mi, h_c, h_cond, h_i, h_cond_i, method="closed_form")


def information_equality_check(model: TargetModel, i: int,
                               method: str = "auto") -> InfoEquality:
    """I(theta_i; theta_-i), H(theta_-i), H(theta_-i | theta_i) (and the
    symmetric pair), computed independently, for the equality residuals."""
    model.decomposition.check_index(i)
    if isinstance(model, DiscreteTarget):
        return InfoEquality(
            mutual_information=model.mutual_information(i),
            complement_entropy=model.complement_entropy(i),
            conditional_entropy=model.conditional_entropy_complement(i),
            block_entropy=model.block_entropy(i),
            conditional_block_entropy=model.conditional_entropy_block(i),
            method="enumeration",
        )
    if not isinstance(model, GaussianTarget):
        raise ModelError("information equalities need an analytic or discrete model")
    can_quadrature = model.decomposition.total_dim == 2
    if method == "auto":
        method = "quadrature" if can_quadrature else "closed_form"
    if method == "quadrature":
        if not can_quadrature:
            raise ModelError("quadrature route needs two 1-D blocks")
        return _gaussian_info_quadrature(model, i)
    if method == "closed_form":
        return _gaussian_info_closed_form(model, i)
    raise ValueError(f"unknown method {method!r}")


def info_monte_carlo(model: TargetModel, trace: ChainTrace, i: int) -> dict[str, Estimate]:
    """Monte Carlo estimates of I, H(theta_-i), H(theta_-i|theta_i) from a
    Gibbs trace, with batch-means standard errors."""
    dec = model.decomposition
    if trace.samples.shape[1] != dec.total_dim:
        raise ModelError("trace and model disagree on the parameter dimension")
    bs = dec.block_slice(i)
    ci = dec.complement_indices(i)
    samples = trace.samples
    log_joint = np.asarray(model.log_density(samples))
    if isinstance(model, DiscreteTarget):
        log_m_i = np.asarray(
            model.marginal(i).log_density(samples[:, bs].reshape(-1).astype(int)))
        comp_flat = np.array([model._complement_flat_index(i, row) for row in samples[:, ci]])
        log_m_c = _safe_log(model.complement_marginal(i).pmf)[comp_flat]
    else:
        log_m_i = np.asarray(model.marginal(i).log_density(samples[:, bs]))
        log_m_c = np.asarray(model.complement_marginal(i).log_density(samples[:, ci]))
    mi_values = log_joint - log_m_i - log_m_c
    h_c_values = -log_m_c
    h_cond_values = -(log_joint - log_m_i)
    return {
        "mutual_information": estimate(trace, lambda s, v=mi_values: v),
        "complement_entropy": estimate(trace, lambda s, v=h_c_values: v),
        "conditional_entropy": estimate(trace, lambda s, v=h_cond_values: v),
    }


# --------------------------------------------------------------------------
# Squashing constant, pointwise bound, KL lower bound
# --------------------------------------------------------------------------


def _expected_log_conditional_discrete(model: DiscreteTarget, factors, i: int) -> np.ndarray:
    """E over the complement factor product of log pi(theta_i | theta_-i)."""
    w = model.complement_factor_weights(factors, i)
    n_i = model.support_sizes[i]
    rows = np.moveaxis(model.joint_pmf, i, -1).reshape(-1, n_i)
    mass = rows.sum(axis=1)
    active = w > 0
    if np.any(active & (mass <= 0)):
        raise ModelError("complement factor puts mass on a zero-mass conditioning event")
    if np.any(rows[active] <= 0):
        raise ModelError(
            f"block {i}: zero conditional under positive complement mass"
        )
    log_cond = _safe_log(rows[active]) - _safe_log(mass[active])[:, None]
    return w[active] @ log_cond


def _complement_product_factor(factors, i: int) -> GaussianFactor:
    means, covs = [], []
    for j, f in enumerate(factors):
        if j == i:
            continue
        means.append(f.mean)
        covs.append(f.covariance)
    mean = np.concatenate(means)
    cov = np.zeros((mean.size, mean.size))
    at = 0
    for c in covs:
        d = c.shape[0]
        cov[at:at + d, at:at + d] = c
        at += d
    return GaussianFactor(mean, cov)


def squashing_constant(model: TargetModel, state: MeanFieldState, i: int) -> float:
    """R = int exp E_{q(theta_-i)}[log pi(theta_i|theta_-i,y)] d theta_i
    / exp KL(q(theta_-i) || pi(theta_-i|y)); lies in (0, 1] for any
    complement density dominated by the complement marginal.

    Numerator via quadrature/summation with log-sum-exp, denominator via the
    closed-form/enumerated KL.
    """
    model.decomposition.check_index(i)
    factors = state.factors
    if isinstance(model, DiscreteTarget):
        expected = _expected_log_conditional_discrete(model, factors, i)
        log_num = float(logsumexp(expected))
        w = model.complement_factor_weights(factors, i)
        marg_c = model.complement_marginal(i).pmf
        if np.any((w > 0) & (marg_c <= 0)):
            raise SupportError("complement factor mass outside the complement marginal")
        kl_c = float(np.sum(_xlogy(w, _safe_log(w) - _safe_log(marg_c))))
    elif isinstance(model, GaussianTarget):
        q_c = _complement_product_factor(factors, i)
        grid = model.block_grid(i)
        expected = model.expected_log_full_conditional(
            i, grid, q_c.mean, q_c.covariance)
        log_num = log_integral(expected, grid)
        kl_c = kl_divergence(q_c, model.complement_marginal(i))
    else:
        raise ModelError("squashing constant needs a Gaussian or discrete model")
    return float(np.exp(log_num - kl_c))


def squash_pointwise_check(model: TargetModel, state: MeanFieldState, i: int,
                           grid=None) -> float:
    """min over the grid of pi(theta_i|y) - R * q*(theta_i); >= -1e-10.

    Pairs R with the stored factor i, which equals the coordinate update of
    the complement at a converged state. A tampered factor (e.g. an inflated
    variance) genuinely violates the inequality and is reported here.
    """
    model.decomposition.check_index(i)
    q_i = state.factors[i]
    r_value = squashing_constant(model, state, i)
    if isinstance(model, DiscreteTarget):
        if not isinstance(q_i, DiscreteFactor):
            raise ModelError("discrete model needs discrete factors")
        marg = model.marginal(i).pmf
        return float(np.min(marg - r_value * q_i.pmf))
    if grid is None:
        k = model.decomposition.block_offsets[i]
        grid = gaussian_grid(model.mean[k], np.sqrt(model.covariance[k, k]), 1001)
    grid = np.asarray(grid, dtype=float)
    marg = np.exp(np.asarray(model.marginal(i).log_density(grid.reshape(-1, 1))))
    q_values = np.exp(np.asarray(q_i.log_density(grid.reshape(-1, 1))))
    return float(np.min(marg - r_value * q_values))


@dataclass(frozen=True)
class KlBound:
    """KL(q*_i || marginal) with its algorithm-based lower bound.

    ``raw_log_value`` is log int exp E_{q*_i}[log pi(theta_-i|theta_i,y)]
    d theta_-i, which Jensen makes nonpositive; the bound is max{0, raw}.
    """

    raw_log_value: float
    bound: float
    kl: float


def kl_lower_bound(model: TargetModel, state: MeanFieldState, i: int) -> KlBound:
    model.decomposition.check_index(i)
    q_i = state.factors[i]
    if isinstance(model, DiscreteTarget):
        if not isinstance(q_i, DiscreteFactor):
            raise ModelError("discrete model needs discrete factors")
        n_i = model.support_sizes[i]
        rows = np.moveaxis(model.joint_pmf, i, -1).reshape(-1, n_i)  # (c, x)
        marg_i = model.marginal(i).pmf
        log_cond_c = _safe_log(rows) - _safe_log(marg_i)[None, :]    # log pi(c|x)
        mask = q_i.pmf > 0
        if np.any(mask & (marg_i <= 0)):
            raise SupportError("factor mass outside the block marginal support")
        expected = log_cond_c[:, mask] @ q_i.pmf[mask]
        finite = np.isfinite(expected)
        raw = float(logsumexp(expected[finite])) if np.any(finite) else -np.inf
        kl = float(np.sum(_xlogy(q_i.pmf, _safe_log(q_i.pmf) - _safe_log(marg_i))))
    elif isinstance(model, GaussianTarget):
        if not isinstance(q_i, GaussianFactor):
            raise ModelError("Gaussian model needs Gaussian factors")
        dec = model.decomposition
        comp_dim = dec.total_dim - dec.block_dims[i]
        if comp_dim == 1:
            cm = model.complement_marginal(i)
            grid = gaussian_grid(float(cm.mean[0]),
                                 float(np.sqrt(cm.covariance[0, 0])), GRID_POINTS_1D)
            expected = model.expected_log_complement_conditional(
                i, grid, q_i.mean, q_i.covariance)
            raw = log_integral(expected, grid)
        else:
            # exp E[log pi(c|theta_i)] is an unnormalized Gaussian in c whose
            # total mass is exp(-penalty); integrate analytically.
            blk = model._blocks[i]
            b_mat = blk["lam_ic"] @ blk["cov_c"] @ blk["lam_ic"].T
            raw = -0.5 * float(np.sum(b_mat * q_i.covariance))
        kl = kl_divergence(q_i, model.marginal(i))
    else:
        raise ModelError("KL lower bound needs a Gaussian or discrete model")
    return KlBound(raw_log_value=raw, bound=max(0.0, raw), kl=kl)


# --------------------------------------------------------------------------
# Aggregated per-block report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportOptions:
    """Knobs for the aggregated diagnostics run (all defaults spec-level)."""

    squash_grid_points: int = 1001
    f_candidates: int = 50
    concavity_mixtures: int = 100
    suite_seed: int = 0
    info_method: str = "auto"
    reference_point: np.ndarray | None = None


@dataclass(frozen=True)
class BlockDiagnostics:
    """All scalar diagnostics for one block, plus named pass/fail checks."""

    block: int
    duality_gap: float
    functional_at_conditional: float
    log_complement_marginal: float
    attainment_abs_error: float
    f_suite_max_excess: float
    f_suite_min_distant_gap: float
    concavity_min_slack: float
    mutual_information: float
    complement_entropy: float
    conditional_entropy: float
    information_residual: float
    symmetric_information_residual: float
    info_method: str
    mi_mc: float
    mi_mc_se: float | None
    complement_entropy_mc: float
    complement_entropy_mc_se: float | None
    conditional_entropy_mc: float
    conditional_entropy_mc_se: float | None
    squashing_constant: float
    min_squash_slack: float
    kl_factor_to_marginal: float
    kl_lower_bound_raw: float
    kl_lower_bound: float
    checks: dict[str, bool]


@dataclass(frozen=True)
class DiagnosticsReport:
    model_echo: dict
    gibbs_echo: dict
    cavi_echo: dict
    options_echo: dict
    blocks: tuple[BlockDiagnostics, ...]
    passed: bool
    failures: tuple[str, ...]

    def to_jsonable(self) -> dict:
        blocks = []
        for b in self.blocks:
            d = asdict(b)
            d["checks"] = dict(b.checks)
            blocks.append(d)
        return {
            "model": self.model_echo,
            "gibbs": self.gibbs_echo,
            "cavi": self.cavi_echo,
            "options": self.options_echo,
            "blocks": blocks,
            "passed": self.passed,
            "failures": list(self.failures),
        }

    CSV_FIELDS = (
        "block", "duality_gap", "functional_at_conditional",
        "log_complement_marginal", "attainment_abs_error",
        "f_suite_max_excess", "f_suite_min_distant_gap", "concavity_min_slack",
        "mutual_information", "complement_entropy", "conditional_entropy",
        "information_residual", "symmetric_information_residual",
        "mi_mc", "mi_mc_se", "complement_entropy_mc", "complement_entropy_mc_se",
        "conditional_entropy_mc", "conditional_entropy_mc_se",
        "squashing_constant", "min_squash_slack", "kl_factor_to_marginal",
        "kl_lower_bound_raw", "kl_lower_bound", "passed",
    )

    def to_csv_rows(self) -> list[list]:
        rows = []
        for b in self.blocks:
            d = asdict(b)
            row = []
            for name in self.CSV_FIELDS:
                if name == "passed":
                    row.append(all(b.checks.values()))
                else:
                    row.append(d[name])
            rows.append(row)
        return rows


def _random_candidate(model, i, rng) -> object:
    if isinstance(model, DiscreteTarget):
        return DiscreteFactor(rng.dirichlet(np.ones(model.support_sizes[i])))
    return GaussianFactor([rng.uniform(-2, 2)], [[rng.uniform(0.25, 4)]])


def _reference_point(model: TargetModel, options: ReportOptions) -> np.ndarray:
    if options.reference_point is not None:
        return model.decomposition.check_vector(options.reference_point)
    if isinstance(model, DiscreteTarget):
        flat = int(np.argmax(model.joint_pmf))
        return np.asarray(np.unravel_index(flat, model.support_sizes), dtype=float)
    return np.asarray(model.mean, dtype=float)


def build_report(model: TargetModel, trace: ChainTrace, state: MeanFieldState,
                 options: ReportOptions | None = None) -> DiagnosticsReport:
    """Run every per-block diagnostic and collect named pass/fail checks.

    The randomized candidate/mixture suites are driven by a Philox generator
    keyed with ``options.suite_seed``; the seed is echoed in the report, so
    the whole report is a pure function of (model, trace, state, options).
    """
    options = options or ReportOptions()
    dec = model.decomposition
    if trace.samples.shape[1] != dec.total_dim:
        raise ModelError("trace does not match the model decomposition")
    if len(state.factors) != dec.n_blocks:
        raise ModelError("state does not match the model decomposition")
    info_tol = INFO_TOL_DISCRETE if model.is_discrete else INFO_TOL_CONTINUOUS
    rng = make_rng(options.suite_seed)
    reference = _reference_point(model, options)
    blocks: list[BlockDiagnostics] = []
    failures: list[str] = []
    for i in range(dec.n_blocks):
        c_ref = reference[dec.complement_indices(i)]
        ws = _FunctionalWorkspace(model, i, c_ref)
        f_cond = ws.value(ws.conditional_values)
        attainment_err = abs(ws.log_bound - f_cond)
        gap_state = ws.log_bound - ws.value(ws.density_values(state.factors[i]))
        max_excess = -np.inf
        min_distant_gap = np.inf
        for _ in range(options.f_candidates):
            qv = ws.density_values(_random_candidate(model, i, rng))
            gap = ws.log_bound - ws.value(qv)
            max_excess = max(max_excess, -gap)
            if ws.tv_from_conditional(qv) > DISTANT_TV:
                min_distant_gap = min(min_distant_gap, gap)
        min_slack = np.inf
        for _ in range(options.concavity_mixtures):
            p_cand = _random_candidate(model, i, rng)
            q_cand = _random_candidate(model, i, rng)
            a = float(rng.uniform(0, 1))
            min_slack = min(min_slack,
                            concavity_probe(model, i, c_ref, p_cand, q_cand, a))
        info = information_equality_check(model, i, method=options.info_method)
        mc = info_monte_carlo(model, trace, i)
        r_value = squashing_constant(model, state, i)
        squash_slack = squash_pointwise_check(
            model, state, i,
            grid=None if model.is_discrete else gaussian_grid(
                model.mean[dec.block_offsets[i]],
                np.sqrt(model.covariance[dec.block_offsets[i], dec.block_offsets[i]]),
                options.squash_grid_points,
            ),
        )
        bound = kl_lower_bound(model, state, i)

        def _mc_ok(est: Estimate, truth: float) -> bool:
            if est.standard_error is None:
                return False
            return abs(est.mean - truth) <= 3.0 * max(est.standard_error, 1e-15)

        checks = {
            "duality_gap_nonnegative": gap_state >= -GAP_TOL,
            "functional_attained_at_conditional": attainment_err <= ATTAINMENT_TOL,
            "functional_bounded": max_excess <= ATTAINMENT_TOL,
            "functional_equality_only_at_conditional": min_distant_gap > ATTAINMENT_TOL,
            "concavity": min_slack >= -CONCAVITY_TOL,
            "information_equality": info.residual <= info_tol,
            "information_equality_symmetric": info.symmetric_residual <= info_tol,
            "mi_mc_within_3se": _mc_ok(mc["mutual_information"], info.mutual_information),
            "complement_entropy_mc_within_3se": _mc_ok(
                mc["complement_entropy"], info.complement_entropy),
            "conditional_entropy_mc_within_3se": _mc_ok(
                mc["conditional_entropy"], info.conditional_entropy),
            "squashing_constant_in_unit_interval": 0.0 < r_value <= 1.0 + SQUASH_TOL,
            "squash_pointwise": squash_slack >= -SQUASH_TOL,
            "kl_nonnegative": bound.kl >= 0.0,
            "kl_above_bound": bound.kl >= bound.bound - GAP_TOL,
            "kl_bound_raw_nonpositive": bound.raw_log_value <= RAW_BOUND_TOL,
        }
        label = i + 1
        failures.extend(f"block{label}.{name}" for name, ok in checks.items() if not ok)
        blocks.append(BlockDiagnostics(
            block=label,
            duality_gap=float(gap_state),
            functional_at_conditional=float(f_cond),
            log_complement_marginal=float(ws.log_bound),
            attainment_abs_error=float(attainment_err),
            f_suite_max_excess=float(max_excess),
            f_suite_min_distant_gap=float(min_distant_gap),
            concavity_min_slack=float(min_slack),
            mutual_information=info.mutual_information,
            complement_entropy=info.complement_entropy,
            conditional_entropy=info.conditional_entropy,
            information_residual=info.residual,
            symmetric_information_residual=info.symmetric_residual,
            info_method=info.method,
            mi_mc=mc["mutual_information"].mean,
            mi_mc_se=mc["mutual_information"].standard_error,
            complement_entropy_mc=mc["complement_entropy"].mean,
            complement_entropy_mc_se=mc["complement_entropy"].standard_error,
            conditional_entropy_mc=mc["conditional_entropy"].mean,
            conditional_entropy_mc_se=mc["conditional_entropy"].standard_error,
            squashing_constant=float(r_value),
            min_squash_slack=float(squash_slack),
            kl_factor_to_marginal=float(bound.kl),
            kl_lower_bound_raw=float(bound.raw_log_value),
            kl_lower_bound=float(bound.bound),
            checks=checks,
        ))
    if isinstance(model, DiscreteTarget):
        model_echo = {
            "family": "discrete",
            "support_sizes": list(model.support_sizes),
        }
    else:
        model_echo = {
            "family": "gaussian",
            "block_dims": list(dec.block_dims),
            "mean": model.mean.tolist(),
            "covariance": model.covariance.tolist(),
        }
    return DiagnosticsReport(
        model_echo=model_echo,
        gibbs_echo={
            "seed": trace.seed,
            "n_cycles": trace.n_cycles,
            "burn_in": trace.burn_in,
            "init_strategy": trace.init_strategy,
            "retained": len(trace),
        },
        cavi_echo={
            "converged": state.converged,
            "cycles": state.cycles,
            "max_change": state.max_change,
        },
        options_echo={
            "suite_seed": options.suite_seed,
            "f_candidates": options.f_candidates,
            "concavity_mixtures": options.concavity_mixtures,
            "squash_grid_points": options.squash_grid_points,
            "info_method": options.info_method,
        },
        blocks=tuple(blocks),
        passed=not failures,
        failures=tuple(failures),
    )
