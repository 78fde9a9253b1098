"""Coordinate-ascent mean-field engine over block factor products.

Each sweep replaces factor i with the normalized exponentiated expectation of
the log full conditional under the other factors, in fixed order 0..K-1
(results can depend on the order; fixing it makes runs reproducible). Three
update paths share that contract:

- analytic, for Gaussian targets with Gaussian factors;
- exact summation, for discrete targets;
- grid tabulation, for any target exposing 1-D block grids (expectations by
  trapezoid quadrature on the model's declared grids).

The engine is deterministic: there is no randomness beyond the initializer,
and the default initializers are deterministic (exact marginals for analytic
models, uniform for discrete, standard normal tables for the grid path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from duality_bench.core import TargetModel
from duality_bench.discrete import DiscreteFactor, DiscreteTarget, _safe_log, _xlogy
from duality_bench.errors import ModelError
from duality_bench.gaussian import GaussianFactor, GaussianTarget, kl_divergence
from duality_bench.quadrature import GridFactor, trapezoid_weights

__all__ = [
    "CaviConfig",
    "MeanFieldState",
    "cavi_update",
    "run_cavi",
    "kl_objective",
    "factor_change",
    "state_to_jsonable",
    "state_from_jsonable",
]

# Complement tensors beyond this many cells would silently eat memory; the
# grid path is meant for K=2 at the reference 4097-point grids.
MAX_GRID_CELLS = 2**23


@dataclass(frozen=True)
class CaviConfig:
    """Iteration budget, stopping tolerance, and initialization strategy.

    Convergence is declared when the largest per-cycle factor change (sup
    norm over parameters or table values) drops below ``tolerance``.
    ``path`` picks the update mechanism: "auto" uses the analytic route for
    Gaussian targets and exact summation for discrete ones; "grid" forces the
    tabulated route.
    """

    max_cycles: int = 200
    tolerance: float = 1e-10
    init: str = "default"
    path: str = "auto"

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.path not in ("auto", "grid"):
            raise ValueError(f"unknown path {self.path!r}")
        if self.init not in ("default", "marginals", "uniform", "standard_normal"):
            raise ValueError(f"unknown init strategy {self.init!r}")


@dataclass(frozen=True)
class MeanFieldState:
    """Product of per-block variational factors plus run bookkeeping.

    ``objective_history`` holds the KL objective before the first update and
    after every single-block update; coordinate descent makes it
    non-increasing (within numerical slack).
    """

    factors: tuple
    cycles: int
    objective_history: tuple[float, ...]
    converged: bool
    max_change: float

    @property
    def n_blocks(self) -> int:
        return len(self.factors)


def factor_change(old, new) -> float:
    """Sup-norm change between two factors of the same representation."""
    if isinstance(old, GaussianFactor) and isinstance(new, GaussianFactor):
        return max(
            float(np.max(np.abs(old.mean - new.mean))),
            float(np.max(np.abs(old.covariance - new.covariance))),
        )
    if isinstance(old, DiscreteFactor) and isinstance(new, DiscreteFactor):
        return float(np.max(np.abs(old.pmf - new.pmf)))
    if isinstance(old, GridFactor) and isinstance(new, GridFactor):
        if not np.array_equal(old.grid, new.grid):
            raise ValueError("grid factors live on different grids")
        return float(np.max(np.abs(old.values - new.values)))
    raise TypeError(f"cannot compare factors of types {type(old)} and {type(new)}")


def _complement_means(factors, i: int) -> np.ndarray:
    return np.concatenate([f.mean for j, f in enumerate(factors) if j != i])


def _grid_update(model: TargetModel, factors, i: int) -> GridFactor:
    """Tabulated Lemma update: exp of E_complement[log joint], renormalized.

    E[log pi(x | theta_-i)] differs from E[log joint(x, theta_-i)] by a
    constant in x, so the normalized factor is identical and the joint is the
    cheaper evaluation.
    """
    dec = model.decomposition
    if any(d != 1 for d in dec.block_dims):
        raise ModelError("grid path requires 1-D blocks")
    grids = [f.grid for f in factors]
    comp_blocks = [j for j in range(dec.n_blocks) if j != i]
    comp_sizes = [grids[j].size for j in comp_blocks]
    if int(np.prod(comp_sizes)) > MAX_GRID_CELLS:
        raise ModelError("grid path tensor too large; use coarser grids or fewer blocks")
    # normalized complement weights w_j = trapezoid * factor values
    weights = []
    for j in comp_blocks:
        w = trapezoid_weights(grids[j]) * factors[j].values
        weights.append(w / w.sum())
    comp_w = weights[0]
    for w in weights[1:]:
        comp_w = np.multiply.outer(comp_w, w)
    comp_w = comp_w.reshape(-1)
    comp_points = np.stack(
        [g.reshape(-1) for g in np.meshgrid(*[grids[j] for j in comp_blocks], indexing="ij")],
        axis=1,
    )
    x = grids[i]
    log_density = getattr(model, "log_density", None)
    expected = np.empty(x.size)
    chunk = max(1, MAX_GRID_CELLS // max(1, comp_points.shape[0]))
    offsets = [dec.block_offsets[j] for j in comp_blocks]
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        pts = np.empty((xs.size * comp_points.shape[0], dec.total_dim))
        pts[:, dec.block_offsets[i]] = np.repeat(xs, comp_points.shape[0])
        tiled = np.tile(comp_points, (xs.size, 1))
        for col, off in enumerate(offsets):
            pts[:, off] = tiled[:, col]
        if log_density is not None:
            lj = np.asarray(log_density(pts), dtype=float)
        else:
            lj = np.array([model.log_unnormalized_posterior(p) for p in pts])
        lj = lj.reshape(xs.size, comp_points.shape[0])
        if np.any(np.isneginf(lj) & (comp_w > 0)[None, :]):
            raise ModelError(
                f"block {i} update: log of zero density on a positive-mass region"
            )
        expected[start:start + xs.size] = lj @ comp_w
    return GridFactor.from_log_values(x, expected)


def cavi_update(model: TargetModel, factors, i: int, path: str = "auto"):
    """One coordinate update of factor i, other factors held fixed.

    Returns a normalized factor of the same representation family. Never
    increases the KL objective (coordinate descent on the divergence to the
    posterior).
    """
    model.decomposition.check_index(i)
    if path == "auto":
        if isinstance(model, GaussianTarget) and all(
            isinstance(f, GaussianFactor) for f in factors
        ):
            return model.cavi_update_factor(i, _complement_means(factors, i))
        if isinstance(model, DiscreteTarget):
            return model.cavi_update(factors, i)
        path = "grid"
    if path == "grid":
        return _grid_update(model, factors, i)
    raise ValueError(f"unknown path {path!r}")


def _initial_factors(model: TargetModel, path: str, strategy: str) -> list:
    """Resolve the initializer: exact marginals for analytic models, uniform
    for discrete, standard-normal tables for the grid path ("default"), or an
    explicitly named strategy."""
    dec = model.decomposition
    if path == "grid":
        if strategy not in ("default", "standard_normal"):
            raise ModelError(f"grid path has no {strategy!r} initializer")
        factors = []
        for i in range(dec.n_blocks):
            g = model.block_grid(i)
            factors.append(GridFactor(g, np.exp(-0.5 * g**2)))
        return factors
    if strategy == "default":
        strategy = "uniform" if isinstance(model, DiscreteTarget) else "marginals"
    if strategy == "marginals":
        if not model.has_analytic_marginals:
            raise ModelError("marginal initializer needs analytic marginals")
        return [model.marginal(i) for i in range(dec.n_blocks)]
    if strategy == "uniform":
        if not isinstance(model, DiscreteTarget):
            raise ModelError("uniform initializer is only defined for discrete models")
        return [DiscreteFactor(np.full(n, 1.0 / n)) for n in model.support_sizes]
    if strategy == "standard_normal":
        if not isinstance(model, GaussianTarget):
            raise ModelError("standard_normal initializer needs a Gaussian model")
        return [GaussianFactor(np.zeros(d), np.eye(d)) for d in dec.block_dims]
    raise ModelError(f"unknown init strategy {strategy!r}")


def run_cavi(model: TargetModel, config: CaviConfig,
             init_factors=None) -> MeanFieldState:
    """Iterate coordinate updates until convergence or ``max_cycles``.

    Non-convergence is a result, not an error: the returned state carries
    ``converged=False``. The objective history is tracked whenever the model
    is normalized (both built-in families are).
    """
    if init_factors is not None:
        factors = list(init_factors)
    else:
        path = config.path
        if path == "auto" and not isinstance(model, (GaussianTarget, DiscreteTarget)):
            path = "grid"
        factors = _initial_factors(model, path, config.init)
    history: list[float] = []
    track_objective = model.log_evidence is not None
    if track_objective:
        try:
            history.append(kl_objective(model, factors))
        except ModelError:
            # objective not computable for this model/factor combination
            # (e.g. grid factors with K > 2); run without tracking
            track_objective = False
    cycles = 0
    converged = False
    change = np.inf
    for _ in range(config.max_cycles):
        change = 0.0
        for i in range(model.decomposition.n_blocks):
            new = cavi_update(model, factors, i, path=config.path)
            change = max(change, factor_change(factors[i], new))
            factors[i] = new
            if track_objective:
                history.append(kl_objective(model, factors))
        cycles += 1
        if change < config.tolerance:
            converged = True
            break
    return MeanFieldState(
        factors=tuple(factors),
        cycles=cycles,
        objective_history=tuple(history),
        converged=converged,
        max_change=float(change),
    )


def kl_objective(model: TargetModel, factors) -> float:
    """KL(product of factors || posterior), >= 0.

    Closed form for Gaussian targets with Gaussian factors, exact summation
    for discrete targets, tensor trapezoid quadrature for grid factors
    (K <= 2, 1-D blocks). Needs a normalized target (known evidence).
    """
    factors = list(factors)
    if model.log_evidence is None:
        raise ModelError("objective requires normalized target (unknown evidence)")
    if isinstance(model, GaussianTarget) and all(
        isinstance(f, GaussianFactor) for f in factors
    ):
        mean = np.concatenate([f.mean for f in factors])
        cov = np.zeros((mean.size, mean.size))
        at = 0
        for f in factors:
            d = f.dim
            cov[at:at + d, at:at + d] = f.covariance
            at += d
        return kl_divergence(GaussianFactor(mean, cov),
                             GaussianFactor(model.mean, model.covariance))
    if isinstance(model, DiscreteTarget) and all(
        isinstance(f, DiscreteFactor) for f in factors
    ):
        q = factors[0].pmf
        for f in factors[1:]:
            q = np.multiply.outer(q, f.pmf)
        log_pi = _safe_log(model.joint_pmf)
        if np.any((q > 0) & np.isneginf(log_pi)):
            return float(np.inf)
        return float(np.sum(_xlogy(q, _safe_log(q) - log_pi)))
    if all(isinstance(f, GridFactor) for f in factors):
        if len(factors) != 2:
            raise ModelError("grid objective implemented for K = 2 only")
        g1, g2 = factors[0].grid, factors[1].grid
        w = np.multiply.outer(
            trapezoid_weights(g1) * factors[0].values,
            trapezoid_weights(g2) * factors[1].values,
        )
        pts = np.stack(
            [m.reshape(-1) for m in np.meshgrid(g1, g2, indexing="ij")], axis=1
        )
        log_density = getattr(model, "log_density", None)
        if log_density is not None:
            log_pi = np.asarray(log_density(pts), dtype=float)
        else:
            log_pi = np.array([model.log_unnormalized_posterior(p) for p in pts])
        log_pi = log_pi.reshape(g1.size, g2.size) - model.log_evidence
        log_q = factors[0].log_values[:, None] + factors[1].log_values[None, :]
        integrand = np.where(w > 0, log_q - log_pi, 0.0)
        return float(np.sum(w * integrand))
    raise ModelError("unsupported model/factor combination for the KL objective")


# --- JSON forms (converged-state export / import) ---------------------------


def state_to_jsonable(state: MeanFieldState) -> dict:
    factors = []
    for f in state.factors:
        if isinstance(f, GaussianFactor):
            factors.append({
                "type": "gaussian",
                "mean": f.mean.tolist(),
                "covariance": f.covariance.tolist(),
            })
        elif isinstance(f, DiscreteFactor):
            factors.append({"type": "discrete", "pmf": f.pmf.tolist()})
        elif isinstance(f, GridFactor):
            factors.append({
                "type": "grid",
                "grid": f.grid.tolist(),
                "values": f.values.tolist(),
            })
        else:
            raise TypeError(f"cannot serialize factor of type {type(f)}")
    return {
        "converged": state.converged,
        "cycles": state.cycles,
        "max_change": state.max_change,
        "objective_history": list(state.objective_history),
        "factors": factors,
    }


def state_from_jsonable(data: dict) -> MeanFieldState:
    factors = []
    for fd in data["factors"]:
        kind = fd.get("type")
        if kind == "gaussian":
            factors.append(GaussianFactor(np.asarray(fd["mean"]), np.asarray(fd["covariance"])))
        elif kind == "discrete":
            factors.append(DiscreteFactor(np.asarray(fd["pmf"])))
        elif kind == "grid":
            factors.append(GridFactor(np.asarray(fd["grid"]), np.asarray(fd["values"])))
        else:
            raise ValueError(f"unknown factor type {kind!r}")
    return MeanFieldState(
        factors=tuple(factors),
        cycles=int(data.get("cycles", 0)),
        objective_history=tuple(float(v) for v in data.get("objective_history", ())),
        converged=bool(data.get("converged", False)),
        max_change=float(data.get("max_change", 0.0)),
    )
