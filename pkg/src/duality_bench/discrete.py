"""Finite joint probability table over K categorical blocks.

The counting-measure oracle: every quantity (conditionals, marginals,
entropies, mutual information, coordinate updates, transition kernels) is
computed by exact summation, so this model serves as the brute-force
reference of last resort. Blocks are 1-D categorical variables taking values
in {0, ..., n_i - 1}; K <= 4 and n_i <= 16 keep exhaustive enumeration in the
millisecond range.

Zero entries are allowed in the joint table, but conditioning on a zero-mass
event raises, and the coordinate update rejects supports where a zero
conditional meets positive complement-factor mass (absolute continuity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duality_bench.core import BlockDecomposition, TargetModel
from duality_bench.errors import ModelError, ZeroMassError

__all__ = ["DiscreteFactor", "DiscreteTarget"]

MAX_BLOCKS = 4
MAX_SUPPORT = 16
INPUT_MASS_TOL = 1e-9


def _xlogy(p: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """p * logq with the 0 * log 0 = 0 convention."""
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * logq[mask]
    return out


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


@dataclass(frozen=True)
class DiscreteFactor:
    """Pmf over one block's support {0..n-1}; nonnegative, sums to 1."""

    pmf: np.ndarray
    _cumsum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float).reshape(-1)
        if pmf.size < 1:
            raise ValueError("pmf must be non-empty")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and nonnegative")
        total = float(pmf.sum())
        if abs(total - 1.0) > INPUT_MASS_TOL:
            raise ValueError(f"pmf sums to {total!r}, expected 1 within {INPUT_MASS_TOL}")
        pmf = pmf / total
        cumsum = np.cumsum(pmf)
        pmf.setflags(write=False)
        cumsum.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "_cumsum", cumsum)

    @classmethod
    def _trusted(cls, pmf: np.ndarray, cumsum: np.ndarray) -> "DiscreteFactor":
        obj = object.__new__(cls)
        object.__setattr__(obj, "pmf", pmf)
        object.__setattr__(obj, "_cumsum", cumsum)
        return obj

    @property
    def support_size(self) -> int:
        return self.pmf.size

    def log_density(self, x):
        """Log pmf at integer value(s); -inf on zero entries."""
        idx = np.asarray(x)
        idx = idx.reshape(-1) if idx.ndim else idx.reshape(1)
        k = idx.astype(int)
        if np.any(np.abs(idx.astype(float) - k) > 0):
            raise ValueError("discrete block values must be integers")
        if np.any((k < 0) | (k >= self.pmf.size)):
            raise ValueError("value outside the block support")
        out = _safe_log(self.pmf[k])
        return float(out[0]) if out.size == 1 and np.ndim(x) <= 1 else out

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random()
        return np.array([float(np.searchsorted(self._cumsum, u, side="right"))])

    def entropy(self) -> float:
        return -float(np.sum(_xlogy(self.pmf, _safe_log(self.pmf))))


class DiscreteTarget(TargetModel):
    """Dense joint pmf over the product support, one 1-D block per axis."""

    def __init__(self, joint_pmf, support_sizes=None):
        table = np.asarray(joint_pmf, dtype=float)
        if support_sizes is not None:
            table = table.reshape(tuple(int(n) for n in support_sizes))
        if table.ndim < 2:
            raise ValueError("need at least 2 blocks (K > 1)")
        if table.ndim > MAX_BLOCKS:
            raise ValueError(f"at most {MAX_BLOCKS} blocks supported")
        if max(table.shape) > MAX_SUPPORT:
            raise ValueError(f"support sizes must be <= {MAX_SUPPORT}")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ModelError("joint pmf entries must be finite and nonnegative")
        total = float(table.sum())
        if abs(total - 1.0) > INPUT_MASS_TOL:
            raise ModelError(f"joint pmf sums to {total!r}, expected 1")
        table = table / total
        table.setflags(write=False)
        self._table = table
        self._decomposition = BlockDecomposition(tuple(1 for _ in table.shape))
        self._flat_cumsum = np.cumsum(table.reshape(-1))
        # Per-block conditional tables: axis i moved last, rows indexed by the
        # flat complement state (C order over the remaining axes).
        self._cond = []
        for i in range(table.ndim):
            rows = np.moveaxis(table, i, -1).reshape(-1, table.shape[i])
            mass = rows.sum(axis=1)
            with np.errstate(invalid="ignore"):
                probs = np.where(mass[:, None] > 0, rows / np.where(mass[:, None] > 0, mass[:, None], 1.0), 0.0)
            cums = np.cumsum(probs, axis=1)
            for arr in (rows, mass, probs, cums):
                arr.setflags(write=False)
            self._cond.append({"mass": mass, "probs": probs, "cumsum": cums})

    # --- TargetModel contract ---------------------------------------------

    @property
    def decomposition(self) -> BlockDecomposition:
        return self._decomposition

    @property
    def is_discrete(self) -> bool:
        return True

    @property
    def has_analytic_marginals(self) -> bool:
        return True

    @property
    def log_evidence(self) -> float:
        return 0.0

    @property
    def support_sizes(self) -> tuple[int, ...]:
        return self._table.shape

    @property
    def joint_pmf(self) -> np.ndarray:
        return self._table

    def to_state(self, theta) -> tuple[int, ...]:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self._table.ndim:
            raise ValueError(f"state must have {self._table.ndim} entries")
        state = tuple(int(round(v)) for v in theta)
        if any(abs(v - s) > 1e-9 for v, s in zip(theta, state)):
            raise ValueError("discrete states must be integer-valued")
        if any(not 0 <= s < n for s, n in zip(state, self._table.shape)):
            raise ValueError(f"state {state} outside support {self._table.shape}")
        return state

    def log_unnormalized_posterior(self, theta) -> float:
        return float(_safe_log(np.asarray([self._table[self.to_state(theta)]]))[0])

    def log_density(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            return self.log_unnormalized_posterior(theta)
        idx = tuple(theta[:, j].astype(int) for j in range(theta.shape[1]))
        return _safe_log(self._table[idx])

    def _complement_flat_index(self, i: int, complement_values) -> int:
        comp = np.asarray(complement_values, dtype=float).reshape(-1)
        shape = tuple(n for j, n in enumerate(self._table.shape) if j != i)
        if comp.size != len(shape):
            raise ValueError(f"complement of block {i} needs {len(shape)} values")
        ints = tuple(int(round(v)) for v in comp)
        if any(abs(v - k) > 1e-9 for v, k in zip(comp, ints)):
            raise ValueError("discrete complement values must be integers")
        if any(not 0 <= k < n for k, n in zip(ints, shape)):
            raise ValueError(f"complement state {ints} outside support {shape}")
        return int(np.ravel_multi_index(ints, shape)) if shape else 0

    def full_conditional(self, i: int, complement_values) -> DiscreteFactor:
        """Slice of the joint pmf renormalized over block i."""
        self._decomposition.check_index(i)
        c = self._cond[i]
        flat = self._complement_flat_index(i, complement_values)
        if c["mass"][flat] <= 0:
            raise ZeroMassError(
                f"conditioning event for block {i} (complement state {complement_values}) "
                "has zero probability mass"
            )
        return DiscreteFactor._trusted(c["probs"][flat], c["cumsum"][flat])

    def block_grid(self, i: int) -> np.ndarray:
        self._decomposition.check_index(i)
        return np.arange(self._table.shape[i], dtype=float)

    # --- marginals, conditionals, information quantities --------------------

    def marginal(self, i: int) -> DiscreteFactor:
        self._decomposition.check_index(i)
        axes = tuple(j for j in range(self._table.ndim) if j != i)
        return DiscreteFactor(self._table.sum(axis=axes))

    def complement_marginal(self, i: int) -> DiscreteFactor:
        """Pmf of the complement, flattened in C order over the remaining axes."""
        self._decomposition.check_index(i)
        return DiscreteFactor(np.moveaxis(self._table, i, -1).reshape(-1, self._table.shape[i]).sum(axis=1))

    def conditional_complement(self, i: int, block_value) -> DiscreteFactor:
        """Pmf of theta_-i given theta_i, flattened in C order."""
        self._decomposition.check_index(i)
        k = int(np.asarray(block_value).reshape(-1)[0])
        slab = np.take(self._table, k, axis=i)
        mass = float(slab.sum())
        if mass <= 0:
            raise ZeroMassError(f"block {i} value {k} has zero marginal mass")
        return DiscreteFactor(slab.reshape(-1) / mass)

    def block_entropy(self, i: int) -> float:
        """H(theta_i), exact summation of the block marginal."""
        return self.marginal(i).entropy()

    def complement_entropy(self, i: int) -> float:
        """H(theta_-i), exact summation of the complement marginal."""
        return self.complement_marginal(i).entropy()

    def conditional_entropy_complement(self, i: int) -> float:
        """H(theta_-i | theta_i) = -sum_theta pi(theta) log pi(theta_-i | theta_i)."""
        p_i = self._table.sum(axis=tuple(j for j in range(self._table.ndim) if j != i))
        shape = [1] * self._table.ndim
        shape[i] = self._table.shape[i]
        log_cond = _safe_log(self._table) - _safe_log(p_i.reshape(shape))
        return -float(np.sum(_xlogy(self._table, log_cond)))

    def conditional_entropy_block(self, i: int) -> float:
        """H(theta_i | theta_-i)."""
        mass = np.moveaxis(self._table, i, -1).reshape(-1, self._table.shape[i]).sum(axis=1)
        rows = np.moveaxis(self._table, i, -1).reshape(-1, self._table.shape[i])
        log_cond = _safe_log(rows) - _safe_log(mass)[:, None]
        return -float(np.sum(_xlogy(rows, log_cond)))

    def mutual_information(self, i: int) -> float:
        """I(theta_i; theta_-i) = KL(joint || product of the two marginals)."""
        p_i = self.marginal(i).pmf
        p_c = self.complement_marginal(i).pmf
        joint = np.moveaxis(self._table, i, -1).reshape(-1, self._table.shape[i])
        log_ratio = _safe_log(joint) - (_safe_log(p_c)[:, None] + _safe_log(p_i)[None, :])
        return float(np.sum(_xlogy(joint, log_ratio)))

    # --- coordinate update ---------------------------------------------------

    def complement_factor_weights(self, factors, i: int) -> np.ndarray:
        """Product pmf over the complement states (flat, C order) from per-block factors."""
        if len(factors) != self._table.ndim:
            raise ValueError("need one factor per block")
        w = np.ones(1)
        for j, f in enumerate(factors):
            if j == i:
                continue
            pmf = np.asarray(f.pmf, dtype=float)
            if pmf.size != self._table.shape[j]:
                raise ValueError(f"factor {j} has support {pmf.size}, table needs {self._table.shape[j]}")
            w = np.multiply.outer(w, pmf)
        return w.reshape(-1)

    def cavi_update(self, factors, i: int) -> DiscreteFactor:
        """Normalized exp of the expected log full conditional of block i.

        The expectation is over the complement product of the given factors;
        exact summation. Rejects supports where a zero conditional meets
        positive complement mass.
        """
        self._decomposition.check_index(i)
        w = self.complement_factor_weights(factors, i)
        rows = np.moveaxis(self._table, i, -1).reshape(-1, self._table.shape[i])
        mass = rows.sum(axis=1)
        active = w > 0
        if np.any(active & (mass <= 0)):
            raise ModelError(
                f"block {i} update: complement factor puts mass on a zero-mass conditioning event"
            )
        if np.any(rows[active] <= 0):
            raise ModelError(
                f"block {i} update: log of a zero conditional where the complement "
                "factor has positive mass (absolute continuity violated)"
            )
        log_cond = _safe_log(rows[active]) - _safe_log(mass[active])[:, None]
        g = w[active] @ log_cond
        nu = np.exp(g - g.max())
        return DiscreteFactor(nu / nu.sum())

    # --- sampling -------------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Exact joint draw, returned as a float state vector."""
        u = rng.random()
        flat = int(np.searchsorted(self._flat_cumsum, u, side="right"))
        return np.asarray(np.unravel_index(flat, self._table.shape), dtype=float)

    def __eq__(self, other) -> bool:
        return isinstance(other, DiscreteTarget) and np.array_equal(self._table, other._table)

    def __hash__(self):
        return hash(self._table.tobytes())
