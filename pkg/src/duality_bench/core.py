"""Block-decomposed parameter spaces and the target-model contract.

A parameter vector theta is a flat float64 array of length ``total_dim``,
partitioned into K >= 2 contiguous blocks. Matrix-valued blocks are expected
to be row-major flattened by the caller; only flat vectors appear in this API.
Everything downstream (Gibbs, CAVI, diagnostics) is written against
:class:`TargetModel`.

All types are immutable values after construction and safe to share across
threads; model evaluations must be pure.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

__all__ = [
    "BlockDecomposition",
    "BlockView",
    "ConditionalDensity",
    "TargetModel",
    "make_decomposition",
]


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BlockDecomposition:
    """Partition of a ``total_dim``-vector into K >= 2 contiguous blocks."""

    block_dims: tuple[int, ...]
    block_offsets: tuple[int, ...] = field(init=False)
    total_dim: int = field(init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if len(dims) < 2:
            raise ValueError("K must exceed 1: need at least 2 blocks")
        if any(d < 1 for d in dims):
            raise ValueError(f"block dims must be positive, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        offsets = (0, *np.cumsum(dims[:-1]).tolist())
        object.__setattr__(self, "block_offsets", tuple(int(o) for o in offsets))
        object.__setattr__(self, "total_dim", int(sum(dims)))

    @property
    def n_blocks(self) -> int:
        return len(self.block_dims)

    def check_index(self, i: int) -> int:
        if not 0 <= i < self.n_blocks:
            raise IndexError(f"block index {i} out of range [0, {self.n_blocks})")
        return i

    def check_vector(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.total_dim,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.total_dim},)"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("parameter vector entries must be finite")
        return theta

    def block_slice(self, i: int) -> slice:
        self.check_index(i)
        start = self.block_offsets[i]
        return slice(start, start + self.block_dims[i])

    def block_indices(self, i: int) -> np.ndarray:
        s = self.block_slice(i)
        return np.arange(s.start, s.stop)

    def complement_indices(self, i: int) -> np.ndarray:
        """Indices of all other blocks, in block order."""
        s = self.block_slice(i)
        return np.concatenate([np.arange(0, s.start), np.arange(s.stop, self.total_dim)])

    def split(self, theta, i: int) -> "BlockView":
        theta = self.check_vector(theta)
        s = self.block_slice(i)
        return BlockView(
            block_index=i,
            values=_frozen_array(theta[s]),
            complement_values=_frozen_array(theta[self.complement_indices(i)]),
        )

    def substitute(self, theta, i: int, new_block) -> np.ndarray:
        """Return a copy of theta with block i replaced; other blocks untouched."""
        theta = self.check_vector(theta)
        new_block = np.asarray(new_block, dtype=float).reshape(-1)
        if new_block.shape != (self.block_dims[i],):
            raise ValueError(
                f"block {i} has dim {self.block_dims[i]}, got values of shape {new_block.shape}"
            )
        out = theta.copy()
        out[self.block_slice(i)] = new_block
        return out

    def assemble(self, i: int, block_values, complement_values) -> np.ndarray:
        """Inverse of :meth:`split`: interleave a block with its complement."""
        block_values = np.asarray(block_values, dtype=float).reshape(-1)
        complement_values = np.asarray(complement_values, dtype=float).reshape(-1)
        if block_values.shape != (self.block_dims[i],):
            raise ValueError("block values have wrong dimension")
        if complement_values.shape != (self.total_dim - self.block_dims[i],):
            raise ValueError("complement values have wrong dimension")
        out = np.empty(self.total_dim)
        out[self.block_slice(i)] = block_values
        out[self.complement_indices(i)] = complement_values
        return out


@dataclass(frozen=True)
class BlockView:
    """One block of a parameter vector plus the remaining entries in block order."""

    block_index: int
    values: np.ndarray
    complement_values: np.ndarray


def make_decomposition(block_dims) -> BlockDecomposition:
    """Build a :class:`BlockDecomposition` from a list of positive block dims."""
    return BlockDecomposition(block_dims=tuple(block_dims))


@runtime_checkable
class ConditionalDensity(Protocol):
    """A normalized density on one block: evaluatable and sampleable."""

    def log_density(self, x) -> float | np.ndarray: ...

    def sample(self, rng: np.random.Generator) -> np.ndarray: ...


class TargetModel(ABC):
    """Evaluatable joint/posterior density with per-block full conditionals.

    Implementations must be immutable and their evaluations pure, so shared
    read-only use from multiple threads is safe.
    """

    @property
    @abstractmethod
    def decomposition(self) -> BlockDecomposition: ...

    @property
    @abstractmethod
    def is_discrete(self) -> bool: ...

    @property
    @abstractmethod
    def has_analytic_marginals(self) -> bool: ...

    @property
    def log_evidence(self) -> float | None:
        """log normalizing constant of the posterior, when known (None otherwise)."""
        return None

    @abstractmethod
    def log_unnormalized_posterior(self, theta) -> float:
        """Finite on the declared support."""

    @abstractmethod
    def full_conditional(self, i: int, complement_values) -> ConditionalDensity:
        """Normalized density of block i given the other blocks."""

    @abstractmethod
    def block_grid(self, i: int) -> np.ndarray:
        """Declared support grid for block i.

        Continuous models return quadrature nodes covering the block's mass;
        discrete models return the integer support. Only defined for 1-D blocks.
        """

    def conditional_normalization(self, i: int, complement_values) -> float:
        """Mass of exp(log_density) of the full conditional on the block grid.

        Reference check backing the contract that full conditionals are
        normalized densities (== 1 within 1e-8).
        """
        cond = self.full_conditional(i, complement_values)
        grid = self.block_grid(i)
        values = np.exp(np.asarray(cond.log_density(grid.reshape(-1, 1))))
        if self.is_discrete:
            return float(np.sum(values))
        from duality_bench.quadrature import trapezoid_weights

        return float(np.sum(trapezoid_weights(grid) * values))
