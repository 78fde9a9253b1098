"""Independent oracles used across the test suite.

Everything here is implemented from scratch on purpose (plain trapezoid sums,
dense enumeration, simplex pattern search) so the oracles share no code with
the library paths they check.
"""

from itertools import combinations

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)


def trap_weights(grid):
    grid = np.asarray(grid, dtype=float)
    w = np.empty_like(grid)
    h = np.diff(grid)
    w[0] = h[0] / 2
    w[-1] = h[-1] / 2
    w[1:-1] = (h[:-1] + h[1:]) / 2
    return w


def quad(values, grid):
    return float(np.sum(trap_weights(grid) * np.asarray(values, dtype=float)))


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var)) - (x - mean) ** 2 / (2.0 * var)


def mvn_logpdf(points, mean, cov):
    """Dense multivariate normal log pdf via explicit inverse (oracle grade)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    inv = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(cov)
    diff = points - mean
    quad_form = np.einsum("ni,ij,nj->n", diff, inv, diff)
    return -0.5 * (mean.size * LOG_2PI + logdet + quad_form)


def grid_normalized_conditional(log_joint_values, grid):
    """Renormalize exp(log joint) over a block grid: the conditional oracle."""
    log_joint_values = np.asarray(log_joint_values, dtype=float)
    shifted = np.exp(log_joint_values - log_joint_values.max())
    return shifted / quad(shifted, grid)


def kl_quadrature(log_q, log_p, grid):
    """KL(q||p) by quadrature of q log(q/p), densities given in log form."""
    q = np.exp(np.asarray(log_q, dtype=float))
    return float(np.sum(trap_weights(grid) * q * (np.asarray(log_q) - np.asarray(log_p))))


def random_spd(rng, dim, min_eig=0.3):
    a = rng.standard_normal((dim, dim))
    m = a @ a.T + min_eig * np.eye(dim)
    scale = np.sqrt(np.diag(m))
    return m / np.outer(scale, scale) * rng.uniform(0.5, 2.0)


def random_table(rng, sizes):
    """Strictly positive random joint pmf (Dirichlet-like)."""
    t = rng.dirichlet(np.ones(int(np.prod(sizes)))).reshape(sizes)
    t = t + 1e-4
    return t / t.sum()


# --------------------------------------------------------------------------
# Brute-force coordinate KL minimizer on the probability simplex
# --------------------------------------------------------------------------


def product_kl_vs_table(q_block, i, factors, table):
    """KL of the factor product (factor i replaced by q_block) against the
    joint table, by literal full-table summation."""
    q = np.ones(())
    for j in range(table.ndim):
        v = np.asarray(q_block if j == i else factors[j], dtype=float)
        q = np.multiply.outer(q, v)
    mask = q > 0
    return float(np.sum(q[mask] * (np.log(q[mask]) - np.log(table[mask]))))


def _compositions(total, parts):
    """All nonnegative integer vectors of length `parts` summing to `total`."""
    for cut in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield out


def minimize_block_kl(table, i, factors, resolution=8, final_step=1e-9):
    """Global minimizer of KL(q(theta_i) x complement || table) over the
    simplex, by dense coarse grid search plus pattern search with mesh
    refinement (the objective is convex, so the polling directions
    {e_a - e_b} certify the global minimum).
    """
    n = table.shape[i]

    def objective(q):
        return product_kl_vs_table(q, i, factors, table)

    best = None
    best_val = np.inf
    for comp in _compositions(resolution, n):
        q = np.asarray(comp, dtype=float) / resolution
        val = objective(q)
        if val < best_val:
            best, best_val = q, val
    step = 1.0 / resolution
    while step > final_step:
        improved = True
        while improved:
            improved = False
            for a in range(n):
                for b in range(n):
                    if a == b or best[b] < step:
                        continue
                    cand = best.copy()
                    cand[a] += step
                    cand[b] -= step
                    val = objective(cand)
                    if val < best_val:
                        best, best_val = cand, val
                        improved = True
        step /= 2.0
    return best, best_val
