"""Shared generators and independent oracles for the test suite."""
import numpy as np

from voltvar.conic import ConicProblem
from voltvar.network import Bus, Line, build_network


def random_tree(rng, n, dg_frac=0.3, wide=False, r_range=(0.004, 0.02)):
    """Random radial feeder with ``n`` non-root buses and light loading."""
    buses = [Bus(0, None, "substation")]
    lines = []
    vlim = dict(v_min=0.5, v_max=1.5) if wide else {}
    for i in range(1, n + 1):
        parent = int(rng.integers(0, i))
        pc = float(rng.uniform(0.01, 0.06))
        if rng.random() < dg_frac:
            buses.append(Bus(i, parent, "dg", p_c=pc, q_c=0.75 * pc,
                             p_g=float(rng.uniform(0.0, 0.08)),
                             q_g_min=-0.1, q_g_max=0.1, **vlim))
        else:
            buses.append(Bus(i, parent, "load", p_c=pc, q_c=0.75 * pc, **vlim))
        lines.append(Line(i, float(rng.uniform(*r_range)), float(rng.uniform(0.004, 0.03))))
    return build_network(buses, lines)


def two_bus(r=0.01, x=0.02, wide=True):
    lim = dict(v_min=0.5, v_max=1.5) if wide else {}
    return build_network([Bus(0, None, "substation"), Bus(1, 0, "load", **lim)],
                         [Line(1, r, x)])


def two_bus_ell(r, x, p, q, v0=1.0):
    """Small root of the scalar current equation on a single line.

    With ``P = r l - p`` and ``Q = x l - q`` the equation ``l v0 = P^2 + Q^2``
    is a quadratic in ``l``; the physical branch is the smaller root.
    """
    a = r * r + x * x
    b = -(2.0 * r * p + 2.0 * x * q + v0)
    c = p * p + q * q
    return (-b - np.sqrt(b * b - 4 * a * c)) / (2 * a)


def random_conic(rng, m=6, k=2, nb=4, nc=3):
    """Random problem with a known strictly feasible point and a strictly feasible dual."""
    z0 = rng.normal(size=m)
    E = rng.normal(size=(k, m))
    e = E @ z0
    G = rng.normal(size=(nb, m))
    lo = G @ z0 - rng.uniform(0.1, 1, nb)
    hi = G @ z0 + rng.uniform(0.1, 1, nb)
    F = rng.normal(size=(nc, 3, m))
    f = rng.normal(size=(nc, 3))
    h = rng.normal(size=(nc, m))
    s = np.linalg.norm(F @ z0 + f, axis=1) - h @ z0 + rng.uniform(0.1, 1, nc)
    y = rng.normal(size=k)
    nhi = rng.uniform(0.1, 1, nb)
    nlo = rng.uniform(0.1, 1, nb)
    mu = rng.uniform(1, 2, nc)
    u = rng.normal(size=(nc, 3))
    u = u / np.linalg.norm(u, axis=1)[:, None] * mu[:, None] * rng.uniform(0, 0.9, (nc, 1))
    c = -(E.T @ y + G.T @ (nhi - nlo) + np.einsum("ijk,ij->k", F, u) - h.T @ mu)
    return ConicProblem(cost=c, E=E, e=e, G=G, g_lo=lo, g_hi=hi, F=F, f=f, h=h, s=s)


def cvxpy_value(pb):
    """Optimal value of a ConicProblem from an off-the-shelf modeling layer."""
    import cvxpy as cp

    z = cp.Variable(pb.n_vars)
    cons = []
    if pb.E.shape[0]:
        cons.append(pb.E @ z == pb.e)
    if pb.G.shape[0]:
        gz = pb.G @ z + pb.offset
        fin_lo = np.isfinite(pb.g_lo)
        fin_hi = np.isfinite(pb.g_hi)
        if fin_lo.any():
            cons.append(gz[fin_lo] >= pb.g_lo[fin_lo])
        if fin_hi.any():
            cons.append(gz[fin_hi] <= pb.g_hi[fin_hi])
    for j in range(pb.n_cones):
        cons.append(cp.norm(pb.F[j] @ z + pb.f[j]) <= pb.h[j] @ z + pb.s[j])
    prob = cp.Problem(cp.Minimize(pb.cost @ z), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, prob.status


def brute_threshold(y, ec, lo, hi, step=1e-5):
    """Grid minimizer of ``0.5 (q - y)^2 + ec |q|`` over ``[lo, hi]``."""
    grid = np.arange(lo, hi + step / 2, step)
    grid = np.clip(grid, lo, hi)
    obj = 0.5 * (grid - y) ** 2 + ec * np.abs(grid)
    return grid[np.argmin(obj)]
