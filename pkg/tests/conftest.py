"""Shared fixtures: dense reference propagation and frozen test systems.

The dense oracle advances the descriptor system exactly on each interval
where every drive is affine in t, using numpy solves and the scipy
matrix exponential only; it shares no code with the package's stepping
path beyond the closed-form update it implements, so agreement is
meaningful. It requires a nonsingular C (dense A must exist).
"""

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

import expsim as es
from expsim import krylov, numkit


def dense_a(system) -> np.ndarray:
    return -np.linalg.solve(system.c.to_dense(), system.g.to_dense())


def source_corners(system, t_start, t_stop):
    corners = {float(t_start), float(t_stop)}
    for w in system.sources:
        corners.update(float(t) for t in w.transition_times(t_start, t_stop))
    return sorted(corners)


def dense_exact(system, times=None):
    """Exact states at the requested times (default: final time only).

    Propagates corner to corner with x(t+h) = e^{hA}(x + F) - P, which
    is the closed-form solution for affine-in-t input; requested times
    that are not corners split the enclosing interval.
    """
    gd, cd, bd = system.g.to_dense(), system.c.to_dense(), system.b.to_dense()
    a = -np.linalg.solve(cd, gd)
    grid = set(source_corners(system, system.t_start, system.t_stop))
    want = [float(system.t_stop)] if times is None else [float(t) for t in times]
    grid.update(want)
    grid = sorted(grid)

    def u_at(t):
        return np.array([w.value(t) for w in system.sources])

    x = np.linalg.solve(gd, bd @ u_at(grid[0]))
    out = {grid[0]: x.copy()}
    for ta, tb in zip(grid[:-1], grid[1:]):
        h = tb - ta
        nudge = h * 1e-9  # evaluate strictly inside the affine piece
        w0 = -np.linalg.solve(gd, bd @ u_at(ta + nudge))
        w1 = -np.linalg.solve(gd, bd @ u_at(tb - nudge))
        th0 = -np.linalg.solve(gd, cd @ w0)
        th1 = -np.linalg.solve(gd, cd @ w1)
        f = w0 + (th1 - th0) / h
        p = w1 + (th1 - th0) / h
        x = scipy.linalg.expm(h * a) @ (x + f) - p
        out[tb] = x.copy()
    if times is None:
        return out[grid[-1]]
    return np.array([out[t] for t in want])


def ladder_matrices(n, caps, rng):
    """Grounded RC ladder: random series resistors, prescribed caps."""
    rs = rng.uniform(0.5, 2.0, n + 1)
    gd = np.zeros((n, n))
    for i in range(n):
        gd[i, i] += 1 / rs[i]
        if i + 1 < n:
            gd[i, i] += 1 / rs[i + 1]
            gd[i, i + 1] -= 1 / rs[i + 1]
            gd[i + 1, i] -= 1 / rs[i + 1]
    gd[n - 1, n - 1] += 1 / rs[n]
    return gd, np.diag(np.asarray(caps, dtype=float))


class EstimatorFamily:
    """Frozen n=30 stiff RC family for the estimator spot checks.

    Seconds-scale time constants (the residual formulas are rates, so
    factor-of-true comparisons need h of order one), 3-decade capacitor
    spread, stiffness ~1e5, h = 5 / lambda_max, gamma = h / 10.
    """

    def __init__(self, seed=7, n=30):
        rng = np.random.default_rng(seed)
        caps = np.logspace(0.0, 3.0, n)
        rng.shuffle(caps)
        self.gd, self.cd = ladder_matrices(n, caps, rng)
        self.v = rng.standard_normal(n)
        self.n = n
        self.g = numkit.from_scipy(sp.csc_matrix(self.gd))
        self.c = numkit.from_scipy(sp.csc_matrix(self.cd))
        self.a = -np.linalg.solve(self.cd, self.gd)
        lam = np.linalg.eigvals(self.a).real
        self.h = 5.0 / abs(lam).max()
        self.gamma = self.h / 10.0
        self.g_factors = numkit.lu_factorize(self.g)
        self.c_factors = numkit.lu_factorize(self.c)
        shift = krylov.make_shift_matrix(self.c, self.g, self.gamma)
        self.operators = {
            "standard": krylov.standard_operator(self.c_factors, self.g),
            "inverted": krylov.inverted_operator(
                self.g_factors, self.c, g=self.g, aux_c_factors=self.c_factors
            ),
            "rational": krylov.rational_operator(
                numkit.lu_factorize(shift),
                self.c,
                self.gamma,
                g=self.g,
                aux_c_factors=self.c_factors,
            ),
        }

    def exact_action(self, h, v=None):
        v = self.v if v is None else v
        return scipy.linalg.expm(h * self.a) @ v


@pytest.fixture(scope="session")
def estimator_family():
    return EstimatorFamily()


@pytest.fixture(scope="session")
def stiff_mesh():
    """Shared stiff mesh: n=400, measured stiffness well above 1e8."""
    mesh = es.generate_mesh_netlist(n_nodes=400, stiffness_target=1e9, seed=7)
    return mesh, es.build_system(mesh.text)


@pytest.fixture(autouse=True)
def audited_bases():
    """Verify orthonormality and the Arnoldi relation on every basis.

    Enabled for the whole suite so any run anywhere that emits a basis
    gets both invariants re-checked on teardown.
    """
    krylov.basis_audit.enabled = True
    krylov.basis_audit.clear()
    yield krylov.basis_audit
    try:
        krylov.basis_audit.verify_all(ortho_tol=1e-8, rel_tol=1e-8)
    finally:
        krylov.basis_audit.enabled = False
        krylov.basis_audit.clear()


LADDER_NETLIST = """* driven ladder, current sources only
R1 1 2 2
R2 2 3 2
R3 3 4 2
R4 4 0 2
R5 1 0 5
C1 1 0 1e-12
C2 2 0 3e-12
C3 3 0 1e-13
C4 4 0 2e-12
I1 0 1 PULSE(0 1e-3 2e-11 1e-11 1e-11 5e-11 2e-10)
I2 0 3 PWL(0 0 5e-11 5e-4 4e-10 5e-4)
.TRAN 0 4e-10
.END
"""

SINGULAR_C_NETLIST = """* rc line with a cap-free joint node
R1 1 2 10
R2 2 3 10
R3 3 4 10
R4 4 0 10
C1 1 0 5e-13
C3 3 0 8e-13
C4 4 0 4e-13
I1 0 1 PULSE(0 2e-3 1e-10 1e-10 1e-10 3e-10 1e-9)
.TRAN 0 1e-9
.END
"""

SCALAR_RC_NETLIST = """* scalar rc
R1 1 0 1
C1 1 0 1
I1 0 1 PWL(0 0 0.1 1 10 1)
.TRAN 0 2
.END
"""


@pytest.fixture()
def ladder_system():
    return es.build_system(LADDER_NETLIST)


@pytest.fixture()
def singular_c_system():
    return es.build_system(SINGULAR_C_NETLIST)


@pytest.fixture()
def scalar_rc_system():
    return es.build_system(SCALAR_RC_NETLIST)
