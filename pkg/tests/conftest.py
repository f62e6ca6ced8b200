"""Shared instance generators.

Every generated system is feasible by construction: constraint right-hand
sides are set from a zero-control rollout over all scenarios plus a strict
margin, so the zero-control trajectory is an interior feasible point.
"""

import numpy as np
import pytest

from rmpc import (
    Iterate,
    Realization,
    UncertainSystem,
    assemble_rqp,
    enumerate_scenarios,
)

# (n_x, n_u, N, N_r, branching, q) within the corpus bounds
# n_x <= 3, n_u <= 2, N <= 5, M <= 8.
CORPUS_SHAPES = [
    (1, 1, 2, 0, (2,), 1),
    (2, 1, 3, 0, (2,), 2),
    (2, 1, 3, 1, (2, 2), 1),
    (2, 2, 4, 1, (2, 2), 2),
    (3, 1, 4, 0, (3,), 2),
    (3, 2, 3, 1, (2, 3), 1),
    (2, 1, 5, 1, (2, 4), 1),
    (2, 2, 4, 2, (2, 2, 2), 2),
    (1, 1, 4, 2, (2, 2, 2), 1),
    (3, 2, 5, 0, (2,), 2),
]

# n_rows + m_ineq = M*(N+1) + M*N*q <= 14 keeps brute force tractable.
TINY_SHAPES = [
    (1, 1, 2, 0, (2,), 1),
    (2, 1, 2, 0, (2,), 1),
    (1, 1, 3, 0, (1,), 1),
    (2, 2, 3, 0, (1,), 1),
    (1, 1, 2, 0, (2,), 2),
    (2, 1, 4, 0, (1,), 2),
]


def stable_matrix(rng, n, radius=0.9):
    A = rng.uniform(-1.0, 1.0, (n, n))
    top = max(1.0, float(np.max(np.abs(np.linalg.eigvals(A)))))
    return A * (radius / top)


def psd_matrix(rng, n, floor=0.05):
    G = rng.uniform(-1.0, 1.0, (n, n))
    return G @ G.T + floor * np.eye(n)


def make_system(rng, n_x, n_u, N, N_r, branching, q=1, margin=4.0):
    realizations = []
    for k in range(N):
        count = branching[k] if k <= N_r else 1
        stage = []
        for _ in range(count):
            stage.append(
                Realization(
                    A=stable_matrix(rng, n_x),
                    B=rng.uniform(-1.0, 1.0, (n_x, n_u)),
                    v=rng.uniform(-0.3, 0.3, n_x),
                )
            )
        realizations.append(stage)
    C = rng.uniform(-1.0, 1.0, (q, n_x))
    D = rng.uniform(-1.0, 1.0, (q, n_u))
    x_bar = rng.uniform(-1.0, 1.0, n_x)

    # Zero-control rollout over every scenario fixes strictly feasible e.
    states = [[x_bar]]
    for k in range(N):
        nxt = []
        for x in states[-1]:
            for real in realizations[k]:
                nxt.append(real.A @ x + real.v)
        states.append(nxt)
    e = []
    for k in range(N):
        worst = np.max(np.vstack([C @ x for x in states[k]]), axis=0)
        e.append(worst + margin)

    return UncertainSystem(
        n_x=n_x,
        n_u=n_u,
        N=N,
        N_r=N_r,
        realizations=realizations,
        Q=psd_matrix(rng, n_x + n_u),
        S=psd_matrix(rng, n_x),
        C=C,
        D=D,
        e=e,
        x_bar=x_bar,
    )


def make_rqp(seed, shape, margin=4.0):
    rng = np.random.default_rng(seed)
    sys_ = make_system(rng, *shape, margin=margin)
    return assemble_rqp(enumerate_scenarios(sys_), sys_)


def interior_point(rqp, rng):
    """Random strictly interior iterate (not feasible, just interior)."""
    return Iterate(
        tau=float(rng.standard_normal()),
        t=rng.standard_normal(rqp.n_t),
        z=0.5 * rng.standard_normal(rqp.n_z),
        mu=rng.uniform(0.2, 2.0, rqp.n_rows),
        nu=rng.uniform(0.2, 2.0, rqp.m_ineq),
        lam=rng.standard_normal(rqp.m_eq),
        s=rng.uniform(0.2, 2.0, rqp.n_rows),
        w=rng.uniform(0.2, 2.0, rqp.m_ineq),
    )


def corpus_specs():
    """(seed, shape) pairs; 10 seeds per shape gives 100 instances."""
    specs = []
    for rep in range(10):
        for si, shape in enumerate(CORPUS_SHAPES):
            specs.append((1000 + 37 * rep + si, shape))
    return specs


def tiny_specs():
    specs = []
    for rep in range(4):
        for si, shape in enumerate(TINY_SHAPES):
            specs.append((9000 + 13 * rep + si, shape))
    return specs[:20]


@pytest.fixture(scope="session")
def full_corpus():
    # Cycling margins pushes a third of the optima onto pointwise constraints.
    return [
        make_rqp(seed, shape, margin=1.0 + (i % 3))
        for i, (seed, shape) in enumerate(corpus_specs())
    ]


@pytest.fixture(scope="session")
def tiny_corpus():
    return [
        make_rqp(seed, shape, margin=1.0 + (i % 3))
        for i, (seed, shape) in enumerate(tiny_specs())
    ]
