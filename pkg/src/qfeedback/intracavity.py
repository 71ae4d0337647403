"""Gaussian reduction of the linear cavity with measurement-based feedback.

Time is measured in units of the cavity decay rate. The x-quadrature obeys an
Ornstein-Uhlenbeck equation with drift k0 = (1 + theta)/2 and diffusion
D0 = 1 + l; conditioning adds a deterministic Riccati term. U denotes the
normally ordered variance (V - 1), negative iff squeezed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import solve_ivp

from . import operators as ops
from .errors import (
    ComplexRoot,
    DelayTooLarge,
    UnphysicalBath,
    UnstableMean,
)
from .operators import LindbladModel

THETA_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class Homodyne:
    """Extracavity homodyne measurement with efficiency eta."""
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")


@dataclass(frozen=True)
class Qnd:
    """Intracavity QND measurement with effective strength H = eta * Gamma
    (not bounded by 1)."""
    strength: float

    def __post_init__(self):
        if self.strength <= 0:
            raise ValueError("measurement strength must be > 0")


Measurement = Union[Homodyne, Qnd]


@dataclass(frozen=True)
class LinearCavityParams:
    l: float                     # x diffusion drive rate
    theta: float                 # parametric drive, < 1 (threshold)
    lam: float = 0.0             # feedback strength
    measurement: Measurement = Homodyne(1.0)

    def __post_init__(self):
        if self.l < 0:
            raise ValueError("l must be >= 0")
        if not 0.0 <= self.theta <= THETA_MAX:
            raise ValueError(f"theta must be in [0, {THETA_MAX}] (below threshold)")

    @property
    def k0(self) -> float:
        return 0.5 * (1.0 + self.theta)

    @property
    def d0(self) -> float:
        return 1.0 + self.l


def variance_no_feedback(params: LinearCavityParams) -> float:
    """U0 = (l - theta) / (1 + theta), the open-loop normally ordered variance."""
    return (params.l - params.theta) / (1.0 + params.theta)


def conditioned_variance_rhs(params: LinearCavityParams, u: float) -> float:
    """Riccati right-hand side for the conditioned variance.

    Homodyne: dU/dt = -2 k0 U - 2 k0 + D0 - eta U^2 (U normally ordered).
    QND:      dV/dt = -2 k0 V + D0 - H V^2        (V symmetric ordered).
    The two coincide under (V - 1) -> V, eta -> H in the measurement term.
    """
    k0, d0 = params.k0, params.d0
    if isinstance(params.measurement, Homodyne):
        return -2.0 * k0 * u - 2.0 * k0 + d0 - params.measurement.eta * u * u
    return -2.0 * k0 * u + d0 - params.measurement.strength * u * u


def conditioned_variance_trajectory(params: LinearCavityParams, u_init: float,
                                    t_grid) -> np.ndarray:
    """Deterministic relaxation of the conditioned variance; independent of
    the feedback strength."""
    t_grid = np.asarray(t_grid, dtype=float)
    if isinstance(params.measurement, Homodyne) and u_init < -1.0:
        raise ValueError("U_init must be >= -1")
    if isinstance(params.measurement, Qnd) and u_init < 0.0:
        raise ValueError("V_init must be >= 0")
    sol = solve_ivp(
        lambda _, y: conditioned_variance_rhs(params, y[0]),
        (t_grid[0], t_grid[-1]), [u_init], t_eval=t_grid,
        rtol=1e-10, atol=1e-12, method="RK45")
    return sol.y[0]


def conditioned_variance_ss(params: LinearCavityParams) -> float:
    """Stable Riccati fixed point.

    Homodyne: U_c = (−k0 + sqrt(k0^2 + eta (D0 − 2 k0))) / eta.
    QND:      V_c = (−k0 + sqrt(k0^2 + H D0)) / H.
    """
    k0, d0 = params.k0, params.d0
    if isinstance(params.measurement, Homodyne):
        eta = params.measurement.eta
        return (-k0 + math.sqrt(k0 * k0 + eta * (d0 - 2.0 * k0))) / eta
    h = params.measurement.strength
    return (-k0 + math.sqrt(k0 * k0 + h * d0)) / h


def optimal_lambda(params: LinearCavityParams) -> float:
    """Feedback strength that cancels the noise in the conditioned mean, at
    which the unconditioned variance equals the conditioned one."""
    k0 = params.k0
    if isinstance(params.measurement, Homodyne):
        eta = params.measurement.eta
        u0 = variance_no_feedback(params)
        arg = k0 * k0 + 2.0 * eta * k0 * u0
        if arg < 0:
            raise ComplexRoot(f"k0^2 + 2 eta k0 U0 = {arg} < 0")
        return -k0 + math.sqrt(arg)
    h = params.measurement.strength
    return -k0 + math.sqrt(k0 * k0 + h * params.d0)


def unconditioned_variance(params: LinearCavityParams, lam: float) -> float:
    """U_lambda = (k0 U0 + lambda^2 / 2 eta) / (k0 + lambda) for a damped mean."""
    if not isinstance(params.measurement, Homodyne):
        raise TypeError("unconditioned_variance applies to homodyne feedback")
    k0 = params.k0
    if k0 + lam <= 0:
        raise UnstableMean(f"k0 + lambda = {k0 + lam} <= 0")
    eta = params.measurement.eta
    u0 = variance_no_feedback(params)
    return (k0 * u0 + lam * lam / (2.0 * eta)) / (k0 + lam)


def variance_with_delay(params: LinearCavityParams, lam: float, delay: float) -> float:
    """First-order short-delay correction U_{lambda;T} = U_lambda (1 + lambda T)."""
    if abs(lam * delay) >= 0.5:
        raise DelayTooLarge(f"|lambda T| = {abs(lam * delay)} >= 0.5")
    return unconditioned_variance(params, lam) * (1.0 + lam * delay)


def u_min(params: LinearCavityParams) -> float:
    """Best unconditioned variance over lambda: equals the conditioned
    steady-state variance (reached at the optimal lambda)."""
    return conditioned_variance_ss(params)


def squeezed_bath_model(n_bath: float, m_bath: complex, dim: int,
                        hamiltonian: np.ndarray | None = None) -> LindbladModel:
    """Cavity damped into a broad-band squeezed bath with moments (N, M).

    Generator (N+1) D[a] + N D[a†] − (M/2)[a†,[a†,·]] − (M*/2)[a,[a,·]],
    realized as a two-collapse Lindblad decomposition via the eigenvectors of
    the coefficient matrix [[N+1, M*], [M, N]] in the (a, a†) basis.
    """
    if n_bath < 0:
        raise UnphysicalBath(f"N = {n_bath} < 0")
    if abs(m_bath) ** 2 > n_bath * (n_bath + 1) + 1e-12:
        raise UnphysicalBath(f"|M|^2 = {abs(m_bath)**2} > N(N+1) = {n_bath*(n_bath+1)}")
    a = ops.destroy(dim)
    ad = a.conj().T
    coeff = np.array([[n_bath + 1.0, np.conj(m_bath)],
                      [m_bath, n_bath]], dtype=complex)
    evals, evecs = np.linalg.eigh(coeff)
    collapses = []
    for lam_i, v in zip(evals, evecs.T):
        if lam_i < 1e-15:
            continue
        op = v[0] * a + v[1] * ad
        collapses.append((float(lam_i), op))
    if hamiltonian is None:
        hamiltonian = np.zeros((dim, dim), dtype=complex)
    return LindbladModel(hamiltonian, tuple(collapses))


def squeezed_bath_generator(n_bath: float, m_bath: complex, dim: int,
                            rho: np.ndarray) -> np.ndarray:
    """Literal superoperator form of the squeezed-bath generator, kept as an
    independent check on the Lindblad decomposition above."""
    a = ops.destroy(dim)
    ad = a.conj().T
    out = (n_bath + 1.0) * ops.superop_D(a, rho) + n_bath * ops.superop_D(ad, rho)
    comm_ad = ad @ (ad @ rho - rho @ ad) - (ad @ rho - rho @ ad) @ ad
    comm_a = a @ (a @ rho - rho @ a) - (a @ rho - rho @ a) @ a
    out -= 0.5 * m_bath * comm_ad
    out -= 0.5 * np.conj(m_bath) * comm_a
    return out


def parametric_model(params: LinearCavityParams, dim: int) -> LindbladModel:
    """Truncated-Fock realization of the linear-cavity master equation:
    D[a] + (l/4) D[a† − a] + (theta/4)[a^2 − a†^2, ·] as Hamiltonian part."""
    a = ops.destroy(dim)
    ad = a.conj().T
    # (theta/4)[a^2 - ad^2, rho] = -i[H, rho] with H = (i theta/4)(a^2 - ad^2)
    h = 0.25j * params.theta * (a @ a - ad @ ad)
    collapses = [(1.0, a)]
    if params.l > 0:
        collapses.append((params.l / 4.0, ad - a))
    return LindbladModel(h, tuple(collapses))
