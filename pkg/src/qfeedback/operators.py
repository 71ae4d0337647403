"""Finite-dimensional operator algebra and master-equation machinery.

Operators and density matrices are plain complex ndarrays. The superoperators
here are the building blocks of both the deterministic master equation and the
conditioned (stochastic) evolutions in :mod:`qfeedback.trajectories`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateSteadyState,
    DimensionMismatch,
    InvalidState,
    JumpFromDarkState,
    PositivityViolation,
    TruncationWarning,
)

TOL_HERM = 1e-10
TOL_TRACE = 1e-8
TOL_POS = 1e-8
TOL_JUMP = 1e-14


# ---------------------------------------------------------------------------
# constructors

def destroy(dim: int) -> np.ndarray:
    """Bosonic annihilation operator on a truncated Fock space."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def create(dim: int) -> np.ndarray:
    return destroy(dim).conj().T


def number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def quad_x(dim: int) -> np.ndarray:
    """x = c + c† quadrature."""
    a = destroy(dim)
    return a + a.conj().T


def quad_y(dim: int) -> np.ndarray:
    """y = -i c + i c† quadrature."""
    a = destroy(dim)
    return -1j * a + 1j * a.conj().T


def sigma_minus() -> np.ndarray:
    """Atomic lowering operator |g><e| in the basis (|g>, |e>)."""
    return np.array([[0, 1], [0, 0]], dtype=complex)


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_y() -> np.ndarray:
    # basis (|g>, |e>): sigma_minus = (sigma_x - i sigma_y) / 2
    return np.array([[0, 1j], [-1j, 0]], dtype=complex)


def sigma_z() -> np.ndarray:
    return np.array([[-1, 0], [0, 1]], dtype=complex)


def fock_dm(dim: int, n: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    return complex(np.trace(op @ rho))


def is_hermitian(m: np.ndarray, tol: float = TOL_HERM) -> bool:
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def validate_density_matrix(rho: np.ndarray,
                            tol_herm: float = TOL_HERM,
                            tol_tr: float = TOL_TRACE,
                            tol_pos: float = TOL_POS) -> None:
    """Raise InvalidState unless rho is Hermitian, unit trace, and positive."""
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidState("density matrix must be square")
    if not np.all(np.isfinite(rho)):
        raise InvalidState("non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > tol_herm:
        raise InvalidState("not Hermitian within tolerance")
    if abs(np.trace(rho).real - 1.0) > tol_tr or abs(np.trace(rho).imag) > tol_tr:
        raise InvalidState(f"trace {np.trace(rho)} != 1 within tolerance")
    evals = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    if evals.min() < -tol_pos:
        raise InvalidState(f"smallest eigenvalue {evals.min()} < -{tol_pos}")


def _check_dims(*ms: np.ndarray) -> int:
    dim = ms[0].shape[0]
    for m in ms:
        if m.shape != (dim, dim):
            raise DimensionMismatch(f"shapes {[x.shape for x in ms]} do not match")
    return dim


# ---------------------------------------------------------------------------
# superoperators

def superop_D(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator D[A]rho = A rho A† - (A†A rho + rho A†A)/2."""
    _check_dims(a, rho)
    ad = a.conj().T
    ada = ad @ a
    return a @ rho @ ad - 0.5 * (ada @ rho + rho @ ada)


def superop_G(r: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Jump superoperator G[r]rho = r rho r† / Tr[r rho r†] - rho.

    Raises JumpFromDarkState when the emission probability vanishes.
    """
    _check_dims(r, rho)
    out = r @ rho @ r.conj().T
    norm = np.trace(out).real
    if norm <= TOL_JUMP:
        raise JumpFromDarkState(f"Tr[r rho r†] = {norm} <= {TOL_JUMP}")
    return out / norm - rho


def superop_H(r: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Measurement superoperator H[r]rho = r rho + rho r† - Tr[r rho + rho r†] rho."""
    _check_dims(r, rho)
    m = r @ rho + rho @ r.conj().T
    return m - np.trace(m) * rho


def spre(a: np.ndarray) -> np.ndarray:
    """Left-multiplication superoperator on column-stacked (vec) matrices."""
    dim = a.shape[0]
    return np.kron(np.eye(dim), a)


def spost(a: np.ndarray) -> np.ndarray:
    """Right-multiplication superoperator on column-stacked matrices."""
    dim = a.shape[0]
    return np.kron(a.T, np.eye(dim))


# ---------------------------------------------------------------------------
# Lindblad model

@dataclass(frozen=True)
class LindbladModel:
    """Hamiltonian plus weighted collapse operators.

    Rates are in inverse time (hbar = 1); collapse entries are
    (rate, operator) pairs.
    """
    hamiltonian: np.ndarray
    collapses: tuple = field(default_factory=tuple)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        object.__setattr__(self, "hamiltonian", h)
        if not is_hermitian(h):
            raise InvalidState("Hamiltonian must be Hermitian")
        cs = []
        for rate, op in self.collapses:
            if rate < 0:
                raise InvalidState(f"collapse rate {rate} < 0")
            op = np.asarray(op, dtype=complex)
            _check_dims(h, op)
            cs.append((float(rate), op))
        object.__setattr__(self, "collapses", tuple(cs))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        """Master-equation right-hand side applied to a (not necessarily
        Hermitian) matrix."""
        h = self.hamiltonian
        out = -1j * (h @ rho - rho @ h)
        for rate, op in self.collapses:
            out += rate * superop_D(op, rho)
        return out

    @cached_property
    def liouvillian(self) -> np.ndarray:
        """Matrix of the generator on column-stacked density matrices."""
        h = self.hamiltonian
        lv = -1j * (spre(h) - spost(h))
        for rate, op in self.collapses:
            od = op.conj().T
            oda = od @ op
            lv += rate * (np.kron(op.conj(), op)
                          - 0.5 * spre(oda) - 0.5 * spost(oda))
        return lv


# ---------------------------------------------------------------------------
# integration

def _rk4_step(model: LindbladModel, rho: np.ndarray, dt: float) -> np.ndarray:
    k1 = model.rhs(rho)
    k2 = model.rhs(rho + 0.5 * dt * k1)
    k3 = model.rhs(rho + 0.5 * dt * k2)
    k4 = model.rhs(rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve(model: LindbladModel, rho0: np.ndarray, t: float,
           dt: float = 1e-3, watch_truncation: bool = False) -> np.ndarray:
    """Integrate the master equation for time t with fixed-step RK4.

    Trace is checked every step; hermiticity is enforced by symmetrization.
    With watch_truncation=True, population of the top two levels above 1e-6
    emits a TruncationWarning (bosonic truncated modes).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    rho = np.asarray(rho0, dtype=complex).copy()
    _check_dims(model.hamiltonian, rho)
    n_full, rem = divmod(t, dt)
    steps = [dt] * int(n_full)
    if rem > 1e-15 * max(t, 1.0):
        steps.append(rem)
    warned = False
    for h in steps:
        rho = _rk4_step(model, rho, h)
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TOL_TRACE:
            raise PositivityViolation(f"trace drifted to {tr}; reduce dt")
        if watch_truncation and not warned and model.dim >= 3:
            top = rho[-1, -1].real + rho[-2, -2].real
            if top > 1e-6:
                warnings.warn(
                    f"top two levels hold population {top:.2e}",
                    TruncationWarning)
                warned = True
    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -TOL_POS:
        raise PositivityViolation(
            f"eigenvalue {evals.min()} < -{TOL_POS}; dt too large or cutoff too small")
    return rho


def steady_state(model: LindbladModel, tol_kernel: float = 1e-10) -> np.ndarray:
    """Stationary state from the null space of the Liouvillian.

    Raises DegenerateSteadyState unless the kernel is one-dimensional.
    """
    lv = model.liouvillian
    u, s, vh = np.linalg.svd(lv)
    scale = max(s.max(), 1.0)
    kernel = s < tol_kernel * scale
    if kernel.sum() != 1:
        raise DegenerateSteadyState(
            f"Liouvillian kernel dimension {int(kernel.sum())} != 1")
    vec = vh[-1].conj()
    dim = model.dim
    rho = vec.reshape((dim, dim), order="F")
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    resid = np.max(np.abs(lv @ rho.reshape(-1, order="F")))
    if resid > 1e-10 * scale:
        raise DegenerateSteadyState(f"kernel residual {resid} too large")
    validate_density_matrix(rho)
    return rho


def two_time_correlation(model: LindbladModel, left: np.ndarray,
                         initial_deviation: np.ndarray,
                         tau_grid: np.ndarray,
                         dt: float = 1e-3) -> np.ndarray:
    """Tr[left · exp(L tau)[initial_deviation]] on an ascending tau grid.

    Propagates with the same fixed-step RK4 as :func:`evolve` (the regression
    formula: the deviation matrix evolves under the Liouvillian).
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.ndim != 1 or np.any(np.diff(tau_grid) < 0) or tau_grid[0] < 0:
        raise ValueError("tau_grid must be nonnegative ascending")
    mat = np.asarray(initial_deviation, dtype=complex).copy()
    _check_dims(model.hamiltonian, mat, left)
    out = np.empty(len(tau_grid), dtype=complex)
    tau_now = 0.0
    for i, tau in enumerate(tau_grid):
        span = tau - tau_now
        n_full, rem = divmod(span, dt)
        for _ in range(int(n_full)):
            mat = _rk4_step(model, mat, dt)
        if rem > 1e-13 * max(tau, 1.0):
            mat = _rk4_step(model, mat, rem)
        tau_now = tau
        if not np.all(np.isfinite(mat)):
            raise PositivityViolation("two-time propagation diverged")
        out[i] = np.trace(left @ mat)
    return out
