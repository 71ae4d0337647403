"""Conditioned (stochastic) evolution engines with and without feedback.

All stochastic master equations are integrated with Euler-Maruyama plus trace
renormalization each step; ensemble averages reproduce the corresponding
deterministic master equation. Randomness comes from the counter-based Philox
generator; trajectory i of an ensemble uses the stream keyed by seed XOR i, so
results are independent of worker count and scheduling.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.random import Generator, Philox
from scipy.integrate import trapezoid

from . import operators as ops
from .errors import EmptyDelayBuffer, PositivityViolation
from .loop import Spectrum
from .operators import LindbladModel, steady_state, two_time_correlation
from .semiclassical import estimate_psd

# The no-jump drift of the jump unravelings preserves positivity up to
# integration error, so it gets a strict tolerance. Diffusive Euler-Maruyama
# states transiently dip O(sqrt(dt)) negative by construction (the ensemble
# mean is still exact to O(dt)), so only genuine blow-up is flagged there.
POSITIVITY_TOL = -1e-8
DIFFUSIVE_POSITIVITY_TOL = -0.5
POSITIVITY_CHECK_EVERY = 50

# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class PhotonCounting:
    pass


@dataclass(frozen=True)
class HomodyneJump:
    """Finite local-oscillator amplitude beta; beta = 0 is photon counting."""
    beta: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class HomodyneDiffusive:
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")


Detection = Union[PhotonCounting, HomodyneJump, HomodyneDiffusive]


@dataclass(frozen=True)
class Markovian:
    pass


@dataclass(frozen=True)
class Delayed:
    delay: float


@dataclass(frozen=True)
class Feedback:
    operator: np.ndarray          # Hermitian F
    mode: Union[Markovian, Delayed] = Markovian()

    def __post_init__(self):
        f = np.asarray(self.operator, dtype=complex)
        if not ops.is_hermitian(f):
            raise ValueError("feedback operator must be Hermitian")
        object.__setattr__(self, "operator", f)


@dataclass(frozen=True)
class SmeConfig:
    """A conditioned-evolution experiment.

    The model's first collapse is the monitored channel and must have rate 1
    (scaled units); further collapses evolve unconditionally.
    """
    model: LindbladModel
    detection: Detection
    dt: float
    steps: int
    seed: int
    feedback: Optional[Feedback] = None
    snapshot_every: int = 0       # 0: no state snapshots

    def __post_init__(self):
        if self.dt <= 0 or self.steps <= 0:
            raise ValueError("dt and steps must be positive")
        if not self.model.collapses or self.model.collapses[0][0] != 1.0:
            raise ValueError("first collapse must be the monitored channel with rate 1")
        if isinstance(self.detection, HomodyneJump):
            if self.detection.beta ** 2 * self.dt >= 0.1:
                raise ValueError("beta^2 dt must be < 0.1")
        max_rate = max(r for r, _ in self.model.collapses)
        if self.dt * max_rate >= 0.1:
            raise ValueError("dt * max collapse rate must be < 0.1")
        if self.feedback is not None:
            ops._check_dims(self.model.hamiltonian, self.feedback.operator)
            if isinstance(self.feedback.mode, Delayed):
                ratio = self.feedback.mode.delay / self.dt
                if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                    raise ValueError("delay must be a positive integer multiple of dt")
            if not isinstance(self.detection, HomodyneDiffusive):
                raise ValueError("feedback requires diffusive homodyne detection")


@dataclass
class TrajectoryResult:
    times: np.ndarray
    record: np.ndarray            # photocurrent samples, or dN per step
    states: Optional[np.ndarray]  # thinned conditioned states, or None
    state_times: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def event_times(self) -> np.ndarray:
        """Jump times, for counting-type records."""
        return self.times[self.record > 0.5]


# ---------------------------------------------------------------------------
# cached per-model matrices


class _StepCtx:
    """Matrices reused every step (cheap to build, hot in the loop)."""

    def __init__(self, model: LindbladModel):
        self.model = model
        self.c = model.collapses[0][1]
        self.cd = self.c.conj().T
        self.cdc = self.cd @ self.c
        self.x = self.c + self.cd
        self.h = model.hamiltonian
        self.extras = model.collapses[1:]

    def extra_dissipation(self, rho):
        out = 0.0
        for rate, op in self.extras:
            out = out + rate * ops.superop_D(op, rho)
        return out


def _ctx(model: LindbladModel, ctx: Optional[_StepCtx]) -> _StepCtx:
    return ctx if ctx is not None else _StepCtx(model)


# ---------------------------------------------------------------------------
# single steps


def step_photon_counting(rho_c: np.ndarray, model: LindbladModel, dt: float,
                         rng: Generator, _ctx_cache: Optional[_StepCtx] = None):
    """One Euler step of the direct-detection jump unraveling.

    Returns (rho', dN). P(dN=1) = Tr[c†c rho] dt; a jump applies G[c], no jump
    applies the drift -dt H[iH + c†c/2] (plus unmonitored dissipation).
    """
    return step_homodyne_jump(rho_c, model, 0.0, dt, rng, _ctx_cache=_ctx_cache)


def step_homodyne_jump(rho_c: np.ndarray, model: LindbladModel, beta: float,
                       dt: float, rng: Generator,
                       _ctx_cache: Optional[_StepCtx] = None):
    """Jump unraveling with the local oscillator folded into the jump operator
    c + beta; detection rate Tr[(beta^2 + beta x + c†c) rho] dt."""
    ctx = _ctx(model, _ctx_cache)
    c = ctx.c
    rate = (beta * beta
            + beta * np.trace(ctx.x @ rho_c).real
            + np.trace(ctx.cdc @ rho_c).real) * dt
    if rng.random() < rate:
        if beta == 0.0:
            rho = rho_c + ops.superop_G(c, rho_c)
        else:
            jop = c + beta * np.eye(c.shape[0])
            rho = rho_c + ops.superop_G(jop, rho_c)
        dn = 1
    else:
        # drift H[-iH - beta c - c†c/2]
        k = -1j * ctx.h - beta * c - 0.5 * ctx.cdc
        m = k @ rho_c + rho_c @ k.conj().T
        rho = rho_c + dt * (m - np.trace(m) * rho_c + ctx.extra_dissipation(rho_c))
        dn = 0
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not math.isfinite(tr) or tr <= 0:
        raise PositivityViolation("trace collapsed during jump step")
    return rho / tr, dn


def step_homodyne_diffusive(rho_c: np.ndarray, model: LindbladModel, eta: float,
                            dt: float, rng: Generator,
                            _ctx_cache: Optional[_StepCtx] = None):
    """Diffusive homodyne unraveling.

    d rho = -i[H, rho] dt + D[c] rho dt + sqrt(eta) dW H[c] rho,
    I = sqrt(eta) <x>_c + dW / dt, with dW ~ Normal(0, dt).
    """
    ctx = _ctx(model, _ctx_cache)
    dw = rng.standard_normal() * math.sqrt(dt)
    xbar = np.trace(ctx.x @ rho_c).real
    i_sample = math.sqrt(eta) * xbar + dw / dt
    m = ctx.c @ rho_c + rho_c @ ctx.cd
    rho = (rho_c + dt * model.rhs(rho_c)
           + math.sqrt(eta) * dw * (m - xbar * rho_c))
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    return rho, i_sample


def step_homodyne_feedback(rho_c: np.ndarray, model: LindbladModel,
                           f_op: np.ndarray, eta: float, dt: float,
                           rng: Generator, delay_buffer: Optional[deque] = None,
                           _ctx_cache: Optional[_StepCtx] = None):
    """Diffusive homodyne step with photocurrent feedback Hamiltonian ~ F I.

    Markovian (delay_buffer is None): the Ito form with the feedback acting
    after the measurement,
        d rho = dt{-i[H,rho] + D[c]rho - i[F, c rho + rho c†] + D[F]rho/eta}
              + dW H[sqrt(eta) c - i F / sqrt(eta)] rho.

    Delayed: delay_buffer is a deque with maxlen = T/dt holding (dW, <x>_c)
    pairs; the feedback at this step is driven by the record from one delay
    ago once the buffer is full, and held at zero during warm-up. The step
    pushes the current (dW, <x>_c) onto the buffer.
    """
    ctx = _ctx(model, _ctx_cache)
    dw = rng.standard_normal() * math.sqrt(dt)
    xbar = np.trace(ctx.x @ rho_c).real
    i_sample = math.sqrt(eta) * xbar + dw / dt
    base = rho_c + dt * model.rhs(rho_c)
    m = ctx.c @ rho_c + rho_c @ ctx.cd

    if delay_buffer is None:
        # Markovian limit
        fterm = f_op @ m - m @ f_op                      # [F, c rho + rho c†]
        ff = f_op @ rho_c - rho_c @ f_op                 # [F, rho]
        ffterm = f_op @ ff - ff @ f_op                   # [F, [F, rho]]
        stoch_lin = math.sqrt(eta) * m - (1j / math.sqrt(eta)) * ff
        rho = (base
               + dt * (-1j * fterm - 0.5 * ffterm / eta)
               + dw * (stoch_lin - math.sqrt(eta) * xbar * rho_c))
    else:
        if delay_buffer.maxlen is None or delay_buffer.maxlen < 1:
            raise EmptyDelayBuffer("delay buffer must have maxlen = T/dt >= 1")
        rho = base + math.sqrt(eta) * dw * (m - xbar * rho_c)
        if len(delay_buffer) == delay_buffer.maxlen:
            dw_old, xbar_old = delay_buffer[0]
            ff = f_op @ rho_c - rho_c @ f_op
            ffterm = f_op @ ff - ff @ f_op
            rho = (rho
                   + dt * (-1j * xbar_old * ff - 0.5 * ffterm / eta)
                   - 1j * (dw_old / math.sqrt(eta)) * ff)
        delay_buffer.append((dw, xbar))

    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if not math.isfinite(tr) or tr <= 0:
        raise PositivityViolation("trace collapsed during feedback step")
    return rho / tr, i_sample


# ---------------------------------------------------------------------------
# deterministic feedback master equation and in-loop spectrum


def feedback_master_equation(model: LindbladModel, f_op: np.ndarray,
                             eta: float) -> LindbladModel:
    """Unconditional master equation of Markovian homodyne feedback.

    H' = H + (c†F + Fc)/2; collapses become (1, c - iF) plus, for imperfect
    detection, ((1-eta)/eta, F); extra collapses pass through untouched.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must be in (0, 1]")
    f_op = np.asarray(f_op, dtype=complex)
    if not ops.is_hermitian(f_op):
        raise ValueError("feedback operator must be Hermitian")
    c = model.collapses[0][1]
    cd = c.conj().T
    h = model.hamiltonian + 0.5 * (cd @ f_op + f_op @ c)
    collapses = [(1.0, c - 1j * f_op)]
    if eta < 1.0 and np.any(f_op != 0):
        collapses.append(((1.0 - eta) / eta, f_op))
    collapses.extend(model.collapses[1:])
    return LindbladModel(h, tuple(collapses))


def in_loop_correlation_spectrum(model_fb: LindbladModel, c: np.ndarray,
                                 f_op: np.ndarray, eta: float, omega_grid,
                                 corrected: bool = True) -> Spectrum:
    """Stationary spectrum of the in-loop homodyne photocurrent.

    The photocurrent autocorrelation is
        E[I(t+tau) I(t)] = eta Tr{(c + c†) e^{L tau}
                                  [(c - iF/eta) rho + rho (c† + iF/eta)]}
                           + delta(tau),
    with the delta carried as the constant shot-noise floor 1:
        S(omega) = 1 + 2 Integral_0^inf cos(omega tau) Re[corr(tau)] d tau.
    With corrected=False the -iF/eta insertion is dropped (the naive
    normally-ordered formula, kept for comparison; it is wrong in a loop).
    """
    omega_grid = np.asarray(omega_grid, dtype=float)
    c = np.asarray(c, dtype=complex)
    f_op = np.asarray(f_op, dtype=complex)
    rho_ss = steady_state(model_fb)
    cd = c.conj().T
    x_op = c + cd
    if corrected:
        dev = (c - 1j * f_op / eta) @ rho_ss + rho_ss @ (cd + 1j * f_op / eta)
    else:
        dev = c @ rho_ss + rho_ss @ cd
    # subtract the stationary offset (the mean-squared photocurrent) so the
    # remainder decays and the cosine transform converges
    dev = dev - np.trace(dev) * rho_ss
    rates = np.abs(np.linalg.eigvals(model_fb.liouvillian))
    nonzero = rates[rates > 1e-12]
    gaps = -np.linalg.eigvals(model_fb.liouvillian).real
    slow = np.min(gaps[gaps > 1e-10]) if np.any(gaps > 1e-10) else 1.0
    tau_max = 25.0 / slow
    fast = np.max(nonzero) if nonzero.size else 1.0
    w_top = max(np.max(np.abs(omega_grid)), fast, 1e-12)
    dtau = min(0.05 / fast, np.pi / (40.0 * w_top))
    n_tau = int(math.ceil(tau_max / dtau)) + 1
    tau = np.linspace(0.0, (n_tau - 1) * dtau, n_tau)
    corr = eta * two_time_correlation(model_fb, x_op, dev, tau,
                                      dt=min(dtau, 0.05 / fast))
    smooth = np.real(corr)
    vals = 1.0 + 2.0 * trapezoid(
        np.cos(np.outer(omega_grid, tau)) * smooth[None, :], tau, axis=1)
    return Spectrum(omega_grid, vals)


# ---------------------------------------------------------------------------
# trajectory and ensemble drivers


def _run_with_dt(config: SmeConfig, rho0: np.ndarray, seed: int,
                 refine: int) -> TrajectoryResult:
    """One trajectory at dt/2^refine; record coarse-grained back onto the
    configured grid (pair-averaged currents, pair-summed counts)."""
    sub = 2 ** refine
    dt = config.dt / sub
    n = config.steps * sub
    model = config.model
    ctx = _StepCtx(model)
    rng = Generator(Philox(key=seed & 0xFFFFFFFFFFFFFFFF))
    rho = np.asarray(rho0, dtype=complex).copy()
    record = np.empty(n)
    counting = isinstance(config.detection, (PhotonCounting, HomodyneJump))

    fb = config.feedback
    buf = None
    if fb is not None and isinstance(fb.mode, Delayed):
        buf = deque(maxlen=int(round(fb.mode.delay / dt)))

    snap = config.snapshot_every * sub if config.snapshot_every else 0
    states = [] if snap else None
    state_times = [] if snap else None

    if isinstance(config.detection, PhotonCounting):
        def do_step(r):
            return step_homodyne_jump(r, model, 0.0, dt, rng, _ctx_cache=ctx)
    elif isinstance(config.detection, HomodyneJump):
        beta = config.detection.beta

        def do_step(r):
            return step_homodyne_jump(r, model, beta, dt, rng, _ctx_cache=ctx)
    elif fb is None:
        eta = config.detection.eta

        def do_step(r):
            return step_homodyne_diffusive(r, model, eta, dt, rng, _ctx_cache=ctx)
    else:
        eta = config.detection.eta
        f_op = fb.operator

        def do_step(r):
            return step_homodyne_feedback(r, model, f_op, eta, dt, rng,
                                          delay_buffer=buf, _ctx_cache=ctx)

    tol = POSITIVITY_TOL if counting else DIFFUSIVE_POSITIVITY_TOL
    for k in range(n):
        rho, record[k] = do_step(rho)
        if (k + 1) % POSITIVITY_CHECK_EVERY == 0:
            if np.linalg.eigvalsh(rho).min() < tol:
                raise PositivityViolation(
                    f"conditioned state eigenvalue < {tol} at step {k}")
        if snap and (k + 1) % snap == 0:
            states.append(rho.copy())
            state_times.append((k + 1) * dt)

    if np.linalg.eigvalsh(rho).min() < tol:
        raise PositivityViolation("final conditioned state not positive")

    if sub > 1:
        shaped = record.reshape(config.steps, sub)
        record = shaped.sum(axis=1) if counting else shaped.mean(axis=1)
    times = config.dt * np.arange(1, config.steps + 1)
    return TrajectoryResult(
        times=times, record=record,
        states=np.array(states) if snap else None,
        state_times=np.array(state_times) if snap else None,
        diagnostics={"dt_used": dt, "refinements": refine, "seed": seed})


def run_trajectory(config: SmeConfig, rho0: np.ndarray,
                   seed: Optional[int] = None) -> TrajectoryResult:
    """Run a single conditioned trajectory from rho0.

    On a PositivityViolation the trajectory restarts once with dt halved (the
    record is averaged back onto the configured grid); a second failure
    propagates.
    """
    ops.validate_density_matrix(np.asarray(rho0, dtype=complex))
    use_seed = config.seed if seed is None else seed
    try:
        return _run_with_dt(config, rho0, use_seed, refine=0)
    except PositivityViolation:
        return _run_with_dt(config, rho0, use_seed, refine=1)


# ---------------------------------------------------------------------------
# batched ensemble engine
#
# All trajectories of an ensemble advance in lock-step as a stacked (B, d, d)
# array; trajectory i consumes exactly the noise stream Philox(seed XOR i)
# would give it sequentially (array draws and repeated scalar draws from one
# generator are identical), so the ensemble contract is untouched while the
# per-step Python overhead is shared across the batch.


def _batch_noise(seeds, n: int, uniform: bool) -> np.ndarray:
    rows = np.empty((len(seeds), n))
    for i, s in enumerate(seeds):
        g = Generator(Philox(key=s & 0xFFFFFFFFFFFFFFFF))
        rows[i] = g.random(n) if uniform else g.standard_normal(n)
    return rows


def _herm_normalize(r: np.ndarray, failed: np.ndarray) -> np.ndarray:
    r = 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))
    tr = np.einsum("bii->b", r).real
    bad = ~np.isfinite(tr) | (tr <= 0)
    failed |= bad
    tr = np.where(bad, 1.0, tr)
    return r / tr[:, None, None]


def _batch_positivity(r: np.ndarray, failed: np.ndarray, tol: float) -> None:
    ok = ~failed & np.all(np.isfinite(r.reshape(len(r), -1)), axis=1)
    idx = np.nonzero(ok)[0]
    if idx.size:
        evals = np.linalg.eigvalsh(r[idx])
        failed[idx[evals.min(axis=1) < tol]] = True


def _run_batched(config: SmeConfig, rho0: np.ndarray, seeds):
    """Advance len(seeds) trajectories in lock-step; positivity failures are
    retried sequentially at dt/2. Returns a list of TrajectoryResult or the
    final exception, ordered like seeds."""
    model, dt, n = config.model, config.dt, config.steps
    ctx = _StepCtx(model)
    b_sz = len(seeds)
    dim = model.dim
    counting = isinstance(config.detection, (PhotonCounting, HomodyneJump))
    noise = _batch_noise(seeds, n, uniform=counting)
    if counting:
        noise_dw = None
    else:
        noise_dw = noise * math.sqrt(dt)

    r = np.broadcast_to(np.asarray(rho0, dtype=complex),
                        (b_sz, dim, dim)).copy()
    failed = np.zeros(b_sz, dtype=bool)
    records = np.empty((b_sz, n))
    snap = config.snapshot_every
    snaps, snap_times = [], []

    c, cd, cdc, x_op, h = ctx.c, ctx.cd, ctx.cdc, ctx.x, ctx.h
    scaled = [(rate, op, op.conj().T) for rate, op in ctx.extras]
    # drift matrix of the deterministic part: rhs = A r + r A† + sum L r L†
    a_drift = -1j * h - 0.5 * cdc
    for rate, op, opd in scaled:
        a_drift = a_drift - 0.5 * rate * (opd @ op)

    def det_rhs(rr):
        out = a_drift @ rr + rr @ a_drift.conj().T + c @ rr @ cd
        for rate, op, opd in scaled:
            out = out + rate * (op @ rr @ opd)
        return out

    fb = config.feedback
    eta = config.detection.eta if isinstance(config.detection,
                                             HomodyneDiffusive) else None
    f_op = fb.operator if fb is not None else None
    delayed = fb is not None and isinstance(fb.mode, Delayed)
    dlen = int(round(fb.mode.delay / dt)) if delayed else 0
    xbar_hist = np.empty((b_sz, n)) if delayed else None

    beta = config.detection.beta if isinstance(config.detection,
                                               HomodyneJump) else 0.0
    if counting:
        k_nojump = -1j * h - beta * c - 0.5 * cdc
        jop = c + (beta * np.eye(dim) if beta else 0.0)
        jopd = jop.conj().T
    tol = POSITIVITY_TOL if counting else DIFFUSIVE_POSITIVITY_TOL

    with np.errstate(all="ignore"):
        for k in range(n):
            if counting:
                rate = (beta * beta
                        + beta * np.einsum("ij,bji->b", x_op, r).real
                        + np.einsum("ij,bji->b", cdc, r).real) * dt
                jump = noise[:, k] < rate
                m = k_nojump @ r + r @ np.conj(k_nojump).T
                trm = np.einsum("bii->b", m)
                r_new = r + dt * (m - trm[:, None, None] * r)
                for rate_e, op, opd in scaled:
                    r_new += dt * rate_e * (op @ r @ opd
                                            - 0.5 * (opd @ op @ r + r @ opd @ op))
                for i in np.nonzero(jump)[0]:
                    r_new[i] = jop @ r[i] @ jopd
                r = r_new
                records[:, k] = jump
            else:
                dw = noise_dw[:, k]
                xbar = np.einsum("ij,bji->b", x_op, r).real
                records[:, k] = math.sqrt(eta) * xbar + dw / dt
                m = c @ r + r @ cd
                base = r + dt * det_rhs(r)
                meas = m - xbar[:, None, None] * r
                if fb is None:
                    r = base + math.sqrt(eta) * dw[:, None, None] * meas
                elif not delayed:
                    ff = f_op @ r - r @ f_op
                    ffterm = f_op @ ff - ff @ f_op
                    fterm = f_op @ m - m @ f_op
                    stoch = (math.sqrt(eta) * m - (1j / math.sqrt(eta)) * ff
                             - math.sqrt(eta) * xbar[:, None, None] * r)
                    r = (base + dt * (-1j * fterm - 0.5 * ffterm / eta)
                         + dw[:, None, None] * stoch)
                else:
                    xbar_hist[:, k] = xbar
                    r = base + math.sqrt(eta) * dw[:, None, None] * meas
                    if k >= dlen:
                        dw_old = noise_dw[:, k - dlen][:, None, None]
                        xb_old = xbar_hist[:, k - dlen][:, None, None]
                        ff = f_op @ r - r @ f_op
                        ffterm = f_op @ ff - ff @ f_op
                        r = (r + dt * (-1j * xb_old * ff - 0.5 * ffterm / eta)
                             - 1j * (dw_old / math.sqrt(eta)) * ff)
            r = _herm_normalize(r, failed)
            if (k + 1) % POSITIVITY_CHECK_EVERY == 0:
                _batch_positivity(r, failed, tol)
            if snap and (k + 1) % snap == 0:
                snaps.append(r.copy())
                snap_times.append((k + 1) * dt)
    _batch_positivity(r, failed, tol)

    times = dt * np.arange(1, n + 1)
    state_times = np.array(snap_times) if snap else None
    stacked = np.array(snaps) if snap else None   # (n_snap, B, d, d)
    results = []
    for i, s in enumerate(seeds):
        if failed[i]:
            try:
                results.append(_run_with_dt(config, rho0, s, refine=1))
            except Exception as exc:
                results.append(exc)
            continue
        results.append(TrajectoryResult(
            times=times, record=records[i],
            states=stacked[:, i] if snap else None,
            state_times=state_times,
            diagnostics={"dt_used": dt, "refinements": 0, "seed": s}))
    return results


@dataclass
class EnsembleSummary:
    state_times: np.ndarray
    mean_states: np.ndarray          # (n_snap, d, d) ensemble-averaged rho_c
    xbar_variance: np.ndarray        # ensemble variance of <x>_c per snapshot
    psd: Optional[Spectrum]          # pooled photocurrent PSD (diffusive only)
    n_success: int
    n_failed: int
    failures: list
    trajectories: Optional[list] = None   # per-trajectory results on request


def _ensemble_worker(args):
    config, rho0, seed = args
    try:
        return run_trajectory(config, rho0, seed=seed)
    except Exception as exc:           # reported, not fatal, unless >10% fail
        return exc


def run_ensemble(config: SmeConfig, n_traj: int, rho0: np.ndarray,
                 workers: int = 1, psd_segments: int = 8,
                 keep_trajectories: bool = False) -> EnsembleSummary:
    """Average n_traj independent trajectories.

    Trajectory i uses the Philox stream keyed by seed XOR i, and results are
    merged by index, so the output is bit-identical for any worker count. The
    run aborts only if more than 10% of trajectories fail.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if config.snapshot_every < 1:
        raise ValueError("run_ensemble needs snapshot_every >= 1")
    seeds = [config.seed ^ i for i in range(n_traj)]
    if n_traj == 1:
        results = [_ensemble_worker((config, rho0, seeds[0]))]
    else:
        # lock-step vectorized advance; `workers` only chunks the batch, so
        # the output is identical for any worker count
        ops.validate_density_matrix(np.asarray(rho0, dtype=complex))
        chunk = max(1, math.ceil(n_traj / max(1, workers)))
        results = []
        for lo in range(0, n_traj, chunk):
            results.extend(_run_batched(config, rho0, seeds[lo:lo + chunk]))

    ok = [(i, r) for i, r in enumerate(results) if isinstance(r, TrajectoryResult)]
    failures = [(i, r) for i, r in enumerate(results)
                if not isinstance(r, TrajectoryResult)]
    if len(ok) < math.ceil(0.9 * n_traj):
        raise PositivityViolation(
            f"only {len(ok)}/{n_traj} trajectories succeeded")

    first = ok[0][1]
    dim = config.model.dim
    n_snap = first.states.shape[0]
    mean_states = np.zeros((n_snap, dim, dim), dtype=complex)
    c = config.model.collapses[0][1]
    x_op = c + c.conj().T
    xbars = np.empty((len(ok), n_snap))
    diffusive = isinstance(config.detection, HomodyneDiffusive)
    psd_acc = None
    for row, (_, res) in enumerate(ok):
        mean_states += res.states
        xbars[row] = np.einsum("tij,ji->t", res.states, x_op).real
        if diffusive:
            s = estimate_psd(res.record, config.dt, psd_segments)
            if psd_acc is None:
                psd_omega, psd_acc = s.omega, s.values.copy()
            else:
                psd_acc += s.values
    mean_states /= len(ok)
    psd = None
    if diffusive and psd_acc is not None:
        psd = Spectrum(psd_omega, psd_acc / len(ok),
                       stderr=(psd_acc / len(ok)) * np.sqrt(
                           1.06 / (psd_segments * len(ok))))
    return EnsembleSummary(
        state_times=first.state_times,
        mean_states=mean_states,
        xbar_variance=xbars.var(axis=0),
        psd=psd,
        n_success=len(ok),
        n_failed=len(failures),
        failures=failures,
        trajectories=[r for _, r in ok] if keep_trajectories else None)
