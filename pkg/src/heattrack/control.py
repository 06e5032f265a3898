"""Closed-loop tracking in the truncated mode space.

The loop couples the diagonal heat generator to output feedback through
point samples smoothed by one resolvent power.  State vectors here are the
error coordinates z = y - y_star; all operators are dense K x K matrices
over the mode table carried by the sampling data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (InsufficientSignalError, NonConvergenceError,
                     SingularSystemError)
from .placement import SamplingMatrices, min_norm_feedforward
from .spectral import SpectralField, eval_modes, heat_step_forced

__all__ = [
    "ClosedLoopSystem",
    "TrajectoryRecord",
    "BiasMatrix",
    "FixedPointResult",
    "TailReport",
    "ContractionDiagnostics",
    "observe",
    "observe_function",
    "embed_low_modes",
    "assemble_closed_loop",
    "equilibrium",
    "simulate_closed_loop",
    "decay_rate_fit",
    "assemble_bias_matrix",
    "fixed_point_reference",
    "tail_mismatch_report",
    "contraction_diagnostics",
    "cross_integrator_check",
    "doubling_gain_search",
]


def observe(z: SpectralField, matrices: SamplingMatrices) -> np.ndarray:
    """Resolvent-smoothed point observation, one value per actuator."""
    if not z.table.matches(matrices.table):
        raise ValueError("field and sampling matrices use different tables")
    return matrices.d_matrix @ z.coeffs


def observe_function(f, matrices: SamplingMatrices, quad_order: int = 96):
    """Observe a callable state; certify the truncation tail by doubling.

    Returns ``(values, tail_gap)`` where ``tail_gap`` is the max absolute
    change when the projection order doubles from K to 2K modes.
    """
    from .spectral import enumerate_modes, project_function

    table = matrices.table
    big = enumerate_modes(table.domain, 2 * table.size)
    coeffs = project_function(f, big, quad_order).coeffs
    sampled = eval_modes(big, matrices.actuators.points)
    d_big = sampled / (1.0 + big.eigenvalues[None, :])
    full = d_big @ coeffs
    truncated = d_big[:, :table.size] @ coeffs[:table.size]
    return full, float(np.max(np.abs(full - truncated)))


def embed_low_modes(matrices: SamplingMatrices, a_low) -> SpectralField:
    """Zero-pad N low-mode coefficients to a full-table field."""
    a_low = np.asarray(a_low, dtype=float)
    if a_low.shape != (matrices.n_modes,):
        raise ValueError("expected one coefficient per controlled mode")
    coeffs = np.zeros(matrices.table.size)
    coeffs[:matrices.n_modes] = a_low
    return SpectralField(matrices.table, coeffs)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """Assembled error dynamics dz/dt = a_cl @ z + forcing."""

    matrices: SamplingMatrices
    gain: float
    reference: SpectralField
    u_ff: np.ndarray
    a_cl: np.ndarray
    forcing: np.ndarray

    @property
    def table(self):
        return self.matrices.table


def _input_matrix(matrices: SamplingMatrices) -> np.ndarray:
    # (K, M) matrix with entries phi_k(x_j); adjoint of point sampling.
    return eval_modes(matrices.table, matrices.actuators.points).T


def assemble_closed_loop(matrices: SamplingMatrices, gain: float,
                         reference=None, u_ff=None) -> ClosedLoopSystem:
    """Build the closed-loop generator and its constant forcing.

    ``reference`` gives the first N coefficients of the stationary target
    (default zero).  When ``u_ff`` is omitted the minimum-norm feedforward
    for that reference is computed, in which case the first N forcing
    entries must cancel; that cancellation is checked to 1e-10.
    """
    if gain < 0:
        raise ValueError("feedback gain must be nonnegative")
    table = matrices.table
    lam = table.eigenvalues
    n = matrices.n_modes
    if reference is None:
        a_ref = np.zeros(n)
    elif isinstance(reference, SpectralField):
        if not reference.table.matches(table):
            raise ValueError("reference uses a different mode table")
        if np.any(reference.coeffs[n:] != 0.0):
            raise ValueError("reference must lie in the controlled mode span")
        a_ref = reference.coeffs[:n].copy()
    else:
        a_ref = np.asarray(reference, dtype=float)
        if a_ref.shape != (n,):
            raise ValueError("reference coefficients must have length n_modes")

    check_cancellation = u_ff is None
    if u_ff is None:
        u_ff = min_norm_feedforward(a_ref, matrices)
    u_ff = np.asarray(u_ff, dtype=float)

    e_mat = _input_matrix(matrices)
    a_cl = -np.diag(lam) - gain * (e_mat @ matrices.d_matrix)
    ref_full = np.zeros(table.size)
    ref_full[:n] = a_ref
    forcing = -lam * ref_full + e_mat @ u_ff
    if check_cancellation:
        scale = max(1.0, float(np.linalg.norm(forcing)))
        if np.max(np.abs(forcing[:n])) > 1e-10 * scale:
            raise SingularSystemError(
                "feedforward failed to cancel the controlled-mode forcing")
    return ClosedLoopSystem(matrices, float(gain),
                            SpectralField(table, ref_full), u_ff, a_cl,
                            forcing)


def _solve_square(a: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= 1e-13 * max(s[0], 1.0):
        raise SingularSystemError(f"{what} is singular", float(s[-1]))
    return np.linalg.solve(a, rhs)


def equilibrium(system: ClosedLoopSystem) -> SpectralField:
    """Stationary error state, the solution of a_cl z = -forcing."""
    z = _solve_square(system.a_cl, -system.forcing, "closed-loop generator")
    return SpectralField(system.table, z)


@dataclass
class TrajectoryRecord:
    """Uniform-grid trajectory of the error state and the applied inputs."""

    times: np.ndarray
    states: np.ndarray          # (steps + 1, K) error coefficients
    inputs: np.ndarray          # (steps + 1, M) u = u_ff - gain * obs
    norms_h: np.ndarray         # H norm of z - z_inf per sample
    norms_vdual: np.ndarray     # Vdual norm of z - z_inf per sample
    z_inf: np.ndarray | None    # None when the generator is singular
    system: ClosedLoopSystem = field(repr=False, default=None)


def _step_operators(a_cl: np.ndarray, forcing: np.ndarray, dt: float):
    propagator = scipy.linalg.expm(a_cl * dt)
    if not np.any(forcing):
        return propagator, np.zeros_like(forcing)
    s = np.linalg.svd(a_cl, compute_uv=False)
    if s[-1] > 1e-12 * max(s[0], 1.0):
        affine = np.linalg.solve(a_cl, (propagator - np.eye(len(forcing))) @ forcing)
    else:
        # Singular generator: the step integral of exp(a_cl s) @ forcing
        # is the top-right block of one augmented exponential.
        k = len(forcing)
        aug = np.zeros((k + 1, k + 1))
        aug[:k, :k] = a_cl * dt
        aug[:k, k] = forcing * dt
        affine = scipy.linalg.expm(aug)[:k, k]
    return propagator, affine


def simulate_closed_loop(system: ClosedLoopSystem, z0: SpectralField,
                         horizon: float, dt: float) -> TrajectoryRecord:
    """March the closed loop on a uniform grid with exact step propagators.

    One matrix exponential is computed per call; each step is then a dense
    multiply plus the constant affine increment, so the discretization is
    exact for the assembled linear dynamics at the grid times.
    """
    if dt <= 0 or horizon <= 0:
        raise ValueError("horizon and dt must be positive")
    if not z0.table.matches(system.table):
        raise ValueError("initial state uses a different mode table")
    steps = int(round(horizon / dt))
    if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be an integer number of steps")
    k = system.table.size
    propagator, affine = _step_operators(system.a_cl, system.forcing, dt)
    states = np.empty((steps + 1, k))
    states[0] = z0.coeffs
    for i in range(steps):
        states[i + 1] = propagator @ states[i] + affine

    try:
        z_inf = _solve_square(system.a_cl, -system.forcing, "generator")
    except SingularSystemError:
        z_inf = None
    offset = states - (z_inf if z_inf is not None else 0.0)
    lam = system.table.eigenvalues
    norms_h = np.linalg.norm(offset, axis=1)
    norms_vdual = np.linalg.norm(offset / (1.0 + lam)[None, :], axis=1)
    inputs = system.u_ff[None, :] - system.gain * (states @ system.matrices.d_matrix.T)
    times = np.arange(steps + 1) * dt
    return TrajectoryRecord(times, states, inputs, norms_h, norms_vdual,
                            z_inf, system)


def decay_rate_fit(record: TrajectoryRecord, norm: str = "Vdual",
                   floor: float = 1e-12, min_samples: int = 10):
    """Least-squares exponential rate of the recorded norm decay.

    Returns ``(mu_hat, residual)`` where ``mu_hat`` is the negated slope of
    log-norm against time over the samples above ``floor`` and ``residual``
    is the rms misfit of that line.  Fewer than ``min_samples`` usable
    samples raise an insufficient-signal error.
    """
    if norm == "H":
        values = record.norms_h
    elif norm == "Vdual":
        values = record.norms_vdual
    else:
        raise ValueError("norm must be 'H' or 'Vdual'")
    mask = values > floor
    if int(np.sum(mask)) < min_samples:
        raise InsufficientSignalError(
            f"only {int(np.sum(mask))} samples above {floor:g}")
    t = record.times[mask]
    y = np.log(values[mask])
    design = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return float(-coef[0]), residual


@dataclass(frozen=True)
class BiasMatrix:
    """Low-mode stationary bias operator of the truncated loop.

    Column k holds the first N coefficients of the stationary error
    reached when the reference is the k-th controlled eigenfunction.
    ``norm`` is the spectral norm, the Picard contraction factor.
    """

    matrices: SamplingMatrices
    gain: float
    matrix: np.ndarray
    norm: float
    u_columns: np.ndarray  # (M, N), feedforward used per probe column


def assemble_bias_matrix(matrices: SamplingMatrices, gain: float) -> BiasMatrix:
    """Probe each controlled mode once and collect stationary low modes."""
    n = matrices.n_modes
    t_mat = np.empty((n, n))
    u_cols = np.empty((matrices.actuators.count, n))
    base = assemble_closed_loop(matrices, gain, np.zeros(n),
                                u_ff=np.zeros(matrices.actuators.count))
    lu = scipy.linalg.lu_factor(base.a_cl)
    lam = matrices.table.eigenvalues
    e_mat = _input_matrix(matrices)
    for k in range(n):
        a_ref = np.zeros(n)
        a_ref[k] = 1.0
        u_ff = min_norm_feedforward(a_ref, matrices)
        ref_full = np.zeros(matrices.table.size)
        ref_full[:n] = a_ref
        forcing = -lam * ref_full + e_mat @ u_ff
        z_inf = scipy.linalg.lu_solve(lu, -forcing)
        t_mat[:, k] = z_inf[:n]
        u_cols[:, k] = u_ff
    return BiasMatrix(matrices, float(gain), t_mat,
                      float(np.linalg.norm(t_mat, 2)), u_cols)


@dataclass
class FixedPointResult:
    a_star: np.ndarray
    used_picard: bool
    picard_errors: np.ndarray  # distance of each iterate to the direct solve
    iterations: int


def fixed_point_reference(bias: BiasMatrix, a_target, picard: bool = False,
                          tol: float = 1e-14, max_iter: int = 200) -> FixedPointResult:
    """Solve (I + T_N) a_star = a_target, optionally tracing Picard.

    The direct solve is always performed.  With ``picard=True`` and a
    contractive bias matrix the iterates a -> a_target - T_N a are run and
    their distances to the direct solution recorded; a non-contractive
    bias matrix downgrades to the direct result with a warning.
    """
    a_target = np.asarray(a_target, dtype=float)
    n = bias.matrix.shape[0]
    if a_target.shape != (n,):
        raise ValueError("target coefficients must have length N")
    a_star = _solve_square(np.eye(n) + bias.matrix, a_target,
                           "I + bias matrix")
    if not picard:
        return FixedPointResult(a_star, False, np.empty(0), 0)
    if bias.norm >= 1.0:
        warnings.warn("bias matrix norm >= 1; Picard skipped, direct solve "
                      "returned", RuntimeWarning, stacklevel=2)
        return FixedPointResult(a_star, False, np.empty(0), 0)
    errors = []
    y = a_target.copy()
    for _ in range(max_iter):
        errors.append(float(np.linalg.norm(y - a_star)))
        if errors[-1] <= tol * max(1.0, float(np.linalg.norm(a_target))):
            break
        y = a_target - bias.matrix @ y
    else:
        raise NonConvergenceError("Picard iteration hit the iteration cap",
                                  best=y)
    return FixedPointResult(a_star, True, np.asarray(errors), len(errors) - 1)


@dataclass(frozen=True)
class TailReport:
    """Measured stationary mismatch versus the assembled tail bound.

    All norms are taken in the frame where the resolvent weight
    1/(1 + lambda_k) is the natural metric, which makes every factor of
    the bound an exact finite-dimensional operator norm.
    """

    low_mode_mismatch_h: float
    tail_vdual: float
    bound: float
    factors: dict
    satisfied: bool


def tail_mismatch_report(system: ClosedLoopSystem, bias: BiasMatrix,
                         a_target, tol: float = 1e-12) -> TailReport:
    """Compare the achieved stationary state against the target and bound."""
    a_target = np.asarray(a_target, dtype=float)
    n = system.matrices.n_modes
    lam = system.table.eigenvalues
    z_inf = equilibrium(system).coeffs
    y_inf = system.reference.coeffs + z_inf

    low_mismatch = float(np.linalg.norm(y_inf[:n] - a_target))
    tail_vdual = float(np.linalg.norm(y_inf[n:] / (1.0 + lam[n:])))

    w = 1.0 / (1.0 + lam)
    a_inv = np.linalg.inv(system.a_cl)
    c_cl = float(np.linalg.norm((w[:, None] * a_inv) / w[None, :], 2))
    e_mat = _input_matrix(system.matrices)
    tail_b = float(np.linalg.norm(w[n:, None] * e_mat[n:, :], 2))
    phi_pinv = np.linalg.pinv(system.matrices.phi)
    u_n = phi_pinv * lam[None, :n]
    u_n_norm = float(np.linalg.norm(u_n / w[None, :n], 2))
    inv_tn = np.linalg.inv(np.eye(n) + bias.matrix)
    inv_norm = float(np.linalg.norm((w[:n, None] * inv_tn) / w[None, :n], 2))
    y_ref_vdual = float(np.linalg.norm(w[:n] * a_target))
    factors = {
        "proj_norm": 1.0,
        "c_cl": c_cl,
        "tail_input_norm": tail_b,
        "u_n_norm": u_n_norm,
        "inverse_norm": inv_norm,
        "reference_vdual": y_ref_vdual,
    }
    bound = c_cl * tail_b * u_n_norm * inv_norm * y_ref_vdual
    return TailReport(low_mismatch, tail_vdual, bound, factors,
                      tail_vdual <= bound + tol)


@dataclass(frozen=True)
class ContractionDiagnostics:
    """Block-level certificates that the stationary bias is a contraction."""

    n_modes: int
    gain: float
    lam_next: float
    beta: float
    a12_norm: float
    schur_norm: float          # norm of the inverse Schur complement, inf if singular
    l_n: float                 # measured norm of the low-tail inverse block
    b_norm: float
    u_n_norm: float
    resolvent_norm: float      # norm of the full inverse generator, inf if singular
    alpha: float               # spectral abscissa magnitude
    m_est: float               # sampled semigroup overshoot constant
    sigma_min: float
    bound_tail_margin: float   # lam_next - beta
    bound_a: float
    bound_b: float
    bound_c: float
    mechanism_a: bool
    mechanism_b: bool
    mechanism_c: bool
    inconclusive: tuple


def contraction_diagnostics(system: ClosedLoopSystem) -> ContractionDiagnostics:
    """Evaluate the three sufficient contraction mechanisms on one loop.

    Mechanism A bounds the inverse cross block through the tail resolvent
    margin and the Schur complement; mechanism B uses the semigroup bound
    M/alpha; mechanism C trades the input conditioning sigma_min against
    the measured cross block.  Each bound multiplies the input and
    feedforward norms into a bias-matrix estimate; the mechanism holds
    when that estimate is below one.
    """
    n = system.matrices.n_modes
    k = system.table.size
    if n >= k:
        raise ValueError("diagnostics need at least one tail mode")
    lam = system.table.eigenvalues
    a_cl = system.a_cl
    a11 = a_cl[:n, :n]
    a12 = a_cl[:n, n:]
    a21 = a_cl[n:, :n]
    a22 = a_cl[n:, n:]
    coupling = a_cl + np.diag(lam)      # -gain * E D
    beta = float(np.linalg.norm(coupling[n:, n:], 2))
    lam_next = float(lam[n])
    a12_norm = float(np.linalg.norm(a12, 2))

    inconclusive = []
    try:
        a22_inv = np.linalg.inv(a22)
        schur = a11 - a12 @ a22_inv @ a21
        s_vals = np.linalg.svd(schur, compute_uv=False)
        if s_vals[-1] <= 1e-13 * max(s_vals[0], 1.0):
            raise np.linalg.LinAlgError("singular Schur complement")
        schur_norm = float(1.0 / s_vals[-1])
        l_n = float(np.linalg.norm(np.linalg.inv(schur) @ a12 @ a22_inv, 2))
    except np.linalg.LinAlgError:
        schur_norm = np.inf
        l_n = 0.0 if a12_norm == 0.0 else np.inf
        inconclusive.append("schur")

    e_mat = _input_matrix(system.matrices)
    b_norm = float(np.linalg.norm(e_mat, 2))
    lam_low_max = float(np.max(lam[:n]))
    sigma_min = system.matrices.sigma_min
    u_n_norm = (lam_low_max / sigma_min) if sigma_min > 0 else np.inf

    s_full = np.linalg.svd(a_cl, compute_uv=False)
    if s_full[-1] > 1e-13 * max(s_full[0], 1.0):
        resolvent_norm = float(1.0 / s_full[-1])
    else:
        resolvent_norm = np.inf
        inconclusive.append("resolvent")
    eigvals = np.linalg.eigvals(a_cl)
    alpha = float(-np.max(eigvals.real))
    if alpha > 0:
        # Crude overshoot estimate on a coarse grid of the decay window.
        m_est = 1.0
        for t in np.linspace(0.0, 5.0 / alpha, 11)[1:]:
            m_est = max(m_est, float(np.linalg.norm(
                scipy.linalg.expm(a_cl * t), 2) * np.exp(alpha * t)))
    else:
        m_est = np.inf
        inconclusive.append("abscissa")

    margin = lam_next - beta
    if a12_norm == 0.0:
        bound_a = 0.0
    elif margin > 0 and np.isfinite(schur_norm):
        bound_a = schur_norm * a12_norm / margin * b_norm * u_n_norm
    else:
        bound_a = np.inf
        if "schur" not in inconclusive:
            inconclusive.append("tail-margin")
    bound_b = (m_est / alpha) * b_norm * u_n_norm if alpha > 0 else np.inf
    bound_c = l_n * b_norm * u_n_norm if np.isfinite(l_n) else np.inf

    return ContractionDiagnostics(
        n_modes=n, gain=system.gain, lam_next=lam_next, beta=beta,
        a12_norm=a12_norm, schur_norm=schur_norm, l_n=l_n, b_norm=b_norm,
        u_n_norm=u_n_norm, resolvent_norm=resolvent_norm, alpha=alpha,
        m_est=m_est, sigma_min=sigma_min, bound_tail_margin=margin,
        bound_a=bound_a, bound_b=bound_b, bound_c=bound_c,
        mechanism_a=bool(bound_a < 1.0), mechanism_b=bool(bound_b < 1.0),
        mechanism_c=bool(bound_c < 1.0), inconclusive=tuple(inconclusive))


def cross_integrator_check(system: ClosedLoopSystem, z0: SpectralField,
                           steps: int = 100, dt: float = 1e-6) -> float:
    """Replay recorded inputs through the open-loop stepper.

    The closed-loop trajectory is reconstructed in absolute coordinates by
    forcing the exact Duhamel stepper with the recorded per-step inputs.
    Both integrators agree to the input sampling error, which this check
    returns as the maximum H-norm deviation over the horizon.
    """
    record = simulate_closed_loop(system, z0, steps * dt, dt)
    y = SpectralField(system.table,
                      system.reference.coeffs + z0.coeffs)
    actuators = system.matrices.actuators
    worst = 0.0
    for i in range(steps):
        y = heat_step_forced(y, actuators, record.inputs[i], dt)
        z_ref = record.states[i + 1]
        dev = float(np.linalg.norm(
            y.coeffs - (system.reference.coeffs + z_ref)))
        worst = max(worst, dev)
    return worst


def doubling_gain_search(matrices: SamplingMatrices, target_mu: float,
                         gain0: float = 1.0, cap: float = 2.0 ** 16,
                         samples: int = 80):
    """Double the feedback gain until the fitted decay rate reaches target.

    Each probe assembles the homogeneous loop, starts it on its slowest
    decaying mode and fits the Vdual log-norm slope.  Returns
    ``(system, gain, mu_hat, residual, trace)`` with the per-gain history.
    Hitting the gain cap raises a non-convergence error carrying the trace.
    """
    if target_mu <= 0:
        raise ValueError("target rate must be positive")
    gain = float(gain0)
    trace = []
    zeros = np.zeros(matrices.n_modes)
    while gain <= cap:
        system = assemble_closed_loop(matrices, gain, zeros,
                                      u_ff=np.zeros(matrices.actuators.count))
        eigvals, eigvecs = np.linalg.eig(system.a_cl)
        slow = int(np.argmax(eigvals.real))
        rate = -float(eigvals.real[slow])
        if rate <= 1e-12:
            trace.append((gain, 0.0, np.inf))
            gain *= 2.0
            continue
        z0 = np.real(eigvecs[:, slow])
        z0 = z0 / np.linalg.norm(z0 / (1.0 + matrices.table.eigenvalues))
        horizon = 2.0 / rate
        dt = horizon / samples
        record = simulate_closed_loop(
            system, SpectralField(matrices.table, z0), horizon, dt)
        mu_hat, residual = decay_rate_fit(record, "Vdual")
        trace.append((gain, mu_hat, residual))
        if mu_hat >= target_mu:
            return system, gain, mu_hat, residual, trace
        gain *= 2.0
    raise NonConvergenceError(
        f"gain doubling hit the cap {cap:g} before reaching rate {target_mu:g}",
        best=trace)
