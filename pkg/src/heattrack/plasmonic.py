"""Point-heater realization through interacting resonant particles.

Each particle converts illumination intensities into a heat amplitude; the
amplitudes couple through free-space heat propagation between the particle
centers, which yields a Volterra system in time.  Calibration compresses
the full pipeline into one matrix acting on illumination coefficients, and
the remainder quantifies everything the compression drops.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import NonConvergenceError, RankDeficiencyError

__all__ = [
    "PlasmonicConfig",
    "VolterraSolution",
    "ActuationMap",
    "free_space_kernel",
    "kernel_time_derivative",
    "volterra_solve",
    "effective_dictionary",
    "forcing_from_intensities",
    "heat_inputs_from_sigma",
    "run_pipeline",
    "resonance_gain",
    "calibrate_k0",
    "invert_actuation",
    "nnls_active_set",
    "realized_remainder",
]

_EXP_FLOOR = -700.0  # exp underflows to an exact 0 below this


def _pair_geometry(x, y):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("points must share a dimension")
    return x.shape[0], float(np.sum((x - y) ** 2))


def free_space_kernel(x, t: float, y, tau: float, kappa: float) -> float:
    """Whole-space heat kernel between two points and two times.

    Value ``(4 pi kappa (t - tau))**(-d/2) * exp(-|x - y|^2 / (4 kappa
    (t - tau)))`` for ``t > tau`` and zero otherwise; the dimension d is
    taken from the points.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    d, r2 = _pair_geometry(x, y)
    s = t - tau
    if s <= 0.0:
        return 0.0
    expo = -r2 / (4.0 * kappa * s)
    if expo < _EXP_FLOOR:
        return 0.0
    return (4.0 * np.pi * kappa * s) ** (-0.5 * d) * np.exp(expo)


def kernel_time_derivative(x, t: float, y, tau: float, kappa: float) -> float:
    """Time derivative of the free-space kernel at separated points.

    Equals ``Phi * (-d/(2 s) + r^2 / (4 kappa s^2))`` with ``s = t - tau``.
    For separated points the value tends to zero as ``tau`` approaches
    ``t``, and the function returns an exact zero for ``s <= 0``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    d, r2 = _pair_geometry(x, y)
    if r2 == 0.0:
        raise ValueError("kernel time derivative requires separated points")
    s = t - tau
    if s <= 0.0:
        return 0.0
    expo = -r2 / (4.0 * kappa * s)
    if expo < _EXP_FLOOR:
        return 0.0
    phi = (4.0 * np.pi * kappa * s) ** (-0.5 * d) * np.exp(expo)
    return phi * (-0.5 * d / s + r2 / (4.0 * kappa * s * s))


@dataclass(frozen=True)
class PlasmonicConfig:
    """Geometry, material and dictionary data of one particle array.

    ``dictionary`` (shape M x P, full row rank) maps P illumination
    intensities to per-particle forcing; ``coupling`` holds the pairwise
    interaction weights with an ignored diagonal.  ``delta`` scales the
    seeded dictionary perturbation by ``delta**mu`` and, when
    ``perturb_interaction`` is set, the coupling perturbation too.
    """

    centers: np.ndarray
    contrasts: np.ndarray
    c_m: float
    kappa: float
    coupling: np.ndarray
    dictionary: np.ndarray
    delta: float
    mu: float
    seed: int
    perturb_interaction: bool = False

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        m = centers.shape[0]
        if m < 1:
            raise ValueError("at least one particle is required")
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff ** 2, axis=2))
        np.fill_diagonal(dist, np.inf)
        if m > 1 and np.min(dist) <= 0.0:
            raise ValueError("particle centers must be pairwise separated")
        contrasts = np.asarray(self.contrasts, dtype=float).reshape(-1)
        if contrasts.shape != (m,):
            raise ValueError("one contrast per particle is required")
        if self.c_m <= 0:
            raise ValueError("c_m must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        coupling = np.asarray(self.coupling, dtype=float)
        if coupling.shape != (m, m):
            raise ValueError("coupling must be M x M")
        dictionary = np.atleast_2d(np.asarray(self.dictionary, dtype=float))
        if dictionary.shape[0] != m:
            raise ValueError("dictionary must have one row per particle")
        if dictionary.shape[1] < m:
            raise RankDeficiencyError(
                "dictionary has fewer columns than particles", 0.0)
        s = np.linalg.svd(dictionary, compute_uv=False)
        if s[m - 1] <= 1e-12 * max(s[0], 1.0):
            raise RankDeficiencyError("dictionary is not full row rank",
                                      float(s[m - 1]))
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        for name, arr in (("centers", centers), ("contrasts", contrasts),
                          ("coupling", coupling), ("dictionary", dictionary)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def n_intensities(self) -> int:
        return self.dictionary.shape[1]


def _seeded_unit(shape, seed: int, index: int) -> np.ndarray:
    gen = rng.stream(seed, rng.PURPOSE_PERTURBATION, index)
    raw = gen.standard_normal(shape)
    return raw / np.linalg.norm(raw, 2)


def effective_dictionary(config: PlasmonicConfig) -> np.ndarray:
    """Dictionary with the seeded O(delta**mu) perturbation applied."""
    if config.delta == 0.0:
        return config.dictionary.copy()
    pert = _seeded_unit(config.dictionary.shape, config.seed, 0)
    return config.dictionary + config.delta ** config.mu * pert


def _effective_coupling(config: PlasmonicConfig) -> np.ndarray:
    if not config.perturb_interaction or config.delta == 0.0:
        return config.coupling.copy()
    pert = _seeded_unit(config.coupling.shape, config.seed, 1)
    return config.coupling + config.delta ** config.mu * pert


@dataclass
class VolterraSolution:
    times: np.ndarray
    sigma: np.ndarray    # (Q + 1, M) amplitudes
    forcing: np.ndarray  # (Q + 1, M) right-hand side samples


def volterra_solve(centers, coupling, kappa: float, times,
                   forcing) -> VolterraSolution:
    """March the coupled amplitude system by product trapezoid rule.

    The memory integral of each pair uses the time derivative of the
    free-space kernel between the two centers; the rule is second order
    for smooth forcing.  Because that kernel vanishes on the diagonal in
    time, the per-step square system is well conditioned, but it is still
    solved rather than assumed trivial.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    m = centers.shape[0]
    coupling = np.asarray(coupling, dtype=float)
    times = np.asarray(times, dtype=float)
    forcing = np.asarray(forcing, dtype=float)
    q_steps = times.shape[0] - 1
    if q_steps < 1:
        raise ValueError("at least two time samples are required")
    dt = times[1] - times[0]
    if dt <= 0 or np.max(np.abs(np.diff(times) - dt)) > 1e-12 * max(dt, 1.0):
        raise ValueError("time samples must form a uniform increasing grid")
    if forcing.shape != (q_steps + 1, m):
        raise ValueError("forcing must be sampled on the grid, per particle")

    # kern[s, i, j] = d/dt kernel(center_i, s*dt; center_j, 0), kern[0] = 0.
    kern = np.zeros((q_steps + 1, m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            for s in range(1, q_steps + 1):
                kern[s, i, j] = kernel_time_derivative(
                    centers[i], s * dt, centers[j], 0.0, kappa)
    weights = coupling.copy()
    np.fill_diagonal(weights, 0.0)

    sigma = np.zeros((q_steps + 1, m))
    sigma[0] = forcing[0]
    step_matrix = np.eye(m) + 0.5 * dt * weights * kern[0]
    for q in range(1, q_steps + 1):
        w = np.ones(q)
        w[0] = 0.5
        hist = np.einsum("sij,sj->ij", kern[q:0:-1], sigma[:q] * w[:, None])
        rhs = forcing[q] - dt * np.sum(weights * hist, axis=1)
        sigma[q] = np.linalg.solve(step_matrix, rhs)
    return VolterraSolution(times.copy(), sigma, forcing.copy())


def forcing_from_intensities(config: PlasmonicConfig,
                             intensities: np.ndarray) -> np.ndarray:
    """Per-particle forcing samples from illumination intensity samples."""
    intensities = np.asarray(intensities, dtype=float)
    if intensities.ndim != 2 or intensities.shape[1] != config.n_intensities:
        raise ValueError("intensities must have shape (samples, P)")
    return intensities @ effective_dictionary(config).T


def heat_inputs_from_sigma(config: PlasmonicConfig,
                           solution: VolterraSolution) -> np.ndarray:
    """Heat inputs G_i = (alpha_i / c_m) * sigma_i, sampled on the grid."""
    return solution.sigma * (config.contrasts / config.c_m)[None, :]


def run_pipeline(config: PlasmonicConfig, times,
                 intensities: np.ndarray) -> np.ndarray:
    """Intensities -> forcing -> amplitudes -> heat inputs, on one grid."""
    forcing = forcing_from_intensities(config, intensities)
    sol = volterra_solve(config.centers, _effective_coupling(config),
                         config.kappa, times, forcing)
    return heat_inputs_from_sigma(config, sol)


def resonance_gain(delta: float, shape_exponent: float, im_eps: float,
                   enhancement, intensity: float) -> np.ndarray:
    """Per-particle gain ``im_eps * delta**(3 - 2h) * A_i * intensity``.

    The scaling exponent 3 - 2h must stay positive-definite in the model
    sense: shape exponents h >= 1.5 break the smallness regime and raise.
    """
    if not (0.0 < delta <= 1.0):
        raise ValueError("delta must lie in (0, 1]")
    if shape_exponent >= 1.5:
        raise ValueError("shape exponent must be below 3/2 for the model")
    if im_eps < 0 or intensity < 0:
        raise ValueError("im_eps and intensity must be nonnegative")
    enhancement = np.asarray(enhancement, dtype=float)
    if np.any(enhancement < 0):
        raise ValueError("enhancement factors must be nonnegative")
    return im_eps * delta ** (3.0 - 2.0 * shape_exponent) * enhancement * intensity


def _l2_inner(times: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.trapezoid(a * b, times))


@dataclass(frozen=True)
class ActuationMap:
    """Calibrated linear compression of the pipeline onto one profile.

    ``k0[i, l]`` is the profile coefficient of heat input i when the
    dictionary is probed with unit intensity l; ``residuals[l]`` is the
    L2 mass the probe left outside the profile span.
    """

    k0: np.ndarray
    pinv: np.ndarray
    sigma_min: float
    residuals: np.ndarray
    profile: np.ndarray
    times: np.ndarray


def calibrate_k0(config: PlasmonicConfig, times,
                 profile: np.ndarray) -> ActuationMap:
    """Probe every dictionary column and project outputs on the profile."""
    times = np.asarray(times, dtype=float)
    profile = np.asarray(profile, dtype=float)
    if profile.shape != times.shape:
        raise ValueError("profile must be sampled on the time grid")
    denom = _l2_inner(times, profile, profile)
    if denom <= 0.0:
        raise ValueError("profile must be nonzero")
    m, p = config.count, config.n_intensities
    k0 = np.empty((m, p))
    residuals = np.empty(p)
    for col in range(p):
        intensities = np.zeros((times.shape[0], p))
        intensities[:, col] = profile
        outputs = run_pipeline(config, times, intensities)
        res2 = 0.0
        for i in range(m):
            k0[i, col] = _l2_inner(times, outputs[:, i], profile) / denom
            tail = outputs[:, i] - k0[i, col] * profile
            res2 += _l2_inner(times, tail, tail)
        residuals[col] = np.sqrt(max(res2, 0.0))
    s = np.linalg.svd(k0, compute_uv=False)
    sigma_min = float(s[m - 1]) if len(s) >= m else 0.0
    if sigma_min <= 1e-12 * max(float(s[0]), 1.0):
        raise RankDeficiencyError("calibrated map is rank deficient",
                                  sigma_min)
    return ActuationMap(k0, np.linalg.pinv(k0), sigma_min, residuals,
                        profile.copy(), times.copy())


def nnls_active_set(a: np.ndarray, b: np.ndarray, max_iter: int | None = None,
                    tol: float | None = None):
    """Nonnegative least squares by the classic active-set iteration.

    Returns ``(x, residual_norm)`` with x >= 0 minimizing ``|a x - b|``.
    At the solution the gradient is nonnegative on the active (zero)
    coordinates, which is the first-order optimality the tests probe.
    Exceeding the iteration cap raises, carrying the best iterate.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    m, n = a.shape
    if b.shape != (m,):
        raise ValueError("right-hand side length must match the rows of a")
    if max_iter is None:
        max_iter = 3 * n + 30
    if tol is None:
        tol = 10 * max(m, n) * np.finfo(float).eps * np.linalg.norm(a, 2)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    iterations = 0
    while True:
        grad = a.T @ (b - a @ x)
        candidates = np.where(~passive)[0]
        if candidates.size == 0 or np.max(grad[candidates]) <= tol:
            return x, float(np.linalg.norm(a @ x - b))
        iterations += 1
        if iterations > max_iter:
            raise NonConvergenceError(
                "active-set iteration cap exceeded", best=x)
        passive[candidates[np.argmax(grad[candidates])]] = True
        while True:
            s = np.zeros(n)
            cols = np.where(passive)[0]
            s[cols], *_ = np.linalg.lstsq(a[:, cols], b, rcond=None)
            if np.all(s[cols] > 0.0):
                x = s
                break
            # Step to the boundary of the feasible cone and drop a column.
            blocking = cols[s[cols] <= 0.0]
            alpha = np.min(x[blocking] / (x[blocking] - s[blocking]))
            x = x + alpha * (s - x)
            tiny = np.finfo(float).eps * max(1.0, float(np.max(np.abs(x))))
            drop = passive & (x <= tiny)
            x[drop] = 0.0
            passive[drop] = False


def invert_actuation(amap: ActuationMap, u_des: np.ndarray,
                     nonnegative: bool = False,
                     consistency_tol: float = 1e-9):
    """Recover intensity coefficients realizing desired profile weights.

    Signed mode returns the minimum-norm solution of ``k0 p = u_des`` and
    verifies the reconstruction to ``consistency_tol``.  Nonnegative mode
    solves the same system in the least-squares sense over p >= 0 and
    returns the residual norm alongside the coefficients.
    """
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    if u_des.shape[0] != amap.k0.shape[0]:
        raise ValueError("one desired weight per particle is required")
    if nonnegative:
        return nnls_active_set(amap.k0, u_des)
    p = amap.pinv @ u_des
    residual = float(np.linalg.norm(amap.k0 @ p - u_des))
    if residual > consistency_tol * max(1.0, float(np.linalg.norm(u_des))):
        raise RankDeficiencyError(
            f"signed inversion inconsistent (residual {residual:.3e})",
            amap.sigma_min)
    return p, residual


def realized_remainder(config: PlasmonicConfig, times,
                       intensities: np.ndarray):
    """Pipeline output minus its leading (delta = 0) model prediction.

    Returns ``(rho, norm)`` where rho is the per-particle time series of
    the mismatch and norm is its aggregate L2 size over all particles.
    """
    full = run_pipeline(config, times, intensities)
    leading = run_pipeline(dataclasses.replace(config, delta=0.0), times,
                           intensities)
    rho = full - leading
    times = np.asarray(times, dtype=float)
    norm2 = sum(_l2_inner(times, rho[:, i], rho[:, i])
                for i in range(rho.shape[1]))
    return rho, float(np.sqrt(max(norm2, 0.0)))
