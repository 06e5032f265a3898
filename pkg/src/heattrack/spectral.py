"""Neumann eigenbasis tools on an interval or a rectangular box.

Everything downstream works in coefficient space: a field is a finite
cosine-series truncation, the heat semigroup is diagonal on it, and point
forcing enters through eigenfunction values at the forcing locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainSpec",
    "ModeTable",
    "SpectralField",
    "enumerate_modes",
    "eval_modes",
    "project_function",
    "resolvent_apply",
    "semigroup_apply",
    "heat_step_forced",
    "heat_step_forced_linear",
    "phi1",
    "phi2",
    "gauss_legendre_grid",
]

_NORM_KINDS = ("H", "Vdual", "graph")


@dataclass(frozen=True)
class DomainSpec:
    """Rectangular domain with an isotropic diffusivity.

    Parameters
    ----------
    kind : str
        Either ``"interval"`` or ``"box3"``.
    lengths : tuple of float
        Side lengths, one entry for an interval and three for a box.
    kappa : float
        Diffusivity, strictly positive.
    """

    kind: str
    lengths: tuple
    kappa: float

    def __post_init__(self):
        if self.kind not in ("interval", "box3"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        lengths = tuple(float(L) for L in self.lengths)
        expected = 1 if self.kind == "interval" else 3
        if len(lengths) != expected:
            raise ValueError(
                f"{self.kind} needs {expected} length(s), got {len(lengths)}")
        if any(L <= 0 for L in lengths):
            raise ValueError("side lengths must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @staticmethod
    def interval(length: float, kappa: float = 1.0) -> "DomainSpec":
        return DomainSpec("interval", (length,), kappa)

    @staticmethod
    def box(lengths, kappa: float = 1.0) -> "DomainSpec":
        return DomainSpec("box3", tuple(lengths), kappa)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = as_points(points, self.dim)
        lo = pts >= -tol
        hi = pts <= np.asarray(self.lengths) + tol
        return np.all(lo & hi, axis=1)


def as_points(points, dim: int) -> np.ndarray:
    """Coerce point data to a (P, dim) float array."""
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.ndim == 1:
        if dim == 1:
            pts = pts[:, None]
        elif pts.shape[0] == dim:
            pts = pts[None, :]
        else:
            raise ValueError(f"cannot interpret shape {pts.shape} as points in R^{dim}")
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"points must have shape (P, {dim}), got {pts.shape}")
    return pts


@dataclass(frozen=True)
class ModeTable:
    """First K Neumann modes of -kappa*Laplace, sorted by eigenvalue.

    Each row holds a multi-index n, the eigenvalue
    ``kappa * sum((n_l * pi / L_l)**2)`` and the L2 normalization constant
    ``prod(sqrt(1/L_l) if n_l == 0 else sqrt(2/L_l))``.  Ties in the
    eigenvalue are broken by comparing the reversed multi-index, which for
    the unit box orders (1,0,0) before (0,1,0) before (0,0,1).  The first
    row is always the constant mode with eigenvalue zero.
    """

    domain: DomainSpec
    indices: np.ndarray
    eigenvalues: np.ndarray
    norm_constants: np.ndarray

    def __post_init__(self):
        for name in ("indices", "eigenvalues", "norm_constants"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.indices.shape != (self.size, self.domain.dim):
            raise ValueError("index table shape mismatch")

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def matches(self, other: "ModeTable") -> bool:
        return self is other or (
            self.domain == other.domain
            and self.size == other.size
            and np.array_equal(self.indices, other.indices))

    @staticmethod
    def from_indices(domain: DomainSpec, indices) -> "ModeTable":
        """Build a table from explicit multi-indices, kept in given order."""
        idx = np.atleast_2d(np.asarray(indices, dtype=np.int64))
        if idx.shape[1] != domain.dim:
            raise ValueError("multi-index width must equal the domain dimension")
        if np.any(idx < 0):
            raise ValueError("multi-indices must be nonnegative")
        lengths = np.asarray(domain.lengths)
        lam = domain.kappa * np.sum((idx * np.pi / lengths) ** 2, axis=1)
        const = np.where(idx == 0, 1.0 / np.sqrt(lengths), np.sqrt(2.0 / lengths))
        return ModeTable(domain, idx, lam, np.prod(const, axis=1))


def enumerate_modes(domain: DomainSpec, count: int) -> ModeTable:
    """Return the table of the ``count`` smallest Neumann modes.

    Candidate multi-indices are enumerated on a growing cube until the
    cube provably contains the ``count`` smallest eigenvalues, then sorted
    by (eigenvalue, reversed multi-index).
    """
    if not isinstance(count, (int, np.integer)) or count < 1:
        raise ValueError("mode count must be a positive integer")
    d = domain.dim
    lengths = np.asarray(domain.lengths)
    side = count if d == 1 else int(math.ceil(count ** (1.0 / d))) + 2
    while True:
        axes = [np.arange(side + 1)] * d
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        lam = domain.kappa * np.sum((grid * np.pi / lengths) ** 2, axis=1)
        # Smallest eigenvalue outside the cube: one axis at side+1, rest 0.
        frontier = domain.kappa * np.min(((side + 1) * np.pi / lengths) ** 2)
        order = sorted(range(grid.shape[0]),
                       key=lambda i: (lam[i], tuple(grid[i][::-1])))
        if grid.shape[0] >= count and lam[order[count - 1]] < frontier:
            chosen = np.asarray(order[:count])
            return ModeTable.from_indices(domain, grid[chosen])
        side *= 2


def eval_modes(table: ModeTable, points) -> np.ndarray:
    """Evaluate all modes at the given points; result has shape (P, K)."""
    pts = as_points(points, table.domain.dim)
    lengths = np.asarray(table.domain.lengths)
    # phase[p, k, l] = n_l * pi * x_l / L_l
    phase = pts[:, None, :] * (table.indices[None, :, :] * np.pi / lengths)
    return np.prod(np.cos(phase), axis=2) * table.norm_constants[None, :]


@dataclass
class SpectralField:
    """A truncated cosine series: coefficients against a ModeTable."""

    table: ModeTable
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros(self.table.size)
        self.coeffs = np.asarray(self.coeffs, dtype=float).copy()
        if self.coeffs.shape != (self.table.size,):
            raise ValueError("coefficient vector length must match the table")

    def _check(self, other: "SpectralField"):
        if not self.table.matches(other.table):
            raise ValueError("fields are defined against different mode tables")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.table, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.table, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.table, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.table, -self.coeffs)

    def evaluate(self, points) -> np.ndarray:
        return eval_modes(self.table, points) @ self.coeffs

    def norm(self, kind: str = "H") -> float:
        if kind not in _NORM_KINDS:
            raise ValueError(f"unknown norm kind {kind!r}; expected one of {_NORM_KINDS}")
        lam = self.table.eigenvalues
        if kind == "H":
            w = self.coeffs
        elif kind == "Vdual":
            w = self.coeffs / (1.0 + lam)
        else:
            w = self.coeffs * (1.0 + lam)
        return float(np.linalg.norm(w))

    def copy(self) -> "SpectralField":
        return SpectralField(self.table, self.coeffs)


def gauss_legendre_grid(domain: DomainSpec, order: int):
    """Tensor Gauss-Legendre nodes and weights covering the domain."""
    if order < 1:
        raise ValueError("quadrature order must be positive")
    nodes_1d, weights_1d = np.polynomial.legendre.leggauss(order)
    axes, weights = [], []
    for L in domain.lengths:
        axes.append(0.5 * L * (nodes_1d + 1.0))
        weights.append(0.5 * L * weights_1d)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*weights, indexing="ij")
    w = np.ones(pts.shape[0])
    for wg in wgrids:
        w = w * wg.ravel()
    return pts, w


def project_function(f, table: ModeTable, quad_order: int = 64) -> SpectralField:
    """L2-project a callable onto the span of the table.

    Parameters
    ----------
    f : callable
        Accepts a (P, dim) array of points and returns (P,) values.
    table : ModeTable
    quad_order : int
        Gauss-Legendre order per axis; exact for smooth integrands once
        the order comfortably exceeds the highest mode index.
    """
    pts, w = gauss_legendre_grid(table.domain, quad_order)
    values = np.asarray(f(pts), dtype=float).reshape(-1)
    if values.shape[0] != pts.shape[0]:
        raise ValueError("integrand must return one value per point")
    coeffs = eval_modes(table, pts).T @ (w * values)
    return SpectralField(table, coeffs)


def resolvent_apply(z: SpectralField) -> SpectralField:
    """Apply (I - kappa*Laplace)^{-1}, i.e. divide mode k by 1 + lambda_k."""
    return SpectralField(z.table, z.coeffs / (1.0 + z.table.eigenvalues))


def semigroup_apply(z: SpectralField, t: float) -> SpectralField:
    """Run the unforced heat flow for time t >= 0."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    return SpectralField(z.table, z.coeffs * np.exp(-z.table.eigenvalues * t))


def phi1(lam: np.ndarray, dt: float) -> np.ndarray:
    """Integral of exp(-lam*(dt - s)) over s in [0, dt].

    Equals (1 - exp(-lam*dt))/lam; a series branch keeps small |lam*dt|
    accurate, including the lam = 0 constant mode.
    """
    lam = np.asarray(lam, dtype=float)
    x = lam * dt
    small = np.abs(x) < 1e-6
    xs = np.where(small, 0.0, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (1.0 - np.exp(-xs)) / np.where(small, 1.0, lam)
    series = dt * (1.0 - x / 2.0 + x * x / 6.0)
    return np.where(small, series, exact)


def phi2(lam: np.ndarray, dt: float) -> np.ndarray:
    """Integral of exp(-lam*(dt - s)) * (s/dt) over s in [0, dt]."""
    lam = np.asarray(lam, dtype=float)
    x = lam * dt
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    exact = dt * (np.exp(-xs) - 1.0 + xs) / (xs * xs)
    series = dt * (0.5 - x / 6.0 + x * x / 24.0 - x ** 3 / 120.0)
    return np.where(small, series, exact)


def _forcing_coefficients(table: ModeTable, actuators, u: np.ndarray) -> np.ndarray:
    points = getattr(actuators, "points", actuators)
    u = np.asarray(u, dtype=float)
    sampled = eval_modes(table, points)  # (M, K)
    if u.shape != (sampled.shape[0],):
        raise ValueError("one input amplitude per actuator is required")
    return sampled.T @ u


def heat_step_forced(z: SpectralField, actuators, u, dt: float) -> SpectralField:
    """Advance the forced heat flow by one step of length dt.

    The input held constant over the step: each coefficient obeys
    ``a' = -lam*a + b`` with ``b_k = sum_j u_j * phi_k(x_j)``, integrated
    exactly, so the only error against the continuous model is the
    piecewise-constant sampling of the input.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam = z.table.eigenvalues
    b = _forcing_coefficients(z.table, actuators, u)
    coeffs = z.coeffs * np.exp(-lam * dt) + b * phi1(lam, dt)
    return SpectralField(z.table, coeffs)


def heat_step_forced_linear(z: SpectralField, actuators, u_start, u_end,
                            dt: float) -> SpectralField:
    """One exact step with the input interpolated linearly across the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam = z.table.eigenvalues
    b0 = _forcing_coefficients(z.table, actuators, u_start)
    b1 = _forcing_coefficients(z.table, actuators, u_end)
    coeffs = (z.coeffs * np.exp(-lam * dt)
              + b0 * phi1(lam, dt) + (b1 - b0) * phi2(lam, dt))
    return SpectralField(z.table, coeffs)
