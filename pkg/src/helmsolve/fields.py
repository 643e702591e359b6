"""Discrete Helmholtz and shifted-Laplacian operators on uniform 2D grids.

Conventions used throughout the package:

* Grids are node-centred arrays indexed ``data[ix, iy]`` with ``(nx, ny)``
  nodes.  The domain is scaled so that the longest side spans ``[0, 1]``,
  giving the spacing ``h = 1 / (max(nx, ny) - 1)``.
* The negative Laplacian is the 5-point stencil with zero (Dirichlet)
  padding outside the grid; absorbing behaviour enters only through the
  attenuation mask ``gamma`` in the mass term.
* Classical solver arithmetic is complex128.  The neural preconditioner is
  free to run in 32-bit and converts at its boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

#: Ten-points-per-wavelength resolution bound on omega * kappa * h.
PPW_FACTOR = 0.628


def grid_spacing(nx: int, ny: int) -> float:
    """Spacing of an (nx, ny) node grid scaled to the unit square."""
    return 1.0 / (max(nx, ny) - 1)


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ComplexField:
    """A complex-valued function sampled on a uniform 2D node grid."""

    data: np.ndarray
    h: float

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, np.complex128))
        if self.data.ndim != 2:
            raise DimensionError(f"field must be 2D, got shape {self.data.shape}")

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class HelmholtzShift:
    """Complex shift (alpha - beta*i) applied to the mass term."""

    alpha: float = 1.0
    beta: float = 0.0


#: The physical operator of the problem being solved.
TRUE_SHIFT = HelmholtzShift(1.0, 0.0)
#: The damped operator used inside the multigrid preconditioner.
PRECONDITIONER_SHIFT = HelmholtzShift(1.0, 0.5)


@dataclass(frozen=True)
class SlownessModel:
    """Squared slowness, attenuation mask and frequency of one problem.

    ``kappa_sq`` is the squared slowness per node (corpus preparation
    normalises it to [0.25, 1]), ``gamma`` the attenuation fraction in
    [0, 1] including the absorbing boundary layer, ``omega`` the angular
    frequency and ``h`` the grid spacing.
    """

    kappa_sq: np.ndarray
    gamma: np.ndarray
    omega: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "kappa_sq", _frozen(self.kappa_sq, np.float64))
        object.__setattr__(self, "gamma", _frozen(self.gamma, np.float64))
        if self.kappa_sq.ndim != 2 or self.kappa_sq.shape != self.gamma.shape:
            raise DimensionError(
                f"kappa_sq {self.kappa_sq.shape} and gamma {self.gamma.shape} "
                "must be identical 2D grids"
            )
        if not np.all(np.isfinite(self.kappa_sq)) or np.any(self.kappa_sq <= 0):
            raise ConfigurationError("kappa_sq must be finite and positive")
        if np.any(self.gamma < -1e-12) or np.any(self.gamma > 1 + 1e-12):
            raise ConfigurationError("gamma must lie in [0, 1]")

    @property
    def nx(self) -> int:
        return self.kappa_sq.shape[0]

    @property
    def ny(self) -> int:
        return self.kappa_sq.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.kappa_sq.shape

    def resolution_ratio(self) -> float:
        """omega * max(kappa) * h; at most PPW_FACTOR for a well-resolved grid."""
        return float(self.omega * np.sqrt(self.kappa_sq.max()) * self.h)


def wavenumber_for_grid(n: int, kappa_max: float) -> float:
    """Largest angular frequency resolved by n nodes at ten points per wavelength.

    Returns ``omega = PPW_FACTOR / (kappa_max * h)`` with ``h = 1/(n-1)``, so
    ``omega * kappa_max * h`` meets the resolution bound with equality.
    """
    if n < 2:
        raise ConfigurationError(f"need at least 2 nodes, got {n}")
    if kappa_max <= 0:
        raise ConfigurationError(f"kappa_max must be positive, got {kappa_max}")
    h = 1.0 / (n - 1)
    return PPW_FACTOR / (kappa_max * h)


def build_abl(nx: int, ny: int, layer_width: int, gamma0: float) -> np.ndarray:
    """Absorbing-boundary-layer attenuation mask.

    Equal to ``gamma0`` in the interior and ramping quadratically to 1 at the
    boundary nodes: ``gamma0 + (1-gamma0) * ((layer_width-d)/layer_width)**2``
    for nodes at distance ``d < layer_width`` from the nearest boundary.
    """
    if layer_width < 1:
        raise ConfigurationError(f"layer_width must be >= 1, got {layer_width}")
    if 2 * layer_width >= min(nx, ny):
        raise DimensionError(
            f"absorbing layer of width {layer_width} does not fit a "
            f"{nx}x{ny} grid"
        )
    if not 0.0 <= gamma0 <= 0.1:
        raise ConfigurationError(f"gamma0 must lie in [0, 0.1], got {gamma0}")
    ix = np.arange(nx)
    iy = np.arange(ny)
    dist = np.minimum.outer(np.minimum(ix, nx - 1 - ix), np.minimum(iy, ny - 1 - iy))
    ramp = np.clip((layer_width - dist) / layer_width, 0.0, None)
    return gamma0 + (1.0 - gamma0) * ramp**2


def default_layer_width(n_ext: int) -> int:
    """Absorbing-layer width in nodes: 16 at external size 128, scaled with n."""
    return max(2, round(16 * n_ext / 128))


def slowness_model(
    kappa_sq: np.ndarray,
    gamma0: float = 0.01,
    layer_width: int | None = None,
    omega: float | None = None,
) -> SlownessModel:
    """Assemble a SlownessModel with an ABL mask and a ten-ppw frequency."""
    kappa_sq = np.asarray(kappa_sq, dtype=np.float64)
    nx, ny = kappa_sq.shape
    n_long = max(nx, ny)
    if layer_width is None:
        layer_width = default_layer_width(n_long - 1)
    gamma = build_abl(nx, ny, layer_width, gamma0)
    if omega is None:
        omega = wavenumber_for_grid(n_long, float(np.sqrt(kappa_sq.max())))
    model = SlownessModel(kappa_sq, gamma, omega, grid_spacing(nx, ny))
    if model.resolution_ratio() > PPW_FACTOR * (1 + 1e-9):
        raise ConfigurationError(
            f"omega*kappa*h = {model.resolution_ratio():.4f} exceeds the "
            f"ten-points-per-wavelength bound {PPW_FACTOR}"
        )
    return model


def mass_coefficient(model: SlownessModel, shift: HelmholtzShift) -> np.ndarray:
    """Complex per-node factor c with A = -laplacian - c * I."""
    return model.omega**2 * model.kappa_sq * (shift.alpha - 1j * (shift.beta + model.gamma))


def neg_laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """5-point negative Laplacian with zero padding outside the grid."""
    out = 4.0 * u
    out[:-1, :] -= u[1:, :]
    out[1:, :] -= u[:-1, :]
    out[:, :-1] -= u[:, 1:]
    out[:, 1:] -= u[:, :-1]
    out /= h * h
    return out


def apply_helmholtz_array(
    u: np.ndarray, model: SlownessModel, shift: HelmholtzShift = TRUE_SHIFT
) -> np.ndarray:
    """A @ u on raw arrays, A = -laplacian - omega^2 kappa^2 (alpha - (beta+gamma) i)."""
    if u.shape != model.shape:
        raise DimensionError(f"field {u.shape} does not match model {model.shape}")
    return neg_laplacian(np.asarray(u, dtype=np.complex128), model.h) - mass_coefficient(
        model, shift
    ) * u


def apply_helmholtz(
    u: ComplexField, model: SlownessModel, shift: HelmholtzShift = TRUE_SHIFT
) -> ComplexField:
    """Apply the (possibly shifted) discrete Helmholtz operator to a field."""
    if u.h != model.h:
        raise DimensionError(f"field spacing {u.h} does not match model spacing {model.h}")
    return ComplexField(apply_helmholtz_array(u.data, model, shift), u.h)


def stencil_diagonal(model: SlownessModel, shift: HelmholtzShift) -> np.ndarray:
    """Diagonal of the operator matrix (used by Jacobi relaxation)."""
    return 4.0 / model.h**2 - mass_coefficient(model, shift)
