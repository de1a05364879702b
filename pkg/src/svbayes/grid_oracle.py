"""Brute-force 2D posterior evaluation over (mu, log variance).

The unnormalized log posterior is evaluated on a rectangular grid,
stabilized by subtracting its maximum, exponentiated and normalized to unit
mass (rectangle rule).  Moments, MAP location and the correlation
coefficient of the discrete density serve as the reference against which
stochastic fits are judged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import Dataset, ModelKind, log_pdf
from .engine import FitResult
from .posterior import PriorSpec


class GridUnderflowError(RuntimeError):
    """Every grid cell carried zero mass; widen or densify the grid."""


DEFAULT_MU_RANGE = (-1.0, 3.0)
DEFAULT_LOGVAR_RANGE = (float(np.log(0.5)), float(np.log(16.0)))
DEFAULT_RESOLUTION = 201


@dataclass(frozen=True)
class GridSpec:
    """Axis ranges and node counts for the evaluation grid."""

    mu_range: tuple[float, float] = DEFAULT_MU_RANGE
    logvar_range: tuple[float, float] = DEFAULT_LOGVAR_RANGE
    resolution: int | tuple[int, int] = DEFAULT_RESOLUTION
    include_prior: bool = True

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("mu_range", self.mu_range),
            ("logvar_range", self.logvar_range),
        ):
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi, got ({lo}, {hi})")
        n_mu, n_logvar = self.axis_counts
        if n_mu < 2 or n_logvar < 2:
            raise ValueError("resolution must be >= 2 nodes per axis")

    @property
    def axis_counts(self) -> tuple[int, int]:
        r = self.resolution
        return (int(r), int(r)) if isinstance(r, int) else (int(r[0]), int(r[1]))


@dataclass(frozen=True)
class GridResult:
    """Normalized posterior mass on the grid plus its summary statistics."""

    mass: np.ndarray = field(repr=False)  # shape (n_mu, n_logvar)
    mu_axis: np.ndarray = field(repr=False)
    logvar_axis: np.ndarray = field(repr=False)
    means: np.ndarray  # [mean mu, mean logvar]
    variances: np.ndarray
    map_point: np.ndarray
    rho: float

    def summary_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "map": self.map_point.tolist(),
            "rho": self.rho,
        }

    def mass_rows(self):
        """Iterate (mu, logvar, mass) triples in row-major order."""
        for i, mu in enumerate(self.mu_axis):
            for j, lv in enumerate(self.logvar_axis):
                yield float(mu), float(lv), float(self.mass[i, j])


def normalize_log_density(log_density: np.ndarray) -> np.ndarray:
    """Max-stabilized exponentiation and normalization to unit mass.

    Invariant under adding any constant to all entries.  Individual cells
    may carry -inf (zero mass); a grid whose peak is not finite has no mass
    anywhere and raises.
    """
    peak = np.max(log_density)
    if not np.isfinite(peak):
        raise GridUnderflowError(
            "the log posterior has no finite peak on the grid; "
            "widen the ranges or increase the resolution"
        )
    mass = np.exp(log_density - peak)
    return mass / mass.sum()


def grid_posterior(
    model: ModelKind,
    data: Dataset,
    prior: PriorSpec | None,
    spec: GridSpec,
) -> GridResult:
    """Evaluate and normalize the posterior over the grid.

    With `include_prior` false (or no prior given) the result is the
    normalized likelihood alone.
    """
    n_mu, n_logvar = spec.axis_counts
    mu_axis = np.linspace(*spec.mu_range, n_mu)
    logvar_axis = np.linspace(*spec.logvar_range, n_logvar)

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        mu = mu_axis[:, None, None]
        beta = np.exp(-logvar_axis)[None, :, None]
        log_post = log_pdf(model, data.values[None, None, :], mu, beta).sum(axis=2)

        if spec.include_prior and prior is not None:
            pts = np.stack(np.meshgrid(mu_axis, logvar_axis, indexing="ij"), axis=-1)
            log_post = log_post + prior.log_pdf(pts)

        mass = normalize_log_density(log_post)

    mu_marginal = mass.sum(axis=1)
    lv_marginal = mass.sum(axis=0)
    mean_mu = float(mu_marginal @ mu_axis)
    mean_lv = float(lv_marginal @ logvar_axis)
    var_mu = float(mu_marginal @ (mu_axis - mean_mu) ** 2)
    var_lv = float(lv_marginal @ (logvar_axis - mean_lv) ** 2)
    cov = float(
        ((mu_axis - mean_mu)[:, None] * (logvar_axis - mean_lv)[None, :] * mass).sum()
    )
    rho = cov / np.sqrt(var_mu * var_lv) if var_mu > 0.0 and var_lv > 0.0 else 0.0

    i_map, j_map = np.unravel_index(np.argmax(mass), mass.shape)
    return GridResult(
        mass=mass,
        mu_axis=mu_axis,
        logvar_axis=logvar_axis,
        means=np.array([mean_mu, mean_lv]),
        variances=np.array([var_mu, var_lv]),
        map_point=np.array([mu_axis[i_map], logvar_axis[j_map]]),
        rho=float(rho),
    )


@dataclass(frozen=True)
class ComparisonReport:
    """Moment-level agreement between a grid reference and a fitted posterior."""

    mean_abs_diff: np.ndarray
    variance_ratio: np.ndarray
    rho_grid: float
    rho_fit: float
    rho_abs_diff: float
    correlation_signs_agree: bool

    def to_json_dict(self) -> dict:
        return {
            "mean_abs_diff": self.mean_abs_diff.tolist(),
            "variance_ratio": self.variance_ratio.tolist(),
            "rho_grid": self.rho_grid,
            "rho_fit": self.rho_fit,
            "rho_abs_diff": self.rho_abs_diff,
            "correlation_signs_agree": self.correlation_signs_agree,
        }

    def table(self) -> str:
        names = ["mu", "log_var"]
        lines = [f"{'parameter':<10}{'|mean diff|':>14}{'var ratio':>12}"]
        for i, name in enumerate(names[: len(self.mean_abs_diff)]):
            lines.append(
                f"{name:<10}{self.mean_abs_diff[i]:>14.6f}{self.variance_ratio[i]:>12.4f}"
            )
        lines.append(
            f"rho: grid={self.rho_grid:.4f} fit={self.rho_fit:.4f} "
            f"|diff|={self.rho_abs_diff:.4f} signs_agree={self.correlation_signs_agree}"
        )
        return "\n".join(lines)


def compare_moments(
    grid_means,
    grid_variances,
    grid_rho: float,
    fit_means,
    fit_variances,
    fit_rho: float,
) -> ComparisonReport:
    grid_means = np.asarray(grid_means, dtype=float)
    fit_means = np.asarray(fit_means, dtype=float)
    if grid_means.shape != fit_means.shape:
        raise ValueError(
            f"parameter count mismatch: {grid_means.shape} vs {fit_means.shape}"
        )
    grid_variances = np.asarray(grid_variances, dtype=float)
    fit_variances = np.asarray(fit_variances, dtype=float)
    return ComparisonReport(
        mean_abs_diff=np.abs(grid_means - fit_means),
        variance_ratio=fit_variances / grid_variances,
        rho_grid=float(grid_rho),
        rho_fit=float(fit_rho),
        rho_abs_diff=abs(float(grid_rho) - float(fit_rho)),
        correlation_signs_agree=bool(np.sign(grid_rho) == np.sign(fit_rho)),
    )


def compare(grid: GridResult, fit: FitResult) -> ComparisonReport:
    """Compare grid moments with a fitted posterior's moments."""
    return compare_moments(
        grid.means,
        grid.variances,
        grid.rho,
        fit.posterior.mean,
        np.diag(fit.posterior.cov),
        fit.posterior.rho,
    )
