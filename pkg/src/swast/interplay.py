"""Polynomial fitting experiments: pruning under noise and the I(D, D_hat) sweep.

Both experiments work on Runge's function 1/(1+25x^2) over [-1, 1]. The
selection-difficulty value I(D, D_hat) = sup over coefficients of
|L(theta) - L_hat(theta)| / L(theta) is approximated from below by a finite
candidate search, so reported values are lower-bound estimates.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidInputError
from .pruning import magnitude_prune

DENOM_FLOOR = 1e-12


@dataclass
class InterplaySample:
    x: float
    y: float
    is_noisy: bool = False


@dataclass
class PolynomialFit:
    """coefficients[i] multiplies x**i."""

    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (self.degree + 1,):
            raise InvalidInputError("need degree + 1 coefficients")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(x, self.coefficients)


def runge(x):
    """Runge's function 1 / (1 + 25 x^2)."""
    x = np.asarray(x, dtype=np.float64)
    out = 1.0 / (1.0 + 25.0 * x * x)
    return out if out.ndim else float(out)


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array([s.x for s in samples], dtype=np.float64)
    ys = np.array([s.y for s in samples], dtype=np.float64)
    return xs, ys


def sample_interplay(
    n_points: int, noisy_fraction: float, noise_std: float, rng: np.random.Generator
) -> list[InterplaySample]:
    """Equally spaced samples of runge on [-1,1], a chosen fraction with noisy y.

    round(noisy_fraction * n_points) samples, picked uniformly without
    replacement, get additive Gaussian noise on y and their flag set.
    """
    if n_points < 2:
        raise InvalidInputError("need at least two points")
    xs = np.linspace(-1.0, 1.0, n_points)
    ys = runge(xs)
    n_noisy = int(math.floor(noisy_fraction * n_points + 0.5))
    flags = np.zeros(n_points, dtype=bool)
    if n_noisy:
        chosen = rng.choice(n_points, size=n_noisy, replace=False)
        flags[chosen] = True
        ys = ys.copy()
        ys[chosen] += rng.normal(0.0, noise_std, size=n_noisy)
    return [InterplaySample(float(x), float(y), bool(f)) for x, y, f in zip(xs, ys, flags)]


def polyfit_ls(samples, degree: int) -> PolynomialFit:
    """Least-squares polynomial fit; minimum-norm coefficients when rank-deficient."""
    if len(samples) == 0:
        raise InvalidInputError("cannot fit an empty sample set")
    xs, ys = _as_arrays(samples)
    V = np.vander(xs, degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(V, ys, rcond=None)
    return PolynomialFit(degree, coeffs)


def poly_mse(fit: PolynomialFit, samples) -> float:
    """Mean squared residual of the fit over the given samples."""
    if len(samples) == 0:
        raise InvalidInputError("poly_mse needs at least one sample")
    xs, ys = _as_arrays(samples)
    return float(np.mean((fit(xs) - ys) ** 2))


def _grid_samples(grid_points: int) -> list[InterplaySample]:
    xs = np.linspace(-1.0, 1.0, grid_points)
    return [InterplaySample(float(x), float(runge(x))) for x in xs]


def prune_experiment(
    rng: np.random.Generator,
    n_points: int = 10,
    noisy_fraction: float = 0.5,
    noise_std: float = 0.1,
    degree: int = 10,
    k_zero: int = 3,
    grid_points: int = 200,
) -> dict:
    """Fit, prune coefficients, and score against the true function.

    Two branches share one sampled dataset: (a) fit on all points, (b) fit on
    the clean subset only. Both fits get their k_zero smallest-magnitude
    coefficients zeroed; losses are MSE against runge on a uniform grid.
    """
    samples = sample_interplay(n_points, noisy_fraction, noise_std, rng)
    clean = [s for s in samples if not s.is_noisy]
    if not clean:
        raise InvalidInputError("no clean samples to form the coreset branch")
    fit_noisy = polyfit_ls(samples, degree)
    fit_clean = polyfit_ls(clean, degree)
    pruned_noisy = PolynomialFit(degree, magnitude_prune(fit_noisy.coefficients, k_zero))
    pruned_clean = PolynomialFit(degree, magnitude_prune(fit_clean.coefficients, k_zero))
    grid = _grid_samples(grid_points)
    grid_x = np.array([s.x for s in grid])
    return {
        "loss_pruned_noisyfit": poly_mse(pruned_noisy, grid),
        "loss_pruned_cleanfit": poly_mse(pruned_clean, grid),
        "loss_unpruned_noisyfit": poly_mse(fit_noisy, grid),
        "loss_unpruned_cleanfit": poly_mse(fit_clean, grid),
        "samples": samples,
        "curves": {
            "x": grid_x,
            "true": runge(grid_x),
            "pruned_noisyfit": pruned_noisy(grid_x),
            "pruned_cleanfit": pruned_clean(grid_x),
            "unpruned_noisyfit": fit_noisy(grid_x),
            "unpruned_cleanfit": fit_clean(grid_x),
        },
    }


def _mse_and_grad(theta: np.ndarray, V: np.ndarray, y: np.ndarray):
    resid = V @ theta - y
    loss = float(resid @ resid) / y.size
    grad = 2.0 * (V.T @ resid) / y.size
    return loss, grad


def _ratio(loss_d: float, loss_hat: float) -> tuple[float, bool]:
    floored = loss_d < DENOM_FLOOR
    return abs(loss_d - loss_hat) / max(loss_d, DENOM_FLOOR), floored


def estimate_idd(
    D,
    D_hat,
    degree: int,
    restarts: int = 8,
    steps: int = 200,
    seed: int = 0,
    events: list | None = None,
    use_test_grid: bool = False,
    grid_points: int = 100,
) -> float:
    """Lower-bound estimate of sup over theta of |L(theta) - L_hat(theta)| / L(theta).

    L and L_hat are MSE over D and D_hat. Candidates: the least-squares fit on
    each dataset plus multi-start adaptive-step gradient ascent on the ratio.
    Denominators below DENOM_FLOOR are floored and flagged through events.
    Restart starting points are drawn sequentially from one seeded generator,
    so a larger restart count evaluates a superset of candidates.

    use_test_grid switches to the point estimate
    |MSE_grid(fit_D) - MSE_grid(fit_D_hat)| / MSE_grid(fit_D) where both fits
    are evaluated against the true function on a uniform grid.
    """
    if len(D) == 0 or len(D_hat) == 0:
        raise InvalidInputError("both datasets must be non-empty")

    fit_d = polyfit_ls(D, degree)
    fit_hat = polyfit_ls(D_hat, degree)

    if use_test_grid:
        grid = _grid_samples(grid_points)
        loss_d = poly_mse(fit_d, grid)
        loss_hat = poly_mse(fit_hat, grid)
        value, floored = _ratio(loss_d, loss_hat)
        if floored and events is not None:
            events.append({"kind": "denominator_floor", "where": "test_grid"})
        return value

    xs_d, ys_d = _as_arrays(D)
    xs_h, ys_h = _as_arrays(D_hat)
    Vd = np.vander(xs_d, degree + 1, increasing=True)
    Vh = np.vander(xs_h, degree + 1, increasing=True)

    def ratio_at(theta: np.ndarray) -> tuple[float, bool]:
        ld, _ = _mse_and_grad(theta, Vd, ys_d)
        lh, _ = _mse_and_grad(theta, Vh, ys_h)
        return _ratio(ld, lh)

    def ascend(theta: np.ndarray) -> tuple[float, bool]:
        value, floored = ratio_at(theta)
        step = 0.1
        for _ in range(steps):
            ld, gd = _mse_and_grad(theta, Vd, ys_d)
            lh, gh = _mse_and_grad(theta, Vh, ys_h)
            denom = max(ld, DENOM_FLOOR)
            gap = ld - lh
            sign = 1.0 if gap >= 0.0 else -1.0
            # d/dtheta of |gap|/denom, treating the floor as constant
            grad = sign * (gd - gh) / denom
            if ld >= DENOM_FLOOR:
                grad -= abs(gap) * gd / (denom * denom)
            norm = float(np.linalg.norm(grad))
            if norm == 0.0 or not np.isfinite(norm):
                break
            candidate = theta + step * grad / norm
            cand_value, cand_floored = ratio_at(candidate)
            if cand_value > value:
                theta = candidate
                value, floored = cand_value, cand_floored
                step *= 1.5
            else:
                step *= 0.5
                if step < 1e-12:
                    break
        return value, floored

    candidates = [np.asarray(fit_d.coefficients), np.asarray(fit_hat.coefficients)]
    rng = np.random.default_rng(seed)
    starts = [rng.normal(0.0, 1.0, size=degree + 1) for _ in range(restarts)]

    best, best_floored = 0.0, False
    for theta in candidates:
        value, floored = ratio_at(theta)
        if value > best:
            best, best_floored = value, floored
    for theta in starts:
        value, floored = ascend(theta.copy())
        if value > best:
            best, best_floored = value, floored
    if best_floored and events is not None:
        events.append({"kind": "denominator_floor", "where": "ascent"})
    return best


@dataclass
class IddConfig:
    """Sweep configuration mirroring the small polynomial study."""

    n_noisy: int = 50
    n_clean: int = 20
    noise_std: float = 0.1
    degrees: tuple = tuple(range(1, 21))
    restarts: int = 8
    steps: int = 200
    use_test_grid: bool = False
    grid_points: int = 100
    seed: int = 0


def idd_sweep(config: IddConfig, rng: np.random.Generator, events: list | None = None) -> list:
    """(degree, I) rows for one seeded dataset pair across the configured degrees.

    The full set D holds n_noisy + n_clean equally spaced points with noise on
    a random n_noisy of them; the coreset D_hat is the clean remainder.
    """
    total = config.n_noisy + config.n_clean
    samples = sample_interplay(
        total, config.n_noisy / total, config.noise_std, rng
    )
    # the rounding in sample_interplay keeps the split exact for these counts
    d_hat = [s for s in samples if not s.is_noisy]
    if not d_hat:
        raise InvalidInputError("sweep needs at least one clean sample")
    rows = []
    for k in config.degrees:
        value = estimate_idd(
            samples,
            d_hat,
            degree=int(k),
            restarts=config.restarts,
            steps=config.steps,
            seed=config.seed + int(k),
            events=events,
        )
        rows.append((int(k), value))
    return rows
