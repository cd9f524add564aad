"""Statistic families over cell counts and their Poissonized moment summaries.

Each supported statistic is a sum of per-cell kernels applied to the cell
counts: power-divergence statistics (parameter d > -1, with d = 1 the
quadratic cell-balance statistic, d = 0 the log-likelihood statistic and
d = -1/2 the squared-root-difference statistic), exact/at-least count
statistics, the collision total, and the unfilled-cell count for random
per-cell demand levels.

A moment summary collects the quantities that drive the corrected normal
tail approximation: the Poissonized mean, the regression coefficient of
the statistic on the total count, raw and regression-adjusted variances,
and third/fourth moment sums of the adjusted per-cell kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EvaluationError,
    DegenerateVarianceError,
    ModelValidationError,
    UnsupportedCombinationError,
)
from .model import MultinomialModel, classify_regime
from .poisson import expect_fn, poisson_pmf

__all__ = [
    "Kernel",
    "LevelDistribution",
    "MomentSummary",
    "kernel_mean_fn",
    "chi_square_centered_fn",
    "statistic_value",
    "moment_summary",
    "g_second_moment_aggregates",
    "level_tau",
    "tau_sparse_approx",
    "unfilled_sparse_expansion",
    "parse_kernel_spec",
]

_FRAMES = ("canonical", "power", "bare", "divergence")

# Cross-check tolerance used by the auto method when an exact closed form
# exists alongside the series path.
_AUTO_XCHECK_RTOL = 1e-8

# Divergence parameters within this distance of zero collapse to the
# logarithmic limit kernel.
_D_ZERO_SNAP = 1e-8


@dataclass(frozen=True)
class LevelDistribution:
    """Distribution of the per-cell demand level: pairs (level, probability).

    Levels are nonnegative integers; a cell with count below its drawn
    level counts as unfilled.  Some mass must sit on positive levels,
    otherwise no cell could ever be unfilled.
    """

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.pmf:
            raise ModelValidationError("level distribution must not be empty")
        levels = [l for l, _ in self.pmf]
        probs = [p for _, p in self.pmf]
        if any(l < 0 or l != int(l) for l in levels):
            raise ModelValidationError("levels must be nonnegative integers")
        if len(set(levels)) != len(levels):
            raise ModelValidationError("levels must be distinct")
        if any(not (p > 0.0) or not math.isfinite(p) for p in probs):
            raise ModelValidationError("level probabilities must be positive and finite")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise ModelValidationError(
                f"level probabilities must sum to 1 within 1e-12, got {total!r}"
            )
        pairs = tuple(
            sorted((int(l), float(p) / total) for l, p in zip(levels, probs))
        )
        if pairs[-1][0] == 0:
            raise ModelValidationError(
                "level distribution must put some mass on positive levels"
            )
        object.__setattr__(self, "pmf", pairs)

    @property
    def zero_mass(self) -> float:
        """P{level = 0}: the fraction of cells that can never be unfilled."""
        return self.pmf[0][1] if self.pmf[0][0] == 0 else 0.0

    @property
    def max_level(self) -> int:
        return self.pmf[-1][0]

    @property
    def min_positive_level(self) -> int:
        for l, _ in self.pmf:
            if l > 0:
                return l
        raise AssertionError("validated distribution has positive mass")

    def prob(self, level: int) -> float:
        for l, p in self.pmf:
            if l == level:
                return p
        return 0.0

    def survival(self, x: float) -> float:
        """P{level > x}."""
        return math.fsum(p for l, p in self.pmf if l > x)

    def lead_coefficient(self) -> float:
        """P{level = G} / G! for G the smallest positive level."""
        g = self.min_positive_level
        return self.prob(g) / math.factorial(g)

    @staticmethod
    def constant(level: int) -> "LevelDistribution":
        return LevelDistribution(((int(level), 1.0),))

    @staticmethod
    def from_csv(text: str) -> "LevelDistribution":
        pairs = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ModelValidationError(
                    f"level file lines must be 'level,probability', got {line!r}"
                )
            pairs.append((int(parts[0]), float(parts[1])))
        return LevelDistribution(tuple(pairs))

    def to_csv(self) -> str:
        return "\n".join(f"{l},{p:.17g}" for l, p in self.pmf) + "\n"

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        levels = np.array([l for l, _ in self.pmf])
        probs = np.array([p for _, p in self.pmf])
        return rng.choice(levels, size=size, p=probs)


@dataclass(frozen=True)
class Kernel:
    """A statistic family tag plus its parameters."""

    family: str
    d: float | None = None
    r: int | None = None
    levels: LevelDistribution | None = None

    def __post_init__(self):
        if self.family == "pds":
            if self.d is None or not math.isfinite(self.d) or self.d <= -1.0:
                raise ModelValidationError(
                    f"power-divergence parameter must be a finite real > -1, got {self.d}"
                )
            # The d -> 0 limit is a separate code path (logarithmic kernel);
            # anything this close to zero would hit catastrophic cancellation
            # in the generic power form, so snap it to the limit exactly.
            if abs(self.d) < _D_ZERO_SNAP:
                object.__setattr__(self, "d", 0.0)
        elif self.family == "count_exact":
            if self.r is None or self.r < 0:
                raise ModelValidationError("count_exact requires an integer r >= 0")
        elif self.family == "count_at_least":
            if self.r is None or self.r < 1:
                raise ModelValidationError("count_at_least requires an integer r >= 1")
        elif self.family == "collisions":
            pass
        elif self.family == "unfilled":
            if self.levels is None:
                raise ModelValidationError("unfilled requires a level distribution")
        else:
            raise ModelValidationError(f"unknown kernel family {self.family!r}")

    @staticmethod
    def pds(d: float) -> "Kernel":
        """Power-divergence family; d = 1, 0, -1/2 are the classical cases."""
        return Kernel("pds", d=float(d))

    @staticmethod
    def count_exact(r: int) -> "Kernel":
        return Kernel("count_exact", r=int(r))

    @staticmethod
    def count_at_least(r: int) -> "Kernel":
        return Kernel("count_at_least", r=int(r))

    @staticmethod
    def collisions() -> "Kernel":
        return Kernel("collisions")

    @staticmethod
    def unfilled(levels: LevelDistribution) -> "Kernel":
        return Kernel("unfilled", levels=levels)

    @property
    def is_random(self) -> bool:
        """True when the per-cell kernel has its own randomness given the count."""
        return self.family == "unfilled"

    def describe(self) -> str:
        if self.family == "pds":
            if self.d == 1.0:
                return "pds(1) [quadratic cell-balance]"
            if self.d == 0.0:
                return "pds(0) [log-likelihood]"
            if self.d == -0.5:
                return "pds(-1/2) [root-difference]"
            return f"pds({self.d:g})"
        if self.family == "count_exact":
            return f"cells with count exactly {self.r}"
        if self.family == "count_at_least":
            return f"cells with count at least {self.r}"
        if self.family == "collisions":
            return "collision total"
        return "unfilled cells"

    def to_spec(self) -> dict:
        spec: dict = {"family": self.family}
        if self.d is not None:
            spec["d"] = self.d
        if self.r is not None:
            spec["r"] = self.r
        if self.levels is not None:
            spec["levels"] = [[l, p] for l, p in self.levels.pmf]
        return spec

    @staticmethod
    def from_spec(spec: dict) -> "Kernel":
        spec = dict(spec)
        family = spec.pop("family")
        levels = spec.pop("levels", None)
        if levels is not None:
            levels = LevelDistribution(tuple((int(l), float(p)) for l, p in levels))
        return Kernel(family, levels=levels, **spec)


def parse_kernel_spec(text: str, load_levels=None) -> Kernel:
    """Parse a compact kernel spec string.

    Forms: ``pds:<d>``, ``count:<r>``, ``atleast:<r>``, ``collisions``,
    ``unfilled:<levels-file>``.  The caller supplies load_levels to turn
    the file reference into a LevelDistribution.
    """
    if text == "collisions":
        return Kernel.collisions()
    head, sep, arg = text.partition(":")
    if not sep:
        raise ModelValidationError(f"malformed kernel spec {text!r}")
    try:
        if head == "pds":
            return Kernel.pds(float(arg))
        if head == "count":
            return Kernel.count_exact(int(arg))
        if head == "atleast":
            return Kernel.count_at_least(int(arg))
    except ValueError:
        raise ModelValidationError(f"malformed kernel spec {text!r}") from None
    if head == "unfilled":
        if load_levels is None:
            raise ModelValidationError(
                "unfilled kernel spec needs a level-file loader"
            )
        return Kernel.unfilled(load_levels(arg))
    raise ModelValidationError(f"unknown kernel spec {text!r}")


# -- per-cell kernel functions ----------------------------------------------

def kernel_mean_fn(kernel: Kernel, p: float, n: int):
    """The per-cell kernel as a function of the cell count.

    For the power-divergence family this is the plain power form
    np (x / np)^(1+d) (so d = 1 gives x^2 / np, uncentered; the centered
    quadratic variant is a separate function).  For count kernels it is
    the indicator; for collisions, (x - 1)^+.  For the unfilled family
    the returned function is the conditional unfilled probability
    P{level > x}, since the kernel itself is a coin flip given the count.
    """
    rate = n * p
    if kernel.family == "pds":
        return _pds_fn(kernel.d, rate, bare=False)
    if kernel.family == "count_exact":
        r = kernel.r
        return lambda x: 1.0 if x == r else 0.0
    if kernel.family == "count_at_least":
        r = kernel.r
        return lambda x: 1.0 if x >= r else 0.0
    if kernel.family == "collisions":
        return lambda x: float(max(x - 1, 0))
    return kernel.levels.survival


def chi_square_centered_fn(p: float, n: int):
    """Centered quadratic cell kernel (x - np)^2 / np."""
    rate = n * p
    return lambda x: (x - rate) ** 2 / rate


def _pds_fn(d: float, rate: float, bare: bool):
    if d == 0.0:
        if bare:
            return lambda x: 2.0 * x * math.log(x) if x > 0 else 0.0
        return lambda x: 2.0 * x * math.log(x / rate) if x > 0 else 0.0
    power = 1.0 + d
    scale = 1.0 if bare else rate**-d
    if d == 1.0:
        return lambda x: scale * x * x
    return lambda x: scale * x**power


# -- statistic evaluation on count vectors ----------------------------------

def statistic_value(
    kernel: Kernel,
    model: MultinomialModel,
    counts: np.ndarray,
    frame: str = "canonical",
    level_draws: np.ndarray | None = None,
) -> float:
    """Value of the statistic on one vector of cell counts.

    The frame only matters for the power-divergence family, where the
    power-sum, bare-power, and divergence forms differ by exact affine
    maps on the full-count surface.  The unfilled statistic needs the
    drawn per-cell levels, since it is not a function of counts alone.
    """
    counts = np.asarray(counts)
    if kernel.family == "count_exact":
        return float(np.count_nonzero(counts == kernel.r))
    if kernel.family == "count_at_least":
        return float(np.count_nonzero(counts >= kernel.r))
    if kernel.family == "collisions":
        return float(np.maximum(counts - 1, 0).sum())
    if kernel.family == "unfilled":
        if level_draws is None:
            raise EvaluationError(
                "unfilled statistic needs drawn per-cell levels; it is not a "
                "function of the counts alone"
            )
        return float(np.count_nonzero(counts < level_draws))
    return _pds_statistic(kernel.d, model, counts.astype(float), _check_frame(frame))


def _check_frame(frame: str) -> str:
    if frame not in _FRAMES:
        raise ModelValidationError(f"unknown frame {frame!r}; expected one of {_FRAMES}")
    return frame


def _pds_statistic(d: float, model: MultinomialModel, c: np.ndarray, frame: str) -> float:
    rates = model.rates
    if frame == "canonical":
        frame = "centered" if d == 1.0 else "power"
    if frame == "divergence":
        if d == 1.0:
            frame = "centered"
        elif d == 0.0:
            frame = "power"
        else:
            a = 2.0 / (d * (d + 1.0))
            return a * _pds_power_sum(d, rates, c) - a * model.n
    if frame == "centered":
        return float((((c - rates) ** 2) / rates).sum())
    if frame == "bare":
        if d == 0.0:
            pos = c > 0
            return float(2.0 * (c[pos] * np.log(c[pos])).sum())
        return float((c ** (1.0 + d)).sum())
    return _pds_power_sum(d, rates, c)


def _pds_power_sum(d: float, rates: np.ndarray, c: np.ndarray) -> float:
    if d == 0.0:
        pos = c > 0
        return float(2.0 * (c[pos] * np.log(c[pos] / rates[pos])).sum())
    return float((rates**-d * c ** (1.0 + d)).sum())


# -- moment summaries --------------------------------------------------------

@dataclass(frozen=True)
class MomentSummary:
    """Poissonized moment summary of a statistic.

    mean     - expected statistic under independent Poisson cell counts
    tau      - regression coefficient of the statistic on the total count
    raw_var  - variance before removing the total-count regression
    var      - raw_var - n * tau^2, the variance that standardizes tails
    beta3    - sum over cells of E g^3 for the adjusted kernels g
    beta4    - sum over cells of E g^4
    frame    - which kernel form these numbers describe
    approximate - True for leading-order closed forms (small-rate expansions)
    """

    mean: float
    tau: float
    raw_var: float
    var: float
    beta3: float
    beta4: float
    frame: str = "canonical"
    approximate: bool = False

    def __post_init__(self):
        if not self.approximate and not (self.var > 0.0):
            raise DegenerateVarianceError(
                f"adjusted variance must be positive, got {self.var!r}"
            )

    @property
    def sigma(self) -> float:
        return math.sqrt(self.var)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "tau": self.tau,
            "raw_var": self.raw_var,
            "var": self.var,
            "beta3": self.beta3,
            "beta4": self.beta4,
            "frame": self.frame,
            "approximate": self.approximate,
        }


def _affine_summary(s: MomentSummary, n: int, a: float, alpha: float, beta_total: float,
                    frame: str) -> MomentSummary:
    # Per-cell map h' = a h + alpha x + const_m with sum of constants
    # beta_total; the adjusted kernels transform as g' = a g, so the
    # third/fourth sums pick up a^3 and a^4 and var scales by a^2.
    return MomentSummary(
        mean=a * s.mean + alpha * n + beta_total,
        tau=a * s.tau + alpha,
        raw_var=a * a * s.raw_var + 2.0 * a * alpha * n * s.tau + alpha * alpha * n,
        var=a * a * s.var,
        beta3=a**3 * s.beta3,
        beta4=a**4 * s.beta4,
        frame=frame,
        approximate=s.approximate,
    )


def _divergence_coeffs(d: float, n: int) -> tuple[float, float]:
    """(a, b) with divergence statistic = a * power_sum + b."""
    a = 2.0 / (d * (d + 1.0))
    return a, -a * n


def moment_summary(
    model: MultinomialModel,
    kernel: Kernel,
    method: str = "auto",
    frame: str = "canonical",
    tol: float = 1e-12,
) -> MomentSummary:
    """Moment summary for a statistic on a model.

    method: "series" sums every per-cell expectation directly (the
    authoritative path), "closed_form" uses exact or leading-order
    formulas where they exist, "auto" runs the series and cross-checks
    it against an exact closed form when one is available.

    frame (power-divergence only): "canonical" uses the centered
    quadratic kernel for d = 1 and the power sum otherwise; "power" and
    "bare" force the scaled/unscaled power sums; "divergence" the
    normalized divergence form.  Closed forms for the very sparse regime
    are leading-order expansions and come back flagged approximate.
    """
    _check_frame(frame)
    if kernel.family != "pds" and frame != "canonical":
        raise ModelValidationError(
            f"frame {frame!r} only applies to the power-divergence family"
        )
    if method == "series":
        return _series_summary(model, kernel, frame, tol)
    if method == "closed_form":
        return _closed_summary(model, kernel, frame, tol)
    if method != "auto":
        raise ModelValidationError(f"unknown method {method!r}")
    series = _series_summary(model, kernel, frame, tol)
    exact_closed = _exact_closed_summary(model, kernel, frame, tol)
    if exact_closed is not None:
        for name in ("mean", "tau", "raw_var", "var"):
            a = getattr(series, name)
            b = getattr(exact_closed, name)
            if abs(a - b) > _AUTO_XCHECK_RTOL * max(1.0, abs(a), abs(b)):
                raise EvaluationError(
                    f"series and closed-form summaries disagree on {name}: "
                    f"{a!r} vs {b!r}"
                )
    return series


# series path ---------------------------------------------------------------

def _summary_cell_fns(kernel: Kernel, rate: float, frame: str):
    """(value_fn, is_random) for the per-cell kernel in the given frame."""
    if kernel.family == "pds":
        d = kernel.d
        if frame == "canonical":
            variant = "centered" if d == 1.0 else "power"
        elif frame == "divergence":
            # handled by affine wrapper except the two coincident cases
            variant = "centered" if d == 1.0 else "power"
        else:
            variant = frame
        if variant == "centered":
            return (lambda x: (x - rate) ** 2 / rate), False
        return _pds_fn(d, rate, bare=(variant == "bare")), False
    if kernel.family == "unfilled":
        return kernel.levels.survival, True
    if kernel.family == "count_exact":
        r = kernel.r
        return (lambda x: 1.0 if x == r else 0.0), False
    if kernel.family == "count_at_least":
        r = kernel.r
        return (lambda x: 1.0 if x >= r else 0.0), False
    # collisions
    return (lambda x: float(max(x - 1, 0))), False


def _series_summary(model, kernel, frame, tol) -> MomentSummary:
    if kernel.family == "pds" and frame == "divergence" and kernel.d not in (0.0, 1.0):
        base = _series_summary(model, kernel, "power", tol)
        a, b = _divergence_coeffs(kernel.d, model.n)
        return _affine_summary(base, model.n, a, 0.0, b, "divergence")
    if kernel.family in ("count_at_least", "collisions") and (
        kernel.family == "collisions" or kernel.r == 1
    ):
        # Exact affine relations to the empty-cell count: one code path
        # for the three statistics tied together by it.
        base = _series_summary(model, Kernel.count_exact(0), "canonical", tol)
        if kernel.family == "collisions":
            return _affine_summary(base, model.n, 1.0, 1.0, -model.num_cells, "canonical")
        return _affine_summary(base, model.n, -1.0, 0.0, model.num_cells, "canonical")

    n = model.n
    rates, mults = model.rate_groups()
    eh = np.empty_like(rates)
    eh2 = np.empty_like(rates)
    cov = np.empty_like(rates)
    for i, lam in enumerate(rates):
        fn, is_random = _summary_cell_fns(kernel, lam, frame)
        eh[i] = expect_fn(fn, lam, tol)
        if is_random:
            eh2[i] = eh[i]  # kernel takes values 0/1
        else:
            eh2[i] = expect_fn(lambda x: fn(x) ** 2, lam, tol)
        cov[i] = expect_fn(lambda x: fn(x) * (x - lam), lam, tol)
    mean = float(mults @ eh)
    tau = float(mults @ cov) / n
    raw_var = float(mults @ (eh2 - eh**2))
    var = raw_var - n * tau * tau

    beta3 = 0.0
    beta4 = 0.0
    for i, lam in enumerate(rates):
        fn, is_random = _summary_cell_fns(kernel, lam, frame)
        center = eh[i]
        if is_random:
            g3 = expect_fn(_bernoulli_g_power(fn, center, tau, lam, 3), lam, tol)
            g4 = expect_fn(_bernoulli_g_power(fn, center, tau, lam, 4), lam, tol)
        else:
            g3 = expect_fn(_plain_g_power(fn, center, tau, lam, 3), lam, tol)
            g4 = expect_fn(_plain_g_power(fn, center, tau, lam, 4), lam, tol)
        beta3 += mults[i] * g3
        beta4 += mults[i] * g4
    return MomentSummary(
        mean=mean, tau=tau, raw_var=raw_var, var=var,
        beta3=beta3, beta4=beta4, frame=frame,
    )


def _plain_g_power(fn, center, tau, lam, power):
    def g_pow(x):
        return (fn(x) - center - tau * (x - lam)) ** power
    return g_pow


def _bernoulli_g_power(prob_fn, center, tau, lam, power):
    # Kernel is Bernoulli(prob_fn(x)) given count x; average the two
    # branches of (value - shift)^power.
    def g_pow(x):
        w = prob_fn(x)
        shift = center + tau * (x - lam)
        return w * (1.0 - shift) ** power + (1.0 - w) * (-shift) ** power
    return g_pow


def g_second_moment_aggregates(
    model: MultinomialModel,
    kernel: Kernel,
    summary: MomentSummary,
    tol: float = 1e-12,
) -> tuple[float, float]:
    """(sum over cells of (E g^2)^2, sum over cells of E g^2 (x - rate)).

    These feed the second correction coefficient.  They transform with
    the fourth and second powers of a scale factor, so affine-derived
    frames are handled by mapping the base aggregates.
    """
    if kernel.family == "pds" and summary.frame == "divergence" and kernel.d not in (0.0, 1.0):
        base = moment_summary(model, kernel, method="series", frame="power", tol=tol)
        s_sq, s_cross = g_second_moment_aggregates(model, kernel, base, tol)
        a, _ = _divergence_coeffs(kernel.d, model.n)
        return a**4 * s_sq, a**2 * s_cross
    if kernel.family in ("count_at_least", "collisions") and (
        kernel.family == "collisions" or kernel.r == 1
    ):
        base_kernel = Kernel.count_exact(0)
        base = moment_summary(model, base_kernel, method="series", tol=tol)
        return g_second_moment_aggregates(model, base_kernel, base, tol)

    tau = summary.tau
    rates, mults = model.rate_groups()
    s_sq = 0.0
    s_cross = 0.0
    for lam, mult in zip(rates, mults):
        fn, is_random = _summary_cell_fns(kernel, lam, summary.frame)
        center = expect_fn(fn, lam, tol)
        if is_random:
            g2 = _bernoulli_g_power(fn, center, tau, lam, 2)
        else:
            g2 = _plain_g_power(fn, center, tau, lam, 2)
        eg2 = expect_fn(g2, lam, tol)
        eg2x = expect_fn(lambda x: g2(x) * (x - lam), lam, tol)
        s_sq += mult * eg2 * eg2
        s_cross += mult * eg2x
    return s_sq, s_cross


# closed forms ---------------------------------------------------------------

def _closed_summary(model, kernel, frame, tol) -> MomentSummary:
    exact = _exact_closed_summary(model, kernel, frame, tol)
    if exact is not None:
        return exact
    if kernel.family == "pds":
        if classify_regime(model).very_sparse:
            return _very_sparse_closed(model, kernel.d, frame, tol)
        raise UnsupportedCombinationError(
            f"no closed-form summary for {kernel.describe()} in frame {frame!r} "
            f"outside the very sparse regime"
        )
    raise UnsupportedCombinationError(
        f"no closed-form summary for {kernel.describe()}"
    )


def _exact_closed_summary(model, kernel, frame, tol) -> MomentSummary | None:
    """Exact closed forms; third/fourth sums still come from the series."""
    if kernel.family == "pds":
        if kernel.d == 1.0 and frame in ("canonical", "divergence"):
            return _chi_square_closed(model, frame, tol)
        return None
    if kernel.family == "count_exact":
        return _count_closed(model, kernel, tol)
    if kernel.family == "count_at_least":
        if kernel.r == 1:
            base = _count_closed(model, Kernel.count_exact(0), tol)
            return _affine_summary(base, model.n, -1.0, 0.0, model.num_cells, "canonical")
        return _count_closed(model, kernel, tol)
    if kernel.family == "collisions":
        base = _count_closed(model, Kernel.count_exact(0), tol)
        return _affine_summary(base, model.n, 1.0, 1.0, -model.num_cells, "canonical")
    if kernel.family == "unfilled":
        return _unfilled_closed(model, kernel.levels, tol)
    return None


def _series_beta(model, kernel, frame, tol, tau, centers_by_rate) -> tuple[float, float]:
    beta3 = 0.0
    beta4 = 0.0
    rates, mults = model.rate_groups()
    for lam, mult in zip(rates, mults):
        fn, is_random = _summary_cell_fns(kernel, lam, frame)
        center = centers_by_rate(lam)
        maker = _bernoulli_g_power if is_random else _plain_g_power
        beta3 += mult * expect_fn(maker(fn, center, tau, lam, 3), lam, tol)
        beta4 += mult * expect_fn(maker(fn, center, tau, lam, 4), lam, tol)
    return beta3, beta4


def _chi_square_closed(model, frame, tol) -> MomentSummary:
    # Centered quadratic kernel: per-cell mean 1, covariance with the
    # count exactly 1, variance 2 + 1/rate.
    n = model.n
    num_cells = model.num_cells
    rates = model.rates
    inv = 1.0 / rates
    raw_var = 2.0 * num_cells + float(math.fsum(inv.tolist()))
    tau = num_cells / n
    var = raw_var - n * tau * tau
    beta3, beta4 = _series_beta(
        model, Kernel.pds(1.0), "canonical", tol, tau, lambda lam: 1.0
    )
    return MomentSummary(
        mean=float(num_cells), tau=tau, raw_var=raw_var, var=var,
        beta3=beta3, beta4=beta4, frame=frame,
    )


def _count_closed(model, kernel, tol) -> MomentSummary:
    n = model.n
    rates, mults = model.rate_groups()
    r = kernel.r
    if kernel.family == "count_exact":
        occ = np.array([poisson_pmf(r, lam) for lam in rates])
        cov = (r - rates) * occ
    else:  # count_at_least, r >= 2
        occ = np.array(
            [1.0 - math.fsum(poisson_pmf(k, lam) for k in range(r)) for lam in rates]
        )
        # E x 1{x >= r} = lam P{x >= r - 1}, so the covariance is
        # lam * P{x = r - 1}.
        cov = rates * np.array([poisson_pmf(r - 1, lam) for lam in rates])
    mean = float(mults @ occ)
    tau = float(mults @ cov) / n
    raw_var = float(mults @ (occ * (1.0 - occ)))
    var = raw_var - n * tau * tau
    beta3, beta4 = _series_beta(
        model, kernel, "canonical", tol, tau,
        lambda lam: occ[np.searchsorted(rates, lam)],
    )
    return MomentSummary(
        mean=mean, tau=tau, raw_var=raw_var, var=var,
        beta3=beta3, beta4=beta4, frame="canonical",
    )


def _unfilled_closed(model, levels, tol) -> MomentSummary:
    n = model.n
    rates, mults = model.rate_groups()
    tau_vals = np.array([level_tau(levels, lam)[0] for lam in rates])
    tau_primes = np.array([level_tau(levels, lam)[1] for lam in rates])
    mean = float(mults @ tau_vals)
    tau = float(mults @ (rates * tau_primes)) / n
    raw_var = float(mults @ (tau_vals * (1.0 - tau_vals)))
    var = raw_var - n * tau * tau
    kernel = Kernel.unfilled(levels)
    beta3, beta4 = _series_beta(
        model, kernel, "canonical", tol, tau,
        lambda lam: tau_vals[np.searchsorted(rates, lam)],
    )
    return MomentSummary(
        mean=mean, tau=tau, raw_var=raw_var, var=var,
        beta3=beta3, beta4=beta4, frame="canonical",
    )


def _power_weight_sum(probs: np.ndarray, exponent: float) -> float:
    return float(math.fsum((probs**exponent).tolist()))


def _very_sparse_closed(model, d, frame, tol) -> MomentSummary:
    """Leading-order summaries when every rate is small.

    For d != 0 these live in the power frame; for d = 0 the uniform
    closed form is stated for the bare log kernel and the non-uniform
    one for the scaled log kernel.  Requesting an incompatible frame is
    an error rather than a silent conversion.
    """
    n = model.n
    p = model.probs
    if d == 0.0:
        if model.is_uniform:
            if frame not in ("canonical", "bare"):
                raise UnsupportedCombinationError(
                    "very sparse closed form for d = 0 on a uniform model is "
                    "stated for the bare log kernel; request frame 'bare'"
                )
            lam = model.fill_ratio
            ln2 = math.log(2.0)
            mean = 2.0 * ln2 * n * lam
            var = 8.0 * ln2 * ln2 * n * lam
            summary = MomentSummary(
                mean=mean, tau=0.0, raw_var=var, var=var,
                beta3=math.nan, beta4=math.nan, frame="bare", approximate=True,
            )
            return summary
        if frame not in ("canonical", "power", "divergence"):
            raise UnsupportedCombinationError(
                "very sparse closed form for d = 0 on a non-uniform model is "
                "stated for the scaled log kernel"
            )
        # Log-rate moments under cell-probability weighting.
        z = -np.log(model.rates)
        ez = float(math.fsum((p * z).tolist()))
        ez2 = float(math.fsum((p * z * z).tolist()))
        return MomentSummary(
            mean=2.0 * n * ez, tau=2.0 * ez, raw_var=4.0 * n * ez2,
            var=4.0 * n * (ez2 - ez * ez),
            beta3=math.nan, beta4=math.nan, frame="power", approximate=True,
        )
    if frame == "bare" and not model.is_uniform:
        raise UnsupportedCombinationError(
            "bare-frame very sparse closed form is only stated for uniform models"
        )
    p1d = _power_weight_sum(p, 1.0 - d)
    p12d = _power_weight_sum(p, 1.0 - 2.0 * d)
    p22d = _power_weight_sum(p, 2.0 - 2.0 * d)
    p2d = _power_weight_sum(p, 2.0 - d)
    two_d = 2.0**d
    mean = n ** (1.0 - d) * p1d
    tau = n**-d * (p1d + 2.0 * (two_d - 1.0) * n * p2d)
    raw_var = n ** (1.0 - 2.0 * d) * p12d + 2.0 * (two_d**2 - 1.0) * n ** (2.0 - 2.0 * d) * p22d
    var = (
        n ** (1.0 - 2.0 * d) * (p12d - p1d * p1d)
        + 2.0 * n ** (2.0 - 2.0 * d)
        * ((two_d**2 - 1.0) * p22d - 2.0 * (two_d - 1.0) * p1d * p2d)
    )
    summary = MomentSummary(
        mean=mean, tau=tau, raw_var=raw_var, var=var,
        beta3=math.nan, beta4=math.nan, frame="power", approximate=True,
    )
    if frame == "divergence":
        a, b = _divergence_coeffs(d, n)
        summary = _affine_summary(summary, n, a, 0.0, b, "divergence")
    elif frame == "bare":
        lam = model.fill_ratio
        scale = lam**d
        summary = _affine_summary(summary, n, scale, 0.0, 0.0, "bare")
    return summary


# -- unfilled-cell helpers ---------------------------------------------------

def level_tau(levels: LevelDistribution, lam: float) -> tuple[float, float]:
    """Unfilled probability of one cell and its rate derivative.

    tau(lam) = sum_l P{count = l} P{level > l} and
    tau'(lam) = -sum_l P{count = l} P{level = l + 1}; both are finite
    sums because the level distribution has bounded support.
    """
    if not (lam > 0.0) or not math.isfinite(lam):
        raise ModelValidationError(f"rate must be a positive finite real, got {lam}")
    top = levels.max_level
    tau = math.fsum(
        poisson_pmf(l, lam) * levels.survival(l) for l in range(top)
    )
    tau_prime = -math.fsum(
        poisson_pmf(l, lam) * levels.prob(l + 1) for l in range(top)
    )
    return tau, tau_prime


def tau_sparse_approx(levels: LevelDistribution, lam: float) -> float:
    """Small-rate expansion of the per-cell unfilled probability.

    tau(lam) = 1 - P{level = 0} - (P{level = G}/G!) lam^G + O(lam^{G+1})
    with G the smallest positive level.
    """
    g = levels.min_positive_level
    return 1.0 - levels.zero_mass - levels.lead_coefficient() * lam**g


def unfilled_sparse_expansion(
    levels: LevelDistribution, lam: float, num_cells: int
) -> tuple[float, float]:
    """Leading-order (mean, variance) of the unfilled count at small rates.

    Used only as a cross-check: mean ~ N * tau_approx and
    variance ~ N * beta0 (1 - beta0) with beta0 the zero-level mass.
    """
    beta0 = levels.zero_mass
    return (
        num_cells * tau_sparse_approx(levels, lam),
        num_cells * beta0 * (1.0 - beta0),
    )
