"""Parameter estimation from weak-measurement records.

The full estimation subroutine: condition the pointer readings on
(bit, basis, observable), recover the couplings from the complement
identity g = mu_alpha + mu_alpha_perp, normalize to expectation values,
reconstruct Bloch parameters and the error rates

    delta_X = (2 - r_x^+ + r_x^-)/4,   delta_Z = (2 - r_z^0 + r_z^1)/4,
    delta_b = (delta_X + delta_Z)/2,

apply dark-count corrections, certify the weak measurements (four named
checks), and produce the QBER / abort decision.

Estimates are never clipped: a negative delta is the designed attack tripwire
and must reach the nonnegativity check.  The nonnegativity verdict allows a
statistical slack of `nonneg_z` standard errors, since at the honest noiseless
boundary the raw check would fail on mean-zero noise; exact-expectation inputs
(infinite counts) are checked against a deterministic tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .pointer import wm_disturbance_error

INTENSITY_SIGNAL = 0
INTENSITY_DECOY = 1
INTENSITY_VACUUM = 2
INTENSITY_NAMES = {INTENSITY_SIGNAL: "signal", INTENSITY_DECOY: "decoy", INTENSITY_VACUUM: "vacuum"}
NO_CLICK = -1

EXACT_TOL = 1e-12


class EstimationError(RuntimeError):
    """Abort-grade estimation failure (not a protocol abort): missing data, bad inputs."""


# ---------------------------------------------------------------------------
# signal log
# ---------------------------------------------------------------------------

@dataclass
class SignalLog:
    """Per-signal protocol records as parallel arrays.

    s_a: Alice's bit; b: basis flag (0=Z, 1=X); h: Bob's observable flag
    (0=H+, 1=H-); omega: pointer reading; s_b: detection outcome (0/1, or
    NO_CLICK=-1); intensity: 0=signal mu, 1=decoy nu, 2=vacuum.
    """

    s_a: np.ndarray
    b: np.ndarray
    h: np.ndarray
    omega: np.ndarray
    s_b: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.s_a = np.asarray(self.s_a, dtype=np.uint8)
        self.b = np.asarray(self.b, dtype=np.uint8)
        self.h = np.asarray(self.h, dtype=np.uint8)
        self.omega = np.asarray(self.omega, dtype=float)
        self.s_b = np.asarray(self.s_b, dtype=np.int8)
        self.intensity = np.asarray(self.intensity, dtype=np.uint8)
        n = len(self.s_a)
        for name in ("b", "h", "omega", "s_b", "intensity"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"signal log column {name!r} length mismatch")

    def __len__(self) -> int:
        return len(self.s_a)

    @property
    def clicked(self) -> np.ndarray:
        return self.s_b != NO_CLICK

    def without_no_clicks(self) -> "SignalLog":
        """Drop the no-click indices from every column together."""
        keep = self.clicked
        return SignalLog(self.s_a[keep], self.b[keep], self.h[keep],
                         self.omega[keep], self.s_b[keep], self.intensity[keep])

    def measured_gains(self) -> dict:
        """Click fraction per intensity class, from the full (unsifted) log."""
        out = {}
        for code, name in INTENSITY_NAMES.items():
            sent = self.intensity == code
            n_sent = int(sent.sum())
            out[name] = float((self.clicked & sent).sum() / n_sent) if n_sent else 0.0
        return out

    def subset(self, mask) -> "SignalLog":
        return SignalLog(self.s_a[mask], self.b[mask], self.h[mask],
                         self.omega[mask], self.s_b[mask], self.intensity[mask])


SIGNAL_LOG_HEADER = "s_A,b,h,omega,s_B,intensity_class"


def write_signal_log(path, log: SignalLog) -> None:
    """Write the interchange file: header + one decimal-text record per signal."""
    with open(path, "w", newline="\n") as fh:
        fh.write(SIGNAL_LOG_HEADER + "\n")
        for i in range(len(log)):
            fh.write(f"{log.s_a[i]},{log.b[i]},{log.h[i]},"
                     f"{log.omega[i]:.17g},{log.s_b[i]},{log.intensity[i]}\n")


def read_signal_log(path) -> SignalLog:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SIGNAL_LOG_HEADER:
            raise EstimationError(f"bad signal-log header {header!r}, expected {SIGNAL_LOG_HEADER!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise EstimationError("empty signal log")
    return SignalLog(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5])


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

@dataclass
class ConditionedStats:
    """Per-cell (mean, variance, count), indexed [s_a, basis, observable].

    Variance is the unbiased (n-1) sample estimator.  count = +inf marks
    exact-expectation (analytic) statistics.
    """

    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray

    @property
    def exact(self) -> bool:
        return bool(np.all(np.isinf(self.count)))

    def mean_se(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            se = np.sqrt(self.var / self.count)
        return np.where(np.isinf(self.count), 0.0, se)


def condition_and_average(log: SignalLog, intensity: int | None = INTENSITY_SIGNAL) -> ConditionedStats:
    """Exact sample moments of the readings for all 8 (bit, basis, observable) cells.

    Expects a log already sifted of no-clicks.  An empty cell cannot be
    estimated and raises EstimationError.
    """
    if np.any(log.s_b == NO_CLICK):
        raise EstimationError("log still contains no-click records; sift first")
    mask = np.ones(len(log), dtype=bool) if intensity is None else log.intensity == intensity
    mean = np.zeros((2, 2, 2))
    var = np.zeros((2, 2, 2))
    count = np.zeros((2, 2, 2))
    cell_index = (log.s_a.astype(np.int64) * 4 + log.b * 2 + log.h)[mask]
    omega = log.omega[mask]
    counts = np.bincount(cell_index, minlength=8).astype(float)
    if np.any(counts < 2):
        lbl = INTENSITY_NAMES.get(intensity, "all")
        raise EstimationError(f"empty or singleton conditioning cell at intensity {lbl!r}")
    sums = np.bincount(cell_index, weights=omega, minlength=8)
    means = sums / counts
    m2 = np.bincount(cell_index, weights=(omega - means[cell_index]) ** 2, minlength=8)
    mean[:] = means.reshape(2, 2, 2)
    var[:] = (m2 / (counts - 1.0)).reshape(2, 2, 2)
    count[:] = counts.reshape(2, 2, 2)
    return ConditionedStats(mean, var, count)


def merge_moments(a: ConditionedStats, b: ConditionedStats) -> ConditionedStats:
    """Exact pairwise combination of (count, mean, M2) moment triples.

    Deterministic for a fixed partition plan, so concurrent folds are
    bit-stable given the same plan.
    """
    n = a.count + b.count
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = b.mean - a.mean
        mean = np.where(n > 0, a.mean + delta * np.where(n > 0, b.count / np.maximum(n, 1), 0.0), 0.0)
        m2 = (a.var * np.maximum(a.count - 1.0, 0.0)
              + b.var * np.maximum(b.count - 1.0, 0.0)
              + delta**2 * a.count * b.count / np.maximum(n, 1))
        var = np.where(n > 1, m2 / np.maximum(n - 1.0, 1.0), 0.0)
    return ConditionedStats(mean, var, n)


def condition_and_average_partitioned(log: SignalLog, n_parts: int,
                                      intensity: int | None = INTENSITY_SIGNAL) -> ConditionedStats:
    """Fold the conditioning over contiguous partitions (fixed plan) and merge."""
    bounds = np.linspace(0, len(log), n_parts + 1).astype(int)
    acc = None
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        part = log.subset(np.arange(lo, hi))
        mask = np.ones(hi - lo, dtype=bool) if intensity is None else part.intensity == intensity
        mean = np.zeros((2, 2, 2))
        var = np.zeros((2, 2, 2))
        count = np.zeros((2, 2, 2))
        idx = (part.s_a.astype(np.int64) * 4 + part.b * 2 + part.h)[mask]
        omega = part.omega[mask]
        counts = np.bincount(idx, minlength=8).astype(float)
        sums = np.bincount(idx, weights=omega, minlength=8)
        means = np.divide(sums, counts, out=np.zeros(8), where=counts > 0)
        m2 = np.bincount(idx, weights=(omega - means[idx]) ** 2, minlength=8)
        mean[:] = means.reshape(2, 2, 2)
        var[:] = np.divide(m2, np.maximum(counts - 1.0, 1.0),
                           out=np.zeros(8), where=counts > 1).reshape(2, 2, 2)
        count[:] = counts.reshape(2, 2, 2)
        piece = ConditionedStats(mean, var, count)
        acc = piece if acc is None else merge_moments(acc, piece)
    if acc is None or np.any(acc.count < 2):
        raise EstimationError("empty or singleton conditioning cell after merge")
    return acc


def exact_stats(mean: np.ndarray, var: np.ndarray) -> ConditionedStats:
    """Exact-expectation statistics (infinite counts) for analytic paths."""
    return ConditionedStats(np.asarray(mean, dtype=float),
                            np.asarray(var, dtype=float),
                            np.full((2, 2, 2), np.inf))


# ---------------------------------------------------------------------------
# couplings, expectation values, error rates
# ---------------------------------------------------------------------------

def estimate_couplings(stats: ConditionedStats, dark_fraction: float = 0.0) -> tuple[float, float]:
    """Recover (g+, g-) from the complement identity mu_alpha + mu_alpha_perp = g.

    Dark counts deflate every conditional mean by (1 - d); the estimate divides
    that back out.  Both orthogonal pairs (Z bits 0/1 and X bits +/-) are
    averaged for variance reduction.
    """
    if dark_fraction >= 1.0:
        raise EstimationError("all clicks are dark: cannot recover couplings")
    out = []
    for h in (0, 1):
        z_pair = stats.mean[0, 0, h] + stats.mean[1, 0, h]
        x_pair = stats.mean[0, 1, h] + stats.mean[1, 1, h]
        out.append(0.5 * (z_pair + x_pair) / (1.0 - dark_fraction))
    return out[0], out[1]


@dataclass(frozen=True)
class ErrorRates:
    """Bloch estimates and the derived errorrates (pre dark-correction)."""

    r_x_plus: float
    r_x_minus: float
    r_z_0: float
    r_z_1: float
    delta_x: float
    delta_z: float
    delta_b: float


def estimate_error_rates(stats: ConditionedStats, g_plus: float, g_minus: float,
                         dark_fraction: float = 0.0) -> ErrorRates:
    """Expectation values, Bloch parameters and error rates from conditioned means.

    <H+->_alpha = mu/((1-d) g+-); r_x = sqrt2(<H+> - <H->) at the X states,
    r_z = sqrt2(<H+> + <H-> - 1) at the Z states; the general (non-unital)
    delta formulas are used and reduce to the unital ones exactly.
    """
    if g_plus <= 0 or g_minus <= 0:
        raise EstimationError(f"non-positive coupling estimate: g+={g_plus}, g-={g_minus}")
    deflate = 1.0 - dark_fraction
    exp_p = stats.mean[:, :, 0] / (deflate * g_plus)   # [s_a, basis]
    exp_m = stats.mean[:, :, 1] / (deflate * g_minus)
    rt2 = math.sqrt(2.0)
    r_x_plus = rt2 * (exp_p[0, 1] - exp_m[0, 1])
    r_x_minus = rt2 * (exp_p[1, 1] - exp_m[1, 1])
    r_z_0 = rt2 * (exp_p[0, 0] + exp_m[0, 0] - 1.0)
    r_z_1 = rt2 * (exp_p[1, 0] + exp_m[1, 0] - 1.0)
    delta_x = 0.25 * (2.0 - r_x_plus + r_x_minus)
    delta_z = 0.25 * (2.0 - r_z_0 + r_z_1)
    return ErrorRates(r_x_plus, r_x_minus, r_z_0, r_z_1,
                      delta_x, delta_z, 0.5 * (delta_x + delta_z))


def dark_count_fraction(q_gamma: float, q_vac: float) -> float:
    """Fraction of detections due to dark counts: d(gamma) = Q_vac / Q_gamma."""
    if q_gamma <= 0.0:
        raise EstimationError(f"Q_gamma must be positive, got {q_gamma}")
    if q_vac < 0.0 or q_vac > q_gamma:
        raise EstimationError(f"need 0 <= Q_vac <= Q_gamma, got Q_vac={q_vac}, Q_gamma={q_gamma}")
    return q_vac / q_gamma


def corrected_error_rate(delta_tilde: float, d_gamma: float) -> float:
    """Fold dark-count errors in: delta = delta~ + (1/2 - delta~) d(gamma).

    delta~ may sit below 0 (attack tripwire values pass through unclipped);
    1/2 is a fixed point for every d.
    """
    if not 0.0 <= d_gamma <= 1.0:
        raise ValueError(f"dark fraction must be in [0,1], got {d_gamma}")
    if delta_tilde > 0.5 + 1e-9:
        raise ValueError(f"delta~ must be <= 1/2, got {delta_tilde}")
    return delta_tilde + (0.5 - delta_tilde) * d_gamma


def compute_qber(delta_b: float, delta_wm: float, d_mu: float) -> float:
    """Security-check statistic QBER = delta_b + (1 - d(mu)) delta_wm."""
    if not 0.0 <= d_mu <= 1.0:
        raise ValueError(f"dark fraction must be in [0,1], got {d_mu}")
    if delta_wm < 0.0:
        raise ValueError(f"delta_wm must be >= 0, got {delta_wm}")
    return delta_b + (1.0 - d_mu) * delta_wm


# ---------------------------------------------------------------------------
# standard errors
# ---------------------------------------------------------------------------

def _delta_gradients(stats: ConditionedStats, dark_fraction: float):
    """Numeric gradients of (delta_x, delta_z, delta_b) in the 8 cell means."""
    base_mean = stats.mean.copy()

    def evaluate(mean):
        s = ConditionedStats(mean, stats.var, stats.count)
        gp, gm = estimate_couplings(s, dark_fraction)
        r = estimate_error_rates(s, gp, gm, dark_fraction)
        return np.array([r.delta_x, r.delta_z, r.delta_b])

    grads = np.zeros((3, 2, 2, 2))
    scale = max(1e-6, 1e-6 * float(np.max(np.abs(base_mean))))
    for idx in np.ndindex(2, 2, 2):
        bump = np.zeros_like(base_mean)
        bump[idx] = scale
        grads[(slice(None),) + idx] = (evaluate(base_mean + bump) - evaluate(base_mean - bump)) / (2 * scale)
    return grads


def delta_standard_errors(stats: ConditionedStats, dark_fraction: float = 0.0):
    """First-order (delta-method) standard errors of (delta_x, delta_z, delta_b).

    Propagates the cell-mean sampling variances through the estimator; exact
    statistics give zeros.
    """
    if stats.exact:
        return 0.0, 0.0, 0.0
    grads = _delta_gradients(stats, dark_fraction)
    mean_var = stats.var / stats.count
    ses = np.sqrt(np.tensordot(grads**2, mean_var, axes=([1, 2, 3], [0, 1, 2])))
    return float(ses[0]), float(ses[1]), float(ses[2])


def coupling_standard_errors(stats: ConditionedStats, dark_fraction: float = 0.0):
    """Standard errors of (g+, g-): each is the mean of two complement-pair sums."""
    if stats.exact:
        return 0.0, 0.0
    mean_var = stats.var / stats.count
    out = []
    for h in (0, 1):
        var = 0.25 * float(mean_var[:, :, h].sum()) / (1.0 - dark_fraction) ** 2
        out.append(math.sqrt(var))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# verification and the report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationThresholds:
    """Security thresholds for the estimation subroutine.

    delta_sec defaults to the 11% bound.  g_sec and sigma_sec_sq have no
    prescribed values; the `for_device` factory installs 1.2x the nominal
    coupling and (1.1 sigma_md)^2 (physical pointer-variance units).
    """

    delta_sec: float = 0.11
    g_sec: float = 1.2
    sigma_sec_sq: float = 1.21
    variance_equality_significance: float = 0.01
    nonneg_z: float = 3.0
    sigma_phi_upper: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.delta_sec < 0.5:
            raise ValueError(f"delta_sec must be in (0, 0.5), got {self.delta_sec}")
        if self.g_sec <= 0 or self.sigma_sec_sq <= 0:
            raise ValueError("g_sec and sigma_sec_sq must be positive")
        if not 0.0 < self.variance_equality_significance < 1.0:
            raise ValueError("variance_equality_significance must be in (0, 1)")

    @classmethod
    def for_device(cls, g: float, sigma_md: float, **kwargs) -> "EstimationThresholds":
        kwargs.setdefault("g_sec", 1.2 * g)
        kwargs.setdefault("sigma_sec_sq", (1.1 * sigma_md) ** 2)
        return cls(**kwargs)


@dataclass(frozen=True)
class Verdicts:
    """The four weak-measurement certification checks (pass = True)."""

    errors_nonnegative: bool
    couplings_bounded: bool
    variances_bounded: bool
    variances_equal: bool
    min_variance_p_value: float
    max_variance_ratio: float

    @property
    def all_pass(self) -> bool:
        return (self.errors_nonnegative and self.couplings_bounded
                and self.variances_bounded and self.variances_equal)

    def as_dict(self) -> dict:
        return {
            "errors_nonnegative": self.errors_nonnegative,
            "couplings_bounded": self.couplings_bounded,
            "variances_bounded": self.variances_bounded,
            "variances_equal": self.variances_equal,
        }


@dataclass
class EstimationReport:
    """Everything the estimation subroutine learned from one run's log."""

    cell_mean: np.ndarray
    cell_var: np.ndarray
    cell_count: np.ndarray
    g_plus: float
    g_minus: float
    g_plus_se: float
    g_minus_se: float
    rates: ErrorRates
    delta_x_se: float
    delta_z_se: float
    delta_b_se: float
    gains: dict
    dark_fraction_signal: float
    dark_fraction_decoy: float
    delta_x_corrected: float
    delta_z_corrected: float
    delta_b_corrected: float
    decoy_rates: ErrorRates | None
    delta_x_decoy_corrected: float | None
    sigma_md_sq_lower: float
    delta_wm_estimate: float
    qber: float
    verdicts: Verdicts = None
    abort: bool = True

    def to_text(self) -> str:
        """Flat key = value report (documented interchange for the CLI)."""
        lines = []

        def put(key, value):
            if isinstance(value, (bool, np.bool_)):
                lines.append(f"{key} = {'true' if value else 'false'}")
            elif isinstance(value, float):
                lines.append(f"{key} = {value:.17g}")
            else:
                lines.append(f"{key} = {value}")

        for (i, j, k) in np.ndindex(2, 2, 2):
            cell = f"bit{i}_{'ZX'[j]}_H{'+-'[k]}"
            put(f"cell.{cell}.mean", float(self.cell_mean[i, j, k]))
            put(f"cell.{cell}.var", float(self.cell_var[i, j, k]))
            put(f"cell.{cell}.count", float(self.cell_count[i, j, k]))
        put("coupling.g_plus", self.g_plus)
        put("coupling.g_minus", self.g_minus)
        put("coupling.g_plus_se", self.g_plus_se)
        put("coupling.g_minus_se", self.g_minus_se)
        for name in ("r_x_plus", "r_x_minus", "r_z_0", "r_z_1", "delta_x", "delta_z", "delta_b"):
            put(f"estimate.{name}", getattr(self.rates, name))
        put("estimate.delta_x_se", self.delta_x_se)
        put("estimate.delta_z_se", self.delta_z_se)
        put("estimate.delta_b_se", self.delta_b_se)
        for name, q in sorted(self.gains.items()):
            put(f"gain.{name}", q)
        put("dark.fraction_signal", self.dark_fraction_signal)
        put("dark.fraction_decoy", self.dark_fraction_decoy)
        put("corrected.delta_x", self.delta_x_corrected)
        put("corrected.delta_z", self.delta_z_corrected)
        put("corrected.delta_b", self.delta_b_corrected)
        if self.decoy_rates is not None:
            put("decoy.delta_x", self.decoy_rates.delta_x)
            put("decoy.delta_z", self.decoy_rates.delta_z)
            put("decoy.delta_x_corrected", self.delta_x_decoy_corrected)
        put("device.sigma_md_sq_lower", self.sigma_md_sq_lower)
        put("device.delta_wm_estimate", self.delta_wm_estimate)
        put("qber", self.qber)
        for key, value in self.verdicts.as_dict().items():
            lines.append(f"verdict.{key} = {'pass' if value else 'fail'}")
        put("verdict.min_variance_p_value", self.verdicts.min_variance_p_value)
        put("verdict.max_variance_ratio", self.verdicts.max_variance_ratio)
        put("abort", self.abort)
        return "\n".join(lines) + "\n"


def wm_verification(report: EstimationReport, thresholds: EstimationThresholds) -> Verdicts:
    """Certify the weak measurements: the four named checks.

    1. delta_X, delta_Z nonnegative (with `nonneg_z` standard-error slack on
       sampled data; exact data uses a 1e-12 tolerance).
    2. g+, g- <= g_sec.
    3. every conditioned variance <= sigma_sec_sq (physical units).
    4. conditioned variances statistically identical: two-sided variance-ratio
       tests over all 28 cell pairs, Bonferroni-corrected at the configured
       significance.
    """
    stats = ConditionedStats(report.cell_mean, report.cell_var, report.cell_count)
    if stats.exact:
        slack_x = slack_z = EXACT_TOL
    else:
        slack_x = thresholds.nonneg_z * report.delta_x_se
        slack_z = thresholds.nonneg_z * report.delta_z_se
    nonneg = bool(report.rates.delta_x >= -slack_x) and bool(report.rates.delta_z >= -slack_z)
    z = 0.0 if stats.exact else thresholds.nonneg_z
    couplings = (bool(report.g_plus <= thresholds.g_sec + z * report.g_plus_se)
                 and bool(report.g_minus <= thresholds.g_sec + z * report.g_minus_se))
    bounded = bool(np.all(report.cell_var <= thresholds.sigma_sec_sq))

    variances = report.cell_var.reshape(8)
    counts = report.cell_count.reshape(8)
    ratios = []
    p_values = []
    for i in range(8):
        for j in range(i + 1, 8):
            ratio = variances[i] / variances[j]
            ratios.append(max(ratio, 1.0 / ratio) if ratio > 0 else np.inf)
            if not stats.exact:
                f_stat = ratio
                p = sps.f.sf(f_stat, counts[i] - 1, counts[j] - 1)
                p_values.append(2.0 * min(p, 1.0 - p))
    if stats.exact:
        # honest cells legitimately differ by the binomial branch term, at most
        # g^2/4 on top of the device variance
        g_avg = 0.5 * (report.g_plus + report.g_minus)
        branch_allowance = 0.25 * g_avg**2 / max(float(np.min(variances)), 1e-300)
        equal = bool(max(ratios) <= 1.0 + branch_allowance + 1e-9)
        min_p = 1.0
    else:
        min_p = float(min(p_values))
        equal = min_p >= thresholds.variance_equality_significance / 28.0
    return Verdicts(nonneg, couplings, bounded, equal, min_p, float(max(ratios)))


def build_report(log: SignalLog, thresholds: EstimationThresholds,
                 gains: dict | None = None) -> EstimationReport:
    """Run the full estimation subroutine on a signal log.

    The log may still contain no-click records (they are used for the measured
    gains, then removed).  `gains` overrides the measured click fractions when
    the caller knows them more precisely.
    """
    if gains is None:
        gains = log.measured_gains()
    sifted = log.without_no_clicks() if np.any(log.s_b == NO_CLICK) else log
    stats = condition_and_average(sifted, INTENSITY_SIGNAL)
    stats_nu = None
    if np.any(sifted.intensity == INTENSITY_DECOY):
        try:
            stats_nu = condition_and_average(sifted, INTENSITY_DECOY)
        except EstimationError:
            pass  # starved decoy cells: the decoy-rate chain falls back to signal estimates
    return report_from_stats(stats, thresholds, gains, stats_decoy=stats_nu)


def report_from_stats(stats: ConditionedStats, thresholds: EstimationThresholds,
                      gains: dict, stats_decoy: ConditionedStats | None = None) -> EstimationReport:
    """Estimation subroutine on pre-conditioned statistics.

    Entry point for the analytic (exact-expectation) paths, which build
    ConditionedStats with infinite counts.
    """
    q_vac = gains.get("vacuum", 0.0)
    q_mu = gains.get("signal", 0.0)
    q_nu = gains.get("decoy", 0.0)
    # sampling noise can push a tiny vacuum gain above the others; cap at 1
    d_mu = dark_count_fraction(q_mu, min(q_vac, q_mu)) if q_mu > 0 else 0.0
    d_nu = dark_count_fraction(q_nu, min(q_vac, q_nu)) if q_nu > 0 else 0.0

    g_plus, g_minus = estimate_couplings(stats, d_mu)
    g_plus_se, g_minus_se = coupling_standard_errors(stats, d_mu)
    rates = estimate_error_rates(stats, g_plus, g_minus, d_mu)
    se_x, se_z, se_b = delta_standard_errors(stats, d_mu)

    decoy_rates = None
    delta_x_nu_corr = None
    if stats_decoy is not None:
        decoy_rates = estimate_error_rates(stats_decoy, g_plus, g_minus, d_nu)
        delta_x_nu_corr = corrected_error_rate(min(decoy_rates.delta_x, 0.5), d_nu)

    g_avg = 0.5 * (g_plus + g_minus)
    mean_var = float(np.mean(stats.var))
    sigma_md_sq_lower = mean_var - 0.25 * g_avg**2 * thresholds.sigma_phi_upper**2
    if sigma_md_sq_lower > 0 and g_avg > 0:
        delta_wm_est = wm_disturbance_error(g_avg, math.sqrt(sigma_md_sq_lower))
    else:
        delta_wm_est = 0.25  # degenerate device estimate: assume the worst

    dx_corr = corrected_error_rate(min(rates.delta_x, 0.5), d_mu)
    dz_corr = corrected_error_rate(min(rates.delta_z, 0.5), d_mu)
    db_corr = 0.5 * (dx_corr + dz_corr)
    qber = compute_qber(db_corr, delta_wm_est, d_mu)

    report = EstimationReport(
        cell_mean=stats.mean, cell_var=stats.var, cell_count=stats.count,
        g_plus=g_plus, g_minus=g_minus, g_plus_se=g_plus_se, g_minus_se=g_minus_se,
        rates=rates,
        delta_x_se=se_x, delta_z_se=se_z, delta_b_se=se_b,
        gains=dict(gains), dark_fraction_signal=d_mu, dark_fraction_decoy=d_nu,
        delta_x_corrected=dx_corr, delta_z_corrected=dz_corr, delta_b_corrected=db_corr,
        decoy_rates=decoy_rates, delta_x_decoy_corrected=delta_x_nu_corr,
        sigma_md_sq_lower=sigma_md_sq_lower, delta_wm_estimate=delta_wm_est,
        qber=qber,
    )
    verdicts = wm_verification(report, thresholds)
    report.verdicts = verdicts
    report.abort = bool((not verdicts.all_pass) or (qber > thresholds.delta_sec))
    return report
