"""Recovery of atom signals from time-tagged photon streams.

Second-order autocorrelation with a triangular bunching-model fit,
event-driven sliding-window burst search, Poissonian error-rate
predictions and peak-height histograms.

All operations are pure functions of the stream they are given.  Window
arithmetic runs on the integer-nanosecond grid of the event timestamps,
so counts are exact and independent of floating-point rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .events import EventStream

__all__ = [
    "G2Estimate",
    "G2Fit",
    "SlidingCount",
    "DetectionReport",
    "NoAtomSignalError",
    "estimate_g2",
    "triangular_g2",
    "fit_g2",
    "sliding_count",
    "detect_atoms",
    "poisson_error_rates",
    "optimal_threshold",
    "peak_histogram",
]

DEFAULT_BIN_WIDTH = 2e-6
DEFAULT_MAX_LAG = 300e-6


class NoAtomSignalError(RuntimeError):
    """Raised when a correlation shows no bunching to fit."""


@dataclass(frozen=True)
class G2Estimate:
    """Binned second-order autocorrelation of a stream.

    ``values[m]`` is the pair count in lag bin m divided by
    ``normalization * bin_width``, where ``normalization`` is the squared
    mean rate times the edge-corrected observation time; a homogeneous
    Poisson stream gives values of one at every lag.  Only nonnegative
    lags are stored (the correlation is symmetric).
    """

    lags: np.ndarray  # bin centres (s)
    values: np.ndarray
    bin_width: float
    normalization: float  # squared-rate denominator, per unit lag
    pair_counts: np.ndarray


@dataclass(frozen=True)
class G2Fit:
    """Triangular bunching model fitted to a correlation estimate.

    The model is one plus a triangle of base ``delta_tau``:

        g2(tau) = 1 + R_E (R - R_N) (delta_tau - |tau|) / (delta_tau R^2)

    with the burst event rate R_E and the burst duration delta_tau free,
    and the separately measured noise rate R_N and total rate R held
    fixed.  The atom rate follows from R = R_N + delta_tau R_E R_A.
    """

    n_per_atom: float  # delta_tau * R_E
    delta_tau: float
    g2_zero: float
    event_rate: float  # R_E
    atom_rate: float  # R_A
    noise_rate: float
    total_rate: float
    stderr_n_per_atom: float
    stderr_delta_tau: float
    n_fit_bins: int


def estimate_g2(
    stream: EventStream,
    bin_width: float = DEFAULT_BIN_WIDTH,
    max_lag: float = DEFAULT_MAX_LAG,
) -> G2Estimate:
    """Pair-coincidence estimate of the second-order autocorrelation.

    Histograms the lags of all ordered event pairs up to ``max_lag`` and
    normalizes by the squared mean rate.  Only pairs whose first event
    falls in [0, duration - max_lag] are counted, so every lag bin sees
    the same observation time.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if stream.times.size < 2:
        raise ValueError("need at least 2 events to correlate")
    if max_lag > stream.duration / 2:
        raise ValueError("max_lag must not exceed half the stream duration")
    t_ns = stream.times_ns
    bw_ns = int(round(bin_width * 1e9))
    n_bins = int(round(max_lag / bin_width))
    lag_ns = n_bins * bw_ns
    t_end_ns = int(round(stream.duration * 1e9)) - lag_ns

    counts = np.zeros(n_bins, dtype=np.int64)
    n_first = int(np.searchsorted(t_ns, t_end_ns, side="right"))
    for i in range(n_first):
        hi = int(np.searchsorted(t_ns, t_ns[i] + lag_ns, side="right"))
        lags = t_ns[i + 1 : hi] - t_ns[i]
        lags = lags[lags > 0]  # drop same-nanosecond coincidences
        if lags.size:
            counts += np.bincount((lags - 1) // bw_ns, minlength=n_bins)

    rate = stream.times.size / stream.duration
    t_eff = stream.duration - lag_ns / 1e9
    normalization = rate * rate * t_eff
    values = counts / (normalization * bin_width)
    lags_s = (np.arange(n_bins) + 0.5) * bin_width
    return G2Estimate(
        lags=lags_s,
        values=values,
        bin_width=bin_width,
        normalization=normalization,
        pair_counts=counts,
    )


def triangular_g2(lags, event_rate, delta_tau, noise_rate, total_rate):
    """Evaluate the triangular bunching model at the given lags."""
    lags = np.abs(np.asarray(lags, dtype=float))
    amp = event_rate * (total_rate - noise_rate) / (delta_tau * total_rate**2)
    return 1.0 + amp * np.clip(delta_tau - lags, 0.0, None)


def fit_g2(estimate: G2Estimate, noise_rate: float, total_rate: float) -> G2Fit:
    """Weighted least-squares fit of the triangular model.

    ``noise_rate`` and ``total_rate`` are measured separately and held
    fixed; the fit determines the burst event rate and duration, from
    which the events-per-atom number and the atom rate follow.

    Raises
    ------
    NoAtomSignalError
        If the correlation is flat (no bunching above the statistical
        noise of the tail), e.g. for a pure background stream.
    RuntimeError
        If the optimizer fails to converge.
    """
    if not total_rate > noise_rate >= 0:
        raise ValueError("require total_rate > noise_rate >= 0")
    lags = estimate.lags
    values = estimate.values
    amp0 = float(values[0] - 1.0)
    tail = values[lags > lags[-1] * 2.0 / 3.0]
    tail_sd = float(tail.std()) if tail.size > 1 else 0.0
    if amp0 <= max(4.0 * tail_sd, 1e-3):
        raise NoAtomSignalError(
            f"correlation is flat (amplitude {amp0:.3g} vs tail scatter {tail_sd:.3g})"
        )

    # Initial burst duration: first lag at which the excess has fallen by 1/e.
    below = np.nonzero(values < 1.0 + amp0 / math.e)[0]
    dtau0 = float(lags[below[0]]) if below.size else float(lags[-1] / 3.0)
    re0 = amp0 * total_rate**2 / (total_rate - noise_rate)

    mask = lags <= 3.0 * dtau0
    if mask.sum() < 4:
        mask = lags <= lags[min(len(lags) - 1, 3)]
    x = lags[mask]
    y = values[mask]
    if estimate.pair_counts is not None and estimate.pair_counts[mask].max() > 0:
        sigma = np.sqrt(np.maximum(estimate.pair_counts[mask], 1.0)) / (
            estimate.normalization * estimate.bin_width
        )
    else:
        sigma = np.ones_like(y)

    def residuals(p):
        return (triangular_g2(x, p[0], p[1], noise_rate, total_rate) - y) / sigma

    res = least_squares(
        residuals,
        x0=[re0, dtau0],
        bounds=([0.0, x[0]], [np.inf, 10.0 * float(lags[-1])]),
        x_scale=[abs(re0) or 1.0, dtau0],
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
    )
    if not res.success:
        raise RuntimeError(f"correlation fit did not converge: {res.message}")
    event_rate, delta_tau = float(res.x[0]), float(res.x[1])

    # Parameter covariance from the weighted Jacobian.
    dof = max(1, y.size - 2)
    chi2 = 2.0 * res.cost
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * chi2 / dof
        var_re, var_dt = float(cov[0, 0]), float(cov[1, 1])
        cov_re_dt = float(cov[0, 1])
    except np.linalg.LinAlgError:
        var_re = var_dt = cov_re_dt = float("nan")

    n_per_atom = event_rate * delta_tau
    stderr_n = math.sqrt(
        max(
            0.0,
            delta_tau**2 * var_re
            + event_rate**2 * var_dt
            + 2.0 * event_rate * delta_tau * cov_re_dt,
        )
    )
    return G2Fit(
        n_per_atom=n_per_atom,
        delta_tau=delta_tau,
        g2_zero=1.0 + event_rate * (total_rate - noise_rate) / total_rate**2,
        event_rate=event_rate,
        atom_rate=(total_rate - noise_rate) / n_per_atom,
        noise_rate=noise_rate,
        total_rate=total_rate,
        stderr_n_per_atom=stderr_n,
        stderr_delta_tau=math.sqrt(var_dt) if var_dt == var_dt else float("nan"),
        n_fit_bins=int(y.size),
    )


@dataclass(frozen=True)
class SlidingCount:
    """Breakpoint representation of the transient count rate.

    ``counts[k]`` is the exact number of events inside the closed window
    [times[k], times[k] + window].  Breakpoints are the only places the
    function can change: each event enters the window at (t - window) and
    leaves just after t.
    """

    times: np.ndarray
    counts: np.ndarray
    window: float


def _sweep(t_ns: np.ndarray, w_ns: int):
    """Event-driven sweep of the sliding window count.

    Yields (time_ns, count_at_time, count_after_time) for every breakpoint,
    where *at* includes events whose window membership ends exactly there
    (the window is closed on both ends) and *after* is the value on the
    open interval to the next breakpoint.
    """
    n = t_ns.size
    if n == 0:
        return
    bp = np.concatenate([t_ns - w_ns, t_ns])
    kind = np.concatenate([np.zeros(n, np.int8), np.ones(n, np.int8)])  # 0 enter
    order = np.lexsort((kind, bp))
    bp = bp[order]
    kind = kind[order]
    count = 0
    i = 0
    total = bp.size
    while i < total:
        t = bp[i]
        j = i
        while j < total and bp[j] == t and kind[j] == 0:
            count += 1
            j += 1
        at = count
        while j < total and bp[j] == t:
            count -= 1
            j += 1
        yield int(t), at, count
        i = j


def sliding_count(stream: EventStream, window: float) -> SlidingCount:
    """Exact transient count rate over a smoothly sliding window.

    Two-pointer, event-driven evaluation: breakpoints sit at the event
    times and at the event times minus the window, with no fixed grid.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    t_ns = stream.times_ns
    w_ns = int(round(window * 1e9))
    times = []
    counts = []
    for t, at, _ in _sweep(t_ns, w_ns):
        times.append(t)
        counts.append(at)
    return SlidingCount(
        times=np.asarray(times, dtype=np.int64) / 1e9,
        counts=np.asarray(counts, dtype=np.int64),
        window=window,
    )


@dataclass(frozen=True)
class DetectionReport:
    """Atoms recovered from a stream by threshold discrimination."""

    atom_arrivals: np.ndarray  # window left edges (s), sorted
    peak_heights: np.ndarray  # int counts, one per excursion
    threshold: int
    window: float
    predicted_fake_prob: float  # per window, from Poisson tails
    predicted_miss_prob: float  # per atom
    histogram: np.ndarray  # counts indexed by peak height

    @property
    def n_detected(self) -> int:
        return self.atom_arrivals.size


def detect_atoms(
    stream: EventStream,
    window: float,
    threshold: int,
    lambda_noise: float | None = None,
    lambda_signal: float | None = None,
) -> DetectionReport:
    """Burst search: excursions of the sliding count above a threshold.

    Each maximal excursion with count >= threshold is reported as one
    atom.  The arrival time is the left edge of the earliest window that
    attains the excursion's maximum, so for an isolated burst the window
    borders line up with the atom's transit.  Excursions separated by a
    dip below threshold count as distinct atoms; overlapping transits are
    not deconvolved.

    ``lambda_noise`` and ``lambda_signal`` feed the Poissonian error-rate
    predictions in the report; when omitted they are estimated from the
    stream itself (background rate outside the detected bursts, mean peak
    height inside).
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    if not window > 0:
        raise ValueError("window must be positive")
    t_ns = stream.times_ns
    w_ns = int(round(window * 1e9))

    arrivals = []
    peaks = []
    in_exc = False
    peak = 0
    peak_t = 0
    for t, at, after in _sweep(t_ns, w_ns):
        if not in_exc:
            if at >= threshold:
                in_exc = True
                peak = at
                peak_t = t
        elif at > peak:
            peak = at
            peak_t = t
        if in_exc and after < threshold:
            arrivals.append(peak_t)
            peaks.append(peak)
            in_exc = False
    if in_exc:  # excursion still open at the end of the record
        arrivals.append(peak_t)
        peaks.append(peak)

    arrivals = np.asarray(arrivals, dtype=np.int64) / 1e9
    peaks = np.asarray(peaks, dtype=np.int64)

    if lambda_noise is None:
        lambda_noise = _background_window_mean(stream, arrivals, window)
    if lambda_signal is None:
        lambda_signal = float(peaks.mean() - lambda_noise) if peaks.size else float("nan")
    if lambda_signal == lambda_signal and lambda_signal > 0:
        fake, miss = poisson_error_rates(lambda_noise, lambda_signal, threshold)
    else:
        fake, _ = poisson_error_rates(lambda_noise, 1.0, threshold)
        miss = float("nan")

    hist = np.bincount(peaks) if peaks.size else np.zeros(0, dtype=np.int64)
    return DetectionReport(
        atom_arrivals=arrivals,
        peak_heights=peaks,
        threshold=int(threshold),
        window=window,
        predicted_fake_prob=fake,
        predicted_miss_prob=miss,
        histogram=hist,
    )


def _background_window_mean(stream, arrivals, window):
    """Mean count per window away from the detected bursts."""
    if stream.times.size == 0 or stream.duration <= 0:
        return 0.0
    if arrivals.size == 0:
        return stream.times.size / stream.duration * window
    lo = arrivals - window
    hi = arrivals + 2.0 * window
    inside = np.zeros(stream.times.size, dtype=bool)
    for a, b in zip(lo, hi):
        i0, i1 = np.searchsorted(stream.times, [a, b])
        inside[i0:i1] = True
    covered = float(np.minimum(hi, stream.duration).clip(0).sum() - lo.clip(0).sum())
    free = max(stream.duration - covered, window)
    return (~inside).sum() / free * window


def _poisson_cdf(lam: float, k: int) -> float:
    # Direct term-by-term summation of the probability mass function.
    if lam < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if k < 0:
        return 0.0
    if lam == 0.0:
        return 1.0
    term = math.exp(-lam)
    total = term
    for i in range(1, k + 1):
        term *= lam / i
        total += term
    return min(total, 1.0)


def poisson_error_rates(
    lambda_noise: float, lambda_signal: float, threshold: int
) -> tuple[float, float]:
    """False-positive and miss probabilities of the threshold detector.

    fake: probability that a window holding only background reaches the
    threshold, P(X >= threshold) for X ~ Poisson(lambda_noise).

    miss: probability that a window holding one atom stays below it.  The
    atom's window collects the background as well, so the count is
    Poisson(lambda_signal + lambda_noise) and
    miss = P(X < threshold | lambda_signal + lambda_noise).

    Both are evaluated by exact summation of the Poisson terms.
    """
    if lambda_noise < 0 or lambda_signal < 0:
        raise ValueError("Poisson means must be nonnegative")
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    fake = 1.0 - _poisson_cdf(lambda_noise, threshold - 1)
    miss = _poisson_cdf(lambda_noise + lambda_signal, threshold - 1)
    return fake, miss


def optimal_threshold(
    lambda_noise: float,
    lambda_signal: float,
    fake_weight: float = 1.0,
    miss_weight: float = 1.0,
    max_threshold: int | None = None,
) -> int:
    """Threshold minimizing the weighted sum of the two error rates.

    By default the per-window fake probability and the per-atom miss
    probability are balanced with equal cost; the weights are exposed for
    callers that prefer expected-occurrence weighting.  Ties go to the
    lower threshold.
    """
    if not lambda_signal > lambda_noise:
        raise ValueError("require lambda_signal > lambda_noise")
    if max_threshold is None:
        mean = lambda_noise + lambda_signal
        max_threshold = int(mean + 10.0 * math.sqrt(mean) + 10)
    best_k = 1
    best_cost = math.inf
    for k in range(1, max_threshold + 1):
        fake, miss = poisson_error_rates(lambda_noise, lambda_signal, k)
        cost = fake_weight * fake + miss_weight * miss
        if cost < best_cost - 0.0:
            best_cost = cost
            best_k = k
    return best_k


def peak_histogram(
    report: DetectionReport, noise_report: DetectionReport | None = None
):
    """Aligned peak-height histograms for a signal and a background run.

    Returns (heights, signal_counts, noise_counts); ``noise_counts`` is
    None when no background report is given.  Only peaks enter, so the
    zero bin is empty by construction.
    """
    n = max(
        report.histogram.size,
        noise_report.histogram.size if noise_report is not None else 0,
        1,
    )
    heights = np.arange(n)
    sig = np.zeros(n, dtype=np.int64)
    sig[: report.histogram.size] = report.histogram
    if noise_report is None:
        return heights, sig, None
    noi = np.zeros(n, dtype=np.int64)
    noi[: noise_report.histogram.size] = noise_report.histogram
    return heights, sig, noi
