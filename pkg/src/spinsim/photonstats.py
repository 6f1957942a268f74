"""Photon-statistics pipeline: correlator, empirical g2 fits, rate inversion.

Timestamps are integer picoseconds. The correlator counts directed
cross-channel pairs (start channel 0, stop channel 1) into delay bins and
normalizes by the uncorrelated expectation r0*r1*T*width per bin, so an
uncorrelated pair of Poisson streams averages to one. The empirical model

    g2(t) = 1 - C1 exp(-t/tau1) + sum_{i>=2} C_i exp(-t/tau_i)

is fitted by weighted Levenberg-Marquardt in (C, ln tau) coordinates with
Poisson per-bin uncertainties, comparing model orders by reduced chi-square.
"""

import csv
import math
import random
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from .dynamics import RateMatrix

PS_PER_SECOND = 1e12


class FitError(RuntimeError):
    pass


class TimeTagRecord(NamedTuple):
    channel: int
    timestamp_ps: int


@dataclass(frozen=True)
class TagStream:
    """Time-tagged photon records split by detector channel."""

    channels: np.ndarray
    timestamps_ps: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channels)
        ts = np.asarray(self.timestamps_ps)
        if ch.shape != ts.shape or ch.ndim != 1:
            raise ValueError("channels and timestamps must be 1-d arrays of equal length")
        for c in (0, 1):
            t = ts[ch == c]
            if len(t) > 1 and np.any(np.diff(t) < 0):
                raise ValueError(f"timestamps must be non-decreasing on channel {c}")

    def __len__(self):
        return len(self.channels)

    def __iter__(self):
        for c, t in zip(self.channels, self.timestamps_ps):
            yield TimeTagRecord(int(c), int(t))

    def channel_times(self, channel):
        return np.asarray(self.timestamps_ps)[np.asarray(self.channels) == channel]

    @property
    def span_ps(self):
        ts = np.asarray(self.timestamps_ps)
        return int(ts.max() - ts.min()) if len(ts) else 0

    @classmethod
    def from_records(cls, records):
        records = list(records)
        ch = np.array([r[0] for r in records], dtype=np.uint8)
        ts = np.array([r[1] for r in records], dtype=np.int64)
        return cls(channels=ch, timestamps_ps=ts)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["channel", "timestamp_ps"])
            for c, t in zip(self.channels, self.timestamps_ps):
                writer.writerow([int(c), int(t)])

    @classmethod
    def read_csv(cls, path):
        ch, ts = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["channel", "timestamp_ps"]:
                raise ValueError("expected header 'channel,timestamp_ps'")
            for row in reader:
                ch.append(int(row[0]))
                ts.append(int(row[1]))
        return cls(channels=np.array(ch, dtype=np.uint8), timestamps_ps=np.array(ts, dtype=np.int64))

    def write_binary(self, path):
        rec = np.empty(len(self), dtype=[("ch", "u1"), ("ts", "<u8")])
        rec["ch"] = self.channels
        rec["ts"] = self.timestamps_ps
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(self)))
            fh.write(rec.tobytes())

    @classmethod
    def read_binary(cls, path):
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            rec = np.frombuffer(fh.read(), dtype=[("ch", "u1"), ("ts", "<u8")], count=count)
        return cls(
            channels=rec["ch"].astype(np.uint8),
            timestamps_ps=rec["ts"].astype(np.int64),
        )


@dataclass(frozen=True)
class G2Histogram:
    """Normalized coincidence histogram with per-bin Poisson uncertainties."""

    bin_edges_s: np.ndarray
    counts: np.ndarray
    normalization: np.ndarray
    values: np.ndarray
    poisson_sigma: np.ndarray

    @classmethod
    def from_counts(cls, bin_edges_s, counts, normalization):
        counts = np.asarray(counts, float)
        normalization = np.asarray(normalization, float)
        values = counts / normalization
        sigma = np.sqrt(np.maximum(counts, 1.0)) / normalization
        return cls(
            bin_edges_s=np.asarray(bin_edges_s, float),
            counts=counts,
            normalization=normalization,
            values=values,
            poisson_sigma=sigma,
        )

    @property
    def bin_centers_s(self):
        e = self.bin_edges_s
        if e[0] > 0:
            return np.sqrt(e[:-1] * e[1:])
        return 0.5 * (e[:-1] + e[1:])

    @property
    def n_populated(self):
        return int(np.count_nonzero(self.counts))

    def merge(self, other):
        """Combine shard histograms computed on the same bin grid."""
        if not np.array_equal(self.bin_edges_s, other.bin_edges_s):
            raise ValueError("histograms must share bin edges to merge")
        return G2Histogram.from_counts(
            self.bin_edges_s, self.counts + other.counts, self.normalization + other.normalization
        )


def _binning_edges(window_s, binning, points_per_decade, bin_width_s):
    t_min, t_max = window_s
    if t_max <= t_min:
        raise ValueError("window must satisfy t_min < t_max")
    if binning == "log":
        if t_min <= 0:
            raise ValueError("log binning requires t_min > 0")
        n = max(int(math.ceil(points_per_decade * math.log10(t_max / t_min))), 1)
        return np.logspace(math.log10(t_min), math.log10(t_max), n + 1)
    if binning == "linear":
        if not bin_width_s or bin_width_s <= 0:
            raise ValueError("linear binning requires a positive bin_width_s")
        n = max(int(math.ceil((t_max - t_min) / bin_width_s)), 1)
        return t_min + bin_width_s * np.arange(n + 1)
    raise ValueError(f"unknown binning {binning!r}")


def compute_g2(stream, window_s, binning="log", points_per_decade=25, bin_width_s=None):
    """Cross-correlation histogram of a two-channel tag stream.

    Pairs are counted with channel 0 as start and channel 1 as stop; start
    events within t_max of the record end are excluded so every start sees a
    complete window. Expected coincidences per bin for uncorrelated streams
    are n_starts * r1 * width, which normalizes flat g2 to one.
    """
    ch0 = np.sort(stream.channel_times(0)).astype(np.float64)
    ch1 = np.sort(stream.channel_times(1)).astype(np.float64)
    if len(ch0) < 2 or len(ch1) < 2:
        raise ValueError("need at least two tags in each channel")
    if len(ch0) == len(ch1) and np.array_equal(ch0, ch1):
        raise ValueError("channels carry identical timestamps; detector pairs must be distinct")
    edges_s = _binning_edges(window_s, binning, points_per_decade, bin_width_s)
    edges_ps = edges_s * PS_PER_SECOND

    t_first = min(ch0[0], ch1[0])
    t_last = max(ch0[-1], ch1[-1])
    span_ps = t_last - t_first
    if edges_ps[-1] >= span_ps:
        raise ValueError("window exceeds the record span")
    starts = ch0[ch0 <= t_last - edges_ps[-1]]
    if len(starts) == 0:
        raise ValueError("no start events leave a complete correlation window")

    counts = np.empty(len(edges_ps) - 1)
    lo = np.searchsorted(ch1, starts + edges_ps[0])
    for k in range(1, len(edges_ps)):
        hi = np.searchsorted(ch1, starts + edges_ps[k])
        counts[k - 1] = (hi - lo).sum()
        lo = hi
    rate1_hz = len(ch1) / (span_ps / PS_PER_SECOND)
    normalization = len(starts) * rate1_hz * np.diff(edges_s)
    return G2Histogram.from_counts(edges_s, counts, normalization)


# ---------------------------------------------------------------------------
# Empirical multi-exponential model
# ---------------------------------------------------------------------------

def _model_signs(n):
    s = np.ones(n)
    s[0] = -1.0
    return s


def evaluate_g2_model(t, amplitudes, lifetimes):
    """Point values of 1 - C1 e^{-t/tau1} + sum C_i e^{-t/tau_i}."""
    t = np.asarray(t, float)
    out = np.ones_like(t)
    for s, c, tau in zip(_model_signs(len(amplitudes)), amplitudes, lifetimes):
        out = out + s * c * np.exp(-t / tau)
    return out


def g2_model_bin_means(edges, amplitudes, lifetimes):
    """Bin-averaged model values (exact integral over each bin)."""
    a, b = edges[:-1], edges[1:]
    out = (b - a).astype(float).copy()
    for s, c, tau in zip(_model_signs(len(amplitudes)), amplitudes, lifetimes):
        out = out + s * c * tau * (np.exp(-a / tau) - np.exp(-b / tau))
    return out / (b - a)


@dataclass(frozen=True)
class EmpiricalFit:
    """Best-fit empirical g2 parameters, lifetimes ascending.

    The covariance is expressed in (C_1..C_n, ln tau_1..ln tau_n)
    coordinates with the per-bin uncertainties taken as given (no reduced
    chi-square rescaling); candidate_chi2 records the reduced chi-square of
    every model order tried during selection.
    """

    order: int
    amplitudes: tuple
    lifetimes_s: tuple
    covariance: np.ndarray
    reduced_chi2: float
    candidate_chi2: dict

    def __post_init__(self):
        if list(self.lifetimes_s) != sorted(self.lifetimes_s):
            raise ValueError("lifetimes must ascend")
        if self.amplitudes[0] <= 0:
            raise FitError("antibunching amplitude C1 is not positive; fit unidentifiable")

    @property
    def amplitude_sigmas(self):
        return tuple(np.sqrt(np.diag(self.covariance))[: self.order])

    @property
    def lifetime_log_sigmas(self):
        return tuple(np.sqrt(np.diag(self.covariance))[self.order :])

    @property
    def lifetime_sigmas_s(self):
        return tuple(t * s for t, s in zip(self.lifetimes_s, self.lifetime_log_sigmas))

    @property
    def g2_zero(self):
        return 1.0 - self.amplitudes[0] + sum(self.amplitudes[1:])

    @property
    def identifiable(self):
        """False when the antibunching amplitude is consistent with zero."""
        return bool(self.amplitudes[0] > 2.0 * self.amplitude_sigmas[0])

    def evaluate(self, t_s):
        return evaluate_g2_model(t_s, self.amplitudes, self.lifetimes_s)


def _seed_parameters(t, y, n, t_lo, t_hi):
    """Heuristic starting point from histogram features.

    C seeds come from the value extrema (dip floor and bunching peak), tau1
    from the half-rise of the dip and tau2 from a log-linear regression of
    the post-peak decay of y - 1.
    """
    g2_0 = float(np.mean(y[: max(2, len(y) // 50)]))
    imax = int(np.argmax(y))
    peak = float(y[imax])
    bunch = max(peak - 1.0, 0.02)
    c1 = max(1.0 + bunch - g2_0, 0.05)
    half = g2_0 + 0.5 * (peak - g2_0)
    risen = np.nonzero(y[: imax + 1] >= half)[0]
    tau1 = float(t[risen[0]]) if len(risen) else float(t[max(imax // 2, 1)])
    tau1 = min(max(tau1, t_lo), t_hi)
    tail = np.nonzero((t > t[imax]) & (y > 1.0 + 0.05 * bunch))[0]
    if len(tail) >= 3:
        slope = np.polyfit(t[tail], np.log(np.maximum(y[tail] - 1.0, 1e-12)), 1)[0]
        tau2 = -1.0 / slope if slope < 0 else 10.0 * t[imax]
    else:
        tau2 = 10.0 * t[imax]
    tau2 = min(max(tau2, 3.0 * tau1), t_hi)
    if n == 2:
        return np.array([c1, bunch]), np.array([tau1, tau2])
    extra = np.logspace(math.log10(tau2 * 3.0), math.log10(max(t_hi / 2.0, tau2 * 9.0)), n - 2)
    amps = np.array([c1, bunch] + [0.15 * bunch] * (n - 2))
    return amps, np.concatenate([[tau1, tau2], extra])


def _fit_single_order(predict, t_repr, y, sigma, n, rng, irls_rounds, t_lo, t_hi):
    """Multi-start LM fit of one model order with optional Pearson reweighting."""

    def residuals_factory(sig):
        def resid(theta):
            amps = theta[:n]
            taus = np.exp(np.clip(theta[n:], -80.0, 40.0))
            return (predict(amps, taus) - y) / sig
        return resid

    amps0, taus0 = _seed_parameters(t_repr, y, n, t_lo, t_hi)
    starts = [(amps0, taus0)]
    for f in (0.1, 0.3, 3.0, 10.0):
        alt = taus0.copy()
        alt[0] = min(max(alt[0] * f, t_lo), t_hi)
        starts.append((amps0, alt))
    if n >= 3:
        for fa, fb in ((1.0 / 3.0, 3.0), (1.0, 10.0), (0.1, 1.0), (1.0 / 3.0, 10.0)):
            alt = taus0.copy()
            alt[1] = taus0[1] * fa
            alt[2] = min(taus0[1] * fb, t_hi)
            starts.append((amps0, alt))

    best = None
    sig = np.asarray(sigma, float)
    # amplitudes far beyond the data's excursion mark cancellation-pair minima
    amp_cap = 50.0 * max(1.0, float(np.max(np.abs(y - 1.0))))
    for round_i in range(1 + irls_rounds):
        resid = residuals_factory(sig)
        round_starts = starts if round_i == 0 else [(best.x[:n], np.exp(best.x[n:]))]
        round_best = None
        for amps_s, taus_s in round_starts:
            for jitter in range(3 if round_i == 0 else 1):
                theta0 = np.concatenate([amps_s, np.log(taus_s)])
                if jitter:
                    theta0[:n] = theta0[:n] * rng.uniform(0.6, 1.7, n)
                    theta0[n:] = theta0[n:] + rng.uniform(-0.8, 0.8, n)
                try:
                    res = least_squares(resid, theta0, method="lm", max_nfev=60000)
                except Exception:
                    continue
                if not np.all(np.isfinite(res.x)) or np.max(np.abs(res.x[:n])) > amp_cap:
                    continue
                if round_best is None or res.cost < round_best.cost - 1e-14:
                    round_best = res
            if round_best is not None and np.max(np.abs(round_best.fun)) < 1e-8:
                break  # essentially exact fit; no further starts needed
        if round_best is None:
            raise FitError(f"order-{n} fit did not converge after bounded restarts")
        best = round_best
        if round_i < irls_rounds:
            # Pearson reweight: recover per-bin normalizations from (y, sigma)
            # (counts = (y/sigma)^2, norm = counts/y) and rebuild sigma from
            # the model-expected counts, floored at one count.
            model = predict(best.x[:n], np.exp(best.x[n:]))
            counts = np.where(y > 0, (y / sig) ** 2, 0.0)
            norm = np.where(y > 0, counts / np.maximum(y, 1e-300), 1.0 / sig)
            sig = np.sqrt(np.maximum(model * norm, 1.0)) / norm

    amps = best.x[:n]
    log_taus = best.x[n:]
    order_idx = np.argsort(log_taus)
    amps = amps[order_idx]
    log_taus = log_taus[order_idx]
    dof = max(len(y) - 2 * n, 1)
    red_chi2 = 2.0 * best.cost / dof
    jtj = best.jac.T @ best.jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    perm = np.concatenate([order_idx, n + order_idx])
    cov = cov[np.ix_(perm, perm)]
    if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) <= 0):
        raise FitError(f"order-{n} fit has a degenerate covariance")
    return amps, np.exp(log_taus), cov, red_chi2


def _select_order(results, orders, improvement):
    ordered = sorted(orders)
    for i, n in enumerate(ordered[:-1]):
        nxt = ordered[i + 1]
        prev_chi2 = results[n][3]
        if results[nxt][3] >= (1.0 - improvement) * prev_chi2:
            return n
    return ordered[-1]


def _run_fit(predict, t_repr, y, sigma, orders, improvement, rng_seed, irls_rounds):
    rng = np.random.default_rng(rng_seed)
    t_lo, t_hi = float(t_repr[0]), float(t_repr[-1])
    results = {}
    failures = {}
    for n in sorted(orders):
        try:
            results[n] = _fit_single_order(predict, t_repr, y, sigma, n, rng, irls_rounds, t_lo, t_hi)
        except FitError as exc:
            failures[n] = exc
    if not results:
        raise FitError(f"no candidate order converged: {failures}")
    selected = _select_order(results, list(results), improvement)
    amps, taus, cov, red_chi2 = results[selected]
    return EmpiricalFit(
        order=selected,
        amplitudes=tuple(float(a) for a in amps),
        lifetimes_s=tuple(float(t) for t in taus),
        covariance=cov,
        reduced_chi2=float(red_chi2),
        candidate_chi2={n: float(r[3]) for n, r in results.items()},
    )


def fit_empirical(hist, orders=(2, 3), chi2_improvement=0.10, rng_seed=0, irls_rounds=2):
    """Weighted fit of the empirical model to a G2Histogram.

    Model predictions are bin averages (exact exponential integrals), the
    weights are the per-bin Poisson uncertainties refined by two rounds of
    reweighting from the fitted model, and the reported order is the lowest
    whose reduced chi-square the next order fails to improve by more than
    chi2_improvement (default 10%).
    """
    if hist.n_populated < 10 * max(orders):
        raise FitError(
            f"need at least {10 * max(orders)} populated bins, have {hist.n_populated}"
        )
    edges = hist.bin_edges_s

    def predict(amps, taus):
        return g2_model_bin_means(edges, amps, taus)

    return _run_fit(
        predict,
        hist.bin_centers_s,
        np.asarray(hist.values, float),
        np.asarray(hist.poisson_sigma, float),
        orders,
        chi2_improvement,
        rng_seed,
        irls_rounds,
    )


def fit_g2_curve(curve, orders=(2,), sigma=None, chi2_improvement=0.10, rng_seed=0):
    """Fit the empirical model to sampled g2 values (e.g. simulated curves).

    Uses pointwise model evaluation and uniform weights unless sigma is given.
    """
    t = np.asarray(curve.delays, float)
    y = np.asarray(curve.values, float)
    mask = t > 0
    t, y = t[mask], y[mask]
    if len(t) < 4 * max(orders):
        raise FitError(f"need at least {4 * max(orders)} positive-delay samples, have {len(t)}")
    sig = np.full_like(y, 1.0) if sigma is None else np.asarray(sigma, float)[mask]

    def predict(amps, taus):
        return evaluate_g2_model(t, amps, taus)

    return _run_fit(predict, t, y, sig, orders, chi2_improvement, rng_seed, irls_rounds=0)


# ---------------------------------------------------------------------------
# Background correction and rate inversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackgroundRatio:
    """Signal fraction rho = I/(I + I_bkgd)."""

    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")


def _rho_value(rho):
    return rho.rho if isinstance(rho, BackgroundRatio) else BackgroundRatio(rho).rho


def background_correct_amplitudes(fit, rho):
    """Background-corrected amplitudes C_i/rho^2."""
    r = _rho_value(rho)
    return tuple(c / r**2 for c in fit.amplitudes)


def background_correct_curve(hist, rho):
    """Apply g2 -> (g2 - (1 - rho^2))/rho^2 with uncertainties scaled 1/rho^2."""
    r = _rho_value(rho)
    values = (hist.values - (1.0 - r**2)) / r**2
    return replace(hist, values=values, poisson_sigma=hist.poisson_sigma / r**2)


def background_uncorrect_curve(hist, rho):
    """Inverse of background_correct_curve: g2 = rho^2 g2~ + (1 - rho^2)."""
    r = _rho_value(rho)
    values = r**2 * hist.values + (1.0 - r**2)
    return replace(hist, values=values, poisson_sigma=hist.poisson_sigma * r**2)


def estimate_rates_three_level(tau1_s, tau2_s, c2, x):
    """Closed-form three-level rates (Gamma_s, Gamma_ISC1, Gamma_ISC2) in MHz.

    Gamma_s ~ (1/tau1)/(1+x); Gamma_ISC2 ~ (1/tau2)/(1+C2);
    Gamma_ISC1 ~ ((1+x)/x)(1/tau2 - Gamma_ISC2). Valid when the shelving
    decay is slow compared to the shelving rate.
    """
    if tau1_s <= 0 or tau2_s <= 0 or x <= 0 or c2 < 0:
        raise ValueError("timescales and x must be positive, C2 nonnegative")
    gamma_s = 1.0 / (tau1_s * (1.0 + x))
    gamma_isc2 = 1.0 / (tau2_s * (1.0 + c2))
    gamma_isc1 = (1.0 + x) / x * (1.0 / tau2_s - gamma_isc2)
    return gamma_s / 1e6, gamma_isc1 / 1e6, gamma_isc2 / 1e6


# ---------------------------------------------------------------------------
# Stochastic trajectory generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloStream:
    """Photon tags from a stochastic trajectory plus trajectory bookkeeping."""

    tags: TagStream
    n_transitions: int
    duration_s: float


def monte_carlo_stream(rate_matrix, duration_s, seed, radiative_edges=None, initial_state=0):
    """Stochastic jump trajectory of the rate matrix emitting photon tags.

    Every radiative transition emits one tag assigned to channel 0 or 1 with
    probability 1/2 (a balanced beamsplitter). Fixed seeds reproduce streams
    exactly. Rates are MHz, so internal time advances in microseconds.
    """
    if isinstance(rate_matrix, RateMatrix):
        r = rate_matrix.matrix
        if radiative_edges is None:
            radiative_edges = rate_matrix.radiative_edges
    else:
        r = np.asarray(rate_matrix, float)
        if radiative_edges is None:
            raise ValueError("radiative_edges is required for a bare matrix")
    if duration_s < 0:
        raise ValueError("duration must be nonnegative")
    n = r.shape[0]
    radiative = set((int(i), int(j)) for i, j in radiative_edges)
    exit_rates = [-float(r[j, j]) for j in range(n)]
    tables = []
    for j in range(n):
        rows = []
        cum = 0.0
        for i in range(n):
            if i != j and r[i, j] > 0:
                cum += float(r[i, j]) / exit_rates[j]
                rows.append((cum, i, (i, j) in radiative))
        if rows:
            rows[-1] = (math.inf, rows[-1][1], rows[-1][2])
        tables.append(tuple(rows))

    rng = random.Random(seed)
    uniform = rng.random
    log = math.log
    duration_us = duration_s * 1e6
    t = 0.0
    state = int(initial_state)
    n_transitions = 0
    times_us = []
    channels = []
    while True:
        lam = exit_rates[state]
        if lam <= 0.0:
            break
        t += -log(1.0 - uniform()) / lam
        if t >= duration_us:
            break
        u = uniform()
        for threshold, target, emits in tables[state]:
            if u < threshold:
                if emits:
                    times_us.append(t)
                    channels.append(rng.getrandbits(1))
                state = target
                break
        n_transitions += 1
    ts = np.array(np.round(np.array(times_us) * 1e6), dtype=np.int64)
    tags = TagStream(channels=np.array(channels, dtype=np.uint8), timestamps_ps=ts)
    return MonteCarloStream(tags=tags, n_transitions=n_transitions, duration_s=duration_s)
