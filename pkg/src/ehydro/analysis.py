"""Mode extraction from aggregate time series.

Three tools, usable on output of either the field simulation or the ODE
systems:

* :func:`fit_modes` projects a series onto constants, harmonics and
  exponentials with known parameters;
* :func:`spectrum` finds dominant oscillation frequencies after removing an
  exponential-plus-constant trend;
* :func:`growth_rate` estimates the rate of an eventually dominant exponential.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.optimize
import scipy.signal

from .espace import FloatArray


class ConditioningWarning(UserWarning):
    """The fit basis is numerically close to rank deficient."""


@dataclass
class ModeFit:
    """Least-squares fit of a series onto a fixed basis.

    ``terms`` lists ``(kind, parameter)`` with kind one of ``const``, ``cos``,
    ``sin``, ``exp``; ``exp`` terms carry the signed rate.
    """

    terms: list[tuple[str, float]]
    coefficients: FloatArray
    residual: float
    condition: float

    def coefficient(self, kind: str, parameter: float = 0.0) -> float:
        for (k, p), c in zip(self.terms, self.coefficients):
            if k == kind and math.isclose(p, parameter, rel_tol=1e-12, abs_tol=1e-15):
                return float(c)
        raise KeyError(f"no {kind} term with parameter {parameter}")

    def evaluate(self, t: FloatArray) -> FloatArray:
        return _basis(np.asarray(t, dtype=float), self.terms) @ self.coefficients

    def describe(self) -> str:
        lines = [f"{'term':<22}{'coefficient':>24}"]
        for (k, p), c in zip(self.terms, self.coefficients):
            lines.append(f"{_term_name(k, p):<22}{c:>24.15g}")
        lines.append(f"relative residual {self.residual:.3e}   condition {self.condition:.3e}")
        return "\n".join(lines)


def _term_name(kind: str, p: float) -> str:
    if kind == "const":
        return "1"
    if kind == "exp":
        return f"exp({p:+.6g} t)"
    return f"{kind}({p:.6g} t)"


def basis_terms(frequencies: Sequence[float] = (), rates: Sequence[float] = (), constant: bool = True) -> list[tuple[str, float]]:
    terms: list[tuple[str, float]] = [("const", 0.0)] if constant else []
    for w in frequencies:
        terms += [("cos", float(w)), ("sin", float(w))]
    for g in rates:
        terms += [("exp", float(g)), ("exp", -float(g))]
    return terms


def _basis(t: FloatArray, terms: list[tuple[str, float]]) -> FloatArray:
    cols = []
    for kind, p in terms:
        if kind == "const":
            cols.append(np.ones_like(t))
        elif kind == "cos":
            cols.append(np.cos(p * t))
        elif kind == "sin":
            cols.append(np.sin(p * t))
        elif kind == "exp":
            cols.append(np.exp(p * t))
        else:
            raise ValueError(f"unknown basis term {kind!r}")
    return np.stack(cols, axis=1)


def _check_distinct(values: Sequence[float], what: str) -> None:
    vals = sorted(abs(float(v)) for v in values)
    if any(v == 0.0 for v in vals):
        raise ValueError(f"{what} must be nonzero (zero duplicates the constant term)")
    for lo, hi in zip(vals, vals[1:]):
        if math.isclose(lo, hi, rel_tol=1e-12):
            raise ValueError(f"{what} must be distinct, got {list(values)}")


def fit_modes(
    t: Sequence[float],
    series: Sequence[float],
    frequencies: Sequence[float] = (),
    rates: Sequence[float] = (),
    constant: bool = True,
    cond_warn: float = 1e10,
) -> ModeFit:
    """Project ``series`` onto ``{1, cos ω t, sin ω t, exp(±γ t)}``.

    Each rate contributes both signs.  Columns are scaled to unit norm before
    solving so the condition estimate reflects near-coincident modes rather
    than the size of the exponentials.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and series must be 1-D arrays of equal length")
    _check_distinct(frequencies, "frequencies")
    _check_distinct(rates, "rates")
    terms = basis_terms(frequencies, rates, constant)
    if not terms:
        raise ValueError("empty basis")
    if len(y) < 2 * len(terms):
        raise ValueError(f"{len(y)} samples cannot support a {len(terms)}-term fit (need {2 * len(terms)})")
    G = _basis(t, terms)
    norms = np.linalg.norm(G, axis=0)
    Gs = G / norms
    cond = float(np.linalg.cond(Gs))
    if not np.isfinite(cond) or cond > cond_warn:
        warnings.warn(f"fit basis is ill-conditioned (condition number {cond:.3e})", ConditioningWarning, stacklevel=2)
    sol, *_ = np.linalg.lstsq(Gs, y, rcond=None)
    coef = sol / norms
    ny = float(np.linalg.norm(y))
    resid = float(np.linalg.norm(y - Gs @ sol))
    rel = resid / ny if ny > 0.0 else resid
    return ModeFit(terms, coef, rel, cond)


# -- growth ------------------------------------------------------------------


def growth_rate(series: Sequence[float], t: Sequence[float]) -> float:
    """Exponential rate from a log-linear fit over the trailing half."""
    y = np.asarray(series, dtype=float)
    t = np.asarray(t, dtype=float)
    if y.shape != t.shape or len(y) < 4:
        raise ValueError("need at least 4 samples with matching times")
    half = len(y) // 2
    tail_y, tail_t = y[half:], t[half:]
    if np.any(tail_y <= 0.0) or not np.all(np.isfinite(tail_y)):
        raise ValueError("growth_rate needs positive finite samples over the trailing half")
    slope, _ = np.polyfit(tail_t, np.log(tail_y), 1)
    return float(slope)


# -- spectrum ----------------------------------------------------------------


@dataclass
class Spectrum:
    """Detrended power spectrum and its ranked peaks.

    ``peaks`` are refined frequencies in cycles per unit time, strongest
    first; ``peak_power`` are the corresponding averaged powers.
    """

    peaks: FloatArray
    peak_power: FloatArray
    frequencies: FloatArray
    power: FloatArray
    trend: str
    trend_rate: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def dominant(self) -> float:
        if not len(self.peaks):
            raise ValueError("spectrum has no peaks")
        return float(self.peaks[0])

    @property
    def median_power(self) -> float:
        return float(np.median(self.power[1:]))

    def significant(self, factor: float = 3.0) -> FloatArray:
        return self.peaks[self.peak_power > factor * self.median_power]


def detrend(t: FloatArray, y: FloatArray, keep: float = 0.9) -> tuple[FloatArray, str, float | None]:
    """Remove the best ``c0 + c1 exp(γ t)`` trend, or just the mean.

    Candidate rates come from a log-spaced grid of both signs plus the
    :func:`growth_rate` estimate when the trailing half is single-signed; the
    best candidate is refined by bounded minimization.  The exponential is
    kept only if it cuts the residual power below ``keep`` times that of the
    mean-only fit.
    """
    span = float(t[-1] - t[0])
    const = y - y.mean()
    rss0 = float(const @ const)
    if span <= 0.0 or rss0 == 0.0:
        return const, "constant", None

    def trend_fit(g: float) -> tuple[float, FloatArray]:
        G = np.stack([np.ones_like(t), np.exp(g * (t - t[-1]))], axis=1)
        c, *_ = np.linalg.lstsq(G, y, rcond=None)
        r = y - G @ c
        return float(r @ r), r

    grid = np.geomspace(0.1 / span, 40.0 / span, 48)
    cands = list(grid) + list(-grid)
    tail = y[len(y) // 2 :]
    if np.all(tail > 0.0) or np.all(tail < 0.0):
        g0 = growth_rate(np.sign(tail[0]) * y, t)
        if g0 != 0.0 and np.isfinite(g0):
            cands.append(g0)
    scores = [trend_fit(g)[0] for g in cands]
    g_best = cands[int(np.argmin(scores))]
    ratio = grid[1] / grid[0]
    lo, hi = sorted((g_best / ratio, g_best * ratio))
    best = scipy.optimize.minimize_scalar(lambda g: trend_fit(g)[0], bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * abs(g_best)})
    gamma = float(best.x) if best.fun <= min(scores) else g_best
    rss, resid = trend_fit(gamma)
    if rss > keep * rss0 or abs(gamma) * span < 1e-3:
        return const, "constant", None
    return resid, "constant+exponential", gamma


def spectrum(series: Sequence[float], dt: float, max_peaks: int = 8, pad_factor: int = 8) -> Spectrum:
    """Dominant frequencies (cycles per unit time) of a detrended series.

    Peaks are located on a segment-averaged (Welch) power spectrum, which
    keeps noise from producing spurious maxima, then sharpened on the
    full-length Hann-windowed, zero-padded periodogram by three-point
    quadratic interpolation of log power.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or len(y) < 64:
        raise ValueError("spectrum needs at least 64 samples")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = len(y)
    t = np.arange(n) * dt
    resid, trend, gamma = detrend(t, y)

    nperseg = int(min(n, max(64, 2 ** int(math.log2(max(n // 16, 1))))))
    freqs, power = scipy.signal.welch(resid, fs=1.0 / dt, nperseg=nperseg, detrend="linear")
    df_coarse = freqs[1] - freqs[0]

    nfft = pad_factor * 2 ** int(math.ceil(math.log2(n)))
    fine = np.abs(np.fft.rfft(resid * np.hanning(n), n=nfft)) ** 2
    ffreq = np.fft.rfftfreq(nfft, d=dt)
    dff = ffreq[1] - ffreq[0]

    interior = np.flatnonzero((power[1:-1] > power[:-2]) & (power[1:-1] >= power[2:])) + 1
    if len(power) > 1 and power[-1] > power[-2]:
        interior = np.append(interior, len(power) - 1)
    order = interior[np.argsort(power[interior])[::-1]][:max_peaks]

    peaks, ppow = [], []
    for k in order:
        lo = max(1, int((freqs[k] - 1.5 * df_coarse) / dff))
        hi = min(len(fine) - 2, int(math.ceil((freqs[k] + 1.5 * df_coarse) / dff)))
        if hi <= lo:
            continue
        j = lo + int(np.argmax(fine[lo : hi + 1]))
        j = min(max(j, 1), len(fine) - 2)
        a, b, c = np.log(fine[j - 1 : j + 2] + 1e-300)
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom < 0 else 0.0
        peaks.append(ffreq[j] + float(np.clip(shift, -0.5, 0.5)) * dff)
        ppow.append(power[k])
    notes = [f"segment length {nperseg}, refined on {nfft}-point periodogram"]
    return Spectrum(np.array(peaks), np.array(ppow), freqs, power, trend, gamma, notes)


# -- reporting ---------------------------------------------------------------


def mode_table(theoretical: dict[str, float], measured: dict[str, float]) -> str:
    lines = [f"{'mode':<12}{'theory':>14}{'measured':>14}{'rel. error':>12}"]
    for name, th in theoretical.items():
        me = measured.get(name)
        if me is None or th is None or math.isnan(th):
            lines.append(f"{name:<12}{_opt(th):>14}{_opt(me):>14}{'-':>12}")
            continue
        err = abs(me - th) / abs(th) if th else abs(me)
        lines.append(f"{name:<12}{th:>14.8g}{me:>14.8g}{err:>12.3e}")
    return "\n".join(lines)


def _opt(x) -> str:
    return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.8g}"


def analysis_report(
    fits: dict[str, ModeFit] | None = None,
    theoretical: dict[str, float] | None = None,
    measured: dict[str, float] | None = None,
    spectra: dict[str, Spectrum] | None = None,
) -> str:
    """Plain-text report: fitted coefficients, residuals, and the mode table."""
    out = []
    for name, fit in (fits or {}).items():
        out.append(f"== fit of {name}")
        out.append(fit.describe())
        out.append("")
    for name, sp in (spectra or {}).items():
        out.append(f"== spectrum of {name} (trend: {sp.trend}" + (f", rate {sp.trend_rate:.8g})" if sp.trend_rate is not None else ")"))
        for f, p in zip(sp.peaks[:5], sp.peak_power[:5]):
            out.append(f"peak {f:.8g} cycles/unit  (angular {2 * math.pi * f:.8g})  power {p:.4g}")
        out.append(f"median power {sp.median_power:.4g}")
        out.append("")
    if theoretical:
        out.append("== modes")
        out.append(mode_table(theoretical, measured or {}))
        out.append("")
    return "\n".join(out)
