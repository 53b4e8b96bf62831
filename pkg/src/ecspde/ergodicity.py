"""Time averaging, stationarity detection, and invariant-measure moments.

All estimators consume the zero-potential system's ledgers.  Finite-horizon
averages carry standard errors from both contiguous windows (within-path
mixing) and across ensemble paths, and a stationarity verdict gates any
claim about the time-asymptotic measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .diagnostics import EnergyLedger, LedgerError, cumtrapz

# observables derived from ledger columns: name -> (column, power)
OBSERVABLES = {
    "q_l2_sq": ("q_l2", 2),
    "q_l4_4": ("q_l4", 4),
    "q_h12_sq": ("q_h12", 2),
    "u_h1_sq": ("u_h1", 2),
    "u_h2_sq": ("u_h2", 2),
    "energy_h": (None, None),  # ||Lambda^{-1/2} q||^2 + ||u||^2
}

DEFAULT_OBSERVABLES = ("q_l2_sq", "q_l4_4", "q_h12_sq", "u_h1_sq")


def observable_series(ledger: EnergyLedger, name: str) -> np.ndarray:
    if name == "energy_h":
        return ledger.column("q_hm12") ** 2 + ledger.column("u_l2") ** 2
    if name in OBSERVABLES and OBSERVABLES[name][0] is not None:
        col, p = OBSERVABLES[name]
        return ledger.column(col) ** p
    if name in ledger.columns:
        return ledger.column(name)
    raise LedgerError(f"unknown observable {name!r}")


def _trapezoid_mean(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if len(t) < 2:
        return y[0]
    return np.trapezoid(y, t, axis=0) / (t[-1] - t[0])


@dataclass
class ObservableAverage:
    name: str
    mean: float
    path_means: np.ndarray  # (paths,)
    window_means: np.ndarray  # (windows,) path-averaged
    se_windows: float
    se_paths: float
    running_mean: np.ndarray  # (rows_post_burnin,) path-averaged


@dataclass
class TimeAverageReport:
    burn_in: float
    burn_in_index: int
    t_final: float
    windows: int
    times: np.ndarray
    averages: dict[str, ObservableAverage] = field(default_factory=dict)

    def verdict_names(self):
        return list(self.averages)


def time_average(
    ledger: EnergyLedger,
    observables=DEFAULT_OBSERVABLES,
    burn_in: float = 0.0,
    windows: int = 8,
) -> TimeAverageReport:
    """Trapezoid time averages over (burn_in, T], split into windows.

    Standard errors come from two independent reductions: the spread of
    contiguous window means (within-path decorrelation) and the spread of
    per-path means (across the ensemble).
    """
    t = ledger.times
    if burn_in >= t[-1]:
        raise LedgerError("empty post-burn-in window")
    i0 = int(np.searchsorted(t, burn_in, side="left"))
    if len(t) - i0 < max(2, windows):
        raise LedgerError("too few ledger rows after burn-in")
    tt = t[i0:]
    report = TimeAverageReport(
        burn_in=burn_in,
        burn_in_index=i0,
        t_final=float(t[-1]),
        windows=windows,
        times=tt,
    )
    edges = np.linspace(0, len(tt) - 1, windows + 1).astype(int)
    for name in observables:
        y = observable_series(ledger, name)[i0:]
        path_means = _trapezoid_mean(y, tt)
        wmeans = []
        for w in range(windows):
            a, b = edges[w], max(edges[w + 1], edges[w] + 1)
            wmeans.append(np.mean(_trapezoid_mean(y[a : b + 1], tt[a : b + 1])))
        wmeans = np.asarray(wmeans)
        acc = cumtrapz(y.mean(axis=1), tt)
        running = np.empty_like(acc)
        running[0] = y[0].mean()
        running[1:] = acc[1:] / (tt[1:] - tt[0])
        report.averages[name] = ObservableAverage(
            name=name,
            mean=float(np.mean(path_means)),
            path_means=np.atleast_1d(path_means),
            window_means=wmeans,
            se_windows=float(np.std(wmeans, ddof=1) / np.sqrt(windows)),
            se_paths=float(
                np.std(path_means, ddof=1) / np.sqrt(len(np.atleast_1d(path_means)))
                if np.size(path_means) > 1
                else 0.0
            ),
            running_mean=running,
        )
    return report


@dataclass
class StationarityVerdict:
    stationary: bool
    details: dict[str, dict]


def stationarity_test(report: TimeAverageReport, rel_tol: float = 0.10) -> StationarityVerdict:
    """First-half vs second-half window means, with overlap of 2-SE intervals."""
    details = {}
    ok_all = True
    half = report.windows // 2
    for name, avg in report.averages.items():
        first = avg.window_means[:half]
        second = avg.window_means[half:]
        m1, m2 = float(np.mean(first)), float(np.mean(second))
        se1 = float(np.std(first, ddof=1) / np.sqrt(len(first))) if len(first) > 1 else 0.0
        se2 = float(np.std(second, ddof=1) / np.sqrt(len(second))) if len(second) > 1 else 0.0
        scale = max(abs(m1), abs(m2), 1e-300)
        rel = abs(m1 - m2) / scale
        overlap = abs(m1 - m2) <= 2.0 * (se1 + se2)
        ok = rel <= rel_tol and (overlap or rel <= rel_tol / 2)
        ok_all = ok_all and ok
        details[name] = {
            "first_half": m1,
            "second_half": m2,
            "rel_diff": rel,
            "se_first": se1,
            "se_second": se2,
            "se_overlap": bool(overlap),
            "ok": bool(ok),
        }
    return StationarityVerdict(stationary=bool(ok_all), details=details)


def window_means_agree(a: ObservableAverage, b: ObservableAverage, n_se: float = 2.0) -> dict:
    """Whether two post-burn-in means agree within combined standard errors."""
    se_a = max(a.se_windows, a.se_paths)
    se_b = max(b.se_windows, b.se_paths)
    combined = np.hypot(se_a, se_b)
    diff = abs(a.mean - b.mean)
    return {
        "mean_a": a.mean,
        "mean_b": b.mean,
        "diff": diff,
        "combined_se": float(combined),
        "agree": bool(diff <= n_se * combined),
    }


# ---------------------------------------------------------------------------
# invariant-measure moment bounds


@dataclass
class MomentBoundResult:
    name: str
    t_checks: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    lhs_se: np.ndarray
    ok: bool
    slope: float
    slope_r2: float


def _ensemble_integral(col_sq: np.ndarray, t: np.ndarray):
    """Per-path cumulative time integral and its ensemble mean/SE."""
    acc = cumtrapz(col_sq, t)
    mean = acc.mean(axis=1)
    n = acc.shape[1]
    se = acc.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(t))
    return acc, mean, se


def _fit_slope(t: np.ndarray, y: np.ndarray):
    """Least-squares slope and R^2 of y against t."""
    A = np.stack([t, np.ones_like(t)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - pred) ** 2) / max(ss_tot, 1e-300)
    return float(coef[0]), float(r2)


def moment_bound_suite(ledger: EnergyLedger, consts: dict, t_checks=(1.0, 5.0, 25.0)) -> dict:
    """Ensemble validation of the time-integrated moment bounds.

    Each bound is checked as LHS <= RHS + 3 SE(LHS) at the requested times:

      weak:        int E[||q||^2 + ||grad u||^2]
                     <= ||L^{-1/2}q_0||^2 + ||u_0||^2
                        + (||L^{-1/2}gt||^2 + ||g||^2 + ||f||^2) t
      half:        int E||L^{1/2}q||^2 <= ||q_0||^2 + ||gt||^2 t
      charge_p4/12: int E||q||_4^p <= C(p)(||q_0||_4^p + ||gt||_4^p t)
      gradvel:     E||grad u(t)||^2 + int E||Delta u||^2
                     <= C(||q_0||_4^4 + ||grad u_0||^2
                          + (||f||^2 + ||grad g||^2 + ||gt||_4^4) t)

    The first two carry unit constants; the last two use the frozen
    envelope constants.  Slopes of the accumulated integrals are fitted to
    report the linear-in-t growth rate and its R^2.
    """
    t = ledger.times
    meta = ledger.meta
    init = {k: np.asarray(v) for k, v in meta["initial"].items()}
    t_checks = np.asarray([tc for tc in t_checks if tc <= t[-1] + 1e-12])
    idx = np.searchsorted(t, t_checks - 1e-12)
    results = {}

    def record(name, acc_mean, acc_se, rhs_fn):
        lhs = acc_mean[idx]
        se = acc_se[idx]
        rhs = np.asarray([rhs_fn(tc) for tc in t_checks])
        ok = bool(np.all(lhs <= rhs + 3.0 * se))
        sel = t >= min(1.0, t[-1] / 4)
        slope, r2 = _fit_slope(t[sel], acc_mean[sel])
        results[name] = MomentBoundResult(
            name, t_checks, lhs, rhs, se, ok, slope, r2
        )

    q_l2 = ledger.column("q_l2")
    u_h1 = ledger.column("u_h1")
    _, m0, s0 = _ensemble_integral(q_l2**2 + u_h1**2, t)
    src0 = meta["gtilde_hm12_sq"] + meta["g_l2_sq"] + meta["f_l2"] ** 2
    init0 = float(np.mean(init["q_hm12"] ** 2 + init["u_l2"] ** 2))
    record("weak", m0, s0, lambda tc: init0 + src0 * tc)

    _, m1, s1 = _ensemble_integral(ledger.column("q_h12") ** 2, t)
    init1 = float(np.mean(init["q_l2"] ** 2))
    record("half", m1, s1, lambda tc: init1 + meta["gtilde_l2_sq"] * tc)

    for p in (4, 12):
        c_p = consts["invariant1_c"][p]
        _, mp, sp = _ensemble_integral(ledger.column("q_l4") ** p, t)
        init_p = float(np.mean(init["q_l4"] ** p))
        gt = meta["gtilde_l4"]
        record(
            f"charge_p{p}", mp, sp, lambda tc, c=c_p, i=init_p, g=gt, pp=p: c * (i + g**pp * tc)
        )

    c2 = consts["invariant2_c"]
    acc2 = cumtrapz(ledger.column("u_h2") ** 2, t)
    series2 = u_h1**2 + acc2
    m2 = series2.mean(axis=1)
    n_paths = series2.shape[1]
    s2 = series2.std(axis=1, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.zeros(len(t))
    init2 = float(np.mean(init["q_l4"] ** 4 + init["u_h1"] ** 2))
    src2 = meta["f_l2"] ** 2 + meta["g_h1_sq"] + meta["gtilde_l4"] ** 4
    record("gradvel", m2, s2, lambda tc: c2 * (init2 + src2 * tc))

    # linear-in-t growth of the regularity integrals
    _, m_ii1, _ = _ensemble_integral(
        ledger.column("q_h32") ** 2 + ledger.column("u_h2") ** 2, t
    )
    sel = t >= min(1.0, t[-1] / 4)
    slope_ii1, r2_ii1 = _fit_slope(t[sel], m_ii1[sel])
    extra = {"ii1_slope": slope_ii1, "ii1_r2": r2_ii1}
    for name in ledger.columns:
        if name.startswith("log1p_k"):
            _, m_log, _ = _ensemble_integral(ledger.column(name), t)
            s, r = _fit_slope(t[sel], m_log[sel])
            extra[f"{name}_slope"] = s
            extra[f"{name}_r2"] = r

    return {"bounds": results, "growth": extra, "all_ok": all(r.ok for r in results.values())}


# ---------------------------------------------------------------------------
# low-mode distributional comparison


def lowmode_columns(ledger: EnergyLedger) -> list[str]:
    return [c for c in ledger.columns if c.startswith("qmode_")]


def lowmode_ks_table(
    ledger_a: EnergyLedger, ledger_b: EnergyLedger, burn_in: float = 0.0
) -> dict:
    """Two-sample Kolmogorov-Smirnov statistics for the recorded low modes.

    Thresholds are configuration for reporting, never hard assertions.
    """
    cols = lowmode_columns(ledger_a)
    if not cols or cols != lowmode_columns(ledger_b):
        raise LedgerError("ledgers carry no matching low-mode records")
    ia = np.searchsorted(ledger_a.times, burn_in)
    ib = np.searchsorted(ledger_b.times, burn_in)
    out = {}
    for c in cols:
        a = ledger_a.column(c)[ia:].ravel()
        b = ledger_b.column(c)[ib:].ravel()
        ks = stats.ks_2samp(a, b)
        out[c] = {"statistic": float(ks.statistic), "pvalue": float(ks.pvalue)}
    return out
