"""Synthetic cities with planted mobility/incidence coupling regimes."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np

from .data import CityRecord, CovariateRow

REGIMES = ("lagged_negative", "lagged_positive", "independent")
_STATES = ("AA", "BB", "CC", "DD", "EE", "FF")


def synthetic_cities(
    n_cities: int = 30,
    n_days: int = 92,
    seed: int = 0,
    start: date = date(2020, 3, 1),
    lag: int = 5,
    coupling: float = 1.5,
):
    """Return ``(records, covariate_rows, regime_of)``.

    Mobility follows a noisy oscillation whose rate of change drives the
    log-intensity of new cases ``lag`` days later, negatively or positively
    depending on the regime; in the third regime cases ignore mobility.
    Cities are assigned to regimes round-robin. Covariates include a
    regime-dependent stay-at-home date, coordinates clustered by regime and
    a few pure-noise columns.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_days + lag)
    dates = [start + timedelta(days=int(i)) for i in range(n_days)]
    records, rows, regime_of = [], [], {}
    centers = {0: (35.0, -100.0), 1: (42.0, -80.0), 2: (33.0, -117.0)}
    for c in range(n_cities):
        regime = c % len(REGIMES)
        cid = f"{10001 + c}"
        period = rng.uniform(40, 60)
        phase = rng.uniform(0, 2 * np.pi)
        drive = np.sin(2 * np.pi * t / period + phase) + 0.15 * rng.normal(size=t.size)
        mobility = 100 + np.cumsum(drive)
        mobility = mobility - min(mobility.min(), 0) + 1
        deriv = np.gradient(mobility)
        z = (deriv - deriv.mean()) / deriv.std()
        if regime == 2:
            log_rate = 3.0 + 0.8 * rng.normal(size=n_days)
        else:
            sign = -1.0 if regime == 0 else 1.0
            log_rate = 3.0 + sign * coupling * z[:n_days] + 0.1 * rng.normal(size=n_days)
        cases = rng.poisson(np.exp(log_rate))
        records.append(
            CityRecord(cid, f"County {c}", _STATES[c % len(_STATES)], dates, mobility[lag:], cases)
        )
        regime_of[cid] = regime + 1
        lat0, lon0 = centers[regime]
        order_day = [4, 12, None][regime]
        if order_day is not None:
            order_day += int(rng.integers(-2, 3))
        sah = None if order_day is None else date(2020, 3, 15) + timedelta(days=order_day)
        rows.append(
            CovariateRow(
                cid,
                sah,
                {
                    "population_size": float(np.round(rng.lognormal(12, 1))),
                    "persons_per_household": float(np.round(rng.uniform(2.0, 3.5), 2)),
                    "senior_percent": float(np.round(rng.uniform(8, 25), 2)),
                    "black_percent": float(np.round(rng.uniform(1, 40), 2)),
                    "hispanic_percent": float(np.round(rng.uniform(1, 60), 2)),
                    "lat": float(np.round(lat0 + rng.normal(0, 1.0), 4)),
                    "lon": float(np.round(lon0 + rng.normal(0, 1.0), 4)),
                },
            )
        )
    return records, rows, regime_of
