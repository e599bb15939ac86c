"""Marginal outcome estimators under a treatment level alpha.

``robust_ate`` combines inverse-propensity weighting of the observed outcomes
with the model's individual predictions m_k = E[Y' | z_k, T' = alpha]:

    psi_k = I(t_k = alpha) / e(t_k | x_k) * y_k + (1 - I(t_k = alpha) / e(t_k | x_k)) * m_k

and reports the mean of psi_k with an influence-function confidence interval.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

DEFAULT_CAP_FLOOR = 0.01


@dataclass
class EstimatorReport:
    estimate: np.ndarray
    variance: np.ndarray  # influence variance of the estimate, i.e. already divided by n
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n: int
    estimator: str  # "robust" | "plug_in_mean"
    level: float = 0.95
    alpha: object = None
    covariate: int | None = None
    degenerate: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("estimate", "variance", "ci_lower", "ci_upper"):
            d[k] = [float(v) for v in np.asarray(d[k]).reshape(-1)]
        if isinstance(self.alpha, np.ndarray):
            d["alpha"] = self.alpha.tolist()
        elif isinstance(self.alpha, np.integer):
            d["alpha"] = int(self.alpha)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorReport":
        d = dict(d)
        for k in ("estimate", "variance", "ci_lower", "ci_upper"):
            d[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**d)

    def csv_rows(self) -> list[tuple]:
        return [(self.estimator, i, float(self.estimate[i]), float(self.variance[i]), float(self.ci_lower[i]),
                 float(self.ci_upper[i])) for i in range(len(self.estimate))]


CSV_HEADER = ("estimator", "dim", "estimate", "variance", "ci_lower", "ci_upper")


def reports_csv(reports: list[EstimatorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        for row in r.csv_rows():
            w.writerow([row[0], row[1]] + [repr(v) for v in row[2:]])
    return buf.getvalue()


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be (n,) or (n, d)")
    return a


def influence_variance(rows, level: float = 0.95) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(mean, variance of the mean, lower, upper) from per-individual influence rows.

    The variance is the second moment of the centered rows divided by n.
    """
    rows = _as_matrix(rows, "rows")
    n = len(rows)
    if n < 2:
        raise ValueError("influence variance needs at least two rows")
    est = rows.mean(axis=0)
    var = np.mean((rows - est) ** 2, axis=0) / n
    half = norm.ppf(0.5 + level / 2.0) * np.sqrt(var)
    return est, var, est - half, est + half


def _treated_mask(t, alpha) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim == 1:
        return t == alpha
    return np.all(t == np.asarray(alpha)[None, :], axis=1)


def _propensities(propensity, t, strata) -> np.ndarray:
    if callable(propensity):
        return np.asarray(propensity(t, strata), dtype=np.float64)
    return np.asarray(propensity, dtype=np.float64).reshape(-1)


def robust_rows(y, t, strata, predictions, propensity, alpha, cap_floor: float = DEFAULT_CAP_FLOOR) -> np.ndarray:
    """Uncentered influence rows psi_k; their mean is the robust estimate.

    ``propensity`` is a fitted model called as ``propensity(t, strata)`` or an
    array of e(t_k | x_k). Inverse weights are capped at ``1 / cap_floor``.
    """
    y = _as_matrix(y, "y")
    m = _as_matrix(predictions, "predictions")
    if m.shape != y.shape:
        raise ValueError(f"predictions {m.shape} do not align with outcomes {y.shape}")
    if np.any(~np.isfinite(m)):
        raise ValueError("missing or non-finite prediction")
    treated = _treated_mask(t, alpha)
    weight = np.zeros(len(y))
    if np.any(treated):
        e = _propensities(propensity, t, strata)
        e_t = e[treated] if e.shape[0] == len(y) else e
        if np.any(~(e_t > 0)):
            raise ValueError("propensity below floor: positivity requires e(t|x) > 0 for treated units")
        weight[treated] = np.minimum(1.0 / e_t, 1.0 / cap_floor)
    return weight[:, None] * y + (1.0 - weight[:, None]) * m


def robust_ate(y, t, strata, predictions, propensity, alpha, level: float = 0.95,
               cap_floor: float = DEFAULT_CAP_FLOOR) -> EstimatorReport:
    rows = robust_rows(y, t, strata, predictions, propensity, alpha, cap_floor)
    return _report(rows, "robust", level, alpha)


def plug_in_mean(predictions, level: float = 0.95, alpha=None) -> EstimatorReport:
    m = _as_matrix(predictions, "predictions")
    if len(m) == 0:
        raise ValueError("no predictions")
    return _report(m, "plug_in_mean", level, alpha)


def _report(rows: np.ndarray, tag: str, level: float, alpha, covariate=None) -> EstimatorReport:
    if len(rows) == 1:
        est = rows[0].copy()
        zero = np.zeros_like(est)
        return EstimatorReport(est, zero, est.copy(), est.copy(), 1, tag, level, alpha, covariate, degenerate=True)
    est, var, lo, hi = influence_variance(rows, level)
    return EstimatorReport(est, var, lo, hi, len(rows), tag, level, alpha, covariate)


def robust_ate_covariate(y, t, strata, predictions, propensity, alpha, c: int, level: float = 0.95,
                         cap_floor: float = DEFAULT_CAP_FLOOR) -> EstimatorReport:
    """The robust estimator restricted to rows with covariate stratum ``c``."""
    strata = np.asarray(strata, dtype=np.int64)
    mask = strata == c
    if not np.any(mask):
        raise ValueError(f"no observations in covariate stratum {c}")
    e = propensity
    if not callable(propensity):
        e = np.asarray(propensity, dtype=np.float64).reshape(-1)[mask]
    rows = robust_rows(_as_matrix(y, "y")[mask], np.asarray(t)[mask], strata[mask],
                       _as_matrix(predictions, "predictions")[mask], e, alpha, cap_floor)
    return _report(rows, "robust", level, alpha, covariate=int(c))


def recombine(reports: list[EstimatorReport]) -> np.ndarray:
    """Stratum-size weighted average of covariate-specific estimates."""
    n = sum(r.n for r in reports)
    return sum(r.n / n * r.estimate for r in reports)


# ---------------------------------------------------------------------------
# predictions


def predict_potential_outcomes(model, y, t, x, alpha, rng: np.random.Generator | None = None,
                               deterministic: bool = False) -> np.ndarray:
    """m_k = decoder mean at (z_k, alpha), with z_k drawn from the encoder posterior.

    ``deterministic=True`` uses the posterior mean instead of a draw.
    """
    mu = model.latent_mean(y, t, x)
    if not deterministic:
        if rng is None:
            raise ValueError("sampling predictions needs an rng")
        mu = mu + rng.standard_normal(mu.shape).astype(mu.dtype)
    t_alpha = _broadcast_alpha(alpha, len(y), t)
    return np.asarray(model.predict(mu, t_alpha), dtype=np.float64)


def _broadcast_alpha(alpha, n: int, t_like) -> np.ndarray:
    t_like = np.asarray(t_like)
    if t_like.ndim == 1:
        return np.full(n, alpha, dtype=t_like.dtype)
    return np.tile(np.asarray(alpha, dtype=np.float64), (n, 1))


def write_predictions(path, predictions) -> None:
    m = _as_matrix(predictions, "predictions")
    lines = [json.dumps({"index": i, "m": [float(v) for v in row]}, separators=(",", ":")) for i, row in enumerate(m)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path, n: int | None = None) -> np.ndarray:
    """Read (index, m) JSONL; every index in 0..n-1 must appear exactly once."""
    rows = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if "index" not in rec or "m" not in rec:
            raise ValueError(f"line {lineno}: prediction records need 'index' and 'm'")
        rows[int(rec["index"])] = rec["m"]
    n = len(rows) if n is None else n
    missing = [i for i in range(n) if i not in rows]
    if missing:
        raise ValueError(f"missing prediction for index {missing[0]}")
    return np.asarray([rows[i] for i in range(n)], dtype=np.float64)
