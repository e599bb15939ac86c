"""Counterfactual error, group R², disentanglement and axiomatic metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..models import GaussianLatent
from ..objectives import latent_kl_unit_gaussians
from ..scm.blob import blob_attributes_batch
from ..scm.spec import ArrayData
from ..tensor import Tensor


class OracleReplay:
    """Stand-in model that returns the ground-truth counterfactuals of a dataset.

    Rows are matched by position, so it only makes sense on the dataset it was built from.
    """

    def __init__(self, data: ArrayData):
        if data.y_prime_true is None:
            raise ValueError("oracle replay needs y_prime_true")
        self.data = data

    def counterfactual(self, y, t, x, t_prime) -> np.ndarray:
        same = np.all(np.asarray(t).reshape(len(y), -1) == np.asarray(t_prime).reshape(len(y), -1), axis=1)
        return np.where(same[:, None], np.asarray(y), self.data.y_prime_true[: len(y)])

    def reconstruct(self, y, t, x) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).copy()


class IdentityModel:
    """Predicts y' = y for every treatment."""

    def counterfactual(self, y, t, x, t_prime) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).copy()

    def reconstruct(self, y, t, x) -> np.ndarray:
        return np.asarray(y, dtype=np.float64).copy()


@dataclass
class CounterfactualErrors:
    mse: float
    attribute_mae: dict | None = None


def predict_counterfactuals(model, data: ArrayData, t_prime=None) -> np.ndarray:
    tp = data.t_prime if t_prime is None else t_prime
    return np.asarray(model.counterfactual(data.y, data.t, data.x, tp), dtype=np.float64)


def counterfactual_mse(model, data: ArrayData) -> float:
    if data.y_prime_true is None:
        raise ValueError("dataset has no ground-truth counterfactuals")
    pred = predict_counterfactuals(model, data)
    return float(np.mean((pred - data.y_prime_true) ** 2))


def counterfactual_errors(model, data: ArrayData, resolution: int | None = None) -> CounterfactualErrors:
    """MSE of y' against ground truth, plus thickness/intensity MAE when ``resolution`` is given."""
    if data.y_prime_true is None:
        raise ValueError("dataset has no ground-truth counterfactuals")
    pred = predict_counterfactuals(model, data)
    mse = float(np.mean((pred - data.y_prime_true) ** 2))
    mae = None
    if resolution is not None:
        th_p, in_p = blob_attributes_batch(pred, resolution)
        th_t, in_t = blob_attributes_batch(data.y_prime_true, resolution)
        mae = {"thickness": float(np.mean(np.abs(th_p - th_t))), "intensity": float(np.mean(np.abs(in_p - in_t)))}
    return CounterfactualErrors(mse, mae)


def outcome_variance(y) -> float:
    """Mean per-dimension variance of an outcome matrix."""
    return float(np.mean(np.var(np.asarray(y, dtype=np.float64), axis=0)))


def r2_score(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.size < 2:
        raise ValueError("R² needs at least two components")
    ss_res = np.sum((truth - pred) ** 2)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return float(1.0 - ss_res / ss_tot)


def group_r2(pred_means, true_means, components=None) -> float:
    """Average over strata of R² between predicted and true mean vectors.

    ``pred_means``/``true_means`` are (strata, dim); ``components`` optionally
    selects a per-stratum subset of columns, shape (strata, k).
    """
    pred_means = np.atleast_2d(np.asarray(pred_means, dtype=np.float64))
    true_means = np.atleast_2d(np.asarray(true_means, dtype=np.float64))
    if pred_means.shape != true_means.shape:
        raise ValueError(f"shape mismatch {pred_means.shape} vs {true_means.shape}")
    if len(true_means) == 0:
        raise ValueError("need at least one stratum")
    scores = []
    for s in range(len(true_means)):
        cols = slice(None) if components is None else np.asarray(components[s])
        scores.append(r2_score(pred_means[s, cols], true_means[s, cols]))
    return float(np.mean(scores))


def hard_components(effect, k: int = 50) -> np.ndarray:
    """Indices of the ``k`` components with the largest absolute effect (per row if 2-d)."""
    effect = np.abs(np.asarray(effect, dtype=np.float64))
    k = min(k, effect.shape[-1])
    order = np.argsort(-effect, axis=-1, kind="stable")
    return order[..., :k]


def _latent_mean(encoder, y, t, x) -> np.ndarray:
    out = encoder(y, t, x)
    if isinstance(out, GaussianLatent):
        out = out.mean
    if isinstance(out, Tensor):
        out = out.data
    return np.asarray(out, dtype=np.float64)


def oracle_consistency_kl(encoder, probes: ArrayData) -> float:
    """Mean KL between latents of a factual record and its ground-truth counterfactual.

    ``encoder`` is any callable ``(y, t, x) -> latent mean`` (an ``EncoderModel`` works).
    """
    if probes.y_prime_true is None:
        raise ValueError("probes need ground-truth counterfactual pairs")
    if len(probes.y_prime_true) != len(probes.y):
        raise ValueError("mismatched probe pairs")
    mu1 = _latent_mean(encoder, probes.y, probes.t, probes.x)
    mu2 = _latent_mean(encoder, probes.y_prime_true, probes.t_prime, probes.x)
    return float(np.mean(latent_kl_unit_gaussians(mu1, mu2)))


def oracle_restrictiveness(encoder, probes: ArrayData, resampled: ArrayData) -> float:
    """Treatment readout discrepancy when the latent factor is resampled.

    The treatment enters the model as a point mass and is read back unchanged,
    so the discrepancy is zero by construction. ``resampled`` must hold the same
    records with new outcomes and identical treatments.
    """
    if len(probes) != len(resampled):
        raise ValueError("probe sets differ in length")
    t_a = np.asarray(probes.t, dtype=np.float64).reshape(len(probes), -1)
    t_b = np.asarray(resampled.t, dtype=np.float64).reshape(len(resampled), -1)
    if not np.array_equal(t_a, t_b):
        raise ValueError("resampled probes must keep each record's treatment")
    # encode both to make sure the latent path is well defined
    for d in (probes, resampled):
        if not np.all(np.isfinite(_latent_mean(encoder, d.y, d.t, d.x))):
            raise FloatingPointError("encoder produced non-finite latents")
    return float(np.mean(np.sum((t_a - t_b) ** 2, axis=1)))


def axiomatic_metrics(model, data: ArrayData, cycles: int = 1, resolution: int = 16) -> dict:
    """Composition, effectiveness and reversibility on the squared-error scale.

    composition: per-pixel MSE after ``cycles`` reconstructions under the factual t.
    reversibility: per-pixel MSE after the round trip t -> t' -> t.
    effectiveness: mean squared error between the counterfactual's measured
    (thickness, intensity) and the target t'.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    y = np.asarray(data.y, dtype=np.float64)
    cur = y
    comp1 = None
    for k in range(cycles):
        cur = np.asarray(model.reconstruct(cur, data.t, data.x), dtype=np.float64)
        if k == 0:
            comp1 = float(np.mean((cur - y) ** 2))
    composition = float(np.mean((cur - y) ** 2))
    y_cf = predict_counterfactuals(model, data)
    back = np.asarray(model.counterfactual(y_cf, data.t_prime, data.x, data.t), dtype=np.float64)
    reversibility = float(np.mean((back - y) ** 2))
    th, inten = blob_attributes_batch(y_cf, resolution)
    target = np.asarray(data.t_prime, dtype=np.float64).reshape(len(y), -1)
    effectiveness = float(np.mean((np.column_stack([th, inten]) - target[:, :2]) ** 2))
    return {"composition": comp1 if cycles == 1 else composition, "composition_1": comp1,
            "composition_cycles": composition, "cycles": cycles, "effectiveness": effectiveness,
            "reversibility": reversibility}


@dataclass
class MetricsReport:
    values: dict = field(default_factory=dict)
    per_seed: dict = field(default_factory=dict)

    def __post_init__(self):
        mse = self.values.get("cf_mse")
        if mse is not None and mse < 0:
            raise ValueError("MSE must be non-negative")
        for key in ("r2", "r2_hard"):
            if self.values.get(key) is not None and self.values[key] > 1.0 + 1e-12:
                raise ValueError(f"{key} cannot exceed 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))
