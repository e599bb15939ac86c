"""Encoder, decoder, discriminator and the two covariate-level models.

The encoder maps (y, t, x) to the mean of a unit-variance Gaussian latent;
the decoder maps (z, t) to an outcome mean (and log-sigma). Covariates are
only seen by the encoder and the discriminator.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .scm.spec import TreatmentSpace
from .tensor import MlpParams, Tensor, concat, init_mlp, no_grad_copy, take

LOG_2PI = math.log(2.0 * math.pi)
PROB_CLAMP = 1e-7
VAR_FLOOR = 1e-6


class MissingStratumError(KeyError):
    pass


# ---------------------------------------------------------------------------
# embeddings


class TreatmentEmbedding:
    """Learned table for categorical treatments; sinusoidal features plus a
    linear map for continuous ones."""

    def __init__(self, space: TreatmentSpace, dim: int, rng, name: str, dtype=np.float32, n_freq: int = 4):
        self.space = space
        self.dim = dim
        self.name = name
        self.n_freq = n_freq
        self.dtype = dtype
        if space.is_categorical:
            table = rng.normal(0.0, 1.0, (space.levels, dim)).astype(dtype)
            self.table = Tensor(table, requires_grad=True, name=f"{name}.table")
            self.linear = None
        else:
            self.table = None
            self.linear = init_mlp([space.dim * (1 + 2 * n_freq), dim], ["identity"], rng, name=f"{name}.proj",
                                   dtype=dtype)

    def features(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(len(t), -1)
        lo = np.asarray(self.space.low)
        hi = np.asarray(self.space.high)
        u = (t - lo) / np.where(hi > lo, hi - lo, 1.0)
        feats = [u]
        for k in range(self.n_freq):
            ang = (2.0**k) * math.pi * u
            feats.extend((np.sin(ang), np.cos(ang)))
        return np.concatenate(feats, axis=1).astype(self.dtype)

    def __call__(self, t) -> Tensor:
        if self.table is not None:
            return take(self.table, np.asarray(t, dtype=np.int64).reshape(-1))
        return self.linear(Tensor(self.features(t)))

    def parameters(self) -> list[Tensor]:
        return [self.table] if self.table is not None else self.linear.parameters()

    def frozen_copy(self) -> "TreatmentEmbedding":
        other = object.__new__(TreatmentEmbedding)
        other.__dict__.update(self.__dict__)
        other.table = None if self.table is None else no_grad_copy(self.table)
        other.linear = None if self.linear is None else self.linear.frozen_copy()
        return other


class CovariateEmbedding:
    def __init__(self, cards: list[int], dim: int, rng, name: str, dtype=np.float32):
        self.cards = list(cards)
        self.tables = [
            Tensor(rng.normal(0.0, 1.0, (c, dim)).astype(dtype), requires_grad=True, name=f"{name}.{i}.table")
            for i, c in enumerate(self.cards)
        ]

    @property
    def width(self) -> int:
        return sum(t.shape[1] for t in self.tables)

    def __call__(self, x) -> list[Tensor]:
        x = np.asarray(x, dtype=np.int64).reshape(-1, len(self.cards)) if self.cards else None
        return [take(tab, x[:, i]) for i, tab in enumerate(self.tables)]

    def parameters(self) -> list[Tensor]:
        return list(self.tables)

    def frozen_copy(self) -> "CovariateEmbedding":
        other = object.__new__(CovariateEmbedding)
        other.cards = list(self.cards)
        other.tables = [no_grad_copy(t) for t in self.tables]
        return other


def _as_input(y, dtype) -> Tensor:
    return y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=dtype))


# ---------------------------------------------------------------------------
# model spec


@dataclass
class ModelConfig:
    outcome_dim: int
    latent_dim: int
    treatment: TreatmentSpace
    covariate_cards: list[int] = field(default_factory=list)
    hidden: int = 128
    depth: int = 2  # hidden layers per network
    embed_dim: int = 8
    disc_hidden: int = 128
    disc_depth: int = 2
    learn_sigma: bool = False
    sigma: float = 1.0  # fixed decoder scale when not learned
    adversarial: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("decoder sigma must be positive")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["treatment"] = self.treatment.to_dict()
        d["covariate_cards"] = list(self.covariate_cards)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["treatment"] = TreatmentSpace.from_dict(d["treatment"])
        return cls(**d)


@dataclass
class GaussianLatent:
    """Diagonal Gaussian with learned mean and unit variance."""

    mean: Tensor

    def sample(self, noise) -> Tensor:
        return self.mean + Tensor(np.asarray(noise, dtype=self.mean.dtype))


class EncoderModel:
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32, name: str = "encoder"):
        self.name = name
        self.dtype = dtype
        self.t_embed = TreatmentEmbedding(cfg.treatment, cfg.embed_dim, rng, f"{name}.t_embed", dtype)
        self.x_embed = CovariateEmbedding(cfg.covariate_cards, cfg.embed_dim, rng, f"{name}.x_embed", dtype)
        in_dim = cfg.outcome_dim + cfg.embed_dim + self.x_embed.width
        sizes = [in_dim] + [cfg.hidden] * cfg.depth + [cfg.latent_dim]
        self.mlp = init_mlp(sizes, "relu", rng, name=f"{name}.mlp", dtype=dtype)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters() + self.t_embed.parameters() + self.x_embed.parameters()

    def frozen_copy(self) -> "EncoderModel":
        other = object.__new__(EncoderModel)
        other.name = self.name
        other.dtype = self.dtype
        other.t_embed = self.t_embed.frozen_copy()
        other.x_embed = self.x_embed.frozen_copy()
        other.mlp = self.mlp.frozen_copy()
        return other

    def __call__(self, y, t, x) -> GaussianLatent:
        return encode(self, y, t, x)


class DecoderModel:
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32, name: str = "decoder"):
        self.name = name
        self.dtype = dtype
        self.t_embed = TreatmentEmbedding(cfg.treatment, cfg.embed_dim, rng, f"{name}.t_embed", dtype)
        self.fixed_log_sigma = math.log(cfg.sigma)
        sizes = [cfg.latent_dim + cfg.embed_dim] + [cfg.hidden] * cfg.depth + [cfg.outcome_dim]
        self.mlp = init_mlp(sizes, "relu", rng, name=f"{name}.mlp", dtype=dtype)
        self.log_sigma = (
            Tensor(np.zeros(cfg.outcome_dim, dtype=dtype), requires_grad=True, name=f"{name}.log_sigma")
            if cfg.learn_sigma else None
        )

    def parameters(self) -> list[Tensor]:
        extra = [self.log_sigma] if self.log_sigma is not None else []
        return self.mlp.parameters() + self.t_embed.parameters() + extra

    def __call__(self, z, t):
        return decode(self, z, t)


class Discriminator:
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32, name: str = "discriminator"):
        self.name = name
        self.dtype = dtype
        self.t_embed = TreatmentEmbedding(cfg.treatment, cfg.embed_dim, rng, f"{name}.t_embed", dtype)
        self.x_embed = CovariateEmbedding(cfg.covariate_cards, cfg.embed_dim, rng, f"{name}.x_embed", dtype)
        in_dim = cfg.outcome_dim + cfg.embed_dim + self.x_embed.width
        sizes = [in_dim] + [cfg.disc_hidden] * cfg.disc_depth + [1]
        self.mlp = init_mlp(sizes, "leaky_relu", rng, name=f"{name}.mlp", dtype=dtype)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters() + self.t_embed.parameters() + self.x_embed.parameters()

    def logits(self, x, t, y) -> Tensor:
        y = _as_input(y, self.dtype)
        h = concat([y, self.t_embed(t)] + self.x_embed(x), axis=1)
        return self.mlp(h).reshape(-1)


# ---------------------------------------------------------------------------
# forward ops


def encode(q: EncoderModel, y, t, x) -> GaussianLatent:
    y = _as_input(y, q.dtype)
    h = concat([y, q.t_embed(t)] + q.x_embed(x), axis=1)
    return GaussianLatent(q.mlp(h))


def decode(p: DecoderModel, z, t) -> tuple[Tensor, Tensor]:
    """Outcome mean and per-dimension log-sigma (constant unless learned; 0 by default)."""
    z = _as_input(z, p.dtype)
    mean = p.mlp(concat([z, p.t_embed(t)], axis=1))
    if p.log_sigma is None:
        log_sigma = Tensor(np.full(mean.shape[-1], p.fixed_log_sigma, dtype=mean.dtype))
    else:
        log_sigma = p.log_sigma
    return mean, log_sigma


def gaussian_log_lik(mean: Tensor, log_sigma, y) -> Tensor:
    """Diagonal-Gaussian log density summed over the last axis."""
    mean = _as_input(mean, np.float64)
    y = _as_input(y, mean.dtype)
    log_sigma = _as_input(log_sigma, mean.dtype)
    if mean.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: mean {mean.shape}, y {y.shape}")
    d = mean.shape[-1]
    resid = (y - mean) * (-log_sigma).exp()
    per_dim = resid.square() * 0.5 + log_sigma
    return -per_dim.sum(axis=-1) - 0.5 * d * LOG_2PI


# ---------------------------------------------------------------------------
# empirical covariate-specific outcome model


class EmpiricalOutcomeModel:
    """Per-(x, t) stratum Gaussian with kernel-smoothed variance.

    ``log_lik`` uses mean ``mu[x, t]`` and variance ``max(var[x, t] + h^2, floor)``.
    """

    def __init__(self, means: np.ndarray, variances: np.ndarray, counts: np.ndarray, bandwidth: float,
                 var_floor: float = VAR_FLOOR):
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.bandwidth = float(bandwidth)
        self.var_floor = float(var_floor)

    @classmethod
    def fit(cls, strata, t, y, n_strata: int, n_levels: int, bandwidth: float | None = None,
            bandwidth_scale: float = 0.1) -> "EmpiricalOutcomeModel":
        strata = np.asarray(strata, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        d = y.shape[1]
        sums = np.zeros((n_strata, n_levels, d))
        sq = np.zeros((n_strata, n_levels, d))
        counts = np.zeros((n_strata, n_levels), dtype=np.int64)
        np.add.at(sums, (strata, t), y)
        np.add.at(sq, (strata, t), y * y)
        np.add.at(counts, (strata, t), 1)
        safe = np.maximum(counts, 1)[..., None]
        means = sums / safe
        variances = np.maximum(sq / safe - means * means, 0.0)
        if bandwidth is None:
            pooled = np.sqrt((variances * counts[..., None]).sum() / max(counts.sum() * d, 1))
            bandwidth = bandwidth_scale * pooled
        return cls(means, variances, counts, bandwidth)

    def smoothed_variance(self) -> np.ndarray:
        return np.maximum(self.variances + self.bandwidth**2, self.var_floor)

    def _check(self, strata, t):
        missing = self.counts[strata, t] == 0
        if np.any(missing):
            i = int(np.flatnonzero(missing)[0])
            raise MissingStratumError(f"no observations for stratum x={int(strata[i])}, t={int(t[i])}")

    def log_lik(self, y, strata, t) -> Tensor:
        strata = np.asarray(strata, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        self._check(strata, t)
        y = _as_input(y, np.float64)
        dtype = y.dtype
        mu = Tensor(self.means[strata, t].astype(dtype))
        var = self.smoothed_variance()[strata, t].astype(dtype)
        inv = Tensor(1.0 / var)
        const = Tensor((-0.5 * (np.log(var) + LOG_2PI)).sum(axis=-1))
        return const - ((y - mu).square() * inv).sum(axis=-1) * 0.5

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "variances": self.variances.tolist(), "counts": self.counts.tolist(),
                "bandwidth": self.bandwidth, "var_floor": self.var_floor}

    @classmethod
    def from_json(cls, d: dict) -> "EmpiricalOutcomeModel":
        return cls(np.asarray(d["means"]), np.asarray(d["variances"]), np.asarray(d["counts"]), d["bandwidth"],
                   d.get("var_floor", VAR_FLOOR))


def empirical_log_lik(p_hat: EmpiricalOutcomeModel, y, x_strata, t) -> Tensor:
    return p_hat.log_lik(y, x_strata, t)


# ---------------------------------------------------------------------------
# adversarial outcome model


def discriminator_losses(D: Discriminator, real: tuple, fake: tuple) -> tuple[Tensor, Tensor]:
    """(L_D, L_G) for real (x, t, y) and generated (x, t', y') triplets.

    ``L_D = mean(-log D(real) - log(1 - D(fake)))`` and the generator score
    ``L_G = mean(log D(fake))``, both with probabilities clamped away from 0 and 1.
    """
    return discriminator_losses_from_logits(D.logits(*real), D.logits(*fake))


def discriminator_losses_from_logits(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    p_real = real_logits.sigmoid().clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_fake = fake_logits.sigmoid().clip(PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss_d = (-p_real.log() - (1.0 - p_fake).log()).mean()
    loss_g = p_fake.log().mean()
    return loss_d, loss_g


# ---------------------------------------------------------------------------
# propensity


class PropensityModel:
    """Smoothed, floored estimate of e(t | x) over covariate strata."""

    def __init__(self, table: np.ndarray, counts: np.ndarray | None = None, smoothing: float = 1.0,
                 floor: float = 0.01):
        self.table = np.asarray(table, dtype=np.float64)
        self.counts = None if counts is None else np.asarray(counts, dtype=np.int64)
        self.smoothing = float(smoothing)
        self.floor = float(floor)

    @classmethod
    def from_table(cls, table, floor: float = 0.0) -> "PropensityModel":
        """Wrap a known propensity table (rows = strata)."""
        return cls(np.asarray(table, dtype=np.float64), None, 0.0, floor)

    @property
    def n_levels(self) -> int:
        return self.table.shape[1]

    def __call__(self, t, strata) -> np.ndarray:
        strata = np.asarray(strata, dtype=np.int64)
        if self.counts is not None:
            unseen = self.counts[strata].sum(axis=-1) == 0
            if np.any(unseen):
                raise MissingStratumError(f"covariate stratum {int(np.asarray(strata)[unseen][0])} never observed")
        return self.table[strata, np.asarray(t, dtype=np.int64)]

    def to_json(self) -> dict:
        return {"table": self.table.tolist(), "counts": None if self.counts is None else self.counts.tolist(),
                "smoothing": self.smoothing, "floor": self.floor}

    @classmethod
    def from_json(cls, d: dict) -> "PropensityModel":
        return cls(np.asarray(d["table"]), None if d["counts"] is None else np.asarray(d["counts"]),
                   d["smoothing"], d["floor"])


def _floor_rows(p: np.ndarray, floor: float) -> np.ndarray:
    """Project each row onto {q : sum q = 1, q >= floor} by clamping and rescaling the rest."""
    p = p.copy()
    for row in p:
        clamped = np.zeros(row.shape, dtype=bool)
        while True:
            low = (row < floor) & ~clamped
            if not low.any():
                break
            clamped |= low
            free = ~clamped
            budget = 1.0 - floor * clamped.sum()
            row[clamped] = floor
            row[free] = row[free] * (budget / row[free].sum())
        row /= row.sum()
    return p


def fit_propensity(strata, t, n_strata: int, n_levels: int, smoothing: float = 1.0,
                   floor: float = 0.01) -> PropensityModel:
    """e(t|x) = (count(x,t) + smoothing) / (count(x) + smoothing*|T|), floored and renormalized."""
    strata = np.asarray(strata, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    if strata.size == 0:
        raise ValueError("cannot fit a propensity model on an empty dataset")
    if floor * n_levels > 1.0:
        raise ValueError("floor * levels must not exceed 1")
    counts = np.zeros((n_strata, n_levels), dtype=np.int64)
    np.add.at(counts, (strata, t), 1)
    totals = counts.sum(axis=1, keepdims=True)
    denom = totals + smoothing * n_levels
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(denom > 0, (counts + smoothing) / np.where(denom > 0, denom, 1), 1.0 / n_levels)
    table = _floor_rows(table, floor)
    return PropensityModel(table, counts, smoothing, floor)


# ---------------------------------------------------------------------------
# bundle


class VciModel:
    """Encoder, decoder, optional discriminator and the target encoder copy."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng([seed, 404])
        self.encoder = EncoderModel(cfg, rng, dtype)
        self.decoder = DecoderModel(cfg, rng, dtype)
        self.discriminator = Discriminator(cfg, rng, dtype) if cfg.adversarial else None
        self.target_encoder = self.encoder.frozen_copy()

    def generator_parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def discriminator_parameters(self) -> list[Tensor]:
        return [] if self.discriminator is None else self.discriminator.parameters()

    def refresh_target(self) -> None:
        self.target_encoder = self.encoder.frozen_copy()

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.generator_parameters() + self.discriminator_parameters()}
        for p in self.target_encoder.parameters():
            out["target/" + p.name] = p.data
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.generator_parameters() + self.discriminator_parameters():
            p.data = np.array(arrays[p.name], dtype=self.dtype)
        for p in self.target_encoder.parameters():
            p.data = np.array(arrays["target/" + p.name], dtype=self.dtype)

    # numpy conveniences (no tape)
    def latent_mean(self, y, t, x) -> np.ndarray:
        return encode(self.encoder, y, t, x).mean.data

    def predict(self, z, t) -> np.ndarray:
        return decode(self.decoder, z, t)[0].data

    def reconstruct(self, y, t, x) -> np.ndarray:
        return self.counterfactual(y, t, x, t)

    def counterfactual(self, y, t, x, t_prime) -> np.ndarray:
        """y' = decoder mean at (encoder mean of (y, t, x), t')."""
        return self.predict(self.latent_mean(y, t, x), t_prime)


def model_json(obj) -> str:
    return json.dumps(obj.to_json(), sort_keys=True)
