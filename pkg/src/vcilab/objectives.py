"""Training losses: the VCI evidence bound, the semi-autoencoder loss and ablation presets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import (
    EmpiricalOutcomeModel,
    VciModel,
    decode,
    discriminator_losses_from_logits,
    encode,
    gaussian_log_lik,
)
from .tensor import NonFiniteError, Tensor, no_grad_copy

DETACH_MODES = ("target_copy", "fully_attached", "detach_yprime")
ABLATION_MODES = ("HAE", "HAE_A", "SAE", "VCI")
DEFAULT_WEIGHTS = {"cf": 1.0, "kl": 0.03}


@dataclass
class Batch:
    """Arrays for one minibatch. ``x`` is (n, k) integer covariates, ``strata`` their flat index."""

    y: np.ndarray
    t: np.ndarray
    t_prime: np.ndarray
    x: np.ndarray
    strata: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def permuted(self, perm) -> "Batch":
        return Batch(self.y[perm], self.t[perm], self.t_prime[perm], self.x[perm], self.strata[perm])


@dataclass
class DetachConfig:
    mode: str = "target_copy"
    refresh_period: int = 1  # epochs

    def __post_init__(self):
        if self.mode not in DETACH_MODES:
            raise ValueError(f"unknown detach mode {self.mode!r}; expected one of {DETACH_MODES}")
        if self.refresh_period < 1:
            raise ValueError("refresh period must be at least 1 epoch")


@dataclass
class LossBreakdown:
    recon_loglik: float
    cf_supervision: float
    latent_kl: float
    total: float
    weights: dict = field(default_factory=dict)
    loss: Tensor | None = field(default=None, repr=False)  # differentiable total
    y_prime: np.ndarray | None = field(default=None, repr=False)

    def recomputed_total(self) -> float:
        return -self.recon_loglik - self.weights["cf"] * self.cf_supervision + self.weights["kl"] * self.latent_kl

    def row(self) -> dict:
        return {"recon": self.recon_loglik, "cf": self.cf_supervision, "kl": self.latent_kl, "total": self.total}


def select_ablation(mode: str, cf: float | None = None, kl: float | None = None) -> dict:
    """(ω_cf, ω_kl) preset for an ablation mode. Overrides apply only to the terms the mode keeps."""
    if mode not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
    cf = DEFAULT_WEIGHTS["cf"] if cf is None else float(cf)
    kl = DEFAULT_WEIGHTS["kl"] if kl is None else float(kl)
    keep_cf = mode in ("SAE", "VCI")
    keep_kl = mode in ("HAE_A", "VCI")
    return {"cf": cf if keep_cf else 0.0, "kl": kl if keep_kl else 0.0, "mode": mode}


def latent_kl_unit_gaussians(mu1, mu2):
    """KL between two unit-variance diagonal Gaussians, ½‖mu1 − mu2‖² summed over the last axis."""
    if isinstance(mu1, Tensor) or isinstance(mu2, Tensor):
        mu1 = mu1 if isinstance(mu1, Tensor) else Tensor(mu1)
        mu2 = mu2 if isinstance(mu2, Tensor) else Tensor(mu2)
        if mu1.shape != mu2.shape:
            raise ValueError(f"shape mismatch {mu1.shape} vs {mu2.shape}")
        return (mu1 - mu2).square().sum(axis=-1) * 0.5
    a = np.asarray(mu1, dtype=np.float64)
    b = np.asarray(mu2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return 0.5 * np.sum((a - b) ** 2, axis=-1)


def counterfactual_supervision(model: VciModel, p_hat: EmpiricalOutcomeModel | None, batch: Batch,
                               y_prime: Tensor) -> Tensor:
    """Per-sample log p̂(y'|x,t') in empirical mode, log D(x,t',y') in adversarial mode."""
    if p_hat is not None:
        return p_hat.log_lik(y_prime, batch.strata, batch.t_prime)
    if model.discriminator is None:
        raise ValueError("adversarial supervision requires a model built with a discriminator")
    D = model.discriminator
    # Only the fake branch matters for the generator score.
    fake = D.logits(batch.x, batch.t_prime, y_prime)
    return fake.sigmoid().clip(1e-7, 1.0 - 1e-7).log()


def _finish(recon: Tensor, cf: Tensor | None, kl: Tensor | None, weights: dict, y_prime) -> LossBreakdown:
    total = -recon
    if cf is not None and weights["cf"] != 0.0:
        total = total - cf * weights["cf"]
    if kl is not None and weights["kl"] != 0.0:
        total = total + kl * weights["kl"]
    value = float(total.data)
    if not np.isfinite(value):
        raise NonFiniteError("loss is not finite")
    return LossBreakdown(
        recon_loglik=float(recon.data),
        cf_supervision=0.0 if cf is None else float(cf.data),
        latent_kl=0.0 if kl is None else float(kl.data),
        total=value,
        weights={"cf": float(weights["cf"]), "kl": float(weights["kl"])},
        loss=total,
        y_prime=None if y_prime is None else y_prime.data,
    )


def vci_loss(model: VciModel, p_hat: EmpiricalOutcomeModel | None, batch: Batch, weights: dict,
             detach: DetachConfig | None = None, noise=None) -> LossBreakdown:
    """Negative evidence bound averaged over the batch.

    ``noise`` is the standard-normal draw for the reconstruction latent; pass
    zeros for a deterministic pass. ``p_hat=None`` selects adversarial supervision.
    """
    detach = detach or DetachConfig()
    if len(batch) == 0:
        raise ValueError("empty batch")
    latent = encode(model.encoder, batch.y, batch.t, batch.x)
    mu = latent.mean
    if noise is None:
        noise = np.zeros(mu.shape, dtype=mu.dtype)
    z = latent.sample(noise)
    mean, log_sigma = decode(model.decoder, z, batch.t)
    recon = gaussian_log_lik(mean, log_sigma, batch.y).mean()

    need_cf = weights["cf"] != 0.0
    need_kl = weights["kl"] != 0.0
    y_prime = None
    cf = kl = None
    if need_cf or need_kl:
        y_prime = decode(model.decoder, mu, batch.t_prime)[0]
    if need_cf:
        cf = counterfactual_supervision(model, p_hat, batch, y_prime).mean()
    if need_kl:
        if detach.mode == "fully_attached":
            mu2 = encode(model.encoder, y_prime, batch.t_prime, batch.x).mean
        elif detach.mode == "target_copy":
            mu2 = encode(model.target_encoder, y_prime, batch.t_prime, batch.x).mean
        else:
            mu2 = encode(model.target_encoder, no_grad_copy(y_prime), batch.t_prime, batch.x).mean
        kl = latent_kl_unit_gaussians(mu, mu2).mean()
    return _finish(recon, cf, kl, weights, y_prime)


def sae_loss(model: VciModel, p_hat: EmpiricalOutcomeModel | None, batch: Batch, omega: float) -> LossBreakdown:
    """Summed squared reconstruction error minus ω times counterfactual supervision.

    The breakdown stores the negated squared error as ``recon_loglik`` so that
    ``total = -recon_loglik - ω·cf`` holds as for the VCI loss.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    mu = encode(model.encoder, batch.y, batch.t, batch.x).mean
    y_rec = decode(model.decoder, mu, batch.t)[0]
    y = Tensor(np.asarray(batch.y, dtype=y_rec.dtype))
    l2 = (y_rec - y).square().sum(axis=-1).mean()
    cf = y_prime = None
    if omega != 0.0:
        y_prime = decode(model.decoder, mu, batch.t_prime)[0]
        cf = counterfactual_supervision(model, p_hat, batch, y_prime).mean()
    return _finish(-l2, cf, None, {"cf": omega, "kl": 0.0}, y_prime)


def objective(model: VciModel, p_hat, batch: Batch, weights: dict, detach: DetachConfig | None = None,
              noise=None, ablation: str = "VCI") -> LossBreakdown:
    """Dispatch on ablation mode: SAE uses the squared-error loss, the rest the VCI bound."""
    if ablation == "SAE":
        return sae_loss(model, p_hat, batch, weights["cf"])
    return vci_loss(model, p_hat, batch, weights, detach, noise)


def discriminator_step_loss(model: VciModel, batch: Batch, y_prime: np.ndarray) -> Tensor:
    """L_D on the batch's factual triplets against detached counterfactual triplets."""
    D = model.discriminator
    real = D.logits(batch.x, batch.t, batch.y)
    fake = D.logits(batch.x, batch.t_prime, np.asarray(y_prime))
    return discriminator_losses_from_logits(real, fake)[0]
