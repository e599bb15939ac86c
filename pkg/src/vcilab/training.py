"""Training loop, counterfactual-treatment sampling, checkpoints and the ablation harness."""
from __future__ import annotations

import copy
import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation.metrics import counterfactual_mse
from .models import EmpiricalOutcomeModel, MissingStratumError, ModelConfig, VciModel
from .objectives import ABLATION_MODES, Batch, DetachConfig, LossBreakdown, discriminator_step_loss, objective, \
    select_ablation
from .scm.spec import ArrayData, TreatmentSpace
from .tensor import AdamState, NonFiniteError, Tape, adam_step, clip_grad_norm, load_checkpoint, save_checkpoint

LOG_COLUMNS = ("epoch", "step", "recon", "cf", "kl", "total", "disc", "mode", "lr")
FIXED_TIME_ENV = "VCILAB_FIXED_TIME"


@dataclass
class VciConfig:
    mode: str = "VCI"
    weight_cf: float | None = None  # None -> ablation preset
    weight_kl: float | None = None
    supervision: str = "empirical"  # "empirical" | "adversarial"
    detach: str = "target_copy"
    refresh_period: int = 1
    epochs: int = 60
    batch_size: int = 64
    lr: float = 3e-4
    disc_lr: float = 3e-4
    weight_decay: float = 4e-7
    lr_decay_steps: int | None = None
    lr_decay_factor: float = 0.1
    seed: int = 0
    latent_dim: int | None = None  # None -> benchmark latent dimension
    hidden: int = 128
    depth: int = 2
    embed_dim: int = 8
    disc_hidden: int = 128
    disc_depth: int = 2
    learn_sigma: bool = False
    sigma: float = 1.0
    eval_period: int = 1
    val_fraction: float = 0.1
    grad_clip: float = 100.0
    bandwidth_scale: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in ABLATION_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {ABLATION_MODES}")
        if self.supervision not in ("empirical", "adversarial"):
            raise ValueError(f"unknown supervision {self.supervision!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr < 0 or self.disc_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.eval_period < 1:
            raise ValueError("eval period must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        DetachConfig(self.detach, self.refresh_period)

    @property
    def weights(self) -> dict:
        return select_ablation(self.mode, self.weight_cf, self.weight_kl)

    @property
    def detach_config(self) -> DetachConfig:
        return DetachConfig(self.detach, self.refresh_period)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VciConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "VciConfig":
        d = self.to_dict()
        d.update(changes)
        return VciConfig.from_dict(d)


# ---------------------------------------------------------------------------
# counterfactual treatments


class TreatmentIndex:
    """Empirical law of T given the covariate stratum, or the box for continuous T."""

    def __init__(self, space: TreatmentSpace, counts: np.ndarray | None = None):
        self.space = space
        self.counts = counts

    @classmethod
    def from_data(cls, data: ArrayData, space: TreatmentSpace, n_strata: int) -> "TreatmentIndex":
        if not space.is_categorical:
            return cls(space)
        counts = np.zeros((n_strata, space.levels), dtype=np.int64)
        np.add.at(counts, (data.strata, np.asarray(data.t, dtype=np.int64)), 1)
        return cls(space, counts)


def sample_counterfactual_treatment(index: TreatmentIndex, strata, rng: np.random.Generator) -> np.ndarray:
    """Draw t' ~ p_data(T | x) per row; uniform over the valid box for continuous treatments."""
    strata = np.asarray(strata, dtype=np.int64).reshape(-1)
    n = len(strata)
    if not index.space.is_categorical:
        lo = np.asarray(index.space.low, dtype=np.float64)
        hi = np.asarray(index.space.high, dtype=np.float64)
        return lo + (hi - lo) * rng.random((n, len(lo)))
    counts = index.counts[strata]
    totals = counts.sum(axis=1)
    if np.any(totals == 0):
        bad = int(strata[np.flatnonzero(totals == 0)[0]])
        raise MissingStratumError(f"covariate stratum {bad} never observed")
    cdf = np.cumsum(counts, axis=1) / totals[:, None]
    u = rng.random(n)
    return np.minimum((u[:, None] >= cdf).sum(axis=1), counts.shape[1] - 1)


# ---------------------------------------------------------------------------
# state and logging


@dataclass
class TrainState:
    model: VciModel
    config: VciConfig
    gen_opt: AdamState = field(default_factory=AdamState)
    disc_opt: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    step: int = 0
    rng: np.random.Generator | None = None
    p_hat: EmpiricalOutcomeModel | None = None
    index: TreatmentIndex | None = None
    best: dict = field(default_factory=dict)  # epoch, metric, arrays
    log: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (epoch, metric name, value)
    target_epoch: int = 0

    def current_lr(self) -> float:
        cfg = self.config
        if cfg.lr_decay_steps:
            return cfg.lr * cfg.lr_decay_factor ** (self.step // cfg.lr_decay_steps)
        return cfg.lr

    def current_disc_lr(self) -> float:
        return self.config.disc_lr * self.current_lr() / self.config.lr if self.config.lr > 0 else 0.0


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def log_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
    return buf.getvalue()


def history_csv(rows: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epoch", "metric", "value"))
    for epoch, name, value in rows:
        writer.writerow((epoch, name, repr(float(value))))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# setup


def build_model_config(config: VciConfig, data: ArrayData, space: TreatmentSpace, covariate_cards,
                       latent_dim: int | None = None) -> ModelConfig:
    return ModelConfig(
        outcome_dim=data.y.shape[1],
        latent_dim=int(config.latent_dim or latent_dim or 8),
        treatment=space,
        covariate_cards=list(covariate_cards),
        hidden=config.hidden,
        depth=config.depth,
        embed_dim=config.embed_dim,
        disc_hidden=config.disc_hidden,
        disc_depth=config.disc_depth,
        learn_sigma=config.learn_sigma,
        sigma=config.sigma,
        adversarial=config.supervision == "adversarial",
    )


def fit_outcome_model(config: VciConfig, data: ArrayData, space: TreatmentSpace, n_strata: int):
    if config.supervision != "empirical":
        return None
    if not space.is_categorical:
        raise ValueError("empirical supervision needs categorical treatments; use adversarial")
    return EmpiricalOutcomeModel.fit(data.strata, data.t, data.y, n_strata, space.levels,
                                     bandwidth_scale=config.bandwidth_scale)


def split_validation(data: ArrayData, fraction: float) -> tuple[ArrayData, ArrayData | None]:
    """Hold out the last ``fraction`` of rows (by index) for model selection."""
    n_val = int(round(len(data) * fraction))
    if n_val == 0 or n_val >= len(data):
        return data, None
    idx = np.arange(len(data))
    return data.subset(idx[:-n_val]), data.subset(idx[-n_val:])


def init_state(config: VciConfig, data: ArrayData, space: TreatmentSpace, covariate_cards,
               latent_dim: int | None = None) -> TrainState:
    if len(data) == 0:
        raise ValueError("empty dataset")
    n_strata = int(np.prod(covariate_cards)) if len(covariate_cards) else 1
    mcfg = build_model_config(config, data, space, covariate_cards, latent_dim)
    model = VciModel(mcfg, seed=config.seed)
    state = TrainState(model=model, config=config, rng=np.random.default_rng([config.seed, 7]))
    state.p_hat = fit_outcome_model(config, data, space, n_strata)
    state.index = TreatmentIndex.from_data(data, space, n_strata)
    return state


def make_batch(data: ArrayData, idx, t_prime) -> Batch:
    return Batch(data.y[idx], data.t[idx], t_prime, data.x[idx], data.strata[idx])


# ---------------------------------------------------------------------------
# steps


def generator_step(state: TrainState, batch: Batch, noise) -> LossBreakdown:
    cfg = state.config
    model = state.model
    params = model.generator_parameters()
    with Tape() as tape:
        lb = objective(model, state.p_hat, batch, cfg.weights, cfg.detach_config, noise, cfg.mode)
    grads = tape.backward(lb.loss, params)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name} at epoch {state.epoch}, step {state.step}: "
                                 f"recon={lb.recon_loglik}, cf={lb.cf_supervision}, kl={lb.latent_kl}")
    if cfg.grad_clip:
        clip_grad_norm(grads, cfg.grad_clip)
    adam_step(params, grads, state.gen_opt, state.current_lr(), cfg.weight_decay)
    return lb


def discriminator_step(state: TrainState, batch: Batch, y_prime: np.ndarray) -> float:
    params = state.model.discriminator_parameters()
    with Tape() as tape:
        loss = discriminator_step_loss(state.model, batch, y_prime)
    grads = tape.backward(loss, params)
    if state.config.grad_clip:
        clip_grad_norm(grads, state.config.grad_clip)
    adam_step(params, grads, state.disc_opt, state.current_disc_lr(), state.config.weight_decay)
    return float(loss.data)


def run_epoch(state: TrainState, data: ArrayData) -> list[dict]:
    cfg = state.config
    model = state.model
    n = len(data)
    perm = state.rng.permutation(n)
    rows = []
    adversarial = model.discriminator is not None and cfg.weights["cf"] != 0.0
    for start in range(0, n, cfg.batch_size):
        idx = perm[start:start + cfg.batch_size]
        tp = sample_counterfactual_treatment(state.index, data.strata[idx], state.rng)
        noise = state.rng.standard_normal((len(idx), model.cfg.latent_dim)).astype(model.dtype)
        batch = make_batch(data, idx, tp)
        lr = state.current_lr()
        lb = generator_step(state, batch, noise)
        disc = discriminator_step(state, batch, lb.y_prime) if adversarial else 0.0
        rows.append({"epoch": state.epoch, "step": state.step, "recon": lb.recon_loglik, "cf": lb.cf_supervision,
                     "kl": lb.latent_kl, "total": lb.total, "disc": disc, "mode": cfg.mode, "lr": lr})
        state.step += 1
    return rows


def evaluate_selection_metric(state: TrainState, val: ArrayData | None) -> tuple[str, float]:
    """Validation counterfactual MSE when ground truth exists, else mean total loss."""
    if val is None:
        recent = [r["total"] for r in state.log if r["epoch"] == state.epoch]
        return "train_total", float(np.mean(recent))
    if val.y_prime_true is not None:
        return "cf_mse", counterfactual_mse(state.model, val)
    cfg = state.config
    rng = np.random.default_rng([cfg.seed, 11])
    tp = sample_counterfactual_treatment(state.index, val.strata, rng)
    zeros = np.zeros((len(val), state.model.cfg.latent_dim), dtype=state.model.dtype)
    lb = objective(state.model, state.p_hat, make_batch(val, np.arange(len(val)), tp), cfg.weights,
                   cfg.detach_config, zeros, cfg.mode)
    return "val_total", lb.total


def train(config: VciConfig, data: ArrayData, space: TreatmentSpace, covariate_cards=(),
          latent_dim: int | None = None, eval_data: ArrayData | None = None, out_dir=None,
          state: TrainState | None = None) -> TrainState:
    """Train per ``config``. Selection uses ``eval_data`` or a held-out tail of ``data``.

    With ``out_dir`` set, writes a checkpoint every eval period plus the log,
    metric history and the best checkpoint at the end.
    """
    if eval_data is None:
        data, eval_data = split_validation(data, config.val_fraction)
    if state is None:
        state = init_state(config, data, space, covariate_cards, latent_dim)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for _ in range(config.epochs):
        state.epoch += 1
        state.log.extend(run_epoch(state, data))
        if state.epoch % config.refresh_period == 0:
            state.model.refresh_target()
            state.target_epoch = state.epoch
        if state.epoch % config.eval_period == 0 or state.epoch == config.epochs:
            name, value = evaluate_selection_metric(state, eval_data)
            state.history.append((state.epoch, name, value))
            if not state.best or value < state.best["metric"]:
                state.best = {"epoch": state.epoch, "metric": value, "name": name,
                              "arrays": {k: v.copy() for k, v in state.model.named_arrays().items()}}
            if out is not None:
                save_model(out / f"epoch_{state.epoch:04d}.ckpt", state)
    if out is not None:
        write_run_outputs(out, state)
    return state


# ---------------------------------------------------------------------------
# persistence


def model_meta(state: TrainState, **extra) -> dict:
    meta = {
        "kind": "vci",
        "model_config": state.model.cfg.to_dict(),
        "train_config": state.config.to_dict(),
        "epoch": state.epoch,
        "step": state.step,
        "target_epoch": state.target_epoch,
    }
    if state.p_hat is not None:
        meta["p_hat"] = state.p_hat.to_json()
    meta.update(extra)
    return meta


def save_model(path, state: TrainState, arrays: dict | None = None, **extra) -> None:
    save_checkpoint(path, arrays if arrays is not None else state.model.named_arrays(), model_meta(state, **extra))


def load_model(path) -> tuple[VciModel | None, dict]:
    """Rebuild a model from a checkpoint; returns ``(None, meta)`` for non-model checkpoints."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "vci":
        return None, meta
    mcfg = ModelConfig.from_dict(meta["model_config"])
    model = VciModel(mcfg, seed=meta["train_config"].get("seed", 0))
    model.load_arrays(arrays)
    return model, meta


def load_outcome_model(meta: dict) -> EmpiricalOutcomeModel | None:
    return EmpiricalOutcomeModel.from_json(meta["p_hat"]) if "p_hat" in meta else None


def write_run_outputs(out: Path, state: TrainState) -> None:
    (out / "train_log.csv").write_text(log_csv(state.log), encoding="utf-8")
    (out / "metrics_history.csv").write_text(history_csv(state.history), encoding="utf-8")
    if state.best:
        save_model(out / "best.ckpt", state, state.best["arrays"], best_epoch=state.best["epoch"],
                   best_metric=state.best["metric"])
    save_model(out / "final.ckpt", state)


def timestamp() -> str:
    fixed = os.environ.get(FIXED_TIME_ENV)
    if fixed:
        return fixed
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def write_manifest(path, config: dict, dataset_hash: str | None, outputs: list[str], started: str,
                   finished: str | None = None) -> dict:
    manifest = {
        "config": config,
        "dataset_sha256": dataset_hash,
        "tool_version": __version__,
        "started": started,
        "finished": finished,
        "outputs": sorted(outputs),
    }
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# ablations


def ablation_sweep(base: VciConfig, modes, seeds, data: ArrayData, space: TreatmentSpace, covariate_cards=(),
                   latent_dim: int | None = None, eval_data: ArrayData | None = None, jobs: int = 1) -> list[dict]:
    """Train every (mode, seed) and return one row per evaluation epoch.

    Needs ground-truth counterfactuals in ``eval_data`` (or in ``data`` when no
    separate evaluation set is given).
    """
    probe = eval_data if eval_data is not None else data
    if probe.y_prime_true is None:
        raise ValueError("ablation sweep needs y_prime_true for counterfactual MSE")
    runs = [(m, s) for m in modes for s in seeds]

    def one(run):
        mode, seed = run
        cfg = base.replace(mode=mode, seed=int(seed))
        st = train(cfg, data, space, covariate_cards, latent_dim, eval_data=eval_data)
        return [{"mode": mode, "seed": int(seed), "epoch": e, "cf_mse": v} for e, name, v in st.history]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, runs))
    else:
        results = [one(r) for r in runs]
    return [row for rows in results for row in rows]


def summarize_sweep(rows: list[dict]) -> dict:
    """Per (mode, seed): best and final counterfactual MSE."""
    out: dict = {}
    for r in rows:
        key = (r["mode"], r["seed"])
        cur = out.setdefault(key, {"best": np.inf, "best_epoch": 0, "final": None, "final_epoch": -1})
        if r["cf_mse"] < cur["best"]:
            cur["best"] = r["cf_mse"]
            cur["best_epoch"] = r["epoch"]
        if r["epoch"] > cur["final_epoch"]:
            cur["final"] = r["cf_mse"]
            cur["final_epoch"] = r["epoch"]
    return out


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("mode", "seed", "epoch", "cf_mse"))
    for r in rows:
        writer.writerow((r["mode"], r["seed"], r["epoch"], repr(float(r["cf_mse"]))))
    return buf.getvalue()


def clone_state(state: TrainState) -> TrainState:
    return copy.deepcopy(state)
