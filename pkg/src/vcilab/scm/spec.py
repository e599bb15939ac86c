"""Structural causal model descriptions and sample records."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

FAMILIES = ("linear_gaussian", "nonlinear_vector", "blob_image", "discrete")


class InvalidSpecError(ValueError):
    """An ScmSpec field is out of range or inconsistent; ``field`` names it."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class TreatmentSpace:
    kind: str  # "categorical" | "continuous"
    levels: int = 0
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()
    names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return 1 if self.kind == "categorical" else len(self.low)

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"

    def contains(self, value) -> bool:
        if self.is_categorical:
            v = np.asarray(value)
            return v.ndim == 0 and float(v) == int(v) and 0 <= int(v) < self.levels
        v = np.asarray(value, dtype=float).reshape(-1)
        return v.shape == (self.dim,) and bool(np.all(v >= self.low) and np.all(v <= self.high))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "levels": self.levels, "low": list(self.low), "high": list(self.high),
                "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "TreatmentSpace":
        return cls(d["kind"], int(d.get("levels", 0)), tuple(d.get("low", ())), tuple(d.get("high", ())),
                   tuple(d.get("names", ())))


@dataclass
class ScmSpec:
    """A parameterized SCM able to emit factual and counterfactual outcomes.

    ``params`` holds the mixing parameters (arrays) of the family; ``noise``
    holds the noise scales. ``seed`` is the master seed the parameters were
    drawn from.
    """

    family: str
    covariate_cards: list[int]
    treatment: TreatmentSpace
    latent_dim: int
    outcome_dim: int
    params: dict[str, np.ndarray] = field(default_factory=dict)
    noise: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def n_strata(self) -> int:
        return int(np.prod(self.covariate_cards)) if self.covariate_cards else 1

    def stratum_of(self, x) -> int:
        x = tuple(int(v) for v in x)
        if not self.covariate_cards:
            if x:
                raise ValueError("this SCM has no covariates")
            return 0
        if len(x) != len(self.covariate_cards) or any(not 0 <= v < c for v, c in zip(x, self.covariate_cards)):
            raise ValueError(f"covariate value {x} outside support {self.covariate_cards}")
        return int(np.ravel_multi_index(x, self.covariate_cards))

    def covariates_of(self, stratum: int) -> tuple[int, ...]:
        if not self.covariate_cards:
            return ()
        return tuple(int(v) for v in np.unravel_index(int(stratum), self.covariate_cards))

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidSpecError("family", f"unknown family {self.family!r}; expected one of {FAMILIES}")
        for c in self.covariate_cards:
            if int(c) < 1:
                raise InvalidSpecError("covariate_cards", "all cardinalities must be >= 1")
        tr = self.treatment
        if tr.kind not in ("categorical", "continuous"):
            raise InvalidSpecError("treatment", f"unknown treatment kind {tr.kind!r}")
        if tr.kind == "categorical" and tr.levels < 1:
            raise InvalidSpecError("treatment", "categorical treatment needs >= 1 level")
        if tr.kind == "continuous":
            if len(tr.low) != len(tr.high) or not tr.low:
                raise InvalidSpecError("treatment", "continuous treatment needs matching low/high ranges")
            if any(lo > hi for lo, hi in zip(tr.low, tr.high)):
                raise InvalidSpecError("treatment", "low must not exceed high")
        if self.latent_dim < 1:
            raise InvalidSpecError("latent_dim", "must be >= 1")
        if self.outcome_dim < 1:
            raise InvalidSpecError("outcome_dim", "must be >= 1")
        for k, v in self.noise.items():
            if not np.isfinite(v) or v < 0:
                raise InvalidSpecError(f"noise.{k}", "noise scales must be finite and >= 0")
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise InvalidSpecError(f"params.{k}", "non-finite parameter")
        for key in ("p_x",):
            if key in self.params and abs(self.params[key].sum() - 1.0) > 1e-12:
                raise InvalidSpecError(f"params.{key}", "probabilities must sum to 1")
        if "propensity" in self.params:
            rows = self.params["propensity"]
            if rows.shape != (self.n_strata, tr.levels):
                raise InvalidSpecError("params.propensity", f"expected shape {(self.n_strata, tr.levels)}")
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
                raise InvalidSpecError("params.propensity", "rows must be non-negative and sum to 1")
        if self.family == "discrete":
            DiscreteScm.from_spec(self)  # validates tables

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "covariate_cards": [int(c) for c in self.covariate_cards],
            "treatment": self.treatment.to_dict(),
            "latent_dim": int(self.latent_dim),
            "outcome_dim": int(self.outcome_dim),
            "params": {k: np.asarray(v).tolist() for k, v in sorted(self.params.items())},
            "noise": {k: float(v) for k, v in sorted(self.noise.items())},
            "seed": int(self.seed),
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScmSpec":
        required = ("family", "treatment", "latent_dim", "outcome_dim")
        for key in required:
            if key not in d:
                raise InvalidSpecError(key, "missing field")
        try:
            treatment = TreatmentSpace.from_dict(d["treatment"])
        except (KeyError, TypeError) as exc:
            raise InvalidSpecError("treatment", f"malformed ({exc})") from None
        return cls(
            family=d["family"],
            covariate_cards=[int(c) for c in d.get("covariate_cards", [])],
            treatment=treatment,
            latent_dim=int(d["latent_dim"]),
            outcome_dim=int(d["outcome_dim"]),
            params={k: np.asarray(v, dtype=float) for k, v in d.get("params", {}).items()},
            noise={k: float(v) for k, v in d.get("noise", {}).items()},
            seed=int(d.get("seed", 0)),
            options=dict(d.get("options", {})),
        )


@dataclass
class DiscreteScm:
    """Finite-support SCM: p(X), p(Z|X), p(T|X), p(Y|Z,T).

    T' and Y' reuse p(T|X) and p(Y|Z,T).
    """

    p_x: np.ndarray  # (nx,)
    p_z_x: np.ndarray  # (nx, nz)
    p_t_x: np.ndarray  # (nx, nt)
    p_y_zt: np.ndarray  # (nz, nt, ny)

    def __post_init__(self):
        self.p_x = np.asarray(self.p_x, dtype=np.float64)
        self.p_z_x = np.asarray(self.p_z_x, dtype=np.float64)
        self.p_t_x = np.asarray(self.p_t_x, dtype=np.float64)
        self.p_y_zt = np.asarray(self.p_y_zt, dtype=np.float64)
        nx, nz, nt, ny = self.sizes
        shapes = {"p_x": (nx,), "p_z_x": (nx, nz), "p_t_x": (nx, nt), "p_y_zt": (nz, nt, ny)}
        for name, shape in shapes.items():
            table = getattr(self, name)
            if table.shape != shape:
                raise InvalidSpecError(f"params.{name}", f"expected shape {shape}, got {table.shape}")
            if np.any(table < 0):
                raise InvalidSpecError(f"params.{name}", "negative probability")
            if np.any(np.abs(table.sum(axis=-1) - 1.0) > 1e-12):
                raise InvalidSpecError(f"params.{name}", "rows must sum to 1 within 1e-12")

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.p_x.shape[0], self.p_z_x.shape[1], self.p_t_x.shape[1], self.p_y_zt.shape[2])

    @classmethod
    def from_spec(cls, spec: ScmSpec) -> "DiscreteScm":
        try:
            return cls(spec.params["p_x"], spec.params["p_z_x"], spec.params["propensity"], spec.params["p_y_zt"])
        except KeyError as exc:
            raise InvalidSpecError(f"params.{exc.args[0]}", "missing discrete table") from None


@dataclass
class FullSample:
    """One generated individual.

    ``z_true`` and ``y_prime_true`` are ground truth hidden from models; they
    are ``None`` when a dataset was read without them.
    """

    x: tuple[int, ...]
    t: Any  # int for categorical treatments, float array otherwise
    t_prime: Any
    y: np.ndarray
    z_true: np.ndarray | None = None
    y_prime_true: np.ndarray | None = None

    def same_treatment(self) -> bool:
        return bool(np.array_equal(np.asarray(self.t), np.asarray(self.t_prime)))


@dataclass
class ArrayData:
    """Column view of a list of samples, as used by models and estimators."""

    x: np.ndarray  # (n, n_cov) int
    strata: np.ndarray  # (n,) int
    t: np.ndarray  # (n,) int or (n, k) float
    t_prime: np.ndarray
    y: np.ndarray  # (n, d)
    z_true: np.ndarray | None = None
    y_prime_true: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ArrayData":
        idx = np.asarray(idx)
        return ArrayData(
            self.x[idx], self.strata[idx], self.t[idx], self.t_prime[idx], self.y[idx],
            None if self.z_true is None else self.z_true[idx],
            None if self.y_prime_true is None else self.y_prime_true[idx],
        )

    @classmethod
    def from_samples(cls, samples: list[FullSample], covariate_cards: list[int]) -> "ArrayData":
        if not samples:
            raise ValueError("empty sample list")
        n = len(samples)
        x = np.array([s.x for s in samples], dtype=np.int64).reshape(n, len(covariate_cards))
        strata = np.ravel_multi_index(x.T, covariate_cards) if covariate_cards else np.zeros(n, dtype=np.int64)
        if isinstance(samples[0].t, (int, np.integer)):
            t = np.array([s.t for s in samples], dtype=np.int64)
            tp = np.array([s.t_prime for s in samples], dtype=np.int64)
        else:
            t = np.array([np.asarray(s.t, dtype=float) for s in samples])
            tp = np.array([np.asarray(s.t_prime, dtype=float) for s in samples])
        y = np.stack([s.y for s in samples])
        z = None if any(s.z_true is None for s in samples) else np.stack([s.z_true for s in samples])
        yp = None if any(s.y_prime_true is None for s in samples) else np.stack([s.y_prime_true for s in samples])
        return cls(x, np.asarray(strata, dtype=np.int64), t, tp, y, z, yp)
