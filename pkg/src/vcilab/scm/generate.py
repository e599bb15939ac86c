"""Benchmark factories, per-sample generation and population targets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blob import ANGLE_CENTER, render_blobs
from .spec import ArrayData, DiscreteScm, FullSample, InvalidSpecError, ScmSpec, TreatmentSpace

MC_DRAWS = 1_000_000
_MC_CHUNK = 100_000


# ---------------------------------------------------------------------------
# factories


def _bounded_propensity(rng, n_strata: int, levels: int) -> np.ndarray:
    rows = 0.5 / levels + 0.5 * rng.dirichlet(np.full(levels, 2.0), size=n_strata)
    return rows / rows.sum(axis=1, keepdims=True)


def linear_gaussian_spec(
    seed: int = 0,
    covariate_cards=(3,),
    n_levels: int = 3,
    latent_dim: int = 4,
    outcome_dim: int = 6,
    latent_noise: float = 1.0,
    outcome_noise: float = 0.0,
    mix=None,
    effects=None,
    latent_means=None,
    propensity=None,
    p_x=None,
) -> ScmSpec:
    """Y = mix @ Z + effects[:, T] (+ noise), Z = latent_means[X] + latent_noise * U."""
    rng = np.random.default_rng([seed, 101])
    cards = [int(c) for c in covariate_cards]
    n_strata = int(np.prod(cards)) if cards else 1
    params = {
        "p_x": np.full(n_strata, 1.0 / n_strata) if p_x is None else np.asarray(p_x, float),
        "propensity": _bounded_propensity(rng, n_strata, n_levels) if propensity is None
        else np.asarray(propensity, float),
        "latent_means": rng.normal(0.0, 1.0, (n_strata, latent_dim)) if latent_means is None
        else np.asarray(latent_means, float),
        "mix": rng.normal(0.0, 1.0 / np.sqrt(latent_dim), (outcome_dim, latent_dim)) if mix is None
        else np.asarray(mix, float),
        "effects": rng.normal(0.0, 1.0, (outcome_dim, n_levels)) if effects is None
        else np.asarray(effects, float),
    }
    return ScmSpec("linear_gaussian", cards, TreatmentSpace("categorical", n_levels), latent_dim, outcome_dim,
                   params, {"latent": float(latent_noise), "outcome": float(outcome_noise)}, seed)


def nonlinear_vector_spec(
    seed: int = 0,
    covariate_cards=(3,),
    n_levels: int = 4,
    latent_dim: int = 8,
    outcome_dim: int = 100,
    hidden: int = 32,
    latent_noise: float = 1.0,
    outcome_noise: float = 0.1,
    effect_scale: float = 1.5,
    effect_fraction: float = 0.3,
) -> ScmSpec:
    """Vector outcome from a random tanh network of Z plus treatment effects.

    Level 0 is the control (no effect). Every other level shifts a sparse
    subset of components strongly, the rest weakly, and has a covariate-
    specific shift and a Z-dependent (individual) component.
    """
    rng = np.random.default_rng([seed, 202])
    cards = [int(c) for c in covariate_cards]
    n_strata = int(np.prod(cards)) if cards else 1
    strong = rng.random((n_levels, outcome_dim)) < effect_fraction
    effects = np.where(strong, rng.normal(0.0, effect_scale, (n_levels, outcome_dim)),
                       rng.normal(0.0, 0.1, (n_levels, outcome_dim)))
    effects[0] = 0.0
    x_effects = rng.normal(0.0, 0.2, (n_strata, n_levels, outcome_dim))
    x_effects[:, 0] = 0.0
    interact = rng.normal(0.0, 0.3 / np.sqrt(latent_dim), (n_levels, latent_dim, outcome_dim))
    interact[0] = 0.0
    params = {
        "p_x": np.full(n_strata, 1.0 / n_strata),
        "propensity": _bounded_propensity(rng, n_strata, n_levels),
        "latent_means": rng.normal(0.0, 1.0, (n_strata, latent_dim)),
        "w1": rng.normal(0.0, 1.5 / np.sqrt(latent_dim), (latent_dim, hidden)),
        "b1": rng.normal(0.0, 0.5, hidden),
        "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, outcome_dim)),
        "effects": effects,
        "x_effects": x_effects,
        "interact": interact,
    }
    return ScmSpec("nonlinear_vector", cards, TreatmentSpace("categorical", n_levels), latent_dim, outcome_dim,
                   params, {"latent": float(latent_noise), "outcome": float(outcome_noise)}, seed)


def blob_image_spec(
    seed: int = 0,
    resolution: int = 16,
    thickness_range=(1.0, 2.2),
    intensity_range=(0.3, 1.0),
    max_offset: int = 2,
    angle_jitter: float = 0.35,
) -> ScmSpec:
    """Blob images; treatment = (thickness, intensity), exogenous = (offset_u, offset_v, angle)."""
    tr = TreatmentSpace("continuous", low=(float(thickness_range[0]), float(intensity_range[0])),
                        high=(float(thickness_range[1]), float(intensity_range[1])),
                        names=("thickness", "intensity"))
    return ScmSpec("blob_image", [], tr, 3, resolution * resolution, {}, {"angle": float(angle_jitter)}, seed,
                   {"resolution": int(resolution), "max_offset": int(max_offset)})


def random_discrete_scm(rng: np.random.Generator, max_size: int = 4, sizes=None) -> DiscreteScm:
    """Dirichlet(1) conditional tables; sizes drawn in [1, max_size] unless given."""
    if sizes is None:
        sizes = rng.integers(1, max_size + 1, size=4)
    nx, nz, nt, ny = (int(s) for s in sizes)
    return DiscreteScm(
        _normalize(rng.dirichlet(np.ones(nx))),
        _normalize(rng.dirichlet(np.ones(nz), size=nx)),
        _normalize(rng.dirichlet(np.ones(nt), size=nx)),
        _normalize(rng.dirichlet(np.ones(ny), size=(nz, nt))),
    )


def _normalize(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p / p.sum(axis=-1, keepdims=True)


def discrete_spec(scm: DiscreteScm, seed: int = 0) -> ScmSpec:
    nx, nz, nt, ny = scm.sizes
    params = {"p_x": scm.p_x, "p_z_x": scm.p_z_x, "propensity": scm.p_t_x, "p_y_zt": scm.p_y_zt}
    return ScmSpec("discrete", [nx], TreatmentSpace("categorical", nt), 1, 1, params, {}, seed)


# ---------------------------------------------------------------------------
# generation


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of master seed ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))))


def _per_sample_draws(seed: int, n: int, n_uniform: int, n_normal: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.empty((n, n_uniform))
    g = np.empty((n, n_normal))
    for i in range(n):
        rng = substream(seed, i)
        u[i] = rng.random(n_uniform)
        g[i] = rng.standard_normal(n_normal)
    return u, g


def _inverse_cdf(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=-1)
    idx = (u[:, None] >= cdf).sum(axis=-1)
    return np.minimum(idx, rows.shape[-1] - 1)


def _vector_outcome(spec: ScmSpec, z: np.ndarray, t: np.ndarray, strata: np.ndarray) -> np.ndarray:
    p = spec.params
    if spec.family == "linear_gaussian":
        return z @ p["mix"].T + p["effects"][:, t].T
    h = np.tanh(z @ p["w1"] + p["b1"])
    return (h @ p["w2"] + p["effects"][t] + p["x_effects"][strata, t]
            + np.einsum("nk,nkd->nd", z, p["interact"][t]))


def generate_dataset(spec: ScmSpec, n: int, seed: int) -> list[FullSample]:
    """Draw ``n`` individuals with factual and counterfactual outcomes.

    Each sample uses its own substream of ``seed``. T' is drawn from the same
    law as T given X, and Y, Y' share the realized Z (and all other
    exogenous noise), so T' == T implies Y' == Y.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    spec.validate()
    _check_params(spec)
    fam = spec.family
    if fam in ("linear_gaussian", "nonlinear_vector"):
        return _generate_vector(spec, n, seed)
    if fam == "blob_image":
        return _generate_blob(spec, n, seed)
    return _generate_discrete(spec, n, seed)


def _generate_vector(spec: ScmSpec, n: int, seed: int) -> list[FullSample]:
    p = spec.params
    dz, dy = spec.latent_dim, spec.outcome_dim
    u, g = _per_sample_draws(seed, n, 3, dz + dy)
    strata = _inverse_cdf(np.broadcast_to(p["p_x"], (n, spec.n_strata)), u[:, 0])
    t = _inverse_cdf(p["propensity"][strata], u[:, 1])
    tp = _inverse_cdf(p["propensity"][strata], u[:, 2])
    z = p["latent_means"][strata] + spec.noise.get("latent", 1.0) * g[:, :dz]
    eps = spec.noise.get("outcome", 0.0) * g[:, dz:]
    y = _vector_outcome(spec, z, t, strata) + eps
    yp = _vector_outcome(spec, z, tp, strata) + eps
    return [
        FullSample(spec.covariates_of(strata[i]), int(t[i]), int(tp[i]), y[i], z[i], yp[i])
        for i in range(n)
    ]


def _blob_treatments(spec: ScmSpec, u: np.ndarray) -> np.ndarray:
    lo = np.asarray(spec.treatment.low)
    hi = np.asarray(spec.treatment.high)
    return lo + (hi - lo) * u


def _blob_jitter(spec: ScmSpec, u: np.ndarray) -> np.ndarray:
    m = spec.options.get("max_offset", 2)
    offsets = np.floor(u[:, :2] * (2 * m + 1)).astype(np.int64) - m
    angle = ANGLE_CENTER + spec.noise.get("angle", 0.35) * (2.0 * u[:, 2] - 1.0)
    return np.column_stack([offsets, angle])


def _generate_blob(spec: ScmSpec, n: int, seed: int) -> list[FullSample]:
    res = spec.options.get("resolution", 16)
    u, _ = _per_sample_draws(seed, n, 7, 0)
    t = _blob_treatments(spec, u[:, 0:2])
    tp = _blob_treatments(spec, u[:, 2:4])
    z = _blob_jitter(spec, u[:, 4:7])
    y = render_blobs(t[:, 0], t[:, 1], z[:, :2], z[:, 2], res)
    yp = render_blobs(tp[:, 0], tp[:, 1], z[:, :2], z[:, 2], res)
    return [FullSample((), t[i].copy(), tp[i].copy(), y[i], z[i], yp[i]) for i in range(n)]


def _generate_discrete(spec: ScmSpec, n: int, seed: int) -> list[FullSample]:
    scm = DiscreteScm.from_spec(spec)
    u, _ = _per_sample_draws(seed, n, 5, 0)
    x = _inverse_cdf(np.broadcast_to(scm.p_x, (n, len(scm.p_x))), u[:, 0])
    z = _inverse_cdf(scm.p_z_x[x], u[:, 1])
    t = _inverse_cdf(scm.p_t_x[x], u[:, 2])
    tp = _inverse_cdf(scm.p_t_x[x], u[:, 3])
    # one shared uniform for Y and Y': equal treatments give equal outcomes
    y = _inverse_cdf(scm.p_y_zt[z, t], u[:, 4])
    yp = _inverse_cdf(scm.p_y_zt[z, tp], u[:, 4])
    return [
        FullSample((int(x[i]),), int(t[i]), int(tp[i]), np.array([float(y[i])]), np.array([float(z[i])]),
                   np.array([float(yp[i])]))
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# population targets


@dataclass
class TrueMarginal:
    value: np.ndarray
    se: np.ndarray  # zero for closed-form targets
    method: str  # "analytic" | "enumeration" | "monte_carlo"


def true_marginal(spec: ScmSpec, alpha, covariate_filter=None, draws: int = MC_DRAWS) -> TrueMarginal:
    """E[Y'_{do(T'=alpha)}], optionally restricted to X = covariate_filter."""
    if not spec.treatment.contains(alpha):
        raise ValueError(f"alpha={alpha!r} outside the treatment space")
    stratum = None
    if covariate_filter is not None:
        cov = (covariate_filter,) if np.isscalar(covariate_filter) else tuple(covariate_filter)
        stratum = spec.stratum_of(cov)
    fam = spec.family
    p = spec.params
    if fam == "linear_gaussian":
        a = int(alpha)
        ez = p["latent_means"][stratum] if stratum is not None else p["p_x"] @ p["latent_means"]
        val = p["mix"] @ ez + p["effects"][:, a]
        return TrueMarginal(val, np.zeros_like(val), "analytic")
    if fam == "discrete":
        scm = DiscreteScm.from_spec(spec)
        a = int(alpha)
        ey_z = scm.p_y_zt[:, a, :] @ np.arange(scm.sizes[3], dtype=float)  # (nz,)
        if stratum is not None:
            val = np.array([scm.p_z_x[stratum] @ ey_z])
        else:
            val = np.array([scm.p_x @ (scm.p_z_x @ ey_z)])
        return TrueMarginal(val, np.zeros(1), "enumeration")
    return _mc_marginal(spec, alpha, stratum, draws)


def _mc_marginal(spec: ScmSpec, alpha, stratum, draws: int) -> TrueMarginal:
    rng = np.random.default_rng([spec.seed, 303, 0 if stratum is None else stratum + 1])
    total = np.zeros(spec.outcome_dim)
    total_sq = np.zeros(spec.outcome_dim)
    done = 0
    while done < draws:
        m = min(_MC_CHUNK, draws - done)
        if spec.family == "blob_image":
            jitter = _blob_jitter(spec, rng.random((m, 3)))
            a = np.asarray(alpha, dtype=float)
            vals = render_blobs(np.full(m, a[0]), np.full(m, a[1]), jitter[:, :2], jitter[:, 2],
                                spec.options.get("resolution", 16))
        else:
            p = spec.params
            if stratum is None:
                strata = _inverse_cdf(np.broadcast_to(p["p_x"], (m, spec.n_strata)), rng.random(m))
            else:
                strata = np.full(m, stratum)
            z = p["latent_means"][strata] + spec.noise.get("latent", 1.0) * rng.standard_normal((m, spec.latent_dim))
            vals = _vector_outcome(spec, z, np.full(m, int(alpha)), strata)
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        done += m
    mean = total / draws
    var = np.maximum(total_sq / draws - mean * mean, 0.0)
    return TrueMarginal(mean, np.sqrt(var / draws), "monte_carlo")


def holdout_strata(data: ArrayData, k: int, seed: int) -> tuple[ArrayData, ArrayData, list[tuple[int, int]]]:
    """Move every row of ``k`` random observed (stratum, treatment) cells to a held-out split.

    Synthetic stand-in for out-of-distribution evaluation on unseen
    perturbations. Each stratum keeps at least one observed treatment in the
    training split so counterfactual sampling stays defined.
    """
    t = np.asarray(data.t)
    if t.ndim != 1 or not np.issubdtype(t.dtype, np.integer):
        raise ValueError("stratum holdout needs categorical treatments")
    cells = sorted({(int(s), int(v)) for s, v in zip(data.strata, t)})
    rng = np.random.default_rng([seed, 505])
    left = {s: sum(1 for c in cells if c[0] == s) for s, _ in cells}
    held: list[tuple[int, int]] = []
    for i in rng.permutation(len(cells)):
        if len(held) == k:
            break
        s, v = cells[i]
        if left[s] > 1:
            held.append((s, v))
            left[s] -= 1
    if len(held) < k:
        raise ValueError(f"cannot hold out {k} cells; only {len(held)} can go without emptying a stratum")
    mask = np.zeros(len(t), dtype=bool)
    for s, v in held:
        mask |= (data.strata == s) & (t == v)
    return data.subset(np.flatnonzero(~mask)), data.subset(np.flatnonzero(mask)), sorted(held)


def _check_params(spec: ScmSpec) -> None:
    needed = {
        "linear_gaussian": ("p_x", "propensity", "latent_means", "mix", "effects"),
        "nonlinear_vector": ("p_x", "propensity", "latent_means", "w1", "b1", "w2", "effects", "x_effects",
                             "interact"),
        "blob_image": (),
        "discrete": ("p_x", "p_z_x", "propensity", "p_y_zt"),
    }[spec.family]
    for key in needed:
        if key not in spec.params:
            raise InvalidSpecError(f"params.{key}", "missing")
