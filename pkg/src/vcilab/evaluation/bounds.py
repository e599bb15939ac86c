"""Exact enumeration checks of the variational bounds on finite SCMs.

The SCM factorizes as p(x) p(z|x) p(t|x) p(y|z,t); a counterfactual outcome
y' under t' shares z with the factual record.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from ..scm.spec import DiscreteScm

GAP_TOL = 1e-9


@dataclass(frozen=True)
class BoundCheckResult:
    lhs: float
    rhs: float
    gap: float
    assignment: tuple  # (x, t, t', y, y')

    @property
    def holds(self) -> bool:
        return self.gap >= -GAP_TOL


def _tables(scm: DiscreteScm, max_size: int | None):
    if max_size is not None and max(scm.sizes) > max_size:
        raise ValueError(f"support sizes {scm.sizes} exceed the cap {max_size}")
    # joint p(z, y | x, t) as (x, t, z, y)
    joint = scm.p_z_x[:, None, :, None] * np.transpose(scm.p_y_zt, (1, 0, 2))[None, :, :, :]
    p_y_xt = joint.sum(axis=2)  # (x, t, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(p_y_xt[:, :, None, :] > 0, joint / p_y_xt[:, :, None, :], 0.0)  # p(z|y,t,x) at (x,t,z,y)
    return p_y_xt, np.transpose(post, (0, 1, 3, 2))  # post -> (x, t, y, z)


def _assignments(scm: DiscreteScm, p_y_xt):
    nx, _, nt, ny = scm.sizes
    for x in range(nx):
        if scm.p_x[x] <= 0:
            continue
        for t in range(nt):
            if scm.p_t_x[x, t] <= 0:
                continue
            for tp in range(nt):
                if scm.p_t_x[x, tp] <= 0:
                    continue
                for y in range(ny):
                    if p_y_xt[x, t, y] <= 0:
                        continue
                    for yp in range(ny):
                        if p_y_xt[x, tp, yp] <= 0:
                            continue
                        yield x, t, tp, y, yp


def verify_elbo_discrete(scm: DiscreteScm, max_size: int | None = None) -> list[BoundCheckResult]:
    """Check log p(y'|y,x,t,t') >= E_post log p(y|z,t) - [log p(y|x,t) - log p(y'|x,t')] - KL[post || post']."""
    p_y_xt, post = _tables(scm, max_size)
    log_lik = np.log(np.where(scm.p_y_zt > 0, scm.p_y_zt, 1.0))  # only used under xlogy-safe weights
    out = []
    for x, t, tp, y, yp in _assignments(scm, p_y_xt):
        q = post[x, t, y]
        q2 = post[x, tp, yp]
        cond = float(np.dot(q, scm.p_y_zt[:, tp, yp]))
        if cond <= 0:
            continue  # (y, y') jointly impossible
        lhs = float(np.log(cond))
        recon = float(np.sum(np.where(q > 0, q * log_lik[:, t, y], 0.0)))
        kl = float(np.sum(rel_entr(q, q2)))
        rhs = recon - (np.log(p_y_xt[x, t, y]) - np.log(p_y_xt[x, tp, yp])) - kl
        out.append(BoundCheckResult(lhs, float(rhs), float(lhs - rhs), (x, t, tp, y, yp)))
    return out


def verify_implicit_elbo_discrete(scm: DiscreteScm, max_size: int | None = None) -> list[BoundCheckResult]:
    """Check log p(y|x,t) against the bound that treats y' as a latent variable.

    RHS = E_post log p(y|z,t) - E_post KL[p(y'|z,t') || p(y'|x,t')]
          - E_{post(z) p(y'|z,t')} log[post(z) / p(z|y',t',x)]
    """
    p_y_xt, post = _tables(scm, max_size)
    ny = scm.sizes[3]
    log_lik = np.log(np.where(scm.p_y_zt > 0, scm.p_y_zt, 1.0))
    out = []
    # y' is integrated out, so there is one row per (x, t, t', y)
    rows = sorted({a[:4] for a in _assignments(scm, p_y_xt)})
    for x, t, tp, y in rows:
        q = post[x, t, y]
        lhs = float(np.log(p_y_xt[x, t, y]))
        recon = float(np.sum(np.where(q > 0, q * log_lik[:, t, y], 0.0)))
        cond = scm.p_y_zt[:, tp, :]  # p(y'|z,t') as (z, y')
        kl_y = float(np.dot(q, rel_entr(cond, p_y_xt[x, tp][None, :]).sum(axis=1)))
        third = 0.0
        for yp in range(ny):
            w = q * cond[:, yp]
            pos = w > 0
            third += float(np.sum(w[pos] * (np.log(q[pos]) - np.log(post[x, tp, yp][pos]))))
        rhs = recon - kl_y - third
        out.append(BoundCheckResult(lhs, rhs, lhs - rhs, (x, t, tp, y, None)))
    return out


def min_gap(results: list[BoundCheckResult]) -> float:
    return min((r.gap for r in results), default=0.0)
