"""Control (estimating) functions ``m(y, mu)`` and the model-implied ``mu(theta)``.

Three built-in families cover the common cases: moments ``y**k - mu``,
quantiles ``I{y <= mu} - alpha`` and cell probabilities ``I{y in A} - p``.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidCells, InvalidLevel, NumericalFailure
from .models import ParametricModel, integrate_segments


@dataclass(frozen=True)
class ControlSet:
    """``q`` estimating functions tied to a parametric model.

    Attributes
    ----------
    m : callable
        ``m(y, mu)`` returning an ``(n, q)`` array.
    mu_of_theta : callable
        ``mu(theta)``, the control parameters seen through the model.
    dmu_dtheta : callable
        ``theta -> (p, q)`` matrix with columns ``d mu_j / d theta``.
    xi0_mode : {"smooth", "quantile"}
        ``smooth`` controls differentiate ``m`` in ``mu`` (``dm_dmu``);
        ``quantile`` controls use the density at ``mu_j`` instead.
    g_form : bool
        True when ``m(y, mu) = g(y) - mu``.
    """

    kind: str
    q: int
    m: Callable
    mu_of_theta: Callable
    dmu_dtheta: Callable
    xi0_mode: str
    model: ParametricModel
    dm_dmu: Optional[Callable] = None
    jump_points: Callable = field(default=lambda theta: [], repr=False)
    g_form: bool = False
    labels: tuple = ()
    spec: dict = field(default_factory=dict)
    parts: tuple = ()

    def matrix(self, data, theta):
        return sample_constraint_matrix(self, data, self.mu_of_theta(theta))

    def mean_dm_dmu(self, theta, data=None):
        """Expected derivative of ``m_j`` with respect to ``mu_j`` (length q)."""
        theta = np.asarray(theta, dtype=float)
        if self.parts:
            return np.concatenate([cs.mean_dm_dmu(theta, data) for cs in self.parts])
        mu = self.mu_of_theta(theta)
        if self.xi0_mode == "quantile":
            return np.asarray(self.model.pdf(mu, theta), dtype=float)
        if self.g_form:
            return -np.ones(self.q)
        if data is None:
            return self.model.expect(lambda y: self.dm_dmu(np.atleast_1d(y), mu)[0], theta,
                                     self.jump_points(theta))
        return self.dm_dmu(np.atleast_1d(data), mu).mean(axis=0)

    def xi0(self, theta, data=None):
        """Derivative matrix ``d E m(Y, mu(theta)) / d theta`` of shape (q, p)."""
        d = self.mean_dm_dmu(theta, data)
        return d[:, None] * np.asarray(self.dmu_dtheta(theta)).T


def sample_constraint_matrix(cs, data, mu):
    """Rows ``m(Y_i, mu)``; raises on the first non-finite row."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    M = np.asarray(cs.m(data, np.asarray(mu, dtype=float)), dtype=float).reshape(data.size, cs.q)
    bad = ~np.all(np.isfinite(M), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalFailure(f"non-finite constraint value at row {i}", index=i)
    return M


def moment_control(model, powers):
    """Controls ``m_j(y, mu_j) = y**k_j - mu_j`` with ``mu_j = E_theta Y**k_j``."""
    powers = tuple(int(k) for k in powers)
    ks = np.array(powers, dtype=float)

    def m(y, mu):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        with np.errstate(over="ignore", invalid="ignore"):
            return y[:, None] ** ks[None, :] - np.asarray(mu)[None, :]

    def mu_of_theta(theta):
        theta = np.asarray(theta, dtype=float)
        return np.array([model.expect(lambda y, k=k: y**k, theta) for k in ks])

    def dmu_dtheta(theta):
        theta = np.asarray(theta, dtype=float)
        cols = [model.expect(lambda y, k=k: y**k * model.score(y, theta)[0], theta) for k in ks]
        return np.column_stack(cols)

    def dm_dmu(y, mu):
        return -np.ones((np.atleast_1d(y).size, len(powers)))

    return ControlSet(kind="moment", q=len(powers), m=m, mu_of_theta=mu_of_theta,
                      dmu_dtheta=dmu_dtheta, xi0_mode="smooth", model=model,
                      dm_dmu=dm_dmu, g_form=True,
                      labels=tuple(f"E[Y^{k}]" for k in powers),
                      spec={"kind": "moment", "powers": list(powers)})


def quantile_control(model, levels):
    """Controls ``m_j(y, mu_j) = I{y <= mu_j} - alpha_j`` at quantile levels."""
    levels = np.array([float(a) for a in levels])
    if levels.size == 0 or np.any(~((levels > 0) & (levels < 1))):
        raise InvalidLevel(f"quantile levels must lie in (0, 1), got {levels.tolist()}")
    if model.cdf is None:
        raise InvalidLevel(f"model {model.name!r} has no CDF")

    def m(y, mu):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return (y[:, None] <= np.asarray(mu)[None, :]).astype(float) - levels[None, :]

    def mu_of_theta(theta):
        return np.array([model.quantile(a, theta) for a in levels])

    def dmu_dtheta(theta):
        # implicit differentiation of F(mu; theta) = alpha
        theta = np.asarray(theta, dtype=float)
        mu = mu_of_theta(theta)
        cols = []
        for mj in mu:
            dF = integrate_segments(lambda y: model.score(y, theta)[0] * float(model.pdf(y, theta)),
                                    (model.support[0], mj), model.breakpoints(theta))
            cols.append(-np.asarray(dF) / float(model.pdf(mj, theta)))
        return np.column_stack(cols)

    return ControlSet(kind="quantile", q=levels.size, m=m, mu_of_theta=mu_of_theta,
                      dmu_dtheta=dmu_dtheta, xi0_mode="quantile", model=model,
                      jump_points=mu_of_theta, g_form=False,
                      labels=tuple(f"q{a:g}" for a in levels),
                      spec={"kind": "quantile", "levels": levels.tolist()})


def _parse_cells(cells):
    out = []
    for c in cells:
        lo, hi = (float(v) for v in c)
        if not lo < hi:
            raise InvalidCells(f"cell {c!r} is empty")
        out.append((lo, hi))
    return sorted(out)


def cell_control(model, cells, partition=False):
    """Cell-probability controls ``m_j(y, p_j) = I{y in A_j} - p_j``.

    Single cells are closed intervals ``[lo, hi]``. With ``partition=True``
    the cells are half-open ``[lo, hi)`` and must tile the support; the last
    one is dropped because the probabilities sum to one.
    """
    cells = _parse_cells(cells)
    lo_s, hi_s = model.support
    cells = [(max(lo, lo_s), min(hi, hi_s)) for lo, hi in cells]
    for (a0, b0), (a1, b1) in zip(cells[:-1], cells[1:]):
        if a1 < b0:
            raise InvalidCells(f"cells [{a0}, {b0}] and [{a1}, {b1}] overlap")
    if any(lo >= hi for lo, hi in cells):
        raise InvalidCells("a cell lies outside the model support")
    contiguous = all(b0 == a1 for (_, b0), (a1, _) in zip(cells[:-1], cells[1:]))
    covers = contiguous and cells[0][0] <= lo_s and cells[-1][1] >= hi_s
    if partition:
        if not covers or len(cells) < 2:
            raise InvalidCells("partition cells must tile the whole support with at least two cells")
        used = cells[:-1]
    else:
        if covers:
            raise InvalidCells("cells cover the whole support, so the constraint is degenerate; "
                               "use partition=True to drop the redundant cell")
        used = cells
    los = np.array([c[0] for c in used])
    his = np.array([c[1] for c in used])

    def m(y, p):
        y = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
        inside = (y >= los) & ((y < his) if partition else (y <= his))
        return inside.astype(float) - np.asarray(p)[None, :]

    def mu_of_theta(theta):
        theta = np.asarray(theta, dtype=float)
        if model.cdf is not None:
            return np.asarray(model.cdf(his, theta) - model.cdf(los, theta), dtype=float)
        return np.array([integrate_segments(lambda y: float(model.pdf(y, theta)), (a, b))
                         for a, b in zip(los, his)])

    def dmu_dtheta(theta):
        theta = np.asarray(theta, dtype=float)
        integrand = lambda y: model.score(y, theta)[0] * float(model.pdf(y, theta))
        cols = [integrate_segments(integrand, (a, b), model.breakpoints(theta))
                for a, b in zip(los, his)]
        return np.column_stack(cols)

    def dm_dmu(y, p):
        return -np.ones((np.atleast_1d(y).size, los.size))

    edges = sorted({*los.tolist(), *his.tolist()})
    return ControlSet(kind="partition" if partition else "cell", q=los.size, m=m,
                      mu_of_theta=mu_of_theta, dmu_dtheta=dmu_dtheta, xi0_mode="smooth",
                      model=model, dm_dmu=dm_dmu, jump_points=lambda theta: edges,
                      g_form=True, labels=tuple(f"P[{a:g},{b:g}]" for a, b in zip(los, his)),
                      spec={"kind": "partition" if partition else "cell",
                            "cells": [list(c) for c in cells]})


def combine_controls(parts):
    """Stack several control sets on the same model into one."""
    parts = tuple(parts)
    if len(parts) == 1:
        return parts[0]
    if not parts or any(cs.model is not parts[0].model for cs in parts):
        raise ValueError("control sets must share one model")
    offsets = np.cumsum([0] + [cs.q for cs in parts])

    def m(y, mu):
        mu = np.asarray(mu)
        return np.hstack([cs.m(y, mu[lo:hi]) for cs, lo, hi in zip(parts, offsets[:-1], offsets[1:])])

    return ControlSet(
        kind="combined", q=int(offsets[-1]), m=m,
        mu_of_theta=lambda th: np.concatenate([cs.mu_of_theta(th) for cs in parts]),
        dmu_dtheta=lambda th: np.hstack([np.asarray(cs.dmu_dtheta(th)) for cs in parts]),
        xi0_mode="combined", model=parts[0].model,
        jump_points=lambda th: [x for cs in parts for x in cs.jump_points(th)],
        g_form=all(cs.g_form for cs in parts),
        labels=tuple(lab for cs in parts for lab in cs.labels),
        spec={"kind": "combined", "parts": [cs.spec for cs in parts]}, parts=parts)
