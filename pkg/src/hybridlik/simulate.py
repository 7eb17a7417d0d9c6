"""Seeded Monte Carlo replication of ML, hybrid and alternative-hybrid fits.

Each replicate draws its own seed from ``numpy.random.SeedSequence(seed)``
so the table is identical for any worker count.
"""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .alt import maximize_alt
from .config import ConfigError, build_problem, build_wide
from .errors import HybridLikError
from .hl import maximize_hl
from .models import fit_ml, integrate_segments

COLUMNS = ("rep", "seed", "method", "a", "psi_hat", "psi_true", "error", "scaled_error",
           "status")


def default_threads():
    env = os.environ.get("HYBRIDLIK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def pool_map(fn, items, threads=None):
    """Order-preserving map over a process pool (serial when one worker)."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def truth_setup(raw):
    """Data-generating parameters ``(theta0, gamma)``; ``gamma`` is None without a wide model."""
    sim = raw.get("simulate") or {}
    if "theta0" not in sim:
        raise ConfigError("simulate needs theta0")
    theta0 = np.atleast_1d(np.asarray(sim["theta0"], dtype=float))
    wm = build_wide(raw, required=False)
    if wm is None:
        if "gamma" in sim or "delta" in sim:
            raise ConfigError("gamma/delta in simulate need a wide_model")
        return theta0, None, wm
    if "gamma" in sim:
        gamma = np.atleast_1d(np.asarray(sim["gamma"], dtype=float))
    else:
        delta = np.atleast_1d(np.asarray(sim.get("delta", np.zeros(wm.r)), dtype=float))
        gamma = wm.gamma0 + delta / np.sqrt(int(sim["n"]))
    return theta0, gamma, wm


def true_focus(prob, theta0, gamma, wm):
    if wm is None:
        return prob.focus(theta0)
    model = prob.model

    def expect(fun):
        pts = list(model.breakpoints(theta0)) + list(prob.controls.jump_points(theta0))
        return integrate_segments(lambda y: fun(y) * float(wm.pdf_wide(y, theta0, gamma)),
                                  model.support, pts)

    return prob.focus.true_value(expect, theta0)


def _replicate(args):
    raw, rep, seed = args
    sim = raw["simulate"]
    theta0, gamma, wm = truth_setup(raw)
    n = int(sim["n"])
    prob = build_problem(raw, data=np.zeros(1))
    y = wm.sample(theta0, gamma, n, seed) if wm is not None else prob.model.sample(theta0, n, seed)
    psi_true = true_focus(prob, theta0, gamma, wm)
    rows = []

    def row(method, a, fn):
        try:
            psi = fn()
            status = "ok"
        except HybridLikError as exc:
            psi, status = float("nan"), type(exc).__name__
        err = psi - psi_true
        rows.append((rep, seed, method, a, psi, psi_true, err, np.sqrt(n) * err, status))

    methods = sim.get("methods", ["ml", "hl"])
    base = type(prob)(prob.model, prob.controls, y, 0.0, prob.focus)
    if "ml" in methods:
        row("ml", 0.0, lambda: base.focus(fit_ml(base.model, y)))
    for a in sim.get("a_values", [0.0]):
        pa = base.with_a(float(a))
        if "hl" in methods:
            row("hl", float(a), lambda: maximize_hl(pa, blocks=False).psi_hat)
        if "alt" in methods:
            row("alt", float(a), lambda: maximize_alt(pa).psi_tilde)
    return rows


def run_simulation(raw, threads=None):
    """Replication table as a list of tuples ordered by ``COLUMNS``."""
    sim = raw.get("simulate")
    if not sim or "n" not in sim or "reps" not in sim:
        raise ConfigError("simulate needs n and reps")
    truth_setup(raw)
    reps = int(sim["reps"])
    seeds = [int(s.generate_state(1)[0]) for s in
             np.random.SeedSequence(int(raw.get("seed", 0))).spawn(reps)]
    out = pool_map(_replicate, [(raw, i, s) for i, s in enumerate(seeds)], threads)
    return [r for rows in out for r in rows]


def summarize(rows):
    """Root-mse and spread of ``sqrt(n) (psi_hat - psi_true)`` per method and ``a``."""
    groups = {}
    for r in rows:
        if r[8] == "ok":
            groups.setdefault((r[2], r[3]), []).append(r[7])
    out = {}
    for key, v in groups.items():
        v = np.asarray(v)
        out[key] = {"root_mse": float(np.sqrt(np.mean(v**2))), "sd": float(np.std(v, ddof=1)),
                    "mean": float(np.mean(v)), "count": int(v.size)}
    return out
