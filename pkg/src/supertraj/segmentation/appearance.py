"""Weighted diagonal-covariance Gaussian mixtures over RGB and the
foreground/background appearance model built from them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..clustering import SuperTrajectory
from ..errors import ModelError
from ..flow import VideoSequence
from ..trajectory import Trajectory, point_table
from .labeling import Label

VAR_FLOOR = 1.0
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    variances: np.ndarray  # (k, d)
    log_likelihood: list[float] = field(default_factory=list)  # weighted mean, per EM step

    def component_log_prob(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        diff = X[:, None, :] - self.means[None, :, :]
        quad = (diff ** 2 / self.variances[None]).sum(axis=2)
        logdet = np.log(self.variances).sum(axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw[None] - 0.5 * (quad + logdet[None] + X.shape[1] * LOG_2PI)

    def log_prob(self, X: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_prob(X), axis=1)


def _kmeanspp(X: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Weighted k-means++ seeding; repeats a center when every sample is already covered."""
    centers = [X[rng.choice(X.shape[0], p=w / w.sum())]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        score = w * d2
        total = score.sum()
        if total <= 0:
            centers.append(centers[-1])
            continue
        c = X[rng.choice(X.shape[0], p=score / total)]
        centers.append(c)
        d2 = np.minimum(d2, ((X - c) ** 2).sum(axis=1))
    return np.array(centers)


def _m_step(X, w, resp, prev: GaussianMixture | None, var_floor):
    wr = resp * w[:, None]
    nk = wr.sum(axis=0)
    safe = np.where(nk > 0, nk, 1.0)
    means = (wr.T @ X) / safe[:, None]
    var = np.stack([wr[:, j] @ (X - means[j]) ** 2 for j in range(resp.shape[1])]) / safe[:, None]
    if prev is not None:
        means = np.where(nk[:, None] > 0, means, prev.means)
    var = np.maximum(np.where(nk[:, None] > 0, var, var_floor), var_floor)
    return GaussianMixture(nk / nk.sum(), means, var)


def fit_weighted_gmm(X, w, components: int = 5, max_iter: int = 50, tol: float = 1e-6,
                     var_floor: float = VAR_FLOOR, seed: int = 0) -> GaussianMixture:
    """Expectation-maximisation with per-sample weights.

    Zero-weight samples are ignored. The weighted log-likelihood after each
    E-step is recorded in ``log_likelihood``; iteration stops after
    ``max_iter`` steps or once its relative change falls below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    keep = w > 0
    X, w = X[keep], w[keep]
    if X.shape[0] == 0:
        raise ModelError("no positively weighted samples")
    rng = np.random.default_rng(seed)
    init = _kmeanspp(X, w, components, rng)
    hard = np.argmin(((X[:, None, :] - init[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((X.shape[0], components))
    resp[np.arange(X.shape[0]), hard] = 1.0
    gmm = _m_step(X, w, resp, None, var_floor)
    # components seeded on duplicate centers start empty; give them the seed position
    gmm.means = np.where(gmm.weights[:, None] > 0, gmm.means, init)
    wsum = w.sum()
    history: list[float] = []
    for _ in range(max_iter):
        clp = gmm.component_log_prob(X)
        lp = logsumexp(clp, axis=1)
        ll = float((w * lp).sum() / wsum)
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) < tol * max(abs(history[-2]), 1e-300):
            break
        resp = np.exp(clp - lp[:, None])
        gmm = _m_step(X, w, resp, gmm, var_floor)
    gmm.log_likelihood = history
    return gmm


@dataclass
class AppearanceModel:
    foreground: GaussianMixture
    background: GaussianMixture

    def posterior(self, colors: np.ndarray) -> np.ndarray:
        """``p_fg / (p_fg + p_bg)`` per colour row."""
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        lf = self.foreground.log_prob(colors)
        lb = self.background.log_prob(colors)
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(lb - lf))


def fit_from_samples(colors, fg_weight, bg_weight, components: int = 5, seed: int = 0,
                     **kw) -> AppearanceModel:
    fg_weight = np.asarray(fg_weight, np.float64)
    bg_weight = np.asarray(bg_weight, np.float64)
    if not np.any(fg_weight > 0):
        raise ModelError("no foreground samples")
    if not np.any(bg_weight > 0):
        raise ModelError("no background samples")
    fg = fit_weighted_gmm(colors, fg_weight, components, seed=seed, **kw)
    bg = fit_weighted_gmm(colors, bg_weight, components, seed=seed + 1, **kw)
    return AppearanceModel(fg, bg)


def training_samples(video: VideoSequence, trajs: Sequence[Trajectory], supertrajs: Sequence[SuperTrajectory],
                     probabilities: Sequence[float | None], labels: np.ndarray):
    """Colours and fg/bg weights at every point of every labeled super-trajectory.

    Points of outside-starting trajectories are pure background samples.
    """
    index = {tr.id: i for i, tr in enumerate(trajs)}
    p_traj = np.full(len(trajs), np.nan)
    for st, p in zip(supertrajs, probabilities):
        if p is not None:
            p_traj[[index[m] for m in st.members]] = p
    chosen = np.flatnonzero(~np.isnan(p_traj))
    pts = point_table([trajs[i] for i in chosen], video)
    src = chosen[pts.owner]
    fg_w = p_traj[src].copy()
    bg_w = 1.0 - fg_w
    outside = np.asarray(labels)[src] == Label.OUTSIDE
    fg_w[outside] = 0.0
    bg_w[outside] = 1.0
    return pts.color, fg_w, bg_w


def fit_appearance_model(video: VideoSequence, trajs: Sequence[Trajectory], supertrajs: Sequence[SuperTrajectory],
                         probabilities: Sequence[float | None], labels: np.ndarray, components: int = 5,
                         seed: int = 0) -> AppearanceModel:
    colors, fg_w, bg_w = training_samples(video, trajs, supertrajs, probabilities, labels)
    return fit_from_samples(colors, fg_w, bg_w, components, seed)
