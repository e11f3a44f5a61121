"""Importance-weighted parameter drift penalty and similarity-distribution distillation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .embedder import EmbedderParams, GlobalDescriptor


@dataclass
class ImportanceMap:
    """Running mean of squared gradients of the Gram-matrix norm, per parameter."""

    omega: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: EmbedderParams) -> "ImportanceMap":
        return cls({name: np.zeros(t.shape) for name, t in params.trainable().items()})

    def copy(self) -> "ImportanceMap":
        return ImportanceMap({k: v.copy() for k, v in self.omega.items()}, self.step_count)


@dataclass(frozen=True)
class FrozenReference:
    params_prev: EmbedderParams
    importance_prev: ImportanceMap = field(repr=False)


def _rows(descs) -> Tensor:
    if isinstance(descs, Tensor):
        return descs
    rows = [d if isinstance(d, Tensor) else Tensor(d.values if isinstance(d, GlobalDescriptor) else d) for d in descs]
    return ad.stack(rows)


def gram_matrix(anchor, positive, negative) -> Tensor:
    """3x3 matrix of pairwise cosine similarities among anchor, positive, negative."""
    d = _rows([anchor, positive, negative])
    return ad.matmul(d, ad.transpose(d))


def gram_norm_grads(anchor: Tensor, positive: Tensor, negative: Tensor, params: EmbedderParams) -> dict[str, np.ndarray]:
    """Gradient of ||Gram||_F w.r.t. every trainable tensor (graph left intact)."""
    norm = ad.frobenius_norm(gram_matrix(anchor, positive, negative))
    named = params.trainable()
    return dict(zip(named, ad.grad(norm, list(named.values()))))


def rmas_accumulate(imp: ImportanceMap, grads: dict[str, np.ndarray]) -> None:
    """Fold one step of gradients into the running mean: omega <- (omega*N + g^2)/(N+1)."""
    if set(grads) != set(imp.omega):
        raise ShapeError(f"gradient names {sorted(grads)} do not match importance map {sorted(imp.omega)}")
    n = imp.step_count
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        if g.shape != imp.omega[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != importance shape {imp.omega[name].shape}")
        imp.omega[name] = (imp.omega[name] * n + g * g) / (n + 1)
    imp.step_count = n + 1


def merge_importance(carried: ImportanceMap | None, fresh: ImportanceMap, envs_seen: int) -> ImportanceMap:
    """Mean of the per-environment importance maps seen so far.

    ``carried`` already averages ``envs_seen`` environments.
    """
    if carried is None or envs_seen == 0:
        return fresh.copy()
    omega = {k: (carried.omega[k] * envs_seen + fresh.omega[k]) / (envs_seen + 1) for k in fresh.omega}
    return ImportanceMap(omega, carried.step_count + fresh.step_count)


def rmas_loss(current: EmbedderParams, ref: FrozenReference | None) -> Tensor:
    """sum over parameters of omega_prev * (theta - theta_prev)^2; zero without a reference."""
    if ref is None:
        return Tensor(0.0)
    prev = ref.params_prev.trainable()
    total = None
    for name, theta in current.trainable().items():
        omega = ref.importance_prev.omega[name]
        drift = ad.sub(theta, Tensor(prev[name].data))
        term = ad.tsum(ad.mul(Tensor(omega), ad.mul(drift, drift)))
        total = term if total is None else ad.add(total, term)
    return total if total is not None else Tensor(0.0)


def pkd_similarity_matrix(descs) -> Tensor:
    """Scaled dot products g_i . g_j / sqrt(d) for a batch of descriptors (b x d)."""
    d = _rows(descs)
    if d.shape[0] < 2:
        raise ShapeError("need at least two descriptors")
    return ad.mul(ad.matmul(d, ad.transpose(d)), 1.0 / np.sqrt(d.shape[1]))


def pkd_loss(H_prev, H_curr) -> Tensor:
    """Sum over rows of KL(softmax(H_prev row) || softmax(H_curr row)).

    ``H_prev`` is treated as a constant target.
    """
    H_prev = H_prev.data if isinstance(H_prev, Tensor) else np.asarray(H_prev, dtype=np.float64)
    if not isinstance(H_curr, Tensor):
        H_curr = Tensor(H_curr)
    if H_prev.shape != H_curr.shape or H_prev.ndim != 2:
        raise ShapeError(f"PKD matrices must be matching 2-d arrays, got {H_prev.shape} and {H_curr.shape}")
    z = H_prev - H_prev.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    log_q = ad.log_softmax_rows(H_curr)
    return ad.tsum(ad.mul(Tensor(p), ad.sub(Tensor(log_p), log_q)))
