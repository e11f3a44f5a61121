"""Trainable descriptor model: linear patch extractor + GeM or NetVLAD-lite.

An observation is a P x F grid of raw patch features.  The extractor maps each
patch to C non-negative local features, the aggregator pools them into one
vector, a fixed random projection brings that vector to ``out_dim`` and the
result is L2-normalised, so cosine similarity between descriptors is a plain
dot product.

All functions accept a single observation (rank-2 features) or a batch
(rank-3, leading batch axis); the batched path is what training uses.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DegenerateInputError, DomainError, ShapeError, Tensor

GEM = "gem"
NETVLAD = "netvlad"
AGGREGATORS = (GEM, NETVLAD)
GEM_EPS = 1e-6

CHECKPOINT_MAGIC = b"VIPR"
CHECKPOINT_VERSION = 1
_AGG_CODES = {GEM: 0, NETVLAD: 1}


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(eq=False)
class Observation:
    env_id: int
    place_id: int
    seq_index: int
    patches: np.ndarray

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 2 or min(self.patches.shape) < 1:
            raise ShapeError(f"patches must be a non-empty P x F grid, got {self.patches.shape}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.env_id, self.seq_index)

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.env_id == other.env_id
            and self.place_id == other.place_id
            and self.seq_index == other.seq_index
            and np.array_equal(self.patches, other.patches)
        )

    def __hash__(self):
        return hash((self.env_id, self.place_id, self.seq_index))


@dataclass
class GlobalDescriptor:
    values: np.ndarray
    env_id: int
    place_id: int
    seq_index: int


@dataclass
class EmbedderParams:
    """Model parameters.  Trainable tensors are exposed by :meth:`trainable`."""

    extractor_weight: Tensor
    extractor_bias: Tensor
    aggregator: str = NETVLAD
    gem_p: float = 3.0
    vlad_centroids: Tensor | None = None
    vlad_assign_weight: Tensor | None = None
    vlad_assign_bias: Tensor | None = None
    projection: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.gem_p < 1:
            raise ValueError("gem_p must be >= 1")
        if self.aggregator == NETVLAD and (
            self.vlad_centroids is None or self.vlad_assign_weight is None or self.vlad_assign_bias is None
        ):
            raise ValueError("NetVLAD parameters missing")

    @property
    def raw_channels(self) -> int:
        return self.extractor_weight.shape[0]

    @property
    def channels(self) -> int:
        return self.extractor_weight.shape[1]

    @property
    def clusters(self) -> int:
        return 0 if self.vlad_centroids is None else self.vlad_centroids.shape[0]

    @property
    def pooled_dim(self) -> int:
        return self.channels if self.aggregator == GEM else self.clusters * self.channels

    @property
    def out_dim(self) -> int:
        return self.pooled_dim if self.projection is None else self.projection.shape[1]

    def trainable(self) -> dict[str, Tensor]:
        named = {"extractor.weight": self.extractor_weight, "extractor.bias": self.extractor_bias}
        if self.aggregator == NETVLAD:
            named["vlad.centroids"] = self.vlad_centroids
            named["vlad.assign_weight"] = self.vlad_assign_weight
            named["vlad.assign_bias"] = self.vlad_assign_bias
        return named

    def zero_grad(self) -> None:
        for t in self.trainable().values():
            t.grad = None


def _projection(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    # orthonormal rows (rows <= cols) or columns, so the map is as close to
    # an isometry as the shapes permit
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def init_params(
    raw_channels: int = 24,
    channels: int = 16,
    aggregator: str = NETVLAD,
    clusters: int = 8,
    out_dim: int = 32,
    gem_p: float = 3.0,
    seed: int = 0,
) -> EmbedderParams:
    """Seeded initialisation.  The projection is fixed and never trained."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    w = rng.standard_normal((raw_channels, channels)) / np.sqrt(raw_channels)
    b = np.full(channels, 0.1)
    kw = {}
    pooled = channels
    if aggregator == NETVLAD:
        if clusters < 2:
            raise ValueError("NetVLAD needs at least 2 clusters")
        kw["vlad_centroids"] = Tensor(np.abs(rng.standard_normal((clusters, channels))) * 0.5, requires_grad=True)
        kw["vlad_assign_weight"] = Tensor(rng.standard_normal((channels, clusters)) / np.sqrt(channels), requires_grad=True)
        kw["vlad_assign_bias"] = Tensor(np.zeros(clusters), requires_grad=True)
        pooled = clusters * channels
    proj = None if pooled == out_dim else _projection(rng, pooled, out_dim)
    return EmbedderParams(
        extractor_weight=Tensor(w, requires_grad=True),
        extractor_bias=Tensor(b, requires_grad=True),
        aggregator=aggregator,
        gem_p=float(gem_p),
        projection=proj,
        **kw,
    )


def snapshot(params: EmbedderParams) -> EmbedderParams:
    """Deep copy with gradients disabled; later edits to ``params`` do not leak in."""
    frozen = copy.deepcopy(params)
    for t in frozen.trainable().values():
        t.requires_grad = False
        t.grad = None
    return frozen


# ----------------------------------------------------------------------
# forward pieces


def _patch_array(obs) -> np.ndarray:
    if isinstance(obs, Observation):
        return obs.patches
    return np.stack([o.patches for o in obs])


def extract_local(params: EmbedderParams, obs) -> Tensor:
    """Per-patch linear map followed by max0.

    ``obs`` is an Observation (returns P x C) or a sequence of them (B x P x C).
    """
    x = _patch_array(obs)
    if x.shape[-1] != params.raw_channels:
        raise ShapeError(f"patches have {x.shape[-1]} channels, extractor expects {params.raw_channels}")
    lead = x.shape[:-1]
    flat = Tensor(x.reshape(-1, x.shape[-1]))
    z = ad.matmul(flat, params.extractor_weight)
    z = ad.add(z, ad.broadcast_to(params.extractor_bias, z.shape))
    return ad.reshape(ad.max0(z), lead + (params.channels,))


class GeMPool(ad.Function):
    """Generalised mean over the patch axis (second to last)."""

    name = "gem"

    def forward(self, x, p=3.0):
        if p < 1:
            raise DomainError("GeM exponent must be >= 1")
        if np.any(x < 0) and p != round(p):
            raise DomainError("GeM: negative feature with non-integer exponent")
        self.x, self.p = x, p
        self.count = x.shape[-2]
        self.mp = np.power(x, p).mean(axis=-2)
        self.out = np.power(self.mp, 1.0 / p)
        return self.out

    def backward(self, g):
        x, p = self.x, self.p
        # dy/dx = x^(p-1) * y^(1-p) / P; zero where the whole channel is zero
        y = np.expand_dims(self.out, -2)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(y > 0, np.power(np.where(y > 0, y, 1.0), 1.0 - p), 0.0)
        return (np.expand_dims(g, -2) * np.power(x, p - 1.0) * scale / self.count,)


def gem_pool(features, p: float = 3.0, eps: float = 0.0) -> Tensor:
    """Channelwise (mean x^p)^(1/p) over patches; p = 1 is plain mean pooling.

    A positive ``eps`` clamps features from below first, which keeps a channel
    whose max0 units all died from pooling to an exact zero.
    """
    if eps > 0:
        features = ad.clamp_min(features, eps)
    return GeMPool.apply(features, p=float(p))


def vlad_residuals(features, assignments, centroids) -> Tensor:
    """Soft-assigned residual sums V[k] = sum_p a[p,k] (x_p - c_k).

    features: (..., P, C), assignments: (..., P, K), centroids: (K, C).
    Returns (..., K, C) before any normalisation.
    """
    features = ad._as_tensor(features)
    assignments = ad._as_tensor(assignments)
    centroids = ad._as_tensor(centroids)
    weighted = ad.matmul(ad.transpose(assignments), features)
    mass = ad.reshape(ad.tsum(assignments, axis=-2), weighted.shape[:-1] + (1,))
    return ad.sub(
        weighted,
        ad.mul(ad.broadcast_to(mass, weighted.shape), ad.broadcast_to(centroids, weighted.shape)),
    )


def soft_assign(features: Tensor, params: EmbedderParams) -> Tensor:
    lead = features.shape[:-1]
    flat = ad.reshape(features, (-1, params.channels))
    logits = ad.matmul(flat, params.vlad_assign_weight)
    logits = ad.add(logits, ad.broadcast_to(params.vlad_assign_bias, logits.shape))
    return ad.reshape(ad.softmax_rows(logits), lead + (params.clusters,))


def netvlad_aggregate(features, params: EmbedderParams) -> Tensor:
    """Intra-normalised, flattened and L2-normalised VLAD vector of length K*C."""
    features = ad._as_tensor(features)
    a = soft_assign(features, params)
    v = vlad_residuals(features, a, params.vlad_centroids)
    v = ad.l2_normalize(v, strict=False)
    v = ad.reshape(v, features.shape[:-2] + (params.clusters * params.channels,))
    return ad.l2_normalize(v, strict=False)


def aggregate(features: Tensor, params: EmbedderParams) -> Tensor:
    if params.aggregator == GEM:
        return gem_pool(features, params.gem_p, eps=GEM_EPS)
    return netvlad_aggregate(features, params)


def embed_batch(params: EmbedderParams, observations: Sequence[Observation]) -> Tensor:
    """Unit-norm descriptors, one row per observation (B x d)."""
    pooled = aggregate(extract_local(params, list(observations)), params)
    if params.projection is not None:
        pooled = ad.matmul(pooled, Tensor(params.projection))
    try:
        return ad.l2_normalize(pooled)
    except DegenerateInputError:
        raise DegenerateInputError("descriptor is all zeros before normalisation") from None


def embed(params: EmbedderParams, obs: Observation) -> GlobalDescriptor:
    with ad.no_grad():
        values = embed_batch(params, [obs]).data[0]
    return GlobalDescriptor(values.copy(), obs.env_id, obs.place_id, obs.seq_index)


def describe(params: EmbedderParams, observations: Sequence[Observation], chunk: int = 256) -> np.ndarray:
    """Descriptor matrix without graph recording, for evaluation."""
    observations = list(observations)
    out = []
    with ad.no_grad():
        for i in range(0, len(observations), chunk):
            out.append(embed_batch(params, observations[i : i + chunk]).data)
    return np.concatenate(out) if out else np.zeros((0, params.out_dim))


# ----------------------------------------------------------------------
# checkpoint container


def _named_arrays(params: EmbedderParams) -> list[tuple[str, np.ndarray]]:
    items = [(name, t.data) for name, t in params.trainable().items()]
    items.append(("gem_p", np.array(params.gem_p)))
    if params.projection is not None:
        items.append(("projection", params.projection))
    return items


def checkpoint_bytes(params: EmbedderParams, importance: dict[str, np.ndarray] | None = None) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<IB", CHECKPOINT_VERSION, _AGG_CODES[params.aggregator])]
    items = _named_arrays(params)
    for name, arr in (importance or {}).items():
        items.append((f"omega.{name}", arr))
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(path, params: EmbedderParams, importance: dict[str, np.ndarray] | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, importance))


def parse_checkpoint(buf: bytes) -> tuple[EmbedderParams, dict[str, np.ndarray]]:
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad checkpoint magic", 0)
    if len(buf) < 9:
        raise CheckpointFormatError("truncated checkpoint header", len(buf))
    version, code = struct.unpack_from("<IB", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}", 4)
    kinds = {v: k for k, v in _AGG_CODES.items()}
    if code not in kinds:
        raise CheckpointFormatError(f"unknown aggregator code {code}", 8)
    pos = 9
    tensors: dict[str, np.ndarray] = {}
    while pos < len(buf):
        start = pos
        try:
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
        except struct.error:
            raise CheckpointFormatError("truncated tensor record", start) from None
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointFormatError(f"truncated payload for {name!r}", pos)
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    importance = {k[len("omega.") :]: v for k, v in tensors.items() if k.startswith("omega.")}
    agg = kinds[code]

    def t(name):
        return Tensor(tensors[name], requires_grad=True) if name in tensors else None

    params = EmbedderParams(
        extractor_weight=t("extractor.weight"),
        extractor_bias=t("extractor.bias"),
        aggregator=agg,
        gem_p=float(tensors["gem_p"]),
        vlad_centroids=t("vlad.centroids"),
        vlad_assign_weight=t("vlad.assign_weight"),
        vlad_assign_bias=t("vlad.assign_bias"),
        projection=tensors.get("projection"),
    )
    return params, importance


def load_checkpoint(path) -> tuple[EmbedderParams, dict[str, np.ndarray]]:
    return parse_checkpoint(Path(path).read_bytes())
