"""Synthetic multi-environment place worlds and their binary file format.

Each environment has its own set of places.  A place is a Gaussian latent
code of ``latent_dim = P * F`` values, laid out as a P x F patch grid.  The
environment's appearance is a per-channel linear map shared by every patch,
``(1 - s) I + s Q_e`` with Q_e a random orthogonal F x F matrix and ``s`` the
shift strength (think lighting or season changing every pixel the same way).
Each visit adds isotropic Gaussian view noise.  Observations are ordered as
repeated traversals: visit 0 of every place, then visit 1, and so on.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .embedder import Observation
from .membank import PairLabeler, same_place

DATASET_MAGIC = b"VPWD"
DATASET_VERSION = 1

_INT_FIELDS = ("num_envs", "places_per_env", "visits_per_place", "latent_dim", "patch_slots", "raw_channels")
_SPEC_FMT = "<6I2dQ"
_OBS_HEAD = "<3I"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class WorldSpec:
    num_envs: int = 3
    places_per_env: int = 32
    visits_per_place: int = 8
    latent_dim: int = 384
    patch_slots: int = 16
    raw_channels: int = 24
    view_noise_sigma: float = 0.4
    env_shift_strength: float = 0.5
    seed: int = 0

    def __post_init__(self):
        errors = []
        if self.num_envs < 2:
            errors.append("num_envs must be >= 2")
        if self.places_per_env < 4:
            errors.append("places_per_env must be >= 4")
        if self.visits_per_place < 2:
            errors.append("visits_per_place must be >= 2")
        if self.patch_slots < 1 or self.raw_channels < 1:
            errors.append("patch_slots and raw_channels must be >= 1")
        if self.latent_dim != self.patch_slots * self.raw_channels:
            errors.append("latent_dim must equal patch_slots * raw_channels")
        if self.view_noise_sigma < 0 or self.env_shift_strength < 0:
            errors.append("view_noise_sigma and env_shift_strength must be >= 0")
        if not 0 <= self.seed < 2**64:
            errors.append("seed must fit in an unsigned 64-bit integer")
        if errors:
            raise ValueError("; ".join(errors))

    @classmethod
    def from_dict(cls, raw: dict) -> "WorldSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown WorldSpec field(s): {', '.join(sorted(unknown))}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    spec: WorldSpec
    observations: list[Observation]
    labeler: PairLabeler = PairLabeler(same_place)

    def environment(self, env_id: int) -> list[Observation]:
        return [o for o in self.observations if o.env_id == env_id]

    @property
    def num_envs(self) -> int:
        return self.spec.num_envs

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.spec == other.spec and self.observations == other.observations


def pair_label(a: Observation, b: Observation) -> str:
    """Positive iff both the place id and the environment id agree."""
    return same_place(a, b)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def style_map(rng: np.random.Generator, channels: int, strength: float) -> np.ndarray:
    return (1.0 - strength) * np.eye(channels) + strength * _orthogonal(rng, channels)


def generate(spec: WorldSpec) -> Dataset:
    """Deterministic function of ``spec``.  Patch values are rounded to float32."""
    root = np.random.SeedSequence(spec.seed)
    observations = []
    P, F = spec.patch_slots, spec.raw_channels
    for env_id, env_seq in enumerate(root.spawn(spec.num_envs)):
        style_rng, place_rng, noise_rng = (np.random.default_rng(s) for s in env_seq.spawn(3))
        style = style_map(style_rng, F, spec.env_shift_strength)
        codes = place_rng.standard_normal((spec.places_per_env, P, F))
        styled = codes @ style.T
        seq = 0
        for _visit in range(spec.visits_per_place):
            noise = noise_rng.standard_normal((spec.places_per_env, P, F)) * spec.view_noise_sigma
            grids = (styled + noise).astype(np.float32).astype(np.float64)
            for place_id in range(spec.places_per_env):
                observations.append(Observation(env_id, place_id, seq, grids[place_id]))
                seq += 1
    return Dataset(spec, observations)


# ----------------------------------------------------------------------
# binary format


def expected_file_size(spec: WorldSpec, count: int | None = None) -> int:
    if count is None:
        count = spec.num_envs * spec.places_per_env * spec.visits_per_place
    per_obs = struct.calcsize(_OBS_HEAD) + 4 * spec.patch_slots * spec.raw_channels
    return 4 + 4 + struct.calcsize(_SPEC_FMT) + 8 + count * per_obs


def dataset_bytes(ds: Dataset) -> bytes:
    s = ds.spec
    parts = [
        DATASET_MAGIC,
        struct.pack("<I", DATASET_VERSION),
        struct.pack(_SPEC_FMT, *(getattr(s, f) for f in _INT_FIELDS), s.view_noise_sigma, s.env_shift_strength, s.seed),
        struct.pack("<Q", len(ds.observations)),
    ]
    for o in ds.observations:
        parts.append(struct.pack(_OBS_HEAD, o.env_id, o.place_id, o.seq_index))
        parts.append(np.asarray(o.patches, dtype="<f4").tobytes(order="C"))
    return b"".join(parts)


def save(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def parse(buf: bytes) -> Dataset:
    if buf[:4] != DATASET_MAGIC:
        raise DatasetFormatError("bad dataset magic", 0)
    if len(buf) < 8:
        raise DatasetFormatError("truncated header", len(buf))
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}", 4)
    pos = 8
    need = struct.calcsize(_SPEC_FMT) + 8
    if len(buf) < pos + need:
        raise DatasetFormatError("truncated spec block", pos)
    vals = struct.unpack_from(_SPEC_FMT, buf, pos)
    try:
        spec = WorldSpec(**dict(zip(_INT_FIELDS, vals[:6])), view_noise_sigma=vals[6], env_shift_strength=vals[7], seed=vals[8])
    except ValueError as exc:
        raise DatasetFormatError(f"invalid spec block: {exc}", pos) from None
    pos += struct.calcsize(_SPEC_FMT)
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    P, F = spec.patch_slots, spec.raw_channels
    head = struct.calcsize(_OBS_HEAD)
    payload = 4 * P * F
    observations = []
    for _ in range(count):
        if pos + head + payload > len(buf):
            raise DatasetFormatError("truncated observation record", pos)
        env_id, place_id, seq = struct.unpack_from(_OBS_HEAD, buf, pos)
        pos += head
        grid = np.frombuffer(buf, dtype="<f4", count=P * F, offset=pos).reshape(P, F).astype(np.float64)
        pos += payload
        observations.append(Observation(env_id, place_id, seq, grid))
    if pos != len(buf):
        raise DatasetFormatError("trailing bytes after last observation", pos)
    return Dataset(spec, observations)


def load(path) -> Dataset:
    return parse(Path(path).read_bytes())


def content_hash(ds: Dataset) -> str:
    return hashlib.sha256(dataset_bytes(ds)).hexdigest()


# ----------------------------------------------------------------------
# sanity oracle


def nearest_latent_accuracy(ds: Dataset) -> float:
    """Fraction of observations whose nearest place centroid (same env) is their own place.

    Centroids are the per-place means of the noisy visits; a leave-one-out mean
    keeps an observation from voting for itself.
    """
    correct = total = 0
    for env_id in range(ds.num_envs):
        obs = ds.environment(env_id)
        x = np.stack([o.patches.reshape(-1) for o in obs])
        places = np.array([o.place_id for o in obs])
        ids = np.unique(places)
        sums = np.stack([x[places == p].sum(axis=0) for p in ids])
        counts = np.array([(places == p).sum() for p in ids], dtype=np.float64)
        for row, p in zip(x, places):
            cent = sums / counts[:, None]
            k = np.searchsorted(ids, p)
            cent[k] = (sums[k] - row) / (counts[k] - 1)
            pred = ids[np.argmin(((cent - row) ** 2).sum(axis=1))]
            correct += int(pred == p)
            total += 1
    return correct / total
