"""Finite-difference suite covering every differentiable operation in the package.

Each case builds a scalar function of one input array from a seeded RNG.
Vector-valued operations are reduced to a scalar by contracting with a fixed
random weight array, which exercises every output coordinate of the backward
rule.  ``run_suite`` returns the worst relative error seen per operation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedder import GEM, NETVLAD, gem_pool, init_params, netvlad_aggregate
from .mining import triplet_loss
from .regularizers import FrozenReference, ImportanceMap, gram_matrix, pkd_loss, pkd_similarity_matrix, rmas_loss

Case = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], np.ndarray]]


class _Contract(ad.Function):
    """sum(a * w) with its own backward rule.

    The reduction must not share code with the operations under test, or a
    broken ``mul`` would be applied twice in its own case and cancel out.
    """

    name = "contract"

    def forward(self, a, w):
        self.a, self.w = a, w
        return np.asarray(np.sum(a * w))

    def backward(self, g):
        return g * self.w, g * self.a


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return _Contract.apply(out, Tensor(w))


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _unary(fn, make_x):
    def case(rng):
        x = make_x(rng)
        with ad.no_grad():
            w = rng.standard_normal(fn(Tensor(x)).shape)
        return (lambda t: _weighted(fn(t), w)), x

    return case


def _binary(fn, make_x, make_other):
    def case(rng):
        x = make_x(rng)
        other = Tensor(make_other(rng, x.shape))
        w = rng.standard_normal(x.shape)
        return (lambda t: _weighted(fn(t, other), w)), x

    return case


def _normal(shape):
    return lambda rng: rng.standard_normal(shape)


def _positive(shape, lo=0.3, hi=2.0):
    return lambda rng: rng.uniform(lo, hi, shape)


def _matmul(rng):
    b = Tensor(rng.standard_normal((4, 3)))
    w = rng.standard_normal((5, 3))
    return (lambda t: _weighted(ad.matmul(t, b), w)), rng.standard_normal((5, 4))


def _matmul_batched(rng):
    a = Tensor(rng.standard_normal((2, 3, 4)))
    w = rng.standard_normal((2, 3, 5))
    return (lambda t: _weighted(ad.matmul(a, t), w)), rng.standard_normal((4, 5))


def _max(rng):
    # distinct entries so the arg-max is stable under the probe step
    x = rng.permutation(12).reshape(3, 4) * 0.1 + rng.uniform(0, 0.01, (3, 4))
    w = rng.standard_normal(4)
    return (lambda t: _weighted(ad.tmax(t, axis=0), w)), x


def _take(rng):
    idx = list(rng.integers(0, 4, size=6))
    w = rng.standard_normal((6, 3))
    return (lambda t: _weighted(ad.take(t, idx), w)), rng.standard_normal((4, 3))


def _stack(rng):
    other = Tensor(rng.standard_normal(3))
    w = rng.standard_normal((3, 3))
    return (lambda t: _weighted(ad.stack([t, other, ad.mul(t, t)]), w)), rng.standard_normal(3)


def _broadcast(rng):
    w = rng.standard_normal((4, 3))
    return (lambda t: _weighted(ad.broadcast_to(t, (4, 3)), w)), rng.standard_normal(3)


def _gem(rng):
    p = float(rng.choice([1.0, 2.0, 3.0, 4.5]))
    w = rng.standard_normal((2, 3))
    return (lambda t: _weighted(gem_pool(t, p), w)), rng.uniform(0.1, 2.0, (2, 5, 3))


def _small_vlad(rng):
    return init_params(raw_channels=4, channels=3, aggregator=NETVLAD, clusters=2, out_dim=6, seed=int(rng.integers(1 << 30)))


def _netvlad_features(rng):
    params = _small_vlad(rng)
    w = rng.standard_normal(6)
    return (lambda t: _weighted(netvlad_aggregate(t, params), w)), rng.uniform(0.1, 2.0, (5, 3))


def _netvlad_params(rng):
    params = _small_vlad(rng)
    feats = Tensor(rng.uniform(0.1, 2.0, (2, 5, 3)))
    w = rng.standard_normal((2, 6))

    def f(t):
        return _weighted(netvlad_aggregate(feats, replace(params, vlad_centroids=t)), w)

    return f, params.vlad_centroids.data.copy()


def _triplet(rng):
    # a wide margin keeps the hinge active, away from its kink
    x = rng.standard_normal((3, 4)) / 2
    delta = 1.0 + 2.0 * float((x * x).sum())

    def f(t):
        return triplet_loss(ad.dot(t[0], t[1]), ad.dot(t[0], t[2]), delta)

    return f, x


def _rmas(rng):
    params = init_params(raw_channels=4, channels=3, aggregator=GEM, out_dim=3, seed=int(rng.integers(1 << 30)))
    prev = replace(params, extractor_weight=Tensor(params.extractor_weight.data + rng.standard_normal((4, 3)) * 0.1))
    omega = {name: rng.uniform(0, 2, t.shape) for name, t in params.trainable().items()}
    ref = FrozenReference(prev, ImportanceMap(omega))

    def f(t):
        return rmas_loss(replace(params, extractor_weight=t), ref)

    return f, params.extractor_weight.data.copy()


def _pkd(rng):
    h_prev = rng.standard_normal((4, 4))
    return (lambda t: pkd_loss(h_prev, t)), rng.standard_normal((4, 4))


def _pkd_descriptors(rng):
    prev = pkd_similarity_matrix(Tensor(rng.standard_normal((4, 6))))
    return (lambda t: pkd_loss(prev, pkd_similarity_matrix(ad.l2_normalize(t)))), rng.standard_normal((4, 6))


def _gram_pipeline(rng):
    def f(t):
        d = ad.l2_normalize(t)
        return ad.frobenius_norm(gram_matrix(d[0], d[1], d[2]))

    return f, rng.standard_normal((3, 5))


CASES: dict[str, Case] = {
    "matmul": _matmul,
    "matmul_batched": _matmul_batched,
    "add": _binary(ad.add, _normal((3, 4)), lambda r, s: r.standard_normal(s)),
    "sub": _binary(ad.sub, _normal((3, 4)), lambda r, s: r.standard_normal(s)),
    "mul": _binary(ad.mul, _normal((3, 4)), lambda r, s: r.standard_normal(s)),
    "div": _binary(ad.div, _normal((3, 4)), lambda r, s: r.uniform(0.5, 2.0, s) * r.choice([-1, 1], s)),
    "div_denominator": _binary(lambda t, o: ad.div(o, t), _positive((3, 4), 0.5, 2.0), lambda r, s: r.standard_normal(s)),
    "pow": _unary(lambda t: ad.pow(t, 2.5), _positive((3, 4))),
    "exp": _unary(ad.exp, _normal((3, 4))),
    "log": _unary(ad.log, _positive((3, 4))),
    "max0": _unary(ad.max0, lambda r: _away_from_zero(r, (3, 4))),
    "clamp_min": _unary(lambda t: ad.clamp_min(t, 0.2), lambda r: 0.2 + _away_from_zero(r, (3, 4))),
    "sum": _unary(lambda t: ad.tsum(t, axis=1), _normal((3, 4))),
    "mean": _unary(lambda t: ad.mean(t, axis=0), _normal((3, 4))),
    "frobenius_norm": _unary(ad.frobenius_norm, _normal((3, 4))),
    "max": _max,
    "softmax_rows": _unary(ad.softmax_rows, _normal((3, 5))),
    "log_softmax_rows": _unary(ad.log_softmax_rows, _normal((3, 5))),
    "l2_normalize": _unary(ad.l2_normalize, _normal((3, 5))),
    "reshape": _unary(lambda t: ad.reshape(t, (6, 2)), _normal((3, 4))),
    "transpose": _unary(ad.transpose, _normal((3, 4))),
    "broadcast_to": _broadcast,
    "take": _take,
    "stack": _stack,
    "gem": _gem,
    "netvlad_lite": _netvlad_features,
    "netvlad_lite_centroids": _netvlad_params,
    "triplet_loss": _triplet,
    "rmas_loss": _rmas,
    "pkd_loss": _pkd,
    "pkd_descriptors": _pkd_descriptors,
    "gram_frobenius": _gram_pipeline,
}


@dataclass
class SuiteReport:
    max_error: dict[str, float] = field(default_factory=dict)
    failures: dict[str, list[int]] = field(default_factory=dict)
    seconds: float = 0.0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_error.items():
            status = "FAIL" if name in self.failures else "ok"
            out.append(f"{name:24s} max_rel_error={err:.3e}  {status}")
        return out


def run_suite(seeds: int = 20, tol: float = 1e-4, step: float = 1e-6, ops=None) -> SuiteReport:
    """Check every case in :data:`CASES` (or the subset ``ops``) over ``seeds`` seeds."""
    report = SuiteReport(tol=tol)
    start = time.perf_counter()
    for name in ops or CASES:
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng([seed, len(name)])
            f, x = CASES[name](rng)
            res = ad.gradcheck(f, x, step=step, tol=tol)
            worst = max(worst, res.max_rel_error)
            if not res.passed:
                report.failures.setdefault(name, []).append(seed)
        report.max_error[name] = worst
    report.seconds = time.perf_counter() - start
    return report
