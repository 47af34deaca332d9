"""Finite-difference checks of the three hand-derived gradients.

Each suite draws small random instances, compares the analytic gradient of
every parameter block with central differences, and reports the worst
coordinate-wise relative error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tsner.distill import distill_loss_and_grad
from tsner.ensemble import langid_loss_and_grad_embedded
from tsner.numerics import finite_diff_grad, max_relative_error, softmax
from tsner.tagger import TaggerConfig, TaggerParams, init_params, supervised_loss_and_grad

SUITES = ("supervised", "distill", "langid")
DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class SuiteResult:
    suite: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "instances": self.instances,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _random_tagger(rng: np.random.Generator) -> tuple[TaggerParams, np.ndarray]:
    cfg = TaggerConfig(vocab_size=7, emb_dim=3, radius=1, hidden=4)
    p = init_params(cfg, int(rng.integers(2**31)))
    # nonzero biases and a used unknown row exercise every term
    p.E[1] = rng.normal(scale=0.5, size=cfg.emb_dim)
    p.b1[:] = rng.normal(scale=0.5, size=cfg.hidden)
    p.b[:] = rng.normal(scale=0.5, size=cfg.n_labels)
    sentence = rng.integers(0, cfg.vocab_size, size=3)
    return p, sentence


def _tagger_error(loss_and_grad, params: TaggerParams, eps: float) -> float:
    _, grads = loss_and_grad(params)

    def f(arrays):
        return loss_and_grad(TaggerParams.from_arrays(arrays))[0]

    numeric = finite_diff_grad(f, params.arrays(), eps)
    return max_relative_error(grads.arrays(), numeric)


def supervised_instance(rng: np.random.Generator, eps: float = DEFAULT_EPS) -> float:
    params, sentence = _random_tagger(rng)
    gold = rng.integers(0, 9, size=sentence.size)
    return _tagger_error(lambda p: supervised_loss_and_grad(p, sentence, gold), params, eps)


def distill_instance(rng: np.random.Generator, eps: float = DEFAULT_EPS) -> float:
    params, sentence = _random_tagger(rng)
    teacher = softmax(rng.normal(scale=2.0, size=(sentence.size, 9)))
    return _tagger_error(lambda p: distill_loss_and_grad(p, teacher, sentence), params, eps)


def langid_instance(rng: np.random.Generator, eps: float = DEFAULT_EPS, gram: str = "outer") -> float:
    m, d, K, V, Z = 6, 3, 3, 10, 5
    Eg = rng.normal(size=(V, m))
    G = np.stack([Eg[rng.integers(0, V, size=int(rng.integers(1, 6)))].mean(axis=0) for _ in range(Z)])
    ks = rng.integers(0, K, size=Z)
    U, Vm, P = rng.normal(scale=0.5, size=(d, m)), rng.normal(scale=0.5, size=(d, m)), rng.normal(size=(m, K))
    gamma = float(rng.uniform(0.001, 0.1))
    _, grads = langid_loss_and_grad_embedded(G, ks, U, Vm, P, gamma, gram)
    numeric = finite_diff_grad(lambda a: langid_loss_and_grad_embedded(G, ks, *a, gamma, gram)[0], [U, Vm, P], eps)
    return max_relative_error(grads, numeric)


_INSTANCES = {"supervised": supervised_instance, "distill": distill_instance, "langid": langid_instance}


def run_suite(suite: str, instances: int = 20, seed: int = 0, eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL) -> SuiteResult:
    if suite not in _INSTANCES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    rng = np.random.default_rng([seed, SUITES.index(suite)])
    worst = max(_INSTANCES[suite](rng, eps) for _ in range(instances))
    return SuiteResult(suite, instances, float(worst), tol)


def run_all(instances: int = 20, seed: int = 0, eps: float = DEFAULT_EPS, tol: float = DEFAULT_TOL) -> list[SuiteResult]:
    return [run_suite(s, instances, seed, eps, tol) for s in SUITES]
