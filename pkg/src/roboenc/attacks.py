"""Gradient-based adversarial example generation.

FGSM is the single signed-gradient step; PGD iterates it with projection
onto the l-inf ball (project first, then clamp to the pixel box, every
step) plus optional random starts and restarts. The margin objective for
codebook heads drives the same iteration toward the nearest competing
row. All randomness is derived per example from the attack seed, so
batch order and worker layout never change results.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import network as nn
from . import tensor as T
from .errors import ContractError
from .seeding import derive_seed
from .tensor import Tensor

FAMILIES = ("fgsm", "pgd", "random-search")
OBJECTIVES = ("head-loss", "cw-margin")


@dataclass(frozen=True)
class AttackSpec:
    family: str = "pgd"
    epsilon: float = 0.1
    step: float | None = None      # default 2.5 * epsilon / iters
    iters: int = 10
    restarts: int = 1
    random_start: bool = True
    objective: str = "head-loss"
    kappa: float = 0.0
    targeted: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown attack family {self.family!r}")
        if self.objective not in OBJECTIVES:
            raise ContractError(f"unknown objective {self.objective!r}")
        if self.epsilon < 0:
            raise ContractError("epsilon must be >= 0")
        if self.family == "pgd" and self.iters < 1:
            raise ContractError("pgd needs at least one iteration")
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")
        if self.kappa < 0:
            raise ContractError("kappa must be >= 0")
        if self.targeted is not None and self.objective == "cw-margin":
            raise ContractError("the margin objective is defined against the true class")

    @property
    def alpha(self) -> float:
        if self.step is not None:
            return self.step
        return 2.5 * self.epsilon / max(self.iters, 1)

    def to_json(self) -> str:
        doc = {
            "family": self.family, "epsilon": self.epsilon, "step": self.step,
            "iters": self.iters, "restarts": self.restarts,
            "random_start": self.random_start, "objective": self.objective,
            "kappa": self.kappa, "targeted": self.targeted, "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        return cls(**json.loads(text))


def _objective_and_grad(model, x_arr: np.ndarray, labels: np.ndarray, objective: str,
                        kappa: float):
    """Per-example objective values plus the input gradient of their sum.

    head-loss: the model's own loss at the given label. cw-margin: the
    clamped competing-row margin (gradient zeroed on clamped examples).
    """
    x = Tensor(x_arr, requires_grad=True)
    s = nn.forward(model, x, train_mode=False)
    if objective == "head-loss":
        per = nn.per_example_loss(model.head, s, labels)
        grads = T.backward(T.tsum(per)).get(x).data
        return per.data.copy(), grads
    return _cw_margin_and_grad(model.head, s, x, labels, kappa)


def _cw_margin_and_grad(head, s: Tensor, x: Tensor, labels: np.ndarray, kappa: float):
    if head.variant != "codebook_mse":
        raise ContractError("margin objective requires the codebook MSE head")
    k = head.k
    if k < 2:
        raise ContractError("margin needs at least two classes")
    n = s.shape[0]
    dist = nn.head_distances(head, s.data)  # (N, k)
    masked = dist.copy()
    masked[np.arange(n), labels] = np.inf
    runner_up = np.argmin(masked, axis=1)

    # margin = min_{i != t} d_i - d_t, clamped below at -kappa
    d_ru = T.tmean(T.square(T.sub(s, Tensor(head.codebook.rows[runner_up]))), axis=1)
    d_t = T.tmean(T.square(T.sub(s, Tensor(head.codebook.rows[labels]))), axis=1)
    margin = T.sub(d_ru, d_t)
    raw = margin.data.copy()
    clamped = np.maximum(raw, -kappa)

    active = (raw > -kappa).astype(np.float64)  # clamp zeroes the gradient
    weighted = T.tsum(T.mul(margin, Tensor(active)))
    grads = T.backward(weighted).get(x).data
    return clamped, grads


def cw_margin(model, x: Tensor, t, kappa: float = 0.0):
    """Clamped margin per example (a plain float for a single example)."""
    labels = np.atleast_1d(np.asarray(t, dtype=np.int64))
    x_in = Tensor(x.data, requires_grad=True)
    s = nn.forward(model, x_in, train_mode=False)
    vals, _ = _cw_margin_and_grad(model.head, s, x_in, labels, kappa)
    return vals if len(vals) > 1 else float(vals[0])


def _restart_offsets(seed: int, epsilon: float, restart: int, shape) -> np.ndarray:
    """Uniform start offsets, one independent stream per example."""
    n = shape[0]
    per_example = int(np.prod(shape[1:]))
    out = np.empty((n, per_example))
    for i in range(n):
        gen = np.random.default_rng(derive_seed(seed, "start", restart, i))
        out[i] = gen.uniform(-epsilon, epsilon, size=per_example)
    return out.reshape(shape)


def _run_iterations(model, x_arr, labels, spec: AttackSpec, start, iters, alpha,
                    minimize: bool):
    lo = x_arr - spec.epsilon
    hi = x_arr + spec.epsilon
    cur = np.clip(np.clip(start, lo, hi), 0.0, 1.0)
    for _ in range(iters):
        _, grads = _objective_and_grad(model, cur, labels, spec.objective, spec.kappa)
        step = alpha * np.sign(grads)
        cur = cur - step if minimize else cur + step
        cur = np.clip(np.clip(cur, lo, hi), 0.0, 1.0)
    vals, _ = _objective_and_grad(model, cur, labels, spec.objective, spec.kappa)
    return cur, vals


def fgsm(model, x: Tensor, t, epsilon: float) -> Tensor:
    """One signed-gradient step of size epsilon, clamped to the pixel box."""
    labels = np.atleast_1d(np.asarray(t, dtype=np.int64))
    _, grads = _objective_and_grad(model, x.data, labels, "head-loss", 0.0)
    return Tensor(np.clip(x.data + epsilon * np.sign(grads), 0.0, 1.0))


def pgd(model, x: Tensor, t, spec: AttackSpec) -> Tensor:
    """Iterated signed steps inside the epsilon box, best restart kept.

    The winning candidate per example maximizes the attack objective:
    the head loss for untargeted head-loss attacks, the negated target
    loss for targeted ones, the negated margin for cw-margin.
    """
    if spec.family != "pgd":
        raise ContractError("spec.family must be 'pgd'")
    true_labels = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if spec.targeted is None:
        labels = true_labels
        minimize = spec.objective == "cw-margin"
    else:
        labels = np.full_like(true_labels, spec.targeted)
        minimize = True  # descend the target-class loss, i.e. subtract
    x_arr = x.data

    best = None
    best_score = None
    for restart in range(spec.restarts):
        if spec.random_start:
            start = x_arr + _restart_offsets(spec.seed, spec.epsilon, restart, x_arr.shape)
        else:
            start = x_arr
        cand, vals = _run_iterations(model, x_arr, labels, spec, start,
                                     spec.iters, spec.alpha, minimize)
        score = -vals if minimize else vals
        if best is None:
            best, best_score = cand, score
        else:
            better = score > best_score
            best = np.where(better.reshape((-1,) + (1,) * (cand.ndim - 1)), cand, best)
            best_score = np.where(better, score, best_score)
    return Tensor(best)


def attack(model, x: Tensor, t, spec: AttackSpec) -> Tensor:
    """Dispatch on spec.family with the spec's own parameters."""
    if spec.family == "fgsm":
        return fgsm(model, x, t, spec.epsilon)
    if spec.family == "pgd":
        return pgd(model, x, t, spec)
    out = random_search_probe(model, x, t, spec.epsilon, trials=max(spec.iters, 1),
                              seed=spec.seed)
    return out if out is not None else Tensor(x.data)


def random_search_probe(model, x: Tensor, t, epsilon: float, trials: int, seed: int = 0):
    """Try uniform sign directions; return the first candidate that flips
    the model's clean prediction, or None after `trials` attempts."""
    if trials < 1:
        raise ContractError("trials must be >= 1")
    base_pred = nn.predict(model, x)
    n = x.shape[0]
    flat = int(np.prod(x.shape[1:]))
    for trial in range(trials):
        signs = np.empty((n, flat))
        for i in range(n):
            gen = np.random.default_rng(derive_seed(seed, "probe", trial, i))
            signs[i] = gen.integers(0, 2, size=flat) * 2.0 - 1.0
        cand = np.clip(x.data + epsilon * signs.reshape(x.shape), 0.0, 1.0)
        pred = nn.predict(model, Tensor(cand))
        if np.any(pred != base_pred):
            return Tensor(cand)
    return None


def evaluate_attack(model, examples: Tensor, labels, adversarial: Tensor) -> float:
    """Fraction of adversarial inputs still classified as their true label."""
    labels = np.asarray(labels)
    if not (len(examples.data) == len(labels) == len(adversarial.data)):
        raise ContractError("example/label/adversarial length mismatch")
    pred = nn.predict(model, adversarial)
    return float(np.mean(pred == labels))
