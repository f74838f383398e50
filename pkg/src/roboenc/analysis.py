"""Measurement instruments: gradient-sign correlation between models,
attack transfer matrices, loss-landscape grids, and the encoding-length
sweep.

Gradient records take the loss gradient at each example, average conv
feature-map gradients over the channel axis (saliency style, so filter
order cannot scramble the comparison), and keep only the sign. Pooling
all examples into one long vector per model gives a single Pearson
coefficient per model pair.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import attacks as atk
from . import network as nn
from . import tensor as T
from . import training as tr
from .attacks import AttackSpec
from .codebook import generate_codebook
from .data import Dataset
from .errors import ContractError
from .seeding import derive_seed, rng
from .tensor import Tensor


@dataclass(frozen=True)
class GradientRecord:
    model_id: str
    layer_tag: str
    signs: np.ndarray  # (N, ...) entries in {-1, 0, +1}


@dataclass(frozen=True)
class LandscapeGrid:
    coords: np.ndarray   # grid coefficients, shape (resolution,)
    values: np.ndarray   # (resolution, resolution) z at x' + a*r1 + b*r2
    r1: np.ndarray
    r2: np.ndarray


def sign_gradient_record(model, dataset: Dataset, layer_tag: str,
                         model_id: str = "") -> GradientRecord:
    """Sign of the loss gradient at the tagged activation, per example.

    Conv feature-map gradients are channel-averaged before the sign.
    Valid tags: 'input', 'conv1', 'conv2', ... as present in the model.
    """
    valid = ["input"] + model.conv_tags()
    if layer_tag not in valid:
        raise ContractError(f"unknown layer tag {layer_tag!r}; model has {valid}")
    x = Tensor(dataset.images, requires_grad=True)
    s, acts = nn.forward(model, x, train_mode=False, capture=True)
    total = T.tsum(nn.per_example_loss(model.head, s, dataset.labels))
    gm = T.backward(total)
    g = gm.get(acts[layer_tag]).data
    if layer_tag.startswith("conv"):
        g = g.mean(axis=1)  # average over channels
    else:
        g = g.reshape(len(dataset), -1)
    return GradientRecord(model_id=model_id, layer_tag=layer_tag, signs=np.sign(g))


def pearson_sign_correlation(a: GradientRecord, b: GradientRecord):
    """Pearson rho over the pooled, flattened sign vectors.

    Returns None when either vector is constant (the coefficient is
    undefined there).
    """
    if a.layer_tag != b.layer_tag:
        raise ContractError("records compare different layers")
    if a.signs.shape != b.signs.shape:
        raise ContractError(f"record shapes differ: {a.signs.shape} vs {b.signs.shape}")
    va = a.signs.ravel().astype(np.float64)
    vb = b.signs.ravel().astype(np.float64)
    sa = va.std()
    sb = vb.std()
    if sa == 0.0 or sb == 0.0:
        return None
    cov = np.mean((va - va.mean()) * (vb - vb.mean()))
    return float(cov / (sa * sb))


def attack_transfer_matrix(models, spec: AttackSpec, dataset: Dataset):
    """All-pairs FGSM/PGD transfer: cell (target g, substitute f).

    models: list of (name, model) over the same input space. Returns a
    dict with the accuracy matrix, input-gradient sign correlations, and
    clean accuracies. The diagonal is the white-box case.
    """
    if len(models) < 2:
        raise ContractError("need at least two models")
    names = [name for name, _ in models]
    x = Tensor(dataset.images)
    adv = {}
    for name, model in models:
        adv[name] = atk.attack(model, x, dataset.labels, spec)
    records = {name: sign_gradient_record(model, dataset, "input", model_id=name)
               for name, model in models}

    acc = np.zeros((len(models), len(models)))
    rho = np.zeros((len(models), len(models)))
    for gi, (gname, gmodel) in enumerate(models):
        for fi, (fname, _) in enumerate(models):
            acc[gi, fi] = atk.evaluate_attack(gmodel, x, dataset.labels, adv[fname])
            r = pearson_sign_correlation(records[gname], records[fname])
            rho[gi, fi] = np.nan if r is None else r
    clean = [nn.accuracy(m, x, dataset.labels) for _, m in models]
    return {
        "names": names,
        "accuracy": acc,
        "rho": rho,
        "clean": clean,
    }


def loss_landscape(model, x_prime: Tensor, t: int, extent: float = 0.1,
                   resolution: int = 21, seed: int = 0) -> LandscapeGrid:
    """z over the plane spanned by the signed loss gradient and a seeded
    Rademacher direction, inputs clamped to the pixel box.

    z is the loss for MSE-to-codebook heads and the ground-truth output
    neuron's value for one-hot heads. resolution must be odd so the base
    point sits on the grid; the grid value at (0, 0) equals the base
    quantity at x'.
    """
    if resolution % 2 != 1:
        raise ContractError("resolution must be odd so (0,0) is a grid node")
    if x_prime.data.ndim != len(model.input_shape) + 1 or x_prime.shape[0] != 1:
        raise ContractError("x_prime must be a single example batch")

    g = nn.input_gradient(model, x_prime, [t]).data
    r1 = np.sign(g)
    r2 = rng(seed, "rademacher").integers(0, 2, size=x_prime.shape) * 2.0 - 1.0
    coords = np.linspace(-extent, extent, resolution)
    if resolution > 1:
        coords[resolution // 2] = 0.0  # exact center despite float spacing

    points = []
    for a in coords:
        for b in coords:
            points.append(np.clip(x_prime.data + a * r1 + b * r2, 0.0, 1.0))
    batch = Tensor(np.concatenate(points, axis=0))
    s = nn.forward(model, batch, train_mode=False)
    if model.head.variant in ("codebook_mse", "onehot_mse", "codebook_softmax"):
        z = nn.per_example_loss(model.head, s, [t] * len(points)).data
    else:
        z = s.data[:, t]  # ground-truth neuron value
    values = z.reshape(resolution, resolution)
    return LandscapeGrid(coords=coords, values=values, r1=r1[0], r2=r2[0])


def dimension_sweep(l_values, dataset: Dataset, test_ds: Dataset, k: int,
                    model_builder, substitute_builder, train_cfg, spec: AttackSpec,
                    beta_rule=None, codebook_seed: int = 0):
    """Train one codebook model per encoding length and attack each one.

    Seeds are held fixed across lengths; only the codebook dimension
    changes. The black-box column uses FGSM/PGD perturbations generated
    from a fixed one-hot substitute trained once on the same data.

    model_builder(head) and substitute_builder() must return fresh
    untrained models with their own fixed seeds.
    """
    for l in l_values:
        if l < k:
            raise ContractError(f"encoding length {l} below class count {k}")
    sub_cfg = replace(train_cfg, seed=derive_seed(train_cfg.seed, "substitute"))
    model_cfg = replace(train_cfg, seed=derive_seed(train_cfg.seed, "model"))
    substitute, _ = tr.train(substitute_builder(), dataset, sub_cfg)
    x_test = Tensor(test_ds.images)
    adv_bb = atk.attack(substitute, x_test, test_ds.labels, spec)

    rows = []
    for l in l_values:
        beta = beta_rule(l) if beta_rule is not None else None
        cb = generate_codebook(k, l, beta=beta, seed=codebook_seed)
        head = nn.Head("codebook_mse", k, cb)
        model, _ = tr.train(model_builder(head), dataset, model_cfg)
        adv_wb = atk.attack(model, x_test, test_ds.labels, spec)
        rows.append({
            "l": int(l),
            "clean": nn.accuracy(model, x_test, test_ds.labels),
            "white_box": atk.evaluate_attack(model, x_test, test_ds.labels, adv_wb),
            "black_box": atk.evaluate_attack(model, x_test, test_ds.labels, adv_bb),
        })
    return rows
