"""SGD training loops: standard, adversarial (min-max), and head-swap
fine-tuning for the watermark-removal experiment.

Everything downstream of the config seed is reproducible: shuffling,
dropout masks, weight init, and the inner attack all draw from streams
derived from it. Adversarial steps optimize
Loss(x + delta) + lambda * Loss(x), with delta regenerated against the
current weights every batch.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import attacks as atk
from . import network as nn
from . import tensor as T
from .attacks import AttackSpec
from .data import Dataset
from .errors import ContractError, NumericError, TrainingDiverged
from .seeding import derive_seed, rng
from .tensor import Tensor

_DIVERGENCE_CAP = 1e6


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.5
    epochs: int = 5
    batch_size: int = 32
    lam: float = 1.0               # clean-loss weight in the min-max objective
    adv_spec: AttackSpec | None = None
    freeze_features: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")
        if self.lam < 0:
            raise ContractError("clean-loss weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("bad batch size or epoch count")


def sgd_step(weights: np.ndarray, grads: np.ndarray, velocity: np.ndarray,
             lr: float, momentum: float):
    """Classic momentum update: v <- m*v + g; w <- w - lr*v."""
    if weights.shape != grads.shape or weights.shape != velocity.shape:
        raise ContractError("weight/gradient/velocity shape mismatch")
    v = momentum * velocity + grads
    return weights - lr * v, v


def _batch_loss(model, x: Tensor, labels, cfg: TrainConfig, dropout_seed: int):
    s = nn.forward(model, x, train_mode=True, seed=dropout_seed)
    return nn.loss(model.head, s, labels)


def _apply_gradients(model, gm, velocities, cfg: TrainConfig):
    for idx, name, tens in model.parameters():
        g = gm.get(tens).data
        key = (idx, name)
        w_new, v_new = sgd_step(tens.data, g, velocities[key], cfg.lr, cfg.momentum)
        velocities[key] = v_new
        model.set_weight(idx, name, w_new)


def _epoch_metrics(model, train_ds: Dataset, val_ds: Dataset | None):
    train_acc = nn.accuracy(model, Tensor(train_ds.images), train_ds.labels)
    val_acc = None
    if val_ds is not None and len(val_ds):
        val_acc = nn.accuracy(model, Tensor(val_ds.images), val_ds.labels)
    return train_acc, val_acc


def train(model, dataset: Dataset, cfg: TrainConfig, val_ds: Dataset | None = None,
          metrics_path=None):
    """Mini-batch SGD; returns (model, per-epoch metrics list).

    The metrics stream has one record per epoch:
    {epoch, train_acc, val_acc, clean_loss, adv_loss}; adv_loss is null
    unless an inner attack is configured. Raises TrainingDiverged when
    the loss leaves the finite range or exceeds 1e6.
    """
    if len(dataset) == 0:
        raise ContractError("dataset is empty")
    adversarial = cfg.adv_spec is not None
    velocities = {(idx, name): np.zeros(t.shape)
                  for idx, name, t in model.parameters()}
    metrics = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng(cfg.seed, "shuffle", epoch).permutation(n)
        clean_sum = 0.0
        adv_sum = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            x = Tensor(dataset.images[sel])
            labels = dataset.labels[sel]
            dropout_seed = derive_seed(cfg.seed, "dropout", epoch, start)

            try:
                if adversarial:
                    step_spec = replace(
                        cfg.adv_spec,
                        seed=derive_seed(cfg.seed, "attack", epoch, start))
                    x_adv = atk.attack(model, x, labels, step_spec)
                    adv_loss = _batch_loss(model, x_adv, labels, cfg, dropout_seed)
                    if cfg.lam != 0.0:
                        clean_loss = _batch_loss(model, x, labels, cfg, dropout_seed)
                        total = T.add(adv_loss, T.mul(clean_loss, Tensor(cfg.lam)))
                        clean_sum += clean_loss.item()
                    else:
                        total = adv_loss
                    adv_sum += adv_loss.item()
                else:
                    total = _batch_loss(model, x, labels, cfg, dropout_seed)
                    clean_sum += total.item()
            except NumericError as exc:
                raise TrainingDiverged(epoch, f"non-finite loss at epoch {epoch}") from exc

            if not np.isfinite(total.item()) or total.item() > _DIVERGENCE_CAP:
                raise TrainingDiverged(epoch)
            gm = T.backward(total)
            _apply_gradients(model, gm, velocities, cfg)
            batches += 1

        train_acc, val_acc = _epoch_metrics(model, dataset, val_ds)
        record = {
            "epoch": epoch,
            "train_acc": train_acc,
            "val_acc": val_acc,
            "clean_loss": clean_sum / batches if not adversarial or cfg.lam != 0.0 else None,
            "adv_loss": adv_sum / batches if adversarial else None,
        }
        metrics.append(record)
    if metrics_path is not None:
        with open(metrics_path, "w") as fh:
            for record in metrics:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return model, metrics


def adversarial_train(model, dataset: Dataset, cfg: TrainConfig,
                      val_ds: Dataset | None = None, metrics_path=None):
    """train() with the inner maximization required present."""
    if cfg.adv_spec is None:
        raise ContractError("adversarial training needs an attack spec")
    return train(model, dataset, cfg, val_ds=val_ds, metrics_path=metrics_path)


def step_gradients(model, x: Tensor, labels, cfg: TrainConfig, epoch: int = 0,
                   batch_start: int = 0):
    """Gradient map of one (possibly adversarial) step, without updating.

    Exposed so the objective decomposition grad(adv) + lambda*grad(clean)
    can be verified against the combined backward pass.
    """
    dropout_seed = derive_seed(cfg.seed, "dropout", epoch, batch_start)
    if cfg.adv_spec is None:
        return T.backward(_batch_loss(model, x, labels, cfg, dropout_seed))
    step_spec = replace(cfg.adv_spec,
                        seed=derive_seed(cfg.seed, "attack", epoch, batch_start))
    x_adv = atk.attack(model, x, labels, step_spec)
    adv_loss = _batch_loss(model, x_adv, labels, cfg, dropout_seed)
    if cfg.lam == 0.0:
        return T.backward(adv_loss)
    clean_loss = _batch_loss(model, x, labels, cfg, dropout_seed)
    return T.backward(T.add(adv_loss, T.mul(clean_loss, Tensor(cfg.lam))))


def finetune_with_head_swap(stolen, new_head: nn.Head, dataset: Dataset,
                            cfg: TrainConfig, val_ds: Dataset | None = None,
                            head_seed: int = 0):
    """Copy the feature layers of a trained model under a fresh head.

    The final dense layer is reinitialized at the new head's width; with
    cfg.freeze_features the copied layers receive no updates and stay
    bit-identical through training.
    """
    if not stolen.layers or stolen.layers[-1].kind != "dense":
        raise ContractError("expected a dense output layer to replace")
    feat_width = stolen.layers[-1].params["in"]
    layers = stolen.layers[:-1] + [nn.dense(feat_width, new_head.width)]
    model = nn.Model(layers, new_head, stolen.input_shape, seed=head_seed)
    last = len(layers) - 1
    for idx, name, tens in stolen.all_weights():
        if idx != last:
            model.set_weight(idx, name, tens.data)
    if cfg.freeze_features:
        for idx in range(last):
            if model.weights[idx] is not None:
                model.trainable[idx] = False
    return train(model, dataset, cfg, val_ds=val_ds)
