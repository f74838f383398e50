"""Dev scratch: find a config where the presets train to ~99%."""
import time

import numpy as np

from roboenc import network as nn
from roboenc import training as tr
from roboenc.codebook import generate_codebook
from roboenc.data import synth_digits
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K = 10


def probe(img, n_train, epochs, lr, mom, batch, head_kind, l=200, seed=0):
    train_ds = synth_digits(n_train, k=K, image_size=img, seed=seed)
    test_ds = synth_digits(30, k=K, image_size=img, seed=seed + 1)
    if head_kind == "ce":
        head = nn.Head("onehot_ce", K)
    else:
        head = nn.Head("codebook_mse", K, generate_codebook(K, l, seed=5))
    m = nn.build_model("net-a", (1, img, img), head, seed=seed + 2)
    t0 = time.time()
    m, met = tr.train(m, train_ds, TrainConfig(lr=lr, momentum=mom, epochs=epochs,
                                               batch_size=batch, seed=seed + 3))
    test_acc = nn.accuracy(m, Tensor(test_ds.images), test_ds.labels)
    print(f"img={img} n={n_train} ep={epochs} lr={lr} mom={mom} bs={batch} {head_kind}: "
          f"train={met[-1]['train_acc']:.3f} test={test_acc:.3f}  [{time.time()-t0:.1f}s]")
    return test_acc


for head_kind in ("ce", "ro"):
    probe(20, 60, 20, 0.01, 0.5, 32, head_kind)
    probe(20, 60, 20, 0.03, 0.7, 32, head_kind)
    probe(20, 60, 30, 0.05, 0.7, 32, head_kind)
    probe(16, 60, 30, 0.05, 0.7, 32, head_kind)
