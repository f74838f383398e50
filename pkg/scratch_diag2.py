"""Dev scratch: full transfer picture on one seed."""
import sys

import numpy as np

from roboenc import attacks as atk
from roboenc import network as nn
from roboenc import training as tr
from roboenc.codebook import generate_codebook
from roboenc.data import synth_digits
from roboenc.seeding import derive_seed
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K, IMG = 10, 28
master = int(sys.argv[1])
l = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

train_ds = synth_digits(200, k=K, image_size=IMG, seed=derive_seed(master, "train"))
test_ds = synth_digits(50, k=K, image_size=IMG, seed=derive_seed(master, "test"))
cb = generate_codebook(K, l, seed=derive_seed(master, "cb"))
ce = nn.Head("onehot_ce", K)
ro = nn.Head("codebook_mse", K, cb)

models = {}
for name, head, ms in [("ce1", ce, 1), ("ce2", ce, 2), ("ro1", ro, 3), ("ro2", ro, 4)]:
    m = nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(master, "init", ms))
    m, _ = tr.train(m, train_ds, TrainConfig(lr=0.02, momentum=0.7, epochs=30,
                                             batch_size=16, seed=derive_seed(master, "tr", ms)))
    models[name] = m

x = Tensor(test_ds.images)
labels = test_ds.labels
print("clean:", {n: round(nn.accuracy(m, x, labels), 3) for n, m in models.items()})
for eps in (0.15, 0.2):
    adv = {n: atk.fgsm(m, x, labels, eps) for n, m in models.items()}
    print(f"eps={eps}: rows=target, cols=substitute")
    print("      " + "  ".join(f"{n:>6}" for n in models))
    for g, gm in models.items():
        row = [atk.evaluate_attack(gm, x, labels, adv[f]) for f in models]
        print(f"{g:>5} " + "  ".join(f"{v:6.3f}" for v in row))
