"""Dev scratch: adversarial-training benefit + corruption + epsilon curve."""
import time

import numpy as np

from roboenc import attacks as atk
from roboenc import network as nn
from roboenc import training as tr
from roboenc.attacks import AttackSpec
from roboenc.codebook import generate_codebook
from roboenc.data import CORRUPTION_KINDS, CorruptionSpec, corrupt, synth_digits
from roboenc.seeding import derive_seed
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K, IMG, L = 10, 28, 200
master = 101
EPS_TRAIN = 0.1

t0 = time.time()
train_ds = synth_digits(100, k=K, image_size=IMG, seed=derive_seed(master, "train"))
test_ds = synth_digits(50, k=K, image_size=IMG, seed=derive_seed(master, "test"))
cb = generate_codebook(K, L, seed=derive_seed(master, "cb"))
head = nn.Head("codebook_mse", K, cb)

std = nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(master, "init"))
std, _ = tr.train(std, train_ds, TrainConfig(lr=0.02, momentum=0.7, epochs=30,
                                             batch_size=16, seed=derive_seed(master, "std")))
print(f"std trained [{time.time()-t0:.0f}s]")

t0 = time.time()
adv_spec = AttackSpec(family="pgd", epsilon=EPS_TRAIN, iters=5, restarts=1,
                      random_start=True, seed=0)
rob = nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(master, "init"))
rob, _ = tr.adversarial_train(rob, train_ds,
                              TrainConfig(lr=0.02, momentum=0.7, epochs=30, batch_size=16,
                                          lam=1.0, adv_spec=adv_spec,
                                          seed=derive_seed(master, "rob")))
print(f"adv trained [{time.time()-t0:.0f}s]")

x = Tensor(test_ds.images)
labels = test_ds.labels
eval_spec = AttackSpec(family="pgd", epsilon=EPS_TRAIN, iters=20, restarts=2,
                       random_start=True, seed=derive_seed(master, "eval"))
for name, m in (("std", std), ("rob", rob)):
    clean = nn.accuracy(m, x, labels)
    adv = atk.pgd(m, x, labels, eval_spec)
    racc = atk.evaluate_attack(m, x, labels, adv)
    corr = []
    for kind in CORRUPTION_KINDS:
        for sev in range(1, 6):
            cds = corrupt(test_ds, CorruptionSpec(kind, sev, seed=derive_seed(master, "corr")))
            corr.append(nn.accuracy(m, Tensor(cds.images), cds.labels))
    print(f"{name}: clean={clean:.3f} pgd@{EPS_TRAIN}={racc:.3f} corruption-mean={np.mean(corr):.3f}")

print("epsilon curve on rob:")
for eps in (0.0, 0.05, 0.1, 0.2, 0.4, 2.0):
    spec = AttackSpec(family="pgd", epsilon=eps, iters=30, restarts=1,
                      random_start=True, seed=derive_seed(master, "curve"))
    adv = atk.pgd(rob, x, labels, spec)
    success = 1.0 - atk.evaluate_attack(rob, x, labels, adv)
    print(f"  eps={eps}: success={success:.3f}")
