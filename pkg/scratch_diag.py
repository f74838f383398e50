"""Dev scratch: is RO fragility attack-specific or plain noise fragility?"""
import sys

import numpy as np

from roboenc import analysis as an
from roboenc import attacks as atk
from roboenc import network as nn
from roboenc import training as tr
from roboenc.codebook import generate_codebook
from roboenc.data import synth_digits
from roboenc.seeding import derive_seed
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K, IMG, N_TRAIN, N_TEST = 10, 28, 80, 30
master = int(sys.argv[1]); l = int(sys.argv[2]); eps = 0.2

train_ds = synth_digits(N_TRAIN, k=K, image_size=IMG, seed=derive_seed(master, "train"))
test_ds = synth_digits(N_TEST, k=K, image_size=IMG, seed=derive_seed(master, "test"))
cb = generate_codebook(K, l, seed=derive_seed(master, "cb"))
ce = nn.Head("onehot_ce", K)
ro = nn.Head("codebook_mse", K, cb)

models = {}
for name, head, ms in [("ce1", ce, 1), ("ce2", ce, 2), ("ro1", ro, 3)]:
    m = nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(master, "init", ms))
    m, _ = tr.train(m, train_ds, TrainConfig(lr=0.02, momentum=0.7, epochs=25,
                                             batch_size=32, seed=derive_seed(master, "tr", ms)))
    models[name] = m

x = Tensor(test_ds.images)
labels = test_ds.labels
rng = np.random.default_rng(0)
noise = np.sign(rng.normal(size=x.shape))
x_noise = Tensor(np.clip(x.data + eps * noise, 0, 1))

for name, m in models.items():
    clean = nn.accuracy(m, x, labels)
    noisy = nn.accuracy(m, Tensor(x_noise.data), labels)
    wb = atk.evaluate_attack(m, x, labels, atk.fgsm(m, x, labels, eps))
    bb = atk.evaluate_attack(m, x, labels, atk.fgsm(models["ce2"], x, labels, eps))
    print(f"{name}: clean={clean:.3f} random-sign={noisy:.3f} whitebox-fgsm={wb:.3f} bb-from-ce2={bb:.3f}")
