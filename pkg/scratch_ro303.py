"""Dev scratch: fix the seed-303 RO underfit."""
import time

from roboenc import network as nn
from roboenc import training as tr
from roboenc.codebook import generate_codebook
from roboenc.data import synth_digits
from roboenc.seeding import derive_seed
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K, IMG = 10, 28
master = 303
train_ds = synth_digits(100, k=K, image_size=IMG, seed=derive_seed(master, "train"))
test_ds = synth_digits(50, k=K, image_size=IMG, seed=derive_seed(master, "test"))
cb = generate_codebook(K, 1000, seed=derive_seed(master, "cb"))
ro = nn.Head("codebook_mse", K, cb)

for lr, mom, ep, bs in [(0.02, 0.7, 50, 32), (0.03, 0.7, 35, 32), (0.02, 0.7, 35, 16),
                        (0.025, 0.8, 35, 32), (0.015, 0.85, 35, 32)]:
    t0 = time.time()
    m = nn.build_model("net-a", (1, IMG, IMG), ro, seed=derive_seed(master, "init", 3))
    m, met = tr.train(m, train_ds, TrainConfig(lr=lr, momentum=mom, epochs=ep,
                                               batch_size=bs, seed=derive_seed(master, "tr", 3)))
    acc = nn.accuracy(m, Tensor(test_ds.images), test_ds.labels)
    curve = [round(r["train_acc"], 2) for r in met[::max(1, ep // 8)]]
    print(f"lr={lr} mom={mom} ep={ep} bs={bs}: test={acc:.3f} curve={curve} [{time.time()-t0:.0f}s]")
