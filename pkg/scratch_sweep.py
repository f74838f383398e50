"""Dev scratch: dimension sweep trend."""
import time

from roboenc import analysis as an
from roboenc import network as nn
from roboenc.attacks import AttackSpec
from roboenc.data import synth_digits
from roboenc.seeding import derive_seed
from roboenc.training import TrainConfig

K, IMG = 10, 28

for master in (101, 202, 303):
    t0 = time.time()
    train_ds = synth_digits(100, k=K, image_size=IMG, seed=derive_seed(master, "train"))
    test_ds = synth_digits(50, k=K, image_size=IMG, seed=derive_seed(master, "test"))
    cfg = TrainConfig(lr=0.02, momentum=0.7, epochs=40, batch_size=16,
                      seed=derive_seed(master, "tr"))
    spec = AttackSpec(family="fgsm", epsilon=0.2, seed=derive_seed(master, "atk"))

    def builder(head, m=master):
        return nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(m, "init", "ro"))

    def sub_builder(m=master):
        return nn.build_model("net-a", (1, IMG, IMG), nn.Head("onehot_ce", K),
                              seed=derive_seed(m, "init", "sub"))

    rows = an.dimension_sweep([K, 10 * K, 50 * K], train_ds, test_ds, K,
                              builder, sub_builder, cfg, spec,
                              codebook_seed=derive_seed(master, "cb"))
    print(f"seed {master} [{time.time()-t0:.0f}s]:")
    for r in rows:
        print(f"  l={r['l']:5d} clean={r['clean']:.3f} wb={r['white_box']:.3f} bb={r['black_box']:.3f}")
    bb = [r["black_box"] for r in rows]
    print(f"  endpoint strict increase: {bb[-1] > bb[0]}")
