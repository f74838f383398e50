"""Dev scratch: beta scaling + config sweep for the trend experiments."""
import time

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

K = 10
IMG = 28
N_TRAIN = 100
N_TEST = 50


def run_seed(master, l, beta, epochs, lr, mom):
    t0 = time.time()
    train_ds = synth_digits(N_TRAIN, k=K, image_size=IMG, seed=derive_seed(master, "train"))
    test_ds = synth_digits(N_TEST, k=K, image_size=IMG, seed=derive_seed(master, "test"))

    cb = generate_codebook(K, l, beta=beta, seed=derive_seed(master, "cb"))
    ce = nn.Head("onehot_ce", K)
    ro = nn.Head("codebook_mse", K, cb)

    models = {}
    accs = {}
    for name, head, ms in [("ce1", ce, 1), ("ce2", ce, 2), ("ro1", ro, 3), ("ro2", ro, 4)]:
        m = nn.build_model("net-a", (1, IMG, IMG), head, seed=derive_seed(master, "init", ms))
        m, met = tr.train(m, train_ds, TrainConfig(lr=lr, momentum=mom, epochs=epochs,
                                                   batch_size=16, seed=derive_seed(master, "tr", ms)))
        models[name] = m
        accs[name] = nn.accuracy(m, Tensor(test_ds.images), test_ds.labels)

    recs = {n: an.sign_gradient_record(m, test_ds, "input", n) for n, m in models.items()}
    r_cc = an.pearson_sign_correlation(recs["ce1"], recs["ce2"])
    r_rr = an.pearson_sign_correlation(recs["ro1"], recs["ro2"])
    r_rc = an.pearson_sign_correlation(recs["ro1"], recs["ce1"])

    x = Tensor(test_ds.images)
    adv = atk.fgsm(models["ce2"], x, test_ds.labels, 0.2)
    a_ce = atk.evaluate_attack(models["ce1"], x, test_ds.labels, adv)
    a_ro = atk.evaluate_attack(models["ro1"], x, test_ds.labels, adv)
    ok_rho = (r_cc is not None and r_rr is not None and r_rc is not None
              and r_cc > r_rr and r_rc < r_cc)
    ok_gap = (a_ro - a_ce) >= 0.10
    print(f"  seed={master} acc(ce1,ce2,ro1,ro2)=({accs['ce1']:.2f},{accs['ce2']:.2f},"
          f"{accs['ro1']:.2f},{accs['ro2']:.2f}) "
          f"rho=({r_cc},{r_rr},{r_rc}) gap={100*(a_ro-a_ce):.1f} "
          f"[rho {'OK' if ok_rho else 'X'}|gap {'OK' if ok_gap else 'X'}] {time.time()-t0:.0f}s")


import sys
l = int(sys.argv[1]); beta = float(sys.argv[2]); epochs = int(sys.argv[3])
lr = float(sys.argv[4]); mom = float(sys.argv[5])
print(f"l={l} beta={beta} epochs={epochs} lr={lr} mom={mom}")
for master in (101, 202, 303):
    run_seed(master, l, beta, epochs, lr, mom)
