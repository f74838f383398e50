"""Dev scratch: probe desk-scale trend parameters before freezing them."""
import time

import numpy as np

from roboenc import analysis as an
from roboenc import attacks as atk
from roboenc import network as nn
from roboenc import training as tr
from roboenc.attacks import AttackSpec
from roboenc.codebook import generate_codebook
from roboenc.data import synth_digits
from roboenc.seeding import derive_seed
from roboenc.tensor import Tensor
from roboenc.training import TrainConfig

K = 10
IMG = 28
L = 2000
N_TRAIN = 80
N_TEST = 30
EPOCHS = 25


def build(head, seed):
    return nn.build_model("net-a", (1, IMG, IMG), head, seed=seed)


def run_seed(master):
    t0 = time.time()
    train_ds = synth_digits(N_TRAIN, k=K, image_size=IMG, seed=derive_seed(master, "train"))
    test_ds = synth_digits(N_TEST, k=K, image_size=IMG, seed=derive_seed(master, "test"))
    cfg = TrainConfig(lr=0.03, momentum=0.8, epochs=EPOCHS, batch_size=32, seed=derive_seed(master, "cfg"))

    cb = generate_codebook(K, L, seed=derive_seed(master, "cb"))
    ce = nn.Head("onehot_ce", K)
    ro = nn.Head("codebook_mse", K, cb)

    models = {}
    for name, head, ms in [("ce1", ce, 1), ("ce2", ce, 2), ("ro1", ro, 3), ("ro2", ro, 4)]:
        m = build(head, derive_seed(master, "init", ms))
        m, met = tr.train(m, train_ds, TrainConfig(lr=0.03, momentum=0.8, epochs=EPOCHS,
                                                   batch_size=32, seed=derive_seed(master, "train", ms)))
        models[name] = m
        acc = nn.accuracy(m, Tensor(test_ds.images), test_ds.labels)
        print(f"  {name}: train_acc={met[-1]['train_acc']:.3f} test_acc={acc:.3f}")

    recs = {n: an.sign_gradient_record(m, test_ds, "input", n) for n, m in models.items()}
    rho_cece = an.pearson_sign_correlation(recs["ce1"], recs["ce2"])
    rho_roro = an.pearson_sign_correlation(recs["ro1"], recs["ro2"])
    rho_roce = an.pearson_sign_correlation(recs["ro1"], recs["ce1"])
    print(f"  rho(ce,ce')={rho_cece:.3f}  rho(ro,ro')={rho_roro:.3f}  rho(ro,ce)={rho_roce:.3f}")

    x = Tensor(test_ds.images)
    adv = atk.fgsm(models["ce2"], x, test_ds.labels, 0.2)
    acc_ce = atk.evaluate_attack(models["ce1"], x, test_ds.labels, adv)
    acc_ro = atk.evaluate_attack(models["ro1"], x, test_ds.labels, adv)
    print(f"  transfer: target-1ofK={acc_ce:.3f} target-RO={acc_ro:.3f} gap={100*(acc_ro-acc_ce):.1f}pts")
    print(f"  [{time.time()-t0:.1f}s]")
    return rho_cece, rho_roro, rho_roce, acc_ce, acc_ro


for master in (101, 202, 303):
    print(f"seed {master}:")
    run_seed(master)
