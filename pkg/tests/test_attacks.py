"""FGSM/PGD contracts: containment, reductions, margins, monotonicity."""

import numpy as np
import pytest

from roboenc import attacks as atk
from roboenc import network as nn
from roboenc.attacks import AttackSpec
from roboenc.codebook import generate_codebook
from roboenc.errors import ContractError
from roboenc.tensor import Tensor

EPS_SLACK = 1e-12  # float rounding allowance on |x_adv - x| <= epsilon


def linear_model(w, b=None, head=None):
    n_in, n_out = w.shape
    head = head or nn.Head("onehot_ce", n_out)
    m = nn.Model([nn.dense(n_in, n_out)], head, (n_in,), seed=0)
    m.set_weight(0, "w", w)
    m.set_weight(0, "b", b if b is not None else np.zeros(n_out))
    return m


def toy_mse_model(seed=0, k=3, l=6, n_in=4):
    cb = generate_codebook(k, l, beta=2.0, seed=seed)
    head = nn.Head("codebook_mse", k, cb)
    m = nn.Model([nn.dense(n_in, l)], head, (n_in,), seed=seed)
    return m, cb


def test_fgsm_zero_epsilon_is_identity():
    model = linear_model(np.array([[1.0, -1.0]]))
    x = Tensor([[0.5]])
    out = atk.fgsm(model, x, [0], 0.0)
    assert np.array_equal(out.data, x.data)


def test_fgsm_direct_step_and_clamp():
    # gradient of CE w.r.t. the single pixel is negative for class 0 here,
    # so the signed step moves the pixel down by epsilon
    model = linear_model(np.array([[1.0, -1.0]]))
    x = Tensor([[0.5]])
    out = atk.fgsm(model, x, [0], 0.2)
    assert abs(out.data[0, 0] - 0.3) < 1e-15

    x_hi = Tensor([[0.9]])
    out = atk.fgsm(model, x_hi, [1], 0.2)  # gradient pushes up for class 1
    assert out.data[0, 0] == 1.0


def test_fgsm_pre_clamp_perturbation_components():
    model, _ = toy_mse_model()
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(0.3, 0.7, size=(8, 4)))
    eps = 0.1
    out = atk.fgsm(model, x, rng.integers(0, 3, size=8), eps)
    delta = out.data - x.data
    # interior points cannot clamp, so every component is in {-eps, 0, +eps}
    ok = np.isclose(np.abs(delta), eps, atol=1e-15) | (delta == 0.0)
    assert np.all(ok)


def test_pgd_one_step_equals_fgsm_bitwise():
    model, _ = toy_mse_model(seed=3)
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(0.0, 1.0, size=(16, 4)))
    labels = rng.integers(0, 3, size=16)
    spec = AttackSpec(family="pgd", epsilon=0.25, step=0.25, iters=1,
                      restarts=1, random_start=False, seed=0)
    a = atk.pgd(model, x, labels, spec)
    b = atk.fgsm(model, x, labels, 0.25)
    assert np.array_equal(a.data, b.data)


def test_pgd_linf_containment_thousand_runs():
    model, _ = toy_mse_model(seed=1)
    worst = 0.0
    for case in range(1000):
        rng = np.random.default_rng(10_000 + case)
        x = Tensor(rng.uniform(0.0, 1.0, size=(1, 4)))
        eps = float(rng.uniform(0.01, 0.5))
        spec = AttackSpec(family="pgd", epsilon=eps, iters=3, restarts=2,
                          random_start=True, seed=case)
        out = atk.pgd(model, x, [int(rng.integers(0, 3))], spec)
        worst = max(worst, float(np.max(np.abs(out.data - x.data))) - eps)
        assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)
    assert worst <= EPS_SLACK


def test_fgsm_containment_thousand_runs():
    model = linear_model(np.random.default_rng(2).normal(size=(6, 4)))
    for case in range(1000):
        rng = np.random.default_rng(50_000 + case)
        x = Tensor(rng.uniform(0.0, 1.0, size=(1, 6)))
        eps = float(rng.uniform(0.0, 0.5))
        out = atk.fgsm(model, x, [int(rng.integers(0, 4))], eps)
        assert np.max(np.abs(out.data - x.data)) <= eps + EPS_SLACK
        assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)


def test_pgd_reaches_corner_of_box():
    # one dense row, target far below: the loss is monotone in w.x over the
    # box, so the optimum is the corner x + eps*sign(w)
    cb = generate_codebook(2, 2, beta=1.0, seed=4)
    head = nn.Head("codebook_mse", 2, cb)
    m = nn.Model([nn.dense(3, 2)], head, (3,), seed=0)
    rng = np.random.default_rng(6)
    w = rng.normal(size=(3, 2))
    m.set_weight(0, "w", w)
    m.set_weight(0, "b", np.full(2, 50.0))  # keep s far from every row

    x = Tensor([[0.5, 0.5, 0.5]])
    eps = 0.2
    spec = AttackSpec(family="pgd", epsilon=eps, step=eps / 5, iters=10,
                      restarts=1, random_start=False, seed=0)
    out = atk.pgd(m, x, [0], spec)

    g = nn.input_gradient(m, x, [0]).data
    corner = np.clip(x.data + eps * np.sign(g), 0.0, 1.0)
    assert np.allclose(out.data, corner, atol=1e-12)


def test_fgsm_never_decreases_convex_loss():
    # CE and MSE composed with a purely linear net are convex in x, so the
    # first-order step cannot reduce the loss when no clamping occurs
    rng = np.random.default_rng(8)
    for case in range(50):
        w = rng.normal(size=(5, 3))
        model = linear_model(w)
        x = Tensor(rng.uniform(0.3, 0.7, size=(1, 5)))
        t = [int(rng.integers(0, 3))]
        before = nn.loss(model.head, nn.forward(model, x), t).item()
        out = atk.fgsm(model, x, t, 0.1)
        after = nn.loss(model.head, nn.forward(model, out), t).item()
        assert after >= before - 1e-12


def test_cw_margin_values():
    # construct s with mean-squared distances exactly (1, 5) to the two
    # rows: in the orthonormal row basis with beta=3 and l=2, coordinates
    # (a, b) must satisfy (a-3)^2 + b^2 = 2 and a^2 + (b-3)^2 = 10
    cb = generate_codebook(2, 2, beta=3.0, seed=0)
    head = nn.Head("codebook_mse", 2, cb)
    m = nn.Model([nn.dense(2, 2)], head, (2,), seed=0)
    m.set_weight(0, "w", np.eye(2))
    m.set_weight(0, "b", np.zeros(2))

    a = (26.0 + np.sqrt(44.0)) / 12.0
    b = a - 4.0 / 3.0
    units = cb.unit_rows()
    s = a * units[0] + b * units[1]
    d = np.mean((s - cb.rows) ** 2, axis=1)
    assert abs(d[0] - 1.0) < 1e-12 and abs(d[1] - 5.0) < 1e-12

    # d_t=1, min other=5, kappa=0 -> margin 4
    val = atk.cw_margin(m, Tensor([s]), [0], kappa=0.0)
    assert abs(val - 4.0) < 1e-12

    # d_t=5, min other=1, kappa=2 -> raw -4 clamps exactly to -2
    val = atk.cw_margin(m, Tensor([s]), [1], kappa=2.0)
    assert val == -2.0

    # decision boundary between the two rows -> margin 0
    mid = (cb.rows[0] + cb.rows[1]) / 2.0
    val = atk.cw_margin(m, Tensor([mid]), [0], kappa=0.0)
    assert abs(val) < 1e-12


def test_cw_margin_exact_clamp_branch():
    cb = generate_codebook(3, 4, beta=1.0, seed=2)
    head = nn.Head("codebook_mse", 3, cb)
    m = nn.Model([nn.dense(4, 4)], head, (4,), seed=0)
    m.set_weight(0, "w", np.eye(4))
    m.set_weight(0, "b", np.zeros(4))
    # sitting exactly on row 1 but scored against true class 0: the raw
    # margin is -0.5, and any smaller kappa clamps it to exactly -kappa
    val = atk.cw_margin(m, Tensor([cb.rows[1]]), [0], kappa=0.2)
    assert val == -0.2
    # clamp inactive when kappa exceeds the raw magnitude
    val = atk.cw_margin(m, Tensor([cb.rows[1]]), [0], kappa=100.0)
    assert abs(val - (-0.5)) < 1e-12


def test_cw_requires_codebook_mse_head():
    model = linear_model(np.eye(2))
    with pytest.raises(ContractError):
        atk.cw_margin(model, Tensor([[0.1, 0.2]]), [0])


def test_targeted_pgd_moves_toward_target():
    model, cb = toy_mse_model(seed=7)
    rng = np.random.default_rng(9)
    x = Tensor(rng.uniform(0.2, 0.8, size=(6, 4)))
    labels = np.zeros(6, dtype=int)
    spec = AttackSpec(family="pgd", epsilon=0.3, iters=15, restarts=1,
                      random_start=False, targeted=2, seed=0)
    out = atk.pgd(model, x, labels, spec)
    before = nn.loss(model.head, nn.forward(model, x), [2] * 6).item()
    after = nn.loss(model.head, nn.forward(model, out), [2] * 6).item()
    assert after < before


def test_targeted_margin_rejected():
    with pytest.raises(ContractError):
        AttackSpec(objective="cw-margin", targeted=1)


def test_monotone_epsilon_success():
    model, _ = toy_mse_model(seed=11)
    rng = np.random.default_rng(13)
    x = Tensor(rng.uniform(0.1, 0.9, size=(40, 4)))
    labels = nn.predict(model, x)  # treat current predictions as truth
    rates = []
    for eps in (0.0, 0.05, 0.1, 0.2, 0.4, 1.0):
        spec = AttackSpec(family="pgd", epsilon=eps, iters=10, restarts=1,
                          random_start=True, seed=1)
        adv = atk.pgd(model, x, labels, spec)
        rates.append(1.0 - atk.evaluate_attack(model, x, labels, adv))
    for a, b in zip(rates, rates[1:]):
        assert b >= a - 1e-12


def test_random_search_probe():
    # single pixel, classes split at 0.5: any +eps flip crosses the boundary
    model = linear_model(np.array([[4.0, -4.0]]), b=np.array([-2.0, 2.0]))
    x = Tensor([[0.4]])
    assert nn.predict(model, x)[0] == 1
    found = atk.random_search_probe(model, x, [1], epsilon=0.3, trials=8, seed=0)
    assert found is not None
    assert np.max(np.abs(found.data - x.data)) <= 0.3 + EPS_SLACK
    assert nn.predict(model, found)[0] == 0

    nothing = atk.random_search_probe(model, x, [1], epsilon=0.0, trials=5, seed=0)
    assert nothing is None


def test_evaluate_attack_contracts():
    model, _ = toy_mse_model(seed=15)
    rng = np.random.default_rng(17)
    x = Tensor(rng.uniform(0.0, 1.0, size=(10, 4)))
    labels = nn.predict(model, x)
    clean_acc = atk.evaluate_attack(model, x, labels, x)
    assert clean_acc == 1.0
    with pytest.raises(ContractError):
        atk.evaluate_attack(model, x, labels[:5], x)


def test_attack_spec_json_round_trip():
    spec = AttackSpec(family="pgd", epsilon=0.3, step=0.01, iters=40,
                      restarts=5, random_start=True, objective="cw-margin",
                      kappa=2.0, seed=99)
    back = AttackSpec.from_json(spec.to_json())
    assert back == spec


def test_pgd_deterministic():
    model, _ = toy_mse_model(seed=19)
    rng = np.random.default_rng(21)
    x = Tensor(rng.uniform(0.0, 1.0, size=(5, 4)))
    labels = rng.integers(0, 3, size=5)
    spec = AttackSpec(family="pgd", epsilon=0.2, iters=5, restarts=3,
                      random_start=True, seed=123)
    a = atk.pgd(model, x, labels, spec)
    b = atk.pgd(model, x, labels, spec)
    assert np.array_equal(a.data, b.data)
