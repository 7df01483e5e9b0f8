import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentspoof.core_math import DomainError
from latentspoof.gradcheck import numeric_grad, rel_error
from latentspoof.losses import (
    BONAFIDE,
    SPOOF,
    LossHyper,
    PrototypeBank,
    bank_from_dict,
    bank_to_dict,
    inter_reg,
    intra_reg,
    load_bank,
    lsr_loss,
    margin_cos,
    objective,
    proto_loss,
    renormalize,
    save_bank,
    smoothed_max_cos,
    wce_loss,
)

from conftest import unit

H = LossHyper()


# naive forward oracle, written straight from the definitions
def oracle_smax(C, z, gamma):
    cos = [float(np.dot(c, z) / (np.linalg.norm(c) * np.linalg.norm(z))) for c in C]
    w = [math.exp(gamma * c) for c in cos]
    return sum(wi * ci for wi, ci in zip(w, cos)) / sum(w)


def oracle_proto(z, y, cb, cs, s, m, gamma):
    cos_b = oracle_smax([cb], z, gamma)
    cos_s = oracle_smax(cs, z, gamma)
    ct, co = (cos_b, cos_s) if y == BONAFIDE else (cos_s, cos_b)
    target = math.cos(math.acos(ct) + m)
    return -math.log(math.exp(s * target) / (math.exp(s * target) + math.exp(s * co)))


def random_bank(rng, d, K):
    return PrototypeBank(unit(rng.standard_normal(d)), unit(rng.standard_normal((K, d))))


# -- smoothed max ------------------------------------------------------------------


def test_smax_examples():
    c = np.array([0.6, 0.8])
    assert smoothed_max_cos([c], c) == pytest.approx(1.0, abs=1e-15)
    assert smoothed_max_cos([[1, 0], [0, 1]], [1, 0], 10) == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-15)
    z = np.array([0.3, -1.2, 2.0])
    C = np.tile(unit([1.0, 2.0, 2.0]), (3, 1))
    assert smoothed_max_cos(C, z) == pytest.approx(float(C[0] @ z / np.linalg.norm(z)), abs=1e-15)


def test_smax_zero_z():
    with pytest.raises(DomainError):
        smoothed_max_cos([[1.0, 0.0]], [0.0, 0.0])


def test_smax_matches_oracle(rng):
    for _ in range(50):
        d, K = rng.integers(2, 10), rng.integers(1, 6)
        C, z = rng.standard_normal((K, d)), rng.standard_normal(d)
        assert smoothed_max_cos(C, z, 10) == pytest.approx(oracle_smax(C, z, 10), abs=1e-12)


# -- prototype margin loss -------------------------------------------------------------


def test_proto_examples():
    cb = np.array([1.0, 0.0, 0.0])
    bank = PrototypeBank(cb, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    loss, *_ = proto_loss(cb, BONAFIDE, bank, H)
    assert loss == pytest.approx(math.log1p(math.exp(-32 * math.cos(0.2))), rel=1e-9)
    assert loss == pytest.approx(2.4e-14, rel=0.05)

    # equal cosines to both classes, no margin, unit scale
    bank = PrototypeBank(unit([1.0, 1.0]), np.array([unit([1.0, -1.0])]))
    loss, *_ = proto_loss([1.0, 0.0], SPOOF, bank, LossHyper(s=1, m=0))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_proto_matches_oracle(rng):
    for _ in range(100):
        d, K = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        bank = random_bank(rng, d, K)
        z, y = rng.standard_normal(d), int(rng.integers(0, 2))
        ours, *_ = proto_loss(z, y, bank, H)
        cos_t = oracle_smax([bank.bonafide] if y else bank.spoof, z, H.gamma)
        if math.acos(cos_t) + H.m > math.pi:
            continue  # beyond pi the loss uses the linear continuation
        assert ours == pytest.approx(oracle_proto(z, y, bank.bonafide, bank.spoof, H.s, H.m, H.gamma), rel=1e-9, abs=1e-13)


def test_proto_gradients_fd(rng):
    hyper = LossHyper(s=4.0)  # keeps the softplus away from saturation
    for _ in range(20):
        bank = random_bank(rng, 8, 4)
        z, y = rng.standard_normal(8), int(rng.integers(0, 2))
        _, gz, gb, gs = proto_loss(z, y, bank, hyper)
        cb, cs = bank.bonafide.copy(), bank.spoof.copy()
        f = lambda: proto_loss(z, y, PrototypeBank(cb, cs), hyper)[0]
        assert rel_error(gz, numeric_grad(f, z)) < 1e-5
        assert rel_error(gb, numeric_grad(f, cb)) < 1e-5
        assert rel_error(gs, numeric_grad(f, cs)) < 1e-5


def test_margin_continuation_monotone():
    c = np.linspace(-1, 1, 2001)
    phi, dphi = margin_cos(c, 0.2)
    assert np.all(np.diff(phi) > 0)
    assert np.all(dphi > 0)
    # continuous at the switch point
    cm = math.cos(0.2)
    lo, _ = margin_cos(np.array([-cm - 1e-12, -cm + 1e-12]), 0.2)
    assert abs(lo[0] - lo[1]) < 1e-9


@settings(max_examples=100)
@given(st.floats(-0.99, 0.98), st.floats(1e-3, 0.01), st.integers(0, 1))
def test_proto_monotone_in_target_cosine(c, step, y):
    # K=1 per class in 3-d: the target prototype moves towards z, the other one stays put
    z = np.array([1.0, 0.0, 0.0])
    other = np.array([0.0, 0.0, 1.0])

    def loss_at(cos_t):
        t = np.array([cos_t, math.sqrt(max(1 - cos_t**2, 0.0)), 0.0])
        cb, cs = (t, other) if y == BONAFIDE else (other, t)
        return proto_loss(z, y, PrototypeBank(cb, cs[None]), LossHyper(s=2.0))[0]

    assert loss_at(c + step) < loss_at(c)


# -- regularizers ---------------------------------------------------------------------


def test_intra_examples():
    c = unit([1.0, 2.0])
    assert intra_reg([c, c])[0] == pytest.approx(1.0, abs=1e-15)
    assert intra_reg([c, -c])[0] == pytest.approx(-1.0, abs=1e-15)
    assert intra_reg(np.eye(3))[0] == 0.0
    val, g = intra_reg([c])
    assert val == 0.0 and np.all(g == 0)


def test_inter_examples():
    hyper = LossHyper(delta=0.2)
    cb = np.array([1.0, 0.0, 0.0])
    assert inter_reg([[0, 1, 0], [0, 0, 1]], cb, hyper)[0] == pytest.approx(0.2, abs=1e-15)
    val, gs, gb = inter_reg([[-0.9, math.sqrt(1 - 0.81), 0]], cb, hyper)
    assert val == 0.0 and np.all(gs == 0) and np.all(gb == 0)
    w1 = 1 / (1 + math.exp(-10))
    s1, s2 = [0.5, math.sqrt(0.75), 0], [-0.5, math.sqrt(0.75), 0]
    expected = 0.2 + 0.5 * w1 - 0.5 * (1 - w1)
    assert inter_reg([s1, s2], cb, hyper)[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.69995, abs=1e-5)


@settings(max_examples=200)
@given(st.integers(1, 8), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_intra_bounded(K, d, seed):
    cs = unit(np.random.default_rng(seed).standard_normal((K, d)))
    val, _ = intra_reg(cs)
    assert -1 - 1e-12 <= val <= 1 + 1e-12


@settings(max_examples=200)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0, 0.5))
def test_inter_clamp_is_exact(K, d, seed, delta):
    r = np.random.default_rng(seed)
    cb = unit(r.standard_normal(d))
    # spoof prototypes pushed towards -cb so the hinge is often inactive
    cs = unit(r.standard_normal((K, d)) * 0.3 - cb)
    hyper = LossHyper(delta=delta)
    val, gs, gb = inter_reg(cs, cb, hyper)
    sims = cs @ cb
    w = np.exp(hyper.gamma * (sims - sims.max()))
    if delta + float(w @ sims / w.sum()) < 0:
        assert val == 0.0 and not gs.any() and not gb.any()
    else:
        assert val >= 0


# -- combined objective ------------------------------------------------------------------


def test_lsr_example_sum_of_terms():
    cb = np.array([1.0, 0.0, 0.0, 0.0])
    cs = np.array([[0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
    rep = lsr_loss(cb[None], [BONAFIDE], PrototypeBank(cb, cs), H)
    assert rep.l_intra == 0.0
    assert rep.l_inter == pytest.approx(0.2, abs=1e-15)
    assert rep.total == pytest.approx(0.2, abs=1e-12)
    rep1 = lsr_loss(cb[None], [BONAFIDE], PrototypeBank(cb, cs[:1]), H)
    assert rep1.l_intra == 0.0


def test_lsr_zero_embedding_names_index(rng):
    bank = random_bank(rng, 3, 2)
    Z = rng.standard_normal((4, 3))
    Z[2] = 0
    with pytest.raises(DomainError, match="index 2"):
        lsr_loss(Z, [0, 1, 0, 1], bank, H)


def test_objective_gradients_fd(rng):
    hyper = LossHyper(s=4.0)
    for _ in range(10):
        d, K = 5, 3
        bank = random_bank(rng, d, K)
        Z = rng.standard_normal((6, d))
        y = rng.integers(0, 2, 6)
        head = {"W": rng.standard_normal((2, d)), "b": rng.standard_normal(2)}
        rep = objective(Z, y, bank, hyper, head, "wce+lsr")
        cb, cs = bank.bonafide.copy(), bank.spoof.copy()
        f = lambda: objective(Z, y, PrototypeBank(cb, cs), hyper, head, "wce+lsr").total
        assert rel_error(rep.grad_embeddings, numeric_grad(f, Z)) < 1e-5
        assert rel_error(rep.grad_bonafide, numeric_grad(f, cb)) < 1e-5
        assert rel_error(rep.grad_spoof, numeric_grad(f, cs)) < 1e-5
        assert rel_error(rep.grad_head["W"], numeric_grad(f, head["W"])) < 1e-5
        assert rel_error(rep.grad_head["b"], numeric_grad(f, head["b"])) < 1e-5


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 10.0]))
def test_terms_scale_invariant(seed, alpha):
    r = np.random.default_rng(seed)
    bank = random_bank(r, 4, 3)
    Z, y = r.standard_normal((5, 4)), r.integers(0, 2, 5)
    a = lsr_loss(Z, y, bank, H)
    b = lsr_loss(alpha * Z, y, bank, H)
    for k, v in a.terms().items():
        assert abs(b.terms()[k] - v) < 1e-9


@pytest.mark.parametrize("mode", ["wce", "lsr", "wce+lsr", "minus-intra", "minus-inter", "minus-both"])
def test_total_is_sum_of_enabled_terms(mode, rng):
    bank = random_bank(rng, 4, 3)
    Z, y = rng.standard_normal((5, 4)), rng.integers(0, 2, 5)
    head = {"W": rng.standard_normal((2, 4)), "b": np.zeros(2)}
    rep = objective(Z, y, bank, H, head, mode)
    assert rep.total == rep.l_proto + rep.l_intra + rep.l_inter + rep.l_wce
    if mode == "wce":
        assert rep.l_proto == rep.l_intra == rep.l_inter == 0.0
        assert not rep.grad_spoof.any() and not rep.grad_bonafide.any()
    if mode in ("minus-intra", "minus-both"):
        assert rep.l_intra == 0.0
    if mode in ("minus-inter", "minus-both"):
        assert rep.l_inter == 0.0


# -- weighted cross entropy ------------------------------------------------------------


def test_wce_examples():
    assert wce_loss([[0.0, 0.0]], [BONAFIDE])[0] == pytest.approx(0.9 * math.log(2), abs=1e-15)
    assert wce_loss([[10.0, -10.0]], [BONAFIDE])[0] == pytest.approx(0.9 * math.log1p(math.exp(-20)), rel=1e-9)


def test_wce_equal_weights_is_cross_entropy(rng):
    L = rng.standard_normal((3, 2))
    y = np.array([BONAFIDE, SPOOF, SPOOF])
    col = np.where(y == BONAFIDE, 0, 1)
    p = np.exp(L) / np.exp(L).sum(axis=1, keepdims=True)
    ce = -np.mean(np.log(p[np.arange(3), col]))
    assert wce_loss(L, y, (1.0, 1.0))[0] == pytest.approx(ce, abs=1e-14)


# -- bank housekeeping ---------------------------------------------------------------------


def test_renormalize():
    b = renormalize(PrototypeBank([3.0, 4.0], [[3.0, 4.0]]))
    np.testing.assert_allclose(b.bonafide, [0.6, 0.8], atol=1e-15)
    again = renormalize(b)
    assert np.max(np.abs(again.spoof - b.spoof)) <= 1e-15
    with pytest.raises(RuntimeError):
        renormalize(PrototypeBank([1.0, 0.0], [[0.0, 0.0]]))


def test_hyper_validation():
    for bad in (dict(s=0), dict(m=2.0), dict(delta=-1), dict(gamma=0), dict(wce_weights=(0.9, 0.0))):
        with pytest.raises(DomainError):
            LossHyper(**bad)


def test_bank_roundtrip(tmp_path, rng):
    bank = random_bank(rng, 5, 3)
    save_bank(bank, tmp_path / "bank.json")
    back = load_bank(tmp_path / "bank.json")
    np.testing.assert_array_equal(back.spoof, bank.spoof)
    np.testing.assert_array_equal(back.bonafide, bank.bonafide)
    d = bank_to_dict(bank)
    d["bonafide"] = [2 * v for v in d["bonafide"]]
    with pytest.raises(DomainError):
        bank_from_dict(d)
