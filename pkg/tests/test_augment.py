import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentspoof.augment import (
    KINDS,
    additive_noise,
    affine,
    augment_batch,
    batch_mixup,
    linear_extrap,
    linear_interp,
    nearest_spoof_prototype,
    op_vjp,
    write_provenance,
)
from latentspoof.core_math import ConfigurationError, DomainError, RngStream
from latentspoof.gradcheck import numeric_grad, rel_error
from latentspoof.losses import BONAFIDE, SPOOF, PrototypeBank

from conftest import unit


def bank2d(spoof=((0.0, 1.0),), bonafide=(0.0, 1.0)):
    return PrototypeBank(np.array(bonafide), np.array(spoof))


def random_bank(r, d, K):
    return PrototypeBank(unit(r.standard_normal(d)), unit(r.standard_normal((K, d))))


def test_operator_examples():
    out, _ = additive_noise([[1.0, 0.0]], beta=0.5, noise=[[0.0, 1.0]])
    np.testing.assert_array_equal(out, [[1.0, 0.5]])
    out, _ = affine([[2.0, -2.0]], a=1.1)
    np.testing.assert_allclose(out, [[2.2, -2.2]], atol=1e-15)
    out, _ = batch_mixup([[1.0, 0.0], [0.0, 1.0]], alpha=0.25, perm=[1, 0])
    np.testing.assert_array_equal(out[0], [0.25, 0.75])
    out, _ = linear_interp([[2.0, 0.0]], bank2d(bonafide=(0.0, 1.0)), lam=0.5)
    np.testing.assert_array_equal(out, [[1.0, 1.0]])
    out, _ = linear_extrap([[2.0, 0.0]], bank2d(spoof=((0.0, 1.0),)), lam=0.1)
    np.testing.assert_allclose(out, [[2.2, -0.2]], atol=1e-15)


def test_identity_endpoints_bit_exact():
    r = np.random.default_rng(0)
    zs = r.standard_normal((7, 5))
    bank = random_bank(r, 5, 3)
    assert np.array_equal(additive_noise(zs, RngStream(0, "a"), beta=0.0)[0], zs)
    assert np.array_equal(affine(zs, a=1.0, b=0.0)[0], zs)
    assert np.array_equal(batch_mixup(zs, RngStream(0, "a"), alpha=1.0)[0], zs)
    assert np.array_equal(linear_interp(zs, bank, lam=0.0)[0], zs)
    assert np.array_equal(linear_extrap(zs, bank, lam=0.0)[0], zs)


def test_partner_endpoint_and_fixed_point():
    zs = np.arange(6.0).reshape(3, 2) + 1
    perm = np.array([2, 1, 0])
    out, _ = batch_mixup(zs, alpha=0.0, perm=perm)
    np.testing.assert_array_equal(out, zs[perm])
    out, _ = batch_mixup(zs, alpha=0.3, perm=perm)
    np.testing.assert_allclose(out[1], zs[1], atol=1e-15)  # pi(1) = 1 mixes with itself


def test_li_endpoint_lands_on_scaled_prototype():
    r = np.random.default_rng(1)
    zs = r.standard_normal((50, 6))
    bank = random_bank(r, 6, 2)
    out, _ = linear_interp(zs, bank, lam=1.0)
    norms = np.linalg.norm(zs, axis=1)
    np.testing.assert_allclose(out, norms[:, None] * bank.bonafide, atol=1e-12)
    assert np.max(np.abs(np.linalg.norm(out, axis=1) - norms)) < 1e-9


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.1))
def test_li_chord(seed, lam):
    r = np.random.default_rng(seed)
    z = r.standard_normal((1, 4))
    bank = random_bank(r, 4, 1)
    out, _ = linear_interp(z, bank, lam=lam)
    target = np.linalg.norm(z) * bank.bonafide
    assert abs(np.linalg.norm(out - z) - lam * np.linalg.norm(target - z)) < 1e-12


def test_an_second_moment():
    zs = np.zeros((10_000, 3))
    out, _ = additive_noise(zs, RngStream(3, "aug"))
    assert abs(np.mean(np.sum(out**2, axis=1)) - 3.0) < 0.05 * 3.0


def test_affine_preserves_direction():
    zs = np.random.default_rng(2).standard_normal((30, 4))
    out, _ = affine(zs, RngStream(0, "aug"))
    cos = np.sum(out * zs, axis=1) / (np.linalg.norm(out, axis=1) * np.linalg.norm(zs, axis=1))
    assert np.max(np.abs(cos - 1.0)) < 1e-12


def test_nearest_prototype():
    assert nearest_spoof_prototype([0.3, -2.0], bank2d(spoof=((1.0, 0.0),))) == 0
    two = bank2d(spoof=((1.0, 0.0), (0.0, 1.0)))
    assert nearest_spoof_prototype([0.9, 0.1], two) == 0
    assert nearest_spoof_prototype([1.0, 1.0], two) == 0
    with pytest.raises(DomainError):
        nearest_spoof_prototype([0.0, 0.0], two)


def test_le_collinear_is_identity():
    bank = bank2d(spoof=(unit([1.0, 2.0]),))
    z = np.array([[2.0, 4.0]])
    out, _ = linear_extrap(z, bank, lam=0.07)
    np.testing.assert_allclose(out, z, atol=1e-14)


def test_zero_norm_rows_rejected():
    bank = bank2d()
    for op in (linear_interp, linear_extrap):
        with pytest.raises(DomainError):
            op([[1.0, 0.0], [0.0, 0.0]], bank, lam=0.05)


@pytest.mark.parametrize("kind", KINDS)
def test_vjp_matches_fd(kind):
    r = np.random.default_rng(7)
    zs = r.standard_normal((4, 5))
    bank = random_bank(r, 5, 3)
    _, coeffs = {
        "AN": lambda: additive_noise(zs, RngStream(1, "a")),
        "AT": lambda: affine(zs, RngStream(1, "a")),
        "BM": lambda: batch_mixup(zs, RngStream(1, "a")),
        "LI": lambda: linear_interp(zs, bank, RngStream(1, "a")),
        "LE": lambda: linear_extrap(zs, bank, RngStream(1, "a")),
    }[kind]()
    noise = r.standard_normal(zs.shape) if kind == "AN" else None
    if kind == "AN":
        coeffs = {"beta": coeffs["beta"]}
    probe = r.standard_normal(zs.shape)

    def forward():
        if kind == "AN":
            return additive_noise(zs, beta=coeffs["beta"], noise=noise)[0]
        if kind == "AT":
            return affine(zs, a=coeffs["a"])[0]
        if kind == "BM":
            return batch_mixup(zs, alpha=coeffs["alpha"], perm=coeffs["perm"])[0]
        if kind == "LI":
            return linear_interp(zs, bank, lam=coeffs["lam"])[0]
        # nearest index frozen along with the coefficient
        cn = bank.spoof[coeffs["nearest"]]
        return zs + coeffs["lam"][:, None] * (zs - np.linalg.norm(zs, axis=1)[:, None] * cn)

    analytic = op_vjp(kind, zs.copy(), coeffs, bank, probe)
    numeric = numeric_grad(lambda: float(np.sum(forward() * probe)), zs, 1e-6)
    assert rel_error(analytic, numeric) < 1e-6


def test_counting_and_labels():
    Z = np.random.default_rng(0).standard_normal((5, 3))
    y = np.array([BONAFIDE, SPOOF, BONAFIDE, SPOOF, SPOOF])
    fam = np.array(["bonafide", "A1", "bonafide", "A2", "A1"])
    ab = augment_batch(Z, y, "AN", rng=RngStream(0, "aug"), families=fam)
    assert ab.embeddings.shape == (8, 3)
    assert ab.labels[5:].tolist() == [SPOOF] * 3
    assert ab.families[5:].tolist() == ["A1", "A2", "A1"]
    assert [p.source for p in ab.provenance] == [1, 3, 4]


def test_no_spoof_rows_and_no_kind():
    Z = np.ones((3, 2))
    for kind in ("AN", None):
        ab = augment_batch(Z, np.full(3, BONAFIDE), kind, rng=RngStream(0, "aug"))
        assert np.array_equal(ab.embeddings, Z) and not ab.provenance


@pytest.mark.parametrize("kind", ["LI", "LE", "ALL"])
def test_missing_bank(kind):
    with pytest.raises(ConfigurationError):
        augment_batch(np.ones((2, 2)), [SPOOF, SPOOF], kind, rng=RngStream(0, "aug"))


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        augment_batch(np.ones((2, 2)), [SPOOF, SPOOF], "XX", rng=RngStream(0, "aug"))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([*KINDS, "ALL"]), st.booleans())
def test_bonafide_rows_untouched(seed, kind, per_row):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 12))
    Z = r.standard_normal((n, 4))
    y = r.integers(0, 2, n)
    bank = random_bank(r, 4, 3)
    ab = augment_batch(Z, y, kind, bank, RngStream(seed, "aug"), per_row=per_row)
    assert np.array_equal(ab.embeddings[:n], Z)
    assert all(y[p.source] == SPOOF for p in ab.provenance)
    assert len(ab.provenance) == int(np.sum(y == SPOOF))


def test_all_selects_kinds_uniformly():
    rng = RngStream(11, "aug")
    bank = random_bank(np.random.default_rng(0), 3, 2)
    Z = np.random.default_rng(1).standard_normal((2, 3))
    counts = dict.fromkeys(KINDS, 0)
    for _ in range(10_000):
        ab = augment_batch(Z, [SPOOF, SPOOF], "ALL", bank, rng)
        counts[ab.provenance[0].kind] += 1
    for k in KINDS:
        assert abs(counts[k] / 10_000 - 0.2) < 0.02, counts


def test_deterministic_with_provenance(tmp_path):
    r = np.random.default_rng(5)
    Z, y = r.standard_normal((9, 4)), r.integers(0, 2, 9)
    bank = random_bank(r, 4, 3)
    a = augment_batch(Z, y, "ALL", bank, RngStream(3, "aug"), per_row=True)
    b = augment_batch(Z, y, "ALL", bank, RngStream(3, "aug"), per_row=True)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert a.provenance_lines() == b.provenance_lines()
    write_provenance(a, tmp_path / "prov.txt")
    assert (tmp_path / "prov.txt").read_text().splitlines() == a.provenance_lines()


def test_batch_backward_scatter_adds():
    r = np.random.default_rng(9)
    Z, y = r.standard_normal((6, 3)), np.array([0, 1, 0, 0, 1, 0])
    bank = random_bank(r, 3, 2)
    ab = augment_batch(Z, y, "BM", bank, RngStream(0, "aug"))
    probe = r.standard_normal(ab.embeddings.shape)
    coeffs = ab._ops[0][3]

    def f():
        return float(np.sum(augment_again(Z) * probe))

    def augment_again(Zv):
        src = np.flatnonzero(y == SPOOF)
        aug, _ = batch_mixup(Zv[src], alpha=coeffs["alpha"], perm=coeffs["perm"])
        return np.concatenate([Zv, aug])

    assert rel_error(ab.backward(probe), numeric_grad(f, Z, 1e-6)) < 1e-6
