import math

import numpy as np
import pytest

import oracles
from microdualnet import tensor as T
from microdualnet.objectives import (FusionClassifier, cross_entropy, entity_pool, fuse_classify, mac_losses, mac_term,
                                     mac_total, project_normalize, total_loss)
from microdualnet.tensor import Tensor


def unit(rng, *shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_normalize_classic_triangle():
    assert np.allclose(project_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])


def test_normalize_zero_vector_guarded():
    assert np.all(project_normalize(Tensor(np.zeros(4))).data == 0)


def test_normalize_idempotent(rng):
    once = project_normalize(Tensor(rng.normal(size=(2, 3, 4, 8))))
    assert np.max(np.abs(project_normalize(once).data - once.data)) < 1e-7


def test_single_frame_term_is_zero(rng):
    z = unit(rng, 8)
    assert mac_term(Tensor(z), Tensor(z[None]), 0).item() == 0.0


def test_identical_rows_give_log_t(rng):
    z = unit(rng, 8)
    val = mac_term(Tensor(z), Tensor(np.repeat(z[None], 4, axis=0)), 2).item()
    assert val == pytest.approx(math.log(4), abs=1e-5)


def test_orthogonal_negatives_closed_form():
    rows = np.eye(4)
    val = mac_term(Tensor(rows[0]), Tensor(rows), 0, tau=0.07).item()
    assert val == pytest.approx(1.874623095797487e-06, rel=1e-6)


def test_total_is_zero_without_confidence(rng):
    z = Tensor(unit(rng, 2, 4, 3, 8))
    assert mac_total(z, z, np.zeros((2, 4, 3))).item() == 0.0


def test_uniform_confidence_gives_plain_mean(rng):
    a, b = Tensor(unit(rng, 2, 4, 3, 8)), Tensor(unit(rng, 2, 4, 3, 8))
    plain = mac_losses(a, b).data.mean()
    assert mac_total(a, b, np.full((2, 4, 3), 0.4)).item() == pytest.approx(plain, abs=1e-12)


def test_total_matches_double_loop_oracle(rng):
    a, b = unit(rng, 2, 4, 3, 8), unit(rng, 2, 4, 3, 8)
    conf = rng.uniform(size=(2, 4, 3))
    got = mac_total(Tensor(a), Tensor(b), conf, tau=0.07).item()
    assert abs(got - oracles.mac_total(a, b, conf, 0.07)) < 1e-6


def test_vectorised_terms_match_single_slot_terms(rng):
    a, b = unit(rng, 1, 5, 2, 8), unit(rng, 1, 5, 2, 8)
    terms = mac_losses(Tensor(a), Tensor(b)).data
    for t in range(5):
        for k in range(2):
            assert terms[0, t, k] == pytest.approx(mac_term(Tensor(a[0, t, k]), Tensor(b[0, :, k]), t).item())


def test_mac_term_gradient(rng):
    rows = Tensor(unit(rng, 4, 8))
    assert T.grad_check(lambda z: mac_term(project_normalize(z), rows, 1), unit(rng, 8), eps=1e-5) < 1e-3


def test_symmetric_and_frame_variants_run(rng):
    a, b = Tensor(unit(rng, 1, 3, 2, 8)), Tensor(unit(rng, 1, 3, 2, 8))
    assert mac_losses(a, b, symmetric=True).shape == (1, 3, 2)
    assert mac_losses(a, b, level="frame").shape == (1, 3, 2)
    with pytest.raises(ValueError):
        mac_losses(a, b, level="clip")


def test_pool_single_valid_slot(rng):
    x = rng.normal(size=(1, 2, 3, 4))
    mask = np.zeros((1, 2, 3), bool)
    mask[0, 1, 2] = True
    assert np.allclose(entity_pool(Tensor(x), mask).data[0], x[0, 1, 2])


def test_pool_constant_and_unmasked_mean(rng):
    v = rng.normal(size=4)
    assert np.allclose(entity_pool(Tensor(np.broadcast_to(v, (1, 2, 3, 4)).copy())).data[0], v)
    x = rng.normal(size=(2, 3, 4, 5))
    assert np.allclose(entity_pool(Tensor(x), np.ones((2, 3, 4), bool)).data, x.mean(axis=(1, 2)))


@pytest.mark.parametrize("c", [52, 32])
def test_classifier_output_shape(c, rng):
    clf = FusionClassifier(12, c, np.random.default_rng(0), (16, 8)).eval()
    out = fuse_classify(clf, Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(3, 4))))
    assert out.shape == (3, c)


def test_zero_inputs_give_identical_rows():
    clf = FusionClassifier(12, 5, np.random.default_rng(0), (16, 8)).eval()
    out = fuse_classify(clf, Tensor(np.zeros((3, 8))), Tensor(np.zeros((3, 4)))).data
    assert np.allclose(out, out[0])


def test_gradient_reaches_both_feature_streams(rng):
    clf = FusionClassifier(12, 5, np.random.default_rng(0), (16, 8)).eval()
    f_cnn = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    f_ent = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    T.backward(cross_entropy(fuse_classify(clf, f_cnn, f_ent), [0, 1, 2]))
    assert np.abs(f_cnn.grad).max() > 0 and np.abs(f_ent.grad).max() > 0


def test_uniform_logits_give_log_c():
    assert cross_entropy(Tensor(np.zeros((4, 52))), [0, 5, 9, 51]).item() == pytest.approx(3.9512437185814275,
                                                                                         abs=1e-4)


def test_total_loss_combinations(rng):
    logits = Tensor(rng.normal(size=(3, 4)))
    y = [0, 1, 3]
    ce = cross_entropy(logits, y).item()
    assert total_loss(logits, y, Tensor(2.0), lam=0.0).total == ce
    assert total_loss(logits, y, Tensor(0.0), lam=0.3).total == ce
    assert total_loss(logits, y, Tensor(2.0), lam=0.1).total == pytest.approx(ce + 0.2)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(Tensor(np.zeros((1, 3))), [3])
