import numpy as np
import pytest

import oracles
from microdualnet import tensor as T
from microdualnet.backbone import (Backbone, EntityRefine, SpatialEntityModule, assemble_entity_tensor, entity_refine,
                                   roi_align, shift_partition, temporal_shift)
from microdualnet.pose import EntityBox
from microdualnet.tensor import Tensor


def test_shift_partition_floor():
    assert shift_partition(64, 1 / 8) == (8, 8, 48)
    assert shift_partition(10, 1 / 8) == (1, 1, 8)


def test_zero_shift_is_identity(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    assert temporal_shift(x, 0.0) is x


def test_forward_shift_zero_fills_first_frame():
    x = np.zeros((1, 2, 8))
    x[0, 0, 0], x[0, 1, 0] = 5.0, 7.0
    out = temporal_shift(Tensor(x), 0.125).data
    assert out[0, 0, 0] == 0.0 and out[0, 1, 0] == 5.0


def test_temporal_shift_gradient(rng):
    err = T.grad_check(lambda x: T.sum(temporal_shift(x, 0.25) * Tensor(np.arange(48.0).reshape(2, 3, 8))),
                       rng.normal(size=(2, 3, 8)), eps=1e-5)
    assert err < 1e-6


def test_backbone_shapes_and_determinism(rng):
    bb = Backbone((4, 8, 8, 16), rng=np.random.default_rng(0))
    frames = Tensor(rng.uniform(size=(2, 3, 32, 32, 3)))
    maps, f = bb(frames)
    assert maps.shape == (2, 3, 4, 4, 16) and f.shape == (2, 16)
    maps2, f2 = bb(frames)
    assert np.array_equal(f.data, f2.data)


def test_backbone_rejects_indivisible_canvas():
    with pytest.raises(T.ShapeError):
        Backbone((4, 8, 8, 16))(Tensor(np.zeros((1, 1, 30, 32, 3))))


def test_temporal_shift_breaks_frame_order_symmetry(rng):
    bb = Backbone((4, 8, 8, 16), shift_frac=0.25, rng=np.random.default_rng(0))
    clip = rng.uniform(size=(1, 4, 16, 16, 3))
    fwd, _ = bb(Tensor(clip))
    rev, _ = bb(Tensor(clip[:, ::-1].copy()))
    assert not np.allclose(fwd.data[:, ::-1], rev.data)


def test_without_shift_frames_are_independent(rng):
    bb = Backbone((4, 8, 8, 16), shift_frac=0.0, rng=np.random.default_rng(0))
    clip = rng.uniform(size=(1, 3, 16, 16, 3))
    maps, _ = bb(Tensor(clip))
    for t in range(3):
        single, _ = bb(Tensor(clip[:, t:t + 1]))
        assert np.allclose(maps.data[:, t], single.data[:, 0])


def test_roi_align_preserves_constants():
    fm = np.full((6, 6, 3), 2.5)
    out = roi_align(fm, (3.0, 5.0, 30.0, 41.0), 4, 2, 8.0)
    assert np.allclose(out, 2.5)


def test_roi_align_centre_of_two_by_two_map():
    fm = np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]
    assert roi_align(fm, (0, 0, 16, 16), out_size=1, samples_per_bin=1, stride=8.0)[0, 0, 0] == pytest.approx(2.5)


def test_roi_align_matches_dense_bilinear_oracle():
    rng = np.random.default_rng(7)
    fm = rng.normal(size=(8, 8, 5))
    for _ in range(50):
        x0, y0 = rng.uniform(-8, 60, 2)
        box = (x0, y0, x0 + rng.uniform(1, 40), y0 + rng.uniform(1, 40))
        got = roi_align(fm, box, 4, 2, 8.0)
        want = oracles.roi_align(fm, box, 4, 2, 8.0)
        assert np.max(np.abs(got - want)) < 1e-5


def test_invalid_box_yields_zero_patch(rng):
    assert np.all(roi_align(rng.normal(size=(4, 4, 2)), EntityBox.invalid(), 4, 2, 8.0) == 0)


def test_roi_align_gradient_wrt_map(rng):
    err = T.grad_check(lambda fm: T.sum(roi_align(fm, (3.0, 4.0, 20.0, 25.0), 2, 2, 8.0)
                                        * Tensor(np.arange(12.0).reshape(2, 2, 3))),
                       rng.normal(size=(4, 4, 3)), eps=1e-5)
    assert err < 1e-6


def test_refine_zero_patch_isolates_embeddings():
    ref = EntityRefine(3, 4, 8, np.random.default_rng(0))
    z = np.zeros((4, 4, 4))
    a, b = entity_refine(ref, z, 0).data, entity_refine(ref, z, 1).data
    # biases start at zero and gelu(0) = 0, so only the identity embedding remains
    assert np.allclose(a, ref.pos.data[0]) and np.allclose(b, ref.pos.data[1])
    assert not np.allclose(a, b)


def test_refine_identical_patches_differ_across_entities(rng):
    ref = EntityRefine(2, 4, 8, np.random.default_rng(1))
    patch = rng.normal(size=(3, 3, 4))
    assert not np.allclose(entity_refine(ref, patch, 0).data, entity_refine(ref, patch, 1).data)


@pytest.mark.parametrize("p", [2, 4, 7])
def test_refine_output_length_is_model_dim(p, rng):
    ref = EntityRefine(2, 4, 8, np.random.default_rng(1))
    assert entity_refine(ref, rng.normal(size=(p, p, 4)), 1).shape == (8,)


def _sem_and_maps(rng, k=3):
    sem = SpatialEntityModule(k, 4, 8, np.random.default_rng(0))
    maps = Tensor(rng.normal(size=(1, 2, 4, 4, 4)))
    return sem, maps


def test_all_invalid_boxes_give_zeros(rng):
    sem, maps = _sem_and_maps(rng)
    grid = [[[EntityBox.invalid()] * 3 for _ in range(2)]]
    ent = assemble_entity_tensor(sem, maps, grid)
    assert np.all(ent.X.data == 0) and not ent.mask.any()


def test_mask_counts_valid_boxes(rng):
    sem, maps = _sem_and_maps(rng)
    good = EntityBox(2, 2, 20, 20, True, 0.9, "computed")
    grid = [[[good, EntityBox.invalid(), good], [EntityBox.invalid()] * 3]]
    assert assemble_entity_tensor(sem, maps, grid).mask.sum() == 2


def test_entity_permutation_permutes_k_axis(rng):
    sem, maps = _sem_and_maps(rng)
    boxes = rng.uniform(0, 16, size=(1, 2, 3, 4))
    boxes[..., 2:] += boxes[..., :2] + 2
    mask, conf = np.ones((1, 2, 3), bool), np.ones((1, 2, 3))
    perm = [2, 0, 1]
    base = sem(maps, boxes, mask, conf).X.data
    sem.refine.dw_weight.data = sem.refine.dw_weight.data[perm]
    sem.refine.dw_bias.data = sem.refine.dw_bias.data[perm]
    sem.refine.pw_weight.data = sem.refine.pw_weight.data[perm]
    sem.refine.pw_bias.data = sem.refine.pw_bias.data[perm]
    sem.refine.pos.data = sem.refine.pos.data[perm]
    permuted = sem(maps, boxes[:, :, perm], mask, conf).X.data
    assert np.allclose(permuted, base[:, :, perm])
