"""End-to-end smoke tests for the python bindings.

These are deliberately small: the numeric behaviour of every operation is
covered by the C++ test suite, so here we only check that arrays round-trip
the boundary correctly and the advertised surface works.
"""

import numpy as np
import pytest

import mvcnn


def random_image(h, w, seed):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, 3), dtype=np.float32)


def test_combos():
    assert mvcnn.combos() == ["rgb", "rgb+gxgy", "rgb+gxgygm", "rgb+gm"]
    assert [mvcnn.combo_channels(c) for c in mvcnn.combos()] == [3, 5, 6, 4]


def test_stack_views_shapes_and_rgb_passthrough():
    img = random_image(24, 20, seed=1)
    for combo in mvcnn.combos():
        stack = mvcnn.stack_views(img, combo=combo)
        assert stack.shape == (mvcnn.combo_channels(combo), 24, 20)
        assert stack.dtype == np.float32
        assert np.all(stack >= 0.0) and np.all(stack <= 1.0)
        # The first three channels are the image planes, untouched.
        for ch in range(3):
            np.testing.assert_array_equal(stack[ch], img[:, :, ch])


def test_stack_views_constant_image_has_zero_gradient_channels():
    img = np.full((16, 16, 3), 0.37, dtype=np.float32)
    stack = mvcnn.stack_views(img, combo="rgb+gxgygm")
    assert np.all(stack[3:] == 0.0)


def test_stack_views_rejects_unknown_combo():
    with pytest.raises(RuntimeError):
        mvcnn.stack_views(random_image(8, 8, seed=2), combo="rgb+laplacian")


def test_resize_bilinear():
    img = random_image(10, 14, seed=3)
    out = mvcnn.resize_bilinear(img, 20, 28)
    assert out.shape == (20, 28, 3)
    # Corner-aligned resampling keeps the corner pixels exactly.
    np.testing.assert_allclose(out[0, 0], img[0, 0], rtol=0, atol=1e-6)
    np.testing.assert_allclose(out[-1, -1], img[-1, -1], rtol=0, atol=1e-6)


def test_model_predict_and_checkpoint_round_trip(tmp_path):
    model = mvcnn.Model.build(combo="rgb+gm", size=32, classes=3, plan="compact",
                              dropout=0.0, seed=11)
    assert model.combo == "rgb+gm"
    assert model.channels == 4
    assert model.classes == 3
    assert model.input_size == 32
    trainable, total = model.param_counts
    assert 0 < trainable < total

    stack = mvcnn.stack_views(random_image(32, 32, seed=4), combo="rgb+gm")
    probs = model.predict(stack)
    assert probs.shape == (1, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-5)

    path = str(tmp_path / "model.mvck")
    model.save(path)
    reloaded = mvcnn.Model.load(path, size=32)
    np.testing.assert_array_equal(reloaded.predict(stack), probs)

    # Batched evaluation matches single-sample evaluation up to blocked-GEMM
    # summation order.
    batch = np.stack([stack, stack])
    np.testing.assert_allclose(model.predict(batch)[0], probs[0], rtol=0, atol=1e-6)


def test_model_rejects_mismatched_stack():
    model = mvcnn.Model.build(combo="rgb", size=32, classes=2, plan="compact", seed=1)
    with pytest.raises(RuntimeError):
        model.predict(np.zeros((4, 32, 32), dtype=np.float32))


def test_heatmap():
    model = mvcnn.Model.build(combo="rgb+gm", size=32, classes=3, plan="compact",
                              dropout=0.0, seed=7)
    stack = mvcnn.stack_views(random_image(32, 32, seed=5), combo="rgb+gm")
    hm = model.heatmap(stack)
    assert hm["layer"] == "conv5"  # last conv stage of the compact plan
    assert 0 <= hm["target"] < 3
    assert hm["upsampled"].shape == (32, 32)
    assert np.all(hm["raw"] >= 0.0)
    assert np.all(hm["upsampled"] >= 0.0) and np.all(hm["upsampled"] <= 1.0)
    # Explicit target and stage selection take effect.
    hm1 = model.heatmap(stack, target=1, layer="conv3")
    assert hm1["target"] == 1 and hm1["layer"] == "conv3"


def test_roc_auc():
    assert mvcnn.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert mvcnn.roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == pytest.approx(0.5)
