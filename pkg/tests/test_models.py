import numpy as np
import pytest

from eprc import autodiff as ad
from eprc.models import (GroupSpec, ModelSpec, ShapeSpec, Slot, build_lenet300, build_mlp, build_model,
                         build_small_conv, init_parameters, predict)


def test_lenet300_counts():
    spec = build_lenet300()
    assert spec.num_parameters == 266_610
    assert spec.baseline_bytes == 1_066_440
    assert round(spec.baseline_bytes / 1e6, 2) == 1.07 or round(spec.baseline_bytes / 2**20, 2) == 1.02
    assert [g.name for g in spec.groups] == ["dense", "classifier", "bias"]
    assert spec.group("dense").slots == ("fc1.w", "fc2.w")
    assert all(g.ell == 1 for g in spec.groups)


def test_lenet300_overrides():
    spec = build_lenet300(ell_overrides={"dense": 4}, decoder_overrides={"dense": "affine"})
    assert spec.group("dense").ell == 4
    with pytest.raises(ValueError):
        build_lenet300(ell_overrides={"dense": 7}, decoder_overrides={"dense": "affine"})
    with pytest.raises(ValueError, match="scalar"):
        build_lenet300(ell_overrides={"dense": 4})


@pytest.mark.parametrize("ell", [1, 5, 25])
def test_small_conv_groups_and_rows(ell):
    spec = build_small_conv(ell, "dft" if ell > 1 else None)
    assert len(spec.groups) == 4
    g = spec.group("conv")
    assert g.ell == ell
    for s in g.slots:
        h, w, i, o = spec.slot(s).shape.dims
        assert spec.slot(s).shape.size // ell == (i * o if ell == 25 else h * w * i * o // ell)


def test_small_conv_invalid_ell():
    with pytest.raises(ValueError):
        build_small_conv(3)
    with pytest.raises(ValueError):
        build_small_conv(0)


def test_small_conv_full_size():
    assert build_small_conv(full=True).slot("conv2.w").shape.dims == (5, 5, 20, 50)


def test_groups_partition_slots():
    for spec in (build_lenet300(), build_small_conv(), build_mlp((8, 8))):
        owned = [s for g in spec.groups for s in g.slots]
        assert sorted(owned) == sorted(s.name for s in spec.slots)
        assert len(owned) == len(set(owned))
    slots = (Slot("a", ShapeSpec("bias", (2,))), Slot("b", ShapeSpec("bias", (2,))))
    with pytest.raises(ValueError, match="without a group"):
        ModelSpec("x", (2,), (), slots, (GroupSpec("g", ("a",)),))
    with pytest.raises(ValueError, match="groups"):
        ModelSpec("x", (2,), (), slots, (GroupSpec("g", ("a", "b")), GroupSpec("h", ("b",))))


def test_shape_spec_validation():
    with pytest.raises(ValueError):
        ShapeSpec("conv", (5, 5, 0, 2))
    with pytest.raises(ValueError):
        ShapeSpec("dense", (3,))


def test_zero_parameters_give_constant_logits(rng):
    for spec in (build_lenet300(), build_small_conv()):
        params = {s.name: np.zeros(s.shape.dims, np.float32) for s in spec.slots}
        logits = predict(spec, params, rng.random((4, 28, 28))).data
        assert np.all(logits == logits[0])


def test_permuting_classifier_columns_permutes_logits(rng):
    spec = build_lenet300()
    params = init_parameters(spec, seed=0)
    params["fc3.b"] = rng.normal(size=10).astype(np.float32)
    x = rng.random((5, 784))
    base = predict(spec, params, x).data
    perm = rng.permutation(10)
    swapped = dict(params, **{"fc3.w": params["fc3.w"][:, perm], "fc3.b": params["fc3.b"][perm]})
    np.testing.assert_allclose(predict(spec, swapped, x).data, base[:, perm], rtol=1e-6, atol=1e-6)


def test_single_layer_passthrough():
    spec = build_mlp((), input_dim=3, num_classes=3)
    params = {"fc1.w": np.eye(3, dtype=np.float32), "fc1.b": np.zeros(3, np.float32)}
    x = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 4.0]], np.float32)
    np.testing.assert_array_equal(predict(spec, params, x).data, x)


def test_predict_shape_errors(rng):
    spec = build_lenet300()
    params = init_parameters(spec)
    with pytest.raises(ad.ShapeError):
        predict(spec, params, rng.random((2, 10)))
    bad = dict(params, **{"fc2.w": np.zeros((300, 99), np.float32)})
    with pytest.raises(ad.ShapeError):
        predict(spec, bad, rng.random((2, 784)))


def test_small_conv_forward_shape(rng):
    spec = build_small_conv()
    out = predict(spec, init_parameters(spec), rng.random((3, 28, 28)))
    assert out.shape == (3, 10)


def test_build_by_name():
    assert build_model("lenet300").name == "lenet300"
    assert build_model("mlp", hidden=[4]).slot("fc1.w").shape.dims == (784, 4)
    with pytest.raises(ValueError, match="unknown architecture"):
        build_model("vgg16")


def test_spec_is_immutable():
    spec = build_lenet300()
    with pytest.raises(Exception):
        spec.name = "x"
    other = spec.configure("dense", decoder="affine")
    assert spec.group("dense").decoder == "scalar" and other.group("dense").decoder == "affine"
