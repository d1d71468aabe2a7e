import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_model
from polarlrp.inference import forward
from polarlrp.modelio import (BoundsError, DtypeError, LayerSpec, ManifestParseError, ModelBuilder,
                              ModelShapeError, NetworkModel, StructuralError, fold_batch_norm, load_model,
                              load_tensors, manifest_from_model, model_from_manifest, save_model,
                              save_tensors)
from polarlrp.tensor import ShapeError


def tiny_model():
    return ModelBuilder((1, 1, 2)).flatten().dense([[2.0, -1.0]], [0.25]).sigmoid().build({"iteration": "7"})


def write(tmp_path, model):
    save_model(model, tmp_path / "m.json", tmp_path / "m.bin")
    return tmp_path / "m.json", tmp_path / "m.bin"


def test_manifest_layout(tmp_path):
    manifest, blob = write(tmp_path, tiny_model())
    doc = json.loads(manifest.read_text())
    assert doc["version"] == 1
    assert doc["input_shape"] == [1, 1, 2]
    assert [l["kind"] for l in doc["layers"]] == ["flatten", "dense", "sigmoid"]
    assert doc["layers"][1]["in_features"] == 2
    assert doc["metadata"] == {"iteration": "7"}
    offsets = [(t["offset"], t["length"]) for t in doc["tensors"]]
    assert offsets == [(0, 8), (8, 4)]
    assert blob.read_bytes() == np.array([2.0, -1.0, 0.25], dtype="<f4").tobytes()


def test_round_trip_quantizes_to_float32(tmp_path):
    rng = np.random.default_rng(0)
    model = random_model(rng, bias=True)
    back = load_model(*write(tmp_path, model))
    for name, t in model.parameters.items():
        np.testing.assert_array_equal(back.parameters[name].array, t.array.astype(np.float32))
    assert back.iteration is None


def test_iteration_from_metadata(tmp_path):
    assert load_model(*write(tmp_path, tiny_model())).iteration == "7"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_manifest_round_trip_in_memory(seed):
    model = random_model(np.random.default_rng(seed), bias=bool(seed % 2), batch_norm=True)
    doc, blob = manifest_from_model(model)
    back = model_from_manifest(json.loads(json.dumps(doc)), blob, fold=False)
    assert [(l.kind, l.hyper) for l in back.layers] == [(l.kind, l.hyper) for l in model.layers]
    assert manifest_from_model(back) == (doc, blob)


def test_missing_bias_behaves_as_zero():
    with_bias = ModelBuilder((1, 1, 2)).flatten().dense([[2.0, -1.0]], [0.0]).sigmoid().build()
    without = ModelBuilder((1, 1, 2)).flatten().dense([[2.0, -1.0]]).sigmoid().build()
    x = np.array([[[0.3, 0.9]]])
    assert forward(with_bias, x).final_output == forward(without, x).final_output
    assert without.layer_params(1)["bias"].tolist() == [0.0]


def test_fold_batch_norm_by_hand():
    w = np.ones((1, 1, 1, 1))
    model = (ModelBuilder((1, 2, 2)).conv2d(w, [1.0]).batch_norm([2.0], [0.5], [3.0], [4.0], epsilon=0.0)
             .flatten().dense(np.ones((1, 4))).sigmoid().build())
    folded = fold_batch_norm(model)
    conv = folded.layer_params(0)
    # scale = 2 / sqrt(4) = 1; bias = (1 - 3) * 1 + 0.5
    assert conv["weight"].ravel().tolist() == [1.0]
    assert conv["bias"].tolist() == [-1.5]
    assert [l.kind for l in folded.layers] == ["conv2d", "flatten", "dense", "sigmoid"]


def test_fold_preserves_forward():
    rng = np.random.default_rng(3)
    for _ in range(20):
        model = random_model(rng, bias=bool(rng.integers(2)), batch_norm=True)
        x = rng.uniform(size=model.input_shape)
        assert abs(forward(model, x).pre_sigmoid - forward(fold_batch_norm(model), x).pre_sigmoid) <= 1e-10


def test_batch_norm_must_follow_conv():
    model = (ModelBuilder((1, 2, 2)).conv2d(np.ones((1, 1, 1, 1))).relu()
             .batch_norm([1.0], [0.0], [0.0], [1.0]).flatten().dense(np.ones((1, 4))).sigmoid().build())
    with pytest.raises(StructuralError):
        fold_batch_norm(model)


def test_rejects_non_discriminator_tail():
    with pytest.raises(StructuralError):
        ModelBuilder((1, 1, 2)).flatten().dense([[1.0, 1.0]]).build()
    with pytest.raises(StructuralError):
        ModelBuilder((1, 1, 2)).flatten().dense([[1.0, 1.0], [1.0, 1.0]]).sigmoid().build()


def test_rejects_shape_chain_mismatch():
    with pytest.raises(ModelShapeError):
        ModelBuilder((1, 1, 3)).flatten().dense([[1.0, 1.0]]).sigmoid().build()
    with pytest.raises(ShapeError):
        ModelBuilder((1, 2, 2)).conv2d(np.ones((1, 1, 3, 3))).flatten().dense([[1.0]]).sigmoid().build()


def test_layer_spec_validation():
    with pytest.raises(StructuralError):
        LayerSpec("gelu")
    with pytest.raises(StructuralError):
        LayerSpec("dense", {"in_features": 2}, {"weight": "w"})
    with pytest.raises(StructuralError):
        LayerSpec("dense", {"in_features": 2, "out_features": 1}, {})
    with pytest.raises(StructuralError):
        LayerSpec("dense", {"in_features": 2.5, "out_features": 1}, {"weight": "w"})
    with pytest.raises(ModelShapeError):
        ModelBuilder((1, 1, 2)).flatten().leaky_relu(1.5).dense([[1.0, 1.0]]).sigmoid().build()


def test_rejects_nonpositive_running_var():
    with pytest.raises(ModelShapeError):
        (ModelBuilder((1, 2, 2)).conv2d(np.ones((1, 1, 1, 1))).batch_norm([1.0], [0.0], [0.0], [0.0])
         .flatten().dense(np.ones((1, 4))).sigmoid().build())


def _edit_manifest(path, fn):
    doc = json.loads(path.read_text())
    fn(doc)
    path.write_text(json.dumps(doc))


def test_truncated_blob_is_bounds_error(tmp_path):
    manifest, blob = write(tmp_path, tiny_model())
    blob.write_bytes(blob.read_bytes()[:-1])
    with pytest.raises(BoundsError):
        load_model(manifest, blob)


def test_wrong_dtype(tmp_path):
    manifest, blob = write(tmp_path, tiny_model())
    _edit_manifest(manifest, lambda d: d["tensors"][0].update(dtype="f64"))
    with pytest.raises(DtypeError):
        load_model(manifest, blob)


def test_length_disagrees_with_shape(tmp_path):
    manifest, blob = write(tmp_path, tiny_model())
    _edit_manifest(manifest, lambda d: d["tensors"][0].update(shape=[1, 1]))
    with pytest.raises(ModelShapeError):
        load_model(manifest, blob)


@pytest.mark.parametrize("text", ["{", "[]", '{"version": 2, "input_shape": [], "layers": []}'])
def test_bad_manifest(tmp_path, text):
    (tmp_path / "m.json").write_text(text)
    (tmp_path / "m.bin").write_bytes(b"")
    with pytest.raises(ManifestParseError):
        load_model(tmp_path / "m.json", tmp_path / "m.bin")


def test_missing_weights_file(tmp_path):
    manifest, blob = write(tmp_path, tiny_model())
    blob.unlink()
    with pytest.raises(FileNotFoundError):
        load_model(manifest, blob)


def test_unrepresentable_value_rejected(tmp_path):
    model = ModelBuilder((1, 1, 2)).flatten().dense([[1e300, 1.0]]).sigmoid().build()
    with pytest.raises(ValueError):
        write(tmp_path, model)
    assert not (tmp_path / "m.json").exists()


def test_tensor_container(tmp_path):
    rel = np.arange(12.0).reshape(3, 2, 2) / 7
    save_tensors({"relevance": rel}, tmp_path / "r.json", tmp_path / "r.bin", {"polarity": "negative"})
    got, meta = load_tensors(tmp_path / "r.json", tmp_path / "r.bin")
    np.testing.assert_array_equal(got["relevance"], rel.astype(np.float32))
    assert meta == {"polarity": "negative"}


def test_model_is_validated_on_construction():
    good = tiny_model()
    with pytest.raises(StructuralError):
        NetworkModel(good.input_shape, good.layers, {}, {})
