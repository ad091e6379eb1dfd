import numpy as np
import pytest
import torch

from interpaug.classifier import (
    BackboneConfig,
    ClassifierCheckpoint,
    ClassifierError,
    ClassifierTrainConfig,
    build_classifier,
    centre_from_logits,
    edge_batch,
    evaluate_classifier,
    predict_centre,
    train_classifier,
)
from interpaug.data import NormConfig, split_patient_level

SMALL = BackboneConfig(widths=(8, 8), strides=(1, 2))


def test_build_shapes_and_target_layer():
    model = build_classifier(2, SMALL, centres=[2, 3])
    assert model.target_layer == "backbone.layer2"
    assert model(torch.zeros(4, 3, 16, 16)).shape == (4, 2)
    with pytest.raises(ClassifierError):
        build_classifier(1)
    with pytest.raises(ClassifierError):
        build_classifier(2, centres=[1, 2, 3])
    with pytest.raises(ClassifierError):
        build_classifier(2, BackboneConfig(arch="vgg"))


def test_centre_from_logits_ties_go_to_lowest_id():
    assert centre_from_logits([0.3, 0.3], [2, 3]) == 2
    assert centre_from_logits([1.0, 1.0, 0.0], [5, 1, 3]) == 1
    assert centre_from_logits([0.1, 0.9], [1, 3]) == 3


def test_predict_centre_checks_size():
    model = build_classifier(2, SMALL)
    model.input_size = (16, 16)
    logits, c = predict_centre(model, np.zeros((16, 16, 3), np.float32))
    assert logits.shape == (2,) and c in (1, 2)
    with pytest.raises(ClassifierError, match="input size"):
        predict_centre(model, np.zeros((20, 16, 3), np.float32))


def test_edge_batch_range(small_ds):
    x = edge_batch(small_ds, small_ds.ids(1)[:3])
    assert x.shape == (3, 3, 32, 32) and 0 <= x.min() and x.max() <= 1
    xi = edge_batch(small_ds, small_ds.ids(1)[:3], norm=NormConfig("imagenet"))
    assert xi.min() < 0


def test_training_learns_and_checkpoint_roundtrips(small_ds, tmp_path):
    split = split_patient_level(small_ds, 1, seed=0)
    torch.manual_seed(0)
    model = build_classifier(2, SMALL, centres=[2, 3])
    ckpt = train_classifier(model, small_ds, split, ClassifierTrainConfig(epochs=12, lr=3e-3, batch_size=8))
    assert ckpt.metadata["split_hash"] == split.hash()
    hist = ckpt.metadata["loss_history"]
    assert hist[-1] < hist[0]
    acc = evaluate_classifier(ckpt.build(), small_ds, split.train)
    assert acc > 0.8

    ckpt.save(tmp_path / "clf")
    back = ClassifierCheckpoint.load(tmp_path / "clf")
    assert back.weights_hash == ckpt.weights_hash
    assert back.centres == [2, 3] and back.split_hash == split.hash()
    x = edge_batch(small_ds, split.val)
    assert torch.equal(back.build()(x), ckpt.build()(x))


def test_checkpoint_detects_corruption(small_ds, tmp_path):
    model = build_classifier(2, SMALL, centres=[2, 3])
    ckpt = ClassifierCheckpoint({k: v.clone() for k, v in model.state_dict().items()}, [2, 3], SMALL, (32, 32))
    ckpt.save(tmp_path / "c")
    state = torch.load(tmp_path / "c.pt")
    state["fc.bias"] += 1
    torch.save(state, tmp_path / "c.pt")
    with pytest.raises(ClassifierError, match="hash"):
        ClassifierCheckpoint.load(tmp_path / "c")


def test_training_guards(small_ds):
    split = split_patient_level(small_ds, 1, seed=0)
    with pytest.raises(ClassifierError, match="differ"):
        train_classifier(build_classifier(2, SMALL, centres=[1, 2]), small_ds, split, ClassifierTrainConfig(epochs=1))
    split.train = [s for s in split.train if small_ds[s].centre == 2]
    with pytest.raises(ClassifierError, match="single centre"):
        train_classifier(build_classifier(2, SMALL, centres=[2, 3]), small_ds, split, ClassifierTrainConfig(epochs=1))
