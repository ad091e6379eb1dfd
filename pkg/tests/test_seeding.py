import numpy as np
import torch

from interpaug.seeding import sha256_json, state_dict_hash, stream_seed, substream, torch_generator, uniform01


def test_streams_are_named_and_reproducible():
    assert stream_seed(0, "a", 1) == stream_seed(0, "a", 1)
    assert stream_seed(0, "a", 1) != stream_seed(0, "a", 2)
    assert stream_seed(0, "a") != stream_seed(1, "a")
    assert np.array_equal(substream(5, "x").random(4), substream(5, "x").random(4))
    assert torch.equal(torch.rand(3, generator=torch_generator(5, "x")), torch.rand(3, generator=torch_generator(5, "x")))


def test_uniform01_range_and_mean():
    u = np.array([uniform01(3, "m", i) for i in range(20000)])
    assert 0 <= u.min() and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.01


def test_sha256_json_is_key_order_independent():
    assert sha256_json({"a": 1, "b": [1, 2]}) == sha256_json({"b": [1, 2], "a": 1})


def test_state_dict_hash():
    a = {"w": torch.ones(2, 2), "b": torch.zeros(2)}
    b = {"b": torch.zeros(2), "w": torch.ones(2, 2)}
    assert state_dict_hash(a) == state_dict_hash(b)
    b["w"][0, 0] = 2
    assert state_dict_hash(a) != state_dict_hash(b)
    assert state_dict_hash({"w": torch.ones(4)}) != state_dict_hash({"w": torch.ones(2, 2)})
