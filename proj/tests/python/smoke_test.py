"""Python smoke tests for the bound core operations."""

import math
import os
import sys
import tempfile

import numpy as np

import xtra


def test_block_causal_mask_matches_numpy_oracle():
    for gh, gw, k in [(4, 4, 1), (4, 4, 2), (6, 6, 3), (2, 4, 2)]:
        mask = xtra.block_causal_mask(gh, gw, k)
        assert mask.shape == (gh * gw, gh * gw)
        rank = np.zeros(gh * gw, dtype=np.int64)
        for t in range(gh * gw):
            r, c = divmod(t, gw)
            rank[t] = (r // k) * (gw // k) + (c // k)
        want = rank[None, :] <= rank[:, None]
        assert np.array_equal(mask, want)
    # k=1 raster is lower-triangular
    tri = xtra.block_causal_mask(3, 3, 1)
    assert np.array_equal(tri, np.tril(np.ones((9, 9), dtype=bool)))


def test_block_order_and_token_map():
    assert xtra.make_block_order(4) == [0, 1, 2, 3]
    perm = xtra.make_block_order(16, "random", 11)
    assert sorted(perm) == list(range(16))
    assert perm == xtra.make_block_order(16, "random", 11)
    assert xtra.token_to_block(4, 4, 2, 2) == 1


def test_numeric_kernels():
    assert abs(xtra.gelu(np.array([1.0]))[0] - 0.8412) < 1.5e-3
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    assert np.allclose(xtra.matmul(a, b), a @ b)

    logits = np.zeros((1, 4))
    mask = np.array([[True, False, True, False]])
    probs = xtra.masked_softmax(logits, mask)
    assert np.allclose(probs, [[0.5, 0.0, 0.5, 0.0]])
    assert probs[0, 1] == 0.0

    x = np.random.default_rng(0).normal(size=(3, 8))
    y = xtra.layer_norm(x, np.ones(8), np.zeros(8))
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-6)


def test_normalize_and_loss():
    rng = np.random.default_rng(1)
    raw = rng.normal(size=(2, 3, 16))
    values, mean, var = xtra.normalize_blocks(raw)
    assert np.allclose(values.mean(axis=-1), 0.0, atol=1e-5)
    assert np.allclose(values.var(axis=-1), 1.0, atol=1e-3)
    assert np.allclose(mean, raw.mean(axis=-1))

    perfect = values[:, 1:, None, :]
    assert xtra.reconstruction_loss(perfect, raw) == 0.0
    zero = np.zeros_like(perfect)
    loss = xtra.reconstruction_loss(zero, raw)
    assert abs(loss - 16.0) / 16.0 < 0.05


def test_cost_and_schedule():
    assert abs(xtra.estimate_cost(632e6, 14e6, 100, 1, 256) - 5.8) < 0.03
    assert xtra.lr_at(0, 10) == 0.0
    assert xtra.lr_at(20, 10, peak_lr=1e-3, warmup_epochs=2) == 1e-3


def test_synth_dataset_roundtrip():
    images, labels = xtra.synth_dataset(4, 12, 16, seed=5)
    assert images.shape == (12, 3, 16, 16)
    assert labels.shape == (12,)
    again, _ = xtra.synth_dataset(4, 12, 16, seed=5)
    assert np.array_equal(images, again)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.xid")
        xtra.save_xid(path, images, labels, 4)
        assert os.path.getsize(path) > 12 * 3 * 16 * 16


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
