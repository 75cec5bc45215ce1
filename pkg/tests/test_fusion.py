import numpy as np
import pytest

from sctnet.autograd import Tensor
from sctnet.fusion import (AdainFusion, SctFusion, adain_fuse, mean_normalize,
                           sct_fuse, std_normalize)


def stats(arr):
    mean = arr.mean(axis=(-2, -1))
    std = arr.std(axis=(-2, -1))
    return mean, std


class TestNormalization:
    def test_constant_channel_becomes_zero(self):
        f = np.full((4, 5, 5), 3.25, np.float32)
        out, _, _ = std_normalize(f)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_idempotent_within_tolerance(self, rng):
        f = rng.standard_normal((4, 8, 8)).astype(np.float32)
        once, _, _ = std_normalize(f)
        twice, _, _ = std_normalize(once.data)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-4)

    def test_contracts_on_random_maps(self, rng):
        for _ in range(50):
            f = rng.standard_normal((1, 4, 8, 8)) * rng.uniform(0.1, 5.0)
            out, _, _ = std_normalize(f.astype(np.float32))
            mean, std = stats(out.data)
            assert np.all(np.abs(mean) < 1e-5)
            assert np.all(np.abs(std - 1.0) < 1e-4)

    def test_mean_normalize_zero_map(self):
        f = np.zeros((2, 3, 3), np.float32)
        out, mean = mean_normalize(f)
        np.testing.assert_array_equal(out.data, 0.0)
        np.testing.assert_array_equal(mean.data, 0.0)

    def test_mean_normalize_shift_invariance(self, rng):
        f = rng.standard_normal((3, 6, 6)).astype(np.float64)
        shift = rng.standard_normal((3, 1, 1))
        out1, _ = mean_normalize(f)
        out2, _ = mean_normalize(f + shift)
        np.testing.assert_allclose(out1.data, out2.data, atol=1e-12)

    def test_mean_normalize_random_contract(self, rng):
        out, _ = mean_normalize(rng.standard_normal((2, 5, 7, 7)).astype(np.float32))
        assert np.all(np.abs(out.data.mean(axis=(2, 3))) < 1e-5)
        # variance untouched
        assert out.data.std() > 0.5


class TestAdain:
    def test_self_fusion_preserves_stats(self, rng):
        f = rng.standard_normal((3, 8, 8)).astype(np.float64) * 2.0 + 1.0
        out = adain_fuse(f, f)
        m0, s0 = stats(f)
        m1, s1 = stats(out.data)
        np.testing.assert_allclose(m1, m0, atol=1e-4)
        np.testing.assert_allclose(s1, s0, atol=1e-4)

    def test_constant_style_yields_style_means(self, rng):
        f_c = rng.standard_normal((3, 6, 6)).astype(np.float32)
        f_s = np.ones((3, 4, 4), np.float32) * np.array([1, 2, 3], np.float32).reshape(3, 1, 1)
        out = adain_fuse(f_c, f_s)
        np.testing.assert_allclose(out.data, f_s[:, :1, :1] * np.ones_like(f_c), atol=1e-3)

    def test_random_pairs_transfer_stats(self, rng):
        for _ in range(50):
            f_c = rng.standard_normal((1, 4, 8, 8)).astype(np.float64) * rng.uniform(0.5, 2)
            f_s = rng.standard_normal((1, 4, 6, 6)).astype(np.float64) * rng.uniform(0.5, 2)
            out = adain_fuse(f_c, f_s)
            ms, ss = stats(f_s)
            mo, so = stats(out.data)
            np.testing.assert_allclose(mo, ms, atol=1e-4)
            np.testing.assert_allclose(so, ss, atol=1e-4)

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="channel mismatch"):
            adain_fuse(np.zeros((4, 4, 4), np.float32), np.zeros((3, 4, 4), np.float32))


def toy_fusion() -> SctFusion:
    """4-channel fusion reduced to width 2 with hand-set weights."""
    fusion = SctFusion(channels=4, reduced=2, dtype=np.float64)
    eye4 = np.eye(4, dtype=np.float64).reshape(4, 4, 1, 1)
    reduce_w = np.array([[0.5, -0.25, 1.0, 0.0],
                         [0.0, 0.75, -0.5, 0.25]], np.float64).reshape(2, 4, 1, 1)
    restore_w = np.array([[1.0, -0.5],
                          [0.25, 0.5],
                          [-1.0, 0.75],
                          [0.5, 1.0]], np.float64).reshape(4, 2, 1, 1)
    for stack in (fusion.cnet, fusion.snet):
        stack.conv1.weight.data = eye4.copy()
        stack.conv1.bias.data = np.zeros(4)
        stack.conv2.weight.data = eye4.copy()
        stack.conv2.bias.data = np.zeros(4)
        stack.conv3.bias.data = np.zeros(2)
    fusion.cnet.conv3.weight.data = reduce_w.copy()
    fusion.snet.conv3.weight.data = reduce_w * 0.5
    fusion.restore.weight.data = restore_w
    fusion.restore.bias.data = np.array([0.1, -0.1, 0.2, 0.0])
    return fusion


def oracle_sct(f_c, f_s, fusion):
    """Explicit loop re-implementation of the fused output."""
    c, hc, wc = f_c.shape
    _, hs, ws = f_s.shape
    mu_c = f_c.mean(axis=(1, 2))
    sd_c = np.sqrt(f_c.var(axis=(1, 2)) + 1e-12)
    fcn = (f_c - mu_c[:, None, None]) / (sd_c + 1e-5)[:, None, None]
    mu_s = f_s.mean(axis=(1, 2))
    fsn = f_s - mu_s[:, None, None]

    def stack_apply(stack, x):
        for conv, act in ((stack.conv1, True), (stack.conv2, True), (stack.conv3, False)):
            w = conv.weight.data[:, :, 0, 0]
            b = conv.bias.data
            y = np.zeros((w.shape[0],) + x.shape[1:])
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    y[:, i, j] = w @ x[:, i, j] + b
            x = np.maximum(y, 0) if act else y
        return x

    fc_r = stack_apply(fusion.cnet, fcn)
    fs_r = stack_apply(fusion.snet, fsn)

    r = fs_r.shape[0]
    flat = fs_r.reshape(r, hs * ws)
    cov = np.zeros((r, r))
    for i in range(r):
        for j in range(r):
            cov[i, j] = np.dot(flat[i], flat[j]) / (hs * ws - 1)

    restore_w = fusion.restore.weight.data[:, :, 0, 0]
    restore_b = fusion.restore.bias.data
    out = np.zeros((c, hc, wc))
    for i in range(hc):
        for j in range(wc):
            fused = cov @ fc_r[:, i, j]
            out[:, i, j] = restore_w @ fused + restore_b + mu_s
    return out


class TestSct:
    def test_toy_matches_hand_oracle(self, rng):
        fusion = toy_fusion()
        f_c = rng.standard_normal((4, 3, 3))
        f_s = rng.standard_normal((4, 3, 3)) * 2.0 + 0.5
        got = sct_fuse(f_c, f_s, fusion)
        want = oracle_sct(f_c, f_s, fusion)
        np.testing.assert_allclose(got.data, want, rtol=1e-6, atol=1e-9)

    def test_zeroed_snet_gives_zero_pre_restore(self, rng):
        fusion = toy_fusion()
        fusion.snet.conv3.weight.data = np.zeros_like(fusion.snet.conv3.weight.data)
        f_c = rng.standard_normal((4, 3, 3))
        f_s = rng.standard_normal((4, 3, 3))
        _, internals = sct_fuse(f_c, f_s, fusion, return_internals=True)
        np.testing.assert_array_equal(internals["covariance"].data, 0.0)
        np.testing.assert_array_equal(internals["pre_restore"].data, 0.0)

    def test_output_keeps_content_size_any_style_size(self, rng):
        fusion = SctFusion(channels=8, reduced=4, rng=rng)
        f_c = rng.standard_normal((8, 5, 7)).astype(np.float32)
        for hs, ws in [(3, 3), (6, 2), (9, 9)]:
            out = sct_fuse(f_c, rng.standard_normal((8, hs, ws)).astype(np.float32), fusion)
            assert out.shape == (8, 5, 7)

    def test_covariance_symmetric_and_psd_50_styles(self, rng):
        fusion = SctFusion(channels=8, reduced=4, rng=rng)
        f_c = rng.standard_normal((8, 4, 4)).astype(np.float32)
        for _ in range(50):
            f_s = (rng.standard_normal((8, 5, 5)) * rng.uniform(0.2, 3)).astype(np.float32)
            _, internals = sct_fuse(f_c, f_s, fusion, return_internals=True)
            cov = internals["covariance"].data[0]
            np.testing.assert_array_equal(cov, cov.T)
            eigvals = np.linalg.eigvalsh(cov.astype(np.float64))
            assert eigvals.min() >= -1e-6

    def test_style_shift_leaves_covariance_path_unchanged(self, rng):
        fusion = SctFusion(channels=6, reduced=3, rng=rng, dtype=np.float64)
        f_c = rng.standard_normal((6, 4, 4))
        f_s = rng.standard_normal((6, 5, 5))
        shift = rng.standard_normal((6, 1, 1)) * 3
        _, base = sct_fuse(f_c, f_s, fusion, return_internals=True)
        _, shifted = sct_fuse(f_c, f_s + shift, fusion, return_internals=True)
        np.testing.assert_allclose(shifted["pre_restore"].data, base["pre_restore"].data,
                                   atol=1e-5)

    def test_content_permutation_equivariance(self, rng):
        fusion = SctFusion(channels=6, reduced=3, rng=rng, dtype=np.float64)
        f_c = rng.standard_normal((6, 1, 9))
        f_s = rng.standard_normal((6, 4, 4))
        perm = rng.permutation(9)
        _, base = sct_fuse(f_c, f_s, fusion, return_internals=True)
        _, permuted = sct_fuse(f_c[:, :, perm], f_s, fusion, return_internals=True)
        np.testing.assert_allclose(permuted["pre_restore"].data,
                                   base["pre_restore"].data[:, :, perm], atol=1e-9)

    def test_channel_mismatch_is_config_error(self, rng):
        fusion = SctFusion(channels=8, reduced=4, rng=rng)
        with pytest.raises(ValueError, match="configured for 8"):
            sct_fuse(rng.standard_normal((4, 4, 4)).astype(np.float32),
                     rng.standard_normal((8, 4, 4)).astype(np.float32), fusion)

    def test_backend_objects_expose_kind(self):
        assert SctFusion(channels=8, reduced=4).kind == "sct"
        assert AdainFusion(channels=8).kind == "adain"
