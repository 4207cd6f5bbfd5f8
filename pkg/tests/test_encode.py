import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from alphanet import encode as E
from alphanet.rng import PrngStream


class TestLogScale:
    def test_endpoints(self):
        x = np.array([0.0, 255.0])
        y = E.log_scale(x)
        npt.assert_allclose(y, [0.0, 1.0], rtol=1e-12)

    def test_hand_value(self):
        # ln(1 + 1) / ln(256)
        y = E.log_scale(np.array([1.0]))
        npt.assert_allclose(y, np.log(2.0) / np.log(256.0), rtol=1e-12)

    def test_monotone(self):
        x = np.linspace(0, 255, 100)
        assert np.all(np.diff(E.log_scale(x)) > 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            E.log_scale(np.array([-1.0]))


class TestZScore:
    def test_standardizes_train_split(self):
        imgs = [PrngStream(i, "z").normal((3, 8, 8)) * 5 + 2 for i in range(20)]
        stats = E.compute_dataset_stats(imgs)
        z = np.concatenate([E.z_score(im, stats).reshape(3, -1) for im in imgs], axis=1)
        npt.assert_allclose(z.mean(axis=1), 0.0, atol=1e-10)
        npt.assert_allclose(z.std(axis=1), 1.0, rtol=1e-10)

    def test_constant_channel_floored(self):
        imgs = [np.full((1, 4, 4), 7.0)] * 3
        stats = E.compute_dataset_stats(imgs)
        assert stats.std[0] == E.STD_FLOOR
        z = E.z_score(imgs[0], stats)
        npt.assert_allclose(z, 0.0)

    def test_order_independent(self):
        imgs = [PrngStream(i, "z").normal((2, 4, 4)) for i in range(10)]
        a = E.compute_dataset_stats(imgs)
        b = E.compute_dataset_stats(list(reversed(imgs)))
        npt.assert_allclose(a.mean, b.mean, rtol=1e-12)
        npt.assert_allclose(a.std, b.std, rtol=1e-12)

    def test_channel_mismatch(self):
        stats = E.compute_dataset_stats([np.zeros((2, 4, 4))])
        with pytest.raises(ValueError, match="channels"):
            E.z_score(np.zeros((3, 4, 4)), stats)

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            E.compute_dataset_stats([])


class TestAlphaCodec:
    def test_round_trip_error_bound(self):
        img = PrngStream(0, "codec").uniform((3, 8, 8)) * 200 - 50
        e = E.alpha_encode(img)
        back = E.alpha_decode(e, dtype=np.float64)
        # quantization step is scale/255; rounding halves it
        assert np.abs(back - img).max() <= e.scale / 510 + 1e-9

    def test_extremes_exact(self):
        img = PrngStream(1, "codec").uniform((1, 4, 4)) * 10
        e = E.alpha_encode(img)
        back = E.alpha_decode(e, dtype=np.float64)
        npt.assert_allclose(back.min(), img.min(), atol=1e-6)
        npt.assert_allclose(back.max(), img.max(), atol=1e-6)

    def test_constant_image(self):
        img = np.full((3, 2, 2), 42.0)
        e = E.alpha_encode(img)
        assert e.scale == 1.0 and e.offset == 42.0
        npt.assert_allclose(E.alpha_decode(e, dtype=np.float64), 42.0)

    def test_payload_range_uses_full_byte(self):
        img = np.array([[[0.0, 255.0]]])
        e = E.alpha_encode(img)
        assert e.payload.min() == 0 and e.payload.max() == 255

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            E.alpha_encode(np.array([[[np.nan]]]))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ValueError):
            E.alpha_encode(np.zeros((4, 4)))

    @given(st.integers(0, 2**31), st.integers(1, 3), st.integers(1, 6), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, seed, C, H, W):
        img = PrngStream(seed, "prop").normal((C, H, W)) * 100
        e = E.alpha_encode(img)
        back = E.alpha_decode(e, dtype=np.float64)
        assert np.abs(back - img).max() <= e.scale / 510 + 1e-6


class TestAencFormat:
    def test_header_layout(self):
        img = np.zeros((2, 3, 4)) + 1.5
        blob = E.write_aenc(E.alpha_encode(img))
        assert blob[:4] == b"AENC"
        assert blob[4] == 1
        assert len(blob) == 25 + 2 * 3 * 4
        # dims are little-endian u32
        assert int.from_bytes(blob[5:9], "little") == 2
        assert int.from_bytes(blob[9:13], "little") == 3
        assert int.from_bytes(blob[13:17], "little") == 4

    def test_serialize_round_trip(self):
        img = PrngStream(2, "aenc").uniform((3, 5, 7)) * 99
        e = E.alpha_encode(img)
        back = E.read_aenc(E.write_aenc(e))
        assert back.dims == e.dims
        npt.assert_allclose(back.offset, e.offset, rtol=1e-6)
        npt.assert_allclose(back.scale, e.scale, rtol=1e-6)
        npt.assert_array_equal(back.payload, e.payload)

    def test_bad_magic(self):
        blob = E.write_aenc(E.alpha_encode(np.zeros((1, 2, 2))))
        with pytest.raises(ValueError, match="magic"):
            E.read_aenc(b"XXXX" + blob[4:])

    def test_bad_version(self):
        blob = bytearray(E.write_aenc(E.alpha_encode(np.zeros((1, 2, 2)))))
        blob[4] = 9
        with pytest.raises(ValueError, match="version"):
            E.read_aenc(bytes(blob))

    def test_truncated(self):
        blob = E.write_aenc(E.alpha_encode(np.zeros((1, 2, 2))))
        with pytest.raises(ValueError):
            E.read_aenc(blob[:10])
        with pytest.raises(ValueError, match="payload"):
            E.read_aenc(blob[:-1])

    def test_compression_ratio_vs_float32(self):
        # 8-bit payload vs 4-byte floats: ratio approaches 4 for large images
        img = PrngStream(3, "aenc").uniform((3, 32, 32)) * 255
        blob = E.write_aenc(E.alpha_encode(img))
        assert img.size * 4 / len(blob) > 3.9
