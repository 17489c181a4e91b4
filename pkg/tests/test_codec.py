import struct
import zlib

import numpy as np
import pytest

from factorized_fields.analysis import psnr
from factorized_fields.codec import (
    Bitstream,
    BitstreamError,
    EntropyDecodeError,
    QuantSpec,
    UnsupportedVersionError,
    compress,
    compress_multi,
    decode_stream,
    decompress,
    decompress_all,
    dequantize,
    dequantize_field,
    empirical_entropy_bits,
    encode_fields,
    entropy_decode,
    entropy_encode,
    fit_shared_basis,
    quantize,
    rd_candidates,
    select_candidate,
    step_grid,
)
from factorized_fields.config import CODEC_MODEL
from factorized_fields.imageio import bundled_image
from factorized_fields.model import ModelConfig, init_field
from factorized_fields.optim import FitConfig, fit

FAST_FIT = FitConfig(iterations=48)


def codec_config(size=64, **kw):
    return ModelConfig.for_image(size, size, **{**CODEC_MODEL, **kw})


@pytest.fixture(scope="module")
def image():
    return bundled_image("small")


@pytest.fixture(scope="module")
def fitted(image):
    field, _ = fit(image, codec_config(), FAST_FIT)
    return field


@pytest.fixture(scope="module")
def candidates(fitted, image):
    return rd_candidates([fitted], [image], step_grid())


class TestQuantize:
    @pytest.mark.parametrize(
        "v, step, idx, deq",
        [(0.37, 0.1, 4, 0.4), (-0.25, 0.1, -3, -0.3), (0.0, 0.1, 0, 0.0), (0.0, 7.0, 0, 0.0), (0.25, 0.1, 3, 0.3)],
    )
    def test_examples(self, v, step, idx, deq):
        assert quantize(v, step) == idx
        assert dequantize(quantize(v, step), step) == pytest.approx(deq)

    def test_error_bound(self, rng):
        v = rng.normal(size=10000)
        for step in (1e-3, 0.1, 2.0):
            err = np.abs(v - dequantize(quantize(v, step), step))
            assert err.max() <= step / 2 + 1e-12

    def test_bad_step(self):
        with pytest.raises(ValueError):
            quantize([1.0], 0.0)
        with pytest.raises(ValueError):
            QuantSpec({"coeff": -1.0})

    def test_step_grid(self):
        grid = step_grid()
        assert len(grid) == 12
        assert grid[0] == pytest.approx(1 / 256)
        assert grid[-1] == pytest.approx(1 / 4)
        ratios = np.diff(np.log(grid))
        np.testing.assert_allclose(ratios, ratios[0])

    def test_spec_groups(self):
        quant = QuantSpec.uniform(0.1, 2)
        assert quant.step_for("weight") == quant.step_for("bias") == 0.1
        assert set(quant.steps) == {"coeff", "basis_0", "basis_1", "projection"}


class TestEntropyCoder:
    def test_all_zero(self):
        assert len(entropy_encode(np.zeros(4096, dtype=np.int64))) < 64

    def test_uniform_bytes(self, rng):
        x = rng.integers(0, 256, 65536)
        assert len(entropy_encode(x)) <= 65536 * 1.01

    @pytest.mark.parametrize("p", [0.05, 0.3, 0.7])
    def test_geometric_bound(self, rng, p):
        x = rng.geometric(p, 50000) - 1
        bound = empirical_entropy_bits(x) / 8
        size = len(entropy_encode(x))
        assert size <= bound * 1.01 + 64

    def test_round_trip_random(self, rng):
        for _ in range(200):
            n = int(rng.integers(0, 300))
            x = rng.integers(-1000, 1000, n) * rng.integers(0, 2, n)
            np.testing.assert_array_equal(entropy_decode(entropy_encode(x), n), x)

    def test_extreme_values(self):
        x = np.array([-(2**31), 2**31 - 1, 0, 5])
        np.testing.assert_array_equal(entropy_decode(entropy_encode(x), 4), x)

    @pytest.mark.parametrize(
        "make, mode",
        [
            (lambda r: r.integers(0, 256, 20000), 0),
            (lambda r: np.array([0, 10**6, 2 * 10**6] * 5), 1),
            (lambda r: r.geometric(0.02, 20000) - 1, 2),
            (lambda r: np.concatenate([np.arange(300), [10**6]]), 3),
        ],
    )
    def test_table_modes(self, rng, make, mode):
        x = make(rng)
        blob = entropy_encode(x)
        assert blob[4] == mode
        np.testing.assert_array_equal(entropy_decode(blob, x.size), x)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            entropy_encode(np.array([2**31]))

    def test_rejects_floats(self):
        with pytest.raises(TypeError):
            entropy_encode(np.array([0.5]))

    def test_corruption_detected(self, rng):
        blob = bytearray(entropy_encode(rng.integers(0, 10, 1000)))
        blob[-5] ^= 0x40
        with pytest.raises(EntropyDecodeError):
            entropy_decode(bytes(blob), 1000)

    def test_wrong_count(self, rng):
        blob = entropy_encode(rng.integers(0, 10, 100))
        with pytest.raises(EntropyDecodeError):
            entropy_decode(blob, 99)

    def test_truncated(self, rng):
        blob = entropy_encode(rng.integers(0, 10, 100))
        with pytest.raises(EntropyDecodeError):
            entropy_decode(blob[:6], 100)


class TestBitstream:
    @pytest.fixture
    def stream(self, fitted):
        return encode_fields([fitted], QuantSpec.uniform(1 / 64, fitted.config.levels), 64, 64)

    def test_round_trip_bit_exact(self, fitted, stream):
        fields, quant, h, w = decode_stream(stream.data)
        assert (h, w) == (64, 64)
        expected = dequantize_field(fitted, quant)
        for name, arr in expected.parameters().items():
            got = fields[0].parameters()[name]
            assert got.dtype == arr.dtype
            np.testing.assert_array_equal(got, arr)

    def test_magic_and_version(self, stream):
        assert stream.data[:4] == b"FFC1"
        assert struct.unpack_from("<H", stream.data, 4)[0] == 1

    def test_crc_trailer(self, stream):
        body, trailer = stream.data[:-4], stream.data[-4:]
        assert struct.unpack("<I", trailer)[0] == zlib.crc32(body)

    @pytest.mark.parametrize("cut", [2, 20, 100, -1])
    def test_truncated(self, stream, cut):
        with pytest.raises(BitstreamError):
            decode_stream(stream.data[:cut])

    def test_version_bumped(self, stream):
        data = bytearray(stream.data)
        data[4] += 1
        with pytest.raises(UnsupportedVersionError):
            decode_stream(bytes(data))

    def test_flipped_bit(self, stream):
        data = bytearray(stream.data)
        data[len(data) // 2] ^= 1
        with pytest.raises(BitstreamError):
            decode_stream(bytes(data))

    def test_bad_magic(self, stream):
        with pytest.raises(BitstreamError):
            decode_stream(b"NOPE" + stream.data[4:])

    def test_total_bits(self, stream):
        assert stream.total_bits == 8 * len(stream.data)


class TestSelection:
    def test_infinite_lambda_picks_finest(self, candidates):
        assert select_candidate(candidates, 1e12) is candidates[0]

    def test_zero_lambda_picks_fewest_bits(self, candidates):
        chosen = select_candidate(candidates, 0.0)
        assert chosen.bits == min(c.bits for c in candidates)
        assert chosen is candidates[-1]

    def test_monotone_in_lambda(self, candidates):
        lams = np.geomspace(1e-5, 10, 40)
        chosen = [select_candidate(candidates, lam) for lam in lams]
        bits = [c.bits for c in chosen]
        dist = [c.distortion() for c in chosen]
        assert all(b1 <= b2 for b1, b2 in zip(bits, bits[1:]))
        assert all(d1 >= d2 for d1, d2 in zip(dist, dist[1:]))

    def test_negative_lambda(self, candidates):
        with pytest.raises(ValueError):
            select_candidate(candidates, -1.0)


class TestCompress:
    def test_decompress_matches_recorded_psnr(self, image):
        stream, point = compress(image, codec_config(), FAST_FIT, 0.0067)
        recon = decompress(stream)
        assert psnr(recon, image) == point.psnr
        assert point.bpp == stream.total_bits / (64 * 64)
        assert point.bpp > 0

    def test_decompress_accepts_bytes(self, image):
        stream, _ = compress(image, codec_config(), FitConfig(iterations=4))
        np.testing.assert_array_equal(decompress(stream.data), decompress(stream))

    def test_save(self, image, tmp_path):
        stream, _ = compress(image, codec_config(), FitConfig(iterations=4))
        path = tmp_path / "x.ffc"
        stream.save(path)
        assert path.read_bytes() == stream.data


class TestSharedBasis:
    def test_single_image_reduces_to_fit(self, image):
        cfg = codec_config()
        bases, (f,), _ = fit_shared_basis([image], cfg, FitConfig(iterations=6))
        g, _ = fit(image, cfg, FitConfig(iterations=6))
        for name, arr in g.parameters().items():
            np.testing.assert_array_equal(f.parameters()[name], arr)
        assert bases is f.bases

    def test_identical_copies(self, image):
        _, _, report = fit_shared_basis([image] * 3, codec_config(), FitConfig(iterations=12))
        np.testing.assert_allclose(report.per_image_psnr, report.per_image_psnr[0], atol=1e-6)

    def test_mismatched_sizes(self, image):
        with pytest.raises(ValueError):
            fit_shared_basis([image, image[:32]], codec_config(), FitConfig(iterations=1))

    def test_multi_stream_self_consistent(self, image):
        crops = [image[:32, :32], image[:32, 32:], image[32:, :32], image[32:, 32:]]
        stream, points = compress_multi(crops, codec_config(32), FitConfig(iterations=24), 0.0067)
        decoded = decompress_all(stream.data)
        assert len(decoded) == len(points) == 4
        for img, rec, pt in zip(crops, decoded, points):
            assert psnr(rec, img) == pt.psnr
        # shared bits are split evenly, so per-image bits add up to the stream
        assert sum(p.bits for p in points) == pytest.approx(stream.total_bits)

    def test_basis_bits_amortize(self, image):
        cfg = codec_config(32)
        field = init_field(cfg)
        quant = QuantSpec.uniform(1 / 64, cfg.levels)
        shared = {}
        for m in (1, 2, 4):
            fields = [field.copy() for _ in range(m)]
            for f in fields[1:]:
                f.bases = fields[0].bases
            s = encode_fields(fields, quant, 32, 32)
            shared[m] = sum(b for k, b in s.tensor_bits.items() if "/" not in k)
        assert shared[1] == shared[2] == shared[4]


def test_bitstream_type(image):
    stream, _ = compress(image, codec_config(), FitConfig(iterations=2))
    assert isinstance(stream, Bitstream)
    assert stream.n_images == 1
