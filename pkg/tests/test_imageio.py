import numpy as np
import pytest

from factorized_fields.imageio import PPMError, bundled_image, decode_ppm, encode_ppm, read_ppm, write_ppm


class TestReadPPM:
    def test_white_pixel(self, tmp_path):
        path = tmp_path / "w.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\xff\xff\xff")
        np.testing.assert_array_equal(read_ppm(path), [[[1.0, 1.0, 1.0]]])

    def test_comments_in_header(self):
        img = decode_ppm(b"P6 # comment\n2 # w\n1\n255\n\x00\x00\x00\xff\x00\x80")
        assert img.shape == (1, 2, 3)
        np.testing.assert_allclose(img[0, 1], [1.0, 0.0, 128 / 255])

    def test_ascii_rejected(self):
        with pytest.raises(PPMError, match="P3"):
            decode_ppm(b"P3\n1 1\n255\n255 255 255\n")

    def test_bad_maxval(self):
        with pytest.raises(PPMError, match="maxval"):
            decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00")

    def test_short_file_reports_offset(self):
        with pytest.raises(PPMError, match="byte 11"):
            decode_ppm(b"P6\n2 2\n255\n\x00\x00\x00")

    def test_bad_dimension_token(self):
        with pytest.raises(PPMError, match="byte"):
            decode_ppm(b"P6\nxx 2\n255\n")

    def test_missing_file_names_path(self, tmp_path):
        path = tmp_path / "nope.ppm"
        with pytest.raises(FileNotFoundError, match="nope.ppm"):
            read_ppm(path)


class TestWritePPM:
    def test_round_trip_bytes(self, rng, tmp_path):
        q = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
        data = b"P6\n7 5\n255\n" + q.tobytes()
        img = decode_ppm(data)
        assert encode_ppm(img) == data
        path = tmp_path / "a.ppm"
        write_ppm(img, path)
        assert path.read_bytes() == data

    def test_read_write_read_idempotent(self, rng, tmp_path):
        img = rng.random((4, 6, 3))
        write_ppm(img, tmp_path / "a.ppm")
        once = read_ppm(tmp_path / "a.ppm")
        write_ppm(once, tmp_path / "b.ppm")
        np.testing.assert_array_equal(read_ppm(tmp_path / "b.ppm"), once)

    def test_rounds_half_up(self):
        img = np.full((1, 1, 3), 0.5 / 255)
        assert encode_ppm(img)[-3:] == b"\x01\x01\x01"

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            encode_ppm(np.full((1, 1, 3), 1.5))


class TestBundled:
    @pytest.mark.parametrize("name, size", [("acceptance", 256), ("small", 64)])
    def test_shapes(self, name, size):
        img = bundled_image(name)
        assert img.shape == (size, size, 3)
        assert img.std() > 0.05

    def test_unknown(self):
        with pytest.raises(FileNotFoundError):
            bundled_image("missing")
