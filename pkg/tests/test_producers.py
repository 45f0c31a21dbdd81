import numpy as np
import pytest

from mapfusion.errors import ContractError, FormatError, InputError
from mapfusion.producers import (FMAP_MAGIC, adq1_map, blk_map, block_dct8, block_idct8, builtin_maps,
                                 load_external_map, luminance, noise_residual_map, read_fmap, read_mask,
                                 read_rgb, stack_maps, write_fmap, write_mask, write_rgb)


def naive_dct8(block):
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = np.sqrt(1 / 8) if u == 0 else np.sqrt(2 / 8)
            cv = np.sqrt(1 / 8) if v == 0 else np.sqrt(2 / 8)
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += block[x, y] * np.cos((2 * x + 1) * u * np.pi / 16) * np.cos((2 * y + 1) * v * np.pi / 16)
            out[u, v] = cu * cv * s
    return out


def test_luminance_examples():
    px = lambda r, g, b: luminance(np.array([[[r, g, b]]], np.uint8))[0, 0]
    assert px(255, 255, 255) == pytest.approx(255)
    assert px(255, 0, 0) == pytest.approx(76.245)
    for v in (0, 17, 200):
        assert px(v, v, v) == pytest.approx(v)
    with pytest.raises(InputError):
        luminance(np.zeros((0, 0, 3), np.uint8))


def test_dct_constant_blocks():
    assert not block_dct8(np.full((8, 8), 128.0)).any()
    c = block_dct8(np.full((16, 8), 128.0 + 5))
    assert c.shape == (2, 1, 8, 8)
    np.testing.assert_allclose(c[..., 0, 0], 40.0)
    ac = c.copy()
    ac[..., 0, 0] = 0
    np.testing.assert_allclose(ac, 0.0, atol=1e-12)


def test_dct_matches_naive_oracle_and_round_trips(rng):
    luma = rng.uniform(0, 255, (19, 26))
    coeffs = block_dct8(luma)
    assert coeffs.shape == (2, 3, 8, 8)
    np.testing.assert_allclose(coeffs[1, 2], naive_dct8(luma[8:16, 16:24] - 128), atol=1e-6)
    np.testing.assert_allclose(block_idct8(coeffs), luma[:16, :24], atol=1e-3)
    with pytest.raises(InputError):
        block_dct8(np.zeros((7, 30)))


@pytest.mark.parametrize("producer", [adq1_map, blk_map, noise_residual_map])
def test_constant_image_falls_back_to_half(producer):
    out = producer(np.full((48, 40, 3), 90, np.uint8))
    assert out.shape == (48, 40)
    assert np.all(out == 0.5)


@pytest.mark.parametrize("producer", [adq1_map, blk_map, noise_residual_map])
@pytest.mark.parametrize("shape", [(16, 16), (37, 53), (128, 96), (5, 9)])
def test_producers_are_total_and_shape_preserving(rng, producer, shape):
    img = rng.integers(0, 256, shape + (3,), dtype=np.uint8)
    out = producer(img)
    assert out.shape == shape and out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0
    np.testing.assert_array_equal(producer(img), out)


def test_median_of_flat_neighbourhood_gives_zero_residual(rng):
    img = np.full((48, 48), 60.0)
    img[24:32, 24:32] += rng.normal(0, 20, (8, 8))
    out = noise_residual_map(img)
    # flat cells far from the patch carry zero residual, i.e. the minimum
    assert out[0, 0] == out[47, 0] == 0.0
    assert out[27, 27] == 1.0
    step = np.full((32, 32), 60.0)
    step[16:] = 200.0
    assert np.all(noise_residual_map(step) == 0.5)


def test_fmap_round_trip_is_bit_identical(tmp_path, rng):
    values = rng.random((2, 7, 5)).astype(np.float32)
    p = write_fmap(tmp_path / "a.fmap", values)
    raw = p.read_bytes()
    assert raw.startswith(FMAP_MAGIC + b"5 7 2\n")
    back = read_fmap(p)
    assert back.tobytes() == values.tobytes()
    write_fmap(tmp_path / "b.fmap", back)
    assert (tmp_path / "b.fmap").read_bytes() == raw


def test_fmap_errors(tmp_path):
    p = tmp_path / "x.fmap"
    p.write_bytes(b"XMAP1\n2 2 1\n" + bytes(16))
    with pytest.raises(FormatError, match="XMAP"):
        read_fmap(p)
    p.write_bytes(FMAP_MAGIC + b"2 2 1\n" + bytes(12))
    with pytest.raises(FormatError):
        read_fmap(p)
    p.write_bytes(FMAP_MAGIC + b"2 two 1\n" + bytes(16))
    with pytest.raises(FormatError):
        read_fmap(p)


def test_external_map_resize_and_clamp(tmp_path, rng):
    values = rng.random((32, 32)).astype(np.float32)
    values[0, 0] = 1.7
    p = write_fmap(tmp_path / "e.fmap", values)
    m = load_external_map(p, 64, 64, "cagi")
    assert m.producer == "external:cagi" and m.values.shape == (64, 64)
    assert m.values[0, 0] == 1.0
    for (a, b), (c, d) in [((0, -1), (0, -1)), ((-1, 0), (-1, 0)), ((-1, -1), (-1, -1))]:
        assert m.values[a, b] == values[c, d]
    same = load_external_map(p, 32, 32)
    np.testing.assert_array_equal(same.values, np.clip(values, 0, 1))
    write_fmap(tmp_path / "two.fmap", np.zeros((2, 4, 4)))
    with pytest.raises(FormatError):
        load_external_map(tmp_path / "two.fmap", 4, 4)


def test_stack_maps_order_and_fill(rng):
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    maps = builtin_maps(img)
    assert [m.producer for m in maps] == ["adq1", "blk", "noise"]
    x = stack_maps(maps, 5)
    assert x.shape == (1, 5, 32, 32)
    np.testing.assert_array_equal(x[0, 0], maps[0].values)
    assert np.all(x[0, 3:] == 0.5)
    five = [rng.random((8, 9)).astype(np.float32) for _ in range(5)]
    y = stack_maps(five, 5)
    for i in range(5):
        np.testing.assert_array_equal(y[0, i], five[i])
    with pytest.raises(ContractError):
        stack_maps([np.zeros((8, 8)), np.zeros((8, 9))], 5)
    with pytest.raises(ContractError):
        stack_maps(five, 4)


def test_raster_io(tmp_path, rng):
    img = rng.integers(0, 256, (12, 10, 3), dtype=np.uint8)
    for name in ("a.png", "a.ppm"):
        np.testing.assert_array_equal(read_rgb(write_rgb(tmp_path / name, img)), img)
    mask = rng.random((12, 10)) > 0.5
    p = write_mask(tmp_path / "m.pgm", mask)
    assert p.read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(read_mask(p), mask)
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(InputError):
        read_rgb(tmp_path / "junk.png")
