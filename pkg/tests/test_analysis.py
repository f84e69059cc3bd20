import numpy as np

from fatlic import analysis
from fatlic.model import FatLic, ModelConfig


def test_block_spectrum_of_constant_is_dc_only():
    spec = analysis.block_spectrum(np.full((1, 2, 32, 48), 0.5))
    assert spec.shape == (2, 16, 16)
    assert spec[0, 8, 8] == 0.5 * 256
    spec[:, 8, 8] = 0
    assert np.abs(spec).max() < 1e-9
    assert analysis.central_fraction(analysis.block_spectrum(np.ones((1, 1, 16, 16)))) == 1.0


def test_block_spectrum_matches_numpy():
    x = np.random.default_rng(0).normal(size=(2, 3, 16, 32))
    tiles = np.stack([x[..., :16], x[..., 16:]], axis=2)
    ref = np.fft.fftshift(np.abs(np.fft.fft2(tiles)).mean(axis=(0, 2)), axes=(-2, -1))
    np.testing.assert_allclose(analysis.block_spectrum(x), ref, atol=1e-10)


def test_axis_ratio_detects_orientation():
    j = np.arange(16)
    vertical_stripes = np.cos(2 * np.pi * 5 * j / 16)[None, None, None, :] * np.ones((1, 1, 16, 1))
    spec = analysis.block_spectrum(vertical_stripes)
    assert analysis.axis_ratio(spec + 1e-12) > 1e6
    assert analysis.axis_ratio(np.swapaxes(spec, -1, -2) + 1e-12) < 1e-6
    assert analysis.central_fraction(spec) < 1e-20


def test_capture_spectra_shapes_and_cleanup():
    model = FatLic(ModelConfig.toy(), seed=0)
    patches = np.random.default_rng(1).random((2, 3, 64, 64)).astype(np.float32)
    spectra = analysis.capture_spectra(model, patches)
    for t in ("g_a", "g_s"):
        block = analysis.last_fat_block(model, t)
        assert set(spectra[t]) == {"LL", "HH", "HL", "LH"}
        assert all(g.shape[1:] == (16, 16) for g in spectra[t].values())
        assert sum(g.shape[0] for g in spectra[t].values()) == block.attn.heads * block.attn.head_dim
        assert not block.attn.capture and block.attn.captured == {}
    assert len(analysis.spectrum_summary(spectra)) == 8


def test_deepest_blocks_border_the_latent():
    model = FatLic(ModelConfig.toy(), seed=0)
    assert analysis.deepest_fat_block(model, "g_a") is model.g_a.fat_pairs()[-1].blocks[-1]
    assert analysis.deepest_fat_block(model, "g_s") is model.g_s.fat_pairs()[0].blocks[0]
    grids = analysis.filter_grids(model)
    assert analysis.outer_ring_mean(grids["g_a"]) == 1.0
