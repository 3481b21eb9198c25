import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from ffalab.haze import dihedral
from ffalab.metrics import C1, MetricReport, gaussian_window, psnr, ssim


class TestPSNR:
    def test_identical_is_inf(self, rng):
        x = rng.uniform(0, 1, (3, 8, 8))
        assert psnr(x, x) == math.inf

    def test_uniform_offset(self):
        x = np.full((3, 16, 16), 0.2)
        assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_decreasing_in_mse(self, rng):
        x = rng.uniform(0.3, 0.7, (3, 8, 8))
        noise = rng.standard_normal(x.shape)
        values = [psnr(x, x + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_clamps_inputs(self):
        assert psnr(np.full((4, 4), 1.3), np.ones((4, 4))) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSSIM:
    def test_identical(self, rng):
        x = rng.uniform(0, 1, (3, 20, 24))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_constant_zero_vs_one(self):
        expected = C1 / (1 + C1)
        assert expected == pytest.approx(9.999e-5, abs=1e-7)
        assert ssim(np.zeros((3, 16, 16)), np.ones((3, 16, 16))) == pytest.approx(expected, abs=1e-12)

    def test_symmetric(self, rng):
        x, y = rng.uniform(0, 1, (2, 3, 16, 16))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)

    def test_bounded(self, rng):
        x = rng.uniform(0, 1, (3, 16, 16))
        assert -1 <= ssim(x, 1 - x) <= 1

    def test_window(self):
        g = gaussian_window()
        assert g.size == 11 and g.sum() == pytest.approx(1.0)
        assert g[5] == g.max() and np.allclose(g, g[::-1])

    def test_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 10, 20)), np.zeros((3, 10, 20)))

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_scikit_image(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, (3, 23, 31))
        y = np.clip(x + 0.15 * rng.standard_normal(x.shape), 0, 1)
        ref = structural_similarity(x, y, data_range=1.0, channel_axis=0, gaussian_weights=True,
                                    sigma=1.5, use_sample_covariance=False)
        assert ssim(x, y) == pytest.approx(ref, abs=1e-10)


def test_dihedral_invariance(rng):
    x = rng.uniform(0, 1, (3, 16, 16))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    for k in range(4):
        for f in (False, True):
            xa, ya = dihedral(x, k, f), dihedral(y, k, f)
            assert psnr(xa, ya) == pytest.approx(psnr(x, y), abs=1e-9)
            assert ssim(xa, ya) == pytest.approx(ssim(x, y), abs=1e-9)


def test_report_csv(tmp_path, rng):
    rep = MetricReport()
    for i in range(3):
        x = rng.uniform(0, 1, (3, 12, 12))
        rep.add(f"img{i}", x, np.clip(x + 0.05, 0, 1))
    rep.add("same", x, x)
    assert rep.mean_ssim == pytest.approx(np.mean(rep.ssim))
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "name,psnr_db,ssim"
    assert len(lines) == 1 + 4 + 1
    assert lines[-1].startswith("mean,")
    back = MetricReport.read_csv(tmp_path / "r.csv")
    assert back.names == rep.names and back.psnr[-1] == math.inf
    assert "img0" in rep.to_text()
