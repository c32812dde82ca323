import numpy as np
import pytest

from maskbeam.metrics import (
    EvalReport,
    UtteranceScore,
    mask_scores,
    segmental_snr,
    si_sdr,
)


class TestSiSdr:
    def test_identical_signals_hit_cap(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1000)
        assert si_sdr(x, x) == 60.0

    def test_scaled_estimate_equals_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(1000)
        assert si_sdr(3.0 * x, x) == 60.0

    def test_scale_invariance_off_cap(self):
        rng = np.random.default_rng(2)
        ref = rng.standard_normal(1000)
        est = ref + 0.3 * rng.standard_normal(1000)
        assert si_sdr(2.0 * est, ref) == pytest.approx(si_sdr(est, ref), abs=1e-10)

    def test_orthogonal_noise_at_equal_power_is_zero_db(self):
        ref = np.ones(1000)
        noise = np.tile([1.0, -1.0], 500)  # exactly orthogonal to the reference
        assert si_sdr(ref + noise, ref) == pytest.approx(0.0, abs=0.01)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(10), np.zeros(10))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(10), np.ones(11))


class TestSegmentalSnr:
    def test_identical_signals_hit_upper_clamp(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(2048)
        assert segmental_snr(x, x, frame_len=256) == 35.0

    def test_zero_estimate_gives_zero_db_per_frame(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(2048)
        # error equals the reference, so every frame sits at 0 dB, above the clamp
        assert segmental_snr(np.zeros_like(x), x, frame_len=256) == pytest.approx(0.0)

    def test_huge_error_clamps_at_minus_ten(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(2048)
        est = x + 100.0 * rng.standard_normal(2048)
        assert segmental_snr(est, x, frame_len=256) == -10.0

    def test_white_noise_at_ten_db(self):
        rng = np.random.default_rng(6)
        ref = rng.standard_normal(64 * 256)
        noise = rng.standard_normal(ref.size)
        noise *= np.sqrt(np.mean(ref**2) / (10.0 * np.mean(noise**2)))
        assert segmental_snr(ref + noise, ref, frame_len=256) == pytest.approx(10.0, abs=0.5)

    def test_monotone_in_noise_power(self):
        rng = np.random.default_rng(7)
        ref = rng.standard_normal(4096)
        noise = rng.standard_normal(4096)
        values = [segmental_snr(ref + g * noise, ref, frame_len=256) for g in (0.1, 0.3, 1.0, 3.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_too_short_signal_rejected(self):
        with pytest.raises(ValueError):
            segmental_snr(np.ones(10), np.ones(10), frame_len=256)

    def test_zero_frame_len_rejected(self):
        with pytest.raises(ValueError):
            segmental_snr(np.ones(10), np.ones(10), frame_len=0)


class TestMaskScores:
    def test_exact_binary_match_hits_everything(self):
        rng = np.random.default_rng(8)
        target = (rng.uniform(0, 1, (6, 9)) > 0.5).astype(float)
        bce, hit = mask_scores(target, target)
        assert hit == 1.0
        assert bce < 1e-10

    def test_inverted_mask_hits_nothing(self):
        rng = np.random.default_rng(9)
        target = (rng.uniform(0, 1, (6, 9)) > 0.5).astype(float)
        _, hit = mask_scores(1.0 - target, target)
        assert hit == 0.0

    def test_constant_half_prediction_gives_log_two(self):
        rng = np.random.default_rng(10)
        target = rng.uniform(0, 1, (6, 9))
        bce, _ = mask_scores(np.full((6, 9), 0.5), target)
        assert bce == pytest.approx(np.log(2.0), abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mask_scores(np.zeros((2, 2)), np.zeros((3, 2)))


class TestEvalReport:
    def _report(self):
        report = EvalReport()
        report.add(UtteranceScore("a", "simu", 10.0, 5.0))
        report.add(UtteranceScore("b", "simu", 12.0, 7.0))
        report.add(UtteranceScore("c", "real", 2.0, 1.0))
        return report

    def test_aggregate_means(self):
        report = self._report()
        assert report.aggregate()["si_sdr_db"] == pytest.approx(8.0)
        assert report.aggregate("simu")["si_sdr_db"] == pytest.approx(11.0)
        assert report.aggregate("real")["seg_snr_db"] == pytest.approx(1.0)

    def test_table_contains_group_rows(self):
        table = self._report().to_table()
        assert "mean[simu]" in table and "mean[real]" in table and "mean" in table

    def test_csv_round_numbers(self):
        csv_text = self._report().to_csv()
        assert "mean[simu],simu,11.000000" in csv_text
