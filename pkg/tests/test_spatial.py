import numpy as np
import pytest

from maskbeam.audio import AudioClip
from maskbeam.simulate import SourceSpec, delay_source, mix, white_noise
from maskbeam.spatial import (
    ClusterParams,
    default_tdoa_grid,
    e_step,
    init_params,
    m_step,
    observed_ipd,
    run_em,
    wrap_phase,
)
from maskbeam.stft import StftConfig, analyze

RATE = 8000
CFG = StftConfig(128, 32)
GRID = default_tdoa_grid(128)


def _two_channel_scene(rng, delay, num_samples=6000, noise_snr=np.inf):
    src = SourceSpec(
        white_noise(rng, num_samples, RATE),
        delays=np.array([0.0, float(delay)]),
        gains=np.ones(2),
    )
    truth = mix([src], white_noise(rng, num_samples, RATE, 2), snr_db=noise_snr)
    return truth, analyze(truth.mixture, CFG)


def _two_source_scene(rng, d, num_samples=6000):
    s1 = SourceSpec(white_noise(rng, num_samples, RATE), delays=np.array([0.0, float(d)]),
                    gains=np.ones(2))
    s2 = SourceSpec(white_noise(rng, num_samples, RATE), delays=np.array([float(d), 0.0]),
                    gains=np.ones(2))
    return mix([s1, s2], white_noise(rng, num_samples, RATE, 2), snr_db=np.inf)


class TestObservedIpd:
    def test_identical_channels_give_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2000))
        clip = AudioClip(np.vstack([x, x]), RATE)
        ipd = observed_ipd(analyze(clip, CFG), (0, 1))
        np.testing.assert_allclose(ipd, 0.0, atol=1e-12)

    def test_pure_delay_gives_phase_ramp_at_strong_bins(self):
        rng = np.random.default_rng(1)
        d = 4.0
        _, spec = _two_channel_scene(rng, d)
        ipd = observed_ipd(spec, (0, 1))
        omega = 2 * np.pi * np.arange(spec.freq_count) / CFG.window_size
        # pair (0, 1) has tdoa = -d, so the model phase is wrap(+omega*d)
        residual = wrap_phase(ipd - omega[:, None] * d)
        mags = np.abs(spec.bins[0])
        strong = mags > 0.5 * mags.max()
        assert np.percentile(np.abs(residual[strong]), 95) < 0.1

    def test_swapped_pair_negates(self):
        rng = np.random.default_rng(2)
        _, spec = _two_channel_scene(rng, 3.0, noise_snr=10.0)
        a = observed_ipd(spec, (0, 1))
        b = observed_ipd(spec, (1, 0))
        np.testing.assert_allclose(wrap_phase(a + b), 0.0, atol=1e-9)

    def test_identical_indices_rejected(self):
        rng = np.random.default_rng(3)
        _, spec = _two_channel_scene(rng, 1.0)
        with pytest.raises(ValueError):
            observed_ipd(spec, (1, 1))


class TestInitParams:
    def test_single_source_lands_within_one_grid_step(self):
        rng = np.random.default_rng(4)
        d = 5.0
        _, spec = _two_channel_scene(rng, d)
        params = init_params(spec, 1, GRID)
        step = GRID[1] - GRID[0]
        assert abs(params.tdoa[0, 0] - (-d)) <= step

    def test_single_source_prior_is_one(self):
        rng = np.random.default_rng(5)
        _, spec = _two_channel_scene(rng, 2.0)
        params = init_params(spec, 1, GRID)
        np.testing.assert_array_equal(params.prior, [1.0])

    def test_two_symmetric_sources_found_in_some_order(self):
        rng = np.random.default_rng(6)
        d = 5.0
        truth = _two_source_scene(rng, d)
        params = init_params(analyze(truth.mixture, CFG), 2, GRID)
        step = GRID[1] - GRID[0]
        found = sorted(params.tdoa[:, 0])
        assert abs(found[0] - (-d)) <= step and abs(found[1] - d) <= step

    def test_empty_grid_rejected(self):
        rng = np.random.default_rng(7)
        _, spec = _two_channel_scene(rng, 1.0)
        with pytest.raises(ValueError):
            init_params(spec, 1, np.array([]))

    def test_flat_spectrum_falls_back_to_spread_points(self):
        spec = analyze(AudioClip(np.ones((2, 3000)), RATE), CFG)
        params = init_params(spec, 3, GRID)
        assert len(set(np.round(params.tdoa[:, 0], 3))) == 3


class TestEStep:
    def test_identical_sources_split_evenly(self):
        rng = np.random.default_rng(8)
        _, spec = _two_channel_scene(rng, 2.0, noise_snr=5.0)
        params = ClusterParams(
            pairs=((0, 1),),
            tdoa=np.array([[1.5], [1.5]]),
            variance=np.ones((2, spec.freq_count)),
            prior=np.array([0.5, 0.5]),
        )
        masks, _ = e_step(spec, params)
        np.testing.assert_array_equal(masks.masks[0], 0.5)

    def test_single_source_posterior_is_one(self):
        rng = np.random.default_rng(9)
        _, spec = _two_channel_scene(rng, 2.0)
        params = init_params(spec, 1, GRID)
        masks, _ = e_step(spec, params)
        np.testing.assert_array_equal(masks.masks[0], 1.0)

    def test_band_separated_sources_dominate_their_bands(self):
        rng = np.random.default_rng(10)
        n = 8000
        low = white_noise(rng, n, RATE)
        high = white_noise(rng, n, RATE)
        # band-limit the dry signals around 1/4 and 3/4 of Nyquist
        for clip, keep in ((low, slice(0, n // 4)), (high, slice(n // 4, n // 2 + 1))):
            spectrum = np.fft.rfft(clip.samples[0])
            mask = np.zeros_like(spectrum)
            mask[keep] = 1.0
            clip.samples[0] = np.fft.irfft(spectrum * mask, n=n)
        s1 = SourceSpec(low, delays=np.array([0.0, 4.0]), gains=np.ones(2))
        s2 = SourceSpec(high, delays=np.array([4.0, 0.0]), gains=np.ones(2))
        truth = mix([s1, s2], white_noise(rng, n, RATE, 2), snr_db=np.inf)
        spec = analyze(truth.mixture, CFG)
        params = ClusterParams(
            pairs=((0, 1),),
            tdoa=np.array([[-4.0], [4.0]]),
            variance=np.full((2, spec.freq_count), 0.05),
            prior=np.array([0.5, 0.5]),
        )
        masks, _ = e_step(spec, params)
        # dry bands 0-2 kHz and 2-4 kHz map to STFT bins 0-32 and 32-64
        low_band = slice(2, 30)
        high_band = slice(34, 62)
        assert masks.masks[0][low_band].mean() > 0.9
        assert masks.masks[1][high_band].mean() > 0.9

    def test_posteriors_sum_to_one(self):
        rng = np.random.default_rng(11)
        truth = _two_source_scene(rng, 5.0)
        spec = analyze(truth.mixture, CFG)
        params = init_params(spec, 3, GRID)
        masks, _ = e_step(spec, params)
        np.testing.assert_allclose(masks.masks.sum(axis=0), 1.0, atol=1e-12)


class TestMStep:
    def test_all_mass_on_first_source(self):
        rng = np.random.default_rng(12)
        _, spec = _two_channel_scene(rng, 3.0)
        params = init_params(spec, 2, GRID)
        from maskbeam.spatial import PosteriorMasks

        hard = np.zeros((2, spec.freq_count, spec.frame_count))
        hard[0] = 1.0
        new = m_step(spec, PosteriorMasks(hard), params, GRID)
        np.testing.assert_array_equal(new.prior, [1.0, 0.0])

    def test_oracle_posteriors_recover_tdoa(self):
        rng = np.random.default_rng(13)
        d = 3.3
        _, spec = _two_channel_scene(rng, d)
        params = init_params(spec, 1, GRID)
        from maskbeam.spatial import PosteriorMasks

        ones = np.ones((1, spec.freq_count, spec.frame_count))
        new = m_step(spec, PosteriorMasks(ones), params, GRID)
        assert abs(new.tdoa[0, 0] - (-d)) < 0.1

    def test_uniform_posteriors_give_equal_priors(self):
        rng = np.random.default_rng(14)
        truth = _two_source_scene(rng, 5.0)
        spec = analyze(truth.mixture, CFG)
        params = init_params(spec, 2, GRID)
        from maskbeam.spatial import PosteriorMasks

        uniform = np.full((2, spec.freq_count, spec.frame_count), 0.5)
        new = m_step(spec, PosteriorMasks(uniform), params, GRID)
        np.testing.assert_allclose(new.prior, [0.5, 0.5], atol=1e-12)


class TestRunEm:
    def test_trace_non_decreasing(self):
        rng = np.random.default_rng(15)
        for _ in range(2):
            truth = _two_source_scene(rng, 5.0)
            spec = analyze(truth.mixture, CFG)
            result = run_em(spec, n_sources=2, n_iters=20, tdoa_grid=GRID)
            ll = np.array(result.trace.log_likelihood)
            assert ll.size == 21
            assert np.all(np.diff(ll) >= -1e-8)

    def test_single_iteration_matches_manual_sequence(self):
        rng = np.random.default_rng(16)
        _, spec = _two_channel_scene(rng, 4.0, noise_snr=10.0)
        result = run_em(spec, n_sources=2, n_iters=1, tdoa_grid=GRID)
        params = init_params(spec, 2, GRID)
        masks, ll0 = e_step(spec, params)
        params = m_step(spec, masks, params, GRID)
        masks, ll1 = e_step(spec, params)
        np.testing.assert_array_equal(result.posteriors.masks, masks.masks)
        np.testing.assert_allclose(result.trace.log_likelihood, [ll0, ll1])

    def test_two_source_mask_beats_080_hit_rate(self):
        rng = np.random.default_rng(17)
        truth = _two_source_scene(rng, 5.0)
        spec = analyze(truth.mixture, CFG)
        result = run_em(spec, n_sources=2, n_iters=20, tdoa_grid=GRID)
        images = [analyze(im, CFG) for im in truth.source_images]
        dominance = np.abs(images[0].bins[0]) > np.abs(images[1].bins[0])
        k = int(np.argmin(np.abs(result.params.tdoa[:, 0] - (-5.0))))
        mask = result.posteriors.masks[k]
        assert np.mean((mask > 0.5) == dominance) > 0.8

    def test_noiseless_single_source_tdoa_within_tenth_sample(self):
        rng = np.random.default_rng(18)
        for d in (2.2, 4.7):
            _, spec = _two_channel_scene(rng, d)
            result = run_em(spec, n_sources=1, n_iters=10, tdoa_grid=GRID)
            assert abs(result.params.tdoa[0, 0] - (-d)) < 0.1

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(19)
        truth = _two_source_scene(rng, 5.0)
        spec = analyze(truth.mixture, CFG)
        base = init_params(spec, 2, GRID)
        swapped = ClusterParams(
            pairs=base.pairs,
            tdoa=base.tdoa[::-1].copy(),
            variance=base.variance[::-1].copy(),
            prior=base.prior[::-1].copy(),
        )
        params_a, params_b = base, swapped
        for _ in range(5):
            masks_a, _ = e_step(spec, params_a)
            masks_b, _ = e_step(spec, params_b)
            np.testing.assert_allclose(masks_a.masks, masks_b.masks[::-1], atol=1e-12)
            params_a = m_step(spec, masks_a, params_a, GRID)
            params_b = m_step(spec, masks_b, params_b, GRID)

    def test_nearest_zero_tdoa_selected_as_target(self):
        rng = np.random.default_rng(20)
        s1 = SourceSpec(white_noise(rng, 6000, RATE), delays=np.array([2.0, 2.1]), gains=np.ones(2))
        s2 = SourceSpec(white_noise(rng, 6000, RATE), delays=np.array([2.0, 8.0]), gains=np.ones(2))
        truth = mix([s1, s2], white_noise(rng, 6000, RATE, 2), snr_db=15.0)
        result = run_em(analyze(truth.mixture, CFG), 2, 15, GRID)
        chosen = result.params.tdoa[result.target_index, 0]
        other = result.params.tdoa[1 - result.target_index, 0]
        assert abs(chosen) < abs(other)

    def test_pair_pooling_runs(self):
        rng = np.random.default_rng(21)
        src = SourceSpec(white_noise(rng, 4000, RATE), delays=np.array([0.0, 2.0, 4.0]),
                         gains=np.ones(3))
        truth = mix([src], white_noise(rng, 4000, RATE, 3), snr_db=20.0)
        spec = analyze(truth.mixture, CFG)
        result = run_em(spec, 1, 5, GRID, pairs=((0, 1), (0, 2)))
        assert result.params.tdoa.shape == (1, 2)
        assert abs(result.params.tdoa[0, 0] - (-2.0)) < 0.3
        assert abs(result.params.tdoa[0, 1] - (-4.0)) < 0.3
        ll = np.array(result.trace.log_likelihood)
        assert np.all(np.diff(ll) >= -1e-8)
