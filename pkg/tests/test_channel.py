import math

import numpy as np
import pytest
from scipy import special
from scipy.integrate import quad
from scipy.stats import ncx2

from smdma import channel
from smdma.errors import NumericError
from smdma.rng import stream

DEFAULTS = channel.SrParams()


class TestHyp1f1:
    @pytest.mark.parametrize("m", [0.5, 1.0, 5.0, 19.4, 120.0])
    def test_unity_at_origin(self, m):
        assert channel.hyp1f1(m, 1.0, 0.0) == 1.0

    def test_exponential_identity(self):
        assert channel.hyp1f1(1.0, 1.0, 1.0) == pytest.approx(math.e, abs=1e-12)

    def test_two_e_identity(self):
        # 1F1(2, 1, x) = (1 + x) e^x at x = 1.
        assert channel.hyp1f1(2.0, 1.0, 1.0) == pytest.approx(2 * math.e, abs=1e-10)

    @pytest.mark.parametrize("a,b,x", [(19.4, 1.0, 3.7), (19.4, 1.0, 11.0),
                                       (0.5, 2.5, 7.0), (3.0, 1.0, 0.2)])
    def test_matches_scipy(self, a, b, x):
        assert channel.hyp1f1(a, b, x) == pytest.approx(special.hyp1f1(a, b, x), rel=1e-12)

    def test_overflow_regime_raises_with_partial(self):
        with pytest.raises(NumericError) as exc:
            channel.hyp1f1(19.4, 1.0, 2000.0)
        assert exc.value.partial is not None

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            channel.hyp1f1(1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            channel.hyp1f1(1.0, -2.0, 1.0)
        with pytest.raises(ValueError):
            channel.hyp1f1(1.0, 1.0, -0.1)


class TestPdf:
    def test_omega_zero_reduces_to_exponential(self):
        p = channel.SrParams(b0=0.158, m=19.4, omega=0.0)
        assert channel.sr_pdf(0.0, p) == pytest.approx(1 / (2 * p.b0), rel=1e-15)
        for r in (0.1, 0.5, 2.0):
            expected = math.exp(-r / (2 * p.b0)) / (2 * p.b0)
            assert channel.sr_pdf(r, p) == pytest.approx(expected, rel=1e-12)

    def test_integrates_to_one(self):
        cutoff = channel.sr_tail_cutoff(DEFAULTS)
        total, _ = quad(lambda r: channel.sr_pdf(r, DEFAULTS), 0, cutoff, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_first_moment_is_2b0_plus_omega(self):
        cutoff = channel.sr_tail_cutoff(DEFAULTS)
        moment, _ = quad(lambda r: r * channel.sr_pdf(r, DEFAULTS), 0, cutoff, limit=200)
        assert moment == pytest.approx(1.606, abs=1e-4)
        assert DEFAULTS.mean_power == pytest.approx(1.606)

    def test_non_negative(self):
        for r in np.linspace(0, 10, 101):
            assert channel.sr_pdf(float(r), DEFAULTS) >= 0.0

    def test_negative_r_rejected(self):
        with pytest.raises(ValueError):
            channel.sr_pdf(-0.5, DEFAULTS)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            channel.SrParams(b0=0.0)
        with pytest.raises(ValueError):
            channel.SrParams(m=-1.0)


class TestSampler:
    def test_mean_matches_moment(self):
        samples = channel.sr_sample(100_000, DEFAULTS, seed_or_rng=42)
        assert samples.mean() == pytest.approx(1.606, abs=0.02)

    def test_ks_against_quadrature_cdf(self):
        samples = channel.sr_sample(100_000, DEFAULTS, seed_or_rng=42)
        grid, cdf = channel.sr_cdf_grid(DEFAULTS)
        ks = channel.ks_statistic(samples, grid, cdf)
        assert ks < 1.63 / math.sqrt(samples.size)

    def test_large_m_approaches_rician(self):
        p = channel.SrParams(b0=0.158, m=1e6, omega=1.29)
        samples = channel.sr_sample(20_000, p, seed_or_rng=7)
        # Power of a deterministic LOS plus complex scatter is scaled
        # noncentral chi-square with 2 dof.
        model = ncx2.cdf(np.sort(samples) / p.b0, 2, p.omega / p.b0)
        n = samples.size
        ks = max(np.abs(np.arange(1, n + 1) / n - model).max(),
                 np.abs(np.arange(0, n) / n - model).max())
        assert ks < 1.63 / math.sqrt(n)

    def test_degenerate_limit_concentrates_at_omega(self):
        p = channel.SrParams(b0=1e-9, m=1e9, omega=1.29)
        samples = channel.sr_sample(5_000, p, seed_or_rng=3)
        assert samples.mean() == pytest.approx(1.29, abs=1e-3)
        assert samples.std() < 1e-3

    def test_bit_identical_streams(self):
        a = channel.sr_sample(1000, DEFAULTS, seed_or_rng=11)
        b = channel.sr_sample(1000, DEFAULTS, seed_or_rng=11)
        assert np.array_equal(a, b)

    def test_n_validation(self):
        with pytest.raises(ValueError):
            channel.sr_sample(0, DEFAULTS, seed_or_rng=1)


class TestApplyChannel:
    def test_infinite_snr_awgn_is_identity(self):
        rng = stream(1, "apply")
        y = rng.normal(size=64)
        real = channel.realize_channel("awgn_only", math.inf, DEFAULTS, rng)
        assert np.array_equal(channel.apply_channel(y, real, rng), y)

    def test_zero_db_unit_noise_variance(self):
        rng = stream(2, "apply")
        real = channel.realize_channel("awgn_only", 0.0, DEFAULTS, rng)
        assert real.sigma2 == 1.0
        assert real.gain == 1.0

    def test_determinism_oracle_reproduces_rng_path(self):
        """Independent re-derivation of the stream and draw order."""
        seed = 29
        y = stream(seed, "payload").normal(size=48)
        rng = stream(seed, "frame")
        real = channel.realize_channel("sr_fading", 4.0, DEFAULTS, rng)
        out = channel.apply_channel(y, real, rng)

        # Oracle: same stream; gamma draw, two scatter normals, then the
        # noise vector, exactly as documented.
        oracle = stream(seed, "frame")
        p = DEFAULTS
        los = math.sqrt(oracle.gamma(shape=p.m, scale=p.omega / p.m, size=1)[0])
        z_re = oracle.normal(0.0, math.sqrt(p.b0), size=1)[0]
        z_im = oracle.normal(0.0, math.sqrt(p.b0), size=1)[0]
        gain = (los + z_re) ** 2 + z_im ** 2
        sigma2 = 10.0 ** (-4.0 / 10.0)
        noise = oracle.normal(0.0, math.sqrt(sigma2), size=48)
        assert gain == real.gain
        assert np.array_equal(out, math.sqrt(gain) * y + noise)

    def test_empirical_snr_within_half_db(self):
        rng = stream(3, "apply")
        target = 7.0
        noise_energy = 0.0
        count = 0
        for _ in range(1000):
            y = np.ones(128)
            real = channel.realize_channel("awgn_only", target, DEFAULTS, rng)
            out = channel.apply_channel(y, real, rng)
            noise_energy += np.sum((out - y) ** 2)
            count += y.size
        measured = -10.0 * math.log10(noise_energy / count)
        assert abs(measured - target) < 0.2

    def test_empty_sequence_rejected(self):
        rng = stream(4, "apply")
        real = channel.realize_channel("awgn_only", 0.0, DEFAULTS, rng)
        with pytest.raises(ValueError):
            channel.apply_channel(np.array([]), real, rng)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            channel.realize_channel("rayleigh", 0.0, DEFAULTS, stream(5, "x"))

    def test_block_fading_one_gain_per_frame(self):
        rng = stream(6, "apply")
        gains = {channel.realize_channel("sr_fading", 0.0, DEFAULTS, rng).gain
                 for _ in range(10)}
        assert len(gains) == 10  # fresh draw each frame
