import math

import numpy as np
import pytest

from smdma import codecs, pipeline, ranking
from smdma.nnkit import mse
from smdma.rng import stream


@pytest.fixture(scope="module")
def tiny_system(tiny_codec, tiny_pairs, tiny_images):
    cfg_sem, enc, dec, _ = tiny_codec
    cfg = pipeline.PipelineConfig(semantic=cfg_sem, tau=0.05, epsilon=0.1,
                                  epochs=25, batch_size=8)
    models = pipeline.Models(sem_enc=enc, sem_dec=dec)
    perm = ranking.calibrate_ranking(tiny_images, enc.forward, dec.forward, 0.1)
    return cfg, models, perm


class TestCombinedLoss:
    def test_geometric_two_user(self):
        assert pipeline.combined_loss([4.0, 9.0]).combined == pytest.approx(6.0)

    def test_geometric_three_user(self):
        report = pipeline.combined_loss([2.0, 4.0, 8.0])
        assert report.combined == pytest.approx(4.0)

    def test_zero_annihilates(self):
        assert pipeline.combined_loss([0.0, 5.0]).combined == 0.0

    def test_gradient_matches_finite_differences(self):
        base = [4.0, 9.0]
        report = pipeline.combined_loss(base)
        eps = 1e-6
        for i in range(2):
            hi = list(base)
            lo = list(base)
            hi[i] += eps
            lo[i] -= eps
            cd = (pipeline.combined_loss(hi).combined
                  - pipeline.combined_loss(lo).combined) / (2 * eps)
            rel = abs(report.grads[i] - cd) / max(abs(report.grads[i]), abs(cd))
            assert rel < 1e-6

    def test_arithmetic_combiner(self):
        report = pipeline.combined_loss([4.0, 9.0], "arithmetic")
        assert report.combined == pytest.approx(6.5)
        assert report.grads == (0.5, 0.5)

    def test_strictly_increasing_in_each_loss(self):
        base = pipeline.combined_loss([3.0, 7.0]).combined
        assert pipeline.combined_loss([3.0, 7.5]).combined > base
        assert pipeline.combined_loss([3.5, 7.0]).combined > base

    def test_geometric_at_least_min_with_equality_iff_equal(self):
        r = stream(1, "loss")
        for _ in range(200):
            losses = r.uniform(0.1, 5.0, size=3)
            combined = pipeline.combined_loss(losses).combined
            assert combined >= losses.min() - 1e-12
        equal = pipeline.combined_loss([2.5, 2.5, 2.5]).combined
        assert equal == pytest.approx(2.5)
        assert pipeline.combined_loss([2.0, 3.0]).combined > 2.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            pipeline.combined_loss([-1.0, 2.0])


class TestTransmit:
    def test_identical_images_zero_difference_stream(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, _ = tiny_pairs[0]
        frame = pipeline.transmit(s1, s1, cfg, models, perm)
        from smdma.ortho import separate
        assert not np.any(separate(frame.mixed, cfg.basis.u2))

    def test_payload_length_is_q_times_k(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, s2 = tiny_pairs[0]
        for ratio in (0.25, 0.5, 1.0):
            cfg_r = pipeline.PipelineConfig(
                semantic=cfg.semantic, tau=cfg.tau, epsilon=cfg.epsilon, ratio=ratio)
            frame = pipeline.transmit(s1, s2, cfg_r, models, perm)
            k = math.floor(ratio * cfg.semantic.dim)
            assert frame.coded.shape == (cfg.basis.q * k,)
            assert frame.channel_uses == cfg.basis.q * k

    def test_deterministic(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, s2 = tiny_pairs[0]
        a = pipeline.transmit(s1, s2, cfg, models, perm)
        b = pipeline.transmit(s1, s2, cfg, models, perm)
        assert np.array_equal(a.coded, b.coded)
        assert a.mixed.norm_scale == b.mixed.norm_scale

    def test_calibrated_mode_requires_permutation(self, tiny_system, tiny_pairs):
        cfg, models, _ = tiny_system
        s1, s2 = tiny_pairs[0]
        with pytest.raises(ValueError, match="calibrated"):
            pipeline.transmit(s1, s2, cfg, models, None)


class TestReceive:
    def test_noiseless_full_ratio_equals_codec_bypass(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        cfg0 = pipeline.PipelineConfig(semantic=cfg.semantic, tau=0.0, ratio=1.0,
                                       epsilon=cfg.epsilon)
        for s1, s2 in tiny_pairs:
            frame = pipeline.transmit(s1, s2, cfg0, models, perm)
            for user, img in ((1, s1), (2, s2)):
                got = pipeline.receive(frame.coded, frame, user, cfg0, models)
                bypass = np.clip(models.sem_dec.forward(
                    models.sem_enc.forward(img.flat())), 0, 1)
                scale = max(np.abs(bypass).max(), 1e-12)
                assert np.abs(got.flat() - bypass).max() / scale < 1e-9

    def test_zero_delta_gives_identical_reconstructions(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, _ = tiny_pairs[0]
        frame = pipeline.transmit(s1, s1, cfg, models, perm)
        r1 = pipeline.receive(frame.coded, frame, 1, cfg, models)
        r2 = pipeline.receive(frame.coded, frame, 2, cfg, models)
        assert np.array_equal(r1.pixels, r2.pixels)

    def test_per_frame_equals_pair_calibrated(self, tiny_system, tiny_pairs):
        cfg, models, _ = tiny_system
        s1, s2 = tiny_pairs[1]
        cfg_pf = pipeline.PipelineConfig(semantic=cfg.semantic, tau=cfg.tau,
                                         ranking_mode="per_frame", epsilon=cfg.epsilon,
                                         ratio=0.5)
        frame_pf = pipeline.transmit(s1, s2, cfg_pf, models)
        pair_perm = ranking.calibrate_ranking(
            [s1, s2], models.sem_enc.forward, models.sem_dec.forward, cfg.epsilon)
        assert np.array_equal(frame_pf.perm, pair_perm)
        frame_cal = pipeline.transmit(s1, s2, pipeline.PipelineConfig(
            semantic=cfg.semantic, tau=cfg.tau, epsilon=cfg.epsilon, ratio=0.5),
            models, pair_perm)
        assert np.array_equal(frame_pf.coded, frame_cal.coded)

    def test_normalization_off_round_trips_noiselessly(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, s2 = tiny_pairs[2]
        cfg_off = pipeline.PipelineConfig(semantic=cfg.semantic, tau=0.0, ratio=1.0,
                                          epsilon=cfg.epsilon, normalize=False)
        frame = pipeline.transmit(s1, s2, cfg_off, models, perm)
        assert frame.mixed.norm_scale == 1.0
        on = pipeline.transmit(s1, s2, pipeline.PipelineConfig(
            semantic=cfg.semantic, tau=0.0, ratio=1.0, epsilon=cfg.epsilon),
            models, perm)
        assert not np.array_equal(frame.coded, on.coded)
        rec = pipeline.receive(frame.coded, frame, 2, cfg_off, models)
        bypass = np.clip(models.sem_dec.forward(models.sem_enc.forward(s2.flat())), 0, 1)
        assert np.abs(rec.flat() - bypass).max() < 1e-9

    def test_invalid_user(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        s1, s2 = tiny_pairs[0]
        frame = pipeline.transmit(s1, s2, cfg, models, perm)
        with pytest.raises(ValueError):
            pipeline.receive(frame.coded, frame, 3, cfg, models)


class TestChannelTraining:
    @pytest.fixture(scope="class")
    def z_vectors(self):
        r = stream(5, "z")
        return [r.normal(size=24) for _ in range(16)]

    def ch_codec(self, seed):
        cfg = codecs.ChannelCodecConfig(encoder_channels=(4, 8),
                                        decoder_channels=(4, 1))
        return codecs.build_channel_codec(cfg, stream(seed, "channel-init"))

    def test_zero_epochs_leaves_models(self, z_vectors, tiny_system):
        cfg, _, _ = tiny_system
        cfg0 = pipeline.PipelineConfig(semantic=cfg.semantic, epochs=0)
        enc, dec = self.ch_codec(1)
        before = [a.copy() for _, _, a in enc.parameters()]
        history = pipeline.train_channel(z_vectors, cfg0, enc, dec, seed=1)
        assert history.combined == []
        for prev, (_, _, arr) in zip(before, enc.parameters()):
            assert np.array_equal(prev, arr)

    def test_loss_halves_median_over_seeds(self, z_vectors, tiny_system):
        cfg, _, _ = tiny_system
        ratios = []
        for seed in range(5):
            enc, dec = self.ch_codec(seed)
            cfg_t = pipeline.PipelineConfig(semantic=cfg.semantic, epochs=60)
            history = pipeline.train_channel(z_vectors, cfg_t, enc, dec, seed=seed)
            ratios.append(history.combined[-1] / history.combined[0])
        assert np.median(ratios) <= 0.5

    def test_deterministic(self, z_vectors, tiny_system):
        cfg, _, _ = tiny_system
        cfg_t = pipeline.PipelineConfig(semantic=cfg.semantic, epochs=5)
        enc1, dec1 = self.ch_codec(2)
        enc2, dec2 = self.ch_codec(2)
        h1 = pipeline.train_channel(z_vectors, cfg_t, enc1, dec1, seed=9)
        h2 = pipeline.train_channel(z_vectors, cfg_t, enc2, dec2, seed=9)
        assert h1.combined == h2.combined

    def test_combiner_changes_trajectory(self, z_vectors, tiny_system):
        cfg, _, _ = tiny_system
        curves = {}
        for combiner in ("geometric", "arithmetic"):
            enc, dec = self.ch_codec(3)
            cfg_t = pipeline.PipelineConfig(semantic=cfg.semantic, epochs=8,
                                            combiner=combiner)
            curves[combiner] = pipeline.train_channel(z_vectors, cfg_t, enc, dec,
                                                      seed=4).combined
        assert curves["geometric"] != curves["arithmetic"]

    def test_end_to_end_gradient_check(self, tiny_system):
        """Finite differences through encoder, fading, decoder, geometric loss."""
        cfg, _, _ = tiny_system
        enc, dec = self.ch_codec(6)
        z = [stream(7, "z", i).normal(size=12) for i in range(3)]
        draws = pipeline.draw_channel_batch(z, (-3.0, 5.0), cfg, stream(8, "noise"))
        _, g_enc, g_dec = pipeline.channel_loss_and_grads(z, draws, "geometric",
                                                          enc, dec)
        eps = 1e-6
        worst = 0.0
        for model, grads in ((enc, g_enc), (dec, g_dec)):
            for li, name, arr in model.parameters():
                flat = arr.reshape(-1)
                gflat = grads[li][name].reshape(-1)
                for j in range(flat.size):
                    saved = flat[j]
                    flat[j] = saved + eps
                    lp = pipeline.channel_loss_and_grads(
                        z, draws, "geometric", enc, dec, want_grads=False)[0].combined
                    flat[j] = saved - eps
                    lm = pipeline.channel_loss_and_grads(
                        z, draws, "geometric", enc, dec, want_grads=False)[0].combined
                    flat[j] = saved
                    cd = (lp - lm) / (2 * eps)
                    worst = max(worst, abs(gflat[j] - cd)
                                / max(abs(gflat[j]), abs(cd), 1e-12))
        assert worst < 1e-3


class TestSweep:
    def test_record_count_is_full_factorial(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        records = pipeline.evaluate_sweep(
            tiny_pairs[:2], cfg, models, perm,
            snr_grid=[0.0, 5.0], ratio_grid=[0.5, 1.0], n_seeds=3, base_seed=1,
            sortings=("sensitivity", "random"), normalizations=("on",))
        assert len(records) == 2 * 2 * 3 * 2 * 1 * 2  # snr*ratio*seeds*users*norm*sort

    def test_byte_identical_csv_across_runs(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        def run():
            recs = pipeline.evaluate_sweep(
                tiny_pairs[:2], cfg, models, perm, [0.0], [1.0], 2, 7)
            return pipeline.records_to_csv(recs)
        assert run() == run()

    def test_random_sorting_differs_and_is_seeded(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        recs = pipeline.evaluate_sweep(
            tiny_pairs[:2], cfg, models, perm, [0.0], [0.5], 2, 11,
            sortings=("sensitivity", "random"), noiseless=True)
        sens = [r.mse for r in recs if r.sorting == "sensitivity"]
        rand = [r.mse for r in recs if r.sorting == "random"]
        assert sens != rand
        again = pipeline.evaluate_sweep(
            tiny_pairs[:2], cfg, models, perm, [0.0], [0.5], 2, 11,
            sortings=("random",), noiseless=True)
        assert [r.mse for r in again] == rand

    def test_noiseless_records_are_seed_invariant(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        recs = pipeline.evaluate_sweep(tiny_pairs[:2], cfg, models, perm,
                                       [0.0], [1.0], 3, 13, noiseless=True)
        user1 = [r.mse for r in recs if r.user == 1]
        assert len(set(user1)) == 1

    def test_csv_schema(self, tiny_system, tiny_pairs):
        cfg, models, perm = tiny_system
        recs = pipeline.evaluate_sweep(tiny_pairs[:1], cfg, models, perm,
                                       [0.0], [1.0], 1, 3)
        text = pipeline.records_to_csv(recs)
        lines = text.strip().split("\n")
        assert lines[0] == "snr_db,ratio,seed,user,sorting,normalization,mse,psnr_db,ssim"
        assert len(lines) == 1 + len(recs)
        fields = lines[1].split(",")
        assert fields[3] in ("1", "2")
        assert fields[4] == "sensitivity"
        float(fields[6])  # mse parses


class TestFeatureLoss:
    def test_feature_mse_through_identity_chain(self, tiny_system, tiny_pairs):
        """Channel-training loss target: reconstruct the mixed payload."""
        cfg, models, perm = tiny_system
        s1, s2 = tiny_pairs[0]
        frame = pipeline.transmit(s1, s2, cfg, models, perm)
        assert mse(frame.coded, frame.mixed.payload) == 0.0  # identity codec
