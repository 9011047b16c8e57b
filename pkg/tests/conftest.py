import numpy as np
import pytest

from smdma import codecs, media, pipeline, ranking
from smdma.rng import stream


@pytest.fixture(scope="session")
def tiny_pairs():
    spec = media.PairSpec(size=12, edit_fraction=0.3, texture_seed=2, shapes=2)
    return [media.gen_pair(spec, seed=40 + i) for i in range(4)]


@pytest.fixture(scope="session")
def tiny_images(tiny_pairs):
    return [img for pair in tiny_pairs for img in pair]


@pytest.fixture(scope="session")
def tiny_codec(tiny_images):
    """Small trained + standardized semantic codec for module-level tests."""
    cfg = codecs.SemanticCodecConfig(height=12, width=12, channels=1, hidden=64, dim=16)
    enc, dec, losses = codecs.train_semantic(tiny_images, cfg, epochs=60, seed=5)
    codecs.standardize_features(enc, dec, tiny_images)
    return cfg, enc, dec, losses


@pytest.fixture(scope="session")
def toy_system():
    """The acceptance-grade trained system: codecs, ranking, channel codec.

    Built once per session; calibration uses eps=0.1 (one tenth of a
    feature standard deviation on the standardized scale).
    """
    spec = media.PairSpec(size=16, edit_fraction=0.35, texture_seed=7, shapes=3)
    pairs = [media.gen_pair(spec, seed=100 + i) for i in range(16)]
    images = [img for pair in pairs for img in pair]
    scfg = codecs.SemanticCodecConfig(height=16, width=16, channels=1,
                                      hidden=128, dim=32)
    enc, dec, sem_losses = codecs.train_semantic(images, scfg, epochs=300, seed=5)
    codecs.standardize_features(enc, dec, images)

    eps = 0.1
    perm = ranking.calibrate_ranking(images, enc.forward, dec.forward, eps)
    cfg = pipeline.PipelineConfig(semantic=scfg, tau=0.05, epsilon=eps, epochs=150)
    models = pipeline.Models(sem_enc=enc, sem_dec=dec)
    z_vectors = pipeline.build_training_vectors(pairs, cfg, models, perm)
    ch_enc, ch_dec = codecs.build_channel_codec(
        codecs.ChannelCodecConfig(), stream(3, "channel-init"))
    history = pipeline.train_channel(z_vectors, cfg, ch_enc, ch_dec, seed=3)
    models.ch_enc, models.ch_dec = ch_enc, ch_dec
    return {
        "pairs": pairs,
        "images": images,
        "cfg": cfg,
        "models": models,
        "perm": perm,
        "z_vectors": z_vectors,
        "sem_losses": sem_losses,
        "channel_history": history,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
