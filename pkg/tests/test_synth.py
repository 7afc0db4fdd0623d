"""Renderer, augmentation, batching, splits, and the sample cache."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emphnet.errors import ChecksumError, ConfigError, VersionMismatchError
from emphnet.synth import (
    AugmentConfig,
    DataConfig,
    SyntheticSample,
    augment,
    batch_pad,
    center_crop,
    generate_dataset,
    load_sample,
    make_sentences,
    make_vocab,
    render_sentence,
    save_sample,
    split_dataset,
)

CFG = DataConfig()
VOCAB = make_vocab(CFG)


def sample(labels=(1, 5), seed=7):
    return render_sentence(list(labels), VOCAB, seed, CFG)


class TestVocab:
    def test_programs_are_distinct(self):
        sigs = {(p.shape, p.trajectory, p.color) for p in VOCAB}
        assert len(sigs) == CFG.vocab_size

    def test_vocab_size_capped(self):
        with pytest.raises(ConfigError, match="vocab_size"):
            make_vocab(DataConfig(vocab_size=13))


class TestRenderer:
    def test_deterministic(self):
        a, b = sample(), sample()
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.region_masks, b.region_masks)
        assert np.array_equal(a.motion_flags, b.motion_flags)
        assert a.labels == b.labels

    def test_seed_changes_render(self):
        assert not np.array_equal(sample(seed=7).frames, sample(seed=8).frames)

    def test_frame_range_and_quantization(self):
        s = sample()
        assert s.frames.dtype == np.float32
        assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0
        assert np.array_equal(s.frames, np.round(s.frames * 255) / 255)

    def test_length_bounds(self):
        for seed in range(10):
            s = render_sentence([3, 9, 2], VOCAB, seed, CFG)
            lo = 3 * CFG.min_gloss_frames + 4 * CFG.min_idle_frames
            hi = 3 * CFG.max_gloss_frames + 4 * CFG.max_idle_frames
            assert lo <= s.t_len <= hi

    def test_masks_follow_motion_flags(self):
        s = sample()
        per_frame = s.region_masks.reshape(s.t_len, -1).any(axis=1)
        assert np.array_equal(per_frame, s.motion_flags)
        assert s.motion_flags.any() and not s.motion_flags.all()

    def test_mask_area_within_bounds(self):
        # the informative region stays a small but workable patch
        area = CFG.render_size ** 2
        for seed in range(5):
            s = render_sentence([1, 2], VOCAB, seed, CFG)
            sizes = s.region_masks[s.motion_flags].sum(axis=(1, 2))
            assert sizes.min() >= 0.01 * area
            assert sizes.max() <= 0.25 * area

    def test_background_is_stationary_noise(self):
        # statistics over pixels the shape never visits cannot drift in time
        s = sample()
        outside = ~s.region_masks.any(axis=0)
        means = [s.frames[t, 0][outside].mean() for t in range(s.t_len)]
        stds = [s.frames[t, 0][outside].std() for t in range(s.t_len)]
        assert np.ptp(means) < 0.02
        assert np.ptp(stds) < 0.02

    def test_idle_frames_are_static(self):
        s = sample()
        idle = np.flatnonzero(~s.motion_flags)
        assert len(idle) >= 2
        for t in idle[1:]:
            assert np.array_equal(s.frames[idle[0]], s.frames[t])

    def test_background_constant_under_the_shape_sequence(self):
        # outside every mask the movie never changes, glosses or not
        s = sample()
        ever = s.region_masks.any(axis=0)
        ref = s.frames[0][:, ~ever]
        for t in range(1, s.t_len):
            assert np.array_equal(s.frames[t][:, ~ever], ref)

    def test_background_has_texture(self):
        s = sample()
        out = s.frames[0, :, ~s.region_masks[0]]
        assert out.std() > 0.01

    def test_informative_region_has_contrast(self):
        s = sample()
        t = int(np.flatnonzero(s.motion_flags)[0])
        inside = s.frames[t, :, s.region_masks[t]].mean(axis=0)
        outside = s.frames[t, :, ~s.region_masks[t]].mean(axis=0)
        assert np.abs(inside - outside).max() > 0.05

    def test_region_moves_between_frames(self):
        s = sample(labels=(1,))
        run = np.flatnonzero(s.motion_flags)
        first, last = s.region_masks[run[0]], s.region_masks[run[-1]]
        assert not np.array_equal(first, last)

    def test_rejects_bad_labels(self):
        with pytest.raises(ConfigError, match="gloss id"):
            render_sentence([0], VOCAB, 0, CFG)
        with pytest.raises(ConfigError, match="at least one"):
            render_sentence([], VOCAB, 0, CFG)


class TestAugment:
    def test_identity_configuration(self):
        s = sample()
        acfg = AugmentConfig(resize_to=CFG.render_size, crop_to=CFG.render_size,
                             hflip_prob=0.0, temporal_scale_range=0.0)
        out = augment(s, acfg, seed=0)
        assert np.array_equal(out.frames, s.frames)
        assert np.array_equal(out.region_masks, s.region_masks)
        assert np.array_equal(out.motion_flags, s.motion_flags)

    def test_flip_is_involution(self):
        s = sample()
        acfg = AugmentConfig(resize_to=CFG.render_size, crop_to=CFG.render_size,
                             hflip_prob=1.0, temporal_scale_range=0.0)
        once = augment(s, acfg, seed=1)
        twice = augment(once, acfg, seed=2)
        assert np.array_equal(twice.frames, s.frames)
        assert not np.array_equal(once.frames, s.frames)

    def test_temporal_scaling_changes_length_not_labels(self):
        s = sample()
        acfg = AugmentConfig(resize_to=CFG.render_size, crop_to=CFG.render_size,
                             hflip_prob=0.0, temporal_scale_range=0.2)
        lengths = set()
        for seed in range(12):
            out = augment(s, acfg, seed=seed)
            assert out.labels == s.labels
            assert out.frames.shape[0] == out.region_masks.shape[0] == out.motion_flags.shape[0]
            lengths.add(out.t_len)
            lo = max(4, int(round(s.t_len * 0.8)))
            hi = int(round(s.t_len * 1.2))
            assert lo <= out.t_len <= hi
        assert len(lengths) > 1

    def test_crop_shape_and_mask_alignment(self):
        s = sample()
        acfg = AugmentConfig(resize_to=32, crop_to=28, hflip_prob=0.5)
        out = augment(s, acfg, seed=3)
        assert out.frames.shape[2:] == (28, 28)
        assert out.region_masks.shape[1:] == (28, 28)
        # informative pixels remain brighter than their surroundings after crop
        t = int(np.flatnonzero(out.motion_flags)[0])
        if out.region_masks[t].any():
            inside = out.frames[t, :, out.region_masks[t]]
            outside = out.frames[t, :, ~out.region_masks[t]]
            assert abs(inside.mean() - outside.mean()) > 0.02

    def test_deterministic_per_seed(self):
        s = sample()
        acfg = AugmentConfig()
        a, b = augment(s, acfg, 9), augment(s, acfg, 9)
        assert np.array_equal(a.frames, b.frames)

    def test_center_crop_deterministic_no_flip(self):
        s = sample()
        acfg = AugmentConfig(resize_to=32, crop_to=28)
        a, b = center_crop(s, acfg), center_crop(s, acfg)
        assert np.array_equal(a.frames, b.frames)
        assert a.t_len == s.t_len
        assert a.frames.shape[2:] == (28, 28)

    def test_config_validation(self):
        with pytest.raises(ConfigError, match="crop_to"):
            AugmentConfig(resize_to=24, crop_to=28).validate()
        with pytest.raises(ConfigError, match="temporal_scale_range"):
            AugmentConfig(temporal_scale_range=0.7).validate()


class TestBatchPad:
    def test_pads_to_max(self):
        a, b = sample((1,), 0), sample((2, 3, 4), 1)
        batch = batch_pad([a, b])
        t_max = max(a.t_len, b.t_len)
        assert batch.frames.shape[:2] == (2, t_max)
        assert batch.lengths == [a.t_len, b.t_len]
        assert batch.labels == [a.labels, b.labels]
        short = min(a.t_len, b.t_len)
        i = batch.lengths.index(short)
        assert np.all(batch.frames[i, short:] == 0.0)

    def test_single_sample_no_padding(self):
        a = sample()
        batch = batch_pad([a])
        assert batch.frames.shape[1] == a.t_len
        assert np.array_equal(batch.frames[0], a.frames)

    def test_empty_batch_rejected(self):
        with pytest.raises(ConfigError, match="non-empty"):
            batch_pad([])


class TestSplit:
    def test_exact_sizes(self):
        tr, dv, te = split_dataset(100, (0.8, 0.1, 0.1), seed=0)
        assert (len(tr), len(dv), len(te)) == (80, 10, 10)

    def test_disjoint_covering(self):
        parts = split_dataset(97, (0.7, 0.2, 0.1), seed=3)
        joined = sorted(i for p in parts for i in p)
        assert joined == list(range(97))

    def test_seed_determinism(self):
        assert split_dataset(50, (0.5, 0.5), 4) == split_dataset(50, (0.5, 0.5), 4)
        assert split_dataset(50, (0.5, 0.5), 4) != split_dataset(50, (0.5, 0.5), 5)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError, match="sum to 1"):
            split_dataset(10, (0.5, 0.4), 0)

    @given(st.integers(1, 200), st.integers(0, 10))
    def test_leftovers_go_to_front(self, total, seed):
        tr, dv, te = split_dataset(total, (0.8, 0.1, 0.1), seed)
        assert len(tr) >= len(dv) >= len(te)
        assert len(tr) + len(dv) + len(te) == total


class TestSentences:
    def test_lengths_within_bounds(self):
        for s in make_sentences(50, CFG, seed=0):
            assert CFG.min_sentence <= len(s) <= CFG.max_sentence
            assert all(1 <= g <= CFG.vocab_size for g in s)

    def test_deterministic_per_index(self):
        a = make_sentences(10, CFG, seed=1)
        b = make_sentences(10, CFG, seed=1)
        assert a == b

    def test_uses_most_of_the_vocabulary(self):
        seen = {g for s in make_sentences(200, CFG, seed=2) for g in s}
        assert len(seen) == CFG.vocab_size


class TestCache:
    def test_round_trip_bitwise(self, tmp_path):
        s = sample()
        p = str(tmp_path / "s.bin")
        save_sample(p, s)
        back = load_sample(p)
        assert np.array_equal(back.frames, s.frames)
        assert np.array_equal(back.region_masks, s.region_masks)
        assert np.array_equal(back.motion_flags, s.motion_flags)
        assert back.labels == s.labels

    def test_corruption_detected(self, tmp_path):
        s = sample()
        p = str(tmp_path / "s.bin")
        save_sample(p, s)
        blob = bytearray(open(p, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(p, "wb").write(bytes(blob))
        with pytest.raises(ChecksumError, match="corrupted"):
            load_sample(p)

    def test_version_mismatch_names_both(self, tmp_path):
        s = sample()
        p = str(tmp_path / "s.bin")
        save_sample(p, s)
        blob = bytearray(open(p, "rb").read())
        blob[7:9] = (99).to_bytes(2, "little")
        blob[-32:] = __import__("hashlib").sha256(bytes(blob[:-32])).digest()
        open(p, "wb").write(bytes(blob))
        with pytest.raises(VersionMismatchError, match="99"):
            load_sample(p)

    def test_truncated_file(self, tmp_path):
        p = str(tmp_path / "s.bin")
        open(p, "wb").write(b"EMPH")
        with pytest.raises(ChecksumError):
            load_sample(p)


class TestGenerateDataset:
    def test_shapes_and_determinism(self):
        a = generate_dataset(CFG, 4, seed=11)
        b = generate_dataset(CFG, 4, seed=11)
        assert len(a) == 4
        for x, y in zip(a, b):
            assert np.array_equal(x.frames, y.frames)
            assert x.labels == y.labels

    def test_samples_differ(self):
        ds = generate_dataset(CFG, 6, seed=12)
        assert len({tuple(s.labels) for s in ds} | {s.t_len for s in ds}) > 2
