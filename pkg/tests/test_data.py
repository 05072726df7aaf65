"""Volume generation, chunk protocol, DSC identities, and the disk format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaseg.autodiff import ParameterError, ShapeError
from metaseg.data import (
    FormatError,
    IntegrityError,
    VolumeTaskSource,
    chunk_indices,
    default_families,
    dsc,
    gen_volume,
    load_volume,
    make_episodes,
    mask_png,
    pair_episode,
    save_volume,
    slice_png,
)

FAMS = default_families()


@pytest.fixture(scope="module")
def vol():
    return gen_volume(FAMS, size=32, n_slices=36, seed=11)


class TestChunking:
    def test_36_slices_12_chunks_of_3(self):
        chunks = chunk_indices(36, 12)
        assert len(chunks) == 12
        assert all(c.stop - c.start == 3 for c in chunks)
        # center slice of [s, s+3) is s+1
        assert all(c.support == c.start + 1 for c in chunks)

    def test_partition_covers_every_slice_once(self):
        for n, c in [(36, 12), (37, 12), (47, 12), (12, 12), (13, 5)]:
            chunks = chunk_indices(n, c)
            seen = [k for ch in chunks for k in range(ch.start, ch.stop)]
            assert seen == list(range(n))
            sizes = [ch.stop - ch.start for ch in chunks]
            assert max(sizes) - min(sizes) <= 1

    def test_lower_median_support_for_even_chunks(self):
        chunks = chunk_indices(8, 2)  # sizes 4 and 4
        assert chunks[0].support == 1  # indices 0..3 -> lower median 1
        assert chunks[1].support == 5

    def test_too_many_chunks_rejected(self):
        with pytest.raises(ParameterError):
            chunk_indices(5, 12)

    @given(st.integers(12, 200), st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, n, c):
        chunks = chunk_indices(n, c)
        assert chunks[0].start == 0 and chunks[-1].stop == n
        for prev, nxt in zip(chunks, chunks[1:]):
            assert prev.stop == nxt.start
        for ch in chunks:
            assert ch.start <= ch.support < ch.stop


class TestGenVolume:
    def test_shapes_and_range(self, vol):
        assert vol.slices.shape == (36, 32, 32)
        assert vol.slices.dtype == np.float32
        assert vol.slices.min() >= 0.0 and vol.slices.max() <= 1.0
        assert set(vol.masks) == {f.name for f in FAMS}

    def test_masks_disjoint_across_organs(self, vol):
        total = np.zeros_like(vol.masks[FAMS[0].name], dtype=np.int64)
        for m in vol.masks.values():
            total += m
        assert total.max() <= 1

    def test_all_organs_present_midvolume(self, vol):
        mid = 18
        for name, m in vol.masks.items():
            assert m[mid].sum() > 0, name

    def test_organs_vanish_at_volume_ends(self, vol):
        for m in vol.masks.values():
            assert m[0].sum() == 0 and m[-1].sum() == 0

    def test_organ_intensity_within_band(self, vol):
        # organ pixels must sit near the family band (up to noise)
        for fam in FAMS:
            m = vol.masks[fam.name][18] > 0
            vals = vol.slices[18][m]
            lo, hi = fam.intensity
            assert lo - 0.12 <= vals.mean() <= hi + 0.12

    def test_deterministic(self):
        a = gen_volume(FAMS, 32, 12, seed=3)
        b = gen_volume(FAMS, 32, 12, seed=3)
        assert np.array_equal(a.slices, b.slices)
        for k in a.masks:
            assert np.array_equal(a.masks[k], b.masks[k])

    def test_distractors_share_band_but_not_mask(self, vol):
        # there exist pixels in a family's band that are not the organ: decoys
        fam = FAMS[0]
        k = 18
        lo, hi = fam.intensity
        in_band = (vol.slices[k] >= lo - 0.02) & (vol.slices[k] <= hi + 0.02)
        outside_mask = in_band & (vol.masks[fam.name][k] == 0)
        assert outside_mask.sum() > 10


class TestEpisodes:
    def test_protocol_counts(self, vol):
        eps = make_episodes(vol, FAMS[0].name)
        # 36 slices, 12 chunks of 3: support the middle slice, 2 queries,
        # minus chunks lost to empty masks near the ends
        assert 0 < len(eps) <= 12
        for ep in eps:
            assert 1 <= len(ep.queries) <= 2
            assert ep.support_mask.sum() > 0

    def test_missing_organ_rejected(self, vol):
        with pytest.raises(ParameterError):
            make_episodes(vol, "spleen")

    def test_pair_episode_self_reference(self):
        img = np.zeros((4, 4), np.float32)
        mask = np.eye(4, dtype=np.uint8)
        ep = pair_episode(img, mask, "x")
        assert len(ep.queries) == 1
        assert ep.queries[0][1] is ep.support_mask


class TestDsc:
    def test_identity(self):
        m = (np.random.default_rng(0).uniform(size=(8, 8)) > 0.5).astype(np.uint8)
        assert dsc(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), np.uint8)
        b = np.zeros((4, 4), np.uint8)
        a[0, 0] = 1
        b[3, 3] = 1
        assert dsc(a, b) == 0.0

    def test_both_empty_scores_one(self):
        assert dsc(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_half_overlap_hand_value(self):
        # |A|=2, |B|=2, |AnB|=1 -> 2*1/4 = 0.5
        a = np.array([[1, 1, 0, 0]])
        b = np.array([[0, 1, 1, 0]])
        assert dsc(a, b) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dsc(np.zeros((2, 2)), np.zeros((3, 3)))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a = (rng.uniform(size=(6, 6)) > 0.5).astype(np.uint8)
        b = (rng.uniform(size=(6, 6)) > 0.5).astype(np.uint8)
        assert dsc(a, b) == dsc(b, a)
        assert 0.0 <= dsc(a, b) <= 1.0


class TestPersistence:
    def test_roundtrip_bitexact(self, vol, tmp_path):
        p = save_volume(vol, tmp_path / "v.json")
        back = load_volume(p)
        assert back.volume_id == vol.volume_id
        assert np.array_equal(back.slices, vol.slices)
        assert back.slices.dtype == np.float32
        for k in vol.masks:
            assert np.array_equal(back.masks[k], vol.masks[k])
        assert [(c.start, c.stop, c.support) for c in back.chunks] == [
            (c.start, c.stop, c.support) for c in vol.chunks
        ]

    def test_truncated_payload_detected(self, vol, tmp_path):
        p = save_volume(vol, tmp_path / "v.json")
        f = tmp_path / "v.slices.bin"
        f.write_bytes(f.read_bytes()[:-17])
        with pytest.raises(FormatError, match="bytes"):
            load_volume(p)

    def test_foreign_magic_detected(self, vol, tmp_path):
        p = save_volume(vol, tmp_path / "v.json")
        f = tmp_path / "v.masks.bin"
        raw = bytearray(f.read_bytes())
        raw[:8] = b"PNGBLOBZ"
        f.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_volume(p)

    def test_bitflip_detected(self, vol, tmp_path):
        p = save_volume(vol, tmp_path / "v.json")
        f = tmp_path / "v.slices.bin"
        raw = bytearray(f.read_bytes())
        raw[100] ^= 0x01
        f.write_bytes(bytes(raw))
        with pytest.raises(IntegrityError):
            load_volume(p)

    def test_bad_version_detected(self, vol, tmp_path):
        p = save_volume(vol, tmp_path / "v.json")
        text = p.read_text().replace('"version": 1', '"version": 9')
        p.write_text(text)
        with pytest.raises(FormatError, match="version"):
            load_volume(p)


class TestPng:
    def test_slice_png_decodes(self, vol):
        raw = slice_png(vol, 18)
        assert raw[:8] == b"\x89PNG\r\n\x1a\n"
        from PIL import Image
        import io

        img = Image.open(io.BytesIO(raw))
        assert img.size == (32, 32) and img.mode == "L"

    def test_mask_png_rgba(self, vol):
        raw = mask_png(vol.masks[FAMS[0].name][18])
        from PIL import Image
        import io

        img = Image.open(io.BytesIO(raw))
        assert img.mode == "RGBA"

    def test_slice_png_range_check(self, vol):
        with pytest.raises(ParameterError):
            slice_png(vol, 99)


class TestTaskSource:
    def test_tasks_and_sampling(self, vol):
        src = VolumeTaskSource([vol])
        assert set(src.tasks) == set(vol.organs)
        rng = np.random.default_rng(0)
        eps = src.sample_pairs(src.tasks[0], 5, rng)
        assert len(eps) == 5
        for ep in eps:
            assert ep.support_mask.sum() > 0
            assert len(ep.queries) == 1
