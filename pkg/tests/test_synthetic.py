import numpy as np
import pytest

from litepath.core.numerics import SeededRng
from litepath.data.synthetic import SyntheticCohortSpec, class_patterns, generate_cohort, sample_patches
from litepath.utils.utils import ValidationError


def small_spec(**overrides):
    values = dict(n_slides=40, min_patches=20, max_patches=60, image_size=8, seed=3)
    values.update(overrides)
    return SyntheticCohortSpec(**values)


def test_generation_is_deterministic():
    a = generate_cohort(small_spec())
    b = generate_cohort(small_spec())
    assert [s.slide_id for s in a.all()] == [s.slide_id for s in b.all()]
    assert [s.label for s in a.all()] == [s.label for s in b.all()]
    np.testing.assert_array_equal(a.test[0].read_all(), b.test[0].read_all())
    other = generate_cohort(small_spec(seed=4))
    assert not np.array_equal(other.test[0].read_all()[:1], a.test[0].read_all()[:1])


def test_stratified_split_sizes():
    splits = generate_cohort(small_spec())
    assert (len(splits.train), len(splits.val), len(splits.test)) == (28, 4, 8)
    for name in ("train", "val", "test"):
        labels = {s.label for s in splits.split(name)}
        assert labels == {0, 1}
    with pytest.raises(ValidationError):
        splits.split("holdout")


def test_too_few_slides_per_class():
    with pytest.raises(ValidationError):
        generate_cohort(small_spec(n_slides=10))


def test_slides_of_a_case_stay_together():
    splits = generate_cohort(small_spec(slides_per_case=2))
    where = {}
    for name in ("train", "val", "test"):
        for slide in splits.split(name):
            where.setdefault(slide.case_id, set()).add((name, slide.label))
    assert len(where) == 20
    assert all(len(places) == 1 for places in where.values())


def test_patch_counts_and_lesion_mask():
    for slide in generate_cohort(small_spec()).all():
        assert 20 <= slide.n_patches <= 60
        mask = slide.lesion_mask
        start, stop = slide.lesion
        assert mask.sum() == stop - start == max(1, int(round(0.1 * slide.n_patches)))
        assert mask[start:stop].all()


def test_range_reads_agree_with_full_read():
    slide = generate_cohort(small_spec(min_patches=300, max_patches=600)).train[0]
    full = slide.read_all()
    np.testing.assert_array_equal(slide.source.read(250, 270), full[250:270])
    np.testing.assert_array_equal(slide.source.take([1, 255, 256, 299]), full[[1, 255, 256, 299]])
    chunks = np.concatenate([patches for _, patches in slide.iter_chunks(37)])
    np.testing.assert_array_equal(chunks, full)


def test_lesion_patches_carry_the_class_pattern():
    spec = small_spec(signal_strength=3.0, lesion_fraction=0.5)
    patterns = class_patterns(spec)
    slide = generate_cohort(spec).train[0]
    start, stop = slide.lesion
    patches = slide.read_all()
    own = patterns[slide.label]
    lesion_match = np.mean([np.sum(p * own) for p in patches[start:stop]])
    background = np.concatenate([patches[:start], patches[stop:]])
    background_match = np.mean([np.sum(p * own) for p in background]) if len(background) else 0.0
    assert lesion_match > background_match + 50


def test_class_patterns_shape_and_support():
    spec = small_spec()
    patterns = class_patterns(spec)
    assert patterns.shape == (2, 3, 8, 8)
    assert np.count_nonzero(patterns[0]) == 48
    assert set(np.unique(patterns)) <= {-1.0, 0.0, 1.0}


def test_sample_patches():
    slides = generate_cohort(small_spec()).train[:3]
    total = sum(s.n_patches for s in slides)
    a = sample_patches(slides, 10, SeededRng(5))
    np.testing.assert_array_equal(a, sample_patches(slides, 10, SeededRng(5)))
    assert a.shape == (10, 3, 8, 8)
    assert sample_patches(slides, total + 100, SeededRng(5)).shape[0] == total
    with pytest.raises(ValidationError):
        sample_patches([], 3, SeededRng(0))


@pytest.mark.parametrize("overrides", [
    dict(lesion_fraction=0.0),
    dict(min_patches=50, max_patches=40),
    dict(n_classes=1),
    dict(slides_per_case=0),
    dict(signal_strength=-1.0),
])
def test_spec_validation(overrides):
    with pytest.raises(ValidationError):
        small_spec(**overrides)
