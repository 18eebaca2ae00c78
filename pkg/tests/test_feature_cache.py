import os
import shutil

import numpy as np
import pytest

from litepath.data.feature_cache import FeatureCache
from litepath.utils.utils import StaleCacheError, ValidationError


def test_store_then_load(tmp_path):
    cache = FeatureCache(str(tmp_path))
    features = np.arange(12, dtype=float).reshape(3, 4)
    path = cache.store("slide_1", "abc", "full", features)
    assert path == os.path.join(str(tmp_path), "abc", "full", "slide_1.lpw")
    np.testing.assert_array_equal(cache.load("slide_1", "abc", "full"), features)
    assert cache.hits == 1 and cache.misses == 0


def test_other_weights_or_tier_miss(tmp_path):
    cache = FeatureCache(str(tmp_path))
    cache.store("slide_1", "abc", "shallow", np.zeros((2, 2)))
    assert cache.load("slide_1", "def", "shallow") is None
    assert cache.load("slide_1", "abc", "full") is None
    assert cache.misses == 2


def test_file_written_under_other_weights_is_stale(tmp_path):
    cache = FeatureCache(str(tmp_path))
    source = cache.store("slide_1", "abc", "full", np.zeros((2, 2)))
    target = cache.path("slide_1", "xyz", "full")
    os.makedirs(os.path.dirname(target))
    shutil.copy(source, target)
    with pytest.raises(StaleCacheError):
        cache.load("slide_1", "xyz", "full")


def test_unknown_tier(tmp_path):
    with pytest.raises(ValidationError):
        FeatureCache(str(tmp_path)).path("slide_1", "abc", "middle")


def test_slide_ids_are_sanitised(tmp_path):
    cache = FeatureCache(str(tmp_path))
    path = cache.path("a/b:c d", "abc", "full")
    assert os.path.basename(path) == "abc_d.lpw"
