import numpy as np
import pytest

from subfn.patterns import ActivationPattern, RegionIndex, RegionStats


def pattern_from_int(value: int, m: int) -> ActivationPattern:
    return ActivationPattern.from_bits([(value >> j) & 1 for j in range(m)])


def all_patterns(m: int) -> list[ActivationPattern]:
    return [pattern_from_int(i, m) for i in range(1 << m)]


def random_region_index(
    rng: np.random.Generator,
    m: int,
    n_regions: int,
    max_count: int = 10,
    errors: str = "uniform",
) -> RegionIndex:
    """Distinct random patterns with random counts and mean errors."""
    n_regions = min(n_regions, 1 << m)
    ints = rng.choice(1 << m, size=n_regions, replace=False)
    regions = {}
    for v in ints:
        count = int(rng.integers(1, max_count + 1))
        if errors == "uniform":
            err = float(rng.uniform())
        elif errors == "zero":
            err = 0.0
        else:
            err = float(errors)
        regions[pattern_from_int(int(v), m)] = RegionStats(count=count, mean_error=err)
    return RegionIndex(m=m, regions=regions)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
