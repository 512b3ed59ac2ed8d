import math
import random

import numpy as np
import pytest

from dxkit.errors import EmptyInput, InvariantViolation
from dxkit.stats import bootstrap_ci, mann_whitney_two_sided, mcnemar_two_sided


def brute_force_u(xs, ys):
    """Independent O(n*m) pair-count oracle: wins + half-ties for xs."""
    u = 0.0
    for x in xs:
        for y in ys:
            if x > y:
                u += 1.0
            elif x == y:
                u += 0.5
    return u


def reference_bootstrap(values, n_resamples, seed):
    """Second implementation: same documented resampling stream, coded
    independently with per-resample draws and a manual mean."""
    arr = [float(v) for v in values]
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(n_resamples):
        idx = rng.integers(0, len(arr), size=len(arr))
        stats.append(sum(arr[i] for i in idx) / len(arr))
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return float(lo), float(hi)


class TestBootstrap:
    def test_constant_data_degenerate_interval(self):
        lo, hi = bootstrap_ci([0.4] * 50)
        assert lo == hi  # every resample has the same mean
        assert lo == pytest.approx(0.4, abs=1e-12)

    def test_matches_independent_resampler(self):
        values = [0.1, 0.9, 0.4, 0.7, 0.2, 0.6, 0.3]
        assert bootstrap_ci(values, n_resamples=500, seed=123) == pytest.approx(
            reference_bootstrap(values, 500, 123), abs=1e-12
        )

    def test_zero_resamples_rejected(self):
        with pytest.raises(InvariantViolation):
            bootstrap_ci([1.0, 2.0], n_resamples=0)

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInput):
            bootstrap_ci([])

    def test_bounds_within_data_range(self):
        rng = random.Random(5)
        for _ in range(20):
            values = [rng.uniform(-3, 9) for _ in range(rng.randint(1, 40))]
            lo, hi = bootstrap_ci(values, seed=rng.randrange(10**6), n_resamples=200)
            assert min(values) - 1e-12 <= lo <= hi <= max(values) + 1e-12

    def test_deterministic_per_seed(self):
        values = [1.0, 2.0, 5.0]
        assert bootstrap_ci(values, seed=9) == bootstrap_ci(values, seed=9)

    def test_booleans_accepted(self):
        lo, hi = bootstrap_ci([True, False, True, True], n_resamples=100, seed=0)
        assert 0.0 <= lo <= hi <= 1.0


class TestMcNemar:
    def test_equal_discordants_give_p_one(self):
        assert mcnemar_two_sided(7, 7) == 1.0

    def test_exact_closed_form(self):
        # 2 * BinomCDF(0; 10, 1/2) = 2 / 1024
        assert mcnemar_two_sided(10, 0) == pytest.approx(2 * 0.5**10, abs=1e-15)

    def test_zero_zero_is_one(self):
        assert mcnemar_two_sided(0, 0) == 1.0

    def test_symmetric_in_b_c(self):
        for b, c in [(3, 9), (0, 5), (12, 1)]:
            assert mcnemar_two_sided(b, c) == mcnemar_two_sided(c, b)

    def test_exact_vs_brute_binomial_sum(self):
        rng = random.Random(11)
        for _ in range(30):
            b, c = rng.randint(0, 12), rng.randint(0, 12)
            n = b + c
            if n == 0:
                continue
            tail = sum(math.comb(n, i) * 0.5**n for i in range(min(b, c) + 1))
            assert mcnemar_two_sided(b, c, mode="exact") == pytest.approx(
                min(1.0, 2 * tail), abs=1e-12
            )

    def test_chi2cc_mode_reasonable(self):
        p = mcnemar_two_sided(40, 20, mode="chi2cc")
        # chi2 = (|40-20|-1)^2/60 = 361/60; cross-checked against erfc form
        assert p == pytest.approx(math.erfc(math.sqrt(361 / 60 / 2)), abs=1e-15)

    def test_auto_switches_at_25(self):
        assert mcnemar_two_sided(20, 4) == mcnemar_two_sided(20, 4, mode="exact")
        assert mcnemar_two_sided(20, 5) == mcnemar_two_sided(20, 5, mode="chi2cc")


class TestMannWhitney:
    def test_identical_samples(self):
        xs = [1.0, 2.0, 3.0]
        u, p = mann_whitney_two_sided(xs, list(xs))
        assert u == len(xs) ** 2 / 2
        assert p == pytest.approx(1.0)

    def test_complete_separation(self):
        u, p = mann_whitney_two_sided([1, 2, 3], [10, 11, 12])
        assert u == 0.0
        assert p < 0.2

    def test_u_matches_brute_force_pair_count(self):
        rng = random.Random(21)
        for _ in range(60):
            xs = [rng.randint(0, 8) / 2 for _ in range(rng.randint(1, 12))]
            ys = [rng.randint(0, 8) / 2 for _ in range(rng.randint(1, 12))]
            u, _p = mann_whitney_two_sided(xs, ys)
            assert u == pytest.approx(brute_force_u(xs, ys), abs=1e-12)

    def test_u_sum_identity(self):
        rng = random.Random(22)
        for _ in range(100):
            xs = [rng.gauss(0, 1) for _ in range(rng.randint(1, 15))]
            ys = [rng.gauss(0.5, 1) for _ in range(rng.randint(1, 15))]
            u1, _ = mann_whitney_two_sided(xs, ys)
            u2, _ = mann_whitney_two_sided(ys, xs)
            assert u1 + u2 == pytest.approx(len(xs) * len(ys), abs=1e-9)

    def test_all_identical_values_p_one(self):
        u, p = mann_whitney_two_sided([2.0, 2.0], [2.0, 2.0, 2.0])
        assert p == 1.0

    def test_empty_sample_rejected(self):
        with pytest.raises(EmptyInput):
            mann_whitney_two_sided([], [1.0])
