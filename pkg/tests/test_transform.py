import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flatrec import Dataset, IndexRule, RatingScale, TransformSpec
from flatrec.transform import (
    TransformError,
    apply_transform,
    format_matrix,
    percentile_value,
    position,
    smoothed_percentile_value,
    transform_item,
    transform_user,
    zscore_transform,
    zscore_values,
)

from .conftest import ALICE, BOB, FIVE_STAR

RULES = list(IndexRule)


def brute_position(x, profile, rule):
    """Scan the sorted profile for the 1-based occurrence indices of ``x``."""
    ordered = sorted(profile)
    hits = [j + 1 for j, v in enumerate(ordered) if v == x]
    if not hits:
        insert = 1
        for v in ordered:
            if v < x:
                insert += 1
        return float(insert)
    first, last = hits[0], hits[-1]
    return {IndexRule.FIRST: first, IndexRule.LAST: last, IndexRule.MEDIAN: (first + last) / 2}[rule]


def augmented_percentile(x, profile, rule, k, scale):
    """Percentile of ``x`` once ``k`` artificial ratings per level join the profile."""
    padded = list(profile) + [v for v in scale.values for _ in range(k)]
    return 100.0 * brute_position(x, padded, rule) / (len(padded) + 1)


class TestPosition:
    def test_last_occurrence(self):
        assert position(3, BOB, "last") == 2

    def test_first_occurrence(self):
        assert position(3, BOB, IndexRule.FIRST) == 1

    def test_median_of_tie_run(self):
        assert position(3, [2, 3, 3, 3, 3, 3, 5, 5, 5], "median") == 4.0

    def test_absent_value_uses_insertion_point(self):
        for rule in RULES:
            assert position(4, [2, 3, 5], rule) == 3
            assert position(1, [2, 3, 5], rule) == 1
            assert position(9, [2, 3, 5], rule) == 4

    def test_empty_profile(self):
        with pytest.raises(TransformError):
            position(3, [], "first")

    def test_oracle_on_random_profiles(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            profile = rng.integers(1, 6, size=rng.integers(1, 15)).tolist()
            x = int(rng.integers(0, 7))
            rule = RULES[rng.integers(3)]
            assert position(x, profile, rule) == brute_position(x, profile, rule)


class TestPercentile:
    def test_bob_worked_example(self):
        assert percentile_value(3, BOB, "last") == 20.0

    def test_alice_last(self):
        assert [percentile_value(x, ALICE, "last") for x in ALICE] == [20, 20, 40, 40, 70, 70, 70, 80, 90]

    def test_alice_first(self):
        expected = [100 * brute_position(x, ALICE, IndexRule.FIRST) / 10 for x in ALICE]
        assert expected == [10, 10, 30, 30, 50, 50, 50, 80, 90]
        assert [percentile_value(x, ALICE, "first") for x in ALICE] == expected

    def test_single_rating(self):
        assert percentile_value(4, [4], "first") == 50.0


class TestMatrixTransforms:
    def test_alice_bob_rows(self, alice_bob):
        vm = transform_user(alice_bob, "last")
        assert list(vm.profile("alice").values()) == [20, 20, 40, 40, 70, 70, 70, 80, 90]
        assert list(vm.profile("bob").values()) == [20, 20, 50, 50, 50, 90, 90, 90, 90]

    def test_uniform_profile_collapses(self):
        ds = Dataset([("u", f"i{j}", 3) for j in range(3)])
        for rule in RULES:
            assert len(set(transform_user(ds, rule).values)) == 1

    def test_item_orientation(self):
        ds = Dataset([("a", "x", 2), ("b", "x", 4), ("a", "y", 5)])
        vm = transform_item(ds, "last")
        assert vm[("a", "x")] == pytest.approx(100 / 3)
        assert vm[("b", "x")] == pytest.approx(200 / 3)
        assert transform_item(ds, "first")[("a", "y")] == 50.0

    def test_user_and_item_views_disagree(self):
        # "a" rates everything high, but is the only fan of item "niche"
        ds = Dataset([("a", "niche", 4), ("a", "p", 5), ("a", "q", 5), ("b", "niche", 1), ("c", "niche", 1)])
        per_user = transform_user(ds, "last")[("a", "niche")]
        per_item = transform_item(ds, "last")[("a", "niche")]
        assert per_item > per_user

    def test_matrix_matches_scalar_path(self, synthetic):
        for rule in RULES:
            vm = transform_user(synthetic, rule)
            for user in synthetic.user_ids[:20]:
                profile = synthetic.by_user[user]
                values = list(profile.values())
                for item, x in profile.items():
                    assert vm[(user, item)] == pytest.approx(percentile_value(x, values, rule), abs=1e-12)

    def test_same_keys_as_source(self, synthetic):
        vm = apply_transform(synthetic, "per:median:user")
        assert set(vm.entries) == set(synthetic.keys())


class TestSmoothed:
    def test_all_threes_last(self):
        assert smoothed_percentile_value(3, [3, 3, 3], "last", 2, FIVE_STAR) == pytest.approx(64.2857, abs=1e-4)

    def test_all_fives_last(self):
        assert smoothed_percentile_value(5, [5, 5, 5], "last", 2, FIVE_STAR) == pytest.approx(92.8571, abs=1e-4)

    def test_all_threes_median_is_centre(self):
        assert smoothed_percentile_value(3, [3, 3, 3], "median", 2, FIVE_STAR) == 50.0

    def test_k_zero_is_plain_percentile(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            profile = rng.integers(1, 6, size=rng.integers(1, 12)).tolist()
            x = profile[rng.integers(len(profile))]
            for rule in RULES:
                assert smoothed_percentile_value(x, profile, rule, 0, FIVE_STAR) == percentile_value(x, profile, rule)

    def test_matches_augmented_profile(self):
        rng = np.random.default_rng(5)
        scale = RatingScale.from_range(0.5, 4.0, 0.5)
        for _ in range(500):
            profile = rng.choice(scale.values, size=rng.integers(1, 20)).tolist()
            x = profile[rng.integers(len(profile))]
            k = int(rng.choice([0, 1, 2, 5]))
            for rule in RULES:
                got = smoothed_percentile_value(x, profile, rule, k, scale)
                assert got == pytest.approx(augmented_percentile(x, profile, rule, k, scale), abs=1e-9)

    def test_off_scale_value(self):
        with pytest.raises(Exception, match="not on the scale"):
            smoothed_percentile_value(6, [6], "last", 1, FIVE_STAR)

    def test_matrix_form(self):
        ds = Dataset([("u", f"i{j}", 3) for j in range(3)] + [("v", "i0", 5)], scale=FIVE_STAR)
        vm = apply_transform(ds, "smoothed:last:user:k=2")
        assert vm.profile("u") == pytest.approx({f"i{j}": 900 / 14 for j in range(3)})
        k0 = apply_transform(ds, "smoothed:first:user:k=0").values
        assert np.array_equal(k0, apply_transform(ds, "per:first:user").values)


class TestZScore:
    def test_population_stdev(self):
        ds = Dataset([("u", "a", 1), ("u", "b", 2), ("u", "c", 3)])
        z = zscore_values(ds, "user")
        assert z == pytest.approx([-1.2247449, 0.0, 1.2247449], abs=1e-6)

    def test_uniform_profile_maps_to_zero(self):
        ds = Dataset([("u", f"i{j}", 3) for j in range(3)] + [("v", "a", 1), ("v", "b", 5)])
        z = zscore_values(ds)
        assert z[:3].tolist() == [0, 0, 0]

    def test_shift_to_zero_minimum(self, synthetic):
        vm = zscore_transform(synthetic)
        assert vm.values.min() == 0.0
        assert vm.offset == pytest.approx(-zscore_values(synthetic).min())
        assert vm.scale_hint == (0.0, vm.values.max())

    def test_unshifted_policy(self, synthetic):
        vm = apply_transform(synthetic, "zscore:user:offset=none")
        assert vm.values.min() < 0


class TestSpecStrings:
    @pytest.mark.parametrize(
        "text",
        ["identity", "zscore:user", "zscore:item:offset=none", "per:first:user", "per:median:item",
         "smoothed:last:user:k=2", "smoothed:median:item:k=0"],
    )
    def test_round_trip(self, text):
        spec = TransformSpec.parse(text)
        assert spec.render() == text
        assert TransformSpec.parse(spec.render()) == spec

    def test_aliases(self):
        assert TransformSpec.parse("percentile:l") == TransformSpec.percentile("last")
        assert TransformSpec.parse("rating") == TransformSpec.identity()

    @pytest.mark.parametrize("bad", ["bogus", "per", "per:sideways:user", "smoothed:last:user", "per:last:k=2",
                                     "smoothed:last:user:k=-1", "identity:first"])
    def test_rejects(self, bad):
        with pytest.raises(TransformError):
            TransformSpec.parse(bad)


def test_dump_format(alice_bob):
    text = format_matrix(transform_user(alice_bob, "last"))
    lines = text.splitlines()
    assert lines[0] == "#transform=per:last:user"
    assert lines[1] == "alice\ta0\t20.0000"


# -- property tests ------------------------------------------------------------

profiles = st.lists(st.integers(1, 5), min_size=1, max_size=25)


@settings(max_examples=300, deadline=None)
@given(profiles, st.sampled_from(RULES), st.sampled_from([0, 1, 2, 5]))
def test_bounds_and_strict_monotonicity(profile, rule, k):
    vals = [smoothed_percentile_value(x, profile, rule, k, FIVE_STAR) for x in profile]
    assert all(0 < v < 100 for v in vals)
    for a, va in zip(profile, vals):
        for b, vb in zip(profile, vals):
            if a < b:
                assert va < vb


@settings(max_examples=300, deadline=None)
@given(profiles, st.integers(0, 6))
def test_rule_ordering(profile, x):
    first, median, last = (position(x, profile, r) for r in RULES)
    assert first <= median <= last


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 30), st.integers(1, 5)), min_size=1, max_size=60))
def test_rank_preservation(triples):
    ds = Dataset((f"u{u}", f"i{i}", v) for u, i, v in triples)
    for spec in ("per:first:user", "per:median:user", "per:last:user", "zscore:user"):
        vm = apply_transform(ds, spec)
        for pos in ds.user_groups():
            raw, out = ds.values[pos], vm.values[pos]
            lower, upper = np.nonzero(raw[:, None] < raw[None, :])
            assert np.all(out[lower] < out[upper])


def test_uniform_midpoint_smoothed_median_is_fifty():
    for n in range(1, 8):
        for k in range(1, 5):
            assert smoothed_percentile_value(3, [3] * n, "median", k, FIVE_STAR) == pytest.approx(50.0)
