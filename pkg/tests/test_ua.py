import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beaconlab.ua import (
    Reason,
    UaRecord,
    UndefinedRatioError,
    Verdict,
    VersionRange,
    VulnDb,
    classify,
    compare_versions,
    parse_user_agent,
    ratio_series,
    read_ua_log,
    unique_ua_growth,
    vulnerability_ratio,
    write_ua_log,
)

FIXTURE_DB = VulnDb.from_pairs([("examplebrowser", "1.0", "2.0")])


class TestParseUserAgent:
    def test_empty(self):
        assert parse_user_agent("") == ()

    def test_slash_token_and_paren_components(self):
        # hand-traced: slash token outside parens, versioned fragment inside,
        # versionless paren fragment dropped
        tokens = parse_user_agent("ExampleBrowser/2.0 (CoolOS; libfoo 1.2)")
        assert tokens == (("examplebrowser", "2.0"), ("libfoo", "1.2"))

    def test_versionless_bare_token(self):
        assert parse_user_agent("SoloBrowser") == (("solobrowser", None),)

    def test_multiple_slash_tokens(self):
        tokens = parse_user_agent("Alpha/1.0 Beta/2.3.4")
        assert tokens == (("alpha", "1.0"), ("beta", "2.3.4"))

    def test_multiword_paren_name(self):
        tokens = parse_user_agent("Thing/5 (Desk OS 6.1; rv 1.9)")
        assert ("desk os", "6.1") in tokens
        assert ("rv", "1.9") in tokens

    def test_deterministic(self):
        raw = "Mixed/3.1 (a; b 2.0) Tail"
        assert parse_user_agent(raw) == parse_user_agent(raw)


class TestCompareVersions:
    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ("1.0", "2.0", -1),
            ("2.0", "2.0", 0),
            ("2.0", "2.0.0", 0),  # missing components are zero
            ("2.10", "2.9", 1),  # numeric, not lexicographic
            ("1.0a", "1.0b", -1),  # suffix falls back to lexicographic
            ("1.0", "1.0a", -1),
            ("10", "9", 1),
        ],
    )
    def test_pairs(self, a, b, expected):
        assert compare_versions(a, b) == expected
        assert compare_versions(b, a) == -expected

    def test_range_rejects_inverted(self):
        with pytest.raises(ValueError):
            VersionRange("2.0", "1.0")

    def test_open_ends(self):
        assert VersionRange(None, "2.0").contains("0.1")
        assert VersionRange("1.0", None).contains("99")
        assert not VersionRange("1.0", "2.0").contains("2.1")


class TestClassify:
    def test_missing_agent(self):
        record = UaRecord.from_raw("", 0.0)
        result = classify(record, FIXTURE_DB)
        assert result.verdict is Verdict.NOT_VULNERABLE
        assert result.reason is Reason.MISSING_AGENT

    def test_match_inside_range(self):
        record = UaRecord.from_raw("ExampleBrowser/1.5", 0.0)
        result = classify(record, FIXTURE_DB)
        assert result.verdict is Verdict.VULNERABLE
        assert result.reason is Reason.MATCHED_ENTRY

    def test_versioned_no_db_entry(self):
        record = UaRecord.from_raw("OtherThing/9.9", 0.0)
        result = classify(record, FIXTURE_DB)
        assert result.verdict is Verdict.NOT_VULNERABLE
        assert result.reason is Reason.NO_DB_MATCH

    def test_versionless_tokens(self):
        record = UaRecord.from_raw("SoloBrowser", 0.0)
        result = classify(record, FIXTURE_DB)
        assert result.verdict is Verdict.NOT_VULNERABLE
        assert result.reason is Reason.NO_VERSION

    def test_any_match_suffices(self):
        record = UaRecord.from_raw("Unknown/9.9 ExampleBrowser/1.2", 0.0)
        assert classify(record, FIXTURE_DB).verdict is Verdict.VULNERABLE

    def test_pure_function(self):
        record = UaRecord.from_raw("ExampleBrowser/1.5", 0.0)
        assert classify(record, FIXTURE_DB) == classify(record, FIXTURE_DB)


class TestVulnerabilityRatio:
    def test_all_vulnerable(self):
        assert vulnerability_ratio(10, 0) == 1.0

    def test_none_vulnerable(self):
        assert vulnerability_ratio(0, 10) == 0.0

    def test_reported_population(self):
        assert vulnerability_ratio(3106, 4973 - 3106) == pytest.approx(0.6246, abs=5e-4)

    def test_zero_denominator_is_an_error(self):
        with pytest.raises(UndefinedRatioError):
            vulnerability_ratio(0, 0)

    @given(st.integers(0, 10**6), st.integers(0, 10**6))
    def test_complement_sums_to_one(self, v, v_bar):
        if v + v_bar == 0:
            return
        assert vulnerability_ratio(v, v_bar) + vulnerability_ratio(v_bar, v) == pytest.approx(1.0)
        assert 0.0 <= vulnerability_ratio(v, v_bar) <= 1.0


def brute_force_series(records, db, window_seconds):
    """Independent oracle: group by window, classify per unique raw, count."""
    if not records:
        return []
    first = min(r.first_seen for r in records)
    last = max(r.first_seen for r in records)
    start = (first // window_seconds) * window_seconds
    points = []
    while start <= last:
        raws = {r.raw for r in records if start <= r.first_seen < start + window_seconds}
        v = sum(
            1
            for raw in raws
            if classify(UaRecord.from_raw(raw, 0.0), db).verdict is Verdict.VULNERABLE
        )
        points.append((start, v, len(raws) - v))
        start += window_seconds
    return points


class TestRatioSeries:
    def test_empty_input(self):
        assert ratio_series([], FIXTURE_DB, 900).points == ()

    def test_single_window_one_vulnerable(self):
        records = [UaRecord.from_raw("ExampleBrowser/1.5", 10.0)]
        series = ratio_series(records, FIXTURE_DB, 900)
        assert len(series.points) == 1
        assert series.points[0].ratio == 1.0

    def test_two_window_hand_fixture(self):
        # window [0, 100): vuln {eb/1.5}, not {solo}; window [100, 200): not {other/3}
        records = [
            UaRecord.from_raw("ExampleBrowser/1.5", 10.0),
            UaRecord.from_raw("ExampleBrowser/1.5", 20.0),  # duplicate, same window
            UaRecord.from_raw("SoloBrowser", 50.0),
            UaRecord.from_raw("Other/3", 150.0),
        ]
        series = ratio_series(records, FIXTURE_DB, 100)
        assert [(p.vulnerable, p.not_vulnerable) for p in series.points] == [(1, 1), (0, 1)]
        assert series.points[0].ratio == pytest.approx(0.5)

    def test_windows_contiguous(self):
        records = [UaRecord.from_raw("A/1", 0.0), UaRecord.from_raw("B/1", 2500.0)]
        series = ratio_series(records, FIXTURE_DB, 900)
        starts = [p.window_start for p in series.points]
        assert starts == [0.0, 900.0, 1800.0]

    def test_matches_brute_force_on_large_random_input(self):
        rng = random.Random(42)
        raws = (
            [f"ExampleBrowser/1.{i}" for i in range(50)]
            + [f"Other/{i}.0" for i in range(40)]
            + ["SoloBrowser", ""]
        )
        records = [
            UaRecord.from_raw(rng.choice(raws), rng.uniform(0, 9000)) for _ in range(10_000)
        ]
        series = ratio_series(records, FIXTURE_DB, 900)
        expected = brute_force_series(records, FIXTURE_DB, 900)
        assert [(p.window_start, p.vulnerable, p.not_vulnerable) for p in series.points] == expected


class TestUniqueUaGrowth:
    def test_hand_fixture(self):
        records = [
            UaRecord.from_raw("a", 0.0),
            UaRecord.from_raw("b", 10.0),
            UaRecord.from_raw("a", 120.0),
            UaRecord.from_raw("c", 150.0),
        ]
        growth = unique_ua_growth(records, 100)
        assert [count for _, count in growth] == [2, 3]

    def test_empty(self):
        assert unique_ua_growth([], 100) == []

    @settings(max_examples=60)
    @given(
        st.lists(
            st.tuples(st.sampled_from("abcdef"), st.floats(0, 5000, allow_nan=False)),
            max_size=60,
        )
    )
    def test_monotone_nondecreasing(self, pairs):
        records = [UaRecord.from_raw(raw, ts) for raw, ts in pairs]
        growth = unique_ua_growth(records, 500)
        counts = [count for _, count in growth]
        assert counts == sorted(counts)


class TestFileFormats:
    def test_db_round_trip(self, tmp_path):
        path = str(tmp_path / "db.csv")
        db = VulnDb.from_pairs(
            [("examplebrowser", "1.0", "2.0"), ("openlow", None, "3.0"), ("openhigh", "4.0", None)]
        )
        db.save(path)
        assert VulnDb.load(path) == db

    def test_ua_log_round_trip(self, tmp_path):
        path = str(tmp_path / "ua.csv")
        records = [
            UaRecord.from_raw("ExampleBrowser/1.5 (a; b 2.0)", 1.5),
            UaRecord.from_raw("with,comma/1.0", 2.0),
            UaRecord.from_raw("", 3.0),
        ]
        write_ua_log(records, path)
        assert read_ua_log(path) == records
