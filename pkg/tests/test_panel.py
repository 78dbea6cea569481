import pytest
from hypothesis import given, strategies as st

from misrank.errors import DuplicateKey, InvalidLabel, UsageError
from misrank.panel import (
    MisstatementLabel, YearStats, build_panel, format_stats_table, panel_stats,
    parse_record_key, prevalence, record_key_str,
)
from misrank.synth import SynthParams, generate_panel, start_rate_for_prevalence

from conftest import rec


class TestBuildPanel:
    def test_two_distinct_records(self):
        panel = build_panel([rec("A", 2001), rec("B", 2001)])
        assert len(panel) == 2

    def test_duplicate_key(self):
        with pytest.raises(DuplicateKey):
            build_panel([rec("A", 2001), rec("A", 2001, True, 2002)])

    def test_restatement_before_fiscal_year(self):
        with pytest.raises(InvalidLabel):
            build_panel([rec("A", 2001, True, 2000)])

    def test_negative_label_cannot_carry_year(self):
        with pytest.raises(InvalidLabel):
            MisstatementLabel(False, 2003)

    def test_sorted_by_key(self):
        panel = build_panel([rec("B", 2001), rec("A", 2002), rec("A", 2001)])
        assert [r.key for r in panel] == [("A", 2001), ("A", 2002), ("B", 2001)]

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            build_panel([])

    @pytest.mark.parametrize("company", ["", " A", "A "])
    def test_company_id_whitespace(self, company):
        with pytest.raises(UsageError):
            rec(company, 2001)

    @pytest.mark.parametrize("year", [1899, 2101])
    def test_year_range(self, year):
        with pytest.raises(UsageError):
            rec("A", year)

    def test_negative_price_rejected(self):
        with pytest.raises(UsageError):
            rec("A", 2001, prcc_f=-1.0)
        with pytest.raises(UsageError):
            rec("A", 2001, csho=-2.0)

    def test_idempotent(self, small_synth):
        _, panel, _ = small_synth
        assert build_panel(panel.records, panel.label_source_tag) == panel

    def test_lookup(self, toy_panel):
        assert toy_panel.get("A", 2001).misstated
        assert toy_panel.get("Z", 2001) is None
        assert ("B", 2002) in toy_panel
        assert toy_panel.years() == [2001, 2002]
        assert toy_panel.companies() == ["A", "B"]


class TestRecordKeys:
    @given(st.from_regex(r"[A-Za-z0-9_\-]{1,12}", fullmatch=True), st.integers(1900, 2100))
    def test_roundtrip(self, company, year):
        assert parse_record_key(record_key_str((company, year))) == (company, year)


class TestPanelStats:
    def test_counts_and_totals(self, small_synth):
        _, panel, _ = small_synth
        stats = panel_stats(panel)
        assert sum(s.total for s in stats.values()) == len(panel)
        for y, s in stats.items():
            in_year = [r for r in panel if r.fiscal_year == y]
            assert s.pos == sum(r.misstated for r in in_year)
            assert s.pos + s.neg == s.total == len(in_year)

    def test_zero_positive_year_has_no_ratio(self):
        stats = panel_stats(build_panel([rec("A", 2001), rec("B", 2001), rec("A", 2002, True, 2003)]))
        assert stats[2001].ratio is None
        assert stats[2002].ratio == 0.0
        assert "2001,0,2,2,\n" in format_stats_table(stats) + "\n"

    def test_table3_ratio(self):
        # 1998 AAER row: 27 positives, 3094 negatives
        assert YearStats(1998, 27, 3094).ratio == pytest.approx(114.59, abs=0.01)
        assert "1998,27,3094,3121,114.6" in format_stats_table({1998: YearStats(1998, 27, 3094)})

    def test_prevalence_near_one_percent(self):
        params = SynthParams(n_companies=3000, episode_start_rate=start_rate_for_prevalence(0.01, 3.0),
                             text_length=0, seed=1)
        panel, _ = generate_panel(params)
        assert 0.008 <= prevalence(panel) <= 0.012
