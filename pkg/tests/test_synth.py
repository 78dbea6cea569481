import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misrank.errors import InvalidParams
from misrank.ingest import write_financial_table
from misrank.synth import (
    SynthParams, analytic_known_fraction, company_name, generate_panel, risk_words,
    start_rate_for_prevalence, write_synthetic,
)


class TestParams:
    @pytest.mark.parametrize("kwargs", [
        {"episode_start_rate": 0.0}, {"delay_p": 1.0}, {"n_companies": 0}, {"year_range": (2005, 2000)},
        {"delay_mode": "weekly"}, {"leak_strength": 0.0}, {"episode_length_mean": 0.5},
        {"base_vocab_size": 0}, {"risk_rate": 0.2, "leak_strength": 6.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParams):
            generate_panel(SynthParams(n_companies=kwargs.pop("n_companies", 5), **kwargs))

    def test_start_rate_for_prevalence(self):
        r = start_rate_for_prevalence(0.01, 3.0)
        q = 1 / 3.0
        assert r / (r + q) == pytest.approx(0.01, rel=1e-12)


class TestAnalyticKnownFraction:
    def test_values(self):
        assert analytic_known_fraction(0.3, 1, 0) == pytest.approx(0.30, abs=1e-12)
        assert analytic_known_fraction(0.3, 2, 0) == pytest.approx(0.51, abs=1e-12)
        assert analytic_known_fraction(0.3, 3, 0) == pytest.approx(0.657, abs=1e-12)
        assert analytic_known_fraction(0.3, 1, 2) == pytest.approx(0.657, abs=1e-12)

    @given(st.floats(0.01, 0.99), st.integers(1, 10), st.integers(0, 5))
    def test_increasing_in_k(self, p, k, G):
        assert analytic_known_fraction(p, k + 1, G) > analytic_known_fraction(p, k, G)

    def test_invalid(self):
        with pytest.raises(InvalidParams):
            analytic_known_fraction(0.3, 0, 0)


class TestGeneratePanel:
    def test_shape(self, small_synth):
        params, panel, _ = small_synth
        assert len(panel) == params.n_companies * len(params.years)
        assert panel.years() == params.years

    def test_deterministic_bytes(self, tmp_path):
        params = SynthParams(n_companies=60, seed=5, text_length=30)
        paths = []
        for name in ("a", "b"):
            panel, episodes = generate_panel(params)
            paths.append(write_synthetic(tmp_path / name, panel, episodes, params))
        for key in ("panel", "episodes"):
            assert paths[0][key].read_bytes() == paths[1][key].read_bytes()
        for f in sorted(paths[0]["filings"].iterdir()):
            assert f.read_bytes() == (paths[1]["filings"] / f.name).read_bytes()

    def test_seed_changes_panel(self):
        a, _ = generate_panel(SynthParams(n_companies=30, seed=1))
        b, _ = generate_panel(SynthParams(n_companies=30, seed=2))
        assert a != b

    @pytest.mark.parametrize("mode", ["per_report", "per_episode"])
    def test_episode_truth(self, mode):
        params = SynthParams(n_companies=300, episode_start_rate=0.05, delay_mode=mode, seed=3, text_length=0)
        panel, episodes = generate_panel(params)
        covered = {}
        for e in episodes:
            assert e.start_year <= e.end_year <= e.restatement_year
            for y in range(e.start_year, e.end_year + 1):
                key = (e.company, y)
                assert key not in covered
                covered[key] = e
        positives = {r.key for r in panel if r.misstated}
        assert positives == set(covered)
        for key in positives:
            r, e = panel.get(*key), covered[key]
            assert r.label.restatement_year >= r.fiscal_year
            if mode == "per_episode":
                assert r.label.restatement_year == e.restatement_year
            else:
                assert r.label.restatement_year <= e.restatement_year
        # episodes are maximal runs: neighbours of an episode are negative
        for e in episodes:
            for y in (e.start_year - 1, e.end_year + 1):
                r = panel.get(e.company, y)
                assert r is None or not r.misstated

    def test_null_configuration_has_no_signal(self):
        """With fin_shift = 0 and leak_strength = 1 the episode process does not touch features."""
        common = dict(n_companies=80, fin_shift=0.0, leak_strength=1.0, seed=4, text_length=30)
        a, _ = generate_panel(SynthParams(episode_start_rate=0.01, **common))
        b, _ = generate_panel(SynthParams(episode_start_rate=0.4, **common))
        assert sum(r.misstated for r in a) < sum(r.misstated for r in b)
        for ra, rb in zip(a, b):
            assert ra.financials == rb.financials and ra.mdna_text == rb.mdna_text

    def test_signal_configuration_shifts_features(self):
        common = dict(n_companies=80, fin_shift=1.0, leak_strength=3.0, seed=4, text_length=30)
        a, _ = generate_panel(SynthParams(episode_start_rate=0.01, **common))
        b, _ = generate_panel(SynthParams(episode_start_rate=0.4, **common))
        assert any(ra.financials != rb.financials for ra, rb in zip(a, b))

    def test_serial_episodes_and_leakage_substrate(self):
        params = SynthParams(n_companies=2000, episode_start_rate=0.02, leak_strength=4.0, risk_rate=0.02,
                             seed=8, text_length=200)
        panel, _ = generate_panel(params)
        prev = {r.key: r.misstated for r in panel}
        after_pos = [r.misstated for r in panel if prev.get((r.company, r.fiscal_year - 1))]
        base = np.mean([r.misstated for r in panel])
        assert np.mean(after_pos) > 5 * base
        # risk vocabulary is amplified once a company has misstated
        risky = set(risk_words(params.n_risk_words))
        seen, with_hist, without = set(), [], []
        for r in panel:
            share = sum(w.rstrip(".").lower() in risky for w in r.mdna_text.split()) / params.text_length
            (with_hist if r.company in seen or r.misstated else without).append(share)
            if r.misstated:
                seen.add(r.company)
        assert np.mean(with_hist) > 2.5 * np.mean(without)

    def test_company_name_always_present(self, small_synth):
        _, panel, _ = small_synth
        for r in list(panel)[:50]:
            assert company_name(int(r.company[1:])) in r.mdna_text.lower()

    def test_write_matches_ingest_format(self, tmp_path, small_synth):
        params, panel, episodes = small_synth
        paths = write_synthetic(tmp_path, panel, episodes, params)
        write_financial_table(panel.records, tmp_path / "again.csv")
        assert paths["panel"].read_bytes() == (tmp_path / "again.csv").read_bytes()
        assert (tmp_path / "synth_params.txt").read_text().startswith("n_companies = 120\n")
