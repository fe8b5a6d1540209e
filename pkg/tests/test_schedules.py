import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from source_traces.errors import ConfigError, InvalidStep
from source_traces.schedules import (PAPER_ALPHAS, PAPER_N0, PRESETS, annealed, fixed, harmonic, parse_schedule,
                                     parse_schedules, rate, rates)


class TestValues:
    def test_fixed(self):
        assert fixed(0.1)(1) == 0.1
        assert fixed(0.1)(10**9, 7) == 0.1

    def test_harmonic_decays_to_floor(self):
        h = harmonic(1.0, 0.05)
        assert h(1, 1) == 1.0
        assert h(1, 4) == 0.25
        assert h(1, 20) == 0.05
        assert h(1, 1000) == 0.05

    def test_annealed_closed_form(self):
        a = annealed(0.5, 100.0)
        for n in (1, 2, 10, 1000, 10**6):
            np.testing.assert_allclose(a(n), 0.5 * 101 / (100 + n**1.1), rtol=1e-15)

    def test_annealed_starts_at_a0(self):
        for n0 in PAPER_N0:
            np.testing.assert_allclose(annealed(0.2, n0)(1), 0.2, rtol=1e-15)

    def test_worked_values(self):
        np.testing.assert_allclose(annealed(0.5, 0.0)(1000), 0.5 / 1000**1.1, rtol=1e-15)
        assert abs(annealed(0.5, 0.0)(1000) - 2.5e-4) < 1e-5
        assert harmonic(1.0, 0.01)(1, 200) == 0.01

    def test_annealed_per_state_uses_visits(self):
        a = annealed(0.5, 10.0, per_state=True)
        assert a(1000, 3) == annealed(0.5, 10.0)(3)

    def test_custom_exponent(self):
        np.testing.assert_allclose(annealed(1.0, 0.0, exponent=1.0)(8), 1 / 8)

    def test_rates_matches_rate(self):
        for s in PRESETS["paper-grid+fixed"]():
            n = np.arange(1, 500)
            np.testing.assert_allclose(rates(s, n), [rate(s, int(k)) for k in n], rtol=1e-14)


class TestInvalid:
    @pytest.mark.parametrize("n", [0, -3])
    def test_bad_global_step(self, n):
        with pytest.raises(InvalidStep):
            fixed(0.1)(n)
        with pytest.raises(InvalidStep):
            rates(fixed(0.1), [1, n])

    def test_bad_visit_count(self):
        with pytest.raises(InvalidStep):
            harmonic(1.0, 0.1)(5, 0)
        with pytest.raises(InvalidStep):
            annealed(1.0, 0.0, per_state=True)(5, 0)
        assert fixed(0.3)(5, 0) == 0.3

    @pytest.mark.parametrize("kwargs", [
        dict(kind="cosine", a0=1.0),
        dict(kind="fixed", a0=0.0),
        dict(kind="harmonic", a0=0.1, floor=0.5),
        dict(kind="annealed", a0=0.1, n0=-1.0),
    ])
    def test_bad_construction(self, kwargs):
        from source_traces.schedules import Schedule
        with pytest.raises(ConfigError):
            Schedule(**kwargs)

    @pytest.mark.parametrize("text", ["fixed", "fixed:x", "harmonic:1", "annealed:1", "linear:1:2", "fixed:1:2"])
    def test_bad_text(self, text):
        with pytest.raises(ConfigError):
            parse_schedule(text)


class TestParsing:
    @pytest.mark.parametrize("text", ["fixed:0.1", "harmonic:1:0.01", "annealed:0.5:10000",
                                      "annealed-state:0.2:100", "annealed:0.5:0:1.5"])
    def test_round_trip(self, text):
        assert str(parse_schedule(text)) == text

    def test_preset_sizes(self):
        assert len(parse_schedules("paper-grid")) == 28
        assert len(parse_schedules("fixed-grid")) == 7
        assert len(parse_schedules("harmonic-grid")) == 7
        assert len(parse_schedules("paper-grid+fixed")) == 35

    def test_paper_grid_contents(self):
        grid = parse_schedules("paper-grid")
        assert {(s.a0, s.n0) for s in grid} == {(a, n) for a in PAPER_ALPHAS for n in PAPER_N0}

    def test_list(self):
        got = parse_schedules("fixed:0.1, harmonic:1:0.1,")
        assert got == [fixed(0.1), harmonic(1.0, 0.1)]


pos = st.floats(1e-6, 10.0, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(pos, st.floats(0.0, 1e7), st.floats(0.5, 3.0), st.booleans())
def test_annealed_round_trip(a0, n0, exponent, per_state):
    s = annealed(a0, n0, exponent, per_state)
    assert parse_schedule(str(s)) == s


@settings(max_examples=100, deadline=None)
@given(pos, st.floats(0.0, 1e7), st.integers(1, 10**7), st.integers(1, 10**7))
def test_annealed_non_increasing(a0, n0, n, k):
    s = annealed(a0, n0)
    assert s(n + k) <= s(n)
    assert 0 < s(n) <= a0 * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(pos, st.floats(0.0, 1.0), st.integers(1, 10**6), st.integers(1, 10**6))
def test_harmonic_non_increasing_in_visits(a0, frac, c, k):
    s = harmonic(a0, a0 * frac)
    assert s(1, c + k) <= s(1, c)
    assert s(1, c) >= s.floor
