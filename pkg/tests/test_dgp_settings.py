"""Exhaustive fidelity check of the canonical 77-setting grid."""

import pytest

from causal_testbed.dgp import Knobs, N_SETTINGS, canonical_setting, diy_index

# Independent transcription of the canonical grid: one row per setting as
# "treatment-model treated-% overlap response-model alignment heterogeneity".
EXPECTED = """\
linear low penalize linear high high
polynomial low penalize exponential high none
linear low penalize linear high none
polynomial low full exponential high high
linear low penalize exponential high high
polynomial low penalize linear high high
polynomial low penalize exponential high high
polynomial low penalize exponential none high
step low penalize step high high
linear low penalize exponential low high
polynomial low penalize linear low high
polynomial low penalize exponential low high
linear high penalize exponential high high
polynomial high penalize linear high high
polynomial high penalize exponential high high
polynomial high penalize exponential none high
step high penalize step high high
linear high penalize exponential low high
polynomial high penalize linear low high
polynomial high penalize exponential low high
polynomial low penalize step low low
polynomial low penalize step low high
polynomial low penalize step high low
polynomial low penalize step high high
polynomial low penalize exponential low low
polynomial low penalize exponential high low
polynomial low full step low low
polynomial low full step low high
polynomial low full step high low
polynomial low full step high high
polynomial low full exponential low low
polynomial low full exponential low high
polynomial low full exponential high low
polynomial high penalize step low low
polynomial high penalize step low high
polynomial high penalize step high low
polynomial high penalize step high high
polynomial high penalize exponential low low
polynomial high penalize exponential high low
polynomial high full step low low
polynomial high full step low high
polynomial high full step high low
polynomial high full step high high
polynomial high full exponential low low
polynomial high full exponential low high
polynomial high full exponential high low
polynomial high full exponential high high
step low penalize step low low
step low penalize step low high
step low penalize step high low
step low penalize exponential low low
step low penalize exponential low high
step low penalize exponential high low
step low penalize exponential high high
step low full step low low
step low full step low high
step low full step high low
step low full step high high
step low full exponential low low
step low full exponential low high
step low full exponential high low
step low full exponential high high
step high penalize step low low
step high penalize step low high
step high penalize step high low
step high penalize exponential low low
step high penalize exponential low high
step high penalize exponential high low
step high penalize exponential high high
step high full step low low
step high full step low high
step high full step high low
step high full step high high
step high full exponential low low
step high full exponential low high
step high full exponential high low
step high full exponential high high
"""

# Companion hand-analysis dataset numbers for the first twenty settings.
EXPECTED_DIY = {1: 10, 2: 1, 3: 9, 4: 4, 5: 15, 6: 2, 7: 5, 8: 13, 9: 8,
                10: 14, 11: 19, 12: 12, 13: 18, 14: 20, 15: 6, 16: 17,
                17: 7, 18: 3, 19: 16, 20: 11}


def test_grid_has_77_settings():
    assert N_SETTINGS == 77


def test_every_setting_matches_expected_tuple():
    rows = EXPECTED.strip().splitlines()
    assert len(rows) == 77
    for i, row in enumerate(rows, start=1):
        tm, pct, ov, rm, al, het = row.split()
        assert canonical_setting(i) == Knobs(tm, pct, ov, rm, al, het), f"setting {i}"


def test_diy_companion_indices():
    for i in range(1, 78):
        assert diy_index(i) == EXPECTED_DIY.get(i)


def test_out_of_range_settings_rejected():
    with pytest.raises(ValueError, match="1..77"):
        canonical_setting(0)
    with pytest.raises(ValueError, match="1..77"):
        canonical_setting(78)


def test_invalid_knob_values_rejected():
    with pytest.raises(ValueError):
        Knobs("quadratic", "low", "full", "linear", "high", "none")
    with pytest.raises(ValueError):
        Knobs("linear", "mid", "full", "linear", "high", "none")
    with pytest.raises(ValueError):
        Knobs("linear", "low", "partial", "linear", "high", "none")


def test_alignment_none_only_in_settings_8_and_16():
    none_settings = [i for i in range(1, 78)
                     if canonical_setting(i).alignment == "none"]
    assert none_settings == [8, 16]


def test_heterogeneity_none_only_in_settings_2_and_3():
    none_settings = [i for i in range(1, 78)
                     if canonical_setting(i).heterogeneity == "none"]
    assert none_settings == [2, 3]
