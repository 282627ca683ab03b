from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from duriano import frontend
from duriano.frontend import FrameFeaturePlan, PlanError, ScoreNote
from duriano.pitch import SILENCE, NoteEventSequence, NoteState


def test_expand_durations():
    assert list(frontend.expand_durations([7, 9], [2, 3])) == [7, 7, 9, 9, 9]
    assert list(frontend.expand_durations([4], [1])) == [4]
    assert list(frontend.expand_durations([1, 2, 3], [1, 1, 1])) == [1, 2, 3]
    with pytest.raises(PlanError):
        frontend.expand_durations([1, 2], [1, 0])


@given(st.lists(st.integers(0, 5), min_size=1, max_size=60))
def test_rle_inverse(values):
    ids, lengths = frontend.run_length_encode(values)
    assert list(frontend.expand_durations(ids, lengths)) == values


def test_event_ids():
    ev = NoteEventSequence([69, SILENCE, 36, 36], [1, 0, 1, 2], 0.01)
    pitch_ids, state_ids = frontend.events_to_id_frames(ev)
    assert (pitch_ids[0], state_ids[0]) == (34, 1)
    assert (pitch_ids[1], state_ids[1]) == (0, 0)
    assert (pitch_ids[3], state_ids[3]) == (1, 2)


@given(st.lists(st.floats(min_value=0.01, max_value=10), min_size=1, max_size=10), st.integers(0, 200))
def test_largest_remainder(weights, total):
    counts = frontend.largest_remainder(weights, total)
    assert counts.sum() == total
    quota = np.array(weights) * total / sum(weights)
    assert np.all(np.abs(counts - quota) < 1)


def test_positions():
    pos = frontend.frame_positions(8)
    assert pos[0] == 0 and pos[-1] == 7 / 8 and np.all(np.diff(pos) > 0)


def _notes(*spec):
    out, beat = [], Fraction(0)
    for pitch, dur in spec:
        out.append(ScoreNote(pitch, Fraction(dur), beat))
        beat += Fraction(dur)
    return out


def test_proportional_split():
    plan = frontend.score_to_plan(_notes((60, 3), (62, 2)), [5], [10], 0.02, [False])
    assert list(plan.note_pitch_ids) == [25] * 6 + [27] * 4
    assert list(plan.note_state_ids) == [1] + [2] * 5 + [1] + [2] * 3


def test_initial_consonant_silent():
    plan = frontend.score_to_plan(_notes((60, 1)), [3, 5], [5, 5], 0.1, [True, False])
    assert list(plan.note_pitch_ids[:5]) == [0] * 5 and list(plan.note_state_ids[:5]) == [0] * 5
    assert plan.note_state_ids[5] == NoteState.ONSET and plan.note_pitch_ids[5] == 60 - 35
    assert np.sum(plan.note_state_ids == NoteState.ONSET) == 1


def test_single_note_pattern():
    plan = frontend.score_to_plan(_notes((60, 1)), [5], [4], 0.04, [False])
    assert list(plan.note_state_ids) == [1, 2, 2, 2]
    assert list(plan.positions) == [0, 0.25, 0.5, 0.75]


def test_phoneme_without_note():
    with pytest.raises(PlanError, match="phoneme 1 spans no score note"):
        frontend.score_to_plan(_notes((60, 1)), [5, 6], [10, 10], 0.1, [False, False])


def test_explicit_phoneme_index():
    notes = [ScoreNote(60, Fraction(1), Fraction(0), 1), ScoreNote(64, Fraction(1), Fraction(1), 1)]
    plan = frontend.score_to_plan(notes, [3, 5], [2, 6], 123.0, [True, False])
    assert list(plan.note_pitch_ids) == [0, 0, 25, 25, 25, 29, 29, 29]


@given(st.floats(min_value=0.01, max_value=10))
def test_tempo_invariance(scale):
    notes = _notes((60, 2), (64, 1), (67, 3))
    durations = [3, 20, 9, 25]
    flags = [True, False, True, False]
    base = frontend.score_to_plan(notes, [1, 2, 3, 4], durations, 0.19, flags)
    scaled = [ScoreNote(n.pitch, n.duration * Fraction(scale), n.onset * Fraction(scale)) for n in notes]
    other = frontend.score_to_plan(scaled, [1, 2, 3, 4], durations, 0.19 / scale, flags)
    assert np.array_equal(base.note_pitch_ids, other.note_pitch_ids)
    assert np.array_equal(base.note_state_ids, other.note_state_ids)


def test_plan_validation():
    with pytest.raises(PlanError):
        FrameFeaturePlan([1], [3], [0, 0], [0, 0, 0], frontend.frame_positions(3))
    with pytest.raises(PlanError):
        FrameFeaturePlan([1], [1], [50], [0], [0.0])


def test_score_file(tmp_path):
    (tmp_path / "s.score").write_text("0\t1/2\t60\n1/2\t3/2\tSIL\n2\t1\t62\t3\n")
    notes = frontend.read_score(tmp_path / "s.score")
    assert [n.pitch for n in notes] == [60, SILENCE, 62]
    assert notes[1].duration == Fraction(3, 2) and notes[2].phoneme_index == 3
    frontend.write_score(tmp_path / "t.score", notes)
    assert frontend.read_score(tmp_path / "t.score") == notes
    (tmp_path / "bad.score").write_text("0\t1\t60\n0.5\t1\t62\n")
    with pytest.raises(PlanError):
        frontend.read_score(tmp_path / "bad.score")


def test_plan_file_round_trip(tmp_path):
    plan = frontend.score_to_plan(_notes((60, 3), (62, 2)), [5, 2], [10, 4], 0.02, [False, True],
                                  singer_id=2, role_type_id=1, phrase_id="ph")
    plan.f0_norm = frontend.f0_to_norm(np.linspace(0, 900, 14))
    frontend.save_plan(tmp_path / "p.plan", plan)
    back = frontend.load_plan(tmp_path / "p.plan")
    for name in ("phoneme_ids", "durations", "note_pitch_ids", "note_state_ids", "positions"):
        assert np.array_equal(getattr(back, name), getattr(plan, name))
    assert (back.singer_id, back.role_type_id, back.phrase_id) == (2, 1, "ph")
    assert np.allclose(back.f0_norm, plan.f0_norm, atol=1e-7)


def test_f0_norm():
    assert list(frontend.f0_to_norm([0, 300, 1200])) == [0, 0.5, 1.5]
