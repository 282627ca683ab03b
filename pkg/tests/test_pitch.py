import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duriano import pitch
from duriano.dsp import AudioBuffer
from duriano.pitch import SILENCE, NoteEventSequence, NoteState, PitchContour


def sine(freq, seconds=1.0, sr=44100):
    t = np.arange(int(seconds * sr)) / sr
    return 0.5 * np.sin(2 * np.pi * freq * t)


def test_hz_to_midi_anchors():
    assert pitch.hz_to_midi(440) == 69.0
    assert pitch.hz_to_midi(261.6256) == pytest.approx(60.0, abs=1e-3)
    assert pitch.hz_to_midi(880) == 81.0
    with pytest.raises(pitch.PitchError):
        pitch.hz_to_midi(0)


@given(st.floats(min_value=20, max_value=5000))
def test_midi_round_trip(f):
    assert pitch.midi_to_hz(pitch.hz_to_midi(f)) == pytest.approx(f)


def test_sine_440():
    c = pitch.extract_f0(AudioBuffer(sine(440)))
    assert len(c) == 100
    assert abs(np.median(c.f0[c.voiced]) - 440) < 1
    assert np.all(c.voiced)
    assert np.ptp(c.f0) < 0.01


def test_silence_unvoiced():
    assert np.all(pitch.extract_f0(AudioBuffer(np.zeros(44100))).f0 == 0)


def test_octave_step():
    c = pitch.extract_f0(AudioBuffer(np.concatenate([sine(440, 0.5), sine(880, 0.5)])))
    ideal = np.where(np.arange(100) < 50, 440.0, 880.0)
    off = np.abs(c.f0 - ideal) > 5
    # only frames at the 440 -> 880 switch may miss
    assert off.sum() <= 3 and np.all(np.flatnonzero(off) >= 48) and np.all(np.flatnonzero(off) <= 52)


def test_extract_f0_errors():
    with pytest.raises(pitch.PitchError):
        pitch.extract_f0(AudioBuffer(np.zeros(100)))
    with pytest.raises(pitch.PitchError):
        pitch.extract_f0(AudioBuffer(np.zeros(44100)), fmin=500, fmax=100)


def test_extract_f0_deterministic():
    x = AudioBuffer(sine(330) + 0.01 * np.random.default_rng(0).standard_normal(44100))
    assert np.array_equal(pitch.extract_f0(x).f0, pitch.extract_f0(x).f0)


def test_step_contour_two_runs():
    f0 = np.concatenate([np.full(100, 261.6), np.full(100, 293.7)])
    ev = pitch.segment_notes(PitchContour(f0, 0.01))
    assert ev.runs() == [(0, 100, 60), (100, 100, 62)]
    assert np.sum(ev.states == NoteState.ONSET) == 2
    assert ev.states[0] == NoteState.ONSET and ev.states[100] == NoteState.ONSET


def test_unvoiced_contour_all_silence():
    ev = pitch.segment_notes(PitchContour(np.zeros(30), 0.01))
    assert np.all(ev.pitches == SILENCE) and np.all(ev.states == NoteState.SILENCE)


def test_octave_glitch_merged():
    f0 = np.full(60, pitch.midi_to_hz(60))
    f0[30:32] *= 2
    ev = pitch.segment_notes(PitchContour(f0, 0.01), min_duration=0.05)
    assert ev.runs() == [(0, 60, 60)]


@settings(max_examples=40)
@given(st.lists(st.floats(min_value=0, max_value=2000), min_size=1, max_size=80))
def test_events_always_valid(values):
    f0 = np.array([v if v > 40 else 0.0 for v in values])
    ev = pitch.segment_notes(PitchContour(f0, 0.01))
    voiced = ev.pitches != SILENCE
    assert np.all((ev.pitches[voiced] >= 36) & (ev.pitches[voiced] <= 84))
    for start, _, p in ev.runs():
        if p != SILENCE:
            assert ev.states[start] == NoteState.ONSET
    # the constructor re-validates every invariant
    NoteEventSequence(ev.pitches, ev.states, ev.hop)


def test_sequence_validation():
    with pytest.raises(pitch.PitchError):
        NoteEventSequence([60, 60], [NoteState.SILENCE, NoteState.SUSTAIN], 0.01)
    with pytest.raises(pitch.PitchError):
        NoteEventSequence([60, 62], [NoteState.ONSET, NoteState.SUSTAIN], 0.01)
    with pytest.raises(pitch.PitchError):
        NoteEventSequence([90], [NoteState.ONSET], 0.01)


def test_resized():
    ev = NoteEventSequence.from_frame_pitches([SILENCE, 60, 60], 0.01)
    assert len(ev.resized(2)) == 2
    longer = ev.resized(5)
    assert list(longer.pitches) == [SILENCE, 60, 60, 60, 60]
    assert longer.states[-1] == NoteState.SUSTAIN


def test_note_file_round_trip(tmp_path):
    ev = NoteEventSequence.from_frame_pitches([SILENCE, 60, 60, 62, SILENCE], 0.01)
    pitch.write_note_events(tmp_path / "a.notes", ev)
    text = (tmp_path / "a.notes").read_text()
    assert text.splitlines()[1] == "1\t60\tonset"
    back = pitch.read_note_events(tmp_path / "a.notes", 0.01)
    assert np.array_equal(back.pitches, ev.pitches) and np.array_equal(back.states, ev.states)


def test_transcribe_sine():
    contour, events = pitch.transcribe(AudioBuffer(sine(pitch.midi_to_hz(57))))
    assert len(contour) == len(events)
    assert events.runs() == [(0, 100, 57)]
