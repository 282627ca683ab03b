"""Monophonic f0 tracking (YIN + Viterbi) and note-event transcription."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer

MIDI_LOW = 36  # C2
MIDI_HIGH = 84  # C6
SILENCE = -1

YIN_THRESHOLD = 0.15
BINS_PER_SEMITONE = 10


class NoteState(IntEnum):
    SILENCE = 0
    ONSET = 1
    SUSTAIN = 2


_STATE_NAMES = {NoteState.SILENCE: "silence", NoteState.ONSET: "onset", NoteState.SUSTAIN: "sustain"}
_STATE_BY_NAME = {v: k for k, v in _STATE_NAMES.items()}


class PitchError(ValueError):
    pass


@dataclass
class PitchContour:
    f0: np.ndarray  # Hz per frame, 0.0 = unvoiced
    hop: float  # seconds

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        if np.any(self.f0 < 0):
            raise PitchError("f0 must be non-negative")

    def __len__(self):
        return len(self.f0)

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


@dataclass(frozen=True)
class NoteEvent:
    pitch: int  # MIDI number or SILENCE
    state: NoteState


@dataclass
class NoteEventSequence:
    """Per-frame note events, stored column-wise."""

    pitches: np.ndarray
    states: np.ndarray
    hop: float

    def __post_init__(self):
        self.pitches = np.asarray(self.pitches, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.pitches.shape != self.states.shape or self.pitches.ndim != 1:
            raise PitchError("pitches and states must be equal-length 1-D arrays")
        silent = self.states == NoteState.SILENCE
        if np.any(silent != (self.pitches == SILENCE)):
            raise PitchError("state is silence exactly when pitch is SILENCE")
        voiced = ~silent
        bad = voiced & ((self.pitches < MIDI_LOW) | (self.pitches > MIDI_HIGH))
        if np.any(bad):
            raise PitchError(f"pitch outside [{MIDI_LOW}, {MIDI_HIGH}]")
        if np.any(~np.isin(self.states, list(NoteState))):
            raise PitchError("unknown note state")
        sustain = np.flatnonzero(self.states == NoteState.SUSTAIN)
        if sustain.size and (
            sustain[0] == 0
            or np.any(self.pitches[sustain - 1] != self.pitches[sustain])
        ):
            raise PitchError("sustain must continue the previous frame's note")

    def __len__(self):
        return len(self.pitches)

    def __iter__(self):
        for p, s in zip(self.pitches, self.states):
            yield NoteEvent(int(p), NoteState(int(s)))

    @classmethod
    def from_frame_pitches(cls, pitches, hop: float) -> "NoteEventSequence":
        """Build events from per-frame MIDI (SILENCE for rests); each run starts with an onset."""
        pitches = np.asarray(pitches, dtype=np.int64)
        states = np.full(len(pitches), int(NoteState.SUSTAIN))
        states[pitches == SILENCE] = NoteState.SILENCE
        starts = np.ones(len(pitches), dtype=bool)
        starts[1:] = pitches[1:] != pitches[:-1]
        states[starts & (pitches != SILENCE)] = NoteState.ONSET
        return cls(pitches, states, hop)

    def runs(self) -> list[tuple[int, int, int]]:
        """(start_frame, length, pitch) for every run delimited by onsets or silence."""
        out = []
        for t, (p, s) in enumerate(zip(self.pitches, self.states)):
            new = (
                not out
                or s == NoteState.ONSET
                or (s == NoteState.SILENCE) != (out[-1][2] == SILENCE)
            )
            if new:
                out.append([t, 1, int(p)])
            else:
                out[-1][1] += 1
        return [tuple(r) for r in out]

    def resized(self, n_frames: int) -> "NoteEventSequence":
        """Truncate, or pad by continuing the last event."""
        if n_frames <= len(self):
            return NoteEventSequence(self.pitches[:n_frames], self.states[:n_frames], self.hop)
        extra = n_frames - len(self)
        last_p = int(self.pitches[-1]) if len(self) else SILENCE
        last_s = NoteState.SILENCE if last_p == SILENCE else NoteState.SUSTAIN
        return NoteEventSequence(
            np.concatenate([self.pitches, np.full(extra, last_p)]),
            np.concatenate([self.states, np.full(extra, int(last_s))]),
            self.hop,
        )


def hz_to_midi(f0):
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 <= 0):
        raise PitchError("frequency must be positive")
    out = 69.0 + 12.0 * np.log2(f0 / 440.0)
    return float(out) if out.ndim == 0 else out


def midi_to_hz(midi):
    out = 440.0 * 2.0 ** ((np.asarray(midi, dtype=np.float64) - 69.0) / 12.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- YIN


def _yin_frames(x: np.ndarray, sr: int, hop: int, fmin: float, fmax: float):
    tau_min = max(2, int(np.floor(sr / fmax)))
    tau_max = int(np.ceil(sr / fmin))
    width = tau_max  # integration window covers the longest period
    n_frames = int(np.ceil(len(x) / hop))
    half = (width + tau_max) // 2
    frame_len = width + tau_max + 1
    starts = np.arange(n_frames) * hop - half
    if len(x) >= frame_len:
        # edge frames analyze the nearest window lying wholly inside the signal;
        # a window half in the padding biases the period estimate
        starts = np.clip(starts, 0, len(x) - frame_len)
        padded = x
    else:
        padded = np.pad(x, (half, half + width + tau_max + hop))
        starts = starts + half
    idx = starts[:, None] + np.arange(frame_len)[None, :]
    frames = padded[idx]

    # d(tau) = e0 + e_tau - 2 r(tau), computed with FFT cross-correlation
    nfft = 1 << int(np.ceil(np.log2(frame_len + width)))
    head = frames[:, :width]
    r = np.fft.irfft(
        np.conj(np.fft.rfft(head, nfft, axis=1)) * np.fft.rfft(frames, nfft, axis=1), nfft, axis=1
    )[:, : tau_max + 1]
    sq = np.cumsum(np.pad(frames**2, ((0, 0), (1, 0))), axis=1)
    taus = np.arange(tau_max + 1)
    e_tau = sq[:, taus + width] - sq[:, taus]
    e0 = e_tau[:, :1]
    diff = np.maximum(e0 + e_tau - 2.0 * r, 0.0)

    cmnd = np.ones_like(diff)
    cum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd[:, 1:] = diff[:, 1:] * taus[1:] / cum
    cmnd[~np.isfinite(cmnd)] = 1.0
    energy = e0[:, 0] / width
    return cmnd, tau_min, tau_max, energy


def _pick_period(row: np.ndarray, tau_min: int, tau_max: int, threshold: float):
    below = np.flatnonzero(row[tau_min:tau_max] < threshold)
    if below.size == 0:
        return None
    tau = tau_min + int(below[0])
    while tau + 1 < tau_max and row[tau + 1] < row[tau]:
        tau += 1
    if 0 < tau < len(row) - 1:
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        return tau + float(np.clip(shift, -0.5, 0.5))
    return float(tau)


def yin_candidates(
    audio: AudioBuffer, hop: int, fmin: float = 50.0, fmax: float = 1500.0,
    threshold: float = YIN_THRESHOLD,
) -> np.ndarray:
    """Per-frame YIN f0 estimate in Hz, 0 where no dip falls below ``threshold``."""
    x = audio.samples
    sr = audio.sample_rate
    cmnd, tau_min, tau_max, energy = _yin_frames(x, sr, hop, fmin, fmax)
    out = np.zeros(cmnd.shape[0])
    for t, row in enumerate(cmnd):
        if energy[t] < 1e-10:
            continue
        period = _pick_period(row, tau_min, tau_max, threshold)
        if period is not None:
            f = sr / period
            if fmin <= f <= fmax:
                out[t] = f
    return out


def _viterbi(cost: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Min-cost path; ``cost`` is [T, S], ``trans[i, j]`` the cost of i -> j.

    Ties resolve to the lower state index.
    """
    n_frames, n_states = cost.shape
    acc = cost[0].copy()
    back = np.zeros((n_frames, n_states), dtype=np.int64)
    for t in range(1, n_frames):
        total = acc[:, None] + trans
        back[t] = np.argmin(total, axis=0)
        acc = total[back[t], np.arange(n_states)] + cost[t]
    path = np.empty(n_frames, dtype=np.int64)
    path[-1] = int(np.argmin(acc))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def extract_f0(
    audio: AudioBuffer,
    hop: int = 441,
    fmin: float = 50.0,
    fmax: float = 1500.0,
    threshold: float = YIN_THRESHOLD,
    outlier_prob: float = 1e-3,
    jump_cost: float = 0.2,
    max_jump_cost: float = 20.0,
    voicing_cost: float = 5.0,
) -> PitchContour:
    """YIN candidates smoothed by Viterbi over 0.1-semitone bins plus an unvoiced state."""
    if not fmin < fmax:
        raise PitchError("fmin must be below fmax")
    if hop <= 0:
        raise PitchError("hop must be positive")
    if len(audio) < int(np.ceil(audio.sample_rate / fmin)):
        raise PitchError("audio shorter than one analysis window")
    cand = yin_candidates(audio, hop, fmin, fmax, threshold)

    lo = hz_to_midi(fmin)
    n_bins = int(np.floor((hz_to_midi(fmax) - lo) * BINS_PER_SEMITONE)) + 1
    bins = np.arange(n_bins)
    voiced = cand > 0
    cand_bin = np.zeros_like(cand)
    cand_bin[voiced] = (hz_to_midi(cand[voiced]) - lo) * BINS_PER_SEMITONE

    # state 0 is unvoiced, 1 + b is pitch bin b
    cost = np.empty((len(cand), n_bins + 1))
    z = (bins[None, :] - cand_bin[:, None]) / 1.5
    robust = -np.log((1 - outlier_prob) * np.exp(-0.5 * z**2) + outlier_prob)
    miss = -np.log(outlier_prob)
    cost[:, 1:] = np.where(voiced[:, None], robust, miss)
    cost[:, 0] = np.where(voiced, 8.0, 0.0)

    jump = np.minimum(jump_cost * np.abs(bins[:, None] - bins[None, :]), max_jump_cost)
    trans = np.empty((n_bins + 1, n_bins + 1))
    trans[1:, 1:] = jump
    trans[0, :] = voicing_cost
    trans[:, 0] = voicing_cost
    trans[0, 0] = 0.0

    path = _viterbi(cost, trans)
    f0 = np.zeros(len(cand))
    for t, s in enumerate(path):
        if s == 0:
            continue
        b = s - 1
        if voiced[t] and abs(cand_bin[t] - b) <= BINS_PER_SEMITONE:
            f0[t] = cand[t]
        else:
            f0[t] = midi_to_hz(lo + b / BINS_PER_SEMITONE)
    return PitchContour(f0, hop / audio.sample_rate)


# ---------------------------------------------------------------- notes


def _merge_short_runs(labels: np.ndarray, min_frames: int) -> np.ndarray:
    labels = labels.copy()
    while True:
        change = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [len(labels)]])
        lengths = ends - starts
        if len(starts) <= 1 or lengths.min() >= min_frames:
            return labels
        i = int(np.argmin(lengths))
        left = lengths[i - 1] if i > 0 else -1
        right = lengths[i + 1] if i + 1 < len(starts) else -1
        donor = i - 1 if left >= right else i + 1
        labels[starts[i] : ends[i]] = labels[starts[donor]]


def segment_notes(
    contour: PitchContour,
    min_duration: float = 0.05,
    sigma: float = 0.5,
    change_cost: float = 4.0,
    voicing_cost: float = 2.0,
    mismatch_cost: float = 10.0,
) -> NoteEventSequence:
    """Quantize a contour into per-frame note events.

    Viterbi over {silence} and MIDI 36..84 with Gaussian emissions in MIDI
    space and a fixed cost per note change; runs shorter than
    ``min_duration`` are then merged into their longer neighbor.
    """
    if len(contour) == 0:
        raise PitchError("empty contour")
    f0 = contour.f0
    voiced = f0 > 0
    midi = np.zeros_like(f0)
    midi[voiced] = hz_to_midi(f0[voiced])
    notes = np.arange(MIDI_LOW, MIDI_HIGH + 1)
    n = len(notes)

    cost = np.empty((len(f0), n + 1))
    cost[:, 0] = np.where(voiced, mismatch_cost, 0.0)
    z = (np.clip(midi, MIDI_LOW - 0.5, MIDI_HIGH + 0.5)[:, None] - notes[None, :]) / sigma
    cost[:, 1:] = np.where(voiced[:, None], 0.5 * z**2, mismatch_cost)

    trans = np.full((n + 1, n + 1), change_cost)
    np.fill_diagonal(trans, 0.0)
    trans[0, 1:] = voicing_cost
    trans[1:, 0] = voicing_cost

    path = _viterbi(cost, trans)
    min_frames = max(1, int(round(min_duration / contour.hop)))
    path = _merge_short_runs(path, min_frames)
    pitches = np.where(path == 0, SILENCE, notes[np.maximum(path - 1, 0)])
    return NoteEventSequence.from_frame_pitches(pitches, contour.hop)


def transcribe(audio: AudioBuffer, hop: int = 441, **kwargs) -> tuple[PitchContour, NoteEventSequence]:
    contour = extract_f0(audio, hop, **kwargs)
    return contour, segment_notes(contour)


def write_note_events(path: str | Path, events: NoteEventSequence) -> None:
    lines = []
    for t, ev in enumerate(events):
        sym = "SIL" if ev.pitch == SILENCE else str(ev.pitch)
        lines.append(f"{t}\t{sym}\t{_STATE_NAMES[ev.state]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_note_events(path: str | Path, hop: float) -> NoteEventSequence:
    pitches, states = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise PitchError(f"{path}:{lineno}: expected 3 tab-separated fields")
        idx, sym, state = parts
        if int(idx) != len(pitches):
            raise PitchError(f"{path}:{lineno}: frame index {idx} out of sequence")
        if state not in _STATE_BY_NAME:
            raise PitchError(f"{path}:{lineno}: unknown state {state!r}")
        pitches.append(SILENCE if sym == "SIL" else int(sym))
        states.append(int(_STATE_BY_NAME[state]))
    return NoteEventSequence(pitches, states, hop)
