"""Frame-aligned conditioning plans for training and score-driven synthesis."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .pitch import MIDI_HIGH, MIDI_LOW, SILENCE, NoteEventSequence, NoteState

PITCH_OFFSET = MIDI_LOW - 1  # C2 -> id 1, C6 -> id 49
N_PITCH_IDS = MIDI_HIGH - PITCH_OFFSET + 1  # 50 including silence
N_STATE_IDS = 3

PLAN_MAGIC = b"DSPC"
_PLAN_HEADER = struct.Struct("<4sIQQ")


class PlanError(ValueError):
    pass


@dataclass
class FrameFeaturePlan:
    phoneme_ids: np.ndarray
    durations: np.ndarray
    note_pitch_ids: np.ndarray
    note_state_ids: np.ndarray
    positions: np.ndarray
    singer_id: int = 0
    role_type_id: int = 0
    phrase_id: str = ""
    # baseline conditioning only: f0 / 600 clipped to [0, 1.5], 0 when unvoiced
    f0_norm: np.ndarray | None = None

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.note_pitch_ids = np.asarray(self.note_pitch_ids, dtype=np.int64)
        self.note_state_ids = np.asarray(self.note_state_ids, dtype=np.int64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.f0_norm is not None:
            self.f0_norm = np.asarray(self.f0_norm, dtype=np.float64)
        self.validate()

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())

    def validate(self):
        if len(self.phoneme_ids) != len(self.durations):
            raise PlanError("phoneme_ids and durations differ in length")
        if np.any(self.durations < 1):
            raise PlanError("every duration must be >= 1 frame")
        t = self.n_frames
        for name in ("note_pitch_ids", "note_state_ids", "positions"):
            if len(getattr(self, name)) != t:
                raise PlanError(f"{name} has {len(getattr(self, name))} frames, durations sum to {t}")
        if self.f0_norm is not None and len(self.f0_norm) != t:
            raise PlanError("f0_norm length differs from frame count")
        if np.any((self.note_pitch_ids < 0) | (self.note_pitch_ids >= N_PITCH_IDS)):
            raise PlanError("note pitch id out of range")
        if np.any((self.note_state_ids < 0) | (self.note_state_ids >= N_STATE_IDS)):
            raise PlanError("note state id out of range")

    def frame_phoneme_ids(self) -> np.ndarray:
        return expand_durations(self.phoneme_ids, self.durations)


def frame_positions(n_frames: int) -> np.ndarray:
    return np.arange(n_frames, dtype=np.float64) / n_frames


def expand_durations(ids, durations) -> np.ndarray:
    ids = np.asarray(ids)
    durations = np.asarray(durations, dtype=np.int64)
    if ids.shape[0] != durations.shape[0]:
        raise PlanError("ids and durations differ in length")
    if np.any(durations < 1):
        raise PlanError("durations must be >= 1")
    return np.repeat(ids, durations, axis=0)


def run_length_encode(values) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values)
    if values.size == 0:
        return values[:0], np.zeros(0, dtype=np.int64)
    starts = np.concatenate([[0], np.flatnonzero(values[1:] != values[:-1]) + 1])
    lengths = np.diff(np.concatenate([starts, [len(values)]]))
    return values[starts], lengths


def largest_remainder(weights, total: int) -> np.ndarray:
    """Apportion ``total`` integer units proportionally to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise PlanError("cannot apportion")
    quota = w * (total / w.sum())
    counts = np.floor(quota).astype(np.int64)
    remaining = total - int(counts.sum())
    # stable sort keeps earlier items first among equal remainders
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[:remaining]] += 1
    return counts


def events_to_id_frames(events: NoteEventSequence) -> tuple[np.ndarray, np.ndarray]:
    pitches = events.pitches
    voiced = pitches != SILENCE
    if np.any(voiced & ((pitches < MIDI_LOW) | (pitches > MIDI_HIGH))):
        raise PlanError(f"MIDI pitch outside [{MIDI_LOW}, {MIDI_HIGH}]")
    pitch_ids = np.where(voiced, pitches - PITCH_OFFSET, 0)
    return pitch_ids.astype(np.int64), events.states.astype(np.int64)


def f0_to_norm(f0_hz) -> np.ndarray:
    f0_hz = np.asarray(f0_hz, dtype=np.float64)
    return np.where(f0_hz > 0, np.clip(f0_hz / 600.0, 0.0, 1.5), 0.0)


# ---------------------------------------------------------------- scores


@dataclass(frozen=True)
class ScoreNote:
    pitch: int  # MIDI or SILENCE
    duration: Fraction  # beats
    onset: Fraction  # beats
    phoneme_index: int | None = None  # explicit manual alignment, optional

    def __post_init__(self):
        if self.duration <= 0:
            raise PlanError("note duration must be positive")
        if self.pitch != SILENCE and not MIDI_LOW <= self.pitch <= MIDI_HIGH:
            raise PlanError(f"score pitch {self.pitch} outside [{MIDI_LOW}, {MIDI_HIGH}]")

    @property
    def end(self) -> Fraction:
        return self.onset + self.duration


def read_score(path: str | Path) -> list[ScoreNote]:
    """Parse ``onset<TAB>duration<TAB>midi_or_SIL[<TAB>phoneme_index]`` lines (beats)."""
    notes = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise PlanError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields")
        try:
            onset, dur = Fraction(parts[0]), Fraction(parts[1])
            pitch = SILENCE if parts[2] == "SIL" else int(parts[2])
            ph = int(parts[3]) if len(parts) == 4 else None
            notes.append(ScoreNote(pitch, dur, onset, ph))
        except (ValueError, ZeroDivisionError) as exc:
            raise PlanError(f"{path}:{lineno}: {exc}") from None
    _check_score(notes)
    return notes


def write_score(path: str | Path, notes: list[ScoreNote]) -> None:
    lines = []
    for n in notes:
        sym = "SIL" if n.pitch == SILENCE else str(n.pitch)
        row = [str(n.onset), str(n.duration), sym]
        if n.phoneme_index is not None:
            row.append(str(n.phoneme_index))
        lines.append("\t".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_score(score):
    if not score:
        raise PlanError("empty score")
    for a, b in zip(score, score[1:]):
        if b.onset < a.end:
            raise PlanError(f"score notes overlap or are unsorted at onset {b.onset}")


OVERLAP_EPS = 1e-9


def _assign_notes(score, spans, voiced_phonemes, tempo):
    """Map each voiced phoneme to the score notes it carries."""
    assigned: dict[int, list[int]] = {i: [] for i in voiced_phonemes}
    if all(n.phoneme_index is not None for n in score):
        for j, n in enumerate(score):
            if n.phoneme_index not in assigned:
                raise PlanError(f"note {j} aligned to non-vowel phoneme {n.phoneme_index}")
            assigned[n.phoneme_index].append(j)
        return assigned

    note_times = [(float(n.onset) * tempo, float(n.end) * tempo) for n in score]
    origin = note_times[0][0]
    note_times = [(a - origin, b - origin) for a, b in note_times]

    def overlap(i, j):
        (ps, pe), (ns, ne) = spans[i], note_times[j]
        shared = min(pe, ne) - max(ps, ns)
        # touching spans must not pick up a rounding-sized overlap
        return shared if shared > OVERLAP_EPS else 0.0

    for j in range(len(score)):
        best = max(voiced_phonemes, key=lambda i: (overlap(i, j), -i), default=None)
        if best is not None and overlap(best, j) > 0:
            assigned[best].append(j)
    for i in voiced_phonemes:
        if not assigned[i]:
            # a note tied across two vowels: reuse the most-overlapping one
            j = max(range(len(score)), key=lambda j: (overlap(i, j), -j))
            if overlap(i, j) <= 0:
                raise PlanError(f"phoneme {i} spans no score note")
            assigned[i].append(j)
    return assigned


def score_to_plan(
    score: list[ScoreNote],
    phoneme_ids,
    durations,
    tempo: float,
    consonant_flags,
    hop: float = 0.01,
    silence_phoneme: int | None = None,
    singer_id: int = 0,
    role_type_id: int = 0,
    phrase_id: str = "",
) -> FrameFeaturePlan:
    """Build a synthesis plan from a score and annotated phoneme durations.

    Consonants (and the silence phoneme) carry silence. Each remaining
    phoneme's frames are split across its notes in proportion to their beat
    durations; the first frame of every note segment is an onset.
    Notes are matched to phonemes by an explicit ``phoneme_index`` when the
    score provides one for every note, otherwise by largest time overlap
    with notes placed at ``onset * tempo`` seconds.
    """
    phoneme_ids = np.asarray(phoneme_ids, dtype=np.int64)
    durations = np.asarray(durations, dtype=np.int64)
    consonant_flags = np.asarray(consonant_flags, dtype=bool)
    if len(phoneme_ids) != len(durations) or len(phoneme_ids) != len(consonant_flags):
        raise PlanError("phoneme, duration and consonant lists differ in length")
    if np.any(durations < 1):
        raise PlanError("durations must be >= 1")
    _check_score(score)

    bounds = np.concatenate([[0], np.cumsum(durations)])
    spans = [(bounds[i] * hop, bounds[i + 1] * hop) for i in range(len(durations))]
    silent = consonant_flags.copy()
    if silence_phoneme is not None:
        silent |= phoneme_ids == silence_phoneme
    voiced_phonemes = [i for i in range(len(phoneme_ids)) if not silent[i]]
    assigned = _assign_notes(score, spans, voiced_phonemes, tempo)

    n_frames = int(bounds[-1])
    pitch_ids = np.zeros(n_frames, dtype=np.int64)
    state_ids = np.zeros(n_frames, dtype=np.int64)
    prev_note = None
    for i in range(len(phoneme_ids)):
        start = int(bounds[i])
        if silent[i]:
            prev_note = None
            continue
        notes = assigned[i]
        counts = largest_remainder([float(score[j].duration) for j in notes], int(durations[i]))
        pos = start
        for j, c in zip(notes, counts):
            if c == 0:
                continue
            note = score[j]
            if note.pitch == SILENCE:
                prev_note = None
            else:
                pitch_ids[pos : pos + c] = note.pitch - PITCH_OFFSET
                state_ids[pos : pos + c] = NoteState.SUSTAIN
                if prev_note != j:
                    state_ids[pos] = NoteState.ONSET
                prev_note = j
            pos += c

    return FrameFeaturePlan(
        phoneme_ids=phoneme_ids,
        durations=durations,
        note_pitch_ids=pitch_ids,
        note_state_ids=state_ids,
        positions=frame_positions(n_frames),
        singer_id=singer_id,
        role_type_id=role_type_id,
        phrase_id=phrase_id,
    )


# ---------------------------------------------------------------- plan files


def save_plan(path: str | Path, plan: FrameFeaturePlan) -> None:
    """Plan file: one text header line, then five ``DSPC`` blocks.

    Header: ``phrase_id<TAB>T<TAB>n_phonemes<TAB>singer_id<TAB>role_type_id<TAB>has_f0``.
    Blocks in order: phoneme_ids, durations, note_pitch_ids, note_state_ids,
    positions (each a single row), plus f0_norm when present.
    """
    header = "\t".join(
        [plan.phrase_id, str(plan.n_frames), str(len(plan.phoneme_ids)),
         str(plan.singer_id), str(plan.role_type_id), str(int(plan.f0_norm is not None))]
    )
    arrays = [plan.phoneme_ids, plan.durations, plan.note_pitch_ids, plan.note_state_ids, plan.positions]
    if plan.f0_norm is not None:
        arrays.append(plan.f0_norm)
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for arr in arrays:
            arr = np.asarray(arr, dtype="<f4")
            fh.write(_PLAN_HEADER.pack(PLAN_MAGIC, 1, 1, arr.size))
            fh.write(arr.tobytes())


def load_plan(path: str | Path) -> FrameFeaturePlan:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    fields = raw[:nl].decode("utf-8").split("\t")
    if len(fields) != 6:
        raise PlanError(f"{path}: bad plan header")
    phrase_id, t, n, singer, role, has_f0 = fields
    off = nl + 1
    arrays = []
    for _ in range(6 if has_f0 == "1" else 5):
        magic, _, rows, cols = _PLAN_HEADER.unpack_from(raw, off)
        if magic != PLAN_MAGIC:
            raise PlanError(f"{path}: bad block magic")
        off += _PLAN_HEADER.size
        arrays.append(np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=off))
        off += rows * cols * 4
    plan = FrameFeaturePlan(
        phoneme_ids=arrays[0].astype(np.int64),
        durations=arrays[1].astype(np.int64),
        note_pitch_ids=arrays[2].astype(np.int64),
        note_state_ids=arrays[3].astype(np.int64),
        positions=frame_positions(int(t)),
        singer_id=int(singer),
        role_type_id=int(role),
        phrase_id=phrase_id,
        f0_norm=arrays[5].astype(np.float64) if has_f0 == "1" else None,
    )
    if plan.n_frames != int(t) or len(plan.phoneme_ids) != int(n):
        raise PlanError(f"{path}: header counts disagree with data")
    return plan
