"""Phrase annotations, phoneme inventory, dataset splits and training targets."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import dsp
from .frontend import (
    FrameFeaturePlan,
    events_to_id_frames,
    f0_to_norm,
    frame_positions,
    largest_remainder,
)
from .pitch import NoteEventSequence

log = logging.getLogger(__name__)

SIL = "SIL"

# Modified X-SAMPA inventory: 21 initials, 17 vowel/coda units.
DEFAULT_CONSONANTS = (
    "p", "ph", "t", "th", "k", "kh", "m", "n", "l", "f", "x",
    "ts", "tsh", "s", "ts`", "ts`h", "s`", "r\\`", "ts\\", "ts\\h", "s\\",
)
DEFAULT_VOWELS = (
    "a", "o", "7", "e", "E", "i", "u", "y", "@", "aI", "eI", "AU", "oU", "N", "@`", "i\\", "U",
)

MAX_FRAME_MISMATCH = 2


class AnnotationError(ValueError):
    pass


class DurationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhonemeInventory:
    symbols: tuple[str, ...]
    consonants: frozenset[str] = frozenset()
    silence: str = SIL

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise AnnotationError("duplicate phoneme symbols")
        if self.silence not in self.symbols:
            raise AnnotationError("inventory must contain the silence symbol")

    @classmethod
    def default(cls) -> "PhonemeInventory":
        return cls((SIL,) + DEFAULT_CONSONANTS + DEFAULT_VOWELS, frozenset(DEFAULT_CONSONANTS))

    @classmethod
    def from_file(cls, path: str | Path) -> "PhonemeInventory":
        """One symbol per line, ``symbol<TAB>C`` marks a consonant."""
        symbols, consonants = [SIL], set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            parts = line.split("\t")
            if not parts[0] or parts[0] == SIL:
                continue
            symbols.append(parts[0])
            if len(parts) > 1 and parts[1].strip().upper() == "C":
                consonants.add(parts[0])
        return cls(tuple(symbols), frozenset(consonants))

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    @cached_property
    def _index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    def lookup(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise AnnotationError(f"unknown phoneme {symbol!r}") from None

    def symbol(self, index: int) -> str:
        return self.symbols[index]

    @property
    def silence_id(self) -> int:
        return self.lookup(self.silence)

    def is_consonant(self, symbol: str) -> bool:
        return symbol in self.consonants


@dataclass
class PhraseAnnotation:
    audio_path: Path | None
    intervals: list[tuple[float, float, str]]
    singer: str = "singer0"
    role_type: str = "role0"
    piece: str = "piece0"
    phrase_id: str = ""

    @property
    def end(self) -> float:
        return self.intervals[-1][1] if self.intervals else 0.0

    def labels(self) -> list[str]:
        return [lab for _, _, lab in self.intervals]


def _fill_gaps(intervals):
    out = []
    cursor = 0.0
    for start, end, label in intervals:
        if start > cursor + 1e-9:
            out.append((cursor, start, SIL))
        out.append((start, end, label))
        cursor = end
    return out


def parse_annotation(text: str, source: str = "<annotation>",
                     inventory: PhonemeInventory | None = None) -> PhraseAnnotation:
    """Parse ``start<TAB>end<TAB>phoneme`` lines plus ``# key=value`` metadata lines.

    Recognised metadata keys: ``singer``, ``role``, ``piece``, ``audio``, ``id``.
    """
    inventory = inventory or PhonemeInventory.default()
    meta: dict[str, str] = {}
    intervals = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            for item in line[1:].replace("\t", " ").split():
                if "=" in item:
                    k, v = item.split("=", 1)
                    meta[k.strip()] = v.strip()
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise AnnotationError(f"{source}:{lineno}: expected start<TAB>end<TAB>phoneme")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise AnnotationError(f"{source}:{lineno}: bad time value") from None
        label = parts[2].strip()
        if label not in inventory:
            raise AnnotationError(f"unknown phoneme {label!r} ({source}, line {lineno})")
        if not end > start:
            raise AnnotationError(f"{source}:{lineno}: interval end must exceed start")
        if intervals and start < intervals[-1][1] - 1e-9:
            raise AnnotationError(f"{source}:{lineno}: overlapping or unsorted interval")
        intervals.append((start, end, label))
    if not intervals:
        raise AnnotationError(f"{source}: no intervals")
    audio = meta.get("audio")
    return PhraseAnnotation(
        audio_path=Path(audio) if audio else None,
        intervals=_fill_gaps(intervals),
        singer=meta.get("singer", "singer0"),
        role_type=meta.get("role", "role0"),
        piece=meta.get("piece", "piece0"),
        phrase_id=meta.get("id", ""),
    )


def load_annotation(path: str | Path, inventory: PhonemeInventory | None = None) -> PhraseAnnotation:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise AnnotationError(f"{path}: {exc}") from None
    ann = parse_annotation(text, str(path), inventory)
    if ann.audio_path is None:
        ann.audio_path = path.with_suffix(".wav")
    elif not ann.audio_path.is_absolute():
        ann.audio_path = path.parent / ann.audio_path
    if not ann.phrase_id:
        ann.phrase_id = path.stem
    return ann


def write_annotation(path: str | Path, ann: PhraseAnnotation) -> None:
    meta = f"# singer={ann.singer}\trole={ann.role_type}\tpiece={ann.piece}"
    if ann.phrase_id:
        meta += f"\tid={ann.phrase_id}"
    if ann.audio_path is not None:
        meta += f"\taudio={Path(ann.audio_path).name}"
    rows = [f"{s:.6f}\t{e:.6f}\t{lab}" for s, e, lab in ann.intervals]
    Path(path).write_text("\n".join([meta] + rows) + "\n", encoding="utf-8")


def durations_in_frames(
    annotation: PhraseAnnotation,
    hop: float,
    total_frames: int | None = None,
    inventory: PhonemeInventory | None = None,
) -> list[tuple[int, int]]:
    """Quantize interval lengths to frame counts summing to ``total_frames``.

    Counts are a largest-remainder apportionment of ``total_frames`` by
    interval length. An interval left with zero frames is dropped (merged
    into its neighbour) and a :class:`DurationWarning` is issued.
    """
    inventory = inventory or PhonemeInventory.default()
    lengths = np.array([e - s for s, e, _ in annotation.intervals])
    if total_frames is None:
        total_frames = int(round(lengths.sum() / hop))
    if total_frames < 1:
        raise AnnotationError("phrase shorter than one frame")
    counts = largest_remainder(lengths / hop, total_frames)
    out = []
    for (start, _, label), c in zip(annotation.intervals, counts):
        if c == 0:
            warnings.warn(
                f"{annotation.phrase_id}: phoneme {label!r} at {start:.3f}s is shorter than "
                "one frame, merged into neighbour",
                DurationWarning,
                stacklevel=2,
            )
            continue
        out.append((inventory.lookup(label), int(c)))
    return out


@dataclass
class DatasetManifest:
    train: list[str]
    validation: list[str]
    pieces: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.train) & set(self.validation):
            raise AnnotationError("train and validation overlap")

    def split_of(self, phrase_id: str) -> str:
        return "validation" if phrase_id in set(self.validation) else "train"

    def save(self, path: str | Path) -> None:
        rows = [f"{p}\ttrain\t{self.pieces.get(p, '')}" for p in self.train]
        rows += [f"{p}\tvalidation\t{self.pieces.get(p, '')}" for p in self.validation]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        train, val, pieces = [], [], {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("train", "validation"):
                raise AnnotationError(f"{path}:{lineno}: bad manifest row")
            (train if parts[1] == "train" else val).append(parts[0])
            pieces[parts[0]] = parts[2]
        return cls(train, val, pieces)


def split_dataset(phrase_pieces: dict[str, str], holdout_piece: str) -> DatasetManifest:
    """All phrases of ``holdout_piece`` go to validation, the rest to train."""
    validation = [p for p, piece in phrase_pieces.items() if piece == holdout_piece]
    if not validation:
        raise AnnotationError(f"unknown piece {holdout_piece!r}: no phrases")
    train = [p for p, piece in phrase_pieces.items() if piece != holdout_piece]
    return DatasetManifest(train, validation, dict(phrase_pieces))


@dataclass
class TrainingExample:
    mel_target: np.ndarray  # [T, n_mels]
    linear_target: np.ndarray  # [T, n_bins]
    plan: FrameFeaturePlan
    phrase_id: str

    def __post_init__(self):
        if self.mel_target.shape[0] != self.linear_target.shape[0]:
            raise AnnotationError("mel and linear frame counts differ")
        if self.plan.n_frames != self.mel_target.shape[0]:
            raise AnnotationError("plan frame count differs from targets")

    @property
    def n_frames(self) -> int:
        return self.mel_target.shape[0]


def prepare_training_example(
    annotation: PhraseAnnotation,
    audio: dsp.AudioBuffer,
    note_events: NoteEventSequence,
    cfg: dsp.StftConfig | None = None,
    fbank: dsp.MelFilterbank | None = None,
    inventory: PhonemeInventory | None = None,
    singer_id: int = 0,
    role_type_id: int = 0,
    f0_hz: np.ndarray | None = None,
) -> TrainingExample:
    cfg = cfg or dsp.StftConfig()
    fbank = fbank or dsp.build_mel_filterbank(cfg)
    inventory = inventory or PhonemeInventory.default()
    if audio.sample_rate != cfg.sample_rate:
        raise AnnotationError(
            f"{annotation.phrase_id}: sample rate {audio.sample_rate} != {cfg.sample_rate}"
        )
    mel, lin = dsp.spectrogram_features(audio, cfg, fbank)
    n_frames = mel.shape[0]
    if abs(len(note_events) - n_frames) > MAX_FRAME_MISMATCH:
        raise AnnotationError(
            f"{annotation.phrase_id}: note events have {len(note_events)} frames, "
            f"spectrogram has {n_frames}"
        )
    events = note_events.resized(n_frames)

    hop = cfg.hop_seconds
    ann = annotation
    tail = n_frames * hop - ann.end
    if tail >= hop:
        ann = PhraseAnnotation(
            ann.audio_path, ann.intervals + [(ann.end, n_frames * hop, SIL)],
            ann.singer, ann.role_type, ann.piece, ann.phrase_id,
        )
    pairs = durations_in_frames(ann, hop, n_frames, inventory)
    pitch_ids, state_ids = events_to_id_frames(events)
    f0_norm = None
    if f0_hz is not None:
        f0_hz = np.asarray(f0_hz, dtype=np.float64)
        f0_hz = np.pad(f0_hz, (0, max(0, n_frames - len(f0_hz))))[:n_frames]
        f0_norm = f0_to_norm(f0_hz)
    plan = FrameFeaturePlan(
        phoneme_ids=[p for p, _ in pairs],
        durations=[c for _, c in pairs],
        note_pitch_ids=pitch_ids,
        note_state_ids=state_ids,
        positions=frame_positions(n_frames),
        singer_id=singer_id,
        role_type_id=role_type_id,
        phrase_id=annotation.phrase_id,
        f0_norm=f0_norm,
    )
    return TrainingExample(mel, lin, plan, annotation.phrase_id)
