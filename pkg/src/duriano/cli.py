"""Command-line entry point: preprocess, transcribe, train, synth, vocode, eval.

Exit codes: 0 success, 1 internal error, 2 user or input error.
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import dsp
from .config import ConfigError, load_config
from .corpus import (
    AnnotationError,
    DatasetManifest,
    PhonemeInventory,
    TrainingExample,
    durations_in_frames,
    load_annotation,
    prepare_training_example,
    split_dataset,
)
from .evalsuite import EvalError, eval_report
from .frontend import (
    FrameFeaturePlan,
    PlanError,
    ScoreNote,
    f0_to_norm,
    frame_positions,
    load_plan,
    read_score,
    save_plan,
    score_to_plan,
)
from .model import DurIANo, ModelConfigError, load_model, synthesize
from .nn.checkpoint import CheckpointError
from .pitch import PitchError, extract_f0, read_note_events, transcribe, write_note_events
from .train import TrainConfig, Trainer, TrainingDiverged

MANIFEST = "manifest.tsv"
VOCAB = "vocab.tsv"
INVENTORY = "inventory.txt"
CACHE = "cache"
CHECKPOINTS = "checkpoints"
TRAIN_LOG = "train.log"


class UserError(Exception):
    pass


USER_ERRORS = (
    UserError, ConfigError, AnnotationError, PlanError, PitchError, dsp.DSPError,
    CheckpointError, ModelConfigError, EvalError, FileNotFoundError,
)


def _read_audio(path) -> dsp.AudioBuffer:
    try:
        return dsp.read_wav(path)
    except (OSError, ValueError) as exc:
        raise UserError(f"cannot read audio {path}: {exc}") from None


def _write_inventory(path: Path, inv: PhonemeInventory) -> None:
    rows = [s + ("\tC" if inv.is_consonant(s) else "") for s in inv.symbols if s != inv.silence]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def _inventory_from_meta(meta: dict) -> PhonemeInventory:
    inv = meta["inventory"]
    return PhonemeInventory(tuple(inv["symbols"]), frozenset(inv["consonants"]))


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(corpus: str, workdir: str, config: str | None = None) -> int:
    cfg = load_config(config, {"corpus": corpus, "workdir": workdir})
    stft = cfg.stft_config()
    fbank = dsp.build_mel_filterbank(stft)
    root, work = Path(corpus), Path(workdir)
    if not root.is_dir():
        raise UserError(f"corpus directory {root} not found")
    inv_file = root / INVENTORY
    inventory = PhonemeInventory.from_file(inv_file) if inv_file.exists() else PhonemeInventory.default()
    labs = sorted(root.glob("*.lab"))
    if not labs:
        raise UserError(f"no .lab annotations under {root}")

    annotations = [load_annotation(p, inventory) for p in labs]
    ids = [a.phrase_id for a in annotations]
    if len(set(ids)) != len(ids):
        raise UserError("duplicate phrase ids in corpus")
    singers = sorted({a.singer for a in annotations})
    roles = sorted({a.role_type for a in annotations})

    (work / CACHE).mkdir(parents=True, exist_ok=True)
    seconds = 0.0
    for lab, ann in zip(labs, annotations):
        audio = _read_audio(ann.audio_path)
        contour = extract_f0(audio, stft.hop_length)
        notes = lab.with_suffix(".notes")
        if notes.exists():
            events = read_note_events(notes, stft.hop_seconds)
        else:
            _, events = transcribe(audio, stft.hop_length)
        try:
            ex = prepare_training_example(
                ann, audio, events, stft, fbank, inventory,
                singers.index(ann.singer), roles.index(ann.role_type), f0_hz=contour.f0,
            )
        except (AnnotationError, PlanError) as exc:
            raise UserError(f"{lab}: {exc}") from None
        base = work / CACHE / ann.phrase_id
        dsp.save_container(f"{base}.mel.dspc", ex.mel_target)
        dsp.save_container(f"{base}.lin.dspc", ex.linear_target)
        save_plan(f"{base}.plan", ex.plan)
        seconds += audio.duration

    pieces = {a.phrase_id: a.piece for a in annotations}
    if cfg.holdout_piece:
        manifest = split_dataset(pieces, cfg.holdout_piece)
    else:
        manifest = DatasetManifest(ids, [], pieces)
    manifest.save(work / MANIFEST)
    rows = [f"singer\t{s}\t{i}" for i, s in enumerate(singers)] + [f"role\t{r}\t{i}" for i, r in enumerate(roles)]
    (work / VOCAB).write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_inventory(work / INVENTORY, inventory)
    cfg.write_resolved(work / "preprocess.resolved")
    print(
        f"{len(ids)} phrases ({len(manifest.train)} train, {len(manifest.validation)} validation), "
        f"{seconds / 3600:.4f} h"
    )
    return 0


def load_vocab(workdir: Path) -> dict[str, list[str]]:
    vocab = {"singer": [], "role": []}
    for line in (workdir / VOCAB).read_text(encoding="utf-8").splitlines():
        kind, name, _ = line.split("\t")
        vocab[kind].append(name)
    return vocab


def load_examples(workdir: str | Path, phrase_ids) -> list[TrainingExample]:
    base = Path(workdir) / CACHE
    out = []
    for pid in phrase_ids:
        try:
            mel = dsp.load_container(base / f"{pid}.mel.dspc")
            lin = dsp.load_container(base / f"{pid}.lin.dspc")
            plan = load_plan(base / f"{pid}.plan")
        except FileNotFoundError:
            raise UserError(f"missing cache for {pid}; run `duriano preprocess` first") from None
        out.append(TrainingExample(mel, lin, plan, pid))
    return out


# ---------------------------------------------------------------- train


def latest_checkpoint(workdir: str | Path) -> Path | None:
    found = sorted(Path(workdir, CHECKPOINTS).glob("step_*.ckpt"))
    return found[-1] if found else None


def cmd_train(workdir: str, config: str | None = None, seed: int | None = None,
              resume: bool = False, steps: int | None = None) -> int:
    work = Path(workdir)
    if not (work / MANIFEST).exists():
        raise UserError(f"{work / MANIFEST} not found; run `duriano preprocess` first")
    overrides = {"workdir": workdir}
    if seed is not None:
        overrides["seed"] = str(seed)
    if steps is not None:
        overrides["steps"] = str(steps)
    cfg = load_config(config, overrides)
    manifest = DatasetManifest.load(work / MANIFEST)
    if not manifest.train:
        raise UserError("manifest has no training phrases")
    examples = load_examples(work, manifest.train)
    inventory = PhonemeInventory.from_file(work / INVENTORY)
    vocab = load_vocab(work)
    # the STFT that produced the caches is the one synthesis must invert
    stft = load_config(work / "preprocess.resolved").stft_config()

    ckpt_dir = work / CHECKPOINTS
    ckpt_dir.mkdir(exist_ok=True)
    log_path = work / TRAIN_LOG
    if resume:
        path = latest_checkpoint(work)
        if path is None:
            raise UserError(f"no checkpoint under {ckpt_dir} to resume from")
        trainer, meta = Trainer.resume(path, examples)
        kept = [l for l in _log_lines(log_path) if int(l.split("\t")[0]) <= trainer.step]
        log_path.write_text("".join(l + "\n" for l in kept), encoding="utf-8")
        print(f"resumed from {path} at step {trainer.step}")
    else:
        model_cfg = cfg.model_config(
            n_phonemes=len(inventory), n_singers=max(1, len(vocab["singer"])),
            n_roles=max(1, len(vocab["role"])), mel_bins=examples[0].mel_target.shape[1],
            linear_bins=examples[0].linear_target.shape[1],
        )
        model = DurIANo(model_cfg, seed=cfg.seed)
        tcfg = TrainConfig(
            learning_rate=cfg.learning_rate, decay_rate=cfg.decay_rate, decay_steps=cfg.decay_steps,
            l2=cfg.l2, batch_size=cfg.batch_size, seed=cfg.seed,
        )
        trainer = Trainer(model, examples, tcfg)
        log_path.write_text("", encoding="utf-8")
    cfg.write_resolved(work / "config.resolved", trainer.model.cfg)

    meta = {
        "vocab": vocab,
        "inventory": {"symbols": list(inventory.symbols), "consonants": sorted(inventory.consonants)},
        "stft": dataclasses.asdict(stft),
        "gl_iterations": cfg.gl_iterations,
    }
    with open(log_path, "a", encoding="utf-8") as log:
        while trainer.step < cfg.steps:
            try:
                result = trainer.train_step()
            except TrainingDiverged as exc:
                print(f"training diverged: {exc}", file=sys.stderr)
                return 1
            if not cfg.log_wallclock:
                result.wallclock_ms = 0.0
            log.write(result.log_line() + "\n")
            log.flush()
            if result.step % cfg.checkpoint_every == 0 or result.step == cfg.steps:
                trainer.save(ckpt_dir / f"step_{result.step:08d}.ckpt", meta)
            if result.step == 1 or result.step % 50 == 0 or result.step == cfg.steps:
                print(f"step {result.step}\tloss {result.loss:.6f}")
    if manifest.validation:
        val = load_examples(work, manifest.validation)
        print(f"validation loss {trainer.evaluate(val):.6f}")
    return 0


def _log_lines(path: Path) -> list[str]:
    if not path.exists():
        return []
    return [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]


# ---------------------------------------------------------------- synth


def _read_f0(path: str, stft: dsp.StftConfig) -> np.ndarray:
    if path.lower().endswith(".wav"):
        return extract_f0(_read_audio(path), stft.hop_length).f0
    try:
        return np.loadtxt(path, dtype=np.float64, ndmin=1)
    except (OSError, ValueError) as exc:
        raise UserError(f"cannot read f0 file {path}: {exc}") from None


def build_synthesis_plan(score: list[ScoreNote] | None, annotation, inventory: PhonemeInventory,
                         stft: dsp.StftConfig, singer_id: int, role_id: int, tempo: float | None = None,
                         f0_hz: np.ndarray | None = None):
    hop = stft.hop_seconds
    total = max(1, math.ceil(annotation.end / hop - 1e-9))
    pairs = durations_in_frames(annotation, hop, total, inventory)
    ids = [p for p, _ in pairs]
    durs = [c for _, c in pairs]
    flags = [inventory.is_consonant(inventory.symbol(p)) for p in ids]
    if score is not None:
        if tempo is None:
            # no tempo given: stretch the score's span over the phrase
            span = float(score[-1].end - score[0].onset)
            tempo = annotation.end / span
        plan = score_to_plan(
            score, ids, durs, tempo, flags, hop, inventory.silence_id,
            singer_id, role_id, annotation.phrase_id,
        )
    else:
        plan = FrameFeaturePlan(
            ids, durs, np.zeros(total, dtype=np.int64), np.zeros(total, dtype=np.int64),
            frame_positions(total), singer_id, role_id, annotation.phrase_id,
        )
    if f0_hz is not None:
        f0_hz = np.pad(f0_hz, (0, max(0, plan.n_frames - len(f0_hz))))[: plan.n_frames]
        plan = dataclasses.replace(plan, f0_norm=f0_to_norm(f0_hz))
    return plan


def cmd_synth(score: str | None, phonemes: str, checkpoint: str, out: str, mode: str = "note",
              f0: str | None = None, tempo: float | None = None, seed: int = 0,
              iters: int | None = None) -> int:
    if not Path(checkpoint).is_file():
        raise UserError(f"checkpoint {checkpoint} not found")
    model, _, meta = load_model(checkpoint)
    want = "note" if mode == "note" else "f0_scalar"
    if model.cfg.conditioning_mode != want:
        raise UserError(f"checkpoint was trained with {model.cfg.conditioning_mode} conditioning, not {want}")
    inventory = _inventory_from_meta(meta)
    stft = dsp.StftConfig(**meta["stft"])
    ann = load_annotation(phonemes, inventory)
    vocab = meta["vocab"]
    try:
        singer_id = vocab["singer"].index(ann.singer)
        role_id = vocab["role"].index(ann.role_type)
    except ValueError:
        raise UserError(f"{phonemes}: singer {ann.singer!r} or role {ann.role_type!r} unknown to checkpoint") from None
    if mode == "note" and score is None:
        raise UserError("--score is required in note mode")
    if mode == "f0" and f0 is None:
        raise UserError("--f0 is required in f0 mode")
    notes = read_score(score) if score is not None else None
    f0_hz = _read_f0(f0, stft) if f0 is not None else None
    plan = build_synthesis_plan(notes, ann, inventory, stft, singer_id, role_id, tempo, f0_hz)
    iterations = iters if iters is not None else meta.get("gl_iterations", 60)
    audio, lin = synthesize(model, plan, stft, iterations, seed=seed, return_spectrogram=True)
    out_path = Path(out)
    dsp.write_wav(out_path, audio)
    dsp.save_container(out_path.with_suffix(".lin.dspc"), lin)
    print(f"wrote {out_path} ({audio.duration:.3f} s)")
    return 0


# ---------------------------------------------------------------- vocode / transcribe / eval


def cmd_vocode(spec: str, out: str, iters: int = 60, config: str | None = None) -> int:
    stft = load_config(config).stft_config()
    lin = dsp.load_container(spec)
    if lin.shape[1] != stft.n_bins:
        raise UserError(f"{spec}: {lin.shape[1]} bins, STFT config expects {stft.n_bins}")
    audio = dsp.griffin_lim(dsp.features_to_magnitude(lin, stft), stft, iters)
    dsp.write_wav(out, audio)
    return 0


def cmd_transcribe(wav: str, out: str, f0_out: str | None = None) -> int:
    audio = _read_audio(wav)
    contour, events = transcribe(audio, round(audio.sample_rate * 0.01))
    write_note_events(out, events)
    if f0_out:
        np.savetxt(f0_out, contour.f0, fmt="%.4f")
    return 0


def cmd_eval(wavs: list[str], labels: list[str] | None, out: str | None) -> int:
    labels = labels or [Path(w).stem for w in wavs]
    if len(wavs) < 2:
        raise UserError("eval needs at least two wav files")
    if len(labels) != len(wavs):
        raise UserError(f"{len(wavs)} wav files but {len(labels)} labels")
    if len(set(labels)) != len(labels):
        raise UserError("labels must be distinct")
    contours = {}
    for label, w in zip(labels, wavs):
        audio = _read_audio(w)
        contours[label] = extract_f0(audio, round(audio.sample_rate * 0.01)).f0
    text = eval_report(contours).to_tsv()
    if out and out != "-":
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duriano", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="annotations + audio -> manifest and feature caches")
    s.add_argument("--corpus", required=True)
    s.add_argument("--workdir", required=True)
    s.add_argument("--config")

    s = sub.add_parser("transcribe", help="wav -> per-frame note events")
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--f0-out")

    s = sub.add_parser("train", help="train on a preprocessed workdir")
    s.add_argument("--workdir", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--steps", type=int)

    s = sub.add_parser("synth", help="score + phoneme durations -> wav")
    s.add_argument("--score")
    s.add_argument("--phonemes", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("note", "f0"), default="note")
    s.add_argument("--f0", help="f0 contour: a wav, or text with one Hz value per frame")
    s.add_argument("--tempo", type=float, help="seconds per beat")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int)

    s = sub.add_parser("vocode", help="linear spectrogram container -> wav by Griffin-Lim")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=60)
    s.add_argument("--config")

    s = sub.add_parser("eval", help="pitch correlation and distribution report")
    s.add_argument("--wav", nargs="+", required=True)
    s.add_argument("--labels", nargs="+")
    s.add_argument("--out")
    return p


def run(args: argparse.Namespace) -> int:
    if args.command == "preprocess":
        return cmd_preprocess(args.corpus, args.workdir, args.config)
    if args.command == "transcribe":
        return cmd_transcribe(args.wav, args.out, args.f0_out)
    if args.command == "train":
        return cmd_train(args.workdir, args.config, args.seed, args.resume, args.steps)
    if args.command == "synth":
        return cmd_synth(args.score, args.phonemes, args.checkpoint, args.out, args.mode,
                         args.f0, args.tempo, args.seed, args.iters)
    if args.command == "vocode":
        return cmd_vocode(args.spec, args.out, args.iters, args.config)
    if args.command == "eval":
        return cmd_eval(args.wav, args.labels, args.out)
    raise AssertionError(args.command)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
