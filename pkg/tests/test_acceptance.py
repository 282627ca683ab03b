"""End-to-end acceptance checks, one verdict line each (see the ``acceptance`` summary section)."""
import shutil
import time

import numpy as np

import gradsuite
from conftest import run_overfit
from duriano import dsp, toy
from duriano import evalsuite as E
from duriano import model as M
from duriano.cli import main
from duriano.nn.gradcheck import gradient_check
from duriano.pitch import SILENCE, PitchContour, extract_f0, midi_to_hz, segment_notes


def test_stft_round_trip(cfg, accept):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        x = np.random.default_rng(seed).uniform(-1, 1, cfg.sample_rate)
        y = dsp.istft(dsp.stft(x, cfg), cfg, length=len(x)).samples
        inner = slice(cfg.win_length, -cfg.win_length)
        worst = max(worst, np.linalg.norm(y[inner] - x[inner]) / np.linalg.norm(x[inner]))
    elapsed = time.perf_counter() - t0
    accept("stft round trip", worst < 1e-6 and elapsed < 5, f"rel err {worst:.2e}, {elapsed:.1f} s")


def test_griffin_lim(cfg, accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    monotone = True
    for _ in range(10):
        target = rng.random((int(rng.integers(5, 30)), cfg.n_bins))
        _, errors = dsp.griffin_lim(target, cfg, 60, return_errors=True)
        monotone &= bool(np.all(np.diff(errors) <= 1e-9 * errors[0]))
    t = np.arange(cfg.sample_rate // 2) / cfg.sample_rate
    audio = dsp.griffin_lim(np.abs(dsp.stft(np.sin(2 * np.pi * 523.25 * t), cfg)), cfg, 60).samples
    spectrum = np.abs(np.fft.rfft(audio * np.hanning(len(audio)), cfg.fft_size * 4))
    peak_hz = np.argmax(spectrum) * cfg.sample_rate / (cfg.fft_size * 4)
    bin_hz = cfg.sample_rate / cfg.fft_size
    elapsed = time.perf_counter() - t0
    ok = monotone and abs(peak_hz - 523.25) <= bin_hz and elapsed < 30
    accept("griffin-lim", ok, f"monotone={monotone}, peak {peak_hz:.1f} Hz, {elapsed:.1f} s")


def test_gradient_suite(accept):
    t0 = time.perf_counter()
    worst_name, worst = "", 0.0
    for name, f, tensors in gradsuite.layer_cases() + gradsuite.model_cases():
        errors = gradient_check(f, tensors, eps=1e-5, max_entries=6, rng=np.random.default_rng(1))
        for k, v in errors.items():
            if v > worst:
                worst_name, worst = f"{name}/{k}", v
    elapsed = time.perf_counter() - t0
    accept("gradient suite", worst < 1e-4 and elapsed < 120,
           f"max rel err {worst:.1e} ({worst_name}), {elapsed:.1f} s")


def test_dimension_ledger(accept):
    t0 = time.perf_counter()
    model = M.DurIANo(M.ModelConfig())
    elapsed = time.perf_counter() - t0
    sizes = {
        "phoneme": model.encoder.embedding.dim, "singer": model.singer.dim, "role": model.role.dim,
        "note_pitch": model.note_pitch.dim, "note_state": model.note_state.dim,
        "mel": model.cfg.mel_bins, "linear": model.postnet.proj.weight.shape[1],
        "frames_per_step": model.decoder.proj.weight.shape[1] // model.cfg.mel_bins,
        "condition": model.cfg.condition_dim,
    }
    want = dict(phoneme=256, singer=256, role=256, note_pitch=64, note_state=16, mel=80, linear=2049,
                frames_per_step=2, condition=337)
    rejected = 0
    for bad in (dict(phoneme_emb=255), dict(note_pitch_emb=65), dict(linear_bins=2048), dict(frames_per_step=1)):
        try:
            M.DurIANo(M.ModelConfig(**bad))
        except M.ModelConfigError:
            rejected += 1
    ok = sizes == want and rejected == 4 and elapsed < 1
    accept("dimension ledger", ok, f"sizes match={sizes == want}, rejected {rejected}/4, {elapsed:.2f} s")


def test_overfit(toy_pair, overfit, accept):
    t0 = time.perf_counter()
    _, again = run_overfit(toy_pair)
    elapsed = time.perf_counter() - t0
    _, losses = overfit
    ratio = losses[-1] / losses[0]
    same = again.tobytes() == losses.tobytes()
    ok = ratio < 0.2 and same and elapsed < 600
    accept("overfit", ok, f"loss {losses[0]:.4f} -> {losses[-1]:.4f} (ratio {ratio:.3f}), "
           f"deterministic={same}, {elapsed:.0f} s per run")


def test_conditioning_fidelity(cfg, toy_pair, overfit, accept):
    trainer, _ = overfit
    t0 = time.perf_counter()
    scores = []
    for ex in toy_pair:
        audio = M.synthesize(trainer.model, ex.plan, cfg, 60)
        f0 = extract_f0(audio, cfg.hop_length).f0[: ex.n_frames]
        midi = ex.plan.note_pitch_ids + 35.0
        notes = np.where(ex.plan.note_pitch_ids > 0, midi_to_hz(midi), 0.0)
        scores.append(E.pearson(f0, notes[: len(f0)]))
    elapsed = time.perf_counter() - t0
    ok = min(scores) > 0.5 and elapsed < 120
    accept("conditioning fidelity", ok, "pearson " + ", ".join(f"{s:.3f}" for s in scores) + f", {elapsed:.1f} s")


def random_steps(rng):
    """A step contour with 0.1-semitone jitter plus its generating runs."""
    runs, f0, prev = [], [], None
    for _ in range(int(rng.integers(2, 7))):
        n = int(rng.integers(8, 40))
        if rng.random() < 0.3:
            pitch = SILENCE
        else:
            pitch = int(rng.integers(40, 81))
            while pitch == prev:
                pitch = int(rng.integers(40, 81))
        if runs and runs[-1][2] == SILENCE and pitch == SILENCE:
            runs[-1][1] += n
        else:
            runs.append([len(f0), n, pitch])
        jitter = rng.uniform(-0.1, 0.1, n)
        f0.extend(np.zeros(n) if pitch == SILENCE else midi_to_hz(pitch + jitter))
        prev = pitch
    return np.array(f0), [tuple(r) for r in runs]


def test_transcription_oracle(accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    exact = 0
    for _ in range(20):
        f0, truth = random_steps(rng)
        exact += segment_notes(PitchContour(f0, 0.01)).runs() == truth
    elapsed = time.perf_counter() - t0
    accept("transcription oracle", exact == 20 and elapsed < 10, f"{exact}/20 exact, {elapsed:.1f} s")


def test_evaluation_metrics(accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.uniform(100, 500, 300)
    affine = abs(E.pearson(x, 2 * x + 3) - 1.0)
    sigma = E.fit_gaussian(rng.normal(1.0, 0.2, 100_000)).sigma
    mean = abs(E.normalize_mean_one(x).mean() - 1.0)
    report = E.eval_report({k: rng.uniform(100, 500, 200) for k in E.SYSTEMS})
    m = report.matrix
    symmetric = bool(np.array_equal(m, m.T) and np.all(np.diag(m) == 1.0))
    elapsed = time.perf_counter() - t0
    ok = affine <= 1e-12 and abs(sigma - 0.2) <= 0.005 and mean <= 1e-12 and symmetric and elapsed < 10
    accept("evaluation metrics", ok, f"affine {affine:.0e}, sigma {sigma:.4f}, mean err {mean:.0e}, "
           f"symmetric={symmetric}, {elapsed:.1f} s")


def test_plumbing(cfg, toy_pair, overfit, tmp_path, accept):
    trainer, _ = overfit
    plan = toy_pair[0].plan
    M.save_model(tmp_path / "m.ckpt", trainer.model)
    loaded, _, _ = M.load_model(tmp_path / "m.ckpt")
    a = M.synthesize(trainer.model, plan, cfg, 10).samples
    b = M.synthesize(loaded, plan, cfg, 10).samples
    checkpoint = a.tobytes() == b.tobytes()

    corpus = tmp_path / "corpus"
    toy.write_toy_corpus(corpus)
    runs = []
    for name in ("w1", "w2"):
        work = tmp_path / name
        assert main(["preprocess", "--corpus", str(corpus), "--workdir", str(work)]) == 0
        runs.append(work)
    caches = [{p.name: p.read_bytes() for p in sorted((w / "cache").iterdir())} for w in runs]
    idempotent = caches[0] == caches[1]

    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("preset=miniature\nbatch_size=2\nsteps=3\ncheckpoint_every=3\nmodel.decoder_gru=32\n")
    shutil.copytree(runs[0], tmp_path / "w3")
    logs = []
    for work in (runs[0], tmp_path / "w3"):
        assert main(["train", "--workdir", str(work), "--config", str(cfg_file), "--seed", "1"]) == 0
        logs.append((work / "train.log").read_bytes())
    same_logs = logs[0] == logs[1] and len(logs[0].splitlines()) == 3
    ok = checkpoint and idempotent and same_logs
    accept("plumbing", ok, f"checkpoint synthesis identical={checkpoint}, preprocess idempotent={idempotent}, "
           f"training logs identical={same_logs}")
