"""The note-conditioned duration-informed synthesis network.

Phoneme encoder (embedding -> pre-net -> linear -> CBHG), identity fusion
(concat singer and role-type embeddings, then fully connected), frame
conditions (phoneme states expanded by duration, note-pitch and note-state
embeddings, position scalar), an autoregressive GRU decoder emitting two
mel frames per step, and a post CBHG mapping mel to the linear spectrogram.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .frontend import N_PITCH_IDS, N_STATE_IDS, FrameFeaturePlan
from .nn import tensor as T
from .nn.checkpoint import load_tensors, save_tensors
from .nn.layers import CBHG, GRU, Embedding, Linear, Module, Prenet
from .nn.tensor import Tensor, no_grad

MODES = ("note", "f0_scalar")


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_phonemes: int = 39
    n_singers: int = 1
    n_roles: int = 1
    phoneme_emb: int = 256
    singer_emb: int = 256
    role_emb: int = 256
    note_pitch_vocab: int = N_PITCH_IDS
    note_state_vocab: int = N_STATE_IDS
    note_pitch_emb: int = 64
    note_state_emb: int = 16
    encoder_prenet: tuple[int, ...] = (256, 128)
    encoder_dropout: float = 0.5
    encoder_bank_k: int = 16
    encoder_bank_channels: int = 128
    encoder_highway_layers: int = 4
    encoder_gru: int = 128
    identity_fused: int = 256
    decoder_prenet: tuple[int, ...] = (256, 128)
    decoder_dropout: float = 0.5
    decoder_gru: int = 256
    frames_per_step: int = 2
    mel_bins: int = 80
    linear_bins: int = 2049
    postnet_bank_k: int = 8
    postnet_bank_channels: int = 128
    postnet_projection: int = 256
    postnet_highway_dim: int = 128
    postnet_highway_layers: int = 4
    postnet_gru: int = 128
    conditioning_mode: str = "note"
    # enforce the canonical layer sizes at construction
    strict_sizes: bool = True

    def __post_init__(self):
        self.encoder_prenet = tuple(self.encoder_prenet)
        self.decoder_prenet = tuple(self.decoder_prenet)

    @classmethod
    def miniature(cls, **overrides) -> "ModelConfig":
        """Small hidden sizes for fast experiments; output bins stay at 80/2049 unless overridden."""
        base = dict(
            phoneme_emb=16, singer_emb=8, role_emb=8, note_pitch_emb=16, note_state_emb=4,
            encoder_prenet=(32, 16), encoder_bank_k=4, encoder_bank_channels=16,
            encoder_highway_layers=2, encoder_gru=16, identity_fused=32,
            decoder_prenet=(64, 32), decoder_gru=128, postnet_bank_k=4,
            postnet_bank_channels=32, postnet_projection=64, postnet_highway_dim=64,
            postnet_highway_layers=2, postnet_gru=64, strict_sizes=False,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def encoder_out(self) -> int:
        return 2 * self.encoder_gru

    @property
    def condition_dim(self) -> int:
        if self.conditioning_mode == "note":
            return self.identity_fused + self.note_pitch_emb + self.note_state_emb + 1
        return self.identity_fused + 1 + 1

    def validate(self):
        if self.conditioning_mode not in MODES:
            raise ModelConfigError(f"conditioning_mode must be one of {MODES}")
        if self.frames_per_step != 2:
            raise ModelConfigError("the decoder emits exactly 2 frames per step")
        if self.strict_sizes:
            expected = {
                "phoneme_emb": 256, "singer_emb": 256, "role_emb": 256,
                "note_pitch_emb": 64, "note_state_emb": 16, "encoder_out": 256,
                "identity_fused": 256, "mel_bins": 80, "linear_bins": 2049,
                "note_pitch_vocab": 50, "note_state_vocab": 3,
            }
            for key, value in expected.items():
                if getattr(self, key) != value:
                    raise ModelConfigError(f"{key} must be {value}, got {getattr(self, key)}")
            want = 337 if self.conditioning_mode == "note" else 258
            if self.condition_dim != want:
                raise ModelConfigError(f"condition_dim must be {want}, got {self.condition_dim}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class PhonemeEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.embedding = Embedding(cfg.n_phonemes, cfg.phoneme_emb, rng)
        self.prenet = Prenet(cfg.phoneme_emb, cfg.encoder_prenet, rng, cfg.encoder_dropout)
        width = cfg.encoder_prenet[-1]
        self.linear = Linear(width, width, rng)
        self.cbhg = CBHG(
            width, cfg.encoder_bank_k, cfg.encoder_bank_channels, [width, width],
            cfg.encoder_highway_layers, cfg.encoder_gru, rng,
        )

    def forward(self, phoneme_ids, rng=None) -> Tensor:
        x = self.embedding(phoneme_ids)
        masks = self.prenet.sample_masks(rng, len(phoneme_ids)) if self.training else None
        x = self.linear(self.prenet(x, masks))
        return self.cbhg(x)


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.mel_bins = cfg.mel_bins
        self.prenet = Prenet(cfg.mel_bins, cfg.decoder_prenet, rng, cfg.decoder_dropout)
        self.gru = GRU(cfg.decoder_prenet[-1] + cfg.condition_dim, cfg.decoder_gru, rng)
        self.proj = Linear(cfg.decoder_gru, cfg.frames_per_step * cfg.mel_bins, rng)

    def forward(self, conditions: Tensor, targets=None, teacher_forced=True, rng=None):
        n = conditions.shape[0]
        pad = n % 2
        cond = T.pad_rows_repeat(conditions, pad)
        steps = (n + pad) // 2
        m = self.mel_bins
        if teacher_forced:
            if targets is None:
                raise ValueError("teacher forcing needs target mel frames")
            tgt = np.asarray(targets, dtype=np.float64)
            if tgt.shape != (n, m):
                raise ValueError(f"targets must be [{n}, {m}], got {tgt.shape}")
            prev = np.zeros((steps, m))
            prev[1:] = tgt[1 : 2 * steps - 1 : 2]
            pre_all = self.prenet(Tensor(prev), self.prenet.sample_masks(rng, steps))
        h = self.gru.initial_state()
        frame = Tensor(np.zeros(m))
        outs, hidden = [], []
        for k in range(steps):
            if teacher_forced:
                pre = pre_all[k]
            else:
                pre = self.prenet(frame, self.prenet.sample_masks(rng, 1))
            h = self.gru.step(T.concat([pre, cond[2 * k]], axis=0), h)
            out = self.proj(h)
            outs.append(out)
            hidden.append(h)
            if not teacher_forced:
                frame = Tensor(out.data[m:])
        mel = T.reshape(T.stack(outs), (2 * steps, m))
        if pad:
            mel = mel[:n]
        return mel, T.stack(hidden)


class PostNet(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cbhg = CBHG(
            cfg.mel_bins, cfg.postnet_bank_k, cfg.postnet_bank_channels,
            [cfg.postnet_projection, cfg.mel_bins], cfg.postnet_highway_layers,
            cfg.postnet_gru, rng, highway_dim=cfg.postnet_highway_dim,
        )
        self.proj = Linear(self.cbhg.out_dim, cfg.linear_bins, rng)

    def forward(self, mel: Tensor) -> Tensor:
        return self.proj(self.cbhg(mel))


class DurIANo(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = PhonemeEncoder(cfg, rng)
        self.singer = Embedding(cfg.n_singers, cfg.singer_emb, rng)
        self.role = Embedding(cfg.n_roles, cfg.role_emb, rng)
        self.fusion = Linear(cfg.encoder_out + cfg.singer_emb + cfg.role_emb, cfg.identity_fused, rng)
        if cfg.conditioning_mode == "note":
            self.note_pitch = Embedding(cfg.note_pitch_vocab, cfg.note_pitch_emb, rng)
            self.note_state = Embedding(cfg.note_state_vocab, cfg.note_state_emb, rng)
        self.decoder = Decoder(cfg, rng)
        self.postnet = PostNet(cfg, rng)
        self._check_dimensions()

    def _check_dimensions(self):
        c = self.cfg
        checks = {
            "phoneme embedding": (self.encoder.embedding.dim, c.phoneme_emb),
            "singer embedding": (self.singer.dim, c.singer_emb),
            "role embedding": (self.role.dim, c.role_emb),
            "encoder output": (self.encoder.cbhg.out_dim, c.encoder_out),
            "fusion output": (self.fusion.weight.shape[1], c.identity_fused),
            "decoder input": (self.decoder.gru.w_x.shape[0], c.decoder_prenet[-1] + c.condition_dim),
            "decoder output": (self.decoder.proj.weight.shape[1], c.frames_per_step * c.mel_bins),
            "linear output": (self.postnet.proj.weight.shape[1], c.linear_bins),
        }
        if c.conditioning_mode == "note":
            checks["note-pitch embedding"] = (self.note_pitch.dim, c.note_pitch_emb)
            checks["note-state embedding"] = (self.note_state.dim, c.note_state_emb)
        for what, (got, want) in checks.items():
            if got != want:
                raise ModelConfigError(f"{what}: built {got}, configured {want}")

    # -- pieces ------------------------------------------------------------

    def encode_phonemes(self, phoneme_ids, rng=None) -> Tensor:
        return self.encoder(np.asarray(phoneme_ids, dtype=np.int64), rng)

    def fuse_identity(self, encoded: Tensor, singer_id: int, role_id: int) -> Tensor:
        n = encoded.shape[0]
        singer = self.singer(np.full(n, singer_id))
        role = self.role(np.full(n, role_id))
        return self.fusion(T.concat([encoded, singer, role], axis=1))

    def build_conditions(self, fused: Tensor, plan: FrameFeaturePlan) -> Tensor:
        if self.cfg.conditioning_mode != "note":
            raise ModelConfigError("note conditions requested from an f0_scalar model")
        if len(plan.durations) != fused.shape[0]:
            raise ValueError("one duration per encoded phoneme required")
        if plan.n_frames != len(plan.note_pitch_ids):
            raise ValueError("duration sum differs from per-frame array length")
        expanded = T.take_rows(fused, np.repeat(np.arange(len(plan.durations)), plan.durations))
        return T.concat(
            [
                expanded,
                self.note_pitch(plan.note_pitch_ids),
                self.note_state(plan.note_state_ids),
                Tensor(plan.positions[:, None]),
            ],
            axis=1,
        )

    def build_conditions_f0(self, fused: Tensor, durations, f0_norm, positions) -> Tensor:
        durations = np.asarray(durations, dtype=np.int64)
        f0_norm = np.asarray(f0_norm, dtype=np.float64)
        positions = np.asarray(positions, dtype=np.float64)
        n = int(durations.sum())
        if len(f0_norm) != n or len(positions) != n:
            raise ValueError(f"f0_norm/positions must have {n} frames")
        expanded = T.take_rows(fused, np.repeat(np.arange(len(durations)), durations))
        return T.concat([expanded, Tensor(f0_norm[:, None]), Tensor(positions[:, None])], axis=1)

    def conditions(self, plan: FrameFeaturePlan, rng=None) -> Tensor:
        fused = self.fuse_identity(self.encode_phonemes(plan.phoneme_ids, rng), plan.singer_id, plan.role_type_id)
        if self.cfg.conditioning_mode == "note":
            return self.build_conditions(fused, plan)
        if plan.f0_norm is None:
            raise ValueError("f0_scalar conditioning needs plan.f0_norm")
        return self.build_conditions_f0(fused, plan.durations, plan.f0_norm, plan.positions)

    def decode(self, conditions: Tensor, targets=None, teacher_forced=True, rng=None):
        return self.decoder(conditions, targets, teacher_forced, rng)

    def postnet_linear(self, mel: Tensor) -> Tensor:
        return self.postnet(mel)

    def forward(self, plan: FrameFeaturePlan, mel_target=None, teacher_forced=True, rng=None):
        cond = self.conditions(plan, rng)
        mel, _ = self.decode(cond, mel_target, teacher_forced, rng)
        return mel, self.postnet_linear(mel)

    # -- state ---------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.named_parameters().items()}
        out.update({f"buffer/{k}": v for k, v in self.named_buffers().items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        params = self.named_parameters()
        for name, p in params.items():
            key = f"param/{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint lacks {key}")
            if arrays[key].shape != p.shape:
                raise ValueError(f"{key}: shape {arrays[key].shape} != {p.shape}")
            p.data[...] = arrays[key]
        for owner_name, module in _modules_with_buffers(self):
            for bname in module.buffers:
                key = f"buffer/{owner_name}{bname}"
                module.buffers[bname] = np.array(arrays[key], dtype=np.float64)


def _modules_with_buffers(module: Module, prefix: str = ""):
    if getattr(module, "buffers", None):
        yield prefix, module
    for key, value in module._children():
        if isinstance(value, Module):
            yield from _modules_with_buffers(value, f"{prefix}{key}.")


# ---------------------------------------------------------------- loss


def l1_sum(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    return T.abs_(pred - target).sum()


def l2_penalty(params) -> Tensor:
    terms = [T.square(p).sum() for p in params]
    return T.stack(terms).sum() if terms else Tensor(0.0)


def loss(mel_pred: Tensor, mel_tgt, lin_pred: Tensor, lin_tgt, params, l2: float) -> Tensor:
    """Mean absolute error on mel and linear outputs plus ``l2 * sum(theta^2)``."""
    total = l1_sum(mel_pred, mel_tgt) * (1.0 / mel_pred.data.size) + l1_sum(lin_pred, lin_tgt) * (
        1.0 / lin_pred.data.size
    )
    if l2:
        total = total + l2_penalty(params) * l2
    return total


# ---------------------------------------------------------------- synthesis


def predict_linear(model: DurIANo, plan: FrameFeaturePlan, seed: int = 0) -> np.ndarray:
    """Free-running prediction of the normalized linear spectrogram ``[T, linear_bins]``."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            rng = np.random.default_rng(seed)
            cond = model.conditions(plan)
            mel, _ = model.decode(cond, teacher_forced=False, rng=rng)
            lin = model.postnet_linear(mel)
    finally:
        model.train(was_training)
    return lin.data


def synthesize(
    model: DurIANo,
    plan: FrameFeaturePlan,
    stft_cfg: dsp.StftConfig | None = None,
    iterations: int = 60,
    seed: int = 0,
    return_spectrogram: bool = False,
):
    """encode -> fuse -> conditions -> free-running decode -> post-net -> Griffin-Lim."""
    stft_cfg = stft_cfg or dsp.StftConfig()
    if stft_cfg.n_bins != model.cfg.linear_bins:
        raise ModelConfigError(f"model predicts {model.cfg.linear_bins} bins, STFT has {stft_cfg.n_bins}")
    lin = predict_linear(model, plan, seed)
    audio = dsp.griffin_lim(dsp.features_to_magnitude(lin, stft_cfg), stft_cfg, iterations)
    return (audio, lin) if return_spectrogram else audio


# ---------------------------------------------------------------- checkpoints


def save_model(path: str | Path, model: DurIANo, extra: dict[str, np.ndarray] | None = None,
               meta: dict | None = None) -> None:
    tensors = model.state_arrays()
    tensors.update(extra or {})
    meta = dict(meta or {})
    meta["model_config"] = model.cfg.to_dict()
    save_tensors(path, tensors, meta)


def load_model(path: str | Path) -> tuple[DurIANo, dict[str, np.ndarray], dict]:
    tensors, meta = load_tensors(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = DurIANo(cfg)
    model.load_state_arrays(tensors)
    return model, tensors, meta
