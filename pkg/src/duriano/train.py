"""Optimization: Adam with exponential decay, batched teacher-forced steps, resumable state."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TrainingExample
from .model import DurIANo, l1_sum, l2_penalty, load_model, save_model
from .nn import tensor as T


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    decay_rate: float = 0.5
    decay_steps: int = 50_000
    l2: float = 1e-6
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}
        self.step_count = 0

    def learning_rate(self, step: int | None = None) -> float:
        step = self.step_count if step is None else step
        c = self.cfg
        return c.learning_rate * c.decay_rate ** (step / c.decay_steps)

    def update(self):
        c = self.cfg
        lr = self.learning_rate()
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = _f32(c.beta1 * self.m[name] + (1 - c.beta1) * g)
            self.v[name] = _f32(c.beta2 * self.v[name] + (1 - c.beta2) * g * g)
            mhat = self.m[name] / (1 - c.beta1**t)
            vhat = self.v[name] / (1 - c.beta2**t)
            new = p.data - lr * mhat / (np.sqrt(vhat) + c.epsilon)
            if not np.all(np.isfinite(new)):
                raise TrainingDiverged(f"non-finite update for {name} at step {t}")
            p.data[...] = _f32(new)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int):
        for k in self.params:
            self.m[k] = np.array(arrays[f"adam.m/{k}"])
            self.v[k] = np.array(arrays[f"adam.v/{k}"])
        self.step_count = step


@dataclass
class StepResult:
    step: int
    loss: float
    loss_mel: float
    loss_linear: float
    l2: float
    wallclock_ms: float = 0.0
    phrase_ids: list[str] = field(default_factory=list)

    def log_line(self) -> str:
        return (
            f"{self.step}\t{self.loss_mel:.9g}\t{self.loss_linear:.9g}\t{self.l2:.9g}\t"
            f"{self.wallclock_ms:.0f}"
        )


def batch_loss(model: DurIANo, batch: list[TrainingExample], l2: float, rng=None):
    """Frame-weighted L1 over a batch plus the L2 penalty.

    Equivalent to padding the batch and masking padded frames: each phrase
    runs its own graph and absolute errors are averaged over all real frames.
    """
    mel_err = lin_err = None
    mel_count = lin_count = 0
    for ex in batch:
        mel, lin = model(ex.plan, ex.mel_target, teacher_forced=True, rng=rng)
        e_mel = l1_sum(mel, ex.mel_target)
        e_lin = l1_sum(lin, ex.linear_target)
        mel_err = e_mel if mel_err is None else mel_err + e_mel
        lin_err = e_lin if lin_err is None else lin_err + e_lin
        mel_count += ex.mel_target.size
        lin_count += ex.linear_target.size
    loss_mel = mel_err * (1.0 / mel_count)
    loss_lin = lin_err * (1.0 / lin_count)
    penalty = l2_penalty(model.parameters())
    total = loss_mel + loss_lin + penalty * l2
    return total, loss_mel, loss_lin, penalty


class Trainer:
    """Owns the model, optimizer and example order.

    Randomness (batch order, dropout) is derived from ``(seed, step)`` so a
    resumed run replays exactly the same trajectory.
    """

    def __init__(self, model: DurIANo, examples: list[TrainingExample], cfg: TrainConfig | None = None):
        if not examples:
            raise ValueError("no training examples")
        self.model = model
        self.examples = examples
        self.cfg = cfg or TrainConfig()
        self.optimizer = Adam(model.named_parameters(), self.cfg)

    @property
    def step(self) -> int:
        return self.optimizer.step_count

    def batch_for(self, step: int) -> list[TrainingExample]:
        n = len(self.examples)
        bs = min(self.cfg.batch_size, n)
        per_epoch = math.ceil(n / bs)
        epoch, offset = divmod(step, per_epoch)
        order = np.random.default_rng([self.cfg.seed, epoch]).permutation(n)
        return [self.examples[i] for i in order[offset * bs : offset * bs + bs]]

    def train_step(self, batch: list[TrainingExample] | None = None) -> StepResult:
        step = self.step
        batch = batch if batch is not None else self.batch_for(step)
        t0 = time.perf_counter()
        self.model.train()
        self.model.zero_grad()
        rng = np.random.default_rng([self.cfg.seed, step, 1])
        total, loss_mel, loss_lin, penalty = batch_loss(self.model, batch, self.cfg.l2, rng)
        value = float(total.data)
        ids = [ex.phrase_id for ex in batch]
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step} for phrases {ids}")
        total.backward()
        norms = {k: float(np.linalg.norm(p.grad)) for k, p in self.model.named_parameters().items() if p.grad is not None}
        if not all(math.isfinite(v) for v in norms.values()):
            worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
            raise TrainingDiverged(
                f"non-finite gradient at step {step} for phrases {ids}; grad norms {worst}"
            )
        self.optimizer.update()
        return StepResult(
            step=step + 1,
            loss=value,
            loss_mel=float(loss_mel.data),
            loss_linear=float(loss_lin.data),
            l2=float(penalty.data),
            wallclock_ms=(time.perf_counter() - t0) * 1000.0,
            phrase_ids=ids,
        )

    def evaluate(self, examples: list[TrainingExample]) -> float:
        """Teacher-forced loss without dropout or parameter updates."""
        self.model.eval()
        with T.no_grad():
            total, *_ = batch_loss(self.model, examples, self.cfg.l2, None)
        self.model.train()
        return float(total.data)

    def save(self, path: str | Path, meta: dict | None = None):
        meta = dict(meta or {})
        meta.update(step=self.step, train_config=self.cfg.__dict__)
        save_model(path, self.model, self.optimizer.state_arrays(), meta)

    @classmethod
    def resume(cls, path: str | Path, examples: list[TrainingExample]) -> tuple["Trainer", dict]:
        model, tensors, meta = load_model(path)
        cfg = TrainConfig(**meta["train_config"])
        trainer = cls(model, examples, cfg)
        trainer.optimizer.load_state_arrays(tensors, int(meta["step"]))
        return trainer, meta
