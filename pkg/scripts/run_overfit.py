"""Two-phrase overfit run: loss curve, final ratio and conditioning fidelity.

    python3 scripts/run_overfit.py --steps 200 --lr 2e-3 --out overfit.tsv
"""
import argparse
import dataclasses
import time

import numpy as np

from duriano import dsp, toy
from duriano.evalsuite import pearson
from duriano.model import DurIANo, synthesize
from duriano.pitch import extract_f0, midi_to_hz
from duriano.train import Trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, help="override the overfit learning rate")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write step<TAB>loss rows here")
    ap.add_argument("--no-synth", action="store_true", help="skip the f0 correlation check")
    args = ap.parse_args()

    cfg = dsp.StftConfig()
    examples = toy.toy_examples(("toy_a", "toy_b"), cfg)
    model_cfg, train_cfg = toy.overfit_setup(args.seed)
    if args.lr is not None:
        train_cfg = dataclasses.replace(train_cfg, learning_rate=args.lr)
    trainer = Trainer(DurIANo(model_cfg, seed=args.seed), examples, train_cfg)

    t0 = time.perf_counter()
    losses = []
    for _ in range(args.steps):
        r = trainer.train_step()
        losses.append(r.loss)
        if r.step == 1 or r.step % 20 == 0:
            print(f"step {r.step:4d}  loss {r.loss:.5f}  mel {r.loss_mel:.5f}  lin {r.loss_linear:.5f}")
    print(f"ratio {losses[-1] / losses[0]:.4f} after {args.steps} steps ({time.perf_counter() - t0:.0f} s)")
    if args.out:
        np.savetxt(args.out, np.c_[np.arange(1, len(losses) + 1), losses], fmt=["%d", "%.9g"], delimiter="\t")

    if not args.no_synth:
        for ex in examples:
            audio = synthesize(trainer.model, ex.plan, cfg, 60)
            f0 = extract_f0(audio, cfg.hop_length).f0[: ex.n_frames]
            ids = ex.plan.note_pitch_ids
            notes = np.where(ids > 0, midi_to_hz(ids + 35.0), 0.0)
            print(f"{ex.phrase_id}: f0 pearson {pearson(f0, notes[: len(f0)]):.3f}")


if __name__ == "__main__":
    main()
