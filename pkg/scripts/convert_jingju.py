"""Convert Praat TextGrid phoneme tiers to the corpus ``.lab`` format.

Each TextGrid next to a wav becomes ``<stem>.lab``. Empty intervals become
silence; symbols can be renamed through a two-column mapping file. Phrase
boundaries are taken from a second tier when ``--phrase-tier`` is given,
otherwise the whole file is one phrase.

    python3 scripts/convert_jingju.py raw/ corpus/ --singer laosheng1 --role laosheng
"""
import argparse
import re
import shutil
from pathlib import Path

from duriano import dsp
from duriano.corpus import SIL, PhraseAnnotation, write_annotation

_TIER = re.compile(r'item\s*\[\d+\]:\s*class\s*=\s*"IntervalTier"\s*name\s*=\s*"([^"]*)"(.*?)(?=item\s*\[\d+\]:|\Z)', re.S)
_INTERVAL = re.compile(r'xmin\s*=\s*([\d.eE+-]+)\s*xmax\s*=\s*([\d.eE+-]+)\s*text\s*=\s*"((?:[^"]|"")*)"', re.S)


def read_textgrid(path):
    """{tier name: [(start, end, text), ...]} for every interval tier (long text format)."""
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    tiers = {}
    for name, body in _TIER.findall(text):
        rows = _INTERVAL.findall(body.split("intervals: size", 1)[-1])
        tiers[name] = [(float(a), float(b), t.replace('""', '"').strip()) for a, b, t in rows]
    return tiers


def load_mapping(path):
    if not path:
        return {}
    pairs = (line.split() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip())
    return {p[0]: p[1] for p in pairs if len(p) == 2}


def split_phrases(phones, phrases):
    if phrases is None:
        return [phones]
    out = []
    for start, end, label in phrases:
        if not label:
            continue
        inside = [(max(s, start) - start, min(e, end) - start, p) for s, e, p in phones if s < end and e > start]
        out.append(inside)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--tier", default="phoneme")
    ap.add_argument("--phrase-tier")
    ap.add_argument("--map", help="file of 'source target' symbol pairs")
    ap.add_argument("--singer", default="singer0")
    ap.add_argument("--role", default="role0")
    args = ap.parse_args()

    mapping = load_mapping(args.map)
    dst = Path(args.dst)
    dst.mkdir(parents=True, exist_ok=True)
    for grid in sorted(Path(args.src).glob("*.TextGrid")):
        wav = grid.with_suffix(".wav")
        if not wav.exists():
            print(f"skip {grid.name}: no wav")
            continue
        tiers = read_textgrid(grid)
        if args.tier not in tiers:
            print(f"skip {grid.name}: no tier {args.tier!r} (has {sorted(tiers)})")
            continue
        phones = [(s, e, mapping.get(t, t) or SIL) for s, e, t in tiers[args.tier]]
        phrases = tiers.get(args.phrase_tier) if args.phrase_tier else None
        audio = dsp.read_wav(wav)
        for i, intervals in enumerate(split_phrases(phones, phrases)):
            pid = grid.stem if phrases is None else f"{grid.stem}_{i:03d}"
            if phrases is None:
                shutil.copyfile(wav, dst / f"{pid}.wav")
            else:
                start = [p for p in phrases if p[2]][i][0]
                n0 = int(round(start * audio.sample_rate))
                n1 = n0 + int(round(intervals[-1][1] * audio.sample_rate))
                dsp.write_wav(dst / f"{pid}.wav", dsp.AudioBuffer(audio.samples[n0:n1], audio.sample_rate))
            ann = PhraseAnnotation(dst / f"{pid}.wav", intervals, args.singer, args.role, grid.stem, pid)
            write_annotation(dst / f"{pid}.lab", ann)
            print(pid)


if __name__ == "__main__":
    main()
