"""Write the synthetic toy corpus (wav + lab + notes + score per phrase)."""
import argparse

from duriano import toy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="directory to create")
    ap.add_argument("--holdout", default="", help="phrase id to put in its own piece")
    args = ap.parse_args()
    pieces = {args.holdout: "piece1"} if args.holdout else None
    for pid in toy.write_toy_corpus(args.out, pieces=pieces):
        print(pid)


if __name__ == "__main__":
    main()
