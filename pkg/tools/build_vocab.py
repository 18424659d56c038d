"""Regenerate src/flowrom/data/vocab.txt.

The vocabulary is the template lexicon, digits and punctuation, a small
flow-physics lexicon, and then the most frequent alphabetic words of the
Python reference topics shipped with the interpreter (pydoc_data), up to
TARGET entries. Run from the repository root:

    python3 tools/build_vocab.py [--out PATH]

The word counts depend on the interpreter's pydoc_data, so the checked-in
file is the reference; regenerating under another Python version may
change the tail of the list (and the model manifest's vocabulary hash).
"""

import argparse
import collections
import re
from pathlib import Path

from pydoc_data.topics import topics

TARGET = 2000
ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "flowrom" / "data"

SPECIALS = ["<unk>", "<pad>", "<sep>"]
SYMBOLS = list("0123456789") + list(".,:;!?()[]{}+-*/=<>%'\"_") + ["e"]
PHYSICS = """
flow field fluid velocity pressure density vorticity temperature vortex vortices wake cylinder airfoil
wing inflow outflow inlet outlet boundary layer wall shear turbulence turbulent laminar transition
separation reattachment shock supercritical subsonic transonic mach reynolds angle attack lift drag
incidence chord camber thickness naca clarky rae sc nlf degrees coefficient coefficients reduced
order model mode modes basis orthogonal decomposition snapshot snapshots steady unsteady periodic
oscillation oscillating shedding frequency amplitude phase convection convective diffusion decay
decaying converged converging convergence developing initial state transient stable stabilize
dataset context task guidance input statistics min max median mean trend lags lag up down flat
predict prediction forecast next previous steps step series time window horizon lookback value
values channel channels extrapolate extrapolation autoregressive
"""


def template_words():
    words = set()
    for path in DATA.glob("template_*.txt"):
        text = path.read_text(encoding="utf-8")
        text = re.sub(r"\{[a-z_]+\}", " ", text)
        words.update(re.findall(r"[a-z]+", text.lower()))
    return sorted(words)


def main():
    ap = argparse.ArgumentParser(description="Regenerate the word-level vocabulary file.")
    ap.add_argument("--out", type=Path, default=DATA / "vocab.txt")
    args = ap.parse_args()
    vocab = list(SPECIALS)
    seen = set(vocab)

    def add(tok):
        if tok not in seen:
            seen.add(tok)
            vocab.append(tok)

    for tok in SYMBOLS + template_words() + PHYSICS.split():
        add(tok)
    counts = collections.Counter()
    for text in topics.values():
        counts.update(w for w in re.findall(r"[a-z]+", text.lower()) if len(w) > 1)
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(vocab) >= TARGET:
            break
        add(word)
    args.out.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    print(f"wrote {len(vocab)} tokens to {args.out}")


if __name__ == "__main__":
    main()
