"""
What the backbone reads before the patches
==========================================

Every window gets a three-part text prefix: dataset context, task
guidance and statistics of the window itself. This walks through one.
"""

import numpy as np

from flowrom.prompt import DatasetContext, TaskSpec, Vocab, compute_stats, detokenize, render_prompt, tokenize
from flowrom.series import Window

ctx = DatasetContext("naca0012", "pressure", 0.2, 4, 5e6)
task = TaskSpec(lookback=10, horizon=1)

# A slowly rising, oscillating window of one POD coefficient.
t = np.arange(10)
window = Window(0.3 * t + np.sin(1.3 * t))
stats = compute_stats(window, k=5)
print("stats:", stats)

text = render_prompt(ctx, task, stats)
print(text)

# Tokenization lower-cases, splits punctuation and spells numbers one
# character at a time; unknown words map to <unk>.
vocab = Vocab.load()
ids = tokenize(text, vocab)
print(len(ids), "tokens")
print(detokenize(ids[:24], vocab), "...")

# Changing the Mach number only touches the context line.
other = render_prompt(DatasetContext("naca0012", "pressure", 0.6, 4, 5e6), task, stats)
for a, b in zip(text.splitlines(), other.splitlines()):
    print("same" if a == b else "diff", "|", b)
