"""
Prompt and reprogramming ablation
=================================

Compare the full model with three ablated variants on the converging
wake: no prompt, a prompt with its tokens shuffled, and a plain linear map
in place of the prototype attention. Pass the number of seeds as the first
argument (default 2); each full-variant seed takes about a minute.
"""

import sys

from threadpoolctl import threadpool_limits

from flowrom import dataio
from flowrom.cli import ablation_medians
from flowrom.prompt import DatasetContext

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 2
snap = dataio.synth_wake(dataio.SynthWakeSpec(modes=5, steps=110, decay=3.0, seed=1))
ctx = DatasetContext("synth_wake", "velocity", 0.2, 4, 5e6)

# Per-variant lines (with the per-seed scores) go to stderr as they finish.
with threadpool_limits(1):
    table = ablation_medians([(snap, ctx)], seeds)

for variant, rmse in table.items():
    print(f"{variant:>17s}: median RMSE {rmse:.4g}")
