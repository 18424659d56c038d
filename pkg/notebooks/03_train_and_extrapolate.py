"""
Train on a converging wake and extrapolate
==========================================

The acceptance benchmark end to end: 11 POD coefficients, windows of 10
steps, 20 epochs. The model is seeded with the first 10% of the steps and
rolled forward on its own predictions up to step 90.

Takes about a minute single-threaded.
"""

import time

import numpy as np
from threadpoolctl import threadpool_limits

from flowrom import dataio
from flowrom.prompt import DatasetContext
from flowrom.rompipe import build_rom, run_protocol, save_rom
from flowrom.train import TrainConfig

snap = dataio.synth_wake(dataio.SynthWakeSpec(modes=5, steps=110, decay=3.0, seed=1))
ctx = DatasetContext("synth_wake", "velocity", 0.2, 4, 5e6)

with threadpool_limits(1):
    t0 = time.perf_counter()
    rom = build_rom(snap, ctx, r=11, train_fraction=0.8, config=TrainConfig(seed=0),
                    progress=lambda e, loss: print(f"epoch {e:2d} loss {loss:.5f}"))
    print(f"trained in {time.perf_counter() - t0:.0f} s")
    res = run_protocol(rom, snap, ctx, seed_fraction=0.1, to_step=90)

s0 = res.first_forecast_step
truth = snap.data[:, s0:90]
rel = res.rmse_per_step[s0:].mean() / np.sqrt(np.mean(truth**2))
print(f"seeded with {s0} steps; mean RMSE {res.rmse_per_step[s0:].mean():.4g}; relative {rel:.4g}")
for step in (s0, s0 + 5, s0 + 20, 50, 89):
    print(f"step {step + 1:3d}: RMSE {res.rmse_per_step[step]:.4g}")

# Persist the model and the per-step error curve.
save_rom(rom, "notebooks_rom.flowwgt")
dataio.export_csv(res, "notebooks_rmse.csv")
dataio.export_heatmap(np.abs(res.fields_pred.data[:, 20] - snap.data[:, 20]), snap.grid, "notebooks_err21.ppm")
print("wrote notebooks_rom.flowwgt (+ .manifest), notebooks_rmse.csv, notebooks_err21.ppm")
