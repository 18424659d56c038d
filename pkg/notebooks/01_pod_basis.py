"""
POD of a synthetic wake
=======================

Generate a convecting wake, fit a POD basis, and look at how fast the
energy is captured and how the projection error falls with the rank.
"""

import numpy as np

from flowrom import dataio, pod

# Two convecting modes over a 32 x 16 grid. Each sine mode splits into two
# separable space-time products, so the centered data has rank 4.
spec = dataio.SynthWakeSpec(modes=2, steps=110, seed=0)
snap = dataio.synth_wake(spec)
print("snapshot matrix", snap.data.shape, "grid", snap.grid)

# Fit on the first 80% of the steps, as the training split does.
train = snap.columns(0, 88)
basis = pod.fit_basis(train, r=8)
energy = pod.energy_spectrum(basis)
for k in range(6):
    print(f"mode {k + 1}: sigma={basis.singular_values[k]:.4g}  cumulative energy={energy[k]:.6f}")

# Projection error on all 110 steps, including the 22 the basis never saw.
for r in (1, 2, 3, 4, 6):
    b = pod.fit_basis(train, r)
    recon = pod.reconstruct_series(b, pod.reduce_snapshots(b, snap))
    rmse = np.sqrt(np.mean((recon.data - snap.data) ** 2))
    print(f"r={r}: projection RMSE {rmse:.3e}")

# A heatmap of the first snapshot and of the first POD mode.
dataio.export_heatmap(snap.data[:, 0], snap.grid, "notebooks_snapshot0.ppm")
dataio.export_heatmap(basis.basis[:, 0], snap.grid, "notebooks_mode1.ppm")
print("wrote notebooks_snapshot0.ppm and notebooks_mode1.ppm")
