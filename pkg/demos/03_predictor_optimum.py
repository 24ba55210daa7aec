"""A trained linear predictor shares the target's eigenbasis.

Gradient descent on W for the isotropic linear model converges to the
regularized optimum, and along the way the online and target correlations
become aligned.
"""

import numpy as np

from rdm.dynamics import LinearModel, isotropic_optimum, linear_training_run

rng = np.random.default_rng(1)
wf = rng.standard_normal((8, 16)) / 4.0
model = LinearModel(wf, 0.1 * rng.standard_normal((8, 8)), eta=0.01, alpha=0.3, aug_std=0.5)
rec = linear_training_run(model, 1500, stride=250)
for step, al, eo in zip(rec.step, rec.alignment, rec.erank_online):
    print(f"step {step:5d}  alignment {al:.6f}  online erank {eo:.3f}")
print("relative distance to W*:", f"{rec.meta['rel_error']:.2e}")
print("W* eigenvalues:", np.round(np.sort(np.linalg.eigvals(isotropic_optimum(model)).real), 4))
