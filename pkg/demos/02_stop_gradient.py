"""Gradient descent on features, with and without stop-gradient.

The online batch starts as a DirectPred-filtered copy of the target batch and
is pulled toward its positive partners. With stop-gradient the target stays
put and the online erank climbs toward it. Without it the target is pulled
down as well.
"""

from rdm.data import IsotropicAugModel, pair_batches
from rdm.dynamics import simulate_feature_gd
from rdm.filters import apply_online_filter, directpred
from rdm.seeding import stream

model = IsotropicAugModel.random(32, 16, 0.5, stream(0, "init"))
z, z_pair = pair_batches(model, 512, stream(0, "data"))
p0 = apply_online_filter(z, directpred)

runs = {sg: simulate_feature_gd(p0, z, z_pair, 0.01, 500, stop_gradient=sg, stride=100) for sg in (True, False)}
print(" step | sg on: online  target | sg off: online  target")
for i, step in enumerate(runs[True].step):
    on, off = runs[True], runs[False]
    print(
        f"{step:5d} | {on.erank_online[i]:13.3f} {on.erank_target[i]:7.3f} |"
        f" {off.erank_online[i]:14.3f} {off.erank_target[i]:7.3f}"
    )
