"""A low-pass filter on the online branch lowers its effective rank.

We draw a batch with a decaying spectrum, push it through each online filter
of the zoo, and compare the effective rank of the two branches. We then read
the filter back off the two outputs: seen from the target side it is a
high-pass filter.
"""

import numpy as np

from rdm import apply_online_filter, correlation, effective_rank, extract_transformation_filter
from rdm.filters import directpred, log, log1p, log1psq
from rdm.harness import rank_skewed_batch
from rdm.seeding import stream


def erank(batch):
    return effective_rank(np.linalg.eigvalsh(correlation(batch).matrix).clip(min=0))


z = rank_skewed_batch(512, 16, stream(0, "data"))
print(f"target branch erank: {erank(z):.3f}")
for f in (directpred, log, log1p, log1psq):
    p = apply_online_filter(z, f)
    tf = extract_transformation_filter(p, z)
    print(f"  online {f.name:<10} erank {erank(p):7.3f}   equivalent target filter: {tf.kind.value}")
