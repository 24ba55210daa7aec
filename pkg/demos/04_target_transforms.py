"""Hand-crafted target transforms read as spectral filters.

Sinkhorn-Knopp equipartition and a whitening power filter both act as
high-pass filters on the target branch. Centering with sharpening shows no
clear trend on this batch.
"""

from rdm.filters import extract_transformation_filter, parse_filter
from rdm.harness import filter_branches, rank_skewed_batch
from rdm.seeding import stream

z = rank_skewed_batch(256, 32, stream(3, "data"))
for spec in ("pow:-0.3", "pow:-1", "sinkhorn:1:0.05", "sinkhorn:3:0.05", "sinkhorn:5:0.05", "centersharp:0.05"):
    online, target = filter_branches(parse_filter(spec), z)
    tf = extract_transformation_filter(online, target)
    print(f"{spec:<18} {tf.kind.value:<12} spearman {tf.spearman:+.3f}")
