"""
Which days matter
=================

Shuffle a single past day in every time-indexed group at once. On a universe
whose label depends on the most recent input day, offset 1 should dominate.
"""
import numpy as np

from deepcovidnet import Hyperparams, SplitSpec, build_samples, bundled_spec, generate_synthetic, train
from deepcovidnet import analysis
from deepcovidnet import rng as rngmod

ds = build_samples(generate_synthetic(bundled_spec("recent_day")))
split = SplitSpec.from_fractions(ds.dates())
model = train(ds, Hyperparams(), split, seed=0).model

ev = analysis.eval_subset(split.partition(ds)["train"], seed=0)
report = analysis.timestep_importance(model, ev, rngmod.substream(0, rngmod.ANALYSIS, 1))
for offset, drop in zip(report.offsets, report.drops):
    print(f"  day -{offset:2d}  drop {drop:+.3f}  " + "#" * int(max(drop, 0) * 60))
print("most important offset:", report.offsets[int(np.argmax(report.drops))])
