"""
Which groups interact
=====================

The mean absolute dot product between two group embeddings measures how much
the model relies on them jointly. The pairwise-product universe plants a signal
that neither group carries on its own.
"""
from deepcovidnet import Hyperparams, SplitSpec, build_samples, bundled_spec, generate_synthetic, train
from deepcovidnet import analysis

spec = bundled_spec("pairwise_product")
ds = build_samples(generate_synthetic(spec))
split = SplitSpec.from_fractions(ds.dates())
model = train(ds, Hyperparams(), split, seed=0).model

m = analysis.interaction_magnitudes(model, analysis.eval_subset(split.partition(ds)["train"], seed=0))
print("planted:", spec.recipe[0].features)
for a, b, v in sorted(m.long_rows(), key=lambda r: -r[2])[:5]:
    print(f"  {a:20s} x {b:20s} {v:6.2f}")
