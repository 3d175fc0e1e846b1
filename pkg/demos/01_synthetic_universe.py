"""
A planted-signal universe
=========================

Generate a small synthetic universe and look at what the model will see:
the feature groups, and the classes that weekly case rises fall into.
"""
import numpy as np

from deepcovidnet import build_samples, bundled_spec, generate_synthetic

spec = bundled_spec("desk_small")
u = generate_synthetic(spec)
print(f"{u.n_counties} counties over {u.n_days} days starting {u.start}")

# Each group is constant [county, n], daily [day, county, n] or a flow tensor
for name, g in u.groups.items():
    print(f"  {name:20s} {g.kind:15s} {g.values.shape}")

# One sample per (county, label day); the input window ends 7 days before the label
ds = build_samples(u)
print(f"\n{len(ds)} samples, class boundaries {ds.boundaries.to_list()}")
print("class shares:", np.round(np.bincount(ds.classes) / len(ds), 3))

# The label is a known function of one feature's 13-day mean
print("planted recipe:", spec.recipe)
