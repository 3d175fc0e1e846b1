"""
Bayesian hyperparameter search
==============================

A Gaussian-process surrogate with expected improvement, first on a toy
objective and then on the real search space with a tiny budget.
"""
from deepcovidnet import SplitSpec, build_samples, generate_synthetic
from deepcovidnet.synthetic import SyntheticUniverseSpec
from deepcovidnet.tuning import Dim, SearchSpace, bayes_opt, best_trial, maximize

# The toy objective peaks at x = 0.5
trials = maximize(lambda p: -((p["x"] - 0.5) ** 2), SearchSpace([Dim("x", 0.0, 1.0)]), budget=20, seed=0)
for t in trials[::4]:
    print(f"  trial {t.index:2d} ({t.phase:6s}) x={t.params['x']:.3f} value={t.value:.4f}")
print("best x:", round(best_trial(trials).params["x"], 4))

# Each trial on real data is a full step-one training run
ds = build_samples(generate_synthetic(SyntheticUniverseSpec(counties=6, days=40, seed=1)))
split = SplitSpec.from_fractions(ds.dates())
hp, epochs, trials = bayes_opt(ds, split, budget=6, seed=0)
print(f"\nchosen: e={hp.e} lr={hp.learning_rate:.2g} dropout={hp.dropout_rate:.2f}, {epochs} epochs")
