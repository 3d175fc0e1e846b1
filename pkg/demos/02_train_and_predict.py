"""
Training and prediction
=======================

Step one trains on the earliest 68% of label dates and picks the epoch with the
best validation accuracy. Step two retrains on train plus validation for that
many epochs. The result predicts a distribution over rise ranges.
"""
import numpy as np

from deepcovidnet import Hyperparams, SplitSpec, build_samples, bundled_spec, generate_synthetic, train, train_two_step

u = generate_synthetic(bundled_spec("desk_small"))
ds = build_samples(u)
split = SplitSpec.from_fractions(ds.dates())
test = split.partition(ds)["test"]

hp = Hyperparams()
step1 = train(ds, hp, split, seed=0)
print(f"step one: best epoch {step1.best_epoch}, validation accuracy {step1.best_val_accuracy:.3f}")

model = train_two_step(ds, hp, split, step1.best_epoch, seed=0)
print(f"test accuracy: step one {step1.model.accuracy(test.inputs, test.classes):.3f}, "
      f"two-step {model.accuracy(test.inputs, test.classes):.3f}")

# A majority-class guess is the naive reference
majority = np.bincount(split.partition(ds)["train"].classes).argmax()
print(f"majority-class baseline: {np.mean(test.classes == majority):.3f}")

pred = model.predict({k: v[:3] for k, v in test.inputs.items()})
ranges = model.boundaries.ranges()
for probs, k in zip(pred.class_probs, pred.predicted_class):
    print(np.round(probs, 3), "->", ranges[k])
