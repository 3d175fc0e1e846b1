"""
Checking gradients
==================

Every parameter gradient of the full network and loss, compared with central
finite differences. Dropout is off so the loss is deterministic.
"""
from deepcovidnet.training import full_gradient_check

report = full_gradient_check(seed=0, e=8)
for name, err in sorted(report.max_rel_err.items(), key=lambda kv: -kv[1])[:6]:
    print(f"  {name:30s} {err:.2e}")
print("passed" if report.passed else "FAILED", f"(worst {report.worst:.2e})")
