"""Exact information-theoretic checks on small discrete joints.

Evaluates the chain rule, the two bound directions, and the
independence residuals, then exhibits a joint where multi-level labels
are strictly more informative than the finest level alone.
"""

import numpy as np

from seal.theory import (
    DiscreteJoint,
    check_independence_lemma,
    check_supervised_bound,
    check_unsupervised_bound,
    chain_rule_residual,
    mutual_information,
    product_joint,
    random_joint,
    run_verification,
)

print("verification harness (200 random joints per check):")
for record in run_verification(trials=200, seed=0):
    status = "PASS" if record["passed"] else "FAIL"
    print(f"  {record['check']:<26} {status}  worst residual {record['worst']:.2e}")

rng = np.random.default_rng(1)
j = random_joint(("Z", "Y1", "Y2", "Y3"), (2, 2, 2, 2), rng)
print("\nchain-rule residual on a random 4-axis joint:",
      f"{chain_rule_residual(j, ('Z',), ('Y1', 'Y2', 'Y3')):.2e}")

# XOR construction: the coarse label carries information the fine label lacks
table = np.zeros((2, 2, 2))
for y1 in range(2):
    for y2 in range(2):
        table[y1 ^ y2, y1, y2] = 0.25
xor = DiscreteJoint(axes=("Z", "Y1", "Y2"), table=table)
res = check_supervised_bound(xor)
print("\nXOR joint: I(Z; all labels) =", round(res.lhs, 4),
      " I(Z; finest) =", round(res.rhs, 4), " strictly tighter:", res.lhs > res.rhs)

unsup = random_joint(("X", "Y1", "Y2"), (3, 2, 3), rng)
res = check_unsupervised_bound(unsup)
print("entropy-difference bound on a random joint:",
      f"lhs={res.lhs:.4f} <= rhs={res.rhs:.4f} holds={res.holds}")

block_l = random_joint(("Zl", "Yl"), (3, 2), rng)
block_u = random_joint(("Zu", "Yu"), (2, 3), rng)
resid = check_independence_lemma(product_joint(block_l, block_u))
print("independence residuals on a product joint:",
      f"{resid.label_given_label:.2e}, {resid.feature_given_feature:.2e}")
print("for contrast, I(Zl;Yl) inside the labelled block:",
      round(mutual_information(block_l, ("Zl",), ("Yl",)), 4))
