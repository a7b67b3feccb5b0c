"""
KL grades and the derived OA label
==================================

Every subject carries a fine KL grade (0..4). The coarse OA label is not
annotated separately; it is derived from the grade (OA present when KL >= 2).
A 5-way KL distribution likewise implies an OA probability.
"""

import numpy as np

from hierprobe.hierarchy import (
    LabelRecord,
    derive_oa,
    oa_prob_from_kl,
    records_from_counts,
    summarize_cohort,
)

# the coarse label, grade by grade
for kl in range(5):
    print(f"KL {kl} -> OA {derive_oa(kl)}")

# records derive OA on construction, and reject inconsistent pairs
rec = LabelRecord("knee-001", 3)
print(rec)

# cohort summary for a split with 82/46/86/111/58 subjects per grade
summary = summarize_cohort(records_from_counts((82, 46, 86, 111, 58)))
print("grade counts:", summary.grade_counts)
print("OA negative / positive:", summary.oa_negative, "/", summary.oa_positive)

# a KL distribution marginalises to an OA probability: p2 + p3 + p4
p_kl = np.array([0.1, 0.2, 0.3, 0.3, 0.1])
print("p(OA) =", oa_prob_from_kl(p_kl))
