"""
Where does the model look?
==========================

With the distractor switched off, severity lives only in the ROI box.
We train a dual model, compute |d logit / d x| for each test subject and
measure how much saliency falls inside the ROI.
"""

import numpy as np

from hierprobe.microtrain import TrainConfig, input_saliency, train
from hierprobe.saliency import mean_report, overlap_report
from hierprobe.synth import SynthConfig, generate_cohort

cohort = generate_cohort(SynthConfig(seed=2, distractor_gain=0.0))
model = train(cohort.inputs("train"), cohort.records("train"), TrainConfig(seed=2), "dual").model

dims = cohort.roi_mask.shape
reports = [
    overlap_report(input_saliency(model, x, "kl_predicted").reshape(dims), cohort.roi_mask, qs=(5, 10))
    for x in cohort.inputs("test")
]
avg = mean_report(reports)
frac = cohort.roi_mask.mean()
print(f"ROI covers {frac:.4f} of the voxels")
print(f"mass@ROI {avg.mass_roi:.3f}  ({avg.mass_roi / frac:.1f}x the uniform baseline)")
print(f"top1@ROI {avg.top1_roi:.3f}  Dice@5 {avg.dice[5]:.3f}  Dice@10 {avg.dice[10]:.3f}")

# the same metrics on a uniform map give the baseline
flat = overlap_report(np.ones(dims), cohort.roi_mask)
print("uniform map mass@ROI:", round(flat.mass_roi, 4))
