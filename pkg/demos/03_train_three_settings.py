"""
Single-OA, single-KL and dual supervision on a synthetic cohort
===============================================================

The synthetic cohort has a small ROI whose intensity drops with every KL
grade and a larger distractor box that only knows about OA. Training labels
carry adjacent-grade noise; test labels are clean.

We train the micro model under all three settings with the default recipe
(batch 2, lr 1e-4, weight decay 1e-4, 100 epochs) and compare KL metrics.
Takes about half a minute.
"""

import numpy as np

from hierprobe.metrics import evaluate_kl, evaluate_oa
from hierprobe.microtrain import TrainConfig, predict, train
from hierprobe.synth import SynthConfig, generate_cohort

cohort = generate_cohort(SynthConfig(seed=0))
x_train, y_train = cohort.inputs("train"), cohort.records("train")
x_test, y_test, ids = cohort.inputs("test"), cohort.records("test"), cohort.ids("test")
print("train subjects:", len(y_train), "test subjects:", len(y_test))
print("observed training labels differ from truth for",
      int(np.sum(cohort.kl_observed != cohort.kl_true)), "subjects")

cfg = TrainConfig(seed=0)
for setting in ("single_oa", "single_kl", "dual"):
    result = train(x_train, y_train, cfg, setting)
    preds = predict(result.model, x_test, ids)
    line = f"{setting:9s} final loss {result.loss_history[-1]:.3f}  OA auc {evaluate_oa(preds, y_test).auc:.3f}"
    if preds.p_kl is not None:
        kl = evaluate_kl(preds, y_test)
        line += f"  KL auc {kl.auc:.3f}  KL macro-F1 {kl.f1:.3f}"
    print(line)
