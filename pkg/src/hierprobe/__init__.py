"""Coarse/fine hierarchical supervision probes for ordinal severity grading.

Modules:

- ``hierarchy``: KL grades, the derived binary OA label, cohort summaries.
- ``metrics``: AUC, accuracy, F1, macro one-vs-rest AUC, confusion matrices.
- ``stats``: exact McNemar test and a seeded paired bootstrap.
- ``geometry``: PCA severity axis, Spearman alignment, OA probe, centroids.
- ``saliency``: saliency/ROI overlap (mass, top-1%, Dice at q%).
- ``microtrain``: a tiny shared-encoder model with OA and KL heads.
- ``synth``: synthetic cohorts with a known severity ROI.
- ``formats`` and ``cli``: files on disk and the command line.
"""

__version__ = "0.1.0"
