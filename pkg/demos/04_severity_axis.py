"""
Does the latent space order subjects by severity?
=================================================

Train single-OA and dual models, take the hidden-layer embeddings of the test
subjects and look at their first principal component: how much variance it
explains, how it correlates with KL and OA, how well a 1-D OA probe does on
it, and whether adjacent KL centroids drift apart monotonically.
"""

from hierprobe.geometry import severity_axis_report
from hierprobe.microtrain import TrainConfig, embed, train
from hierprobe.synth import SynthConfig, generate_cohort

cohort = generate_cohort(SynthConfig(seed=1))
x_test, ids, y_test = cohort.inputs("test"), cohort.ids("test"), cohort.records("test")

for setting in ("single_oa", "dual"):
    model = train(cohort.inputs("train"), cohort.records("train"), TrainConfig(seed=1), setting).model
    rep = severity_axis_report(embed(model, x_test, ids), y_test)
    print(setting)
    print(f"  EVR_PC1 {rep.evr_pc1:.3f}  rho(PC1,KL) {rep.rho_pc1_kl:+.3f}  rho(PC1,OA) {rep.rho_pc1_oa:+.3f}")
    print(f"  OA probe AUROC {rep.auroc_oa_probe:.3f}")
    print(f"  adjacent centroid distances {[round(d, 3) for d in rep.adj_distances]}  rho {rep.rho_k_dadj:+.2f}")
