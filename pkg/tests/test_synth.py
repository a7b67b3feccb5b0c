import numpy as np
import pytest

from hierprobe.exceptions import ValidationError
from hierprobe.metrics import evaluate_oa
from hierprobe.microtrain import TrainConfig, predict, train
from hierprobe.synth import (
    DEFAULT_GRADE_PROBS,
    SynthConfig,
    box_mask,
    generate_cohort,
    perturb_labels,
)

SMALL = dict(n_subjects=30, n_test=10, dims=(6, 6, 6), roi_box=((1, 3), (1, 3), (1, 3)),
             distractor_box=((3, 6), (3, 6), (3, 6)))


def test_zero_flip_rate_is_identity():
    g = np.arange(5).repeat(20)
    np.testing.assert_array_equal(perturb_labels(g, 0.0, 1), g)
    c = generate_cohort(SynthConfig(label_flip_rate=0.0, **SMALL))
    np.testing.assert_array_equal(c.kl_observed, c.kl_true)


def test_full_flip_at_boundaries():
    np.testing.assert_array_equal(perturb_labels([0] * 50, 1.0, 2), [1] * 50)
    np.testing.assert_array_equal(perturb_labels([4] * 50, 1.0, 2), [3] * 50)


def test_flip_frequency_and_adjacency():
    rng = np.random.default_rng(0)
    g = rng.integers(0, 5, 10000)
    out = perturb_labels(g, 0.5, 3)
    assert abs(np.mean(out != g) - 0.5) < 0.02
    assert np.abs(out - g).max() == 1
    inner = (g > 0) & (g < 4) & (out != g)
    assert abs(np.mean(out[inner] > g[inner]) - 0.5) < 0.03


def test_grade_frequencies():
    c = generate_cohort(SynthConfig(n_subjects=5000, n_test=0, dims=(2, 2, 2),
                                    roi_box=((0, 1), (0, 1), (0, 1)), distractor_box=((1, 2), (1, 2), (1, 2))))
    freq = np.bincount(c.kl_true, minlength=5) / 5000
    np.testing.assert_allclose(freq, DEFAULT_GRADE_PROBS, atol=0.03)


def test_roi_slope_tracks_severity_gain():
    cfg = SynthConfig(n_subjects=1000, n_test=0, distractor_gain=0.0, **{k: v for k, v in SMALL.items() if k not in ("n_subjects", "n_test")})
    c = generate_cohort(cfg)
    roi_mean = c.volumes[:, c.roi_mask].mean(axis=1)
    slope = np.polyfit(c.kl_true, roi_mean, 1)[0]
    assert abs(slope + cfg.severity_gain) <= 0.1 * cfg.severity_gain


def test_distractor_carries_oa_only():
    cfg = SynthConfig(n_subjects=2000, n_test=0, severity_gain=0.0, **{k: v for k, v in SMALL.items() if k not in ("n_subjects", "n_test")})
    c = generate_cohort(cfg)
    dist = box_mask(cfg.dims, cfg.distractor_box)
    means = [c.volumes[c.kl_true == k][:, dist].mean() for k in range(5)]
    assert abs(means[0] - means[1]) < 0.05 and abs(means[2] - means[4]) < 0.05
    assert means[1] - means[2] == pytest.approx(cfg.distractor_gain, abs=0.05)


def test_deterministic_and_seed_sensitive():
    a = generate_cohort(SynthConfig(seed=4, **SMALL))
    b = generate_cohort(SynthConfig(seed=4, **SMALL))
    np.testing.assert_array_equal(a.volumes, b.volumes)
    np.testing.assert_array_equal(a.kl_observed, b.kl_observed)
    c = generate_cohort(SynthConfig(seed=5, **SMALL))
    assert not np.array_equal(a.volumes, c.volumes)


def test_subjects_independent_of_cohort_size():
    # per-subject generators: growing the cohort leaves earlier subjects alone
    small = generate_cohort(SynthConfig(seed=1, **SMALL))
    big = generate_cohort(SynthConfig(seed=1, **{**SMALL, "n_subjects": 60}))
    np.testing.assert_array_equal(small.volumes[:30], big.volumes[:30])
    np.testing.assert_array_equal(small.kl_true[:30], big.kl_true[:30])


def test_test_labels_clean_by_default():
    c = generate_cohort(SynthConfig(label_flip_rate=1.0, **SMALL))
    test = c.indices("test")
    np.testing.assert_array_equal(c.kl_observed[test], c.kl_true[test])
    assert np.all(c.kl_observed[c.indices("train")] != c.kl_true[c.indices("train")])
    noisy = generate_cohort(SynthConfig(label_flip_rate=1.0, noisy_test=True, **SMALL))
    assert np.all(noisy.kl_observed != noisy.kl_true)


def test_cohort_accessors():
    c = generate_cohort(SynthConfig(**SMALL))
    assert c.inputs("train").shape == (30, 216)
    assert len(c.records("test")) == 10
    assert c.ids("test")[0] == "sub00030"
    np.testing.assert_array_equal(c.oa_true, (c.kl_true >= 2).astype(int))


@pytest.mark.parametrize(
    "bad",
    [
        {"roi_box": ((0, 7), (0, 1), (0, 1))},
        {"roi_box": ((2, 2), (0, 1), (0, 1))},
        {"distractor_box": ((1, 3), (1, 3), (1, 3))},
        {"grade_probs": (0.5, 0.5, 0.5, 0, 0)},
        {"label_flip_rate": 1.5},
        {"n_subjects": 0, "n_test": 0},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        SynthConfig(**{**SMALL, **bad})


def test_config_round_trip():
    cfg = SynthConfig(seed=9, **SMALL)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        SynthConfig.from_dict({"bogus": 1})


def test_no_signal_means_chance_auc():
    cfg = SynthConfig(n_subjects=200, n_test=200, severity_gain=0.0, distractor_gain=0.0, seed=2,
                      **{k: v for k, v in SMALL.items() if k not in ("n_subjects", "n_test")})
    c = generate_cohort(cfg)
    model = train(c.inputs("train"), c.records("train"), TrainConfig(epochs=5, batch_size=8, lr=1e-3, hidden=8), "dual").model
    rep = evaluate_oa(predict(model, c.inputs("test"), c.ids("test")), c.records("test"))
    assert abs(rep.auc - 0.5) < 0.15
