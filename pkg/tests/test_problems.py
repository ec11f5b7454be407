import json
import math

import numpy as np
import pytest

from polystab.problems import (
    DEFAULT_INITIAL_VALUES,
    SdeProblem,
    audit_conditions,
    bem_example,
    cubic_counterexample,
    default_state_grid,
    exact_linear_mean_square,
    linear_example,
    load_problem_config,
    one_sided_decay_max_k1,
    problem_from_config,
    problem_from_label,
)


def test_linear_example_values():
    p = linear_example()
    assert p.drift(np.array([2.0]), 0.0).item() == -2.0
    assert p.drift(np.array([3.0]), 2.0).item() == -1.0
    assert p.diffusion(np.array([5.0]), 9.0).item() == pytest.approx(0.1)
    assert p.k1 == 1.0 and p.c == 1.0 and p.kbar == -1.0
    assert p.satisfies_linear_growth


def test_cubic_counterexample_values():
    p = cubic_counterexample()
    assert p.drift(np.array([1.0]), 0.0).item() == -4.0
    assert p.drift(np.array([2.0]), 1.0).item() == -7.0
    assert p.diffusion(np.array([0.0]), 0.0).item() == 1.0
    assert not p.satisfies_linear_growth
    assert p.k1 == 3.0 and p.c == 1.0


def test_bem_example_values():
    p = bem_example()
    assert p.drift(np.array([1.0]), 0.0).item() == -4.0
    for t in (0.0, 1.0, 7.0):
        assert p.diffusion(np.array([0.0]), t).item() == 0.0
    assert p.diffusion(np.array([math.pi / 2]), 0.0).item() == pytest.approx(5.0)


def test_drift_broadcasts_over_batches():
    p = cubic_counterexample()
    batch = np.array([[1.0], [2.0], [-1.0]])
    out = p.drift(batch, 1.0)
    assert out.shape == batch.shape
    assert out[1, 0] == -7.0


def test_exact_linear_mean_square():
    assert exact_linear_mean_square(1.0, 0.0) == 1.0
    assert exact_linear_mean_square(0.0, 3.0) == pytest.approx(3.0 / 16.0, rel=1e-15)
    assert exact_linear_mean_square(2.0, 99.0) == pytest.approx(0.0103, rel=1e-12)
    with pytest.raises(ValueError):
        exact_linear_mean_square(1.0, -1.0)


def test_exact_linear_mean_square_asymptotic_slope():
    # log-log slope tends to -1 = -(2 K1 - 1) with K1 = 1
    t1, t2 = 1e6, 1e8
    slope = (math.log(exact_linear_mean_square(1.0, t2)) - math.log(exact_linear_mean_square(1.0, t1))) / (
        math.log(1 + t2) - math.log(1 + t1)
    )
    assert slope == pytest.approx(-1.0, abs=1e-5)


def test_problem_validation():
    with pytest.raises(ValueError):
        SdeProblem(
            dimension=0, drift=lambda x, t: x, diffusion=lambda x, t: x,
            k1=1.0, c=1.0, kbar=0.0, satisfies_linear_growth=True, label="bad",
        )
    with pytest.raises(ValueError):
        SdeProblem(
            dimension=1, drift=lambda x, t: x, diffusion=lambda x, t: x,
            k1=-1.0, c=1.0, kbar=0.0, satisfies_linear_growth=True, label="bad",
        )


class TestAudit:
    def test_linear_passes_default_grid(self):
        report = audit_conditions(linear_example())
        assert report.all_passed, report.summary()

    def test_linear_passes_spec_grid(self):
        states = np.linspace(-10, 10, 41).reshape(-1, 1)
        report = audit_conditions(linear_example(), states=states, times=(0.0, 1.0, 10.0, 100.0))
        assert report.all_passed

    def test_linear_passes_huge_grid(self):
        states = np.linspace(-1e6, 1e6, 33).reshape(-1, 1)
        report = audit_conditions(linear_example(), states=states, times=(0.0, 1.0, 1e6))
        assert report.all_passed, report.summary()

    def test_cubic_fails_only_linear_growth(self):
        report = audit_conditions(cubic_counterexample())
        assert not report.linear_growth_f.passed
        assert report.one_sided_f.passed
        assert report.linear_growth_g.passed
        assert report.one_sided_lipschitz.passed

    def test_cubic_one_sided_margin_identically_nonpositive(self):
        # <x,f> + 3 x^2/(1+t) = -x^4/(1+t)
        report = audit_conditions(cubic_counterexample())
        assert report.one_sided_f.worst_margin <= 0.0

    def test_zero_drift_fails_one_sided(self):
        p = SdeProblem(
            dimension=1,
            drift=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
            diffusion=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
            k1=1.0, c=1.0, kbar=0.0, satisfies_linear_growth=True, label="zero",
        )
        report = audit_conditions(p)
        assert not report.one_sided_f.passed
        assert report.one_sided_f.worst_margin > 0

    def test_bem_example_one_sided_fails_at_claimed_k1(self):
        report = audit_conditions(bem_example())
        assert not report.one_sided_f.passed
        assert report.linear_growth_g.passed
        assert not report.linear_growth_f.passed
        # with the honest Kbar = 0 the pairwise condition does hold
        assert report.one_sided_lipschitz.passed

    def test_bem_example_audited_k1(self):
        # min over the default grid of (3 + x^2)(1+t)/(1+t)^2, attained at the
        # smallest nonzero |x| = 6.25 and t = 1e4
        k1 = one_sided_decay_max_k1(bem_example())
        assert k1 == pytest.approx((3.0 + 6.25**2) / (1.0 + 1e4), rel=1e-12)
        assert k1 < 0.5  # far from the claimed 3

    def test_linear_audited_k1_is_one(self):
        assert one_sided_decay_max_k1(linear_example()) == pytest.approx(1.0, rel=1e-12)

    def test_nonfinite_drift_reported(self):
        p = SdeProblem(
            dimension=1,
            drift=lambda x, t: np.where(np.abs(x) > 50, np.inf, -x),
            diffusion=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
            k1=1.0, c=1.0, kbar=0.0, satisfies_linear_growth=True, label="broken",
        )
        with pytest.raises(ValueError, match="non-finite"):
            audit_conditions(p)

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            audit_conditions(linear_example(), times=())
        with pytest.raises(ValueError):
            audit_conditions(linear_example(), times=(-1.0,))

    def test_report_mentions_evidence(self):
        report = audit_conditions(linear_example())
        assert "not a proof" in report.note
        assert "not a proof" in report.summary()


def test_default_state_grid_shapes():
    g1 = default_state_grid(1)
    assert g1.shape == (33, 1)
    assert 0.0 in g1[:, 0]
    g2 = default_state_grid(2)
    assert g2.shape == (33 * 33, 2)
    g5 = default_state_grid(5)
    assert g5.shape == (33**3, 5)
    assert np.all(g5[:, 3:] == 0.0)


class TestRegistry:
    def test_labels_and_defaults(self):
        assert set(DEFAULT_INITIAL_VALUES) == {"linear", "counterexample", "bem-example"}
        for label in DEFAULT_INITIAL_VALUES:
            assert problem_from_label(label).label == label

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown problem"):
            problem_from_label("nope")

    def test_overrides(self):
        p = problem_from_label("linear", k1=2.5, c=0.7)
        assert p.k1 == 2.5 and p.c == 0.7
        # dynamics untouched
        assert p.drift(np.array([2.0]), 0.0).item() == -2.0

    def test_problem_from_config(self):
        problem, x0 = problem_from_config(
            {"problem": "counterexample", "initial_value": 4.0, "k1": 2.0}
        )
        assert problem.k1 == 2.0
        assert x0.tolist() == [4.0]

    def test_problem_from_config_defaults(self):
        problem, x0 = problem_from_config({"problem": "counterexample"})
        assert x0.tolist() == [5.0]

    def test_problem_from_config_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown problem config keys"):
            problem_from_config({"problem": "linear", "sigma": 2.0})
        with pytest.raises(ValueError, match="'problem'"):
            problem_from_config({"k1": 1.0})

    def test_load_problem_config(self, tmp_path):
        path = tmp_path / "problem.json"
        path.write_text(json.dumps({"problem": "linear", "c": 2.0, "initial_value": [3.0]}))
        problem, x0 = load_problem_config(path)
        assert problem.c == 2.0
        assert x0.tolist() == [3.0]

    def test_load_problem_config_rejects_non_object(self, tmp_path):
        path = tmp_path / "problem.json"
        path.write_text("[1, 2]")
        with pytest.raises(ValueError, match="JSON object"):
            load_problem_config(path)
