import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from conftest import random_transform
from resilient_fusion.errors import DataError
from resilient_fusion.evaluation import (
    MetricsReport,
    associate,
    ate_rmse,
    drift_rate,
    evaluate_trajectories,
    rpe,
    write_errors_csv,
)
from resilient_fusion.se3 import Transform, compose, exp_so3


def straight_line(n=30, dt=0.1, speed=0.5):
    return [
        (i * dt, Transform(np.eye(3), np.array([speed * i * dt, 0.0, 0.0]))) for i in range(n)
    ]


def shifted(traj, offset):
    return [(t, Transform(p.rotation, p.translation + offset)) for t, p in traj]


def transformed(traj, g):
    return [(t, compose(g, p)) for t, p in traj]


class TestAssociate:
    def test_identical_stamps_full_pairing(self, rng):
        traj = straight_line()
        pairs = associate(traj, traj)
        assert len(pairs) == len(traj)

    def test_disjoint_ranges_error(self):
        a = straight_line(10)
        b = [(t + 100.0, p) for t, p in straight_line(10)]
        with pytest.raises(DataError):
            associate(a, b)

    def test_jittered_grids_match_optimal_assignment(self, rng):
        # greedy nearest-first equals the min-total-cost assignment when
        # jitter is far smaller than the grid spacing
        tol = 0.04
        spacing = 0.2
        for _ in range(20):
            na, nb = int(rng.integers(5, 12)), int(rng.integers(5, 12))
            ta = np.arange(na) * spacing + rng.uniform(-0.01, 0.01, na)
            tb = np.arange(nb) * spacing + rng.uniform(-0.01, 0.01, nb)
            a = [(float(t), Transform.identity()) for t in np.sort(ta)]
            b = [(float(t), Transform.identity()) for t in np.sort(tb)]
            got = associate(a, b, tol)
            cost = np.full((na, na + nb), 1e6)
            for i in range(na):
                for j in range(nb):
                    if abs(a[i][0] - b[j][0]) <= tol:
                        cost[i, j] = abs(a[i][0] - b[j][0])
                cost[i, nb + i] = 1e3
            rows, cols = linear_sum_assignment(cost)
            oracle = {(i, j) for i, j in zip(rows, cols) if j < nb}
            assert len(got) == len(oracle)

    def test_monotone_and_unique(self, rng):
        a = straight_line(50)
        b = [(t + float(rng.uniform(-0.005, 0.005)), p) for t, p in straight_line(50)]
        pairs = associate(a, b)
        times = [t for t, _, _ in pairs]
        assert times == sorted(times)
        assert len(set(times)) == len(times)


class TestAteRmse:
    def test_zero_on_equal(self):
        traj = straight_line()
        rmse, used, errors = ate_rmse(traj, traj)
        assert rmse == 0.0
        assert used == "none"  # collinear straight line falls back
        curve = circle_traj()
        rmse, used, _ = ate_rmse(curve, curve)
        assert rmse == 0.0 and used == "rigid"

    def test_constant_offset_absorbed_by_rigid(self, rng):
        traj = circle_traj()
        est = shifted(traj, np.array([1.0, 0.0, 0.0]))
        rmse, used, _ = ate_rmse(est, traj, alignment="rigid")
        assert used == "rigid"
        assert rmse < 1e-9
        rmse_none, _, _ = ate_rmse(est, traj, alignment="none")
        assert rmse_none == pytest.approx(1.0)

    def test_three_pose_hand_case(self):
        ref = [
            (0.0, Transform(np.eye(3), np.array([0.0, 0.0, 0.0]))),
            (1.0, Transform(np.eye(3), np.array([1.0, 0.0, 0.0]))),
            (2.0, Transform(np.eye(3), np.array([2.0, 0.0, 0.0]))),
        ]
        est = [
            (0.0, Transform(np.eye(3), np.array([0.0, 0.0, 0.0]))),
            (1.0, Transform(np.eye(3), np.array([1.0, 0.0, 0.3]))),
            (2.0, Transform(np.eye(3), np.array([2.0, 0.0, 0.0]))),
        ]
        rmse, used, _ = ate_rmse(est, ref, alignment="none")
        assert rmse == pytest.approx(math.sqrt(0.09 / 3.0), abs=1e-4)

    def test_rigid_never_worse_than_none(self, rng):
        for _ in range(20):
            ref = circle_traj(n=40)
            noise = [
                (t, Transform(p.rotation, p.translation + 0.1 * rng.standard_normal(3)))
                for t, p in transformed(ref, random_transform(rng))
            ]
            r_rigid, used, _ = ate_rmse(noise, ref, "rigid")
            r_none, _, _ = ate_rmse(noise, ref, "none")
            assert used == "rigid"
            assert r_rigid <= r_none + 1e-9

    def test_invariant_under_common_transform(self, rng):
        ref = circle_traj(n=40)
        est = [
            (t, Transform(p.rotation, p.translation + 0.05 * rng.standard_normal(3)))
            for t, p in ref
        ]
        base, _, _ = ate_rmse(est, ref, "rigid")
        g = random_transform(rng)
        moved, _, _ = ate_rmse(transformed(est, g), transformed(ref, g), "rigid")
        assert abs(base - moved) < 1e-9

    def test_bad_mode(self):
        traj = straight_line()
        with pytest.raises(ValueError):
            ate_rmse(traj, traj, alignment="scaled")


def circle_traj(n=30, dt=0.1, radius=3.0):
    out = []
    for i in range(n):
        a = 2 * np.pi * i / n
        pos = np.array([radius * np.cos(a), radius * np.sin(a), 0.1 * np.sin(2 * a)])
        out.append((i * dt, Transform(exp_so3([0, 0, a]), pos)))
    return out


class TestRpe:
    def test_zero_on_equal(self):
        traj = circle_traj(n=50)
        t, r = rpe(traj, traj, delta=1.0)
        assert t == 0.0 and r < 1e-5  # arccos floor for exact matches

    def test_invariant_to_global_offset(self, rng):
        ref = circle_traj(n=50)
        g = random_transform(rng)
        t, r = rpe(transformed(ref, g), ref, delta=1.0)
        assert t < 1e-12 and r < 1e-5

    def test_constant_velocity_drift_oracle(self):
        # estimate drifts 0.02 m per 0.1 s step along x relative to ref:
        # over a 1 s delta the relative-motion error is exactly 0.2 m
        ref = circle_traj(n=80)
        est = []
        for i, (t, p) in enumerate(ref):
            drift = np.array([0.02 * i, 0.0, 0.0])
            est.append((t, Transform(p.rotation, p.translation + drift)))
        t_err, r_err = rpe(est, ref, delta=1.0)
        assert t_err == pytest.approx(0.2, rel=1e-9)
        assert r_err < 1e-5

    def test_no_pairs_error(self):
        traj = straight_line(5)
        with pytest.raises(DataError):
            rpe(traj, traj, delta=100.0)

    def test_bad_delta(self):
        traj = straight_line()
        with pytest.raises(ValueError):
            rpe(traj, traj, delta=0.0)


class TestDriftRate:
    def test_zero_on_equal(self):
        traj = circle_traj()
        assert drift_rate(traj, traj) == 0.0

    def test_known_final_offset(self):
        ref = straight_line(n=50)
        est = list(ref)
        last_t, last_p = est[-1]
        est[-1] = (last_t, Transform(last_p.rotation, last_p.translation + np.array([0, 2.04, 0])))
        assert drift_rate(est, ref) == pytest.approx(2.04, rel=1e-12)

    def test_injected_constant_velocity_drift(self):
        # drift m per second: final error = rate * duration (origin-aligned)
        ref = straight_line(n=101, dt=0.1)
        rate = 0.05
        est = [
            (t, Transform(p.rotation, p.translation + np.array([0.0, rate * t, 0.0])))
            for t, p in ref
        ]
        expected = rate * 10.0
        assert drift_rate(est, ref) == pytest.approx(expected, rel=0.01)

    def test_start_offset_removed(self, rng):
        ref = circle_traj()
        g = random_transform(rng)
        assert drift_rate(transformed(ref, g), ref) < 1e-9


class TestEvaluateTrajectories:
    def test_report_fields_and_errors_csv(self, rng, tmp_path):
        ref = circle_traj(n=50)
        est = [
            (t, Transform(p.rotation, p.translation + 0.02 * rng.standard_normal(3)))
            for t, p in ref
        ]
        report, errors = evaluate_trajectories(est, ref)
        assert isinstance(report, MetricsReport)
        assert report.matched_pose_count == 50
        assert report.alignment_used == "rigid"
        assert report.ate_rmse > 0.0
        assert set(report.to_dict()) == {
            "ate_rmse",
            "rpe_trans",
            "rpe_rot",
            "drift_rate",
            "matched_pose_count",
            "alignment_used",
        }
        path = tmp_path / "errors.csv"
        write_errors_csv(path, errors)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,err_m"
        assert len(lines) == 51
