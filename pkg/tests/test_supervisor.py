import numpy as np
import pytest

from conftest import mini_ring, random_transform
from resilient_fusion.degeneracy import DetectorConfig, HealthSample
from resilient_fusion.errors import StreamOrderError
from resilient_fusion.se3 import Transform, compose, exp_so3, inverse, se3_distance
from resilient_fusion.simulator import (
    DegradationWindow,
    Scenario,
    gen_trajectory,
    world_frame_offset,
    write_scenario,
)
from resilient_fusion.supervisor import (
    FusionSupervisor,
    Health,
    LioPose,
    RunConfig,
    SmootherConfig,
    SupervisorConfig,
    VioInit,
    VioPose,
    apply_smoothing,
    merge_events,
    run_config_from_dict,
    run_config_to_dict,
    run_offline,
    run_supervisor,
)


def health_event(t, flag):
    return Health(t, HealthSample(t, 0 if flag else 10**6, 0.0, flag, flag))


def consistent_streams(duration=30.0, rate=10.0, offset=None):
    """lio == gt, vio == offset^-1 * gt on a shared grid."""
    sc = Scenario(name="mini", duration=duration, pose_rate=rate, odom_sigma=0.0, odom_sigma_rot=0.0)
    gt = gen_trajectory(sc)
    offset = offset if offset is not None else world_frame_offset(sc)
    lio = [LioPose(t, p) for t, p in gt]
    vio = [VioPose(t, compose(inverse(offset), p)) for t, p in gt]
    return gt, lio, vio, offset


class TestApplySmoothing:
    def test_beta_zero_returns_active_bit_exact(self, rng):
        a, b, m = (random_transform(rng) for _ in range(3))
        for convention in ("interpolating", "paper_literal"):
            assert apply_smoothing(a, b, m, 0.0, convention) is a

    def test_consistent_streams_any_beta(self, rng):
        for _ in range(20):
            m, b = random_transform(rng), random_transform(rng)
            a = compose(m, b)  # aligned backup equals active
            for convention in ("interpolating", "paper_literal"):
                for beta in (0.1, 0.5, 0.9, 1.0):
                    out = apply_smoothing(a, b, m, beta, convention)
                    np.testing.assert_allclose(out.matrix(), a.matrix(), atol=1e-12)

    def test_beta_one_interpolating_hits_backup(self, rng):
        a, b, m = (random_transform(rng) for _ in range(3))
        out = apply_smoothing(a, b, m, 1.0, "interpolating")
        np.testing.assert_allclose(out.matrix(), compose(m, b).matrix(), atol=1e-9)

    def test_paper_literal_beta_one_is_mirror_point(self, rng):
        a, b, m = (random_transform(rng) for _ in range(3))
        out = apply_smoothing(a, b, m, 1.0, "paper_literal")
        target = compose(m, b)
        mirror = compose(a, inverse(compose(inverse(a), target)))
        np.testing.assert_allclose(out.matrix(), mirror.matrix(), atol=1e-9)

    def test_midpoint_interpolating(self, rng):
        a = Transform.identity()
        b = Transform(exp_so3([0, 0, np.pi / 2]), np.zeros(3))
        out = apply_smoothing(a, b, Transform.identity(), 0.5, "interpolating")
        np.testing.assert_allclose(out.rotation, exp_so3([0, 0, np.pi / 4]), atol=1e-12)

    def test_bad_beta(self, rng):
        a, b, m = (random_transform(rng) for _ in range(3))
        with pytest.raises(ValueError):
            apply_smoothing(a, b, m, 1.5)


class TestSmootherConfig:
    def test_schedules_monotone_with_fixed_endpoints(self):
        for name in ("linear", "smoothstep"):
            cfg = SmootherConfig(schedule=name)
            assert cfg.beta(0.0) == 0.0
            assert cfg.beta(1.0) == 1.0
            vals = [cfg.beta(u) for u in np.linspace(0, 1, 50)]
            assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            SmootherConfig(duration=0.0)
        with pytest.raises(ValueError):
            SmootherConfig(schedule="cubic")
        with pytest.raises(ValueError):
            SmootherConfig(sign_convention="upside_down")


class TestSupervisor:
    def test_no_degradation_passthrough(self, rng):
        _, lio, vio, _ = consistent_streams()
        health = [health_event(t, 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, sup = run_supervisor(events)
        assert len(outputs) == len(lio)
        for out, src in zip(outputs, lio):
            assert out.t == src.t
            assert out.pose is src.pose  # the very same object: no recomputation
            assert out.source == "lio"
            assert not out.degraded
        assert sum(1 for ep in sup.episodes if ep.source == "vio") == 0

    def test_permanent_degradation_tracks_ground_truth(self, rng):
        gt, lio, vio, offset = consistent_streams()
        health = [health_event(t, 1 if t >= 10.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, sup = run_supervisor(events)
        gt_by_t = {t: p for t, p in gt}
        post = [o for o in outputs if o.t >= 12.5]
        assert post and all(o.source == "vio" for o in post)
        for o in post:
            np.testing.assert_allclose(o.pose.matrix(), gt_by_t[round(o.t, 6)].matrix(), atol=1e-9)

    def test_consistent_streams_equal_gt_everywhere(self, rng):
        # oracle-style zero-latency flags, switching back and forth
        gt, lio, vio, offset = consistent_streams()
        flags = lambda t: 1 if (8.0 <= t < 14.0 or 20.0 <= t < 25.0) else 0
        health = [health_event(t, flags(t)) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, sup = run_supervisor(events)
        gt_by_t = {round(t, 6): p for t, p in gt}
        assert len(outputs) >= len(lio) - 1
        for o in outputs:
            np.testing.assert_allclose(o.pose.matrix(), gt_by_t[round(o.t, 6)].matrix(), atol=1e-9)
        assert sum(1 for ep in sup.episodes if ep.source == "vio") == 2

    def test_degraded_without_vio_init_stays_lio_flagged(self, rng):
        _, lio, vio, _ = consistent_streams(duration=10.0)
        health = [health_event(t, 1 if t >= 3.0 else 0) for t in np.arange(0.2, 10.0, 0.2)]
        events = merge_events(lio, vio, health)  # no VioInit at all
        outputs, sup = run_supervisor(events)
        assert all(o.source == "lio" for o in outputs)
        assert any(o.degraded for o in outputs if o.t >= 3.2)
        assert not any(o.degraded for o in outputs if o.t < 3.0)
        assert sum(1 for ep in sup.episodes if ep.source == "vio") == 0

    def test_stale_vio_blocks_switch(self, rng):
        _, lio, vio, _ = consistent_streams(duration=10.0)
        vio = [v for v in vio if v.t <= 2.0]  # vio dies at t=2
        health = [health_event(t, 1 if t >= 5.0 else 0) for t in np.arange(0.2, 10.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, sup = run_supervisor(events)
        assert all(o.source == "lio" for o in outputs)

    def test_out_of_order_event_rejected(self, rng):
        sup = FusionSupervisor()
        sup.step(LioPose(1.0, Transform.identity()))
        with pytest.raises(StreamOrderError):
            sup.step(LioPose(0.5, Transform.identity()))

    def test_deterministic(self, rng):
        gt, lio, vio, _ = consistent_streams()
        health = [health_event(t, 1 if 8.0 <= t < 14.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        out_a, _ = run_supervisor(events)
        out_b, _ = run_supervisor(events)
        assert len(out_a) == len(out_b)
        for a, b in zip(out_a, out_b):
            assert a.t == b.t and a.source == b.source
            np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())

    def test_transition_episodes_recorded_with_bounds(self, rng):
        gt, lio, vio, _ = consistent_streams()
        health = [health_event(t, 1 if 8.0 <= t < 20.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        _, sup = run_supervisor(events)
        names = [ep.source for ep in sup.episodes]
        assert names == ["lio", "to_vio", "vio", "to_lio", "lio"]
        for ep in sup.episodes:
            assert ep.t_end is not None and ep.t_end >= ep.t_start
        to_vio = sup.episodes[1]
        assert to_vio.alignment is not None and to_vio.alignment.converged


class TestDriftRecoveryScenario:
    def test_switchback_absorbs_accumulated_drift(self, rng):
        # lio drifts 1.5 m along x during [8, 14] and keeps the offset after;
        # the supervisor must hand off to vio and hand back without
        # inheriting the offset
        gt, lio_clean, vio, offset = consistent_streams()
        drift_rate = 0.25

        def drifted(pose, t):
            d = drift_rate * min(max(t - 8.0, 0.0), 6.0)
            return Transform(pose.rotation, pose.translation + np.array([d, 0.0, 0.0]))

        lio = [LioPose(e.t, drifted(e.pose, e.t), e.cov, None) for e in lio_clean]
        health = [health_event(t, 1 if 8.0 <= t < 14.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, sup = run_supervisor(events)
        gt_by_t = {round(t, 6): p for t, p in gt}
        tail = [o for o in outputs if o.t >= 20.0]
        assert tail and all(o.source == "lio" for o in tail)
        errs = [se3_distance(o.pose, gt_by_t[round(o.t, 6)])[0] for o in tail]
        # raw lio is 1.5 m off; the re-aligned output must stay centimeter-level
        assert max(errs) < 0.05

    def test_output_continuity_no_teleportation(self, rng):
        gt, lio_clean, vio, offset = consistent_streams()
        drift_rate = 0.25

        def drifted(pose, t):
            d = drift_rate * min(max(t - 8.0, 0.0), 6.0)
            return Transform(pose.rotation, pose.translation + np.array([d, 0.0, 0.0]))

        lio = [LioPose(e.t, drifted(e.pose, e.t), e.cov, None) for e in lio_clean]
        health = [health_event(t, 1 if 8.0 <= t < 14.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        outputs, _ = run_supervisor(events)
        gt_steps = [
            np.linalg.norm(b[1].translation - a[1].translation) for a, b in zip(gt, gt[1:])
        ]
        bound = 2.0 * np.quantile(gt_steps, 0.99)
        jumps = [
            np.linalg.norm(b.pose.translation - a.pose.translation)
            for a, b in zip(outputs, outputs[1:])
        ]
        assert max(jumps) <= bound + drift_rate * 0.2  # drifting source adds its own motion


class TestContinuousRefinement:
    def test_realign_period_refreshes_alignment(self, rng):
        from resilient_fusion.frame_align import RobustKernel

        gt, lio, vio, offset = consistent_streams()
        health = [health_event(t, 1 if t >= 8.0 else 0) for t in np.arange(0.2, 30.0, 0.2)]
        events = merge_events(lio, vio, health, [VioInit(0.5)])
        cfg = SupervisorConfig(realign_period=3.0)
        outputs, sup = run_supervisor(events, cfg)
        # consistent streams: refreshed alignment stays exact, output == gt
        gt_by_t = {round(t, 6): p for t, p in gt}
        for o in outputs:
            np.testing.assert_allclose(o.pose.matrix(), gt_by_t[round(o.t, 6)].matrix(), atol=1e-9)
        t_off, r_off = se3_distance(sup.m_vio, offset)
        assert t_off < 1e-9 and r_off < 1e-7


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig(kernel_c=2.0, health_source="schedule_oracle", realign_period=4.0)
        back = run_config_from_dict(run_config_to_dict(cfg))
        assert back == cfg

    def test_unknown_keys_rejected(self):
        from resilient_fusion.errors import DataError

        d = run_config_to_dict(RunConfig())
        d["zoom"] = 1
        with pytest.raises(DataError):
            run_config_from_dict(d)
        d = run_config_to_dict(RunConfig())
        d["detector"]["tau_q"] = 3
        with pytest.raises(DataError):
            run_config_from_dict(d)

    def test_bad_health_source(self):
        with pytest.raises(ValueError):
            RunConfig(health_source="crystal_ball")


@pytest.fixture(scope="module")
def mini_scenario_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenario") / "mini"
    windows = (
        DegradationWindow("lio", 8.0, 14.0, "axis_drift", 0.2),
        DegradationWindow("lio", 20.0, 26.0, "axis_drift", 0.2),
    )
    sc = mini_ring(duration=40.0, schedule=windows, seed=11)
    write_scenario(sc, out)
    return out


class TestRunOffline:
    def test_detector_driven_run(self, mini_scenario_dir, tmp_path):
        out = tmp_path / "run"
        cfg = RunConfig(vio_init_time=1.0)
        outputs, sup, health = run_offline(mini_scenario_dir, cfg, out_dir=out)
        assert (out / "fused.tum").exists()
        assert (out / "report.json").exists()
        assert (out / "health.csv").exists()
        from resilient_fusion.formats import read_json

        report = read_json(out / "report.json")
        assert report["vio_episode_count"] == 2
        assert report["config"] == run_config_to_dict(cfg)

    def test_oracle_vs_detector_episode_overlap(self, mini_scenario_dir, tmp_path):
        from resilient_fusion.degeneracy import interval_iou

        cfg_d = RunConfig(vio_init_time=1.0, health_source="detector")
        cfg_o = RunConfig(vio_init_time=1.0, health_source="schedule_oracle")
        _, sup_d, _ = run_offline(mini_scenario_dir, cfg_d, out_dir=tmp_path / "d")
        _, sup_o, _ = run_offline(mini_scenario_dir, cfg_o, out_dir=tmp_path / "o")

        def vio_intervals(sup):
            return [
                (ep.t_start, ep.t_end)
                for ep in sup.episodes
                if ep.source in ("vio", "to_vio") and ep.t_end is not None
            ]

        assert interval_iou(vio_intervals(sup_d), vio_intervals(sup_o)) >= 0.8

    def test_no_degradation_byte_identical_to_lio(self, tmp_path):
        sc = mini_ring(duration=30.0, seed=3)
        scn_dir = tmp_path / "calm"
        write_scenario(sc, scn_dir)
        out = tmp_path / "run"
        run_offline(scn_dir, RunConfig(vio_init_time=1.0), out_dir=out)
        lio_lines = (scn_dir / "lio.tum").read_text().splitlines()
        fused_lines = (out / "fused.tum").read_text().splitlines()
        strip = lambda lines: [ln for ln in lines if not ln.startswith("#")]
        assert strip(lio_lines) == strip(fused_lines)

    def test_missing_files_raise_data_error(self, tmp_path):
        from resilient_fusion.errors import DataError

        with pytest.raises(DataError):
            run_offline(tmp_path / "nothing", RunConfig())
