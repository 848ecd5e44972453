//! End-to-end runs of simulator, estimator and report files.

use gravcal::estimator::{self, Estimator, EstimatorConfig};
use gravcal::evaluate;
use gravcal::io::{self, RunReport};
use gravcal::synth::{scenario, simulate, ScenarioParams};

fn short(preset: &str, seed: u64, duration: f64) -> ScenarioParams {
    let mut p = ScenarioParams::preset(preset, seed);
    p.duration = Some(duration);
    p
}

#[test]
fn thirty_seconds_produce_one_factor_per_pose_triple() {
    let config = scenario(&short("excited", 1, 30.0)).unwrap();
    let data = simulate(&config).unwrap();
    let mut est = Estimator::new(EstimatorConfig::default(), None).unwrap();
    for m in estimator::interleave(&data.imu, &data.poses) {
        est.add(m).unwrap();
    }
    est.finish().unwrap();
    let triples = data.poses.len() - 2;
    assert_eq!(est.total_odometry_factors() + est.skipped_factors(), triples);
    assert!(est.skipped_factors() <= 2, "skipped {}", est.skipped_factors());
    // 30 s at 3 s per interval, plus the interval opened by the pose at t = 30.
    assert_eq!(est.interval_ids().len(), 11);
    assert_eq!(est.live_odometry_factors(), est.total_odometry_factors());
}

#[test]
fn window_never_exceeds_the_lag() {
    let data = simulate(&scenario(&short("excited", 2, 120.0)).unwrap()).unwrap();
    let config = EstimatorConfig::default();
    let bound = (config.lag / config.interval).ceil() as usize + 1;
    let estimates = estimator::run(config, None, &data.imu, &data.poses).unwrap();
    assert!(estimates.iter().all(|e| e.live_intervals <= bound));
    assert_eq!(estimates.last().unwrap().live_intervals, bound);
    assert!(estimates.windows(2).all(|w| w[0].t <= w[1].t));
}

fn strip_wall_time(mut r: RunReport) -> RunReport {
    for rec in &mut r.records {
        rec.wall_time = 0.0;
    }
    r
}

#[test]
fn file_round_trip_is_deterministic() {
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let data = simulate(&scenario(&short("slow_yaw", 7, 20.0)).unwrap()).unwrap();
        io::write_dataset(dir.path(), &data).unwrap();
        let back = io::read_dataset(dir.path()).unwrap();
        let config = EstimatorConfig::default();
        let estimates = estimator::run(config.clone(), None, &back.imu, &back.poses).unwrap();
        let report = RunReport::new(&estimates, config.gravity_magnitude, back.meta.as_ref().map(|m| &m.scenario));
        let path = dir.path().join("report.json");
        report.write_json(&path).unwrap();
        let report = strip_wall_time(RunReport::read_json(&path).unwrap());
        let metrics = evaluate::evaluate(&report, &back, evaluate::DEFAULT_HORIZON).unwrap();
        reports.push((serde_json::to_string(&report).unwrap(), serde_json::to_string(&metrics).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn files_and_memory_give_the_same_estimates() {
    let data = simulate(&scenario(&short("excited", 3, 15.0)).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &data).unwrap();
    let back = io::read_dataset(dir.path()).unwrap();
    let a = estimator::run(EstimatorConfig::default(), None, &data.imu, &data.poses).unwrap();
    let b = estimator::run(EstimatorConfig::default(), None, &back.imu, &back.poses).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.t, y.t);
        assert!((x.bias - y.bias).amax() < 1e-9);
        assert!(x.gravity.angle_to(&y.gravity) < 1e-9);
    }
}
