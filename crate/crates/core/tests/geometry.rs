use std::f64::consts::PI;

use ngo_core::geometry::{
    between, compose, g2r, r2g, r2g_tensor, trajectory_metrics, wrap_angle, DriftMode, Pose2, RelPose2,
};
use ngo_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat3 = [[f64; 3]; 3];

fn hmat(x: f64, y: f64, th: f64) -> Mat3 {
    let (s, c) = th.sin_cos();
    [[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]]
}

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn pose_of(m: &Mat3) -> (f64, f64, f64) {
    (m[0][2], m[1][2], m[1][0].atan2(m[0][0]))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn random_deltas(rng: &mut ChaCha8Rng, n: usize) -> Vec<RelPose2> {
    (0..n).map(|_| RelPose2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-PI..PI))).collect()
}

#[test]
fn compose_matches_homogeneous_product() {
    let p = compose(&Pose2::new(1.0, 0.0, PI / 2.0), &RelPose2::new(1.0, 0.0, 0.0));
    assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12 && (p.theta - PI / 2.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let p = Pose2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-PI..PI));
        let d = random_deltas(&mut rng, 1)[0];
        let q = compose(&p, &d);
        let (x, y, th) = pose_of(&matmul(&hmat(p.x, p.y, p.theta), &hmat(d.dx, d.dy, d.dtheta)));
        assert!((q.x - x).abs() < 1e-9 && (q.y - y).abs() < 1e-9 && angle_diff(q.theta, th) < 1e-9);
    }
}

#[test]
fn r2g_matches_matrix_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let deltas = random_deltas(&mut rng, 300);
    let poses = r2g(&deltas).unwrap();
    let mut m = hmat(0.0, 0.0, 0.0);
    for (d, p) in deltas.iter().zip(&poses) {
        m = matmul(&m, &hmat(d.dx, d.dy, d.dtheta));
        let (x, y, th) = pose_of(&m);
        assert!((p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9 && angle_diff(p.theta, th) < 1e-9);
    }
}

#[test]
fn closed_square_returns_to_origin() {
    let poses = r2g(&[RelPose2::new(1.0, 0.0, PI / 2.0); 4]).unwrap();
    let last = poses[3];
    assert!(last.x.abs() < 1e-9 && last.y.abs() < 1e-9 && angle_diff(last.theta, 0.0) < 1e-9);
}

#[test]
fn round_trips_on_a_thousand_random_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=2000);
        let deltas = random_deltas(&mut rng, n);
        let poses = r2g(&deltas).unwrap();
        let back = g2r(&poses).unwrap();
        for (a, b) in deltas.iter().zip(&back) {
            assert!((a.dx - b.dx).abs() < 1e-9 && (a.dy - b.dy).abs() < 1e-9);
            assert!(angle_diff(a.dtheta, b.dtheta) < 1e-9);
        }
        let again = r2g(&back).unwrap();
        for (a, b) in poses.iter().zip(&again) {
            assert!(a.distance(b) < 1e-9 && angle_diff(a.theta, b.theta) < 1e-9);
        }
    }
}

#[test]
fn tensor_r2g_agrees_with_scalar_chain_in_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let deltas: Vec<RelPose2> = (0..2000)
        .map(|_| RelPose2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.05..0.05), rng.gen_range(-0.1..0.1)))
        .collect();
    let rows: Vec<f32> = deltas.iter().flat_map(|d| d.to_array()).map(|v| v as f32).collect();
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[2000, 3], rows).unwrap());
    let p = r2g_tensor(&mut g, x).unwrap();
    let expect = r2g(&deltas).unwrap();
    let got = g.value(p);
    for (t, e) in expect.iter().enumerate() {
        let r = &got[3 * t..3 * t + 3];
        assert!((r[0] as f64 - e.x).abs() < 1e-3, "step {t}");
        assert!((r[1] as f64 - e.y).abs() < 1e-3, "step {t}");
        assert!(angle_diff(r[2] as f64, e.theta) < 1e-3, "step {t}");
    }
}

#[test]
fn empty_sequences_are_errors() {
    assert!(r2g(&[]).is_err());
    assert!(g2r(&[]).is_err());
}

fn recompute_rmse(pred: &[Pose2], gt: &[Pose2]) -> (f64, f64) {
    let mut sp = 0.0;
    let mut sr = 0.0;
    for i in 0..gt.len() {
        sp += (pred[i].x - gt[i].x).powi(2) + (pred[i].y - gt[i].y).powi(2);
        sr += angle_diff(pred[i].theta, gt[i].theta).powi(2);
    }
    ((sp / gt.len() as f64).sqrt(), (sr / gt.len() as f64).sqrt())
}

#[test]
fn metrics_match_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.gen_range(2..200);
        let gt = r2g(&random_deltas(&mut rng, n)).unwrap();
        let pred = r2g(&random_deltas(&mut rng, n)).unwrap();
        let m = trajectory_metrics(&pred, &gt, DriftMode::FinalPose).unwrap();
        let (rp, rr) = recompute_rmse(&pred, &gt);
        assert!((m.rmse_pos - rp).abs() < 1e-9 && (m.rmse_rot - rr).abs() < 1e-9);
        let dist: f64 = gt.windows(2).map(|w| w[0].distance(&w[1])).sum();
        let fin = pred[n - 1].distance(&gt[n - 1]);
        assert!((m.pct_err_trans - 100.0 * fin / dist).abs() < 1e-9);
        assert_eq!(m.per_step_pos_err.len(), n);
    }
}

#[test]
fn metrics_offset_line_example() {
    let gt: Vec<Pose2> = (0..=10).map(|i| Pose2::new(i as f64, 0.0, 0.0)).collect();
    let pred: Vec<Pose2> = gt.iter().map(|p| Pose2::new(p.x + 1.0, p.y, p.theta)).collect();
    let m = trajectory_metrics(&pred, &gt, DriftMode::FinalPose).unwrap();
    assert!((m.rmse_pos - 1.0).abs() < 1e-12);
    assert!((m.pct_err_trans - 10.0).abs() < 1e-12);
    assert!(trajectory_metrics(&pred[..3], &gt, DriftMode::FinalPose).is_err());
    let still = vec![Pose2::ORIGIN; 3];
    assert!(trajectory_metrics(&still, &still, DriftMode::FinalPose).is_err());
}

fn pose_strategy() -> impl Strategy<Value = Pose2> {
    (-10.0..10.0f64, -10.0..10.0f64, -PI..PI).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

proptest! {
    #[test]
    fn wrap_is_idempotent_and_in_range(a in -1e4..1e4f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert_eq!(wrap_angle(w), w);
        prop_assert!(angle_diff(w, a) < 1e-9);
    }

    #[test]
    fn between_inverts_compose(a in pose_strategy(), b in pose_strategy()) {
        let back = compose(&a, &between(&a, &b));
        prop_assert!(back.distance(&b) < 1e-9 && angle_diff(back.theta, b.theta) < 1e-9);
    }

    #[test]
    fn metrics_are_rigid_motion_invariant(
        seed in any::<u64>(),
        world in pose_strategy(),
        n in 2usize..60,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = r2g(&random_deltas(&mut rng, n)).unwrap();
        let pred = r2g(&random_deltas(&mut rng, n)).unwrap();
        let move_all = |ps: &[Pose2]| -> Vec<Pose2> { ps.iter().map(|p| compose(&world, &p.as_rel())).collect() };
        for mode in [DriftMode::FinalPose, DriftMode::Accumulated] {
            let a = trajectory_metrics(&pred, &gt, mode).unwrap();
            let b = trajectory_metrics(&move_all(&pred), &move_all(&gt), mode).unwrap();
            prop_assert!((a.rmse_pos - b.rmse_pos).abs() < 1e-9);
            prop_assert!((a.rmse_rot - b.rmse_rot).abs() < 1e-9);
            prop_assert!((a.pct_err_trans - b.pct_err_trans).abs() < 1e-9);
            prop_assert!((a.pct_err_rot - b.pct_err_rot).abs() < 1e-9);
        }
    }
}
