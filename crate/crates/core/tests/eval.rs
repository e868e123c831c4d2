use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use smallgs::eval::*;
use smallgs::{Se3Pose, Trajectory};

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    prop::array::uniform3(-3.0f64..3.0).prop_map(|w| UnitQuaternion::from_scaled_axis(Vector3::from(w)))
}

fn pose() -> impl Strategy<Value = Se3Pose> {
    (rotation(), prop::array::uniform3(-4.0f64..4.0)).prop_map(|(r, t)| Se3Pose::from_parts(r, Vector3::from(t)))
}

fn trajectory(n: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(pose(), n).prop_map(|p| Trajectory::new((0..p.len()).map(|i| i as f64 / 30.0).collect(), p).unwrap())
}

/// Applies a similarity `x -> s R x + t` to camera-to-world poses.
fn transform(t: &Trajectory, g: &Se3Pose, s: f64) -> Trajectory {
    let poses = t
        .poses()
        .iter()
        .map(|p| Se3Pose::from_parts(g.rotation() * p.rotation(), s * (g.rotation() * p.translation()) + g.translation()))
        .collect();
    Trajectory::new(t.stamps().to_vec(), poses).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_invariant_to_similarity_of_estimate(gt in trajectory(12), noise in trajectory(12), g in pose(), s in 0.2f64..5.0) {
        // estimate = ground truth plus a small perturbation
        let est = Trajectory::new(
            gt.stamps().to_vec(),
            gt.poses().iter().zip(noise.poses()).map(|(p, n)| Se3Pose::from_parts(*p.rotation(), p.translation() + 0.05 * n.translation())).collect(),
        ).unwrap();
        let a = ate(&est, &gt, true).unwrap();
        let b = ate(&transform(&est, &g, s), &gt, true).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} {}", a, b);
        let a = ate(&est, &gt, false).unwrap();
        let b = ate(&transform(&est, &g, 1.0), &gt, false).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} {}", a, b);
    }

    #[test]
    fn rpe_invariant_to_global_rigid_motion(est in trajectory(10), gt in trajectory(10), g in pose()) {
        let (r0, t0) = rpe(&est, &gt, 1).unwrap();
        for (e, t) in [(transform(&est, &g, 1.0), gt.clone()), (est.clone(), transform(&gt, &g, 1.0))] {
            let (r1, t1) = rpe(&e, &t, 1).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-9 && (t0 - t1).abs() < 1e-9);
        }
    }

    #[test]
    fn delta_v_invariant_to_translation(est in trajectory(10), gt in trajectory(10), shift in prop::array::uniform3(-10.0f64..10.0)) {
        let moved = transform(&est, &Se3Pose::from_translation(Vector3::from(shift)), 1.0);
        let a = delta_v(&est, &gt).unwrap();
        let b = delta_v(&moved, &gt).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn metrics_nonnegative_and_zero_on_aligned_copies(gt in trajectory(8), other in trajectory(8), g in pose(), s in 0.5f64..2.0) {
        let m = evaluate(&other, &gt, &EvalOptions::default()).unwrap();
        prop_assert!(m.ate_rmse >= 0.0 && m.rpe_rot >= 0.0 && m.rpe_trans >= 0.0 && m.delta_v >= 0.0);
        let copy = transform(&gt, &g, s);
        let m = evaluate(&copy, &gt, &EvalOptions::default()).unwrap();
        prop_assert!(m.ate_rmse < 1e-9 && m.delta_v < 1e-9, "{:?}", m);
        prop_assert!((m.scale - 1.0 / s).abs() < 1e-9);
    }

    #[test]
    fn umeyama_recovers_similarity(pts in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 4..30), g in pose(), s in 0.1f64..10.0) {
        let e: Vec<Vector3<f64>> = pts.into_iter().map(Vector3::from).collect();
        let spread: f64 = e.iter().map(|p| (p - e[0]).norm()).sum();
        prop_assume!(spread > 1e-2);
        let gt: Vec<_> = e.iter().map(|p| s * (g.rotation() * p) + g.translation()).collect();
        let a = umeyama_align(&e, &gt, true).unwrap();
        for (p, q) in e.iter().zip(&gt) {
            prop_assert!((a.apply(p) - q).norm() < 1e-8);
        }
        prop_assert!((a.scale - s).abs() < 1e-9 * s);
    }
}

#[test]
fn identity_baseline_uses_centroid_alignment() {
    let gt = Trajectory::new(
        (0..5).map(|i| i as f64 / 30.0).collect(),
        (0..5).map(|i| Se3Pose::from_translation(Vector3::new(0.1 * i as f64, 0.0, 0.0))).collect(),
    )
    .unwrap();
    let still = Trajectory::new(gt.stamps().to_vec(), vec![Se3Pose::identity(); 5]).unwrap();
    assert!(ate(&still, &gt, true).is_err());
    let m = evaluate(&still, &gt, &EvalOptions::default()).unwrap();
    // positions 0..0.4 against their centroid 0.2
    let want = ((0.04 + 0.01 + 0.0 + 0.01 + 0.04) / 5.0f64).sqrt();
    assert!((m.ate_rmse - want).abs() < 1e-12);
    assert!((m.delta_v - 0.1).abs() < 1e-12);
    assert_eq!(m.scale, 1.0);
}

#[test]
fn aligned_positions_match_report() {
    let gt = Trajectory::new(
        (0..6).map(|i| i as f64 / 30.0).collect(),
        (0..6).map(|i| Se3Pose::from_translation(Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0))).collect(),
    )
    .unwrap();
    let g = Se3Pose::from_parts(UnitQuaternion::from_scaled_axis(Vector3::new(0.1, 0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0));
    let est = transform(&gt, &g, 2.0);
    let rows = aligned_positions(&est, &gt, &EvalOptions::default()).unwrap();
    assert_eq!(rows.len(), 6);
    for (r, p) in rows.iter().zip(gt.poses()) {
        assert!((r.est - p.translation()).norm() < 1e-9);
        assert_eq!(r.gt, *p.translation());
    }
}
