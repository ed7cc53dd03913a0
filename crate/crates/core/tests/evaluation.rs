use egomotion::evaluation::{
    align_first_frame, ate, cdf_export, compose_trajectory, AteReport, Dim, Trajectory,
};
use egomotion::{EulerAngles, PoseSE3, RelativePose, Vec3};
use proptest::prelude::*;

fn trajectory(steps: &[(f64, f64, f64, f64)]) -> Trajectory {
    let rels: Vec<RelativePose> = steps
        .iter()
        .map(|&(x, y, z, yaw)| RelativePose::new(Vec3::new(x, y, z), EulerAngles::new(0.0, 0.0, yaw)))
        .collect();
    let ts: Vec<f64> = (0..=rels.len()).map(|k| k as f64 * 0.05).collect();
    compose_trajectory(PoseSE3::identity(), &rels, &ts).unwrap()
}

fn steps() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64, -0.05..0.05f64, -0.2..0.2f64), 2..40)
}

/// Independent statistics from the definition: RMSE, population std, max.
fn reference_stats(errors: &[f64]) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    let mut sq = 0.0;
    let mut sum = 0.0;
    let mut max = f64::MIN;
    for &e in errors {
        sq += e * e;
        sum += e;
        if e > max {
            max = e;
        }
    }
    let avg = sum / n;
    let var = errors.iter().map(|e| (e - avg) * (e - avg)).sum::<f64>() / n;
    ((sq / n).sqrt(), var.sqrt(), max)
}

proptest! {
    #[test]
    fn ate_matches_recomputation(truth in steps(), noise in steps()) {
        let reference = trajectory(&truth);
        let n = truth.len().min(noise.len());
        let perturbed: Vec<_> = truth[..n].iter().zip(&noise[..n])
            .map(|(a, b)| (a.0 + 0.1 * b.0, a.1 + 0.1 * b.1, a.2 + 0.1 * b.2, a.3 + 0.1 * b.3))
            .collect();
        let est = trajectory(&perturbed);
        for dim in [Dim::D2, Dim::D3] {
            let report = ate(&est, &reference, dim).unwrap();
            let errors: Vec<f64> = est.poses().iter().zip(reference.poses())
                .map(|(e, r)| {
                    let d = e.translation - r.translation;
                    match dim {
                        Dim::D2 => (d.x * d.x + d.y * d.y).sqrt(),
                        Dim::D3 => (d.x * d.x + d.y * d.y + d.z * d.z).sqrt(),
                    }
                })
                .collect();
            prop_assert_eq!(report.per_frame.len(), n + 1);
            let (mean, std, max) = reference_stats(&errors);
            prop_assert!((report.mean - mean).abs() < 1e-12);
            prop_assert!((report.std - std).abs() < 1e-12);
            prop_assert!((report.max - max).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_is_monotone(errors in prop::collection::vec(0.0..5.0f64, 1..50)) {
        let report = AteReport {
            mean: 0.0,
            std: 0.0,
            max: 0.0,
            frames: (0..errors.len()).collect(),
            per_frame: errors,
            dim: Dim::D3,
            drift_percent: 0.0,
        };
        let cdf = cdf_export(&report);
        for w in cdf.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 < w[1].1);
        }
        prop_assert_eq!(cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn composed_truth_has_zero_error(truth in steps()) {
        let reference = trajectory(&truth);
        let rebuilt = compose_trajectory(reference.poses()[0], &reference.relatives(), &reference.timestamps()).unwrap();
        let report = ate(&rebuilt, &reference, Dim::D3).unwrap();
        prop_assert!(report.max < 1e-9);
    }

    #[test]
    fn first_frame_alignment_removes_a_rigid_offset(truth in steps(), yaw in -3.0..3.0f64, dx in -5.0..5.0f64) {
        let reference = trajectory(&truth);
        let moved = reference.transformed(&PoseSE3::from_euler(Vec3::new(dx, 1.0, -0.5), EulerAngles::new(0.0, 0.0, yaw)));
        let aligned = align_first_frame(&moved, &reference).unwrap();
        prop_assert!(ate(&aligned, &reference, Dim::D3).unwrap().max < 1e-9);
    }
}

#[test]
fn constant_offset_statistics() {
    let reference = trajectory(&[(0.1, 0.0, 0.0, 0.05); 20]);
    let d = Vec3::new(0.3, -0.4, 1.2);
    let shifted = Trajectory::new(
        reference
            .entries()
            .iter()
            .map(|(t, p)| (*t, PoseSE3::new(p.rotation, p.translation + d)))
            .collect(),
    )
    .unwrap();
    let r3 = ate(&shifted, &reference, Dim::D3).unwrap();
    assert!((r3.mean - d.norm()).abs() < 1e-12);
    assert!((r3.max - d.norm()).abs() < 1e-12);
    assert!(r3.std.abs() < 1e-12);
    let r2 = ate(&shifted, &reference, Dim::D2).unwrap();
    assert!((r2.mean - 0.5).abs() < 1e-12);
}
