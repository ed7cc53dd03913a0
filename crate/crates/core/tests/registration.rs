use egomotion::registration::{
    eq1_objective, icp, imu_icp, nn_correspondences, ransac_init, rigid_solve, Correspondences, IcpParams,
    RansacParams,
};
use egomotion::rng;
use egomotion::sensing::{ImuSample, PointCloud};
use egomotion::simulator::{
    degrade_to_radar, imu_window, raycast_scan_jittered, synth_imu, ImuBias, ImuConfig, RadarNoiseModel,
    WorldModel,
};
use egomotion::{EulerAngles, PoseSE3, Vec3};
use proptest::prelude::*;
use rand::Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn motion() -> PoseSE3 {
    PoseSE3::from_euler(Vec3::new(0.1, 0.0, 0.0), EulerAngles::new(0.0, 0.0, 2f64.to_radians()))
}

/// Previous sensor pose inside the furnished room, drawn from `seed`.
fn start_pose(seed: u64) -> PoseSE3 {
    let mut r = rng::stream(seed, "test.pose");
    PoseSE3::from_euler(
        Vec3::new(r.random_range(-1.5..0.5), r.random_range(-1.0..1.0), r.random_range(0.8..1.6)),
        EulerAngles::new(0.0, 0.0, r.random_range(-0.5..0.5)),
    )
}

/// Dense scans `(current, previous)` of a pair moving by `rel`.
fn dense_pair(seed: u64, rel: &PoseSE3) -> (PointCloud, PointCloud) {
    let world = WorldModel::furnished_room(8.0, 6.0, 3.0);
    let pattern = Default::default();
    let prev_pose = start_pose(seed);
    let curr_pose = prev_pose.compose(rel);
    let prev = raycast_scan_jittered(&world, &prev_pose, &pattern, 0.0, rng::stream_seed(seed, "scan/0")).unwrap();
    let curr = raycast_scan_jittered(&world, &curr_pose, &pattern, 0.05, rng::stream_seed(seed, "scan/1")).unwrap();
    (curr, prev)
}

fn translation_error(res: &PoseSE3, truth: &PoseSE3) -> f64 {
    (res.translation - truth.translation).norm()
}

#[test]
fn rigid_solve_recovers_random_noiseless_transforms() {
    let mut r = rng::stream(11, "test.rigid");
    for _ in 0..100 {
        let t = PoseSE3::from_euler(
            Vec3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)),
            EulerAngles::new(r.random_range(-3.0..3.0), r.random_range(-1.5..1.5), r.random_range(-3.0..3.0)),
        );
        let n = r.random_range(3..40);
        let a: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)))
            .collect();
        let b: Vec<Vec3> = a.iter().map(|p| t.transform_point(p)).collect();
        let est = rigid_solve(&a, &b).unwrap();
        assert!(est.max_abs_diff(&t) < 1e-9, "{est:?} vs {t:?}");
    }
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64), 8..60)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eq1_matches_brute_force_resummation(
        a in cloud_strategy(),
        b in cloud_strategy(),
        seed in 0u64..1000,
        tx in -1.0..1.0f64,
        yaw in -1.0..1.0f64,
    ) {
        let mut r = rng::stream(seed, "test.corr");
        let pairs: Vec<(usize, usize)> = (0..20).map(|_| (r.random_range(0..a.len()), r.random_range(0..b.len()))).collect();
        let t = PoseSE3::from_euler(Vec3::new(tx, 0.2, -0.1), EulerAngles::new(0.1, -0.2, yaw));
        let ca = PointCloud::new(a.clone(), 0.0);
        let cb = PointCloud::new(b.clone(), 0.0);
        let corr = Correspondences { pairs: pairs.clone(), residuals: None };
        let lib = eq1_objective(&ca, &cb, &corr, &t).unwrap();
        let (r_m, tr) = (t.rotation.matrix(), t.translation);
        let mut brute = 0.0;
        for &(i, j) in &pairs {
            let d = b[j] - (r_m * a[i] + tr);
            brute += d.x * d.x + d.y * d.y + d.z * d.z;
        }
        prop_assert!((lib - brute).abs() <= 1e-12 * brute.max(1.0));
    }

    #[test]
    fn icp_objective_never_increases(
        a in cloud_strategy(),
        tx in -0.3..0.3f64,
        ty in -0.3..0.3f64,
        yaw in -0.2..0.2f64,
        noise_seed in 0u64..1000,
    ) {
        let t = PoseSE3::from_euler(Vec3::new(tx, ty, 0.05), EulerAngles::new(0.0, 0.02, yaw));
        let mut r = rng::stream(noise_seed, "test.noise");
        let b: Vec<Vec3> = a
            .iter()
            .map(|p| t.transform_point(p) + Vec3::new(r.random_range(-0.02..0.02), r.random_range(-0.02..0.02), 0.0))
            .collect();
        let res = icp(&PointCloud::new(a, 0.0), &PointCloud::new(b, 0.0), &PoseSE3::identity(), &IcpParams::default()).unwrap();
        prop_assert!(!res.history.is_empty());
        for w in res.history.windows(2) {
            prop_assert!(w[1] <= w[0], "history {:?}", res.history);
        }
    }
}

#[test]
fn shifted_cloud_gives_uniform_residuals() {
    let a: Vec<Vec3> = (0..30).map(|i| Vec3::new(i as f64, (i * i % 7) as f64, 0.0)).collect();
    let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.1, 0.0, 0.0)).collect();
    let corr = nn_correspondences(&PointCloud::new(a, 0.0), &PointCloud::new(b, 0.0), 1.0);
    assert_eq!(corr.len(), 30);
    assert!(corr.residuals.unwrap().iter().all(|d| (d - 0.1).abs() < 1e-12));
}

#[test]
fn dense_pair_recovers_translation_within_5mm() {
    let truth = motion();
    let errors: Vec<f64> = (0..20)
        .map(|s| {
            let (curr, prev) = dense_pair(s, &truth);
            let res = icp(&curr, &prev, &PoseSE3::identity(), &IcpParams::default()).unwrap();
            translation_error(&res.transform, &truth)
        })
        .collect();
    let m = median(errors.clone());
    assert!(m < 0.005, "median dense translation error {m:.4} m over 20 seeds: {errors:.4?}");
}

#[test]
fn sparse_radar_error_is_at_least_three_times_dense() {
    let truth = motion();
    let noise = RadarNoiseModel::default();
    let mut dense = Vec::new();
    let mut sparse = Vec::new();
    for s in 0..20 {
        let (curr, prev) = dense_pair(s, &truth);
        let res = icp(&curr, &prev, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        dense.push(translation_error(&res.transform, &truth));
        let rc = degrade_to_radar(&curr, &noise, rng::stream_seed(s, "radar/1")).unwrap();
        let rp = degrade_to_radar(&prev, &noise, rng::stream_seed(s, "radar/0")).unwrap();
        let res = icp(&rc, &rp, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        sparse.push(translation_error(&res.transform, &truth));
    }
    let (d, s) = (median(dense), median(sparse));
    assert!(s >= 3.0 * d, "sparse {s:.4} m vs dense {d:.4} m");
}

/// Clean IMU samples along a constant-rate rotation from `prev` to `curr` over `dt`.
fn clean_window(prev: &PoseSE3, curr: &PoseSE3, dt: f64) -> Vec<ImuSample> {
    let cfg = ImuConfig::ideal(200.0);
    let n = (dt * cfg.rate).round() as usize;
    let poses: Vec<PoseSE3> = (0..=n + 1)
        .map(|j| {
            let s = j as f64 / n as f64;
            PoseSE3::new(
                prev.rotation.slerp(&curr.rotation, s),
                prev.translation + (curr.translation - prev.translation) * s,
            )
        })
        .collect();
    let samples = synth_imu(&poses, 0.0, &cfg, &ImuBias::default(), &mut rng::stream(0, "unused")).unwrap();
    imu_window(&samples, 0.0, dt)
}

#[test]
fn gyro_initialisation_saves_iterations_on_pure_yaw() {
    let yaw = PoseSE3::from_euler(Vec3::zeros(), EulerAngles::new(0.0, 0.0, 10f64.to_radians()));
    let mut with_imu = Vec::new();
    let mut without = Vec::new();
    for s in 0..20 {
        let (curr, prev) = dense_pair(100 + s, &yaw);
        let prev_pose = start_pose(100 + s);
        let window = clean_window(&prev_pose, &prev_pose.compose(&yaw), 0.05);
        let plain = icp(&curr, &prev, &PoseSE3::identity(), &IcpParams::default()).unwrap();
        let boot = imu_icp(&curr, &prev, &window, &IcpParams::default()).unwrap();
        assert!(!boot.init_fallback);
        without.push(plain.iterations as f64);
        with_imu.push(boot.iterations as f64);
    }
    let (w, wo) = (median(with_imu), median(without));
    assert!(w < wo, "median iterations with gyro {w} vs identity {wo}");
}

#[test]
fn zero_gyro_degrades_to_identity_initialisation() {
    let yaw = PoseSE3::from_euler(Vec3::new(0.05, 0.0, 0.0), EulerAngles::new(0.0, 0.0, 0.1));
    let (curr, prev) = dense_pair(7, &yaw);
    let zeros: Vec<ImuSample> = (1..=10)
        .map(|k| ImuSample {
            timestamp: k as f64 * 0.005,
            accel: Vec3::zeros(),
            gyro: Vec3::zeros(),
        })
        .collect();
    let plain = icp(&curr, &prev, &PoseSE3::identity(), &IcpParams::default()).unwrap();
    let boot = imu_icp(&curr, &prev, &zeros, &IcpParams::default()).unwrap();
    assert_eq!(boot.transform, plain.transform);
    assert_eq!(boot.iterations, plain.iterations);
}

#[test]
fn static_pair_with_static_imu_is_identity() {
    let (curr, prev) = dense_pair(3, &PoseSE3::identity());
    let same = PointCloud::new(prev.points.clone(), 0.05);
    let window = clean_window(&PoseSE3::identity(), &PoseSE3::identity(), 0.05);
    let res = imu_icp(&same, &prev, &window, &IcpParams::default()).unwrap();
    assert!(res.transform.max_abs_diff(&PoseSE3::identity()) < 1e-9);
    assert!(curr.len() > 900);
}

#[test]
fn ransac_rejects_injected_outliers() {
    let mut r = rng::stream(5, "test.ransac");
    let t = PoseSE3::from_euler(Vec3::new(0.2, -0.1, 0.05), EulerAngles::new(0.0, 0.0, 5f64.to_radians()));
    let n = 60;
    let mut a: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-1.0..1.0)))
        .collect();
    let mut b: Vec<Vec3> = a.iter().map(|p| t.transform_point(p)).collect();
    // Equal numbers of unrelated points on both sides.
    for _ in 0..n {
        a.push(Vec3::new(r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-1.0..1.0)));
        b.push(Vec3::new(r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-1.0..1.0)));
    }
    let res = ransac_init(&PointCloud::new(a, 0.0), &PointCloud::new(b, 0.0), &RansacParams::default(), 9).unwrap();
    let kept_outliers = res.inliers.iter().filter(|&&i| i >= n).count();
    assert!(kept_outliers as f64 <= 0.1 * n as f64, "{kept_outliers} of {n} outliers kept");
    assert!(res.transform.max_abs_diff(&t) < 1e-2);
    assert!(res.inliers.iter().filter(|&&i| i < n).count() == n);
}

#[test]
fn ransac_identity_on_identical_clouds() {
    let mut r = rng::stream(6, "test.ransac");
    let a: Vec<Vec3> = (0..40)
        .map(|_| Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)))
        .collect();
    let c = PointCloud::new(a, 0.0);
    let res = ransac_init(&c, &c, &RansacParams::default(), 1).unwrap();
    assert!(res.transform.max_abs_diff(&PoseSE3::identity()) < 1e-9);
    assert_eq!(res.inliers.len(), 40);
}
