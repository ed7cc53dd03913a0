use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egomotion::evaluation::{align_first_frame, ate, Dim, Trajectory};
use egomotion::neural::checkpoint::Checkpoint;
use egomotion::neural::{Network, NetworkConfig, Profile};
use egomotion::rng;
use egomotion::{PoseSE3, Vec3};
use tempfile::TempDir;

fn egomotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egomotion")).args(args).output().expect("run egomotion")
}

fn ok(args: &[&str]) -> String {
    let out = egomotion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    egomotion(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: u64, extra: &[&str]) -> PathBuf {
    let seed = seed.to_string();
    let mut args = vec!["simulate", "--out", p(dir), "--seed", &seed];
    args.extend_from_slice(extra);
    ok(&args);
    dir.to_path_buf()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mean_3d(eval_dir: &Path) -> f64 {
    let text = std::fs::read_to_string(eval_dir.join("summary.csv")).unwrap();
    let row = text.lines().find(|l| l.contains(",3D,")).unwrap();
    row.split(',').next().unwrap().parse().unwrap()
}

fn register_ate(tmp: &Path, seq: &Path, tag: &str, args: &[&str]) -> f64 {
    let reg = tmp.join(format!("reg-{tag}"));
    let mut a = vec!["register", "--sequence", p(seq), "--out", p(&reg)];
    a.extend_from_slice(args);
    ok(&a);
    let ev = tmp.join(format!("eval-{tag}"));
    let est = reg.join("trajectory.txt");
    let gt = seq.join("groundtruth.txt");
    ok(&["eval", "--estimate", p(&est), "--reference", p(&gt), "--out", p(&ev)]);
    mean_3d(&ev)
}

fn read_dir_sorted(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(read_dir_sorted(&path));
        } else {
            out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_the_sequence_layout() {
    let tmp = TempDir::new().unwrap();
    let seq = simulate(&tmp.path().join("seq"), 1, &[]);
    for f in ["frames", "imu.txt", "groundtruth.txt", "meta.txt", "world.txt"] {
        assert!(seq.join(f).exists(), "missing {f}");
    }
    let clouds = std::fs::read_dir(seq.join("frames"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "cloud")
        .count();
    assert_eq!(clouds, 81);
    let meta = std::fs::read_to_string(seq.join("meta.txt")).unwrap();
    assert!(meta.contains("config.seed = 1"));
    assert!(meta.contains("command = simulate"));
}

#[test]
fn simulate_is_byte_identical_for_the_same_seed() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(&tmp.path().join("a"), 5, &[]);
    let b = simulate(&tmp.path().join("b"), 5, &[]);
    let c = simulate(&tmp.path().join("c"), 6, &[]);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
    assert_ne!(read_dir_sorted(&a), read_dir_sorted(&c));
}

#[test]
fn simulate_rejects_invalid_specs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["simulate", "--out", p(&out), "--waypoints", "0 0 1"]), 1);
    assert_eq!(code(&["simulate", "--out", p(&out), "--waypoints", "0 0 1; 20 0 1"]), 1);
    assert_eq!(code(&["simulate", "--out", p(&out), "--speed", "-1"]), 1);
    assert_eq!(code(&["simulate"]), 1);
}

#[test]
fn config_precedence_and_meta_echo() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "seed = 1\nspeed = 0.5\nframe_rate = 5\n\n[simulate]\nseed = 2\nspeed = 0.8\n\n[train]\nepochs = 9\n",
    )
    .unwrap();
    let out = tmp.path().join("seq");
    ok(&["simulate", "--config", p(&cfg), "--set", "speed=2", "--set", "seed=3", "--seed", "4", "--out", p(&out)]);
    let meta = std::fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("config.seed = 4"), "{meta}");
    assert!(meta.contains("config.speed = 2\n"), "{meta}");
    assert!(meta.contains("config.frame_rate = 5\n"), "{meta}");
    assert!(!meta.contains("epochs"));
    assert!(!meta.contains("config.out"));

    assert_eq!(code(&["simulate", "--out", p(&out), "--set", "no_such_key=1"]), 1);
    assert_eq!(code(&["simulate", "--out", p(&out), "--set", "speed=fast"]), 1);
    assert_eq!(code(&["simulate", "--out", p(&out), "--config", p(&tmp.path().join("missing.cfg"))]), 1);
}

#[test]
fn encode_writes_panoramas_and_means() {
    let tmp = TempDir::new().unwrap();
    let seq = simulate(&tmp.path().join("seq"), 2, &["--waypoints", "0 0 1.2 0; 0.5 0 1.2 0"]);
    let out = tmp.path().join("enc");
    ok(&["encode", "--sequence", p(&seq), "--out", p(&out), "--subsample", "2"]);
    let n = std::fs::read_dir(out.join("radar")).unwrap().count();
    assert_eq!(n, 6);
    assert_eq!(std::fs::read_dir(out.join("depth")).unwrap().count(), n);
    let first = std::fs::read_to_string(out.join("radar/00000.pano")).unwrap();
    assert!(first.lines().next().unwrap().starts_with("32 128 "));
    let meta = std::fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("norm.radar_mean"));
    let imu = std::fs::read_to_string(out.join("imu.csv")).unwrap();
    assert_eq!(imu.lines().count(), 1 + (n - 1) * 10);
}

#[test]
fn register_outputs_are_evaluable() {
    let tmp = TempDir::new().unwrap();
    let seq = simulate(&tmp.path().join("seq"), 3, &[]);
    let reg = tmp.path().join("reg");
    ok(&["register", "--sequence", p(&seq), "--out", p(&reg), "--source", "dense", "--method", "icp"]);
    let traj = Trajectory::load(&reg.join("trajectory.txt")).unwrap();
    assert_eq!(traj.len(), 81);
    let pairs = std::fs::read_to_string(reg.join("pairs.csv")).unwrap();
    assert_eq!(
        pairs.lines().next().unwrap(),
        "pair,timestamp,objective,iterations,converged,inliers,fallback,init_fallback"
    );
    assert_eq!(pairs.lines().count(), 81);
    let ev = tmp.path().join("ev");
    ok(&["eval", "--estimate", p(&reg.join("trajectory.txt")), "--reference", p(&seq.join("groundtruth.txt")), "--out", p(&ev)]);

    assert_eq!(code(&["register", "--sequence", p(&seq), "--out", p(&reg), "--method", "ndt"]), 1);
    assert_eq!(code(&["register", "--sequence", p(&tmp.path().join("none")), "--out", p(&reg)]), 1);
}

#[test]
fn register_flags_starved_pairs_and_continues() {
    let tmp = TempDir::new().unwrap();
    let seq = simulate(&tmp.path().join("seq"), 3, &["--waypoints", "0 0 1.2 0; 0.3 0 1.2 0"]);
    let reg = tmp.path().join("reg");
    let out = egomotion(&["register", "--sequence", p(&seq), "--out", p(&reg), "--set", "icp.reject_dist=0.0001"]);
    assert!(out.status.success());
    let pairs = std::fs::read_to_string(reg.join("pairs.csv")).unwrap();
    assert!(pairs.lines().skip(1).all(|l| l.contains(",true,") && l.ends_with(",true,false")), "{pairs}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("identity used"));
    let traj = Trajectory::load(&reg.join("trajectory.txt")).unwrap();
    let first = traj.entries()[0].1;
    assert!(traj.entries().iter().all(|(_, pose)| pose.max_abs_diff(&first) == 0.0));
}

#[test]
fn sparse_radar_ate_is_at_least_three_times_dense() {
    let tmp = TempDir::new().unwrap();
    let mut sparse = Vec::new();
    let mut dense = Vec::new();
    for seed in 0..5 {
        // 0.1 m between frames, as in the single-pair experiment.
        let seq = simulate(&tmp.path().join(format!("s{seed}")), seed, &["--frame-rate", "10"]);
        sparse.push(register_ate(tmp.path(), &seq, &format!("r{seed}"), &["--source", "radar"]));
        dense.push(register_ate(tmp.path(), &seq, &format!("d{seed}"), &["--source", "dense"]));
    }
    let (s, d) = (median(sparse.clone()), median(dense.clone()));
    assert!(s >= 3.0 * d, "sparse {sparse:?} vs dense {dense:?}");
}

#[test]
fn imu_icp_is_no_worse_than_icp_when_rotating() {
    let tmp = TempDir::new().unwrap();
    let waypoints = "0 0 1.2 0; 0 0 1.2 90; 0.5 0 1.2 180; 0.5 0 1.2 60";
    let mut plain = Vec::new();
    let mut gyro = Vec::new();
    for seed in 0..5 {
        let seq = simulate(&tmp.path().join(format!("s{seed}")), seed, &["--waypoints", waypoints]);
        plain.push(register_ate(tmp.path(), &seq, &format!("i{seed}"), &["--method", "icp"]));
        gyro.push(register_ate(tmp.path(), &seq, &format!("g{seed}"), &["--method", "imu-icp"]));
    }
    assert!(median(gyro.clone()) <= median(plain.clone()), "imu-icp {gyro:?} vs icp {plain:?}");
}

fn small_sequence(tmp: &Path) -> PathBuf {
    simulate(&tmp.join("seq"), 4, &["--waypoints", "0 0 1.2 0; 0.6 0.1 1.2 20"])
}

#[test]
fn train_zero_epochs_saves_initial_weights() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let out = tmp.path().join("tr");
    ok(&["train", "--sequence", p(&seq), "--out", p(&out), "--epochs", "0", "--seed", "5"]);
    let ck = Checkpoint::load(&out.join("model.ckpt")).unwrap();
    let fresh = Network::new(NetworkConfig::profile(Profile::Toy), rng::stream_seed(5, "net.init")).unwrap();
    assert_eq!(ck.network, fresh);
    assert_eq!(ck.epoch, 0);
    assert_eq!(std::fs::read_to_string(out.join("loss.csv")).unwrap(), "epoch,mean_loss,lr\n");
    let meta = std::fs::read_to_string(out.join("meta.txt")).unwrap();
    assert!(meta.contains("input_hash = ") && meta.contains("config.seed = 5"));
}

#[test]
fn train_resume_continues_the_same_curve() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let common = ["--lr", "1e-3", "--set", "subsequence_length=4"];
    let full = tmp.path().join("full");
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let run = |out: &Path, epochs: &str, extra: &[&str]| {
        let mut a = vec!["train", "--sequence", p(&seq), "--out", p(out), "--epochs", epochs];
        a.extend_from_slice(&common);
        a.extend_from_slice(extra);
        ok(&a);
    };
    run(&full, "8", &[]);
    run(&first, "4", &[]);
    let ck = first.join("model.ckpt");
    run(&second, "8", &["--resume", p(&ck)]);

    let losses = |dir: &Path| -> Vec<f64> {
        std::fs::read_to_string(dir.join("loss.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    let (a, b, whole) = (losses(&first), losses(&second), losses(&full));
    assert_eq!(b.len(), 4);
    assert!(b[0] <= 10.0 * a[3], "resume spike {} after {}", b[0], a[3]);
    assert_eq!([a, b].concat(), whole);
    assert_eq!(std::fs::read(full.join("model.ckpt")).unwrap(), std::fs::read(second.join("model.ckpt")).unwrap());

    assert_eq!(code(&["train", "--sequence", p(&seq), "--out", p(&second), "--resume", p(&ck), "--profile", "paper"]), 1);
}

#[test]
fn train_rejects_short_datasets() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let out = tmp.path().join("tr");
    assert_eq!(code(&["train", "--sequence", p(&seq), "--out", p(&out), "--set", "subsequence_length=200"]), 2);
    assert_eq!(code(&["train", "--out", p(&out)]), 1);
}

#[test]
fn infer_arity_determinism_and_profile_check() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let n = std::fs::read_dir(seq.join("frames")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "cloud").count();
    let tr = tmp.path().join("tr");
    ok(&["train", "--sequence", p(&seq), "--out", p(&tr), "--epochs", "0"]);
    let ck = tr.join("model.ckpt");
    let infer = |out: &Path, sub: &str| {
        ok(&["infer", "--checkpoint", p(&ck), "--sequence", p(&seq), "--out", p(out), "--subsample", sub]);
        Trajectory::load(&out.join("trajectory.txt")).unwrap()
    };
    assert_eq!(infer(&tmp.path().join("i1"), "1").len(), n);
    assert_eq!(infer(&tmp.path().join("i5"), "5").len(), n.div_ceil(5));
    let again = tmp.path().join("i1b");
    infer(&again, "1");
    assert_eq!(
        std::fs::read(tmp.path().join("i1/trajectory.txt")).unwrap(),
        std::fs::read(again.join("trajectory.txt")).unwrap()
    );
    let bad = tmp.path().join("bad");
    assert_eq!(code(&["infer", "--checkpoint", p(&ck), "--sequence", p(&seq), "--out", p(&bad), "--profile", "paper"]), 1);
}

#[test]
fn eval_matches_the_library() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let gt_path = seq.join("groundtruth.txt");
    let gt = Trajectory::load(&gt_path).unwrap();

    let same = tmp.path().join("same");
    ok(&["eval", "--estimate", p(&gt_path), "--reference", p(&gt_path), "--out", p(&same)]);
    for line in std::fs::read_to_string(same.join("summary.csv")).unwrap().lines().skip(1) {
        assert!(line.starts_with("0,0,0,"), "{line}");
    }

    let d = Vec3::new(0.3, -0.4, 0.0);
    let shifted = Trajectory::new(gt.entries().iter().map(|(t, q)| (*t, PoseSE3::new(q.rotation, q.translation + d))).collect()).unwrap();
    let est_path = tmp.path().join("shifted.txt");
    shifted.save(&est_path).unwrap();
    let off = tmp.path().join("off");
    ok(&["eval", "--estimate", p(&est_path), "--reference", p(&gt_path), "--out", p(&off), "--align", "none"]);
    assert_eq!(mean_3d(&off), 0.5);

    let reg = tmp.path().join("reg");
    ok(&["register", "--sequence", p(&seq), "--out", p(&reg)]);
    let est_path = reg.join("trajectory.txt");
    let ev = tmp.path().join("ev");
    ok(&["eval", "--estimate", p(&est_path), "--reference", p(&gt_path), "--out", p(&ev)]);
    let est = Trajectory::load(&est_path).unwrap();
    let aligned = align_first_frame(&est, &gt).unwrap();
    let lib2 = ate(&aligned, &gt, Dim::D2).unwrap();
    let lib3 = ate(&aligned, &gt, Dim::D3).unwrap();
    let summary = std::fs::read_to_string(ev.join("summary.csv")).unwrap();
    let expected = format!(
        "mean,std,max,dim,drift_percent\n{}{}",
        lib2.summary_csv().lines().nth(1).unwrap().to_string() + "\n",
        lib3.summary_csv().lines().nth(1).unwrap().to_string() + "\n"
    );
    assert_eq!(summary, expected);
    assert_eq!(std::fs::read_to_string(ev.join("errors_3d.csv")).unwrap(), lib3.to_csv());
    let cdf = std::fs::read_to_string(ev.join("cdf_3d.csv")).unwrap();
    assert!(cdf.lines().last().unwrap().ends_with(",1"));
}

#[test]
fn eval_data_errors() {
    let tmp = TempDir::new().unwrap();
    let seq = small_sequence(tmp.path());
    let gt_path = seq.join("groundtruth.txt");
    let out = tmp.path().join("ev");
    assert_eq!(code(&["eval", "--estimate", p(&seq.join("imu.txt")), "--reference", p(&gt_path), "--out", p(&out)]), 2);
    let late = tmp.path().join("late.txt");
    std::fs::write(&late, "1000 0 0 0 0 0 0 1\n1001 0 0 0 0 0 0 1\n").unwrap();
    assert_eq!(code(&["eval", "--estimate", p(&late), "--reference", p(&gt_path), "--out", p(&out)]), 2);
    assert_eq!(code(&["eval", "--estimate", p(&gt_path), "--reference", p(&gt_path), "--out", p(&out), "--align", "sideways"]), 1);
}

#[test]
fn gradcheck_reports_every_op() {
    let out = egomotion(&["gradcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for op in egomotion::neural::gradcheck::SUITE_OPS {
        assert!(text.lines().any(|l| l.starts_with("PASS ") && l.contains(op)), "{op} missing:\n{text}");
    }
    let worst: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max relative error: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(worst < 1e-4);
}

#[test]
fn gradcheck_corrupted_gradient_fails() {
    let out = egomotion(&["gradcheck", "--profile", "tiny", "--corrupt-op", "self_attention"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL ") && l.contains("self_attention")));
    assert_eq!(code(&["gradcheck", "--profile", "huge"]), 1);
}

#[test]
fn compare_emits_a_table() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cmp");
    ok(&["compare", "--out", p(&out), "--seeds", "1,2", "--methods", "icp,imu-icp", "--set", "waypoints=0 0 1.2 0; 0.5 0 1.2 0"]);
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,method,mean_3d,std_3d,max_3d,mean_2d,std_2d,max_2d,drift_percent");
    assert_eq!(lines.len(), 1 + 2 * 3 + 3);
    assert!(lines.iter().any(|l| l.starts_with("mean,identity,")));
    assert!(out.join("meta.txt").exists());
}

#[test]
fn help_and_unknown_commands() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["fly"]), 1);
    assert_eq!(code(&[]), 1);
}
