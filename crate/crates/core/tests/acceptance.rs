//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary (no libtest harness) so the lines are always shown.

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{Matrix4, UnitQuaternion, Vector3};
use rand::Rng;
use sha2::{Digest, Sha256};
use smallgs::eval::{evaluate, umeyama_align, EvalOptions};
use smallgs::io::npy::{read_npy, write_npy, NpyArray, NpyData};
use smallgs::io::{read_tum, write_tum, RunConfig};
use smallgs::loss::smoothness_loss;
use smallgs::pipeline::{estimate_sequence, split_into_windows};
use smallgs::raster::{rasterize, rasterize_backward, GradRequest, RasterConfig};
use smallgs::synth::{generate_sequence, SynthConfig, TrajectoryModel};
use smallgs::window::{chain_windows, optimize_window, WindowConfig};
use smallgs::{Se3Pose, Trajectory};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let cfg = RasterConfig::default();
    let cam = camera(32, 32);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for k in [1usize, 3, 16] {
        for seed in 0..20u64 {
            let mut r = rng(10_000 + 100 * k as u64 + seed);
            let scene = random_scene(&mut r, 20, k, &cam).freeze();
            let target = rasterize(&scene, &Se3Pose::identity(), &cam, &cfg).unwrap().map;
            let view = Se3Pose::exp(&random_tangent(&mut r, 0.03, 0.08));
            let out = rasterize(&scene, &view, &cam, &cfg).unwrap();
            let up = mse_grad(&out.map, &target);
            let g = rasterize_backward(&scene, &view, &cam, &out, &up, &cfg, GradRequest::Pose).unwrap();
            let fd = fd_pose_gradient(&view, 1e-5, |v| mse(&rasterize(&scene, v, &cam, &cfg).unwrap().map, &target));
            for i in 0..6 {
                let diff = (g.pose[i] - fd[i]).abs();
                if !grad_close(g.pose[i], fd[i], 1e-3, 1e-8) {
                    failures += 1;
                }
                if diff >= 1e-8 {
                    worst = worst.max(diff / g.pose[i].abs().max(fd[i].abs()));
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("60 scenes x 6 components, {failures} over tolerance, worst rel err {worst:.2e}, {secs:.1}s (limit 60s)"),
    )
}

fn blending_oracle() -> Outcome {
    let cfg = RasterConfig::default();
    let mut worst = 0.0f64;
    let mut max_alpha = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng(20_000 + seed);
        let (w, h) = (r.gen_range(8..56), r.gen_range(8..56));
        let cam = camera(w, h);
        let n = r.gen_range(1..=64);
        let scene = random_scene(&mut r, n, 3, &cam);
        let view = Se3Pose::exp(&random_tangent(&mut r, 0.05, 0.2));
        let out = rasterize(&scene, &view, &cam, &cfg).unwrap();
        let (map, alpha) = brute_force_render(&scene, &view, &cam, &cfg);
        for (a, b) in out.map.data().iter().zip(map.data()) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in out.alpha.data().iter().zip(alpha.data()) {
            worst = worst.max((a - b).abs());
            max_alpha = max_alpha.max(*a);
        }
    }
    outcome(
        worst <= 1e-6 && max_alpha <= 1.0 + 1e-9,
        format!("50 scenes, max |tiled - brute| {worst:.2e} (tol 1e-6), max alpha {max_alpha:.12}"),
    )
}

fn recovery(k: usize, smooth: bool, seed0: u64) -> Outcome {
    let t = Instant::now();
    let cfg = WindowConfig {
        window_size: 4,
        iters: 300,
        ..Default::default()
    };
    let (mut rot, mut trans) = (0.0f64, 0.0f64);
    let mut failed = vec![];
    for seed in 0..10u64 {
        let p = recovery_problem(seed0 + seed, 300, k, 4, smooth, 2.0, 0.02);
        let est = optimize_window(&p.scene, &p.targets, &p.masks, &p.cam, &cfg, &RasterConfig::default(), None).unwrap();
        let (r, tr) = worst_error(&est.relative_poses, &p.views);
        if !(r < 0.1 && tr < 1e-3) {
            failed.push(seed0 + seed);
        }
        rot = rot.max(r);
        trans = trans.max(tr);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failed.is_empty() && secs < 600.0,
        format!(
            "10 seeds, k={k}, 300 Gaussians, 300 iters: worst {rot:.2e} deg (tol 0.1), {trans:.2e} units (tol 1e-3), failed seeds {failed:?}, {secs:.0}s (limit 600s)"
        ),
    )
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let synth = SynthConfig {
        trajectory: TrajectoryModel::Jitter,
        dynamic_fraction: 0.2,
        n_frames: 30,
        ..Default::default()
    };
    let seq = generate_sequence(&synth).unwrap();
    let run = RunConfig::default();
    let est = estimate_sequence(&seq, &run, None).unwrap();
    let gt = &seq.ground_truth;
    let opts = EvalOptions::default();
    let m = evaluate(&est, gt, &opts).unwrap();
    let still = Trajectory::new(gt.stamps().to_vec(), vec![Se3Pose::identity(); gt.len()]).unwrap();
    let m0 = evaluate(&still, gt, &opts).unwrap();
    let extent = gt.spatial_extent();
    let ate_ok = m.ate_rmse < 0.01 * extent;
    let dv_ok = m.delta_v < m0.delta_v;
    outcome(
        ate_ok && dv_ok,
        format!(
            "b={}: ATE {:.3e} = {:.2}% of extent {:.3e} (limit 1%) [{}]; dv {:.3e} vs identity {:.3e} [{}]; {:.0}s",
            run.window_size,
            m.ate_rmse,
            100.0 * m.ate_rmse / extent,
            extent,
            if ate_ok { "ok" } else { "over" },
            m.delta_v,
            m0.delta_v,
            if dv_ok { "ok" } else { "over" },
            t.elapsed().as_secs_f64()
        ),
    )
}

/// Horn's closed-form absolute orientation (unit quaternion), independent of
/// the SVD route in the library. Returns (R, t, s) with gt ~ s R est + t.
fn horn_align(est: &[Vector3<f64>], gt: &[Vector3<f64>], with_scale: bool) -> (UnitQuaternion<f64>, Vector3<f64>, f64) {
    let n = est.len() as f64;
    let me = est.iter().sum::<Vector3<f64>>() / n;
    let mg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut s = nalgebra::Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        s += (e - me) * (g - mg).transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,       sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,       szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,       -sxx - syy + szz,
    );
    let eig = nmat.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(i);
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]));
    let scale = if with_scale {
        let num: f64 = est.iter().zip(gt).map(|(e, g)| (g - mg).dot(&(q * (e - me)))).sum();
        let den: f64 = est.iter().map(|e| (e - me).norm_squared()).sum();
        num / den
    } else {
        1.0
    };
    (q, mg - scale * (q * me), scale)
}

fn traj(poses: Vec<Se3Pose>) -> Trajectory {
    Trajectory::new((0..poses.len()).map(|i| i as f64 / 30.0).collect(), poses).unwrap()
}

fn metric_oracles() -> Outcome {
    let mut worst = 0.0f64;
    let mut notes = vec![];
    let mut r = rng(30_000);

    // 100 random transforms, half with scale
    for i in 0..100 {
        let with_scale = i % 2 == 0;
        let pts: Vec<Vector3<f64>> = (0..12)
            .map(|_| Vector3::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)))
            .collect();
        let rot = random_rotation(&mut r);
        let t = Vector3::new(r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0));
        let s = if with_scale { r.gen_range(0.2..5.0) } else { 1.0 };
        let gt: Vec<_> = pts.iter().map(|p| s * (rot * p) + t).collect();
        let a = umeyama_align(&pts, &gt, with_scale).unwrap();
        worst = worst
            .max(a.rotation.angle_to(&rot))
            .max((a.translation - t).norm())
            .max((a.scale - s).abs());
    }
    notes.push(format!("umeyama {worst:.1e}"));

    // ATE by hand: a square of half-side 1.5 against half-side 1, rigid
    // alignment leaves sqrt(2) * 0.5 per corner
    let corners = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
    let sq = |h: f64| traj(corners.iter().map(|c| Se3Pose::from_translation(Vector3::new(h * c[0], h * c[1], 0.0))).collect());
    let opts = EvalOptions {
        with_scale: false,
        ..Default::default()
    };
    let m = evaluate(&sq(1.5), &sq(1.0), &opts).unwrap();
    let e_ate = (m.ate_rmse - 0.5 * 2f64.sqrt()).abs();
    // with scale the squares coincide
    let ms = evaluate(&sq(1.5), &sq(1.0), &EvalOptions::default()).unwrap();
    let e_ate_s = ms.ate_rmse.abs().max((ms.scale - 1.0 / 1.5).abs());
    notes.push(format!("square ATE {e_ate:.1e}/{e_ate_s:.1e}"));

    // RPE by hand: each step adds exactly 1 degree about the direction of travel
    let step = Vector3::new(0.0, 0.0, 0.1);
    let gt: Vec<Se3Pose> = (0..10).map(|i| Se3Pose::from_translation(step * i as f64)).collect();
    let est: Vec<Se3Pose> = (0..10)
        .map(|i| {
            Se3Pose::from_parts(
                UnitQuaternion::from_axis_angle(&Vector3::z_axis(), (i as f64).to_radians()),
                step * i as f64,
            )
        })
        .collect();
    let m = evaluate(&traj(est), &traj(gt), &EvalOptions::default()).unwrap();
    let e_rpe = (m.rpe_rot - 1.0).abs().max(m.rpe_trans);
    notes.push(format!("RPE {e_rpe:.1e}"));

    // ATE and dv against the Horn-aligned brute computation on noisy data
    let mut e_brute = 0.0f64;
    for with_scale in [true, false] {
        let gtp: Vec<Vector3<f64>> = (0..20)
            .map(|i| Vector3::new(0.1 * i as f64, (0.3 * i as f64).sin(), 0.02 * (i * i) as f64))
            .collect();
        let rot = random_rotation(&mut r);
        let estp: Vec<Vector3<f64>> = gtp
            .iter()
            .map(|p| 0.7 * (rot * p) + Vector3::new(1.0, -2.0, 0.5) + 0.05 * Vector3::new(r.gen(), r.gen(), r.gen()))
            .collect();
        let (q, t, s) = horn_align(&estp, &gtp, with_scale);
        let al: Vec<Vector3<f64>> = estp.iter().map(|e| s * (q * e) + t).collect();
        let ate = (al.iter().zip(&gtp).map(|(a, g)| (a - g).norm_squared()).sum::<f64>() / 20.0).sqrt();
        let dv = (0..19).map(|i| ((al[i + 1] - al[i]) - (gtp[i + 1] - gtp[i])).norm()).sum::<f64>() / 19.0;
        let wrap = |p: &[Vector3<f64>]| traj(p.iter().map(|x| Se3Pose::from_translation(*x)).collect());
        let m = evaluate(
            &wrap(&estp),
            &wrap(&gtp),
            &EvalOptions {
                with_scale,
                ..Default::default()
            },
        )
        .unwrap();
        e_brute = e_brute.max((m.ate_rmse - ate).abs()).max((m.delta_v - dv).abs());
    }
    notes.push(format!("Horn oracle {e_brute:.1e}"));

    // smoothness is exactly zero on constant velocity (dyadic values keep
    // every difference exact)
    let mut smooth_max = 0.0f64;
    for _ in 0..100 {
        let d = |r: &mut rand_chacha::ChaCha8Rng| r.gen_range(-64i32..64) as f64 / 8.0;
        let p0 = Vector3::new(d(&mut r), d(&mut r), d(&mut r));
        let v = Vector3::new(d(&mut r), d(&mut r), d(&mut r)) / 16.0;
        let pos: Vec<_> = (0..30).map(|i| p0 + v * i as f64).collect();
        smooth_max = smooth_max.max(smoothness_loss(&pos, 1.0).unwrap());
    }
    notes.push(format!("smoothness {smooth_max:e}"));

    let pass = worst < 1e-9 && e_ate < 1e-9 && e_ate_s < 1e-9 && e_rpe < 1e-9 && e_brute < 1e-9 && smooth_max == 0.0;
    outcome(pass, format!("{} (tol 1e-9, smoothness exactly 0)", notes.join(", ")))
}

fn chaining_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut r = rng(40_000 + seed);
        let poses: Vec<Se3Pose> = (0..30)
            .map(|_| Se3Pose::from_parts(random_rotation(&mut r), Vector3::from_fn(|_, _| r.gen_range(-3.0..3.0))))
            .collect();
        let windows = split_into_windows(&poses, 15);
        let chained = chain_windows(&windows).unwrap();
        for (c, p) in chained.poses().iter().zip(&poses) {
            let (a, d) = poses[0].compose(c).distance(p);
            worst = worst.max(a).max(d);
        }
    }
    outcome(worst < 1e-9, format!("20 random 30-pose trajectories, b=15: worst error {worst:.2e} (tol 1e-9)"))
}

fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(50_000);
    let mut notes = vec![];

    // TUM: 9 significant digits
    let stamps: Vec<f64> = (0..50).map(|i| 1.7e9 + i as f64 / 30.0).collect();
    let poses: Vec<Se3Pose> = (0..50)
        .map(|_| Se3Pose::from_parts(random_rotation(&mut r), Vector3::from_fn(|_, _| r.gen_range(-10.0..10.0))))
        .collect();
    let t = Trajectory::new(stamps, poses).unwrap();
    let path = dir.path().join("t.txt");
    write_tum(&path, &t).unwrap();
    let back = read_tum(&path).unwrap();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    let mut tum_err = 0.0f64;
    for ((sa, pa), (sb, pb)) in t.iter().zip(back.iter()) {
        tum_err = tum_err.max(rel(sa, sb));
        for i in 0..3 {
            tum_err = tum_err.max(rel(pa.translation()[i], pb.translation()[i]).min((pa.translation()[i] - pb.translation()[i]).abs()));
        }
        tum_err = tum_err.max(pa.rotation().angle_to(pb.rotation()));
    }
    let tum_ok = back.len() == t.len() && tum_err < 5e-9;
    notes.push(format!("TUM max rel err {tum_err:.1e}"));

    // tensors: bit-exact, compared by hash
    let n = 512 * 384 * 16;
    let f32s: Vec<f32> = (0..n).map(|_| r.gen::<f32>()).collect();
    let f64s: Vec<f64> = (0..1000).map(|_| r.gen::<f64>()).collect();
    let u8s: Vec<u8> = (0..1000).map(|_| r.gen::<u8>()).collect();
    let mut npy_ok = true;
    for (name, arr) in [
        ("a.npy", NpyArray::new(vec![384, 512, 16], NpyData::F32(f32s)).unwrap()),
        ("b.npy", NpyArray::new(vec![10, 100], NpyData::F64(f64s)).unwrap()),
        ("c.npy", NpyArray::new(vec![1000], NpyData::U8(u8s)).unwrap()),
    ] {
        let p = dir.path().join(name);
        write_npy(&p, &arr).unwrap();
        let back = read_npy(&p).unwrap();
        let hash = |a: &NpyArray| {
            let mut h = Sha256::new();
            match &a.data {
                NpyData::F32(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
                NpyData::F64(v) => v.iter().for_each(|x| h.update(x.to_le_bytes())),
                NpyData::U8(v) => h.update(v),
            }
            h.finalize()
        };
        npy_ok &= back.shape == arr.shape && hash(&back) == hash(&arr);
        // rewriting the read array reproduces the file byte for byte
        let p2 = dir.path().join(format!("re_{name}"));
        write_npy(&p2, &back).unwrap();
        npy_ok &= std::fs::read(&p).unwrap() == std::fs::read(&p2).unwrap();
    }
    notes.push(format!("NPY f32/f64/u8 hash-identical: {npy_ok}"));

    let d = RunConfig::default();
    let defaults_ok = d.window_size == 15 && d.lambda_s == 0.2 && d.f == 16;
    notes.push(format!("defaults b={} lambda_s={} f={}", d.window_size, d.lambda_s, d.f));
    outcome(tum_ok && npy_ok && defaults_ok, notes.join(", "))
}

fn main() {
    // `cargo test -- <filter>` passes arguments through; honor a single
    // substring filter and ignore libtest flags.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("blending oracle", blending_oracle),
        ("pose recovery", || recovery(3, false, 60_000)),
        ("feature-space parity", || recovery(16, true, 70_000)),
        ("end-to-end", end_to_end),
        ("metric oracles", metric_oracles),
        ("chaining identity", chaining_identity),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
