//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! line whatever happens to the others; the exit code is nonzero if any fails.
//!
//! `cargo test -p cyclebev --test acceptance -- 3 7` runs a subset.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cyclebev::autodiff::{Gradients, Graph, ParamStore};
use cyclebev::geometry::{self, BevGridSpec, CameraModel};
use cyclebev::harness::model::BevModel;
use cyclebev::harness::{checkpoint, eval, gradsuite, train, ExperimentConfig, Trainer};
use cyclebev::loss::{self, Confusion, Region};
use cyclebev::parallel::{self, Parallelism};
use cyclebev::synth::{self, MotionModel, Sequence};
use cyclebev::temporal::{self, EgoPose, MotionDelta};
use cyclebev::view::{self, CycleOptions};
use cyclebev::{Result, Tensor};

// Tolerances and budgets.
const GRAD_SUITE_BUDGET: Duration = Duration::from_secs(120);
const IOU_FIXED_TOL: f64 = 1e-12;
const IOU_ORACLE_TOL: f64 = 1e-9;
const RESAMPLE_TOL: f64 = 1e-6;
const GT_WARP_MIN_IOU: f64 = 0.95;
const SHARED_GRAD_SUM_TOL: f64 = 1e-9;
const OVERFIT_TARGET: f64 = 0.90;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_MIN_SEEDS: usize = 8;
const OVERFIT_BUDGET: Duration = Duration::from_secs(30 * 60);
const RESUME_LOSS_TOL: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

// 1 -------------------------------------------------------------------------

fn gradient_suite() -> Result<Outcome> {
    let t = Instant::now();
    let entries = gradsuite::run(None)?;
    let elapsed = t.elapsed();
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| format!("{}/{}", e.module, e.name))
        .collect();
    let has = |needle: &str| entries.iter().any(|e| e.name.contains(needle));
    let covered = gradsuite::MODULES.iter().all(|m| entries.iter().any(|e| e.module == *m))
        && has("total_loss wrt logits")
        && has("pv_to_bev W_Q")
        && has("bev_to_pv W_Q")
        && has("aggregate wrt phi");
    outcome(
        failed.is_empty() && covered && elapsed < GRAD_SUITE_BUDGET,
        format!(
            "{} checks, worst rel error {worst:.2e} (< {:e}), {:.1}s (< {}s){}{}",
            entries.len(),
            gradsuite::TOLERANCE,
            elapsed.as_secs_f64(),
            GRAD_SUITE_BUDGET.as_secs(),
            if covered { "" } else { ", coverage incomplete" },
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn iou_loss(p: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let (pv, yv) = (g.constant(p.clone()), g.constant(y.clone()));
    let l = loss::iou_loss_oa(&mut g, pv, yv)?;
    Ok(g.data(l).data()[0])
}

fn iou_loss_brute(p: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let [n, h, w] = [p.shape()[0], p.shape()[1], p.shape()[2]];
    let mut acc = 0.0;
    for k in 0..n {
        let (mut inter, mut union) = (0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                let (a, b) = (p.at(&[k, r, c]), y.at(&[k, r, c]));
                inter += a * b;
                union += a + b - a * b;
            }
        }
        acc += (inter + 1.0) / (union + 1.0);
    }
    1.0 - acc / n as f64
}

fn iou_loss_exactness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = Tensor::from_fn(&[3, 5, 4], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    let same = iou_loss(&y, &y)?;
    let zeros = iou_loss(&Tensor::zeros(&[3, 5, 4]), &Tensor::zeros(&[3, 5, 4]))?;
    let disjoint = iou_loss(&Tensor::full(&[1, 2, 2], 1.0), &Tensor::zeros(&[1, 2, 2]))?;
    let fixed_ok =
        same.abs() < IOU_FIXED_TOL && zeros.abs() < IOU_FIXED_TOL && (disjoint - 0.8).abs() < IOU_FIXED_TOL;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let shape = [rng.random_range(1..5), rng.random_range(1..9), rng.random_range(1..9)];
        let p = rand_tensor(&mut rng, &shape, 0.0, 1.0);
        let y = Tensor::from_fn(&shape, |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
        worst = worst.max((iou_loss(&p, &y)? - iou_loss_brute(&p, &y)).abs());
    }
    outcome(
        fixed_ok && worst < IOU_ORACLE_TOL,
        format!("p=y {same:.1e}, zeros {zeros:.1e}, ones/zeros {disjoint:.15}; 100 random instances max |Δ| {worst:.1e} (< {IOU_ORACLE_TOL:e})"),
    )
}

// 3 -------------------------------------------------------------------------

/// Per-cell recomputation: ray column `u = (f·x/z + u0)/d_i`, linear blend of
/// the two neighbouring polar columns, zero outside the level's columns.
fn resample_oracle(polar: &Tensor<f64>, cam: &CameraModel, spec: &BevGridSpec, level: &geometry::LevelSpec) -> Tensor<f64> {
    let [ch, rows, width] = [polar.shape()[0], polar.shape()[1], polar.shape()[2]];
    let mut out = Tensor::zeros(&[ch, rows, spec.lateral_cells]);
    for r in 0..rows {
        let z = spec.z_max() - (level.rows.start + r) as f64 * spec.cell_m - spec.cell_m / 2.0;
        for c in 0..spec.lateral_cells {
            let x = -(spec.lateral_cells as f64) * spec.cell_m / 2.0 + (c as f64 + 0.5) * spec.cell_m;
            let u = (cam.f * x / z + cam.u0) / level.factor as f64;
            if z <= 0.0 || u < 0.0 || u > (width - 1) as f64 {
                continue;
            }
            let j = (u.floor() as usize).min(width - 1);
            let t = u - j as f64;
            for k in 0..ch {
                let right = if j + 1 < width { polar.at(&[k, r, j + 1]) } else { 0.0 };
                out.set(&[k, r, c], (1.0 - t) * polar.at(&[k, r, j]) + t * right);
            }
        }
    }
    out
}

fn resampling_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut constant_ok, mut in_view_cells) = (0.0f64, true, 0usize);
    for _ in 0..100 {
        let cam = CameraModel::new(rng.random_range(30.0..70.0), rng.random_range(40.0..88.0), 128, 128)?;
        let spec = BevGridSpec::new(24, 20, rng.random_range(0.3..0.7), rng.random_range(0.5..3.0))?;
        for level in geometry::depth_partition(&spec, &cam, 3)? {
            let width = cam.image_w / level.factor;
            let polar = rand_tensor(&mut rng, &[2, level.depth_rows(), width], -1.0, 1.0);
            let mut g = Graph::new();
            let pv = g.constant(polar.clone());
            let out = geometry::polar_to_cartesian(&mut g, pv, &cam, &spec, &level)?;
            worst = worst.max(g.data(out).max_abs_diff(&resample_oracle(&polar, &cam, &spec, &level)));

            let k = rng.random_range(-5.0..5.0);
            let field = Tensor::full(&[1, level.depth_rows(), width], k);
            let ones = Tensor::full(&[1, level.depth_rows(), width], 1.0);
            let expect_mask = resample_oracle(&ones, &cam, &spec, &level);
            let fv = g.constant(field);
            let out = geometry::polar_to_cartesian(&mut g, fv, &cam, &spec, &level)?;
            for (i, &v) in g.data(out).data().iter().enumerate() {
                // in view ⇔ the oracle blends real columns with total weight 1
                if expect_mask.data()[i] != 0.0 {
                    in_view_cells += 1;
                    constant_ok &= v == k;
                } else {
                    constant_ok &= v == 0.0;
                }
            }
        }
    }
    outcome(
        worst < RESAMPLE_TOL && constant_ok && in_view_cells > 0,
        format!(
            "100 random desk-scale instances: max |Δ| {worst:.1e} (< {RESAMPLE_TOL:e}); constant field exact on {in_view_cells} in-view cells: {constant_ok}"
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn align(prev: &Tensor<f64>, delta: &MotionDelta, spec: &BevGridSpec) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let p = g.constant(prev.clone());
    let v = temporal::align_history(&mut g, p, delta, true, p, spec)?;
    Ok(g.data(v).clone())
}

fn alignment_oracles() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let desk = ExperimentConfig::desk();
    let grid = desk.grid()?;

    let grid_t = rand_tensor(&mut rng, &[3, grid.depth_cells, grid.lateral_cells], -1.0, 1.0);
    let pose = EgoPose::new(3, 7, 1.3, -4.2, 0.27);
    let identity_ok = align(&grid_t, &MotionDelta::IDENTITY, &grid)? == grid_t
        && align(&grid_t, &temporal::relative_motion(&pose, &pose), &grid)? == grid_t;

    let mut quarter_ok = true;
    for n in [6usize, 7] {
        let spec = BevGridSpec::new(n, n, 0.5, -(n as f64) * 0.25)?;
        let t = rand_tensor(&mut rng, &[2, n, n], -1.0, 1.0);
        for k in 1..4 {
            let out = align(&t, &MotionDelta { r: k as f64 * std::f64::consts::FRAC_PI_2, m: (0.0, 0.0) }, &spec)?;
            for ch in 0..2 {
                for r in 0..n {
                    for c in 0..n {
                        let (mut i, mut j) = (r, c);
                        for _ in 0..k {
                            (i, j) = (j, n - 1 - i);
                        }
                        quarter_ok &= out.at(&[ch, r, c]) == t.at(&[ch, i, j]);
                    }
                }
            }
        }
    }

    // Warping last frame's ground truth into this frame reproduces this
    // frame's static classes wherever both grids have the cell.
    let synth_cfg = desk.synth()?;
    let spec = synth_cfg.output;
    let statics: Vec<usize> = (0..desk.classes).filter(|&k| synth::ClassKind::ALL[k].is_static()).collect();
    // Scored like every other IoU here: one confusion over the whole set.
    // The per-trajectory minimum is reported too; thin crossing stripes that
    // only just enter the grid alias at cell resolution and drag it down.
    let mut pooled = Confusion::new(desk.classes);
    let mut per_trajectory_min = f64::INFINITY;
    for seed in 0..20u64 {
        let scene = synth::generate_scene(seed, &synth_cfg.world)?;
        let poses = synth::simulate_trajectory(&scene, 6, &synth_cfg.trajectory, seed);
        let mut conf = Confusion::new(desk.classes);
        for w in poses.windows(2) {
            let prev = synth::make_gt(&scene, &w[0], &spec).0.cast::<f64>();
            let cur = synth::make_gt(&scene, &w[1], &spec).0.cast::<f64>();
            let delta = temporal::relative_motion(&w[0], &w[1]);
            let warped = align(&prev, &delta, &spec)?;
            let inside: Vec<bool> = (0..spec.depth_cells * spec.lateral_cells)
                .map(|i| {
                    let (r, c) = (i / spec.lateral_cells, i % spec.lateral_cells);
                    let p = delta.inverse_apply((spec.col_x(c), spec.row_z(r)));
                    let (ri, ci) = spec.metric_to_index(p.0, p.1);
                    (0.0..=(spec.depth_cells - 1) as f64).contains(&ri) && (0.0..=(spec.lateral_cells - 1) as f64).contains(&ci)
                })
                .collect();
            let mask = loss::Visibility::new(spec.depth_cells, spec.lateral_cells, inside)?;
            conf.add(&warped, &cur, 0.5, Region::Visible, Some(&mask))?;
        }
        let iou = conf.iou();
        for &k in &statics {
            per_trajectory_min = per_trajectory_min.min(iou[k]);
        }
        pooled.merge(&conf);
    }
    let iou = pooled.iou();
    let worst = statics.iter().map(|&k| iou[k]).fold(f64::INFINITY, f64::min);
    let per_class: Vec<String> = statics
        .iter()
        .map(|&k| format!("{} {:.4}", synth::ClassKind::ALL[k].name(), iou[k]))
        .collect();
    outcome(
        identity_ok && quarter_ok && worst >= GT_WARP_MIN_IOU,
        format!(
            "identity exact: {identity_ok}; quarter turns exact: {quarter_ok}; GT warp over 20 trajectories: {} (≥ {GT_WARP_MIN_IOU}), per-trajectory min {per_trajectory_min:.3}",
            per_class.join(", ")
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn frame_at(data: &[Sequence], cursor: usize) -> &synth::FrameSample {
    data.iter().flat_map(|s| &s.frames).nth(cursor).expect("cursor within data")
}

fn grads_equal(store: &ParamStore<f32>, a: &Gradients<f32>, b: &Gradients<f32>) -> bool {
    store.ids().all(|id| match (a.get(id), b.get(id)) {
        (Some(x), Some(y)) => x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()),
        (None, None) => true,
        _ => false,
    })
}

fn detachment_contract() -> Result<Outcome> {
    let cfg = ExperimentConfig {
        n_his: 2,
        ..ExperimentConfig::desk()
    };
    let data = train::training_data(&cfg)?;
    let mut trainer = Trainer::new(&cfg, &data)?;
    trainer.step()?;
    let store = &trainer.state.store;
    let model = &trainer.model;
    let stream = &trainer.state.streams[0];
    let frame = frame_at(&data, stream.cursor);
    let grid = cfg.grid()?;

    // The model's own forward pass.
    let mut g = Graph::new();
    let image = g.constant(frame.image.clone());
    let out = model.forward(&mut g, store, image, &stream.bank, &frame.pose, CycleOptions::default())?;
    let y = g.constant(frame.gt.clone());
    let terms = loss::total_loss(&mut g, out.probs, y, &frame.visibility, &trainer.weights)?;
    g.backward(terms.total)?;
    let reference = g.param_grads(store);

    // The same pass spelled out, keeping hold of the bank's values.
    let mut g = Graph::new();
    let image = g.constant(frame.image.clone());
    let features = model.features(&mut g, store, image, CycleOptions::default())?;
    let entries = stream.bank.read_into(&mut g);
    let skip = entries.len().saturating_sub(model.n_his);
    let mut aligned = Vec::new();
    for &(v, p) in &entries[skip..] {
        let d = temporal::relative_motion(&p, &frame.pose);
        aligned.push(temporal::align_history(&mut g, v, &d, p.scene_id == frame.pose.scene_id, features, &grid)?);
    }
    let history = temporal::pad_history(aligned, features, model.n_his);
    let (w, b) = (g.param(store, model.phi.0), g.param(store, model.phi.1));
    let fused = temporal::aggregate(&mut g, &history, features, w, Some(b))?;
    let logits = model.head.forward(&mut g, store, fused)?;
    let probs = g.sigmoid(logits);
    let y = g.constant(frame.gt.clone());
    let terms = loss::total_loss(&mut g, probs, y, &frame.visibility, &trainer.weights)?;
    g.backward(terms.total)?;
    let bank_norm: f64 = entries
        .iter()
        .map(|&(v, _)| g.grad(v).map_or(0.0, |t| t.data().iter().map(|x| (*x as f64).powi(2)).sum::<f64>()))
        .sum::<f64>()
        .sqrt();
    let bank_inert = entries.iter().all(|&(v, _)| !g.requires_grad(v));
    let mirrored = grads_equal(store, &reference, &g.param_grads(store));

    let (batch, _) = trainer.batch_gradients()?;
    let dead: Vec<&str> = store
        .iter()
        .filter(|(id, _, _)| !(batch.norm(*id) > 0.0))
        .map(|(_, n, _)| n)
        .collect();
    outcome(
        !entries.is_empty() && bank_norm == 0.0 && bank_inert && mirrored && dead.is_empty(),
        format!(
            "{} bank entries, gradient norm through them {bank_norm}; spelled-out pass matches the model bit for bit: {mirrored}; {}/{} parameters with nonzero batch gradient{}",
            entries.len(),
            store.len() - dead.len(),
            store.len(),
            if dead.is_empty() { String::new() } else { format!(", zero: {dead:?}") }
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn column_locality() -> Result<Outcome> {
    let cfg = ExperimentConfig::desk();
    let mut store = ParamStore::<f64>::new();
    let model = BevModel::init(&cfg, &mut store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut ok) = (0, true);
    let mut report = Vec::new();
    for level in &model.view.levels {
        let f = rand_tensor(&mut rng, &[cfg.channels, level.height, level.width], -1.0, 1.0);
        let run = |f: &Tensor<f64>| -> Result<Tensor<f64>> {
            let mut g = Graph::new();
            let v = g.constant(f.clone());
            let out = view::cycle_calibrate(&mut g, &store, level, v, CycleOptions::default())?;
            Ok(g.data(out.calibrated).clone())
        };
        let base = run(&f)?;
        let mut leak: f64 = 0.0;
        for col in 0..level.width {
            let mut p = f.clone();
            for c in 0..cfg.channels {
                for h in 0..level.height {
                    p.set(&[c, h, col], rng.random_range(-1.0..1.0));
                }
            }
            let out = run(&p)?;
            let (mut inside, mut outside) = (0.0f64, 0.0f64);
            for c in 0..cfg.channels {
                for z in 0..level.spec.depth_rows() {
                    for w in 0..level.width {
                        let d = (out.at(&[c, z, w]) - base.at(&[c, z, w])).abs();
                        if w == col {
                            inside = inside.max(d);
                        } else {
                            outside = outside.max(d);
                        }
                    }
                }
            }
            ok &= outside == 0.0 && inside > 0.0;
            leak = leak.max(outside);
            checked += 1;
        }
        report.push(format!("level {} ({} columns) max change elsewhere {leak}", level.spec.level, level.width));
    }
    outcome(ok, format!("{checked} columns perturbed; {}", report.join("; ")))
}

// 7 -------------------------------------------------------------------------

fn weight_sharing() -> Result<Outcome> {
    let cfg = ExperimentConfig::desk();
    let mut store = ParamStore::<f64>::new();
    let model = BevModel::init(&cfg, &mut store)?;
    let level = &model.view.levels[0];
    let wq = level.pv_to_bev.layers[0].wq;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = rand_tensor(&mut rng, &[cfg.channels, level.height, level.width], -1.0, 1.0);
    let proj = rand_tensor(&mut rng, &[cfg.channels, level.spec.depth_rows(), level.width], -1.0, 1.0);

    // One decoder's worth of parameters per level, whichever pass uses it.
    let prefix = format!("level{}.pv_to_bev.", level.spec.level);
    let decoder_params: Vec<&str> = store.iter().map(|(_, n, _)| n).filter(|n| n.starts_with(&prefix)).collect();
    let only_one_set = store
        .iter()
        .filter(|(_, n, _)| n.contains("pv_to_bev") && n.starts_with(&format!("level{}.", level.spec.level)))
        .count()
        == decoder_params.len();

    let run = |store: &ParamStore<f64>, opts: CycleOptions| -> Result<(Tensor<f64>, Tensor<f64>, Option<Tensor<f64>>)> {
        let mut g = Graph::new();
        let x = g.constant(f.clone());
        let out = view::cycle_calibrate(&mut g, store, level, x, opts)?;
        let second = g.sub(out.calibrated, out.initial)?;
        let w = g.constant(proj.clone());
        let s = g.mul(out.calibrated, w)?;
        let s = g.sum_all(s);
        g.backward(s)?;
        let grad = g.param_grads(store).get(wq).cloned();
        Ok((g.data(out.initial).clone(), g.data(second).clone(), grad))
    };
    let identical_values = {
        let mut g = Graph::new();
        let a = g.param(&store, wq);
        let b = g.param(&store, wq);
        a == b
    };

    let (first0, second0, full) = run(&store, CycleOptions::default())?;
    let mut moved = store.clone();
    *moved.get_mut(wq) = moved.get(wq).map(|v| v + 0.05);
    let (first1, second1, _) = run(&moved, CycleOptions::default())?;
    let moves_both = first1.max_abs_diff(&first0) > 0.0 && second1.max_abs_diff(&second0) > 0.0;

    let only_second = run(&store, CycleOptions { freeze_first_pass: true, ..Default::default() })?.2;
    let only_first = run(&store, CycleOptions { freeze_second_pass: true, ..Default::default() })?.2;
    let (Some(full), Some(a), Some(b)) = (full, only_first, only_second) else {
        return outcome(false, "a pass left the shared weights without gradient");
    };
    let both_matter = full.max_abs_diff(&a) > 0.0 && full.max_abs_diff(&b) > 0.0;
    let sum = Tensor::from_fn(full.shape(), |i| a.data()[i] + b.data()[i]);
    let scale = full.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let split = sum.max_abs_diff(&full) / scale;
    outcome(
        only_one_set && identical_values && moves_both && both_matter && split < SHARED_GRAD_SUM_TOL,
        format!(
            "{} shared decoder tensors, one binding per graph: {identical_values}; update moves both passes: {moves_both}; \
             detaching either pass changes the gradient: {both_matter}; per-pass gradients sum to the full one (rel {split:.1e})",
            decoder_params.len()
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn overfit() -> Result<Outcome> {
    let t = Instant::now();
    let base = ExperimentConfig {
        steps: OVERFIT_STEPS,
        target_miou: Some(OVERFIT_TARGET),
        eval_every: 100,
        log_every: 0,
        parallel: false,
        ..ExperimentConfig::desk()
    };
    let data = train::training_data(&base)?;
    let frames: usize = data.iter().map(|s| s.frames.len()).sum();
    let seeds: Vec<u64> = (0..10).collect();
    let runs = parallel::try_map(Parallelism::Rayon, &seeds, |&seed| {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let mut trainer = Trainer::new(&cfg, &data)?;
        let summary = trainer.run(|_, _| Ok(()))?;
        let last = match summary.reached {
            Some((_, m)) => m,
            None => trainer.evaluate_train()?.report.miou(),
        };
        Ok((summary.reached.map(|(s, _)| s), last))
    })?;
    let elapsed = t.elapsed();
    let hits = runs.iter().filter(|r| r.0.is_some()).count();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|(s, m)| match s {
            Some(s) => format!("{m:.3}@{s}"),
            None => format!("{m:.3}"),
        })
        .collect();
    outcome(
        frames == 10 && hits >= OVERFIT_MIN_SEEDS && elapsed < OVERFIT_BUDGET,
        format!(
            "{hits}/10 seeds reach train mIoU ≥ {OVERFIT_TARGET} on {frames} frames within {OVERFIT_STEPS} steps (need {OVERFIT_MIN_SEEDS}); [{}]; {:.0}s",
            per_seed.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

// 9 -------------------------------------------------------------------------

/// Parked agents and busier streets, so history can see road that is hidden now.
fn temporal_config() -> ExperimentConfig {
    ExperimentConfig {
        static_agents: true,
        cars: (6, 10),
        data_seeds: 0..8,
        eval_seeds: 1000..1004,
        motion: MotionModel::Wander,
        steps: 1000,
        log_every: 0,
        ..ExperimentConfig::desk()
    }
}

fn temporal_direction() -> Result<Outcome> {
    let base = temporal_config();
    let train_data = train::training_data(&base)?;
    let eval_data = train::evaluation_data(&base)?;
    let score = |n_his: usize, seed: u64| -> Result<f64> {
        let cfg = ExperimentConfig { n_his, seed, ..base.clone() };
        let mut trainer = Trainer::new(&cfg, &train_data)?;
        trainer.run(|_, _| Ok(()))?;
        let out = eval::evaluate(&trainer.model, &trainer.state.store, &eval_data, cfg.parallelism())?;
        Ok(out.occluded.layout_miou())
    };
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        with.push(score(2, seed)?);
        without.push(score(0, seed)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        a >= b,
        format!(
            "occluded static-layout mIoU, mean over 5 seeds: n_his=2 {a:.4} [{}] vs n_his=0 {b:.4} [{}]",
            fmt(&with),
            fmt(&without)
        ),
    )
}

// 10 ------------------------------------------------------------------------

fn metric_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut exact = true;
    for _ in 0..100 {
        let shape = [rng.random_range(1..5), rng.random_range(1..12), rng.random_range(1..12)];
        let pred = Tensor::from_fn(&shape, |_| if rng.random_bool(0.5) { 1.0f64 } else { 0.0 });
        let truth = Tensor::from_fn(&shape, |_| if rng.random_bool(0.3) { 1.0f64 } else { 0.0 });
        let mut ious = Vec::new();
        for k in 0..shape[0] {
            let (mut i, mut u) = (0u64, 0u64);
            for r in 0..shape[1] {
                for c in 0..shape[2] {
                    let (a, b) = (pred.at(&[k, r, c]) == 1.0, truth.at(&[k, r, c]) == 1.0);
                    i += (a && b) as u64;
                    u += (a || b) as u64;
                }
            }
            ious.push(if u == 0 { 1.0 } else { i as f64 / u as f64 });
        }
        let m = ious.iter().sum::<f64>() / ious.len() as f64;
        exact &= loss::iou_metric(&pred, &truth, 0.5)? == ious && loss::miou(&pred, &truth, 0.5)? == m;
    }

    let cfg = ExperimentConfig { frames: 2, ..ExperimentConfig::desk() };
    let seqs = synth::generate_dataset(0..1, &cfg.synth()?, Parallelism::Sequential)?;
    let (h, w) = loss::PROTOCOL_SIZE;
    let resized = loss::resize_nearest(&seqs[0].frames[0].gt, h, w)?;
    let all_on: Vec<Vec<Tensor<f32>>> =
        seqs.iter().map(|s| s.frames.iter().map(|f| Tensor::full(f.gt.shape(), 1.0)).collect()).collect();
    let out = eval::score(&all_on, &seqs, true)?;
    let cells = (h * w * seqs[0].frames.len()) as u64;
    let protocol_ok = resized.shape() == [cfg.classes, h, w] && out.confusion[0].union.iter().all(|&u| u == cells);
    outcome(
        exact && protocol_ok,
        format!("100 random binary instances match brute-force counting exactly: {exact}; protocol maps {h}×{w}: {protocol_ok}"),
    )
}

// 11 ------------------------------------------------------------------------

fn persistence() -> Result<Outcome> {
    const K: usize = 12;
    let cfg = ExperimentConfig { log_every: 0, ..ExperimentConfig::desk() };
    let data = train::training_data(&cfg)?;
    let run = |steps: usize| -> Result<(Trainer<'_>, Vec<String>)> {
        let mut t = Trainer::new(&cfg, &data)?;
        let logs = (0..steps).map(|_| t.step().map(|l| l.to_line())).collect::<Result<_>>()?;
        Ok((t, logs))
    };
    let (mut a, logs_a) = run(K)?;
    let (b, logs_b) = run(K)?;
    let bytes_a = checkpoint::encode(&a.state);
    let identical = bytes_a == checkpoint::encode(&b.state) && logs_a == logs_b;

    let dir = std::env::temp_dir().join(format!("cyclebev-acceptance-{}", std::process::id()));
    let path = dir.join("k.ckpt");
    checkpoint::save(&path, &b.state)?;
    drop(b);
    let state = checkpoint::load(&path)?;
    let round_trip = state == a.state;
    let mut resumed = Trainer::resume(state, &data)?;
    let next = a.step()?.total;
    let again = resumed.step()?.total;
    let _ = std::fs::remove_dir_all(&dir);
    let gap = (next - again).abs();
    outcome(
        identical && round_trip && gap < RESUME_LOSS_TOL,
        format!(
            "two runs of {K} steps give identical logs and {}-byte checkpoints: {identical}; \
             file round trip exact: {round_trip}; next-step loss {next:.8} vs resumed {again:.8} (|Δ| {gap:.1e} < {RESUME_LOSS_TOL:e})",
            bytes_a.len()
        ),
    )
}

// ---------------------------------------------------------------------------

type Check = fn() -> Result<Outcome>;

const CRITERIA: [(&str, Check); 11] = [
    ("gradient suite", gradient_suite),
    ("soft IoU loss exactness", iou_loss_exactness),
    ("polar resampling oracle", resampling_oracle),
    ("ego-motion alignment oracles", alignment_oracles),
    ("memory-bank detachment", detachment_contract),
    ("column locality", column_locality),
    ("weight sharing", weight_sharing),
    ("overfit", overfit),
    ("temporal fusion direction", temporal_direction),
    ("metric oracle and protocol size", metric_oracle),
    ("determinism and persistence", persistence),
];

fn main() -> ExitCode {
    let picks: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !picks.is_empty() && !picks.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += !pass as usize;
        println!(
            "criterion {n:>2} {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
