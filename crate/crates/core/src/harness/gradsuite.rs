//! Finite-difference audit of every differentiable piece, in 64-bit.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::TopDownHead;
use crate::autodiff::{grad_check, GradCheckConfig, Graph, ParamId, ParamStore, SampleMap, Value};
use crate::error::{Error, Result};
use crate::geometry::{BevGridSpec, CameraModel};
use crate::loss::{self, LossWeights, Visibility};
use crate::temporal::{self, MotionDelta};
use crate::tensor::Tensor;
use crate::view::{self, CycleOptions, Init, ViewConfig, ViewTransformer};

pub const MODULES: [&str; 5] = ["ops", "loss", "view", "temporal", "head"];
pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub module: &'static str,
    pub name: String,
    pub max_rel_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Case = (String, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Value]) -> Result<Value>>);

fn rand(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.5..2.0))
}

/// Fixed random weighting so a tensor output becomes one scalar that every
/// entry influences.
fn project(g: &mut Graph<f64>, v: Value) -> Result<Value> {
    if g.data(v).numel() == 1 {
        return Ok(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = g.constant(rand(&mut rng, g.shape(v)));
    let p = g.mul(v, w)?;
    Ok(g.sum_all(p))
}

fn case(
    name: impl Into<String>,
    params: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Value]) -> Result<Value> + 'static,
) -> Case {
    (name.into(), params, Box::new(f))
}

fn op_cases() -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a = rand(&mut r, &[3, 4]);
    let b = positive(&mut r, &[3, 4]);
    let x = rand(&mut r, &[2, 3, 4]);
    let y = rand(&mut r, &[2, 2, 4]);
    let m = rand(&mut r, &[4, 5]);
    let mb = rand(&mut r, &[2, 4, 5]);
    let mt = rand(&mut r, &[2, 5, 4]);
    let row = rand(&mut r, &[4]);
    let plane = rand(&mut r, &[3, 4]);
    let img = rand(&mut r, &[3, 5, 6]);
    let w1 = rand(&mut r, &[4, 3]);
    let bias = rand(&mut r, &[4]);
    let w3 = rand(&mut r, &[4, 3, 3, 3]);
    let grid = rand(&mut r, &[2, 4, 5]);
    let coords: Vec<(f64, f64)> = (0..12)
        .map(|_| (r.random_range(-0.7..3.7), r.random_range(-0.7..4.7)))
        .collect();
    let map = Arc::new(SampleMap::from_coords(4, 5, 3, 4, move |i, j| Some(coords[i * 4 + j])));
    let table = rand(&mut r, &[6, 3]);
    let ab = || vec![a.clone(), b.clone()];
    vec![
        case("matmul", vec![x.clone(), m.clone()], |g, v| g.matmul(v[0], v[1])),
        case("matmul batched", vec![x.clone(), mb], |g, v| g.matmul(v[0], v[1])),
        case("matmul_t", vec![x.clone(), mt], |g, v| g.matmul_t(v[0], v[1])),
        case("add", ab(), |g, v| g.add(v[0], v[1])),
        case("sub", ab(), |g, v| g.sub(v[0], v[1])),
        case("mul", ab(), |g, v| g.mul(v[0], v[1])),
        case("div", ab(), |g, v| g.div(v[0], v[1])),
        case("affine", vec![a.clone()], |g, v| Ok(g.affine(v[0], -2.5, 0.75))),
        case("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], 3.0))),
        case("add_bcast", vec![x.clone(), row.clone()], |g, v| g.add_bcast(v[0], v[1])),
        case("mul_bcast", vec![x.clone(), plane], |g, v| g.mul_bcast(v[0], v[1])),
        case("softmax", vec![x.clone()], |g, v| g.softmax(v[0], 2)),
        case("layer_norm", vec![x.clone()], |g, v| g.layer_norm(v[0], 2)),
        case("relu", vec![a.clone()], |g, v| Ok(g.relu(v[0]))),
        case("sigmoid", vec![a.clone()], |g, v| Ok(g.sigmoid(v[0]))),
        case("ln", vec![b.clone()], |g, v| Ok(g.ln(v[0]))),
        case("clamp", vec![a.clone()], |g, v| Ok(g.clamp(v[0], -0.5, 0.5))),
        case("concat", vec![x.clone(), y], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("reshape", vec![x.clone()], |g, v| g.reshape(v[0], &[6, 4])),
        case("permute", vec![x.clone()], |g, v| g.permute(v[0], &[2, 0, 1])),
        case("transpose", vec![x.clone()], |g, v| g.transpose(v[0], 0, 2)),
        case("slice", vec![x.clone()], |g, v| g.slice(v[0], 1, 1, 3)),
        case("sum", vec![x.clone()], |g, v| g.sum(v[0], 1)),
        case("mean", vec![x.clone()], |g, v| g.mean(v[0], 0)),
        case("sum_all", vec![x.clone()], |g, v| Ok(g.sum_all(v[0]))),
        case("mean_all", vec![x.clone()], |g, v| Ok(g.mean_all(v[0]))),
        case("conv1x1", vec![img.clone(), w1, bias.clone()], |g, v| g.conv1x1(v[0], v[1], Some(v[2]))),
        case("conv2d", vec![img.clone(), w3, bias], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        case("upsample", vec![img], |g, v| g.upsample(v[0], 2)),
        case("bilinear_sample", vec![grid], move |g, v| g.bilinear_sample(v[0], map.clone())),
        case("embedding_lookup", vec![table], |g, v| g.embedding_lookup(v[0], &[0, 5, 5, 2])),
    ]
}

fn loss_cases() -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let logits = Tensor::from_fn(&[3, 4, 5], |_| r.random_range(-3.0..3.0));
    let y = Tensor::from_fn(&[3, 4, 5], |_| if r.random_bool(0.4) { 1.0 } else { 0.0 });
    let vis = Visibility::new(4, 5, (0..20).map(|i| i % 3 != 0).collect()).expect("mask");
    let w = LossWeights::new(0.001, 0.01, vec![1.0, 2.0, 0.5]).expect("weights");
    let y2 = y.clone();
    vec![
        case("total_loss wrt logits", vec![logits.clone()], move |g, v| {
            let p = g.sigmoid(v[0]);
            let t = g.constant(y.clone());
            Ok(loss::total_loss(g, p, t, &vis, &w)?.total)
        }),
        case("iou_loss_oa wrt probabilities", vec![logits.map(|l| 1.0 / (1.0 + (-l).exp()))], move |g, v| {
            let t = g.constant(y2.clone());
            loss::iou_loss_oa(g, v[0], t)
        }),
    ]
}

/// A view transformer small enough to check entry by entry.
fn tiny_view() -> Result<(ViewTransformer, ParamStore<f64>, Tensor<f64>)> {
    let cfg = ViewConfig {
        channels: 4,
        heads: 2,
        layers: 1,
        levels: 2,
        stem_channels: 3,
        stage_channels: 4,
    };
    let cam = CameraModel::new(16.0, 16.0, 32, 32)?;
    let grid = BevGridSpec::new(6, 4, 0.5, 1.0)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vt = ViewTransformer::init(cfg, cam, grid, &mut store, &mut rng)?;
    let image = Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(0.0..1.0));
    Ok((vt, store, image))
}

fn view_cases() -> Result<Vec<Case>> {
    let (vt, store, image) = tiny_view()?;
    let level = &vt.levels[0];
    let picks: [(&str, ParamId); 2] = [
        ("cycle_view_transform wrt pv_to_bev W_Q", level.pv_to_bev.layers[0].wq),
        ("cycle_view_transform wrt bev_to_pv W_Q", level.bev_to_pv.layers[0].wq),
    ];
    let vt = Arc::new(vt);
    let store = Arc::new(store);
    Ok(picks
        .into_iter()
        .map(|(name, id)| {
            let (vt, store, image) = (vt.clone(), store.clone(), image.clone());
            case(name, vec![store.get(id).clone()], move |g, v| {
                g.bind_param(id, v[0]);
                let x = g.constant(image.clone());
                let pyr = view::extract_pyramid(g, &store, &vt.pyramid, x)?;
                let b = view::cycle_view_transform(g, &store, &vt, &pyr, CycleOptions::default())?;
                project(g, b)
            })
        })
        .collect())
}

fn temporal_cases() -> Result<Vec<Case>> {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let c = 3;
    let aligned = [rand(&mut r, &[c, 4, 5]), rand(&mut r, &[c, 4, 5])];
    let reference = rand(&mut r, &[c, 4, 5]);
    let phi_w = rand(&mut r, &[c, 3 * c]);
    let phi_b = rand(&mut r, &[c]);
    let spec = BevGridSpec::new(4, 5, 0.5, 1.0)?;
    let delta = MotionDelta { r: 0.2, m: (0.3, -0.4) };
    let prev = rand(&mut r, &[c, 4, 5]);
    let ref2 = reference.clone();
    Ok(vec![
        case("aggregate wrt phi", vec![phi_w, phi_b], move |g, v| {
            let a: Vec<Value> = aligned.iter().map(|t| g.constant(t.clone())).collect();
            let rv = g.constant(reference.clone());
            temporal::aggregate(g, &a, rv, v[0], Some(v[1]))
        }),
        case("align_history wrt history grid", vec![prev], move |g, v| {
            let rv = g.constant(ref2.clone());
            temporal::align_history(g, v[0], &delta, true, rv, &spec)
        }),
    ])
}

fn head_cases() -> Result<Vec<Case>> {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let head = TopDownHead::init(&mut Init { store: &mut store, rng: &mut rng }, 4, 2, 3)?;
    let x = Tensor::from_fn(&[4, 3, 2], |_| rng.random_range(-1.0..1.0));
    let ids: Vec<ParamId> = store.ids().collect();
    // generic point: zero biases put residual sums exactly on the relu kink
    let mut leaves: Vec<Tensor<f64>> = ids.iter().map(|&i| rand(&mut rng, store.get(i).shape())).collect();
    leaves.push(x);
    Ok(vec![case("top-down head", leaves, move |g, v| {
        for (k, &id) in ids.iter().enumerate() {
            g.bind_param(id, v[k]);
        }
        head.forward(g, &store, v[ids.len()])
    })])
}

/// Run one module's checks, or all of them.
pub fn run(module: Option<&str>) -> Result<Vec<SuiteEntry>> {
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(Error::Config(format!("unknown module {m:?}; expected one of {MODULES:?}")));
        }
    }
    let config = GradCheckConfig {
        step: STEP,
        tolerance: TOLERANCE,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    for &m in MODULES.iter().filter(|&&m| module.is_none_or(|x| x == m)) {
        let cases = match m {
            "ops" => op_cases(),
            "loss" => loss_cases(),
            "view" => view_cases()?,
            "temporal" => temporal_cases()?,
            _ => head_cases()?,
        };
        for (name, params, f) in cases {
            let report = grad_check(|g: &mut Graph<f64>, v: &[Value]| project_out(g, &f, v), &params, &config)?;
            out.push(SuiteEntry {
                module: m,
                name,
                max_rel_error: report.max_rel_error(),
            });
        }
    }
    Ok(out)
}

fn project_out(
    g: &mut Graph<f64>,
    f: &dyn Fn(&mut Graph<f64>, &[Value]) -> Result<Value>,
    v: &[Value],
) -> Result<Value> {
    let out = f(g, v)?;
    project(g, out)
}
