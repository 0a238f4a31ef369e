//! Perspective feature pyramid, column-wise transformer decoders and the
//! BEV→PV→BEV cycle that produces calibrated BEV features.
//!
//! Per-column sequences are laid out `[W, L, C]`: one batch entry per image
//! column (equivalently per polar ray), `L` positions along it. Collapsing a
//! `[C, L, W]` grid into that layout and expanding back are plain permutes.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Graph, ParamId, ParamStore, SampleMap, Value};
use crate::error::{Error, Result};
use crate::geometry::{self, BevGridSpec, CameraModel, LevelSpec};
use crate::tensor::{Scalar, Tensor};

/// Shapes of the view-transformation stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewConfig {
    /// Transformer width `C_T`.
    pub channels: usize,
    pub heads: usize,
    /// Decoder layers; 0 selects the per-column MLP.
    pub layers: usize,
    /// Pyramid levels in use, 1..=5.
    pub levels: usize,
    pub stem_channels: usize,
    pub stage_channels: usize,
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} channels cannot be split over {} heads",
                self.channels, self.heads
            )));
        }
        if !(1..=5).contains(&self.levels) {
            return Err(Error::InvalidLevel(self.levels));
        }
        if self.stem_channels == 0 || self.stage_channels == 0 {
            return Err(Error::Config("pyramid channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Draws initial parameter values and registers them.
pub(crate) struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    /// Uniform in `±1/√fan_in`.
    pub fn fan_in(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)));
        self.store.register(name, t)
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("positive std");
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)));
        self.store.register(name, t)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], v: f64) -> Result<ParamId> {
        self.store.register(name, Tensor::full(shape, T::from_f64_lossy(v)))
    }
}

const EMBED_STD: f64 = 0.02;

/// Binds parameters into a graph, either as trainable leaves or as frozen
/// constants (cutting that use's gradient contribution).
#[derive(Clone, Copy, Debug, Default)]
pub struct Binding {
    pub frozen: bool,
}

impl Binding {
    pub fn bind<T: Scalar>(self, g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId) -> Value {
        if self.frozen {
            g.frozen_param(store, id)
        } else {
            g.param(store, id)
        }
    }
}

/// `[C, L, W]` → `[W, L, C]`.
pub fn collapse_columns<T: Scalar>(g: &mut Graph<T>, grid: Value) -> Result<Value> {
    g.permute(grid, &[2, 1, 0])
}

/// `[W, L, C]` → `[C, L, W]`.
pub fn expand_columns<T: Scalar>(g: &mut Graph<T>, cols: Value) -> Result<Value> {
    g.permute(cols, &[2, 1, 0])
}

/// Strided patch convolutions: a 4×4/4 stem, then one 2×2/2 stage per level,
/// each level projected to `C_T` by a 1×1 convolution. Every output column
/// sees exactly the image columns of its own patch.
#[derive(Clone, Debug)]
pub struct Pyramid {
    stem: (ParamId, ParamId),
    stages: Vec<(ParamId, ParamId)>,
    projections: Vec<(ParamId, ParamId)>,
}

impl Pyramid {
    pub(crate) fn init<T: Scalar>(init: &mut Init<'_, T>, cfg: &ViewConfig) -> Result<Self> {
        let s = cfg.stem_channels;
        let stem = (
            init.fan_in("pyramid.stem.w".into(), &[s, 3, 4, 4], 3 * 16)?,
            init.constant("pyramid.stem.b".into(), &[s], 0.0)?,
        );
        let mut stages = Vec::new();
        let mut projections = Vec::new();
        let mut cin = s;
        for i in 1..=cfg.levels {
            let c = cfg.stage_channels;
            stages.push((
                init.fan_in(format!("pyramid.stage{i}.w"), &[c, cin, 2, 2], cin * 4)?,
                init.constant(format!("pyramid.stage{i}.b"), &[c], 0.0)?,
            ));
            projections.push((
                init.fan_in(format!("pyramid.proj{i}.w"), &[cfg.channels, c], c)?,
                init.constant(format!("pyramid.proj{i}.b"), &[cfg.channels], 0.0)?,
            ));
            cin = c;
        }
        Ok(Self {
            stem,
            stages,
            projections,
        })
    }

    pub fn stem_weight(&self) -> ParamId {
        self.stem.0
    }

    pub fn levels(&self) -> usize {
        self.stages.len()
    }
}

/// Per-level perspective features `[C_T, H/d_i, W/d_i]` of a `[3, H, W]` image.
pub fn extract_pyramid<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    pyr: &Pyramid,
    image: Value,
) -> Result<Vec<Value>> {
    let s = g.shape(image).to_vec();
    let dmax = geometry::level_downsample_factor(pyr.levels())?;
    if s.len() != 3 || s[0] != 3 || s[1] % dmax != 0 || s[2] % dmax != 0 || s[1] == 0 || s[2] == 0 {
        return Err(Error::shape("extract_pyramid", &s, &[3, dmax, dmax]));
    }
    let (w, b) = (g.param(store, pyr.stem.0), g.param(store, pyr.stem.1));
    let x = g.conv2d(image, w, Some(b), 4, 0)?;
    let mut x = g.relu(x);
    let mut out = Vec::with_capacity(pyr.levels());
    for (stage, proj) in pyr.stages.iter().zip(&pyr.projections) {
        let (w, b) = (g.param(store, stage.0), g.param(store, stage.1));
        let y = g.conv2d(x, w, Some(b), 2, 0)?;
        x = g.relu(y);
        let (w, b) = (g.param(store, proj.0), g.param(store, proj.1));
        out.push(g.conv1x1(x, w, Some(b))?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub norm1: (ParamId, ParamId),
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct ColumnMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Column-wise cross-attention decoder: queries of length `query_len`
/// attend over keys of length `key_len` within each column.
#[derive(Clone, Debug)]
pub struct ColumnDecoder {
    pub channels: usize,
    pub heads: usize,
    pub query_len: usize,
    pub key_len: usize,
    /// Learned positional encodings `[query_len, C]`, `[key_len, C]`.
    pub pe: Option<(ParamId, ParamId)>,
    pub layers: Vec<DecoderLayer>,
    /// Used instead of attention when `layers` is empty.
    pub mlp: Option<ColumnMlp>,
}

impl ColumnDecoder {
    pub(crate) fn init<T: Scalar>(
        init: &mut Init<'_, T>,
        prefix: &str,
        cfg: &ViewConfig,
        query_len: usize,
        key_len: usize,
    ) -> Result<Self> {
        let c = cfg.channels;
        let hidden = 2 * c;
        if cfg.layers == 0 {
            let mlp = ColumnMlp {
                w1: init.fan_in(format!("{prefix}.mlp.w1"), &[key_len * c, hidden], key_len * c)?,
                b1: init.constant(format!("{prefix}.mlp.b1"), &[hidden], 0.0)?,
                w2: init.fan_in(format!("{prefix}.mlp.w2"), &[hidden, query_len * c], hidden)?,
                b2: init.constant(format!("{prefix}.mlp.b2"), &[query_len * c], 0.0)?,
            };
            return Ok(Self {
                channels: c,
                heads: cfg.heads,
                query_len,
                key_len,
                pe: None,
                layers: Vec::new(),
                mlp: Some(mlp),
            });
        }
        let pe = (
            init.normal(format!("{prefix}.pe_q"), &[query_len, c], EMBED_STD)?,
            init.normal(format!("{prefix}.pe_k"), &[key_len, c], EMBED_STD)?,
        );
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("{prefix}.layer{l}");
            layers.push(DecoderLayer {
                wq: init.fan_in(format!("{p}.wq"), &[c, c], c)?,
                wk: init.fan_in(format!("{p}.wk"), &[c, c], c)?,
                wv: init.fan_in(format!("{p}.wv"), &[c, c], c)?,
                wo: init.fan_in(format!("{p}.wo"), &[c, c], c)?,
                bo: init.constant(format!("{p}.bo"), &[c], 0.0)?,
                norm1: (
                    init.constant(format!("{p}.norm1.gamma"), &[c], 1.0)?,
                    init.constant(format!("{p}.norm1.beta"), &[c], 0.0)?,
                ),
                w1: init.fan_in(format!("{p}.mlp.w1"), &[c, hidden], c)?,
                b1: init.constant(format!("{p}.mlp.b1"), &[hidden], 0.0)?,
                w2: init.fan_in(format!("{p}.mlp.w2"), &[hidden, c], hidden)?,
                b2: init.constant(format!("{p}.mlp.b2"), &[c], 0.0)?,
                norm2: (
                    init.constant(format!("{p}.norm2.gamma"), &[c], 1.0)?,
                    init.constant(format!("{p}.norm2.beta"), &[c], 0.0)?,
                ),
            });
        }
        Ok(Self {
            channels: c,
            heads: cfg.heads,
            query_len,
            key_len,
            pe: Some(pe),
            layers,
            mlp: None,
        })
    }
}

fn check_grid<T: Scalar>(g: &Graph<T>, op: &'static str, v: Value, c: usize, len: usize) -> Result<usize> {
    let s = g.shape(v);
    if s.len() != 3 || s[0] != c || s[1] != len {
        return Err(Error::shape(op, s, &[c, len]));
    }
    Ok(s[2])
}

fn positional<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    bind: Binding,
    table: ParamId,
    len: usize,
) -> Result<Value> {
    let t = bind.bind(g, store, table);
    let idx: Vec<usize> = (0..len).collect();
    g.embedding_lookup(t, &idx)
}

/// `Q = (x + PE_q)W_Q`, `K = (kv + PE_k)W_K`, `V = kv·W_V` for one layer, on
/// already-collapsed `[W, L, C]` sequences.
pub fn project_qkv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    dec: &ColumnDecoder,
    layer: usize,
    queries: Value,
    keys: Value,
    bind: Binding,
) -> Result<(Value, Value, Value)> {
    let l = dec
        .layers
        .get(layer)
        .ok_or_else(|| Error::Config(format!("decoder has no layer {layer}")))?;
    let (pe_q, pe_k) = dec.pe.expect("attention decoder has positional encodings");
    let pq = positional(g, store, bind, pe_q, dec.query_len)?;
    let pk = positional(g, store, bind, pe_k, dec.key_len)?;
    let xq = g.add_bcast(queries, pq)?;
    let xk = g.add_bcast(keys, pk)?;
    let (wq, wk, wv) = (
        bind.bind(g, store, l.wq),
        bind.bind(g, store, l.wk),
        bind.bind(g, store, l.wv),
    );
    let q = g.matmul(xq, wq)?;
    let k = g.matmul(xk, wk)?;
    let v = g.matmul(keys, wv)?;
    Ok((q, k, v))
}

/// First-layer `(Q, K, V)` from a query embedding `[C, L_q, W]` and key
/// features `[C, L_k, W]`, each `[W, L, C]`.
pub fn build_qkv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    dec: &ColumnDecoder,
    embedding: Value,
    features: Value,
) -> Result<(Value, Value, Value)> {
    let we = check_grid(g, "build_qkv query", embedding, dec.channels, dec.query_len)?;
    let wf = check_grid(g, "build_qkv key", features, dec.channels, dec.key_len)?;
    if we != wf {
        return Err(Error::shape("build_qkv", g.shape(embedding), g.shape(features)));
    }
    let eq = collapse_columns(g, embedding)?;
    let fk = collapse_columns(g, features)?;
    project_qkv(g, store, dec, 0, eq, fk, Binding::default())
}

/// Multi-head scaled dot-product attention within each column. Returns the
/// merged heads `[W, L_q, C]` and the weights `[W, h, L_q, L_k]`.
pub fn column_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Value,
    k: Value,
    v: Value,
    heads: usize,
) -> Result<(Value, Value)> {
    let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] || sq[2] % heads != 0 {
        return Err(Error::shape("column_attention", &sq, &sk));
    }
    let (w, lq, lk, c) = (sq[0], sq[1], sk[1], sq[2]);
    let dh = c / heads;
    let split = |g: &mut Graph<T>, x: Value, len: usize| -> Result<Value> {
        let r = g.reshape(x, &[w, len, heads, dh])?;
        g.permute(r, &[0, 2, 1, 3])
    };
    let qh = split(g, q, lq)?;
    let kh = split(g, k, lk)?;
    let vh = split(g, v, lk)?;
    let scores = g.matmul_t(qh, kh)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = g.softmax(scores, 3)?;
    let o = g.matmul(weights, vh)?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    Ok((g.reshape(o, &[w, lq, c])?, weights))
}

fn affine_norm<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    bind: Binding,
    x: Value,
    norm: (ParamId, ParamId),
) -> Result<Value> {
    let n = g.layer_norm(x, 2)?;
    let gamma = bind.bind(g, store, norm.0);
    let beta = bind.bind(g, store, norm.1);
    let n = g.mul_bcast(n, gamma)?;
    g.add_bcast(n, beta)
}

fn linear<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    bind: Binding,
    x: Value,
    w: ParamId,
    b: ParamId,
) -> Result<Value> {
    let wv = bind.bind(g, store, w);
    let bv = bind.bind(g, store, b);
    let y = g.matmul(x, wv)?;
    g.add_bcast(y, bv)
}

/// Decoder output plus the attention weights of every layer.
pub struct Decoded {
    pub output: Value,
    pub attention: Vec<Value>,
}

/// Decode every column: queries from `embedding` `[C, L_q, W]`, keys and
/// values from `features` `[C, L_k, W]`. Output `[C, L_q, W]`.
pub fn decode_column<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    dec: &ColumnDecoder,
    embedding: Value,
    features: Value,
    bind: Binding,
) -> Result<Decoded> {
    let c = dec.channels;
    let we = check_grid(g, "decode_column query", embedding, c, dec.query_len)?;
    let wf = check_grid(g, "decode_column key", features, c, dec.key_len)?;
    if we != wf {
        return Err(Error::shape("decode_column", g.shape(embedding), g.shape(features)));
    }
    let w = we;
    let mut x = collapse_columns(g, embedding)?;
    let kv = collapse_columns(g, features)?;
    let mut attention = Vec::with_capacity(dec.layers.len());
    if let Some(mlp) = &dec.mlp {
        let flat = g.reshape(kv, &[w, dec.key_len * c])?;
        let h = linear(g, store, bind, flat, mlp.w1, mlp.b1)?;
        let h = g.relu(h);
        let y = linear(g, store, bind, h, mlp.w2, mlp.b2)?;
        let y = g.reshape(y, &[w, dec.query_len, c])?;
        x = g.add(y, x)?;
    }
    for (li, layer) in dec.layers.iter().enumerate() {
        let (q, k, v) = project_qkv(g, store, dec, li, x, kv, bind)?;
        let (a, weights) = column_attention(g, q, k, v, dec.heads)?;
        attention.push(weights);
        let a = linear(g, store, bind, a, layer.wo, layer.bo)?;
        let r = g.add(a, q)?;
        let e = affine_norm(g, store, bind, r, layer.norm1)?;
        let h = linear(g, store, bind, e, layer.w1, layer.b1)?;
        let h = g.relu(h);
        let m = linear(g, store, bind, h, layer.w2, layer.b2)?;
        let r = g.add(m, e)?;
        x = affine_norm(g, store, bind, r, layer.norm2)?;
    }
    Ok(Decoded {
        output: expand_columns(g, x)?,
        attention,
    })
}

/// Everything one pyramid level needs for the cycle.
#[derive(Clone, Debug)]
pub struct LevelModule {
    pub spec: LevelSpec,
    /// Feature rows `H_i` and columns `W_i` at this level.
    pub height: usize,
    pub width: usize,
    /// Initial polar BEV query embedding `[C, Z_i, W_i]`.
    pub bev_embedding: ParamId,
    /// Query embedding of the calibrated pass `[C, Z_i, W_i]`.
    pub bev_embedding_calib: ParamId,
    /// PV query embedding `[C, H_i, W_i]`.
    pub pv_embedding: ParamId,
    pub pv_to_bev: ColumnDecoder,
    pub bev_to_pv: ColumnDecoder,
    pub polar_map: Arc<SampleMap>,
}

/// The full view-transformation stack for one camera and BEV grid.
#[derive(Clone, Debug)]
pub struct ViewTransformer {
    pub config: ViewConfig,
    pub camera: CameraModel,
    pub grid: BevGridSpec,
    pub pyramid: Pyramid,
    pub levels: Vec<LevelModule>,
}

impl ViewTransformer {
    pub fn init<T: Scalar>(
        cfg: ViewConfig,
        camera: CameraModel,
        grid: BevGridSpec,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let dmax = geometry::level_downsample_factor(cfg.levels)?;
        if camera.image_h % dmax != 0 || camera.image_w % dmax != 0 {
            return Err(Error::shape(
                "view transformer image",
                &[camera.image_h, camera.image_w],
                &[dmax, dmax],
            ));
        }
        let parts = geometry::depth_partition(&grid, &camera, cfg.levels)?;
        let mut init = Init { store, rng };
        let pyramid = Pyramid::init(&mut init, &cfg)?;
        let c = cfg.channels;
        let mut levels = Vec::with_capacity(parts.len());
        for spec in parts {
            let i = spec.level;
            let (h, w) = (camera.image_h / spec.factor, camera.image_w / spec.factor);
            let z = spec.depth_rows();
            let bev_embedding = init.normal(format!("level{i}.bev_embedding"), &[c, z, w], EMBED_STD)?;
            let bev_embedding_calib =
                init.normal(format!("level{i}.bev_embedding_calib"), &[c, z, w], EMBED_STD)?;
            let pv_embedding = init.normal(format!("level{i}.pv_embedding"), &[c, h, w], EMBED_STD)?;
            let pv_to_bev = ColumnDecoder::init(&mut init, &format!("level{i}.pv_to_bev"), &cfg, z, h)?;
            let bev_to_pv = ColumnDecoder::init(&mut init, &format!("level{i}.bev_to_pv"), &cfg, h, z)?;
            let polar_map = Arc::new(geometry::polar_sample_map(&camera, &grid, &spec));
            levels.push(LevelModule {
                spec,
                height: h,
                width: w,
                bev_embedding,
                bev_embedding_calib,
                pv_embedding,
                pv_to_bev,
                bev_to_pv,
                polar_map,
            });
        }
        Ok(Self {
            config: cfg,
            camera,
            grid,
            pyramid,
            levels,
        })
    }
}

/// Test and ablation switches for [`cycle_calibrate`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CycleOptions {
    /// Bind the shared PV→BEV weights as constants in the first pass.
    pub freeze_first_pass: bool,
    /// Bind the shared PV→BEV weights as constants in the calibrated pass.
    pub freeze_second_pass: bool,
    /// Multiply the calibrated pass's output by zero before the residual.
    pub zero_second_pass: bool,
    /// Multiply the BEV→PV output by zero.
    pub zero_bev_to_pv: bool,
}

pub struct CycleOutput {
    /// Initial polar features `P_i`.
    pub initial: Value,
    /// BEV-focused PV features.
    pub pv_calib: Value,
    /// Calibrated polar features.
    pub calibrated: Value,
}

/// Initial polar BEV features of one level.
pub fn pv_to_bev_initial<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    level: &LevelModule,
    features: Value,
    bind: Binding,
) -> Result<Value> {
    let e = g.param(store, level.bev_embedding);
    Ok(decode_column(g, store, &level.pv_to_bev, e, features, bind)?.output)
}

/// PV features re-derived from polar BEV features, `[C, H_i, W_i]`.
pub fn bev_to_pv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    level: &LevelModule,
    polar: Value,
) -> Result<Value> {
    let e = g.param(store, level.pv_embedding);
    Ok(decode_column(g, store, &level.bev_to_pv, e, polar, Binding::default())?.output)
}

/// PV→BEV, BEV→PV, then PV→BEV again with the first pass's decoder weights
/// and its own query embedding, plus a residual to the first pass.
pub fn cycle_calibrate<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    level: &LevelModule,
    features: Value,
    opts: CycleOptions,
) -> Result<CycleOutput> {
    let first = Binding {
        frozen: opts.freeze_first_pass,
    };
    let second = Binding {
        frozen: opts.freeze_second_pass,
    };
    let initial = pv_to_bev_initial(g, store, level, features, first)?;
    let mut pv_calib = bev_to_pv(g, store, level, initial)?;
    if opts.zero_bev_to_pv {
        pv_calib = g.scale(pv_calib, 0.0);
    }
    let e = g.param(store, level.bev_embedding_calib);
    let mut again = decode_column(g, store, &level.pv_to_bev, e, pv_calib, second)?.output;
    if opts.zero_second_pass {
        again = g.scale(again, 0.0);
    }
    let calibrated = g.add(again, initial)?;
    Ok(CycleOutput {
        initial,
        pv_calib,
        calibrated,
    })
}

/// Calibrated Cartesian BEV features `[C_T, Z, X]` from per-level PV features.
pub fn cycle_view_transform<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    vt: &ViewTransformer,
    pyramid: &[Value],
    opts: CycleOptions,
) -> Result<Value> {
    if pyramid.len() != vt.levels.len() {
        return Err(Error::shape("cycle_view_transform", &[pyramid.len()], &[vt.levels.len()]));
    }
    let mut slabs = Vec::with_capacity(pyramid.len());
    for (level, &f) in vt.levels.iter().zip(pyramid) {
        let out = cycle_calibrate(g, store, level, f, opts)?;
        slabs.push(geometry::polar_to_cartesian_with(
            g,
            out.calibrated,
            level.polar_map.clone(),
            &level.spec,
        )?);
    }
    let specs: Vec<LevelSpec> = vt.levels.iter().map(|l| l.spec.clone()).collect();
    geometry::concat_depth(g, &slabs, &specs, &vt.grid)
}
