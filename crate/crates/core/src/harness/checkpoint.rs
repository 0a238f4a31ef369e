//! Checkpoint files: a little-endian binary blob holding the configuration,
//! parameters, optimizer moments and stream state, plus a `.manifest` text
//! sidecar listing what is inside.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::model::BevModel;
use super::optim::AdamW;
use super::train::{Stream, TrainState};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::temporal::{EgoPose, MemoryBank};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CYBEVCK1";

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f32>) {
        self.u64(t.rank() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let rank = self.usize()?;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.str(&state.config.to_text());
    w.u64(state.step as u64);
    w.u64(state.store.len() as u64);
    for (_, name, t) in state.store.iter() {
        w.str(name);
        w.tensor(t);
    }
    let o = &state.optimizer;
    for v in [o.beta1, o.beta2, o.eps, o.weight_decay] {
        w.f64(v);
    }
    w.u64(o.t);
    for t in o.m.iter().chain(&o.v) {
        w.tensor(t);
    }
    w.u64(state.streams.len() as u64);
    for s in &state.streams {
        w.u64(s.cursor as u64);
        w.u64(s.bank.capacity() as u64);
        let entries = s.bank.read();
        w.u64(entries.len() as u64);
        for (t, p) in &entries {
            w.tensor(t);
            w.u64(p.t as u64);
            w.u64(p.scene_id);
            for v in [p.x, p.z, p.yaw] {
                w.f64(v);
            }
        }
    }
    w.0
}

pub fn decode(buf: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let config = ExperimentConfig::parse(&r.str()?)?;
    let step = r.usize()?;
    let n = r.usize()?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = r.str()?;
        let t = r.tensor()?;
        store.register(name, t)?;
    }
    let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let t = r.u64()?;
    let moments = |r: &mut Reader| (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>();
    let m = moments(&mut r)?;
    let v = moments(&mut r)?;
    for (i, (_, name, p)) in store.iter().enumerate() {
        if m[i].shape() != p.shape() || v[i].shape() != p.shape() {
            return Err(Error::Checkpoint(format!("moment shape of {name}")));
        }
    }
    let ns = r.usize()?;
    let mut streams = Vec::with_capacity(ns.min(1024));
    for _ in 0..ns {
        let cursor = r.usize()?;
        let mut bank = MemoryBank::new(r.usize()?);
        for _ in 0..r.usize()? {
            let f = r.tensor()?;
            let (t, scene) = (r.usize()?, r.u64()?);
            let (x, z, yaw) = (r.f64()?, r.f64()?, r.f64()?);
            bank.push(f, EgoPose { t, scene_id: scene, x, z, yaw });
        }
        streams.push(Stream { cursor, bank });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(TrainState {
        config,
        step,
        store,
        optimizer: AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            t,
            m,
            v,
        },
        streams,
    })
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn manifest(state: &TrainState) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "step {}", state.step);
    let _ = writeln!(s, "parameters {} values {}", state.store.len(), state.store.numel());
    for (_, name, t) in state.store.iter() {
        let _ = writeln!(s, "  {name} {:?}", t.shape());
    }
    let _ = writeln!(s, "streams {}", state.streams.len());
    s.push_str("config\n");
    s.push_str(&state.config.to_text());
    s
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    std::fs::write(&mp, manifest(state)).map_err(|e| Error::io(&mp, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Rebuild the model a checkpoint was trained with and hand back its weights.
pub fn load_model(path: &Path) -> Result<(BevModel, TrainState)> {
    let state = load(path)?;
    let mut fresh = ParamStore::<f32>::new();
    let model = BevModel::init(&state.config, &mut fresh)?;
    let same = fresh.len() == state.store.len()
        && fresh
            .iter()
            .zip(state.store.iter())
            .all(|((_, a, x), (_, b, y))| a == b && x.shape() == y.shape());
    if !same {
        return Err(Error::Checkpoint(format!(
            "{}: parameters do not match the stored configuration",
            path.display()
        )));
    }
    Ok((model, state))
}
