//! One training run per value along a single axis, all with the same seeds,
//! evaluated on the same held-out sequences.

use std::fmt::Write as _;
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::eval::{evaluate, EvalOutput};
use super::train::Trainer;
use crate::error::{Error, Result};
use crate::synth::Sequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    NDec,
    NHis,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_dec" => Ok(Axis::NDec),
            "n_his" => Ok(Axis::NHis),
            _ => Err(Error::Config(format!("unknown ablation axis {s:?}; expected n_dec or n_his"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::NDec => "n_dec",
            Axis::NHis => "n_his",
        }
    }

    pub fn apply(self, base: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            Axis::NDec => cfg.n_dec = value,
            Axis::NHis => cfg.n_his = value,
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub axis: Axis,
    pub values: Vec<usize>,
    pub results: Vec<EvalOutput>,
}

impl AblationTable {
    /// Rows of group means, one column per value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<18}", self.axis.name());
        for v in &self.values {
            let _ = write!(s, "{v:>9}");
        }
        s.push('\n');
        let rows: [(&str, fn(&EvalOutput) -> f64); 5] = [
            ("Layout", |e| e.report.layout_miou()),
            ("Object", |e| e.report.object_miou()),
            ("Total", |e| e.report.miou()),
            ("Layout (occluded)", |e| e.occluded.layout_miou()),
            ("Layout (visible)", |e| e.visible.layout_miou()),
        ];
        for (name, f) in rows {
            let _ = write!(s, "{name:<18}");
            for r in &self.results {
                let _ = write!(s, "{:>9.4}", f(r));
            }
            s.push('\n');
        }
        s
    }
}

/// Train and evaluate one model per value.
pub fn ablate(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[usize],
    train: &[Sequence],
    eval: &[Sequence],
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::Config("no ablation values".into()));
    }
    let mut results = Vec::with_capacity(values.len());
    for &v in values {
        let cfg = axis.apply(base, v);
        cfg.validate()?;
        let mut trainer = Trainer::new(&cfg, train)?;
        trainer.run(|_, _| Ok(()))?;
        results.push(evaluate(&trainer.model, &trainer.state.store, eval, cfg.parallelism())?);
    }
    Ok(AblationTable {
        axis,
        values: values.to_vec(),
        results,
    })
}

/// `a,b,c` → values.
pub fn parse_values(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("ablation value {v:?} is not a count")))
        })
        .collect()
}
