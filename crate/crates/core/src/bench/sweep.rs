use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{extract_support, two_stage_estimate};
use crate::simgen::{gen_dataset, Dataset, SystemConfig};

use super::metrics::{mean_support_metrics, nmse, NmseReport, NmseVariant, SupportMetrics};
use super::opcount::{analytic_op_count, NetPart};
use super::scheme::{SchemeModel, SchemeName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scheme: SchemeName,
    pub nmse: NmseReport,
    /// Output of the coarse stage alone, for two-stage schemes.
    pub coarse_nmse: Option<NmseReport>,
    /// Mean estimation time per sample.
    pub runtime_ms: f64,
    pub mults_per_iter: u64,
    pub support: Vec<SupportMetrics>,
}

/// Complex rows `j` whose lifted rows `j` or `j + M` are nonzero.
fn complex_support(frame: ArrayView2<f64>) -> Vec<usize> {
    let m = frame.nrows() / 2;
    let mut rows: Vec<usize> = extract_support(frame, 0.0).into_iter().map(|j| j % m).collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

pub fn mults_per_iter(scheme: SchemeName, cfg: &SystemConfig) -> Result<u64> {
    let part = if scheme.spec().fine { NetPart::Fine } else { NetPart::Coarse };
    Ok(analytic_op_count(part, cfg.m, cfg.n, cfg.t)?.total)
}

/// Runs `model` on every sample of `ds`.
pub fn evaluate(scheme: SchemeName, model: &SchemeModel, ds: &Dataset, variant: NmseVariant) -> Result<Evaluation> {
    let phi = ds.phi_lifted.view();
    let n = ds.config.n;
    let per_sample: Vec<(Array2<f64>, Option<Array2<f64>>, f64)> = ds
        .samples
        .par_iter()
        .map(|smp| {
            let started = Instant::now();
            let obs = smp.lifted_obs.mat.view();
            let (est, coarse) = match model {
                SchemeModel::TwoStage { coarse: Some(c), fine } => {
                    let r = two_stage_estimate(Some(c), fine, phi, obs, n)?;
                    (r.refined, Some(r.coarse))
                }
                _ => (model.estimate(phi, obs, n)?, None),
            };
            Ok((est, coarse, started.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_>>()?;
    let truths: Vec<ArrayView2<f64>> = ds.samples.iter().map(|s| s.lifted_truth.mat.view()).collect();
    let ests: Vec<ArrayView2<f64>> = per_sample.iter().map(|p| p.0.view()).collect();
    let report = nmse(&ests, &truths, variant)?;
    let coarse_nmse = if per_sample.iter().all(|p| p.1.is_some()) && !per_sample.is_empty() {
        let c: Vec<ArrayView2<f64>> = per_sample.iter().map(|p| p.1.as_ref().expect("checked").view()).collect();
        Some(nmse(&c, &truths, variant)?)
    } else {
        None
    };
    let pairs: Vec<Vec<(Vec<usize>, Vec<usize>)>> = per_sample
        .iter()
        .zip(&ds.samples)
        .map(|(p, smp)| {
            smp.supports
                .supports
                .iter()
                .enumerate()
                .map(|(i, truth)| (complex_support(p.0.slice(s![.., i * n..(i + 1) * n])), truth.clone()))
                .collect()
        })
        .collect();
    let runtime_ms = per_sample.iter().map(|p| p.2).sum::<f64>() / per_sample.len().max(1) as f64;
    Ok(Evaluation {
        scheme,
        nmse: report,
        coarse_nmse,
        runtime_ms,
        mults_per_iter: mults_per_iter(scheme, &ds.config)?,
        support: mean_support_metrics(&pairs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Snr,
    SC,
    T,
    /// Mean-support parameter `s̄`.
    S,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snr" => Ok(SweepAxis::Snr),
            "s_c" | "sc" => Ok(SweepAxis::SC),
            "t" => Ok(SweepAxis::T),
            "s" | "s_bar" => Ok(SweepAxis::S),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::SC => "s_c",
            SweepAxis::T => "t",
            SweepAxis::S => "s",
        }
    }

    /// `cfg` with the axis quantity set to `value`.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} axis needs whole numbers, got {v}", self.as_str())))
            }
        };
        match self {
            SweepAxis::Snr => c.snr_db = value,
            SweepAxis::SC => c.s_c = as_count(value)?,
            SweepAxis::T => c.t = as_count(value)?,
            SweepAxis::S => c.s_bar = as_count(value)?,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeName>,
    pub test_count: usize,
    pub test_seed: u64,
    #[serde(default)]
    pub variant: NmseVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: f64,
    pub scheme: SchemeName,
    /// `None` when the scheme had no parameters for this point.
    pub nmse_db: Option<f64>,
    pub variant: NmseVariant,
    pub runtime_ms: Option<f64>,
    pub mults_per_iter: u64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<SchemeName>,
    /// Axis-major: `cells[i * schemes.len() + k]`.
    pub cells: Vec<SweepCell>,
    pub config: SystemConfig,
}

impl SweepResult {
    pub fn cell(&self, value_idx: usize, scheme: SchemeName) -> Option<&SweepCell> {
        let k = self.schemes.iter().position(|s| *s == scheme)?;
        self.cells.get(value_idx * self.schemes.len() + k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis_value,scheme,nmse_db,variant,runtime_ms,mults_per_iter,sample_count\n");
        for c in &self.cells {
            let opt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.axis_value,
                c.scheme,
                opt(c.nmse_db),
                c.variant.as_str(),
                opt(c.runtime_ms),
                c.mults_per_iter,
                c.sample_count
            );
        }
        out
    }
}

/// Evaluates every scheme at every axis point on a fresh test set.
/// `models(point_cfg, scheme)` supplies parameters, or `None` for an absent cell.
pub fn run_sweep(
    base: &SystemConfig,
    spec: &SweepSpec,
    models: &dyn Fn(&SystemConfig, SchemeName) -> Result<Option<SchemeModel>>,
) -> Result<SweepResult> {
    if spec.values.is_empty() || spec.schemes.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value and one scheme".into()));
    }
    let mut cells = Vec::with_capacity(spec.values.len() * spec.schemes.len());
    for &value in &spec.values {
        let cfg = spec.axis.apply(base, value)?;
        let test = gen_dataset(&cfg, spec.test_count, spec.test_seed)?;
        for &scheme in &spec.schemes {
            let mults = mults_per_iter(scheme, &cfg)?;
            let cell = match models(&cfg, scheme)? {
                Some(model) => {
                    let ev = evaluate(scheme, &model, &test, spec.variant)?;
                    SweepCell {
                        axis_value: value,
                        scheme,
                        nmse_db: Some(ev.nmse.nmse_db),
                        variant: spec.variant,
                        runtime_ms: Some(ev.runtime_ms),
                        mults_per_iter: mults,
                        sample_count: ev.nmse.sample_count,
                    }
                }
                None => {
                    log::warn!("no parameters for {scheme} at {}={value}", spec.axis.as_str());
                    SweepCell {
                        axis_value: value,
                        scheme,
                        nmse_db: None,
                        variant: spec.variant,
                        runtime_ms: None,
                        mults_per_iter: mults,
                        sample_count: 0,
                    }
                }
            };
            cells.push(cell);
        }
    }
    Ok(SweepResult {
        axis: spec.axis,
        values: spec.values.clone(),
        schemes: spec.schemes.clone(),
        cells,
        config: base.clone(),
    })
}
