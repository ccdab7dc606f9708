//! Layer-wise training of the coarse and fine nets.
//!
//! Gradients come from a reverse pass through the recorded forward pass.
//! Branch masks and support selections are constants of the forward pass, so
//! the derivative is the one of the piecewise-smooth map the forward pass
//! happened to evaluate.

mod gradcheck;
mod optim;

use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::unrolled::{backward, LayerRecord};
use crate::estimator::{extract_support, prior_weights, CoarseNetParams, FineNetParams};
use crate::simgen::Dataset;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::Optimizer;
use optim::OptimState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub val_batch_size: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub max_epochs_per_stage: usize,
    pub early_stop_patience: usize,
    pub omega_bounds: (f64, f64),
    pub theta_floor: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Use ground-truth supports as fine-net priors during training.
    #[serde(default)]
    pub teacher_prior: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 32,
            val_batch_size: 100,
            train_count: 20_000,
            val_count: 5_000,
            test_count: 1_000,
            max_epochs_per_stage: 30,
            early_stop_patience: 5,
            omega_bounds: (0.0, 1.0),
            theta_floor: 1e-8,
            optimizer: Optimizer::default(),
            teacher_prior: false,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.val_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if self.train_count < self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "train_count {} below batch_size {}",
                self.train_count, self.batch_size
            )));
        }
        if self.val_count == 0 {
            return Err(Error::InvalidConfig("val_count must be positive".into()));
        }
        let (lo, hi) = self.omega_bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("omega bounds {:?} not within [0, 1]", self.omega_bounds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Forward intermediates of one batch. One entry per frame for the fine net,
/// a single entry for the coarse net.
#[derive(Debug, Clone)]
pub struct ComputationRecord {
    pub(crate) frames: Vec<FrameRecord>,
    pub(crate) width: usize,
    pub(crate) active: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct FrameRecord {
    pub layers: Vec<LayerRecord>,
    pub row_weights: Option<Array2<f64>>,
    pub prior: Option<Array2<bool>>,
}

impl ComputationRecord {
    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn active_layers(&self) -> usize {
        self.active
    }

    /// Smallest distance of any recorded norm to a branch or ranking boundary.
    pub fn margin(&self, selector: crate::estimator::Selector) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| {
                f.layers
                    .iter()
                    .map(move |l| crate::estimator::unrolled::record_margin(l, f.row_weights.as_ref(), selector))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_weights: Vec<Array2<f64>>,
    pub d_thetas: Vec<f64>,
    /// Fine net only.
    pub d_omega: Option<f64>,
}

impl GradientSet {
    fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.d_thetas.iter().all(|x| x.is_finite())
            && self.d_omega.map(f64::is_finite).unwrap_or(true)
    }
}

pub fn mse_loss(estimate: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if estimate.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs truth {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / estimate.len() as f64)
}

fn hcat(blocks: &[ArrayView2<f64>]) -> Array2<f64> {
    concatenate(Axis(1), blocks).expect("blocks share a row count")
}

/// Forward pass of the first `active` coarse layers on a column batch.
pub fn coarse_forward_record(
    params: &CoarseNetParams,
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    active: usize,
) -> Result<(Array2<f64>, ComputationRecord)> {
    let init = Array2::zeros((phi.ncols(), obs.ncols()));
    let (out, layers) = params
        .stack()
        .forward(phi, obs, init.view(), None, active, true, None)?;
    let active = layers.len();
    Ok((
        out,
        ComputationRecord {
            frames: vec![FrameRecord {
                layers,
                row_weights: None,
                prior: None,
            }],
            width: params.group_width,
            active,
        },
    ))
}

/// Forward pass of the first `active` fine layers, frame by frame.
///
/// `obs_frames[i]` and `inits[i]` hold frame `i` of every batch member side by
/// side (`n` columns each). Priors come from the previous frame's output unless
/// `teacher` supplies them (`teacher[i][b]` is the prior of frame `i`, member `b`).
pub fn fine_forward_record(
    params: &FineNetParams,
    phi: ArrayView2<f64>,
    obs_frames: &[Array2<f64>],
    inits: &[Array2<f64>],
    n: usize,
    active: usize,
    teacher: Option<&[Vec<Vec<usize>>]>,
) -> Result<(Vec<Array2<f64>>, ComputationRecord)> {
    if obs_frames.len() != inits.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} observation frames, {} initial frames",
            obs_frames.len(),
            inits.len()
        )));
    }
    let rows = phi.ncols();
    let stack = params.stack(n);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(obs_frames.len());
    let mut frames = Vec::with_capacity(obs_frames.len());
    let mut active_seen = active.min(params.layers());
    for (i, (obs, init)) in obs_frames.iter().zip(inits).enumerate() {
        let groups = obs.ncols() / n;
        let mut weights = Array2::<f64>::ones((rows, groups));
        let mut prior = Array2::from_elem((rows, groups), false);
        for g in 0..groups {
            let support: Vec<usize> = match (teacher, i) {
                (_, 0) => Vec::new(),
                (Some(t), _) => t[i][g].clone(),
                (None, _) => extract_support(outputs[i - 1].slice(s![.., g * n..(g + 1) * n]), 0.0),
            };
            let (w, member) = prior_weights(rows, &support, params.omega, params.symmetrize_prior)?;
            weights.column_mut(g).assign(&ndarray::Array1::from(w));
            prior.column_mut(g).assign(&ndarray::Array1::from(member));
        }
        let (out, layers) = stack.forward(phi, obs.view(), init.view(), Some(&weights), active, true, None)?;
        active_seen = layers.len();
        outputs.push(out);
        frames.push(FrameRecord {
            layers,
            row_weights: Some(weights),
            prior: Some(prior),
        });
    }
    Ok((
        outputs,
        ComputationRecord {
            frames,
            width: n,
            active: active_seen,
        },
    ))
}

/// Gradients of the loss with respect to the parameters of the recorded stage.
/// `d_out[i]` is the loss gradient at the output of frame `i`.
pub fn backward_pass(
    record: &ComputationRecord,
    weights: &[Array2<f64>],
    phi: ArrayView2<f64>,
    d_out: &[Array2<f64>],
) -> Result<GradientSet> {
    if d_out.len() != record.frames.len() {
        return Err(Error::IncompleteRecord(format!(
            "{} output gradients for {} recorded frames",
            d_out.len(),
            record.frames.len()
        )));
    }
    let mut total = GradientSet {
        d_weights: weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
        d_thetas: vec![0.0; weights.len()],
        d_omega: record.frames.first().and_then(|f| f.prior.as_ref()).map(|_| 0.0),
    };
    for (frame, d) in record.frames.iter().zip(d_out) {
        if frame.layers.len() != record.active {
            return Err(Error::IncompleteRecord(format!(
                "frame holds {} of {} layers",
                frame.layers.len(),
                record.active
            )));
        }
        let g = backward(
            weights,
            phi,
            &frame.layers,
            record.width,
            frame.row_weights.as_ref(),
            frame.prior.as_ref(),
            d.clone(),
        )?;
        for (acc, dw) in total.d_weights.iter_mut().zip(g.d_weights) {
            *acc += &dw;
        }
        for (acc, dt) in total.d_thetas.iter_mut().zip(g.d_thetas) {
            *acc += dt;
        }
        if let Some(o) = total.d_omega.as_mut() {
            *o += g.d_omega;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubStageReport {
    pub active_layers: usize,
    /// Epoch 0 is the evaluation before any update.
    pub epochs: Vec<EpochRecord>,
    pub best_val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub sub_stages: Vec<SubStageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossReport {
    pub stages: Vec<StageReport>,
}

impl LossReport {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for st in &self.stages {
            for sub in &st.sub_stages {
                for e in &sub.epochs {
                    let line = serde_json::json!({
                        "stage": st.stage,
                        "active_layers": sub.active_layers,
                        "epoch": e.epoch,
                        "train_mse": e.train_mse,
                        "val_mse": e.val_mse,
                        "wall_ms": e.wall_ms,
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Per-sample tensors a stage trains on, already split into frames where needed.
struct StageData {
    /// Coarse: one `2T × N·L` block per sample. Fine: `L` blocks of `2T × N`.
    obs: Vec<Vec<Array2<f64>>>,
    truth: Vec<Vec<Array2<f64>>>,
    /// Fine only: coarse estimate per frame.
    init: Vec<Vec<Array2<f64>>>,
    /// Fine only: teacher priors (lifted true supports) per frame.
    teacher: Vec<Vec<Vec<usize>>>,
}

fn coarse_data(ds: &Dataset, count: usize) -> StageData {
    let take = count.min(ds.samples.len());
    StageData {
        obs: ds.samples[..take].iter().map(|s| vec![s.lifted_obs.mat.clone()]).collect(),
        truth: ds.samples[..take].iter().map(|s| vec![s.lifted_truth.mat.clone()]).collect(),
        init: Vec::new(),
        teacher: Vec::new(),
    }
}

fn lifted_support(rows: &[usize], m: usize) -> Vec<usize> {
    let mut out: Vec<usize> = rows.iter().copied().chain(rows.iter().map(|j| j + m)).collect();
    out.sort_unstable();
    out
}

fn fine_data(ds: &Dataset, count: usize, coarse: Option<&CoarseNetParams>) -> Result<StageData> {
    let n = ds.config.n;
    let frames = ds.config.frames;
    let m = ds.config.m;
    let take = count.min(ds.samples.len());
    let phi = ds.phi_lifted.view();
    let mut data = StageData {
        obs: Vec::with_capacity(take),
        truth: Vec::with_capacity(take),
        init: Vec::with_capacity(take),
        teacher: Vec::with_capacity(take),
    };
    let split = |a: &Array2<f64>| -> Vec<Array2<f64>> {
        (0..frames).map(|i| a.slice(s![.., i * n..(i + 1) * n]).to_owned()).collect()
    };
    let coarse_out: Vec<Array2<f64>> = {
        use rayon::prelude::*;
        ds.samples[..take]
            .par_iter()
            .map(|smp| match coarse {
                Some(c) => crate::estimator::coarse_forward(c, phi, smp.lifted_obs.mat.view()),
                None => Ok(Array2::zeros((2 * m, n * frames))),
            })
            .collect::<Result<Vec<_>>>()?
    };
    for (smp, g) in ds.samples[..take].iter().zip(coarse_out) {
        data.obs.push(split(&smp.lifted_obs.mat));
        data.truth.push(split(&smp.lifted_truth.mat));
        data.init.push(split(&g));
        data.teacher.push(smp.supports.supports.iter().map(|s| lifted_support(s, m)).collect());
    }
    Ok(data)
}

/// Mutable view of one stage's trainable tensors.
enum StageParams<'a> {
    Coarse(&'a mut CoarseNetParams),
    Fine(&'a mut FineNetParams),
}

impl StageParams<'_> {
    fn layers(&self) -> usize {
        match self {
            StageParams::Coarse(c) => c.layers(),
            StageParams::Fine(f) => f.layers(),
        }
    }

    fn snapshot(&self) -> (Vec<Array2<f64>>, Vec<f64>, f64) {
        match self {
            StageParams::Coarse(c) => (c.weights.clone(), c.thetas.clone(), 1.0),
            StageParams::Fine(f) => (f.weights.clone(), f.thetas.clone(), f.omega),
        }
    }

    fn restore(&mut self, snap: &(Vec<Array2<f64>>, Vec<f64>, f64)) {
        match self {
            StageParams::Coarse(c) => {
                c.weights = snap.0.clone();
                c.thetas = snap.1.clone();
            }
            StageParams::Fine(f) => {
                f.weights = snap.0.clone();
                f.thetas = snap.1.clone();
                f.omega = snap.2;
            }
        }
    }
}

/// Forward (and optionally backward) over the batch `idx`; returns the summed
/// squared error, the entry count and the gradient of the mean loss.
fn batch_pass(
    params: &StageParams<'_>,
    phi: ArrayView2<f64>,
    data: &StageData,
    idx: &[usize],
    active: usize,
    n: usize,
    teacher: bool,
    want_grad: bool,
) -> Result<(f64, usize, Option<GradientSet>)> {
    let frames = data.obs[idx[0]].len();
    let gather = |src: &Vec<Vec<Array2<f64>>>, i: usize| -> Array2<f64> {
        let views: Vec<ArrayView2<f64>> = idx.iter().map(|&k| src[k][i].view()).collect();
        hcat(&views)
    };
    let truths: Vec<Array2<f64>> = (0..frames).map(|i| gather(&data.truth, i)).collect();
    let (outputs, record, weights) = match params {
        StageParams::Coarse(c) => {
            let obs = gather(&data.obs, 0);
            let (out, rec) = coarse_forward_record(c, phi, obs.view(), active)?;
            (vec![out], rec, &c.weights)
        }
        StageParams::Fine(f) => {
            let obs: Vec<Array2<f64>> = (0..frames).map(|i| gather(&data.obs, i)).collect();
            let inits: Vec<Array2<f64>> = (0..frames).map(|i| gather(&data.init, i)).collect();
            let teach: Option<Vec<Vec<Vec<usize>>>> = teacher.then(|| {
                (0..frames)
                    .map(|i| idx.iter().map(|&k| data.teacher[k][i].clone()).collect())
                    .collect()
            });
            let (outs, rec) = fine_forward_record(f, phi, &obs, &inits, n, active, teach.as_deref())?;
            (outs, rec, &f.weights)
        }
    };
    let entries: usize = truths.iter().map(|t| t.len()).sum();
    let mut sse = 0.0;
    for (o, t) in outputs.iter().zip(&truths) {
        sse += o.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    if !sse.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grad = if want_grad {
        let scale = 2.0 / entries as f64;
        let d_out: Vec<Array2<f64>> = outputs
            .iter()
            .zip(&truths)
            .map(|(o, t)| (o - t).mapv(|x| x * scale))
            .collect();
        Some(backward_pass(&record, weights, phi, &d_out)?)
    } else {
        None
    };
    Ok((sse, entries, grad))
}

fn mean_loss(
    params: &StageParams<'_>,
    phi: ArrayView2<f64>,
    data: &StageData,
    batch: usize,
    active: usize,
    n: usize,
    teacher: bool,
) -> Result<f64> {
    let all: Vec<usize> = (0..data.obs.len()).collect();
    let (mut sse, mut count) = (0.0, 0usize);
    for chunk in all.chunks(batch) {
        let (s, c, _) = batch_pass(params, phi, data, chunk, active, n, teacher, false)?;
        sse += s;
        count += c;
    }
    Ok(sse / count.max(1) as f64)
}

fn run_stage(
    mut params: StageParams<'_>,
    phi: ArrayView2<f64>,
    train: &StageData,
    val: &StageData,
    n: usize,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<StageReport> {
    let layers = params.layers();
    let omega_trainable = matches!(&params, StageParams::Fine(f) if f.omega_trainable);
    let teacher = cfg.teacher_prior && stage == Stage::Fine;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ if stage == Stage::Coarse { 0xC0A5 } else { 0xF1E7 });
    let mut report = StageReport {
        stage,
        sub_stages: Vec::with_capacity(layers),
    };
    let mut order: Vec<usize> = (0..train.obs.len()).collect();
    for active in 1..=layers {
        let started = Instant::now();
        let train0 = mean_loss(&params, phi, train, cfg.val_batch_size, active, n, teacher)?;
        let val0 = mean_loss(&params, phi, val, cfg.val_batch_size, active, n, teacher)?;
        let mut epochs = vec![EpochRecord {
            epoch: 0,
            train_mse: train0,
            val_mse: val0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        }];
        let mut best = (val0, params.snapshot());
        let mut since_best = 0usize;
        let mut state = OptimState::new(&params.snapshot().0[..active]);
        for epoch in 1..=cfg.max_epochs_per_stage {
            let t0 = Instant::now();
            order.shuffle(&mut rng);
            let (mut sse, mut count) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let (s, c, grad) = batch_pass(&params, phi, train, chunk, active, n, teacher, true)?;
                sse += s;
                count += c;
                let grad = grad.expect("requested");
                if !grad.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in {stage:?} stage, {active} active layers"
                    )));
                }
                let (weights, thetas, omega) = match &mut params {
                    StageParams::Coarse(c) => (&mut c.weights, &mut c.thetas, None),
                    StageParams::Fine(f) => (&mut f.weights, &mut f.thetas, Some(&mut f.omega)),
                };
                let omega = if omega_trainable { omega } else { None };
                state.step(&cfg.optimizer, cfg.learning_rate, &mut weights[..active], &mut thetas[..active], omega, &grad);
                for t in thetas[..active].iter_mut() {
                    *t = t.max(cfg.theta_floor);
                }
                if let StageParams::Fine(f) = &mut params {
                    f.omega = f.omega.clamp(cfg.omega_bounds.0, cfg.omega_bounds.1);
                }
            }
            let val_mse = mean_loss(&params, phi, val, cfg.val_batch_size, active, n, teacher)?;
            epochs.push(EpochRecord {
                epoch,
                train_mse: sse / count.max(1) as f64,
                val_mse,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
            log::debug!("{stage:?} layers={active} epoch={epoch} train={:.3e} val={val_mse:.3e}", sse / count.max(1) as f64);
            if val_mse < best.0 {
                best = (val_mse, params.snapshot());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
        }
        params.restore(&best.1);
        report.sub_stages.push(SubStageReport {
            active_layers: active,
            epochs,
            best_val_mse: best.0,
        });
    }
    Ok(report)
}

fn check_same_sensing(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.phi_lifted != val.phi_lifted {
        return Err(Error::ArtifactMismatch(
            "training and validation sets use different sensing matrices".into(),
        ));
    }
    Ok(())
}

/// Trains one stage in place. The fine stage starts from the frozen `coarse`
/// estimate, or from zero without one.
pub fn train_stage_coarse(
    params: &mut CoarseNetParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    cfg.validate()?;
    check_same_sensing(train, val)?;
    let tr = coarse_data(train, cfg.train_count);
    let va = coarse_data(val, cfg.val_count);
    run_stage(StageParams::Coarse(params), train.phi_lifted.view(), &tr, &va, train.config.n, cfg, Stage::Coarse)
}

pub fn train_stage_fine(
    params: &mut FineNetParams,
    coarse: Option<&CoarseNetParams>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    cfg.validate()?;
    check_same_sensing(train, val)?;
    let tr = fine_data(train, cfg.train_count, coarse)?;
    let va = fine_data(val, cfg.val_count, coarse)?;
    run_stage(StageParams::Fine(params), train.phi_lifted.view(), &tr, &va, train.config.n, cfg, Stage::Fine)
}

/// Coarse stage first, then the fine stage on top of the frozen coarse net.
pub fn train_pipeline(
    mut coarse: CoarseNetParams,
    mut fine: FineNetParams,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(CoarseNetParams, FineNetParams, LossReport)> {
    let c = train_stage_coarse(&mut coarse, train, val, cfg)?;
    let f = train_stage_fine(&mut fine, Some(&coarse), train, val, cfg)?;
    Ok((coarse, fine, LossReport { stages: vec![c, f] }))
}
