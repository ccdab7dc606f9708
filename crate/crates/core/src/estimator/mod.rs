//! Coarse estimation net, fine correction net, the two-stage pipeline and
//! the ℓ₂,₁ baseline they unroll.
//!
//! All inputs here are real-lifted: `Φ̄` is `2T × 2M`, the concatenated
//! observation `R̄` is `2T × N·L`, the concatenated channel `Ḡ` is `2M × N·L`
//! and frame `i` occupies columns `i·N .. (i+1)·N` of both.

mod bcd;
mod sparsity;
pub(crate) mod unrolled;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MulTally;
use crate::simgen::SystemConfig;
use crate::threshold::SelectionRule;

pub use bcd::{bcd_mmv_solve, gram_eigenvalue, l21_objective, scaled_transpose, BcdOptions, BcdOutput, StepRule};
pub use sparsity::{compute_s, compute_s_with_mean, SparsityModel};

pub use crate::linalg::largest_eigenvalue;

use unrolled::{Stack, StackSpec};

/// Support-selection rule used inside the shrinkage of every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Bss,
    Bfsj,
    None,
}

impl Selector {
    pub fn rule(self) -> SelectionRule {
        match self {
            Selector::Bss => SelectionRule::Ss,
            Selector::Bfsj => SelectionRule::Fsj,
            Selector::None => SelectionRule::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseNetParams {
    /// `L_e` matrices, `2M × 2T`.
    pub weights: Vec<Array2<f64>>,
    pub thetas: Vec<f64>,
    pub selector: Selector,
    /// Upper SS bound in rows.
    pub s_param: f64,
    /// Lower SS bound in rows.
    pub p_min: f64,
    /// Columns sharing one row norm; `N·L` for the joint net.
    pub group_width: usize,
    pub pilot_len: usize,
}

impl CoarseNetParams {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn stack(&self) -> Stack<'_> {
        Stack {
            weights: &self.weights,
            thetas: &self.thetas,
            spec: StackSpec {
                selector: self.selector,
                p_bounds: (self.p_min, self.s_param),
                pilot_len: self.pilot_len,
                group_width: self.group_width,
                total_layers: self.weights.len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineNetParams {
    /// `L_c` matrices, `2M × 2T`.
    pub weights: Vec<Array2<f64>>,
    pub thetas: Vec<f64>,
    pub omega: f64,
    /// When false `ω` stays at its value (1 for the variants without the
    /// previous-frame prior) during training.
    pub omega_trainable: bool,
    pub selector: Selector,
    /// SS bounds in rows, `(s_c, s̄)`.
    pub p_bounds: (f64, f64),
    pub pilot_len: usize,
    /// Extend the prior with the partner lifted row (`j ± M`).
    pub symmetrize_prior: bool,
}

impl FineNetParams {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn stack(&self, width: usize) -> Stack<'_> {
        Stack {
            weights: &self.weights,
            thetas: &self.thetas,
            spec: StackSpec {
                selector: self.selector,
                p_bounds: self.p_bounds,
                pilot_len: self.pilot_len,
                group_width: width,
                total_layers: self.weights.len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    /// `G̃`, `2M × N·L`.
    pub coarse: Array2<f64>,
    /// `Ĝ`, `2M × N·L`.
    pub refined: Array2<f64>,
    pub per_frame_supports: Vec<Vec<usize>>,
    /// Coarse iterates followed by the fine iterates of every frame.
    pub iterate_trace: Option<Vec<Array2<f64>>>,
}

fn check_theta_positive(thetas: &[f64]) -> Result<()> {
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold {t} must be positive")));
    }
    Ok(())
}

/// Runs every coarse layer from the zero iterate.
pub fn coarse_forward(params: &CoarseNetParams, phi: ArrayView2<f64>, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
    coarse_forward_counted(params, phi, obs, None)
}

pub fn coarse_forward_counted(
    params: &CoarseNetParams,
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    tally: Option<&mut MulTally>,
) -> Result<Array2<f64>> {
    check_theta_positive(&params.thetas)?;
    let init = Array2::zeros((phi.ncols(), obs.ncols()));
    let (out, _) = params
        .stack()
        .forward(phi, obs, init.view(), None, params.layers(), false, tally)?;
    Ok(out)
}

/// Rows whose ℓ₂ norm exceeds `tol`.
pub fn extract_support(frame: ArrayView2<f64>, tol: f64) -> Vec<usize> {
    frame
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().map(|x| x * x).sum::<f64>().sqrt() > tol)
        .map(|(j, _)| j)
        .collect()
}

/// Prior-weight column: `ω` on prior rows (and their lifted partners when
/// symmetrized), `1` elsewhere. Returns the weights and the membership mask.
pub(crate) fn prior_weights(rows: usize, prior: &[usize], omega: f64, symmetrize: bool) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut member = vec![false; rows];
    let half = rows / 2;
    for &j in prior {
        if j >= rows {
            return Err(Error::InvalidArgument(format!("prior row {j} >= {rows}")));
        }
        member[j] = true;
        if symmetrize {
            member[if j < half { j + half } else { j - half }] = true;
        }
    }
    let w = member.iter().map(|&p| if p { omega } else { 1.0 }).collect();
    Ok((w, member))
}

/// One frame of the fine net, started from `init` with prior support `prior`.
pub fn fine_forward(
    params: &FineNetParams,
    phi: ArrayView2<f64>,
    obs_frame: ArrayView2<f64>,
    init: ArrayView2<f64>,
    prior: &[usize],
) -> Result<Array2<f64>> {
    fine_forward_counted(params, phi, obs_frame, init, prior, None)
}

pub fn fine_forward_counted(
    params: &FineNetParams,
    phi: ArrayView2<f64>,
    obs_frame: ArrayView2<f64>,
    init: ArrayView2<f64>,
    prior: &[usize],
    tally: Option<&mut MulTally>,
) -> Result<Array2<f64>> {
    check_theta_positive(&params.thetas)?;
    if !(0.0..=1.0).contains(&params.omega) {
        return Err(Error::InvalidArgument(format!("omega {} outside [0, 1]", params.omega)));
    }
    let rows = phi.ncols();
    let (w, _) = prior_weights(rows, prior, params.omega, params.symmetrize_prior)?;
    let weights = Array2::from_shape_vec((rows, 1), w).expect("column");
    let (out, _) = params.stack(init.ncols()).forward(
        phi,
        obs_frame,
        init,
        Some(&weights),
        params.layers(),
        false,
        tally,
    )?;
    Ok(out)
}

/// Coarse net over all frames jointly, then the fine net frame by frame with
/// each frame's estimated support as the prior of the next. Without a coarse
/// net the fine net starts from zero.
pub fn two_stage_estimate(
    coarse: Option<&CoarseNetParams>,
    fine: &FineNetParams,
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    n: usize,
) -> Result<EstimateResult> {
    two_stage_estimate_with(coarse, fine, phi, obs, n, false)
}

pub fn two_stage_estimate_with(
    coarse: Option<&CoarseNetParams>,
    fine: &FineNetParams,
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    n: usize,
    trace: bool,
) -> Result<EstimateResult> {
    if n == 0 || obs.ncols() % n != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} observation columns with N={n}",
            obs.ncols()
        )));
    }
    let frames = obs.ncols() / n;
    let rows = phi.ncols();
    let mut trace_out = trace.then(Vec::new);
    let coarse_est = match coarse {
        Some(c) => {
            check_theta_positive(&c.thetas)?;
            let init = Array2::zeros((rows, obs.ncols()));
            let (out, recs) = c
                .stack()
                .forward(phi, obs, init.view(), None, c.layers(), trace, None)?;
            if let Some(t) = trace_out.as_mut() {
                t.extend(recs.into_iter().map(|r| r.pre));
            }
            out
        }
        None => Array2::zeros((rows, obs.ncols())),
    };
    let mut refined = Array2::zeros(coarse_est.dim());
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(frames);
    for i in 0..frames {
        let cols = s![.., i * n..(i + 1) * n];
        let prior: &[usize] = if i == 0 { &[] } else { &supports[i - 1] };
        let est = if fine.layers() == 0 {
            coarse_est.slice(cols).to_owned()
        } else {
            fine_forward(fine, phi, obs.slice(cols), coarse_est.slice(cols), prior)?
        };
        if let Some(t) = trace_out.as_mut() {
            t.push(est.clone());
        }
        supports.push(extract_support(est.view(), 0.0));
        refined.slice_mut(cols).assign(&est);
    }
    Ok(EstimateResult {
        coarse: coarse_est,
        refined,
        per_frame_supports: supports,
        iterate_trace: trace_out,
    })
}

/// Untrained nets mirroring the baseline iteration: `W = Φ̄ᵀ/q`, `θ = λ/q`,
/// `ω = 0.5`, coarse SS bounds `(s_c, S)` and fine bounds `(s_c, s̄)`.
pub fn init_params(cfg: &SystemConfig, phi: ArrayView2<f64>, lambda: f64) -> Result<(CoarseNetParams, FineNetParams)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if phi.dim() != (2 * cfg.t, 2 * cfg.m) {
        return Err(Error::ShapeMismatch(format!(
            "lifted sensing matrix {:?}, expected {:?}",
            phi.dim(),
            (2 * cfg.t, 2 * cfg.m)
        )));
    }
    let q = gram_eigenvalue(phi)?;
    let w = scaled_transpose(phi, q);
    let theta = lambda / q;
    let model = compute_s(cfg.m, cfg.frames, cfg.s_bar, cfg.s_c)?;
    let coarse = CoarseNetParams {
        weights: vec![w.clone(); cfg.layers_coarse],
        thetas: vec![theta; cfg.layers_coarse],
        selector: Selector::Bss,
        s_param: model.s_param().min(cfg.lifted_rows() as f64),
        p_min: cfg.s_c as f64,
        group_width: cfg.concat_cols(),
        pilot_len: cfg.t,
    };
    let fine = FineNetParams {
        weights: vec![w; cfg.layers_fine],
        thetas: vec![theta; cfg.layers_fine],
        omega: 0.5,
        omega_trainable: true,
        selector: Selector::Bss,
        p_bounds: (cfg.s_c as f64, cfg.s_bar as f64),
        pilot_len: cfg.t,
        symmetrize_prior: false,
    };
    Ok((coarse, fine))
}

/// `0.1 ×` the mean over `observations` of the largest row norm of `Φ̄ᵀR̄`.
pub fn default_lambda<'a>(phi: ArrayView2<f64>, observations: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for obs in observations {
        let back = phi.t().dot(&obs);
        let max = back
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        acc += max;
        count += 1;
    }
    if count == 0 || !(acc > 0.0) {
        return Err(Error::InvalidArgument("calibration batch carries no signal".into()));
    }
    Ok(0.1 * acc / count as f64)
}

#[cfg(test)]
mod tests;
