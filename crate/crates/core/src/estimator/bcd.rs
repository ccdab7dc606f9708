use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, group_row_norms, largest_eigenvalue, matmul};

use super::unrolled::{Stack, StackSpec};
use super::Selector;

/// Step applied to the gradient term of the baseline iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1/q` with `q = λ_max(Φ̄ᵀΦ̄)`; the objective is monotone.
    #[default]
    InverseLipschitz,
    /// Unit step, threshold still `λ/q`. No monotonicity guarantee.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcdOptions {
    pub step: StepRule,
    /// Columns sharing one row norm (`N·L` for the joint problem).
    pub group_width: usize,
    /// Evaluate the ℓ₂,₁ objective after every iteration and fail on ascent.
    pub track_objective: bool,
}

impl BcdOptions {
    pub fn joint(group_width: usize) -> Self {
        BcdOptions {
            step: StepRule::InverseLipschitz,
            group_width,
            track_objective: cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcdOutput {
    pub estimate: Array2<f64>,
    /// Objective before the first and after every iteration, when tracked.
    pub objectives: Vec<f64>,
    pub q: f64,
}

/// `W = Φ̄ᵀ/q`, the gradient weight of the baseline and of untrained layers.
pub fn scaled_transpose(phi: ArrayView2<f64>, q: f64) -> Array2<f64> {
    let inv = 1.0 / q;
    phi.t().mapv(|x| x * inv)
}

pub fn gram_eigenvalue(phi: ArrayView2<f64>) -> Result<f64> {
    let gram = phi.t().dot(&phi);
    largest_eigenvalue(gram.view())
}

/// `½‖R̄ − Φ̄S‖²_F + λ·Σ_rows ‖S_row‖₂` with rows grouped by `width` columns.
pub fn l21_objective(phi: ArrayView2<f64>, obs: ArrayView2<f64>, s: ArrayView2<f64>, lambda: f64, width: usize) -> f64 {
    let resid = &obs - &matmul(phi, s, None);
    0.5 * frobenius_sq(resid.view()) + lambda * group_row_norms(s, width).sum()
}

/// Proximal-gradient (block soft-thresholding) iterations for the ℓ₂,₁
/// regularized least-squares problem, started from zero.
pub fn bcd_mmv_solve(
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    lambda: f64,
    iters: usize,
    opts: BcdOptions,
) -> Result<BcdOutput> {
    if iters == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let q = gram_eigenvalue(phi)?;
    if q <= 0.0 {
        return Err(Error::Numeric("sensing matrix is zero".into()));
    }
    let w = match opts.step {
        StepRule::InverseLipschitz => scaled_transpose(phi, q),
        StepRule::Unit => phi.t().to_owned(),
    };
    let theta = lambda / q;
    let weights = vec![w; iters];
    let thetas = vec![theta; iters];
    let stack = Stack {
        weights: &weights,
        thetas: &thetas,
        spec: StackSpec {
            selector: Selector::None,
            p_bounds: (0.0, 0.0),
            pilot_len: 1,
            group_width: opts.group_width,
            total_layers: iters,
        },
    };
    let mut s = Array2::zeros((phi.ncols(), obs.ncols()));
    let check = opts.track_objective && opts.step == StepRule::InverseLipschitz;
    let mut objectives = Vec::new();
    if opts.track_objective {
        objectives.push(l21_objective(phi, obs, s.view(), lambda, opts.group_width));
    }
    // one layer at a time so the objective can be watched between steps
    for k in 0..iters {
        let one = Stack {
            weights: &weights[k..k + 1],
            thetas: &thetas[k..k + 1],
            spec: stack.spec,
        };
        let (next, _) = one.forward(phi, obs, s.view(), None, 1, false, None)?;
        s = next;
        if opts.track_objective {
            let f = l21_objective(phi, obs, s.view(), lambda, opts.group_width);
            let prev = *objectives.last().expect("seeded");
            if check && f > prev + 1e-9 * prev.abs().max(1e-300) {
                return Err(Error::Internal(format!(
                    "objective rose from {prev} to {f} at iteration {}",
                    k + 1
                )));
            }
            objectives.push(f);
        }
    }
    Ok(BcdOutput {
        estimate: s,
        objectives,
        q,
    })
}
