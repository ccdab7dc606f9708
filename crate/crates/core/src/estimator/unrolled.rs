//! Batched forward and reverse passes of an unrolled shrinkage stack.
//!
//! A batch is laid out column-wise: the iterate is `rows × (width·groups)` and
//! every `width`-column group is thresholded on its own (one group per sample
//! for the coarse net, per sample-frame for the fine net, per column for
//! elementwise variants). Each layer computes
//! `V = X + W·(Y − Φ·X)` and then shrinks the rows of each group.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{gradient_step, matmul, MulTally};
use crate::threshold::{fsj_indices, row_norms, schedule_p, selection_count, shrink_rows, ss_indices, Branch};

use super::Selector;

/// Everything the stack needs beyond its trainable tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StackSpec {
    pub selector: Selector,
    /// SS schedule bounds, in rows.
    pub p_bounds: (f64, f64),
    pub pilot_len: usize,
    pub group_width: usize,
    /// Layer count the SS schedule spans.
    pub total_layers: usize,
}

/// Saved intermediates of one layer, enough to differentiate it.
#[derive(Debug, Clone)]
pub(crate) struct LayerRecord {
    pub residual: Array2<f64>,
    pub pre: Array2<f64>,
    /// `rows × groups`.
    pub norms: Array2<f64>,
    /// Per group, per row.
    pub branches: Vec<Vec<Branch>>,
    pub theta: f64,
}

/// Smallest distance of any row norm to a branch boundary, and of any two
/// adjacent ranked norms when a ranking rule is active. Used to keep
/// finite-difference checks away from kinks.
pub(crate) fn record_margin(rec: &LayerRecord, weights: Option<&Array2<f64>>, selector: Selector) -> f64 {
    let mut margin = f64::INFINITY;
    for g in 0..rec.norms.ncols() {
        let mut col: Vec<f64> = rec.norms.column(g).to_vec();
        for (j, &n) in col.iter().enumerate() {
            let w = weights.map(|w| w[[j, g]]).unwrap_or(1.0);
            margin = margin.min((n - rec.theta).abs());
            margin = margin.min((n - rec.theta * w).abs());
        }
        if selector != Selector::None {
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in col.windows(2) {
                // zero rows tie legitimately; they are never selected
                if w[0] > 0.0 {
                    margin = margin.min(w[1] - w[0]);
                }
            }
        }
    }
    margin
}

pub(crate) struct Stack<'a> {
    pub weights: &'a [Array2<f64>],
    pub thetas: &'a [f64],
    pub spec: StackSpec,
}

impl<'a> Stack<'a> {
    fn check_shapes(&self, phi: ArrayView2<f64>, obs: ArrayView2<f64>, init: ArrayView2<f64>) -> Result<()> {
        let rows = phi.ncols();
        if init.nrows() != rows || obs.nrows() != phi.nrows() || obs.ncols() != init.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "phi {:?}, observations {:?}, iterate {:?}",
                phi.dim(),
                obs.dim(),
                init.dim()
            )));
        }
        if self.spec.group_width == 0 || init.ncols() % self.spec.group_width != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} columns do not split into groups of {}",
                init.ncols(),
                self.spec.group_width
            )));
        }
        for w in self.weights {
            if w.dim() != (rows, phi.nrows()) {
                return Err(Error::ShapeMismatch(format!(
                    "layer weight {:?}, expected {:?}",
                    w.dim(),
                    (rows, phi.nrows())
                )));
            }
        }
        if self.thetas.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} thresholds for {} layers",
                self.thetas.len(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Runs the first `active` layers. `row_weights` is `rows × groups`.
    pub fn forward(
        &self,
        phi: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        init: ArrayView2<f64>,
        row_weights: Option<&Array2<f64>>,
        active: usize,
        record: bool,
        mut tally: Option<&mut MulTally>,
    ) -> Result<(Array2<f64>, Vec<LayerRecord>)> {
        self.check_shapes(phi, obs, init)?;
        let width = self.spec.group_width;
        let groups = init.ncols() / width;
        let rows = init.nrows();
        if let Some(w) = row_weights {
            if w.dim() != (rows, groups) {
                return Err(Error::ShapeMismatch(format!(
                    "row weights {:?}, expected {:?}",
                    w.dim(),
                    (rows, groups)
                )));
            }
        }
        let active = active.min(self.weights.len());
        let mut x = init.to_owned();
        let mut records = Vec::with_capacity(if record { active } else { 0 });
        for l in 0..active {
            let theta = self.thetas[l];
            let (mut v, residual) =
                gradient_step(x.view(), self.weights[l].view(), phi, obs, tally.as_deref_mut());
            let pre = if record { Some(v.clone()) } else { None };
            let mut norms = Array2::zeros((rows, groups));
            let mut branches = Vec::with_capacity(groups);
            for g in 0..groups {
                let mut block = v.slice_mut(s![.., g * width..(g + 1) * width]);
                let n = row_norms(block.view(), tally.as_deref_mut());
                let mask = self.select(&n, l + 1)?;
                let wcol = row_weights.map(|w| w.column(g).to_vec());
                let br = shrink_rows(
                    block.view_mut(),
                    &n,
                    theta,
                    wcol.as_deref(),
                    &mask,
                    tally.as_deref_mut(),
                );
                if record {
                    norms.column_mut(g).assign(&ndarray::Array1::from(n));
                    branches.push(br);
                }
            }
            if v.iter().any(|z| !z.is_finite()) {
                return Err(Error::Numeric(format!("non-finite iterate at layer {}", l + 1)));
            }
            if record {
                records.push(LayerRecord {
                    residual,
                    pre: pre.expect("recorded"),
                    norms,
                    branches,
                    theta,
                });
            }
            x = v;
        }
        Ok((x, records))
    }

    fn select(&self, norms: &[f64], layer: usize) -> Result<Vec<bool>> {
        let rows = norms.len();
        let mut mask = vec![false; rows];
        match self.spec.selector {
            Selector::None => {}
            Selector::Bss => {
                let (lo, hi) = self.spec.p_bounds;
                let p = schedule_p(layer, self.spec.total_layers.max(layer), lo, hi, rows)?;
                for j in ss_indices(norms, selection_count(p, rows)) {
                    mask[j] = true;
                }
            }
            Selector::Bfsj => {
                if rows >= 2 {
                    for j in fsj_indices(norms, self.spec.pilot_len).0 {
                        mask[j] = true;
                    }
                }
            }
        }
        Ok(mask)
    }
}

/// Gradients of one stack with respect to its parameters.
#[derive(Debug, Clone)]
pub(crate) struct StackGrads {
    pub d_weights: Vec<Array2<f64>>,
    pub d_thetas: Vec<f64>,
    pub d_omega: f64,
}

/// Reverse pass through recorded layers given `d_out = ∂loss/∂output`.
///
/// `row_weights` and `prior` (both `rows × groups`) must be the ones used in
/// the forward pass; `omega` is the scalar the prior rows were weighted by.
pub(crate) fn backward(
    weights: &[Array2<f64>],
    phi: ArrayView2<f64>,
    records: &[LayerRecord],
    width: usize,
    row_weights: Option<&Array2<f64>>,
    prior: Option<&Array2<bool>>,
    d_out: Array2<f64>,
) -> Result<StackGrads> {
    let active = records.len();
    if active > weights.len() {
        return Err(Error::IncompleteRecord(format!(
            "{active} records for {} layers",
            weights.len()
        )));
    }
    let mut d_weights: Vec<Array2<f64>> = weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut d_thetas = vec![0.0; weights.len()];
    let mut d_omega = 0.0;
    let mut grad = d_out;
    for l in (0..active).rev() {
        let rec = &records[l];
        if rec.pre.dim() != grad.dim() {
            return Err(Error::IncompleteRecord(format!(
                "layer {} record {:?} vs gradient {:?}",
                l + 1,
                rec.pre.dim(),
                grad.dim()
            )));
        }
        let groups = rec.branches.len();
        if groups * width != grad.ncols() {
            return Err(Error::IncompleteRecord(format!("layer {} lacks branch data", l + 1)));
        }
        let theta = rec.theta;
        let mut d_pre = Array2::<f64>::zeros(grad.dim());
        for g in 0..groups {
            let cols = g * width..(g + 1) * width;
            for j in 0..grad.nrows() {
                let dout = grad.slice(s![j, cols.clone()]);
                match rec.branches[g][j] {
                    Branch::Zero => {}
                    Branch::Kept => d_pre.slice_mut(s![j, cols.clone()]).assign(&dout),
                    Branch::Soft => {
                        let v = rec.pre.slice(s![j, cols.clone()]);
                        let n = rec.norms[[j, g]];
                        let w = row_weights.map(|w| w[[j, g]]).unwrap_or(1.0);
                        let thr = theta * w;
                        let vd: f64 = v.iter().zip(dout.iter()).map(|(a, b)| a * b).sum();
                        let k = 1.0 - thr / n;
                        let c = thr * vd / (n * n * n);
                        let mut dst = d_pre.slice_mut(s![j, cols.clone()]);
                        for ((d, &a), &b) in dst.iter_mut().zip(v.iter()).zip(dout.iter()) {
                            *d = k * b + c * a;
                        }
                        let d_thr = -vd / n;
                        d_thetas[l] += w * d_thr;
                        if prior.map(|p| p[[j, g]]).unwrap_or(false) {
                            d_omega += theta * d_thr;
                        }
                    }
                }
            }
        }
        // V = X + W·(Y − Φ·X)
        d_weights[l] = d_pre.dot(&rec.residual.t());
        if l > 0 {
            let wt_d = matmul(weights[l].t(), d_pre.view(), None);
            let back = matmul(phi.t(), wt_d.view(), None);
            grad = d_pre - back;
        }
    }
    Ok(StackGrads {
        d_weights,
        d_thetas,
        d_omega,
    })
}
