//! Row-wise shrinkage operators and support-selection rules.
//!
//! Every operator acts on whole rows: a row is either passed through, scaled
//! towards zero along its own direction, or zeroed. Rows at exactly the
//! threshold are zeroed and ties in any ranking break towards the smaller row
//! index.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MulTally;

/// A real matrix together with its per-row ℓ₂ norms.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    pub mat: Array2<f64>,
    pub row_norms: Vec<f64>,
}

impl RowMatrix {
    pub fn new(mat: Array2<f64>) -> Self {
        let row_norms = row_norms(mat.view(), None);
        RowMatrix { mat, row_norms }
    }

    pub fn rows(&self) -> usize {
        self.mat.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    /// Fixed-fraction selection of the largest rows.
    Ss,
    /// First-significant-jump boundary on the sorted row norms.
    Fsj,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSelection {
    /// Selected row indices, ascending.
    pub indices: Vec<usize>,
    pub rule: SelectionRule,
    /// Boundary value (FSJ only).
    pub beta: Option<f64>,
    /// Selection fraction (SS only).
    pub p_l: Option<f64>,
}

impl SupportSelection {
    pub fn empty() -> Self {
        SupportSelection {
            indices: Vec::new(),
            rule: SelectionRule::None,
            beta: None,
            p_l: None,
        }
    }

    pub fn mask(&self, rows: usize) -> Vec<bool> {
        let mut m = vec![false; rows];
        for &j in &self.indices {
            if j < rows {
                m[j] = true;
            }
        }
        m
    }
}

/// Per-row threshold multipliers: `ω` on prior rows, `1` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWeights {
    w: Vec<f64>,
}

impl RowWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidArgument(format!("row weight {bad} outside [0, 1]")));
        }
        Ok(RowWeights { w })
    }

    pub fn ones(rows: usize) -> Self {
        RowWeights { w: vec![1.0; rows] }
    }

    pub fn from_prior(rows: usize, prior: &[usize], omega: f64) -> Result<Self> {
        let mut w = vec![1.0; rows];
        for &j in prior {
            if j >= rows {
                return Err(Error::InvalidArgument(format!("prior row {j} >= {rows}")));
            }
            w[j] = omega;
        }
        RowWeights::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }
}

pub(crate) fn row_norms(mat: ArrayView2<f64>, tally: Option<&mut MulTally>) -> Vec<f64> {
    if let Some(t) = tally {
        t.norms += mat.len() as u64;
    }
    mat.rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

/// Which branch of the shrinkage a row took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Branch {
    Kept,
    Soft,
    Zero,
}

/// In-place row shrinkage shared by every operator in this module.
///
/// Branch order: selected rows above the unweighted `theta` pass through,
/// then rows above their weighted threshold are soft-shrunk, the rest zeroed.
pub(crate) fn shrink_rows(
    mut mat: ArrayViewMut2<f64>,
    norms: &[f64],
    theta: f64,
    weights: Option<&[f64]>,
    selected: &[bool],
    mut tally: Option<&mut MulTally>,
) -> Vec<Branch> {
    let rows = mat.nrows();
    let mut branches = Vec::with_capacity(rows);
    if let (Some(t), Some(_)) = (tally.as_deref_mut(), weights) {
        // θ·ω_j products plus the weighted shrink factor, one each per row
        t.weight_products += 2 * rows as u64;
    }
    for (j, mut row) in mat.rows_mut().into_iter().enumerate() {
        let norm = norms[j];
        let thr = match weights {
            Some(w) => theta * w[j],
            None => theta,
        };
        let (branch, factor) = if selected[j] && norm > theta {
            (Branch::Kept, 1.0)
        } else if norm > thr {
            (Branch::Soft, (norm - thr) / norm)
        } else {
            (Branch::Zero, 0.0)
        };
        if let Some(t) = tally.as_deref_mut() {
            t.scalings += row.len() as u64;
        }
        match branch {
            Branch::Kept => {}
            Branch::Soft => row.mapv_inplace(|x| x * factor),
            Branch::Zero => row.fill(0.0),
        }
        branches.push(branch);
    }
    branches
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "threshold must be a finite nonnegative number, got {theta}"
        )));
    }
    Ok(())
}

/// Row soft thresholding: `row·(‖row‖ − τ)/‖row‖` above `τ`, zero otherwise.
pub fn soft_row_threshold(v: &RowMatrix, tau: f64) -> Result<RowMatrix> {
    check_theta(tau)?;
    let mut mat = v.mat.clone();
    let none = vec![false; v.rows()];
    shrink_rows(mat.view_mut(), &v.row_norms, tau, None, &none, None);
    Ok(RowMatrix::new(mat))
}

/// Linear selection-fraction schedule from `p_min/rows` at layer 1 to
/// `p_max/rows` at the last layer. Layers are 1-based.
pub fn schedule_p(l: usize, layers: usize, p_min: f64, p_max: f64, rows: usize) -> Result<f64> {
    if layers == 0 || l == 0 || l > layers {
        return Err(Error::InvalidArgument(format!(
            "layer {l} outside 1..={layers}"
        )));
    }
    if !(0.0 <= p_min && p_min <= p_max && p_max <= rows as f64) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_min <= p_max <= rows, got {p_min}, {p_max}, {rows}"
        )));
    }
    let rows = rows as f64;
    if layers == 1 {
        return Ok(p_min / rows);
    }
    Ok(p_min / rows + (p_max - p_min) * (l - 1) as f64 / (rows * (layers - 1) as f64))
}

/// `⌊p·rows⌋`, tolerant of the rounding in `p = k/rows`.
pub(crate) fn selection_count(p_l: f64, rows: usize) -> usize {
    ((p_l * rows as f64) + 1e-9).floor().max(0.0) as usize
}

pub(crate) fn ss_indices(norms: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order.into_iter().take(count.min(norms.len())).collect();
    picked.sort_unstable();
    picked
}

/// Returns `(indices, beta, k)` where `k` is the 1-based sorted rank of the
/// boundary row, `None` when no gap qualifies.
pub(crate) fn fsj_indices(norms: &[f64], pilot_len: usize) -> (Vec<usize>, f64, Option<usize>) {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| {
        norms[a]
            .partial_cmp(&norms[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let max = order.last().map(|&j| norms[j]).unwrap_or(0.0);
    let gap = max / pilot_len as f64;
    let k = order
        .windows(2)
        .position(|w| norms[w[1]] - norms[w[0]] > gap);
    match k {
        None => (Vec::new(), max, None),
        Some(pos) => {
            let beta = norms[order[pos]];
            let indices = (0..norms.len()).filter(|&j| norms[j] > beta).collect();
            (indices, beta, Some(pos + 1))
        }
    }
}

/// The `⌊p_l·rows⌋` rows of largest norm.
pub fn select_support_ss(v: &RowMatrix, p_l: f64) -> Result<SupportSelection> {
    if !(0.0..=1.0).contains(&p_l) {
        return Err(Error::InvalidArgument(format!("fraction {p_l} outside [0, 1]")));
    }
    let count = selection_count(p_l, v.rows());
    Ok(SupportSelection {
        indices: ss_indices(&v.row_norms, count),
        rule: SelectionRule::Ss,
        beta: None,
        p_l: Some(p_l),
    })
}

/// Rows above the first significant jump in the ascending norm sequence,
/// where a jump is significant when it exceeds `max norm / pilot_len`.
pub fn select_support_fsj(v: &RowMatrix, pilot_len: usize) -> Result<SupportSelection> {
    if pilot_len == 0 {
        return Err(Error::InvalidArgument("pilot length must be at least 1".into()));
    }
    let (indices, beta, _) = fsj_indices(&v.row_norms, pilot_len);
    Ok(SupportSelection {
        indices,
        rule: SelectionRule::Fsj,
        beta: Some(beta),
        p_l: None,
    })
}

/// Block thresholding with support selection: selected rows above `theta`
/// are kept without attenuation.
pub fn bss_threshold(v: &RowMatrix, theta: f64, omega_set: &SupportSelection) -> Result<RowMatrix> {
    check_theta(theta)?;
    let mut mat = v.mat.clone();
    let mask = omega_set.mask(v.rows());
    shrink_rows(mat.view_mut(), &v.row_norms, theta, None, &mask, None);
    Ok(RowMatrix::new(mat))
}

/// [`bss_threshold`] with a per-row threshold `theta·ω_j` on unselected rows.
pub fn weighted_bss_threshold(
    v: &RowMatrix,
    theta: f64,
    weights: &RowWeights,
    omega_set: &SupportSelection,
) -> Result<RowMatrix> {
    check_theta(theta)?;
    if weights.w.len() != v.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} rows",
            weights.w.len(),
            v.rows()
        )));
    }
    let mut mat = v.mat.clone();
    let mask = omega_set.mask(v.rows());
    shrink_rows(
        mat.view_mut(),
        &v.row_norms,
        theta,
        Some(&weights.w),
        &mask,
        None,
    );
    Ok(RowMatrix::new(mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn rows_of(norms: &[f64]) -> RowMatrix {
        RowMatrix::new(Array2::from_shape_fn((norms.len(), 1), |(i, _)| norms[i]))
    }

    fn sel(indices: Vec<usize>) -> SupportSelection {
        SupportSelection {
            indices,
            ..SupportSelection::empty()
        }
    }

    #[test]
    fn soft_threshold_cases() {
        let v = RowMatrix::new(array![[3.0, 4.0]]);
        let out = soft_row_threshold(&v, 1.0).unwrap();
        assert_abs_diff_eq!(out.mat[[0, 0]], 2.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out.mat[[0, 1]], 3.2, epsilon = 1e-15);
        assert_abs_diff_eq!(out.row_norms[0], 4.0, epsilon = 1e-15);
        assert_eq!(soft_row_threshold(&v, 0.0).unwrap().mat, v.mat);
        let edge = soft_row_threshold(&v, 5.0).unwrap();
        assert!(edge.mat.iter().all(|&x| x == 0.0));
        assert!(soft_row_threshold(&v, -1.0).is_err());
    }

    #[test]
    fn zero_rows_stay_zero() {
        let v = RowMatrix::new(array![[0.0, 0.0], [1.0, 0.0]]);
        let out = bss_threshold(&v, 0.0, &sel(vec![0])).unwrap();
        assert_eq!(out.mat.row(0).to_vec(), vec![0.0, 0.0]);
        assert!(out.mat.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn schedule_endpoints_and_interior() {
        assert_abs_diff_eq!(schedule_p(1, 8, 10.0, 27.0, 128).unwrap(), 10.0 / 128.0);
        assert_abs_diff_eq!(
            schedule_p(8, 8, 10.0, 27.0, 128).unwrap(),
            27.0 / 128.0,
            epsilon = 1e-15
        );
        let p = schedule_p(4, 8, 10.0, 27.0, 128).unwrap();
        assert_abs_diff_eq!(p, (10.0 + 17.0 * 3.0 / 7.0) / 128.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.1350, epsilon = 1e-4);
        assert_abs_diff_eq!(schedule_p(1, 1, 3.0, 9.0, 10).unwrap(), 0.3);
        assert!(schedule_p(0, 8, 1.0, 2.0, 10).is_err());
        assert!(schedule_p(9, 8, 1.0, 2.0, 10).is_err());
    }

    #[test]
    fn ss_selection_cases() {
        let v = rows_of(&[0.1, 0.9, 0.5, 0.9]);
        assert!(select_support_ss(&v, 0.0).unwrap().indices.is_empty());
        assert_eq!(select_support_ss(&v, 1.0).unwrap().indices, vec![0, 1, 2, 3]);
        // tie at 0.9 resolved by index; 1-based {2, 4}
        assert_eq!(select_support_ss(&v, 0.5).unwrap().indices, vec![1, 3]);
        let v3 = rows_of(&[0.3, 0.9, 0.5]);
        assert_eq!(select_support_ss(&v3, 0.4).unwrap().indices, vec![1]);
        assert!(select_support_ss(&v, 1.5).is_err());
    }

    #[test]
    fn ss_count_survives_rounding() {
        for rows in 1..300usize {
            for k in 0..=rows {
                assert_eq!(selection_count(k as f64 / rows as f64, rows), k);
            }
        }
    }

    #[test]
    fn fsj_hand_traces() {
        let v = rows_of(&[0.01, 0.02, 0.05, 1.0, 1.2]);
        let s = select_support_fsj(&v, 10).unwrap();
        assert_eq!(s.indices, vec![3, 4]);
        assert_eq!(s.beta, Some(0.05));

        let v = rows_of(&[0.0, 0.0, 5.0]);
        let s = select_support_fsj(&v, 5).unwrap();
        assert_eq!(s.indices, vec![2]);
        assert_eq!(s.beta, Some(0.0));

        let v = rows_of(&[0.7; 6]);
        let s = select_support_fsj(&v, 4).unwrap();
        assert!(s.indices.is_empty());
        assert_eq!(s.beta, Some(0.7));

        let v = rows_of(&[0.0; 4]);
        assert!(select_support_fsj(&v, 4).unwrap().indices.is_empty());
    }

    #[test]
    fn bss_branches() {
        let v = RowMatrix::new(array![[3.0, 4.0]]);
        assert_eq!(bss_threshold(&v, 1.0, &sel(vec![0])).unwrap().mat, v.mat);
        let out = bss_threshold(&v, 1.0, &sel(vec![])).unwrap();
        assert_abs_diff_eq!(out.mat[[0, 0]], 2.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out.mat[[0, 1]], 3.2, epsilon = 1e-15);
        assert!(bss_threshold(&v, -0.1, &sel(vec![])).is_err());
    }

    #[test]
    fn weighted_bss_branches() {
        let v = RowMatrix::new(array![[3.0, 4.0]]);
        let half = RowWeights::new(vec![0.5]).unwrap();
        let out = weighted_bss_threshold(&v, 1.0, &half, &sel(vec![])).unwrap();
        assert_abs_diff_eq!(out.mat[[0, 0]], 2.7, epsilon = 1e-15);
        assert_abs_diff_eq!(out.mat[[0, 1]], 3.6, epsilon = 1e-15);
        let zero = RowWeights::new(vec![0.0]).unwrap();
        let out = weighted_bss_threshold(&v, 1.0, &zero, &sel(vec![])).unwrap();
        assert_eq!(out.mat, v.mat);
        assert!(RowWeights::new(vec![1.5]).is_err());
        assert!(RowWeights::from_prior(3, &[5], 0.5).is_err());
    }

    #[test]
    fn weighted_branch_order_for_selected_rows_below_theta() {
        // selected row with θ·ω < ‖row‖ ≤ θ falls to the weighted soft branch
        let v = RowMatrix::new(array![[0.6, 0.8]]);
        let w = RowWeights::new(vec![0.5]).unwrap();
        let out = weighted_bss_threshold(&v, 1.0, &w, &sel(vec![0])).unwrap();
        assert_abs_diff_eq!(out.row_norms[0], 0.5, epsilon = 1e-15);
    }

    fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..12, 1usize..5).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn output_rows_are_shrunk_copies(
            mat in arb_matrix(),
            theta in 0.0f64..4.0,
            pick in proptest::collection::vec(any::<bool>(), 12),
            omega in 0.0f64..=1.0,
        ) {
            let v = RowMatrix::new(mat);
            let chosen: Vec<usize> = (0..v.rows()).filter(|&j| pick[j]).collect();
            let w = RowWeights::from_prior(v.rows(), &chosen, omega).unwrap();
            let out = weighted_bss_threshold(&v, theta, &w, &sel(chosen.clone())).unwrap();
            for j in 0..v.rows() {
                let (a, b) = (v.mat.row(j), out.mat.row(j));
                prop_assert!(out.row_norms[j] <= v.row_norms[j] * (1.0 + 1e-12));
                if v.row_norms[j] > 0.0 && out.row_norms[j] > 0.0 {
                    let k = out.row_norms[j] / v.row_norms[j];
                    for (x, y) in a.iter().zip(b.iter()) {
                        prop_assert!((x * k - y).abs() <= 1e-12 * (1.0 + x.abs()));
                    }
                }
            }
        }

        #[test]
        fn reductions_are_bitwise(mat in arb_matrix(), theta in 0.0f64..4.0) {
            let v = RowMatrix::new(mat);
            let empty = sel(vec![]);
            prop_assert_eq!(
                bss_threshold(&v, theta, &empty).unwrap().mat,
                soft_row_threshold(&v, theta).unwrap().mat
            );
            let top = select_support_ss(&v, 0.5).unwrap();
            prop_assert_eq!(
                weighted_bss_threshold(&v, theta, &RowWeights::ones(v.rows()), &top).unwrap().mat,
                bss_threshold(&v, theta, &top).unwrap().mat
            );
        }

        #[test]
        fn larger_theta_never_grows_rows(mat in arb_matrix(), a in 0.0f64..3.0, d in 0.0f64..2.0) {
            let v = RowMatrix::new(mat);
            let s = select_support_ss(&v, 0.3).unwrap();
            let lo = bss_threshold(&v, a, &s).unwrap();
            let hi = bss_threshold(&v, a + d, &s).unwrap();
            for j in 0..v.rows() {
                prop_assert!(hi.row_norms[j] <= lo.row_norms[j] + 1e-12);
            }
        }

        #[test]
        fn fsj_separates(norms in proptest::collection::vec(0.0f64..5.0, 2..40), t in 1usize..40) {
            let v = rows_of(&norms);
            let s = select_support_fsj(&v, t).unwrap();
            let beta = s.beta.unwrap();
            for &j in &s.indices {
                prop_assert!(norms[j] > beta);
            }
            let (_, _, k) = fsj_indices(&norms, t);
            if let Some(k) = k {
                let mut sorted = norms.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for x in &sorted[..k] {
                    prop_assert!(beta >= *x);
                }
            } else {
                prop_assert!(s.indices.is_empty());
            }
        }

        #[test]
        fn ss_cardinality(norms in proptest::collection::vec(0.0f64..5.0, 1..40), p in 0.0f64..=1.0) {
            let v = rows_of(&norms);
            let s = select_support_ss(&v, p).unwrap();
            prop_assert_eq!(s.indices.len(), selection_count(p, norms.len()));
            let min_sel = s.indices.iter().map(|&j| norms[j]).fold(f64::INFINITY, f64::min);
            for j in 0..norms.len() {
                if !s.indices.contains(&j) {
                    prop_assert!(norms[j] <= min_sel);
                }
            }
        }
    }
}
