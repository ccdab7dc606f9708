use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected number of nonzero rows in the concatenated channel, from the
/// union-growth recursion `E(m_l) = a + b·E(m_{l−1})` with
/// `E(|Γ|) = (s̄ + s_c)/2` for every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityModel {
    pub a: f64,
    pub b: f64,
    /// `E(m_L)`, the expected union size over `L` frames in complex rows.
    pub expected_rows: f64,
    /// `2·E(m_L)`, counted over lifted (real/imaginary) rows.
    pub s: f64,
}

impl SparsityModel {
    /// The selection bound the coarse net uses by default: the unlifted
    /// expected row count.
    pub fn s_param(&self) -> f64 {
        self.expected_rows
    }
}

pub fn compute_s(m: usize, frames: usize, s_bar: usize, s_c: usize) -> Result<SparsityModel> {
    if frames == 0 {
        return Err(Error::InvalidArgument("frame count must be at least 1".into()));
    }
    let e = (s_bar + s_c) as f64 / 2.0;
    compute_s_with_mean(m, frames, e, s_c as f64)
}

/// Same recursion with an explicit mean support size.
pub fn compute_s_with_mean(m: usize, frames: usize, mean_size: f64, s_c: f64) -> Result<SparsityModel> {
    let mf = m as f64;
    if mean_size >= mf {
        return Err(Error::InvalidArgument(format!(
            "mean support size {mean_size} must be below M={m}"
        )));
    }
    if !(s_c < mean_size) {
        return Err(Error::InvalidArgument(format!(
            "need s_c < E(|Γ|), got s_c={s_c}, E(|Γ|)={mean_size}"
        )));
    }
    let a = (mean_size - s_c) * mf / (mf - mean_size);
    let b = (mf - 2.0 * mean_size + s_c) / (mf - mean_size);
    let steps = (frames - 1) as i32;
    let bl = b.powi(steps);
    let expected_rows = bl * mean_size + a * (1.0 - bl) / (1.0 - b);
    Ok(SparsityModel {
        a,
        b,
        expected_rows,
        s: 2.0 * expected_rows,
    })
}
