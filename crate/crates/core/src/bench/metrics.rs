use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;

/// Reported value for an exact estimate, where the logarithm diverges.
pub const NMSE_FLOOR_DB: f64 = -150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NmseVariant {
    /// Mean of `‖Ĝ − G‖_F / ‖G‖_F` before the logarithm.
    #[default]
    PaperUnsquared,
    /// Mean of `‖Ĝ − G‖²_F / ‖G‖²_F`.
    Squared,
}

impl NmseVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            NmseVariant::PaperUnsquared => "paper_unsquared",
            NmseVariant::Squared => "squared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper_unsquared" | "unsquared" => Ok(NmseVariant::PaperUnsquared),
            "squared" => Ok(NmseVariant::Squared),
            other => Err(Error::InvalidArgument(format!("unknown NMSE variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseReport {
    pub nmse_db: f64,
    pub variant: NmseVariant,
    /// Samples that entered the mean.
    pub sample_count: usize,
    /// Samples dropped because their ground truth is zero.
    pub excluded: usize,
}

pub fn nmse<'a, 'b>(
    estimates: &[ArrayView2<'a, f64>],
    truths: &[ArrayView2<'b, f64>],
    variant: NmseVariant,
) -> Result<NmseReport> {
    if estimates.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for (e, g) in estimates.iter().zip(truths) {
        if e.dim() != g.dim() {
            return Err(Error::ShapeMismatch(format!("estimate {:?} vs truth {:?}", e.dim(), g.dim())));
        }
        let g2 = frobenius_sq(g.view());
        if g2 == 0.0 {
            excluded += 1;
            continue;
        }
        let d2 = e.iter().zip(g.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        acc += match variant {
            NmseVariant::PaperUnsquared => (d2 / g2).sqrt(),
            NmseVariant::Squared => d2 / g2,
        };
        used += 1;
    }
    if excluded > 0 {
        log::warn!("{excluded} samples with zero ground truth left out of the NMSE");
    }
    if used == 0 {
        return Err(Error::InvalidArgument("no sample with nonzero ground truth".into()));
    }
    let mean = acc / used as f64;
    let db = if mean > 0.0 {
        (10.0 * mean.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    };
    Ok(NmseReport {
        nmse_db: db,
        variant,
        sample_count: used,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub precision: f64,
    pub recall: f64,
    pub exact_match_rate: f64,
}

/// Set agreement between an estimated and a true support. An empty estimate
/// has precision 1 against an empty truth and 0 otherwise; recall mirrors it.
pub fn support_metrics(estimated: &[usize], truth: &[usize]) -> SupportMetrics {
    let mut e = estimated.to_vec();
    let mut t = truth.to_vec();
    e.sort_unstable();
    e.dedup();
    t.sort_unstable();
    t.dedup();
    let common = e.iter().filter(|j| t.binary_search(j).is_ok()).count() as f64;
    let ratio = |num: f64, den: usize, other_empty: bool| {
        if den == 0 {
            if other_empty {
                1.0
            } else {
                0.0
            }
        } else {
            num / den as f64
        }
    };
    SupportMetrics {
        precision: ratio(common, e.len(), t.is_empty()),
        recall: ratio(common, t.len(), e.is_empty()),
        exact_match_rate: if e == t { 1.0 } else { 0.0 },
    }
}

/// Per-frame averages: `pairs[k][i]` is `(estimated, true)` support of
/// frame `i` in sample `k`.
pub fn mean_support_metrics(pairs: &[Vec<(Vec<usize>, Vec<usize>)>]) -> Vec<SupportMetrics> {
    let frames = pairs.iter().map(|p| p.len()).max().unwrap_or(0);
    (0..frames)
        .map(|i| {
            let ms: Vec<SupportMetrics> = pairs
                .iter()
                .filter_map(|p| p.get(i))
                .map(|(e, t)| support_metrics(e, t))
                .collect();
            let k = ms.len().max(1) as f64;
            SupportMetrics {
                precision: ms.iter().map(|m| m.precision).sum::<f64>() / k,
                recall: ms.iter().map(|m| m.recall).sum::<f64>() / k,
                exact_match_rate: ms.iter().map(|m| m.exact_match_rate).sum::<f64>() / k,
            }
        })
        .collect()
}
