use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    bcd_mmv_solve, coarse_forward, init_params, two_stage_estimate, BcdOptions, CoarseNetParams, FineNetParams,
    Selector,
};
use crate::simgen::{Dataset, SystemConfig};
use crate::training::{train_stage_coarse, train_stage_fine, LossReport, TrainConfig};

/// Iterations of the untrained baseline.
pub const BASELINE_ITERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeName {
    #[serde(rename = "C-F-BSS")]
    CfBss,
    #[serde(rename = "C-F-BFSJ")]
    CfBfsj,
    #[serde(rename = "C-F-BSS-WS")]
    CfBssWs,
    #[serde(rename = "C-F-BFSJ-WS")]
    CfBfsjWs,
    #[serde(rename = "F-BSS-WS")]
    FBssWs,
    #[serde(rename = "F-BFSJ-WS")]
    FBfsjWs,
    #[serde(rename = "BCD-MMV-baseline")]
    BcdMmv,
    #[serde(rename = "LISTA-CPSS-ablation")]
    ListaCpss,
    #[serde(rename = "LISTA-GS-ablation")]
    ListaGs,
}

impl SchemeName {
    pub const ALL: [SchemeName; 9] = [
        SchemeName::CfBss,
        SchemeName::CfBfsj,
        SchemeName::CfBssWs,
        SchemeName::CfBfsjWs,
        SchemeName::FBssWs,
        SchemeName::FBfsjWs,
        SchemeName::BcdMmv,
        SchemeName::ListaCpss,
        SchemeName::ListaGs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::CfBss => "C-F-BSS",
            SchemeName::CfBfsj => "C-F-BFSJ",
            SchemeName::CfBssWs => "C-F-BSS-WS",
            SchemeName::CfBfsjWs => "C-F-BFSJ-WS",
            SchemeName::FBssWs => "F-BSS-WS",
            SchemeName::FBfsjWs => "F-BFSJ-WS",
            SchemeName::BcdMmv => "BCD-MMV-baseline",
            SchemeName::ListaCpss => "LISTA-CPSS-ablation",
            SchemeName::ListaGs => "LISTA-GS-ablation",
        }
    }

    pub fn spec(self) -> SchemeSpec {
        use SchemeName::*;
        let (coarse, fine, selector, prior, learned) = match self {
            CfBss => (true, true, Selector::Bss, true, true),
            CfBfsj => (true, true, Selector::Bfsj, true, true),
            CfBssWs => (true, true, Selector::Bss, false, true),
            CfBfsjWs => (true, true, Selector::Bfsj, false, true),
            FBssWs => (false, true, Selector::Bss, false, true),
            FBfsjWs => (false, true, Selector::Bfsj, false, true),
            BcdMmv => (false, false, Selector::None, false, false),
            ListaCpss => (false, false, Selector::Bss, false, true),
            ListaGs => (false, false, Selector::None, false, true),
        };
        let granularity = match self {
            ListaCpss => Granularity::Element,
            ListaGs => Granularity::FrameBlock,
            _ => Granularity::Block,
        };
        SchemeSpec {
            name: self,
            coarse,
            fine,
            selector,
            small_scale_prior: prior,
            learned,
            granularity,
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?}")))
    }
}

/// Row thresholding granularity of a scheme's net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Rows of all frames (coarse) or of one frame (fine) shrink together.
    Block,
    /// Rows of one frame shrink together, frames handled jointly otherwise.
    FrameBlock,
    /// Every entry on its own.
    Element,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: SchemeName,
    pub coarse: bool,
    pub fine: bool,
    pub selector: Selector,
    /// Previous-frame support weighted by a trained `ω`; otherwise `ω = 1`.
    pub small_scale_prior: bool,
    pub learned: bool,
    pub granularity: Granularity,
}

/// Parameters of one scheme, ready to estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemeModel {
    TwoStage {
        coarse: Option<CoarseNetParams>,
        fine: FineNetParams,
    },
    Baseline {
        lambda: f64,
        iters: usize,
    },
    Single(CoarseNetParams),
}

impl SchemeModel {
    /// Untrained parameters for `name`, following the baseline iteration.
    pub fn untrained(name: SchemeName, cfg: &SystemConfig, phi: ArrayView2<f64>, lambda: f64) -> Result<Self> {
        let spec = name.spec();
        let (mut coarse, mut fine) = init_params(cfg, phi, lambda)?;
        if !spec.learned {
            return Ok(SchemeModel::Baseline {
                lambda,
                iters: BASELINE_ITERS,
            });
        }
        if !spec.fine {
            // same depth as the two-stage nets
            let layers = cfg.layers_coarse + cfg.layers_fine;
            let width = match spec.granularity {
                Granularity::Element => 1,
                _ => cfg.n,
            };
            let w0 = fine.weights.first().cloned().unwrap_or_else(|| Array2::zeros((2 * cfg.m, 2 * cfg.t)));
            return Ok(SchemeModel::Single(CoarseNetParams {
                weights: vec![w0; layers],
                thetas: vec![fine.thetas.first().copied().unwrap_or(coarse.thetas[0]); layers],
                selector: spec.selector,
                s_param: cfg.s_bar as f64,
                p_min: cfg.s_c as f64,
                group_width: width,
                pilot_len: cfg.t,
            }));
        }
        coarse.selector = spec.selector;
        fine.selector = spec.selector;
        if !spec.small_scale_prior {
            fine.omega = 1.0;
            fine.omega_trainable = false;
        }
        Ok(SchemeModel::TwoStage {
            coarse: spec.coarse.then_some(coarse),
            fine,
        })
    }

    /// Estimate of the concatenated lifted channel, `2M × N·L`.
    pub fn estimate(&self, phi: ArrayView2<f64>, obs: ArrayView2<f64>, n: usize) -> Result<Array2<f64>> {
        match self {
            SchemeModel::TwoStage { coarse, fine } => {
                Ok(two_stage_estimate(coarse.as_ref(), fine, phi, obs, n)?.refined)
            }
            SchemeModel::Baseline { lambda, iters } => {
                let opts = BcdOptions {
                    track_objective: false,
                    ..BcdOptions::joint(obs.ncols())
                };
                Ok(bcd_mmv_solve(phi, obs, *lambda, *iters, opts)?.estimate)
            }
            SchemeModel::Single(p) => coarse_forward(p, phi, obs),
        }
    }

    /// Layers per frame-iteration, for op accounting.
    pub fn layer_count(&self) -> usize {
        match self {
            SchemeModel::TwoStage { coarse, fine } => coarse.as_ref().map_or(0, |c| c.layers()) + fine.layers(),
            SchemeModel::Baseline { iters, .. } => *iters,
            SchemeModel::Single(p) => p.layers(),
        }
    }
}

/// Trains every learned stage of `model` in place.
pub fn train_scheme(model: &mut SchemeModel, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<LossReport> {
    let mut report = LossReport::default();
    match model {
        SchemeModel::TwoStage { coarse, fine } => {
            if let Some(c) = coarse.as_mut() {
                report.stages.push(train_stage_coarse(c, train, val, cfg)?);
            }
            report.stages.push(train_stage_fine(fine, coarse.as_ref(), train, val, cfg)?);
        }
        SchemeModel::Single(p) => report.stages.push(train_stage_coarse(p, train, val, cfg)?),
        SchemeModel::Baseline { .. } => {}
    }
    Ok(report)
}
