//! Synthetic multi-frame angular-domain channels, pilots and measurements.
//!
//! Each frame `i` carries a row-sparse `M × N` angular channel `S^[i]` whose
//! support overlaps the previous frame's support. Frames are concatenated into
//! `G = [S^[1], …, S^[L]]` and observed through `Φ = Xᴴ·V` with complex
//! Gaussian noise. Every quantity is regenerated bit-exactly from its seed.

use std::collections::BTreeSet;

use ndarray::{s, Array2};
use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cfrobenius_sq, cmatmul, conj_transpose, make_unitary_dft, real_lift, CMatrix, LiftMode,
    RealLifted,
};

/// Law of the per-frame support size and of the overlap between adjacent frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportLaw {
    /// `|Γ^[i]| ~ Z(s̄−3, s̄−1)` and `|Γ^[i−1] ∩ Γ^[i]| ~ Z(s_c, s_c+1)`.
    #[default]
    Standard,
    /// Integer-uniform laws on explicit inclusive ranges.
    Range {
        size_min: usize,
        size_max: usize,
        shared_min: usize,
        shared_max: usize,
    },
}

/// Scenario scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// UE antennas.
    pub n: usize,
    /// Pilot length.
    pub t: usize,
    /// Number of jointly processed frames.
    pub frames: usize,
    pub s_bar: usize,
    pub s_c: usize,
    /// `inf` (or the JSON string `"inf"`) selects noiseless measurements.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub layers_coarse: usize,
    pub layers_fine: usize,
    pub seed: u64,
    #[serde(default)]
    pub support_law: SupportLaw,
    #[serde(default)]
    pub complex_pilot: bool,
    #[serde(default)]
    pub normalize_pilot: bool,
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" || t == "+inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad snr_db `{t}`"))),
        }
    }
}

impl SystemConfig {
    /// The reduced-size scenario used for desk-scale training runs.
    pub fn desk() -> Self {
        SystemConfig {
            m: 64,
            n: 2,
            t: 20,
            frames: 4,
            s_bar: 8,
            s_c: 5,
            snr_db: 30.0,
            layers_coarse: 4,
            layers_fine: 8,
            seed: 2024,
            support_law: SupportLaw::Standard,
            complex_pilot: false,
            normalize_pilot: false,
        }
    }

    /// Full-size scenario with `M = 128`, `N = 2`, `L = 7`.
    pub fn full() -> Self {
        SystemConfig {
            m: 128,
            n: 2,
            t: 33,
            frames: 7,
            s_bar: 15,
            s_c: 10,
            snr_db: 30.0,
            layers_coarse: 8,
            layers_fine: 16,
            seed: 2024,
            support_law: SupportLaw::Standard,
            complex_pilot: false,
            normalize_pilot: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0 < self.s_c && self.s_c < self.s_bar && self.s_bar <= self.m) {
            return bad(format!(
                "need 0 < s_c < s_bar <= M, got s_c={}, s_bar={}, M={}",
                self.s_c, self.s_bar, self.m
            ));
        }
        if self.n == 0 || self.n >= self.m {
            return bad(format!("need 0 < N < M, got N={}, M={}", self.n, self.m));
        }
        if self.t == 0 || self.t > self.m {
            return bad(format!("need 0 < T <= M, got T={}, M={}", self.t, self.m));
        }
        if self.frames == 0 {
            return bad("frame count L must be at least 1".into());
        }
        if self.layers_coarse == 0 || self.layers_fine == 0 {
            return bad("layer counts must be at least 1".into());
        }
        if self.snr_db.is_nan() {
            return bad("snr_db is NaN".into());
        }
        Ok(())
    }

    /// Inclusive `(size_min, size_max, shared_min, shared_max)` of the support law.
    pub fn support_bounds(&self) -> Result<(usize, usize, usize, usize)> {
        let b = match self.support_law {
            SupportLaw::Standard => {
                if self.s_bar < 3 {
                    return Err(Error::InvalidConfig("s_bar must be at least 3".into()));
                }
                (self.s_bar - 3, self.s_bar - 1, self.s_c, self.s_c + 1)
            }
            SupportLaw::Range {
                size_min,
                size_max,
                shared_min,
                shared_max,
            } => (size_min, size_max, shared_min, shared_max),
        };
        let (lo, hi, slo, shi) = b;
        if lo > hi || slo > shi {
            return Err(Error::InvalidConfig(format!("empty support range {b:?}")));
        }
        if hi > self.m {
            return Err(Error::InvalidConfig(format!(
                "support size up to {hi} exceeds M={}",
                self.m
            )));
        }
        if slo > lo {
            return Err(Error::InvalidConfig(format!(
                "shared count lower bound {slo} exceeds smallest support size {lo}"
            )));
        }
        Ok(b)
    }

    /// Lifted row count `2M`.
    pub fn lifted_rows(&self) -> usize {
        2 * self.m
    }

    /// Columns of the concatenated channel `N·L`.
    pub fn concat_cols(&self) -> usize {
        self.n * self.frames
    }
}

/// Per-frame supports (0-based row indices, sorted) and their intersection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSequence {
    pub supports: Vec<Vec<usize>>,
    pub common: Vec<usize>,
}

impl SupportSequence {
    pub fn from_supports(supports: Vec<Vec<usize>>) -> Self {
        let common = intersect_all(&supports);
        SupportSequence { supports, common }
    }

    pub fn union_len(&self) -> usize {
        self.supports
            .iter()
            .flatten()
            .collect::<BTreeSet<_>>()
            .len()
    }
}

fn intersect_all(supports: &[Vec<usize>]) -> Vec<usize> {
    let mut iter = supports.iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut acc: BTreeSet<usize> = first.iter().copied().collect();
    for s in iter {
        let next: BTreeSet<usize> = s.iter().copied().collect();
        acc = acc.intersection(&next).copied().collect();
    }
    acc.into_iter().collect()
}

fn uniform_int(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Draws a support sequence: frame 1 uniformly, later frames keep a random
/// subset of the previous support and add fresh rows outside it.
pub fn gen_support_sequence(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<SupportSequence> {
    let (lo, hi, slo, shi) = cfg.support_bounds()?;
    let m = cfg.m;
    let mut supports: Vec<Vec<usize>> = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let size = uniform_int(rng, lo, hi);
        let mut rows: Vec<usize> = if i == 0 {
            index::sample(rng, m, size).into_vec()
        } else {
            let prev = &supports[i - 1];
            // the shared draw may exceed the current frame size when the two
            // ranges overlap; clamp so the frame never exceeds its own size
            let shared = uniform_int(rng, slo, shi).min(size).min(prev.len());
            let outside: Vec<usize> = {
                let prev_set: BTreeSet<usize> = prev.iter().copied().collect();
                (0..m).filter(|j| !prev_set.contains(j)).collect()
            };
            let fresh = size - shared;
            if fresh > outside.len() {
                return Err(Error::InvalidConfig(format!(
                    "cannot draw {fresh} new rows outside a support of {} in M={m}",
                    prev.len()
                )));
            }
            let mut rows: Vec<usize> = index::sample(rng, prev.len(), shared)
                .into_iter()
                .map(|k| prev[k])
                .collect();
            rows.extend(
                index::sample(rng, outside.len(), fresh)
                    .into_iter()
                    .map(|k| outside[k]),
            );
            rows
        };
        rows.sort_unstable();
        supports.push(rows);
    }
    Ok(SupportSequence::from_supports(supports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameChannel {
    pub frames: Vec<CMatrix>,
    pub supports: SupportSequence,
    pub concat: CMatrix,
}

fn cn01(rng: &mut impl Rng) -> Complex64 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * h, im * h)
}

/// Fills support rows with i.i.d. `CN(0, 1)` entries; every other row is zero.
pub fn gen_channel(
    cfg: &SystemConfig,
    supports: &SupportSequence,
    rng: &mut impl Rng,
) -> Result<MultiFrameChannel> {
    if supports.supports.len() != cfg.frames {
        return Err(Error::ShapeMismatch(format!(
            "{} supports for {} frames",
            supports.supports.len(),
            cfg.frames
        )));
    }
    let mut frames = Vec::with_capacity(cfg.frames);
    for support in &supports.supports {
        let mut s = CMatrix::zeros((cfg.m, cfg.n));
        for &row in support {
            if row >= cfg.m {
                return Err(Error::InvalidArgument(format!("support row {row} >= M")));
            }
            for col in 0..cfg.n {
                s[[row, col]] = cn01(rng);
            }
        }
        frames.push(s);
    }
    let concat = concat_columns(&frames);
    Ok(MultiFrameChannel {
        frames,
        supports: supports.clone(),
        concat,
    })
}

fn concat_columns(frames: &[CMatrix]) -> CMatrix {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    ndarray::concatenate(ndarray::Axis(1), &views).expect("frames share a row count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    /// `M × T` pilot.
    pub x: CMatrix,
    /// `M × M` unitary BS-side transform.
    pub v: CMatrix,
    /// `N × N` unitary UE-side transform.
    pub u: CMatrix,
    /// `T × M` sensing matrix `Xᴴ·V`.
    pub phi: CMatrix,
}

/// Pilot entries `U(−√(1/M), √(1/M))`, real unless `complex_pilot` is set.
pub fn gen_pilot(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<PilotMatrix> {
    let a = (1.0 / cfg.m as f64).sqrt();
    let law = Uniform::new_inclusive(-a, a).expect("finite bounds");
    let mut x = CMatrix::from_shape_fn((cfg.m, cfg.t), |_| {
        let re = law.sample(rng);
        let im = if cfg.complex_pilot { law.sample(rng) } else { 0.0 };
        Complex64::new(re, im)
    });
    if cfg.normalize_pilot {
        let trace = cfrobenius_sq(&x);
        if trace > 0.0 {
            let k = (cfg.t as f64 / trace).sqrt();
            x.mapv_inplace(|z| z * k);
        }
    }
    let v = make_unitary_dft(cfg.m)?;
    let u = make_unitary_dft(cfg.n)?;
    let phi = cmatmul(&conj_transpose(&x), &v)?;
    Ok(PilotMatrix { x, v, u, phi })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `T × N` observations per frame.
    pub frames: Vec<CMatrix>,
    /// `T × N·L` concatenation `R`.
    pub concat: CMatrix,
    /// Noise variance per real component, `δ²/2`.
    pub noise_var: f64,
}

/// Observes the channel with noise set from the per-sample SNR:
/// `δ² = (‖Φ·G‖²_F / (T·N·L)) / 10^(snr/10)`.
pub fn measure(
    channel: &MultiFrameChannel,
    pilot: &PilotMatrix,
    cfg: &SystemConfig,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    let clean = cmatmul(&pilot.phi, &channel.concat)?;
    let delta_sq = if cfg.snr_db.is_infinite() && cfg.snr_db > 0.0 {
        0.0
    } else {
        let p_sig = cfrobenius_sq(&clean) / clean.len() as f64;
        p_sig / 10f64.powf(cfg.snr_db / 10.0)
    };
    Ok(add_noise(clean, cfg.n, delta_sq, rng))
}

/// Observes the channel with a fixed complex noise variance `δ²`.
pub fn measure_with_noise_var(
    channel: &MultiFrameChannel,
    pilot: &PilotMatrix,
    n: usize,
    delta_sq: f64,
    rng: &mut impl Rng,
) -> Result<MeasurementSet> {
    if delta_sq < 0.0 || !delta_sq.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance {delta_sq}")));
    }
    let clean = cmatmul(&pilot.phi, &channel.concat)?;
    Ok(add_noise(clean, n, delta_sq, rng))
}

fn add_noise(mut r: CMatrix, n: usize, delta_sq: f64, rng: &mut impl Rng) -> MeasurementSet {
    if delta_sq > 0.0 {
        let sd = (delta_sq / 2.0).sqrt();
        for z in r.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *z += Complex64::new(re * sd, im * sd);
        }
    }
    let frames = (0..r.ncols() / n)
        .map(|i| r.slice(s![.., i * n..(i + 1) * n]).to_owned())
        .collect();
    MeasurementSet {
        frames,
        concat: r,
        noise_var: delta_sq / 2.0,
    }
}

/// `H = U·H̃·Vᴴ`.
pub fn angular_to_physical(h_tilde: &CMatrix, u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    cmatmul(&cmatmul(u, h_tilde)?, &conj_transpose(v))
}

/// `H̃ = Uᴴ·H·V`.
pub fn physical_to_angular(h: &CMatrix, u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    cmatmul(&cmatmul(&conj_transpose(u), h)?, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    /// `R̄`, `2T × N·L`.
    pub lifted_obs: RealLifted,
    /// `Ḡ`, `2M × N·L`.
    pub lifted_truth: RealLifted,
    /// `Z̄^[i]`, `2T × N` each.
    pub per_frame_obs: Vec<RealLifted>,
    pub supports: SupportSequence,
    pub sample_seed: u64,
}

impl DatasetSample {
    /// Lifted ground truth of frame `i`, `2M × N`.
    pub fn frame_truth(&self, i: usize, n: usize) -> Array2<f64> {
        self.lifted_truth
            .mat
            .slice(s![.., i * n..(i + 1) * n])
            .to_owned()
    }
}

/// A generated dataset: one sensing matrix shared by every sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SystemConfig,
    pub base_seed: u64,
    pub pilot: PilotMatrix,
    /// `Φ̄`, `2T × 2M`.
    pub phi_lifted: Array2<f64>,
    pub samples: Vec<DatasetSample>,
}

/// Counter-based per-sample seed: stream `index` of a generator keyed by `base_seed`.
pub fn sample_seed(base_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Pilot drawn from the configuration seed, so all splits of one scenario
/// share the sensing matrix.
pub fn scenario_pilot(cfg: &SystemConfig) -> Result<PilotMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gen_pilot(cfg, &mut rng)
}

pub fn generate_sample(
    cfg: &SystemConfig,
    pilot: &PilotMatrix,
    sample_seed: u64,
) -> Result<DatasetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let supports = gen_support_sequence(cfg, &mut rng)?;
    let channel = gen_channel(cfg, &supports, &mut rng)?;
    let meas = measure(&channel, pilot, cfg, &mut rng)?;
    let per_frame_obs = meas
        .frames
        .iter()
        .map(|z| real_lift(z, LiftMode::Stack))
        .collect();
    Ok(DatasetSample {
        lifted_obs: real_lift(&meas.concat, LiftMode::Stack),
        lifted_truth: real_lift(&channel.concat, LiftMode::Stack),
        per_frame_obs,
        supports,
        sample_seed,
    })
}

/// Generates `count` samples; sample `i` depends only on `(cfg, base_seed, i)`.
pub fn gen_dataset(cfg: &SystemConfig, count: usize, base_seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("dataset count must be at least 1".into()));
    }
    let pilot = scenario_pilot(cfg)?;
    let phi_lifted = real_lift(&pilot.phi, LiftMode::Block).mat;
    let samples = (0..count)
        .into_par_iter()
        .map(|i| generate_sample(cfg, &pilot, sample_seed(base_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        base_seed,
        pilot,
        phi_lifted,
        samples,
    })
}
