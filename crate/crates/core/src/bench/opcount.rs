use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{coarse_forward_counted, fine_forward_counted, CoarseNetParams, FineNetParams, Selector};
use crate::linalg::MulTally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetPart {
    Coarse,
    Fine,
}

/// Real multiplications per iteration per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub matmuls: u64,
    pub norms: u64,
    pub scalings: u64,
    pub weight_products: u64,
    pub total: u64,
}

impl OpCount {
    fn from_parts(matmuls: u64, norms: u64, scalings: u64, weight_products: u64) -> Self {
        OpCount {
            matmuls,
            norms,
            scalings,
            weight_products,
            total: matmuls + norms + scalings + weight_products,
        }
    }

    fn zero() -> Self {
        Self::from_parts(0, 0, 0, 0)
    }
}

/// Closed-form counts: two lifted products `8NMT`, row norms `2NM`, row
/// rescaling `2NM`, and for the fine net `4M` for the prior weights.
pub fn analytic_op_count(part: NetPart, m: usize, n: usize, t: usize) -> Result<OpCount> {
    if m == 0 || n == 0 || t == 0 {
        return Err(Error::InvalidDimension(format!("M={m}, N={n}, T={t}")));
    }
    let (m, n, t) = (m as u64, n as u64, t as u64);
    let weight = match part {
        NetPart::Coarse => 0,
        NetPart::Fine => 4 * m,
    };
    Ok(OpCount::from_parts(8 * n * m * t, 2 * n * m, 2 * n * m, weight))
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Runs a counting forward pass of `layers` layers over `frames` frames on a
/// random instance and returns the executed multiplications per layer per frame.
pub fn instrumented_op_count(
    part: NetPart,
    m: usize,
    n: usize,
    t: usize,
    frames: usize,
    layers: usize,
) -> Result<OpCount> {
    if m == 0 || n == 0 || t == 0 || frames == 0 {
        return Err(Error::InvalidDimension(format!("M={m}, N={n}, T={t}, L={frames}")));
    }
    if layers == 0 {
        return Ok(OpCount::zero());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0BC0);
    let phi = random(&mut rng, 2 * t, 2 * m);
    let weights: Vec<Array2<f64>> = (0..layers).map(|_| random(&mut rng, 2 * m, 2 * t)).collect();
    let thetas = vec![0.5; layers];
    let mut tally = MulTally::default();
    match part {
        NetPart::Coarse => {
            let obs = random(&mut rng, 2 * t, n * frames);
            let params = CoarseNetParams {
                weights,
                thetas,
                selector: Selector::Bss,
                s_param: m as f64,
                p_min: 1.0,
                group_width: n * frames,
                pilot_len: t,
            };
            coarse_forward_counted(&params, phi.view(), obs.view(), Some(&mut tally))?;
        }
        NetPart::Fine => {
            let params = FineNetParams {
                weights,
                thetas,
                omega: 0.5,
                omega_trainable: true,
                selector: Selector::Bss,
                p_bounds: (1.0, m as f64),
                pilot_len: t,
                symmetrize_prior: false,
            };
            let mut prior = Vec::new();
            for _ in 0..frames {
                let obs = random(&mut rng, 2 * t, n);
                let init = random(&mut rng, 2 * m, n);
                let out = fine_forward_counted(&params, phi.view(), obs.view(), init.view(), &prior, Some(&mut tally))?;
                prior = crate::estimator::extract_support(out.view(), 0.0);
            }
        }
    }
    let per = (layers * frames) as u64;
    let fields = [tally.matmul, tally.norms, tally.scalings, tally.weight_products];
    if fields.iter().any(|x| x % per != 0) {
        return Err(Error::Internal(format!(
            "tally {tally:?} does not split evenly over {layers} layers and {frames} frames"
        )));
    }
    Ok(OpCount::from_parts(
        fields[0] / per,
        fields[1] / per,
        fields[2] / per,
        fields[3] / per,
    ))
}
