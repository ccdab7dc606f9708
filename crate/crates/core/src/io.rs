//! On-disk datasets and parameter checkpoints.
//!
//! Every tensor is stored as little-endian `f64` in row-major order inside a
//! binary file, located by an offset (in values) and a shape recorded in a
//! JSON manifest next to it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{SchemeModel, SchemeName};
use crate::error::{Error, Result};
use crate::estimator::{CoarseNetParams, FineNetParams, Selector};
use crate::linalg::{real_lift, LiftMode, RealLifted};
use crate::simgen::{scenario_pilot, Dataset, DatasetSample, SupportSequence, SystemConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &SystemConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// SHA-256 of a tensor's little-endian bytes, shape included.
pub fn tensor_hash(a: ArrayView2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((a.nrows() as u64).to_le_bytes());
    h.update((a.ncols() as u64).to_le_bytes());
    for x in a.iter() {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    /// Offset in `f64` values from the start of the file.
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Appends tensors to an in-memory buffer and hands out their references.
#[derive(Default)]
struct TensorWriter {
    bytes: Vec<u8>,
    values: usize,
}

impl TensorWriter {
    fn push(&mut self, a: ArrayView2<f64>) -> TensorRef {
        let r = TensorRef {
            offset: self.values,
            rows: a.nrows(),
            cols: a.ncols(),
        };
        self.bytes.reserve(a.len() * 8);
        for x in a.iter() {
            self.bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.values += a.len();
        r
    }
}

fn read_tensor(buf: &[u8], r: &TensorRef, path: &Path) -> Result<Array2<f64>> {
    let start = r.offset * 8;
    let len = r.rows * r.cols * 8;
    let bytes = buf
        .get(start..start + len)
        .ok_or_else(|| Error::format(path, format!("tensor at offset {} runs past the end", r.offset)))?;
    let vals = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_shape_vec((r.rows, r.cols), vals).map_err(|e| Error::format(path, e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub seed: u64,
    pub obs: TensorRef,
    pub truth: TensorRef,
    pub supports: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub config: SystemConfig,
    pub config_hash: String,
    pub base_seed: u64,
    pub count: usize,
    pub phi: TensorRef,
    pub phi_hash: String,
    pub samples: Vec<SampleEntry>,
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut phi_w = TensorWriter::default();
    let phi = phi_w.push(ds.phi_lifted.view());
    let mut w = TensorWriter::default();
    let samples = ds
        .samples
        .iter()
        .map(|smp| SampleEntry {
            seed: smp.sample_seed,
            obs: w.push(smp.lifted_obs.mat.view()),
            truth: w.push(smp.lifted_truth.mat.view()),
            supports: smp.supports.supports.clone(),
        })
        .collect();
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        config: ds.config.clone(),
        config_hash: config_hash(&ds.config),
        base_seed: ds.base_seed,
        count: ds.samples.len(),
        phi,
        phi_hash: tensor_hash(ds.phi_lifted.view()),
        samples,
    };
    write_file(&dir.join("phi.bin"), &phi_w.bytes)?;
    write_file(&dir.join("samples.bin"), &w.bytes)?;
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let m: DatasetManifest = read_json(&path)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::format(&path, format!("schema version {} unsupported", m.schema_version)));
    }
    Ok(m)
}

fn stacked(mat: Array2<f64>, origin_rows: usize) -> RealLifted {
    RealLifted {
        mat,
        origin_rows,
        mode: LiftMode::Stack,
    }
}

/// Loads a dataset and checks it against the sensing matrix its configuration
/// regenerates.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_dataset_manifest(dir)?;
    if config_hash(&m.config) != m.config_hash {
        return Err(Error::ArtifactMismatch(format!(
            "{}: configuration does not match its recorded hash",
            dir.display()
        )));
    }
    let phi_path = dir.join("phi.bin");
    let phi = read_tensor(&read_file(&phi_path)?, &m.phi, &phi_path)?;
    if tensor_hash(phi.view()) != m.phi_hash {
        return Err(Error::ArtifactMismatch(format!("{}: sensing matrix hash differs", phi_path.display())));
    }
    let pilot = scenario_pilot(&m.config)?;
    if real_lift(&pilot.phi, LiftMode::Block).mat != phi {
        return Err(Error::ArtifactMismatch(format!(
            "{}: stored sensing matrix differs from the configured pilot",
            dir.display()
        )));
    }
    let path = dir.join("samples.bin");
    let buf = read_file(&path)?;
    let n = m.config.n;
    let samples = m
        .samples
        .iter()
        .map(|e| {
            let obs = read_tensor(&buf, &e.obs, &path)?;
            let truth = read_tensor(&buf, &e.truth, &path)?;
            let per_frame_obs = (0..obs.ncols() / n)
                .map(|i| stacked(obs.slice(s![.., i * n..(i + 1) * n]).to_owned(), m.config.t))
                .collect();
            Ok(DatasetSample {
                lifted_obs: stacked(obs, m.config.t),
                lifted_truth: stacked(truth, m.config.m),
                per_frame_obs,
                supports: SupportSequence::from_supports(e.supports.clone()),
                sample_seed: e.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: m.config,
        base_seed: m.base_seed,
        pilot,
        phi_lifted: phi,
        samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageParams {
    Coarse {
        weights: Vec<TensorRef>,
        thetas: Vec<f64>,
        selector: Selector,
        s_param: f64,
        p_min: f64,
        group_width: usize,
        pilot_len: usize,
    },
    Fine {
        weights: Vec<TensorRef>,
        thetas: Vec<f64>,
        omega: f64,
        omega_trainable: bool,
        selector: Selector,
        p_bounds: (f64, f64),
        pilot_len: usize,
        symmetrize_prior: bool,
    },
    Baseline {
        lambda: f64,
        iters: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub scheme: SchemeName,
    /// `coarse`, `fine` or `single`.
    pub stage: String,
    pub config_hash: String,
    pub phi_hash: String,
    pub params: StageParams,
}

fn checkpoint_paths(dir: &Path, scheme: SchemeName, stage: &str) -> (PathBuf, PathBuf) {
    let stem = format!("{}.{stage}", scheme.as_str());
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")))
}

fn coarse_entry(c: &CoarseNetParams, w: &mut TensorWriter) -> StageParams {
    StageParams::Coarse {
        weights: c.weights.iter().map(|x| w.push(x.view())).collect(),
        thetas: c.thetas.clone(),
        selector: c.selector,
        s_param: c.s_param,
        p_min: c.p_min,
        group_width: c.group_width,
        pilot_len: c.pilot_len,
    }
}

/// Identity of the scenario a checkpoint was trained for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactIds {
    pub config_hash: String,
    pub phi_hash: String,
}

impl ArtifactIds {
    pub fn of(ds: &Dataset) -> Self {
        ArtifactIds {
            config_hash: config_hash(&ds.config),
            phi_hash: tensor_hash(ds.phi_lifted.view()),
        }
    }
}

fn save_stage(dir: &Path, scheme: SchemeName, stage: &str, ids: &ArtifactIds, params: StageParams, w: TensorWriter) -> Result<PathBuf> {
    let (json, bin) = checkpoint_paths(dir, scheme, stage);
    write_file(&bin, &w.bytes)?;
    write_json(
        &json,
        &CheckpointManifest {
            schema_version: SCHEMA_VERSION,
            scheme,
            stage: stage.into(),
            config_hash: ids.config_hash.clone(),
            phi_hash: ids.phi_hash.clone(),
            params,
        },
    )?;
    Ok(json)
}

/// Writes one manifest/binary pair per stage of `model`; returns the manifests.
pub fn save_checkpoint(dir: &Path, scheme: SchemeName, model: &SchemeModel, ids: &ArtifactIds) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    match model {
        SchemeModel::TwoStage { coarse, fine } => {
            if let Some(c) = coarse {
                let mut w = TensorWriter::default();
                let p = coarse_entry(c, &mut w);
                out.push(save_stage(dir, scheme, "coarse", ids, p, w)?);
            }
            let mut w = TensorWriter::default();
            let p = StageParams::Fine {
                weights: fine.weights.iter().map(|x| w.push(x.view())).collect(),
                thetas: fine.thetas.clone(),
                omega: fine.omega,
                omega_trainable: fine.omega_trainable,
                selector: fine.selector,
                p_bounds: fine.p_bounds,
                pilot_len: fine.pilot_len,
                symmetrize_prior: fine.symmetrize_prior,
            };
            out.push(save_stage(dir, scheme, "fine", ids, p, w)?);
        }
        SchemeModel::Single(c) => {
            let mut w = TensorWriter::default();
            let p = coarse_entry(c, &mut w);
            out.push(save_stage(dir, scheme, "single", ids, p, w)?);
        }
        SchemeModel::Baseline { lambda, iters } => {
            let p = StageParams::Baseline {
                lambda: *lambda,
                iters: *iters,
            };
            out.push(save_stage(dir, scheme, "single", ids, p, TensorWriter::default())?);
        }
    }
    Ok(out)
}

enum Loaded {
    Coarse(CoarseNetParams),
    Fine(FineNetParams),
    Baseline(f64, usize),
}

fn load_stage(dir: &Path, scheme: SchemeName, stage: &str, ids: Option<&ArtifactIds>) -> Result<Option<Loaded>> {
    let (json, bin) = checkpoint_paths(dir, scheme, stage);
    if !json.exists() {
        return Ok(None);
    }
    let m: CheckpointManifest = read_json(&json)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::format(&json, format!("schema version {} unsupported", m.schema_version)));
    }
    if m.scheme != scheme {
        return Err(Error::ArtifactMismatch(format!("{} holds {}", json.display(), m.scheme)));
    }
    if let Some(ids) = ids {
        if ids.phi_hash != m.phi_hash {
            return Err(Error::ArtifactMismatch(format!(
                "{} was trained for a different sensing matrix",
                json.display()
            )));
        }
    }
    let read_all = |refs: &[TensorRef]| -> Result<Vec<Array2<f64>>> {
        let buf = read_file(&bin)?;
        refs.iter().map(|r| read_tensor(&buf, r, &bin)).collect()
    };
    Ok(Some(match m.params {
        StageParams::Coarse {
            weights,
            thetas,
            selector,
            s_param,
            p_min,
            group_width,
            pilot_len,
        } => Loaded::Coarse(CoarseNetParams {
            weights: read_all(&weights)?,
            thetas,
            selector,
            s_param,
            p_min,
            group_width,
            pilot_len,
        }),
        StageParams::Fine {
            weights,
            thetas,
            omega,
            omega_trainable,
            selector,
            p_bounds,
            pilot_len,
            symmetrize_prior,
        } => Loaded::Fine(FineNetParams {
            weights: read_all(&weights)?,
            thetas,
            omega,
            omega_trainable,
            selector,
            p_bounds,
            pilot_len,
            symmetrize_prior,
        }),
        StageParams::Baseline { lambda, iters } => Loaded::Baseline(lambda, iters),
    }))
}

/// Reads the checkpoint of `scheme` from `dir`; `None` when no stage file is
/// present. With `ids`, a checkpoint for another sensing matrix is refused.
pub fn load_checkpoint(dir: &Path, scheme: SchemeName, ids: Option<&ArtifactIds>) -> Result<Option<SchemeModel>> {
    let bad = |stage: &str| Error::format(dir, format!("{scheme} {stage} checkpoint holds the wrong stage kind"));
    if let Some(single) = load_stage(dir, scheme, "single", ids)? {
        return match single {
            Loaded::Coarse(c) => Ok(Some(SchemeModel::Single(c))),
            Loaded::Baseline(lambda, iters) => Ok(Some(SchemeModel::Baseline { lambda, iters })),
            Loaded::Fine(_) => Err(bad("single")),
        };
    }
    let coarse = match load_stage(dir, scheme, "coarse", ids)? {
        Some(Loaded::Coarse(c)) => Some(c),
        Some(_) => return Err(bad("coarse")),
        None => None,
    };
    match load_stage(dir, scheme, "fine", ids)? {
        Some(Loaded::Fine(fine)) => {
            if scheme.spec().coarse && coarse.is_none() {
                return Ok(None);
            }
            Ok(Some(SchemeModel::TwoStage { coarse, fine }))
        }
        Some(_) => Err(bad("fine")),
        None => Ok(None),
    }
}

/// Writes the coarse stage alone and drops any fine stage trained on top of
/// an earlier coarse net.
pub fn save_coarse_stage(dir: &Path, scheme: SchemeName, coarse: &CoarseNetParams, ids: &ArtifactIds) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (json, bin) = checkpoint_paths(dir, scheme, "fine");
    for stale in [json, bin] {
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
    }
    let mut w = TensorWriter::default();
    let p = coarse_entry(coarse, &mut w);
    save_stage(dir, scheme, "coarse", ids, p, w)
}

/// Only the coarse stage of a two-stage checkpoint, for resuming training.
pub fn load_coarse_stage(dir: &Path, scheme: SchemeName, ids: Option<&ArtifactIds>) -> Result<Option<CoarseNetParams>> {
    match load_stage(dir, scheme, "coarse", ids)? {
        Some(Loaded::Coarse(c)) => Ok(Some(c)),
        Some(_) => Err(Error::format(dir, "coarse checkpoint holds the wrong stage kind")),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::gen_dataset;

    fn cfg() -> SystemConfig {
        SystemConfig {
            m: 8,
            t: 6,
            frames: 2,
            s_bar: 5,
            s_c: 2,
            layers_coarse: 2,
            layers_fine: 3,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn dataset_round_trip_is_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&cfg(), 5, 9).unwrap();
        save_dataset(&ds, &dir.path().join("a")).unwrap();
        save_dataset(&gen_dataset(&cfg(), 5, 9).unwrap(), &dir.path().join("b")).unwrap();
        for f in ["manifest.json", "phi.bin", "samples.bin"] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap(),
                "{f}"
            );
        }
        let back = load_dataset(&dir.path().join("a")).unwrap();
        assert_eq!(back.phi_lifted, ds.phi_lifted);
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.pilot, ds.pilot);
        let bytes = fs::metadata(dir.path().join("a/samples.bin")).unwrap().len();
        assert_eq!(bytes as usize, 5 * (12 * 4 + 16 * 4) * 8);
    }

    #[test]
    fn tampered_phi_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&cfg(), 2, 1).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let p = dir.path().join("phi.bin");
        let mut b = fs::read(&p).unwrap();
        b[3] ^= 1;
        fs::write(&p, b).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::ArtifactMismatch(_))));
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_dataset(&cfg(), 2, 1).unwrap();
        let ids = ArtifactIds::of(&ds);
        for scheme in SchemeName::ALL {
            let model = SchemeModel::untrained(scheme, &ds.config, ds.phi_lifted.view(), 0.1).unwrap();
            let files = save_checkpoint(dir.path(), scheme, &model, &ids).unwrap();
            assert!(!files.is_empty());
            let back = load_checkpoint(dir.path(), scheme, Some(&ids)).unwrap().unwrap();
            assert_eq!(back, model, "{scheme}");
        }
        let other = ArtifactIds {
            phi_hash: "00".into(),
            ..ids
        };
        let err = load_checkpoint(dir.path(), SchemeName::CfBss, Some(&other)).unwrap_err();
        assert!(matches!(err, Error::ArtifactMismatch(_)));
    }

    #[test]
    fn absent_checkpoint_is_none() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(dir.path(), SchemeName::CfBfsj, None).unwrap().is_none());
    }
}
