//! Expert definitions and per-sample, per-expert embedding banks.
//!
//! A bank is either generated synthetically from a two-class 2D latent
//! (each expert sees a noisy orthonormal lift of the latent, noisier for
//! cheaper experts) or loaded from a JSON manifest plus raw `f32` files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise added on top of `1 - fidelity` so even a perfect expert is not noiseless.
pub const NOISE_FLOOR: f64 = 0.05;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub id: usize,
    pub name: String,
    pub dim: usize,
    pub cost_tflops: f64,
    /// Class separability of synthetic embeddings; `None` for file-backed experts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
}

impl ExpertSpec {
    pub fn new(id: usize, name: &str, dim: usize, cost_tflops: f64, fidelity: f64) -> Self {
        ExpertSpec { id, name: name.to_string(), dim, cost_tflops, fidelity: Some(fidelity) }
    }
}

/// TimeSformer-B, VideoMAE ViT-B and VideoMAE ViT-L with their inference costs.
pub fn default_expert_triple() -> Vec<ExpertSpec> {
    vec![
        ExpertSpec::new(0, "tsf-b", 768, 0.59, 0.55),
        ExpertSpec::new(1, "vmae-b", 768, 2.7, 0.8),
        ExpertSpec::new(2, "vmae-l", 1024, 8.9, 0.95),
    ]
}

/// The default triple with every embedding width replaced, for runs where
/// full-width projections are too slow.
pub fn resized_experts(experts: &[ExpertSpec], dims: &[usize]) -> Vec<ExpertSpec> {
    experts.iter().zip(dims).map(|(e, &dim)| ExpertSpec { dim, ..e.clone() }).collect()
}

pub fn total_cost(experts: &[ExpertSpec]) -> f64 {
    experts.iter().map(|e| e.cost_tflops).sum()
}

/// Checks ids are exactly `0..E` in order, dims positive, costs positive.
pub fn validate_experts(experts: &[ExpertSpec]) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::Config("at least one expert is required".into()));
    }
    if experts.len() > 32 {
        return Err(Error::Config("at most 32 experts are supported".into()));
    }
    for (k, e) in experts.iter().enumerate() {
        if e.id != k {
            return Err(Error::Config(format!("expert ids must be dense and ordered; position {k} has id {}", e.id)));
        }
        if e.dim == 0 {
            return Err(Error::Config(format!("expert {} has zero embedding dim", e.id)));
        }
        if !(e.cost_tflops > 0.0 && e.cost_tflops.is_finite()) {
            return Err(Error::Config(format!("expert {} cost must be positive", e.id)));
        }
        if let Some(f) = e.fidelity {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("expert {} fidelity must lie in (0, 1]", e.id)));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labelled embeddings for every (sample, expert) pair. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBank {
    experts: Vec<ExpertSpec>,
    labels: Vec<u8>,
    split: Vec<Split>,
    embeddings: Vec<Array2<f32>>,
    latent: Option<Array2<f32>>,
}

impl EmbeddingBank {
    pub fn new(
        experts: Vec<ExpertSpec>,
        labels: Vec<u8>,
        split: Vec<Split>,
        embeddings: Vec<Array2<f32>>,
        latent: Option<Array2<f32>>,
    ) -> Result<Self> {
        validate_experts(&experts)?;
        let n = labels.len();
        if n == 0 {
            return Err(Error::Data("bank has no samples".into()));
        }
        if split.len() != n {
            return Err(Error::Data(format!("{} split entries for {n} samples", split.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        if !split.contains(&Split::Train) || !split.contains(&Split::Test) {
            return Err(Error::Data("both train and test splits must be non-empty".into()));
        }
        if embeddings.len() != experts.len() {
            return Err(Error::Data(format!("{} embedding matrices for {} experts", embeddings.len(), experts.len())));
        }
        for (e, m) in experts.iter().zip(&embeddings) {
            if m.dim() != (n, e.dim) {
                return Err(Error::Data(format!("expert {} embeddings are {:?}, expected ({n}, {})", e.id, m.dim(), e.dim)));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("expert {} embeddings contain non-finite values", e.id)));
            }
        }
        if let Some(z) = &latent {
            if z.dim() != (n, 2) || z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("latent must be a finite N×2 matrix".into()));
            }
        }
        Ok(EmbeddingBank { experts, labels, split, embeddings, latent })
    }

    pub fn experts(&self) -> &[ExpertSpec] {
        &self.experts
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, sample: usize) -> u8 {
        self.labels[sample]
    }

    pub fn split_of(&self, sample: usize) -> Split {
        self.split[sample]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.num_samples()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn embedding(&self, expert: usize, sample: usize) -> ArrayView1<'_, f32> {
        self.embeddings[expert].row(sample)
    }

    pub fn embedding_f64(&self, expert: usize, sample: usize) -> Vec<f64> {
        self.embedding(expert, sample).iter().map(|&v| v as f64).collect()
    }

    pub fn matrix(&self, expert: usize) -> &Array2<f32> {
        &self.embeddings[expert]
    }

    pub fn latent(&self) -> Option<&Array2<f32>> {
        self.latent.as_ref()
    }

    pub fn latent_of(&self, sample: usize) -> Option<[f32; 2]> {
        self.latent.as_ref().map(|z| [z[[sample, 0]], z[[sample, 1]]])
    }

    /// Per-dimension standard deviation of one expert's train-split embeddings.
    pub fn train_std(&self, expert: usize) -> Vec<f64> {
        let rows = self.indices(Split::Train);
        let m = &self.embeddings[expert];
        let n = rows.len() as f64;
        (0..m.ncols())
            .map(|c| {
                let mean = rows.iter().map(|&r| m[[r, c]] as f64).sum::<f64>() / n;
                let var = rows.iter().map(|&r| (m[[r, c]] as f64 - mean).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_train: usize,
    pub num_test: usize,
    /// Class centres sit at `±(μ, μ)`.
    pub class_separation: f64,
    /// Isotropic latent standard deviation `σ_z`.
    pub latent_noise: f64,
    /// Multiplier on train-split noise of `overfit_experts`; 1 disables.
    pub overfit_gap: f64,
    /// Experts whose train split gets the cleaner noise; `None` means the
    /// most expensive expert.
    pub overfit_experts: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_train: 1600,
            num_test: 400,
            class_separation: 1.0,
            latent_noise: 1.0,
            overfit_gap: 1.0,
            overfit_experts: None,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::Config("num_train and num_test must be positive".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if !(self.latent_noise > 0.0 && self.latent_noise.is_finite()) {
            return Err(Error::Config("latent_noise must be positive".into()));
        }
        if !(self.overfit_gap > 0.0 && self.overfit_gap <= 1.0) {
            return Err(Error::Config("overfit_gap must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Observation noise std for an expert of the given fidelity.
    pub fn noise_scale(&self, fidelity: f64) -> f64 {
        self.latent_noise * (1.0 - fidelity + NOISE_FLOOR)
    }

    fn overfit_targets(&self, experts: &[ExpertSpec]) -> Vec<usize> {
        match &self.overfit_experts {
            Some(ids) => ids.clone(),
            None => experts
                .iter()
                .max_by(|a, b| a.cost_tflops.total_cmp(&b.cost_tflops))
                .map(|e| vec![e.id])
                .unwrap_or_default(),
        }
    }
}

// Stream ids keep each expert's draws independent of the others.
const LATENT_STREAM: u64 = 0;
const LIFT_STREAM_BASE: u64 = 1 << 16;
const NOISE_STREAM_BASE: u64 = 1 << 17;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `d × 2` matrix with orthonormal columns (Gram–Schmidt on Gaussian draws).
fn orthonormal_lift(dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((dim, 2), |_| normal(rng));
    if dim == 1 {
        let norm = a[[0, 0]].abs().max(f64::MIN_POSITIVE);
        a[[0, 0]] /= norm;
        a[[0, 1]] = 0.0;
        return a;
    }
    let n0 = a.column(0).dot(&a.column(0)).sqrt();
    a.column_mut(0).mapv_inplace(|v| v / n0);
    let proj = a.column(0).dot(&a.column(1));
    let c0 = a.column(0).to_owned();
    a.column_mut(1).zip_mut_with(&c0, |v, &u| *v -= proj * u);
    let n1 = a.column(1).dot(&a.column(1)).sqrt();
    a.column_mut(1).mapv_inplace(|v| v / n1);
    a
}

/// Builds a synthetic bank. Labels are balanced within each split; the
/// first `num_train` samples form the train split.
pub fn generate_synthetic(cfg: &SyntheticConfig, experts: &[ExpertSpec]) -> Result<EmbeddingBank> {
    cfg.validate()?;
    validate_experts(experts)?;
    let mut sorted = experts.to_vec();
    sorted.sort_by(|a, b| a.cost_tflops.total_cmp(&b.cost_tflops));
    for pair in sorted.windows(2) {
        if pair[1].fidelity.unwrap_or(1.0) < pair[0].fidelity.unwrap_or(1.0) {
            return Err(Error::Config("fidelity must be nondecreasing in cost".into()));
        }
    }

    let n = cfg.num_train + cfg.num_test;
    let mut rng = stream_rng(cfg.seed, LATENT_STREAM);
    let mut labels = Vec::with_capacity(n);
    for count in [cfg.num_train, cfg.num_test] {
        let mut part: Vec<u8> = (0..count).map(|i| (i % 2) as u8).collect();
        part.shuffle(&mut rng);
        labels.extend(part);
    }
    let split: Vec<Split> = (0..n).map(|i| if i < cfg.num_train { Split::Train } else { Split::Test }).collect();

    let mu = cfg.class_separation;
    let sigma = cfg.latent_noise;
    let mut latent = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        let centre = if labels[i] == 1 { mu } else { -mu };
        latent[[i, 0]] = centre + sigma * normal(&mut rng);
        latent[[i, 1]] = centre + sigma * normal(&mut rng);
    }

    let overfit = cfg.overfit_targets(experts);
    let mut embeddings = Vec::with_capacity(experts.len());
    for e in experts {
        let mut lift_rng = stream_rng(cfg.seed, LIFT_STREAM_BASE + e.id as u64);
        let lift = orthonormal_lift(e.dim, &mut lift_rng);
        let offset: Vec<f64> = (0..e.dim).map(|_| sigma * normal(&mut lift_rng)).collect();
        let noise = cfg.noise_scale(e.fidelity.unwrap_or(1.0));
        let cleaner = cfg.overfit_gap < 1.0 && overfit.contains(&e.id);
        let mut noise_rng = stream_rng(cfg.seed, NOISE_STREAM_BASE + e.id as u64);
        let mut m = Array2::<f32>::zeros((n, e.dim));
        for i in 0..n {
            let scale = if cleaner && split[i] == Split::Train { noise * cfg.overfit_gap } else { noise };
            let (z0, z1) = (latent[[i, 0]], latent[[i, 1]]);
            for d in 0..e.dim {
                let value = lift[[d, 0]] * z0 + lift[[d, 1]] * z1 + offset[d] + scale * normal(&mut noise_rng);
                m[[i, d]] = value as f32;
            }
        }
        embeddings.push(m);
    }

    EmbeddingBank::new(experts.to_vec(), labels, split, embeddings, Some(latent.mapv(|v| v as f32)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestExpert {
    id: usize,
    name: String,
    dim: usize,
    cost_tflops: f64,
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fidelity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    num_samples: usize,
    labels_file: String,
    split_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent_file: Option<String>,
    experts: Vec<ManifestExpert>,
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f32>> {
    let bytes = fs::read(path)?;
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} bytes, manifest implies {rows}×{cols} f32 = {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{} contains non-finite values", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

/// Writes a manifest and its data files into `dir`; returns the manifest path.
pub fn save_bank(bank: &EmbeddingBank, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let labels: String = bank.labels.iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("labels.txt"), labels)?;
    let split: String = bank.split.iter().map(|s| format!("{}\n", s.as_str())).collect();
    fs::write(dir.join("split.txt"), split)?;
    let mut experts = Vec::with_capacity(bank.experts.len());
    for (e, m) in bank.experts.iter().zip(&bank.embeddings) {
        let file = format!("expert_{}_{}.f32", e.id, e.name);
        write_f32s(&dir.join(&file), m.iter().copied())?;
        experts.push(ManifestExpert {
            id: e.id,
            name: e.name.clone(),
            dim: e.dim,
            cost_tflops: e.cost_tflops,
            file,
            fidelity: e.fidelity,
        });
    }
    let latent_file = match &bank.latent {
        Some(z) => {
            write_f32s(&dir.join("latent.f32"), z.iter().copied())?;
            Some("latent.f32".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        version: 1,
        num_samples: bank.num_samples(),
        labels_file: "labels.txt".into(),
        split_file: "split.txt".into(),
        latent_file,
        experts,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn read_tokens(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Loads a bank from its manifest. Paths inside the manifest are resolved
/// relative to the manifest's directory.
pub fn load_bank(manifest_path: &Path) -> Result<EmbeddingBank> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.version != 1 {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n = manifest.num_samples;

    let mut seen = HashSet::new();
    for e in &manifest.experts {
        if !seen.insert(e.id) {
            return Err(Error::Format(format!("duplicate expert id {}", e.id)));
        }
    }
    let mut entries = manifest.experts.clone();
    entries.sort_by_key(|e| e.id);
    if entries.iter().enumerate().any(|(k, e)| e.id != k) {
        return Err(Error::Format("expert ids must be exactly 0..E-1".into()));
    }

    let labels = read_tokens(&base.join(&manifest.labels_file))?
        .iter()
        .map(|t| match t.as_str() {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            other => Err(Error::Format(format!("bad label token {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(Error::Format(format!("labels file has {} rows, manifest says {n}", labels.len())));
    }
    let split = read_tokens(&base.join(&manifest.split_file))?
        .iter()
        .map(|t| match t.as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("bad split token {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if split.len() != n {
        return Err(Error::Format(format!("split file has {} rows, manifest says {n}", split.len())));
    }

    let mut experts = Vec::with_capacity(entries.len());
    let mut embeddings = Vec::with_capacity(entries.len());
    for e in &entries {
        embeddings.push(read_f32_matrix(&base.join(&e.file), n, e.dim)?);
        experts.push(ExpertSpec {
            id: e.id,
            name: e.name.clone(),
            dim: e.dim,
            cost_tflops: e.cost_tflops,
            fidelity: e.fidelity,
        });
    }
    let latent = match &manifest.latent_file {
        Some(f) => Some(read_f32_matrix(&base.join(f), n, 2)?),
        None => None,
    };
    validate_experts(&experts).map_err(|e| Error::Format(e.to_string()))?;
    EmbeddingBank::new(experts, labels, split, embeddings, latent)
}
