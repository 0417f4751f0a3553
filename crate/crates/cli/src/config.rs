//! Config files for every command.
//!
//! Relative paths are resolved against the config file's directory. The
//! resolved form, written as `config.toml` into the run directory, holds
//! absolute paths, inlined genomes and computed anchors, so re-running from
//! it needs nothing else.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bundlenas_core::data::{generate, load_dataset, split, Dataset, DatasetSpec};
use bundlenas_core::head::{Anchor, NUM_ANCHORS};
use bundlenas_core::hw::{FpgaTarget, GpuTarget};
use bundlenas_core::scoring::Track;
use bundlenas_core::search::SwarmConfig;
use bundlenas_core::train::TrainConfig;
use bundlenas_core::{FeatureShape, NetworkGenome, QuantScheme};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::usage;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("parsing config {}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).context("serializing resolved config")
}

/// Absolute form of `p`, taken relative to `base` when relative.
pub fn absolutize(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

pub fn config_dir(config: &Path) -> PathBuf {
    let parent = config.parent().unwrap_or(Path::new("."));
    absolutize(&std::env::current_dir().unwrap_or_default(), parent)
}

fn check<E: std::fmt::Display>(r: std::result::Result<(), E>) -> Result<()> {
    r.map_err(|e| usage(e.to_string()))
}

/// Where samples come from: generated in memory or read from a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<DatasetSpec>,
    /// Dataset directory (`images/*.ppm`, `boxes/*.txt`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Fraction held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_val_fraction() -> f64 {
    0.2
}

impl DataConfig {
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        if self.synthetic.is_some() == self.dir.is_some() {
            return Err(usage("data needs exactly one of `synthetic` or `dir`"));
        }
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(usage("data.val_fraction must be in [0, 1]"));
        }
        if let Some(spec) = &self.synthetic {
            check(spec.validate())?;
        }
        if let Some(d) = &mut self.dir {
            *d = absolutize(base, d);
        }
        Ok(())
    }

    pub fn load_all(&self) -> Result<Dataset> {
        match (&self.synthetic, &self.dir) {
            (Some(spec), _) => Ok(generate(spec)?),
            (None, Some(dir)) => load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display())),
            (None, None) => Err(usage("data source missing")),
        }
    }

    /// `(train, validation)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        Ok(split(&self.load_all()?, self.val_fraction, self.split_seed))
    }
}

/// Inlines a genome given by file (`override_file` wins over the config).
pub fn resolve_genome(
    genome: &mut Option<NetworkGenome>,
    genome_file: &mut Option<PathBuf>,
    base: &Path,
    override_file: Option<&Path>,
) -> Result<NetworkGenome> {
    if let Some(f) = override_file {
        *genome = None;
        *genome_file = Some(absolutize(&std::env::current_dir().unwrap_or_default(), f));
    }
    if let Some(f) = genome_file.take() {
        if genome.is_some() {
            return Err(usage("give either `genome` or `genome_file`, not both"));
        }
        let f = absolutize(base, &f);
        let text = std::fs::read_to_string(&f).map_err(|e| usage(format!("reading genome {}: {e}", f.display())))?;
        *genome = Some(NetworkGenome::from_toml(&text).map_err(|e| usage(format!("genome file {}: {e}", f.display())))?);
    }
    let g = genome.clone().ok_or_else(|| usage("no genome given"))?;
    check(g.validate_structure())?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genome: Option<NetworkGenome>,
    /// Alternative to an inline `genome`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genome_file: Option<PathBuf>,
    #[serde(default)]
    pub input: FeatureShape,
    /// Seed of the weight initialization.
    #[serde(default)]
    pub init_seed: u64,
    /// Anchor priors; k-means over the training boxes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<[Anchor; NUM_ANCHORS]>,
    pub data: DataConfig,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
}

fn default_train() -> TrainConfig {
    TrainConfig::default()
}

/// Which part of the split to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    #[default]
    Val,
    All,
}

impl Subset {
    pub fn pick(self, data: &DataConfig) -> Result<Dataset> {
        Ok(match self {
            Subset::All => data.load_all()?,
            Subset::Train => data.load()?.0,
            Subset::Val => data.load()?.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmdConfig {
    pub checkpoint: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub subset: Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeCmdConfig {
    /// Float checkpoint.
    pub checkpoint: PathBuf,
    pub data: DataConfig,
    /// Calibration images, taken from the start of the training split.
    #[serde(default = "default_calib")]
    pub calibration_images: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<QuantScheme>,
}

fn default_calib() -> usize {
    64
}

fn default_schemes() -> Vec<QuantScheme> {
    vec![QuantScheme::default()]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    #[default]
    Fpga,
    Gpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateCmdConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genome: Option<NetworkGenome>,
    /// Alternative to an inline `genome`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genome_file: Option<PathBuf>,
    #[serde(default)]
    pub input: FeatureShape,
    #[serde(default)]
    pub device: Device,
    /// Images stitched per pass; a perfect square.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub quant: QuantScheme,
    #[serde(default)]
    pub fpga: FpgaTarget,
    #[serde(default)]
    pub gpu: GpuTarget,
}

fn default_batch() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreCmdConfig {
    /// One `<team>.csv` per team plus `energy.csv`.
    pub results_dir: PathBuf,
    /// `image_id,x_min,y_min,x_max,y_max`.
    pub ground_truth: PathBuf,
    pub track: Track,
}

/// Surrogate landscape; its bounds are the swarm's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub peak: NetworkGenome,
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
    #[serde(default = "default_width_weight")]
    pub width_weight: f64,
    #[serde(default = "default_pool_weight")]
    pub pool_weight: f64,
    #[serde(default)]
    pub noise: f64,
}

fn default_ceiling() -> f64 {
    0.9
}
fn default_width_weight() -> f64 {
    0.5
}
fn default_pool_weight() -> f64 {
    0.3
}

/// Trains every candidate on the swarm's input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyTrainerConfig {
    pub data: DataConfig,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<[Anchor; NUM_ANCHORS]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Surrogate(SurrogateConfig),
    TinyTrainer(TinyTrainerConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpgaLatencyConfig {
    #[serde(default)]
    pub target: FpgaTarget,
    #[serde(default)]
    pub quant: QuantScheme,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuLatencyConfig {
    #[serde(default)]
    pub target: GpuTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyConfig {
    Fpga(FpgaLatencyConfig),
    Gpu(GpuLatencyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchCmdConfig {
    pub swarm: SwarmConfig,
    pub evaluator: EvaluatorConfig,
    pub latency: LatencyConfig,
}

impl SearchCmdConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.swarm.validate())?;
        match &self.evaluator {
            EvaluatorConfig::Surrogate(s) => check(s.peak.validate(&self.swarm.bounds))?,
            EvaluatorConfig::TinyTrainer(t) => check(t.train.validate())?,
        }
        match &self.latency {
            LatencyConfig::Fpga(f) => {
                check(f.target.validate())?;
                check(f.quant.validate())?;
            }
            LatencyConfig::Gpu(g) => check(g.target.validate())?,
        }
        Ok(())
    }
}

/// Checks that images match the network input size.
pub fn check_image_size(data: &[bundlenas_core::data::Sample], input: FeatureShape) -> Result<()> {
    if let Some(s) = data.first() {
        let sh = s.image.shape();
        if sh[1..] != [input.c, input.h, input.w] {
            return Err(anyhow::anyhow!(
                "dataset images are {}x{}x{}, the network expects {}x{}x{}",
                sh[1],
                sh[2],
                sh[3],
                input.c,
                input.h,
                input.w
            ));
        }
    }
    Ok(())
}
