//! Accuracy proxies and latency models used by the search.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, Sample};
use crate::error::{Error, Result};
use crate::genome::{instantiate, FeatureShape, GenomeBounds, NetworkGenome};
use crate::head::{Anchor, NUM_ANCHORS};
use crate::hw::{estimate_fpga, estimate_gpu, make_tiling_plan, FpgaTarget, GpuTarget};
use crate::model::Network;
use crate::quant::QuantScheme;
use crate::train::{evaluate, mean, train, TrainConfig};

/// Fast-training accuracy proxy: `(genome, epochs, seed) -> accuracy in [0, 1]`.
pub trait Evaluator: Sync {
    fn evaluate(&self, genome: &NetworkGenome, epochs: usize, seed: u64) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&NetworkGenome, usize, u64) -> Result<f64> + Sync,
{
    fn evaluate(&self, genome: &NetworkGenome, epochs: usize, seed: u64) -> Result<f64> {
        self(genome, epochs, seed)
    }
}

/// Latency estimate in milliseconds.
pub trait LatencyModel: Sync {
    fn latency_ms(&self, genome: &NetworkGenome) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpgaLatency {
    pub target: FpgaTarget,
    pub scheme: QuantScheme,
    /// Images stitched per pass (a perfect square).
    pub batch: usize,
    pub input: FeatureShape,
}

impl LatencyModel for FpgaLatency {
    /// Per-image latency.
    fn latency_ms(&self, genome: &NetworkGenome) -> Result<f64> {
        let spec = instantiate(genome, self.input)?;
        let plan = make_tiling_plan(self.input, self.batch)?;
        Ok(estimate_fpga(&spec, &self.scheme, &plan, &self.target)?.latency_per_image_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuLatency {
    pub target: GpuTarget,
    pub input: FeatureShape,
}

impl LatencyModel for GpuLatency {
    fn latency_ms(&self, genome: &NetworkGenome) -> Result<f64> {
        Ok(estimate_gpu(&instantiate(genome, self.input)?, &self.target)?.latency_ms)
    }
}

/// Closed-form accuracy landscape with a unique peak, for exercising the
/// search without training.
///
/// `accuracy = ceiling * (1 - width_weight * d1 - pool_weight * d2) * (1 - 2^(-epochs/2))`
/// where `d1` is the mean alphabet-index distance to the peak's widths
/// (normalized by the alphabet span) and `d2` the fraction of pool positions
/// that differ. Genomes of another depth score as if every position missed.
/// `noise` adds a seed-dependent uniform perturbation of that amplitude;
/// results are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surrogate {
    pub peak: NetworkGenome,
    pub bounds: GenomeBounds,
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

impl Surrogate {
    pub fn new(peak: NetworkGenome, bounds: GenomeBounds) -> Result<Self> {
        peak.validate(&bounds)?;
        Ok(Self {
            peak,
            bounds,
            ceiling: default_ceiling(),
            width_weight: default_width_weight(),
            pool_weight: default_pool_weight(),
            noise: 0.0,
        })
    }

    /// Accuracy after unlimited training.
    pub fn plateau(&self, g: &NetworkGenome) -> Result<f64> {
        let a = &self.bounds.widths;
        let span = (a.len().max(2) - 1) as f64;
        let depth = self.peak.depth();
        let (d1, d2) = if g.depth() != depth {
            (1.0, 1.0)
        } else {
            let mut d1 = 0.0;
            for (&w, &p) in g.fv1.iter().zip(&self.peak.fv1) {
                let (i, j) = (a.index_of(w), a.index_of(p));
                let (Some(i), Some(j)) = (i, j) else {
                    return Err(Error::InvalidGenome(format!("width {w} not in the width alphabet")));
                };
                d1 += (i as f64 - j as f64).abs() / span;
            }
            let d2 = g.fv2.iter().zip(&self.peak.fv2).filter(|(a, b)| a != b).count() as f64;
            (d1 / depth as f64, d2 / depth as f64)
        };
        Ok(self.ceiling * (1.0 - self.width_weight * d1 - self.pool_weight * d2))
    }
}

impl Evaluator for Surrogate {
    fn evaluate(&self, genome: &NetworkGenome, epochs: usize, seed: u64) -> Result<f64> {
        genome.validate(&self.bounds)?;
        let progress = 1.0 - 0.5f64.powf(epochs as f64 / 2.0);
        let mut acc = self.plateau(genome)? * progress;
        if self.noise > 0.0 {
            let u = (mix_seed(seed, 0xACC) >> 11) as f64 / (1u64 << 53) as f64;
            acc += self.noise * (2.0 * u - 1.0);
        }
        Ok(acc.clamp(0.0, 1.0))
    }
}

/// Trains each candidate from scratch on a small dataset and reports its
/// held-out mean IoU.
#[derive(Debug, Clone)]
pub struct TinyTrainer {
    pub train: Arc<Vec<Sample>>,
    pub val: Arc<Vec<Sample>>,
    pub input: FeatureShape,
    pub anchors: [Anchor; NUM_ANCHORS],
    /// `epochs` and `seed` are overridden per candidate.
    pub config: TrainConfig,
}

impl Evaluator for TinyTrainer {
    fn evaluate(&self, genome: &NetworkGenome, epochs: usize, seed: u64) -> Result<f64> {
        if self.val.is_empty() {
            return Err(Error::Evaluation("empty validation set".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::init(genome, self.input, self.anchors, &mut rng)?;
        let cfg = TrainConfig { epochs, seed, ..self.config.clone() };
        train(&mut net, &self.train, &[], &cfg, |_| {})?;
        Ok(mean(&evaluate(&net, &self.val)?).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Activation;

    fn bounds() -> GenomeBounds {
        GenomeBounds { depth_min: 3, depth_max: 3, input: FeatureShape::new(3, 16, 32), ..Default::default() }
    }

    fn g(fv1: Vec<usize>, fv2: Vec<bool>) -> NetworkGenome {
        NetworkGenome { bundle_id: 0, fv1, fv2, bypass: None, activation: Activation::Relu6 }
    }

    #[test]
    fn surrogate_peak_is_best_and_epochs_help() {
        let s = Surrogate::new(g(vec![96, 192, 48], vec![true, false, true]), bounds()).unwrap();
        let peak = s.evaluate(&s.peak, 10, 0).unwrap();
        let off = s.evaluate(&g(vec![96, 384, 48], vec![true, false, true]), 10, 0).unwrap();
        assert!(peak > off);
        assert!(s.evaluate(&s.peak, 2, 0).unwrap() < peak);
        assert!((0.0..=1.0).contains(&peak));
    }
}
