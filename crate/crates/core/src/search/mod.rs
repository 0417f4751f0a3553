//! Group-based particle swarm search over network genomes.
//!
//! Each group holds `N` genomes built from one bundle type and never
//! exchanges particles with other groups. Every iteration fast-trains all
//! particles, scores them with the latency-aware fitness, updates local and
//! group bests, and moves each particle toward both bests.
//!
//! Randomness is drawn from per-particle streams seeded by
//! `(seed, iteration, group, particle)`, and evaluation results are merged
//! by particle index, so reports do not depend on the worker count.

mod evaluator;
mod moves;
mod pareto;
mod report;

pub use evaluator::{Evaluator, FpgaLatency, GpuLatency, LatencyModel, Surrogate, TinyTrainer};
pub use moves::{evolve, get_velocity, repair_pools, MoveConfig, Moved, Velocity};
pub use pareto::{pareto_front, ParetoPoint};
pub use report::{CandidateRecord, GroupBestRecord, IterationRecord, SearchReport};

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::mix_seed;
use crate::error::{Error, Result};
use crate::genome::{random_genome, GenomeBounds, NetworkGenome};

/// Latency-aware fitness `acc + alpha * (est - tar)`; `alpha` must be negative.
pub fn fitness(acc: f64, est: f64, tar: f64, alpha: f64) -> Result<f64> {
    if !(alpha < 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be negative, got {alpha}")));
    }
    Ok(acc + alpha * (est - tar))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    /// One group per bundle id (`M = bundles.len()`).
    pub bundles: Vec<u32>,
    /// Particles per group (`N`).
    pub particles: usize,
    /// Iterations (`I`).
    pub iterations: usize,
    /// Weight of the latency term; negative.
    pub alpha: f64,
    pub target_latency_ms: f64,
    /// Training epochs per iteration, non-decreasing. Empty selects a linear
    /// ramp from 2 to 10.
    #[serde(default)]
    pub epoch_schedule: Vec<usize>,
    #[serde(default)]
    pub moves: MoveConfig,
    #[serde(default)]
    pub bounds: GenomeBounds,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            bundles: vec![0],
            particles: 8,
            iterations: 10,
            alpha: -0.01,
            target_latency_ms: 10.0,
            epoch_schedule: Vec::new(),
            moves: MoveConfig::default(),
            bounds: GenomeBounds::default(),
            seed: 0,
        }
    }
}

/// Linear ramp from 2 to 10 epochs over `iterations`.
pub fn default_epoch_schedule(iterations: usize) -> Vec<usize> {
    if iterations <= 1 {
        return vec![2; iterations];
    }
    (0..iterations)
        .map(|i| 2 + (8 * i + (iterations - 1) / 2) / (iterations - 1))
        .collect()
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bundles.is_empty() || self.particles == 0 || self.iterations == 0 {
            return Err(Error::InvalidConfig("groups, particles and iterations must all be >= 1".into()));
        }
        let mut seen = self.bundles.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.bundles.len() {
            return Err(Error::InvalidConfig("bundle ids must be distinct (one group per bundle)".into()));
        }
        for &b in &self.bundles {
            crate::genome::Bundle::by_id(b)?;
        }
        if !(self.alpha < 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be negative, got {}", self.alpha)));
        }
        if !self.target_latency_ms.is_finite() {
            return Err(Error::InvalidConfig("target latency must be finite".into()));
        }
        let s = &self.epoch_schedule;
        if !s.is_empty() {
            if s.len() != self.iterations {
                return Err(Error::InvalidConfig(format!(
                    "epoch schedule has {} entries for {} iterations",
                    s.len(),
                    self.iterations
                )));
            }
            if s.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidConfig("epoch schedule must be non-decreasing".into()));
            }
        }
        self.moves.validate()?;
        self.bounds.validate()
    }

    pub fn schedule(&self) -> Vec<usize> {
        if self.epoch_schedule.is_empty() {
            default_epoch_schedule(self.iterations)
        } else {
            self.epoch_schedule.clone()
        }
    }
}

/// A scored genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub genome: NetworkGenome,
    /// `None` when evaluation failed.
    pub accuracy: Option<f64>,
    pub latency_ms: f64,
    /// `-inf` when evaluation failed.
    #[serde(with = "report::fitness_or_null")]
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub genome: NetworkGenome,
    pub last: Option<Scored>,
    pub local_best: Option<Scored>,
    steps: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub bundle_id: u32,
    pub particles: Vec<Particle>,
    pub group_best: Option<Scored>,
}

/// Ranking order: higher fitness, then lower latency, then lower index.
fn better(a: &Scored, ai: usize, b: &Scored, bi: usize) -> bool {
    match a.fitness.total_cmp(&b.fitness) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.latency_ms.total_cmp(&b.latency_ms) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => ai < bi,
        },
    }
}

fn stream(seed: u64, iteration: usize, group: usize, particle: usize) -> u64 {
    mix_seed(mix_seed(mix_seed(seed, iteration as u64), group as u64), particle as u64)
}

pub fn initial_population(cfg: &SwarmConfig) -> Result<Vec<GroupState>> {
    cfg.validate()?;
    cfg.bundles
        .iter()
        .enumerate()
        .map(|(gi, &bundle_id)| {
            let particles = (0..cfg.particles)
                .map(|pi| {
                    // iteration index u64::MAX marks the initial draw
                    let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed, usize::MAX, gi, pi));
                    let genome = random_genome(&mut rng, &cfg.bounds, bundle_id)?;
                    Ok(Particle { steps: vec![0; genome.depth()], genome, last: None, local_best: None })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroupState { bundle_id, particles, group_best: None })
        })
        .collect()
}

fn score(
    cfg: &SwarmConfig,
    evaluator: &dyn Evaluator,
    latency: &dyn LatencyModel,
    genome: &NetworkGenome,
    epochs: usize,
    seed: u64,
) -> Scored {
    let lat = latency.latency_ms(genome);
    let acc = evaluator.evaluate(genome, epochs, seed);
    match (acc, lat) {
        (Ok(acc), Ok(lat)) if acc.is_finite() && lat.is_finite() => Scored {
            genome: genome.clone(),
            accuracy: Some(acc),
            latency_ms: lat,
            fitness: fitness(acc, lat, cfg.target_latency_ms, cfg.alpha).unwrap_or(f64::NEG_INFINITY),
        },
        (_, lat) => Scored {
            genome: genome.clone(),
            accuracy: None,
            latency_ms: lat.ok().filter(|l| l.is_finite()).unwrap_or(f64::INFINITY),
            fitness: f64::NEG_INFINITY,
        },
    }
}

/// Runs the search with `workers` evaluation threads (0 = rayon default).
pub fn run_search(
    cfg: &SwarmConfig,
    evaluator: &dyn Evaluator,
    latency: &dyn LatencyModel,
    workers: usize,
) -> Result<SearchReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let schedule = cfg.schedule();
    let mut groups = initial_population(cfg)?;
    let mut iterations = Vec::with_capacity(cfg.iterations);
    let mut all: Vec<Scored> = Vec::new();

    for (it, &epochs) in schedule.iter().enumerate() {
        let jobs: Vec<(usize, usize, NetworkGenome)> = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.particles.iter().enumerate().map(move |(pi, p)| (gi, pi, p.genome.clone())))
            .collect();
        let scored: Vec<Scored> = pool.install(|| {
            jobs.par_iter()
                .map(|(gi, pi, genome)| score(cfg, evaluator, latency, genome, epochs, stream(cfg.seed, it, *gi, *pi)))
                .collect()
        });

        let mut records = Vec::with_capacity(jobs.len());
        let mut bests = Vec::with_capacity(groups.len());
        let mut scored = scored.into_iter();
        for (gi, group) in groups.iter_mut().enumerate() {
            for (pi, p) in group.particles.iter_mut().enumerate() {
                let s = scored.next().expect("one score per job");
                records.push(CandidateRecord::new(gi, group.bundle_id, pi, &s));
                let replace = p.local_best.as_ref().is_none_or(|lb| better(&s, 0, lb, 1));
                if replace {
                    p.local_best = Some(s.clone());
                }
                all.push(s.clone());
                p.last = Some(s);
            }
            let mut best_i = None;
            for (pi, p) in group.particles.iter().enumerate() {
                let lb = p.local_best.as_ref().expect("scored");
                if best_i.is_none_or(|bi: usize| better(lb, pi, group.particles[bi].local_best.as_ref().unwrap(), bi)) {
                    best_i = Some(pi);
                }
            }
            let cand = group.particles[best_i.expect("N >= 1")].local_best.clone().expect("scored");
            // keep the incumbent on ties so the best never regresses
            if group.group_best.as_ref().is_none_or(|gb| better(&cand, 0, gb, 1)) {
                group.group_best = Some(cand);
            }
            bests.push(GroupBestRecord::new(gi, group.bundle_id, group.group_best.as_ref().unwrap()));
        }
        iterations.push(IterationRecord { iteration: it + 1, epochs, candidates: records, group_bests: bests });

        if it + 1 == cfg.iterations {
            break;
        }
        for (gi, group) in groups.iter_mut().enumerate() {
            let gb = group.group_best.clone().expect("set above");
            for (pi, p) in group.particles.iter_mut().enumerate() {
                let depth = p.genome.depth();
                let toward = |target: &NetworkGenome| {
                    if target.depth() == depth {
                        get_velocity(&p.genome, target, &cfg.bounds.widths)
                    } else {
                        Ok(Velocity::zero(depth))
                    }
                };
                let v_local = toward(&p.local_best.as_ref().expect("scored").genome)?;
                let v_group = toward(&gb.genome)?;
                let mut rng = ChaCha8Rng::seed_from_u64(stream(cfg.seed ^ 0x4D4F_5645, it, gi, pi));
                let moved = evolve(&p.genome, &v_local, &v_group, &p.steps, &cfg.moves, &cfg.bounds, &mut rng)?;
                p.genome = moved.genome;
                p.steps = moved.steps;
            }
        }
    }

    let points: Vec<ParetoPoint> = all
        .iter()
        .filter_map(|s| s.accuracy.map(|a| ParetoPoint { accuracy: a, latency_ms: s.latency_ms }))
        .collect();
    let ok: Vec<&Scored> = all.iter().filter(|s| s.accuracy.is_some()).collect();
    let pareto = pareto_front(&points).into_iter().map(|i| ok[i].clone()).collect();
    let best = groups
        .iter()
        .enumerate()
        .filter_map(|(gi, g)| g.group_best.as_ref().map(|b| (gi, b)))
        .fold(None::<(usize, &Scored)>, |acc, (gi, b)| match acc {
            Some((ai, a)) if !better(b, gi, a, ai) => Some((ai, a)),
            _ => Some((gi, b)),
        })
        .map(|(_, b)| b.clone());
    Ok(SearchReport { config: cfg.clone(), iterations, pareto, best })
}

/// Fixed front and back structure that a candidate bundle is stacked into
/// for the bundle-selection stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub fv1: Vec<usize>,
    pub fv2: Vec<bool>,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self { fv1: vec![48, 96, 192], fv2: vec![true, true, true], epochs: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCandidate {
    pub bundle_id: u32,
    pub genome: NetworkGenome,
    pub accuracy: f64,
    pub latency_ms: f64,
}

/// Evaluates every bundle inside the sketch and keeps the non-dominated ones
/// (maximum accuracy, minimum latency). Failed bundles are dropped.
pub fn bundle_stage1_evaluate(
    bundles: &[u32],
    evaluator: &dyn Evaluator,
    latency: &dyn LatencyModel,
    sketch: &SketchConfig,
) -> Result<Vec<BundleCandidate>> {
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("no candidate bundles".into()));
    }
    let mut cands = Vec::new();
    for &b in bundles {
        let genome = NetworkGenome {
            bundle_id: b,
            fv1: sketch.fv1.clone(),
            fv2: sketch.fv2.clone(),
            bypass: None,
            activation: Default::default(),
        };
        genome.validate_structure()?;
        let acc = evaluator.evaluate(&genome, sketch.epochs, mix_seed(sketch.seed, b as u64));
        let lat = latency.latency_ms(&genome);
        if let (Ok(accuracy), Ok(latency_ms)) = (acc, lat) {
            cands.push(BundleCandidate { bundle_id: b, genome, accuracy, latency_ms });
        }
    }
    let points: Vec<ParetoPoint> =
        cands.iter().map(|c| ParetoPoint { accuracy: c.accuracy, latency_ms: c.latency_ms }).collect();
    Ok(pareto_front(&points).into_iter().map(|i| cands[i].clone()).collect())
}
