//! Search report: JSON document plus a flat CSV.
//!
//! JSON schema (all latencies in milliseconds):
//!
//! ```text
//! {
//!   "config":     SwarmConfig,
//!   "iterations": [{ "iteration", "epochs",
//!                    "candidates":  [{ "group", "bundle_id", "particle", "genome",
//!                                      "accuracy", "latency_ms", "fitness" }],
//!                    "group_bests": [{ "group", "bundle_id", "genome",
//!                                      "accuracy", "latency_ms", "fitness" }] }],
//!   "pareto":     [{ "genome", "accuracy", "latency_ms", "fitness" }],
//!   "best":       { "genome", "accuracy", "latency_ms", "fitness" } | null
//! }
//! ```
//!
//! Failed evaluations have `accuracy` and `fitness` set to `null`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{Scored, SwarmConfig};
use crate::error::{Error, Result};
use crate::genome::NetworkGenome;

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub group: usize,
    pub bundle_id: u32,
    pub particle: usize,
    pub genome: NetworkGenome,
    pub accuracy: Option<f64>,
    pub latency_ms: f64,
    pub fitness: Option<f64>,
}

impl CandidateRecord {
    pub(super) fn new(group: usize, bundle_id: u32, particle: usize, s: &Scored) -> Self {
        Self {
            group,
            bundle_id,
            particle,
            genome: s.genome.clone(),
            accuracy: s.accuracy,
            latency_ms: s.latency_ms,
            fitness: finite(s.fitness),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBestRecord {
    pub group: usize,
    pub bundle_id: u32,
    pub genome: NetworkGenome,
    pub accuracy: Option<f64>,
    pub latency_ms: f64,
    pub fitness: Option<f64>,
}

impl GroupBestRecord {
    pub(super) fn new(group: usize, bundle_id: u32, s: &Scored) -> Self {
        Self {
            group,
            bundle_id,
            genome: s.genome.clone(),
            accuracy: s.accuracy,
            latency_ms: s.latency_ms,
            fitness: finite(s.fitness),
        }
    }

    /// Fitness with failures as `-inf`.
    pub fn fitness_value(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub epochs: usize,
    pub candidates: Vec<CandidateRecord>,
    pub group_bests: Vec<GroupBestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub config: SwarmConfig,
    pub iterations: Vec<IterationRecord>,
    pub pareto: Vec<Scored>,
    pub best: Option<Scored>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl SearchReport {
    pub fn to_json(&self) -> Result<String> {
        // serde_json writes non-finite floats as null, which is the schema's
        // encoding of failures
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    /// `iteration,group,bundle_id,particle,accuracy,latency_ms,fitness`;
    /// failed evaluations leave accuracy and fitness empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,group,bundle_id,particle,accuracy,latency_ms,fitness\n");
        for it in &self.iterations {
            for c in &it.candidates {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    it.iteration,
                    c.group,
                    c.bundle_id,
                    c.particle,
                    opt(c.accuracy),
                    c.latency_ms,
                    opt(c.fitness)
                );
            }
        }
        s
    }

    /// `accuracy,latency_ms,fitness,genome` for the Pareto front.
    pub fn pareto_csv(&self) -> String {
        let mut s = String::from("accuracy,latency_ms,fitness,fv1,fv2,bundle_id\n");
        for p in &self.pareto {
            let fv1: Vec<String> = p.genome.fv1.iter().map(|w| w.to_string()).collect();
            let fv2: String = p.genome.fv2.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                opt(p.accuracy),
                p.latency_ms,
                opt(finite(p.fitness)),
                fv1.join(" "),
                fv2,
                p.genome.bundle_id
            );
        }
        s
    }

    /// Best fitness of group `g` after each iteration.
    pub fn group_best_trace(&self, g: usize) -> Vec<f64> {
        self.iterations
            .iter()
            .filter_map(|it| it.group_bests.get(g).map(GroupBestRecord::fitness_value))
            .collect()
    }
}

/// Serializes `-inf` (a failed evaluation) as `null` and back.
pub(super) mod fitness_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}
