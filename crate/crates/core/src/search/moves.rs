//! Discrete particle moves: velocities between genomes, the evolve step and
//! repair back into the search bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::{GenomeBounds, NetworkGenome, WidthAlphabet};

/// Difference from a particle's position to a target genome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Velocity {
    /// Signed alphabet-index distance per position.
    pub dfv1: Vec<i32>,
    /// Pool-mask difference per position, in `{-1, 0, 1}`.
    pub dfv2: Vec<i8>,
}

impl Velocity {
    pub fn zero(depth: usize) -> Self {
        Self { dfv1: vec![0; depth], dfv2: vec![0; depth] }
    }

    pub fn is_zero(&self) -> bool {
        self.dfv1.iter().all(|&d| d == 0) && self.dfv2.iter().all(|&d| d == 0)
    }
}

fn width_index(alphabet: &WidthAlphabet, w: usize) -> Result<i32> {
    alphabet
        .index_of(w)
        .map(|i| i as i32)
        .ok_or_else(|| Error::InvalidGenome(format!("width {w} not in the width alphabet")))
}

pub fn get_velocity(current: &NetworkGenome, best: &NetworkGenome, alphabet: &WidthAlphabet) -> Result<Velocity> {
    if current.bundle_id != best.bundle_id {
        return Err(Error::InvalidArgument(format!(
            "velocity between bundle {} and bundle {}",
            current.bundle_id, best.bundle_id
        )));
    }
    if current.depth() != best.depth() || current.fv2.len() != best.fv2.len() {
        return Err(Error::InvalidArgument(format!(
            "velocity between depths {} and {}",
            current.depth(),
            best.depth()
        )));
    }
    let dfv1 = current
        .fv1
        .iter()
        .zip(&best.fv1)
        .map(|(&a, &b)| Ok(width_index(alphabet, b)? - width_index(alphabet, a)?))
        .collect::<Result<Vec<_>>>()?;
    let dfv2 = current.fv2.iter().zip(&best.fv2).map(|(&a, &b)| b as i8 - a as i8).collect();
    Ok(Velocity { dfv1, dfv2 })
}

/// Move probabilities of the evolve step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveConfig {
    /// Probability of stepping toward the local best at a mismatched position.
    pub r_local: f64,
    /// Probability of stepping toward the group best at a mismatched position.
    pub r_group: f64,
    /// Probability of repeating the previous width step at a position.
    #[serde(default)]
    pub inertia: f64,
    /// Per-position probability of a random width step and of a pool toggle.
    #[serde(default)]
    pub mutation: f64,
}

impl Default for MoveConfig {
    fn default() -> Self {
        Self { r_local: 0.5, r_group: 0.3, inertia: 0.0, mutation: 0.0 }
    }
}

impl MoveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("r_local", self.r_local),
            ("r_group", self.r_group),
            ("inertia", self.inertia),
            ("mutation", self.mutation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Result of one evolve step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Moved {
    pub genome: NetworkGenome,
    /// Width steps actually taken (before clamping), for inertia.
    pub steps: Vec<i32>,
}

/// Moves `current` toward its local and group bests.
///
/// Per position, in order: a width step toward the local best with
/// probability `r_local`, one toward the group best with probability
/// `r_group`, a repeat of the previous step with probability `inertia`, a
/// random width step with probability `mutation`; then the pool bit is set
/// to the local best's with probability `r_local`, to the group best's with
/// probability `r_group`, and toggled with probability `mutation`. Every
/// draw is made whether or not it can have an effect, so the random stream
/// depends only on the depth.
pub fn evolve(
    current: &NetworkGenome,
    v_local: &Velocity,
    v_group: &Velocity,
    previous_steps: &[i32],
    cfg: &MoveConfig,
    bounds: &GenomeBounds,
    rng: &mut impl Rng,
) -> Result<Moved> {
    let depth = current.depth();
    if v_local.dfv1.len() != depth || v_group.dfv1.len() != depth || v_local.dfv2.len() != depth || v_group.dfv2.len() != depth {
        return Err(Error::InvalidArgument("velocity length differs from genome depth".into()));
    }
    let alphabet = &bounds.widths;
    let mut fv1 = Vec::with_capacity(depth);
    let mut fv2 = current.fv2.clone();
    let mut steps = vec![0; depth];
    let mut toggled_on = Vec::new();
    let mut toggled_off = Vec::new();
    for k in 0..depth {
        let idx = width_index(alphabet, current.fv1[k])?;
        let mut step = 0;
        if rng.random_bool(cfg.r_local) {
            step += v_local.dfv1[k].signum();
        }
        if rng.random_bool(cfg.r_group) {
            step += v_group.dfv1[k].signum();
        }
        if rng.random_bool(cfg.inertia) {
            step += previous_steps.get(k).copied().unwrap_or(0).signum();
        }
        let mutate = rng.random_bool(cfg.mutation);
        let dir = if rng.random_bool(0.5) { 1 } else { -1 };
        if mutate {
            step += dir;
        }
        steps[k] = step;
        fv1.push(alphabet.clamped((idx + step) as isize));

        let before = fv2[k];
        if rng.random_bool(cfg.r_local) && v_local.dfv2[k] != 0 {
            fv2[k] = v_local.dfv2[k] > 0;
        }
        if rng.random_bool(cfg.r_group) && v_group.dfv2[k] != 0 {
            fv2[k] = v_group.dfv2[k] > 0;
        }
        if rng.random_bool(cfg.mutation) {
            fv2[k] = !fv2[k];
        }
        match (before, fv2[k]) {
            (false, true) => toggled_on.push(k),
            (true, false) => toggled_off.push(k),
            _ => {}
        }
    }
    let mut g = NetworkGenome { fv1, fv2, ..current.clone() };
    repair_pools(&mut g, bounds, &toggled_on, &toggled_off);
    g.validate(bounds)?;
    Ok(Moved { genome: g, steps })
}

/// Brings the pool count into `[min_pools, max_pools]`: excess pools are
/// dropped latest-toggled first (then from the end), missing pools are
/// restored latest-removed first (then at the earliest free position).
pub fn repair_pools(g: &mut NetworkGenome, bounds: &GenomeBounds, toggled_on: &[usize], toggled_off: &[usize]) {
    let max = bounds.max_pools(g.depth());
    let min = bounds.min_pools.min(max);
    let mut on = toggled_on.to_vec();
    while g.pool_count() > max {
        let k = on.pop().unwrap_or_else(|| g.fv2.iter().rposition(|&p| p).expect("pool count > 0"));
        g.fv2[k] = false;
    }
    let mut off = toggled_off.to_vec();
    while g.pool_count() < min {
        let k = off.pop().unwrap_or_else(|| g.fv2.iter().position(|&p| !p).expect("free position"));
        g.fv2[k] = true;
    }
}
