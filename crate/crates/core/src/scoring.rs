//! Contest scoring: per-image IoU, mean IoU score, energy score, total
//! score, and the tracking metrics average overlap (AO) and success rate (SR).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form. Units (normalized or pixel) must be
/// consistent within a call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::InvalidArgument(format!("invalid box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union.
///
/// Degenerate conventions: if the union has zero area, the IoU is 1 when both
/// boxes are the same point/segment and 0 otherwise.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn mean(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} of an empty list")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean IoU over all images of a team.
pub fn r_iou(ious: &[f64]) -> Result<f64> {
    mean(ious, "R_IoU")
}

/// Mean energy over all teams.
pub fn mean_energy(energies: &[f64]) -> Result<f64> {
    mean(energies, "mean energy")
}

/// `max(0, 1 + 0.2 * log_base(e_mean / e_team))`.
pub fn energy_score(e_team: f64, e_mean: f64, log_base: f64) -> Result<f64> {
    if !(e_team > 0.0) || !(e_mean > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "energies must be positive (team {e_team}, mean {e_mean})"
        )));
    }
    if !(log_base > 1.0) {
        return Err(Error::InvalidArgument(format!("log base must be > 1, got {log_base}")));
    }
    Ok((1.0 + 0.2 * (e_mean / e_team).ln() / log_base.ln()).max(0.0))
}

pub fn total_score(r_iou: f64, energy_score: f64) -> f64 {
    r_iou * (1.0 + energy_score)
}

/// Contest track; selects the energy-score log base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Fpga,
    Gpu,
}

impl Track {
    pub fn log_base(self) -> f64 {
        match self {
            Track::Fpga => 2.0,
            Track::Gpu => 10.0,
        }
    }
}

/// Average overlap: mean IoU across frames.
pub fn ao(ious: &[f64]) -> Result<f64> {
    mean(ious, "AO")
}

/// How SR treats an IoU exactly at the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrBoundary {
    /// Count only IoU strictly above the threshold.
    #[default]
    Strict,
    Inclusive,
}

/// Success rate: fraction of frames whose IoU exceeds `threshold`.
pub fn sr(ious: &[f64], threshold: f64, boundary: SrBoundary) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::InvalidArgument("SR of an empty list".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("SR threshold must be in (0,1), got {threshold}")));
    }
    let hits = ious
        .iter()
        .filter(|&&v| match boundary {
            SrBoundary::Strict => v > threshold,
            SrBoundary::Inclusive => v >= threshold,
        })
        .count();
    Ok(hits as f64 / ious.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamResult {
    pub team_id: String,
    pub ious: Vec<f64>,
    pub energy_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub team: String,
    pub r_iou: f64,
    pub es: f64,
    pub ts: f64,
}

/// Scores every team and sorts by total score, descending; ties go to the
/// lexicographically smaller team id.
pub fn leaderboard(results: &[TeamResult], track: Track) -> Result<Vec<LeaderboardRow>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("leaderboard needs at least one team".into()));
    }
    let energies: Vec<f64> = results.iter().map(|r| r.energy_joules).collect();
    let e_mean = mean_energy(&energies)?;
    let mut rows = results
        .iter()
        .map(|r| {
            if r.ious.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!("team {} has IoU outside [0,1]", r.team_id)));
            }
            let ri = r_iou(&r.ious)?;
            let es = energy_score(r.energy_joules, e_mean, track.log_base())?;
            Ok(LeaderboardRow {
                team: r.team_id.clone(),
                r_iou: ri,
                es,
                ts: total_score(ri, es),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.ts.total_cmp(&a.ts).then_with(|| a.team.cmp(&b.team)));
    Ok(rows)
}
