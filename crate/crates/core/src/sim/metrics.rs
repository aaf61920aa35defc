//! Per-frame metrics and summaries over frame series.

use serde::{Deserialize, Serialize};

use crate::message::Phase;
use crate::NodeId;

pub const PHASES: [Phase; 5] = [Phase::Formation, Phase::Election, Phase::Claims, Phase::Transaction, Phase::Membership];

/// Snapshot taken at time zero and at the end of every slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub time_ms: u64,
    /// Slots completed so far.
    pub slot: u64,
    /// Remaining energy in percent of capacity, by node index.
    pub energy_pct: Vec<f64>,
    pub alive: Vec<bool>,
    pub payoff: Vec<f64>,
    /// Cumulative message counts in [`PHASES`] order.
    pub messages: [usize; 5],
    pub leader: Option<NodeId>,
    pub p_star: Option<f64>,
}

impl MetricsFrame {
    pub fn alive_fraction(&self) -> f64 {
        if self.alive.is_empty() {
            return 0.0;
        }
        self.alive.iter().filter(|a| **a).count() as f64 / self.alive.len() as f64
    }

    /// Population standard deviation of energy across all nodes, dead ones
    /// included at zero.
    pub fn energy_std(&self) -> f64 {
        std_dev(&self.energy_pct)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Time of the first frame in which some node is dead.
pub fn first_death(frames: &[MetricsFrame]) -> Option<u64> {
    frames.iter().find(|f| f.alive.iter().any(|a| !a)).map(|f| f.time_ms)
}

/// Per-frame, per-node payoff differences `a - b` for paired runs,
/// restricted to nodes alive in both. Frames are matched by position.
pub fn payoff_delta(a: &[MetricsFrame], b: &[MetricsFrame]) -> Vec<Vec<Option<f64>>> {
    a.iter()
        .zip(b)
        .map(|(fa, fb)| {
            (0..fa.payoff.len())
                .map(|i| (fa.alive[i] && fb.alive[i]).then(|| fa.payoff[i] - fb.payoff[i]))
                .collect()
        })
        .collect()
}

/// Count of (frame, node) pairs where `a`'s payoff falls below `b`'s by
/// more than `tolerance`.
pub fn dominance_violations(a: &[MetricsFrame], b: &[MetricsFrame], tolerance: f64) -> usize {
    payoff_delta(a, b)
        .iter()
        .flatten()
        .filter(|d| matches!(d, Some(x) if *x < -tolerance))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares. `None` with fewer than two distinct `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub initial_energy_std: f64,
    pub terminal_energy_std: f64,
    pub terminal_alive_fraction: f64,
    pub first_death_ms: Option<u64>,
    pub mean_payoff: f64,
    pub messages: [usize; 5],
}

pub fn summarize(frames: &[MetricsFrame]) -> Summary {
    let first = frames.first();
    let last = frames.last();
    Summary {
        frames: frames.len(),
        initial_energy_std: first.map_or(0.0, |f| f.energy_std()),
        terminal_energy_std: last.map_or(0.0, |f| f.energy_std()),
        terminal_alive_fraction: last.map_or(0.0, |f| f.alive_fraction()),
        first_death_ms: first_death(frames),
        mean_payoff: last.map_or(0.0, |f| mean(&f.payoff)),
        messages: last.map_or([0; 5], |f| f.messages),
    }
}
