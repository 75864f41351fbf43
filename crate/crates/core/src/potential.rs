//! Step Potential and the diagnostics derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StepIndexMap, StepSlot};
use crate::probe::ProbeRecord;

/// Saturation threshold used unless configured otherwise.
pub const DEFAULT_EPS_SAT: f64 = 0.9;

/// `1.5·acc·conf + 0.5·acc − conf`, which lies in `[-1, 1]` for inputs in
/// `[0, 1]`.
pub fn step_potential(acc: f64, conf: f64) -> Result<f64> {
    for (name, value) in [("acc", acc), ("conf", conf)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfUnitRange { name, value });
        }
    }
    Ok(1.5 * acc * conf + 0.5 * acc - conf)
}

/// Per-step potentials of one trajectory with the saturation threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSeries {
    pub phi: Vec<f64>,
    pub eps_sat: f64,
}

impl PotentialSeries {
    pub fn new(phi: Vec<f64>, eps_sat: f64) -> Result<Self> {
        if let Some(&bad) = phi.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("potential {bad} outside [-1, 1]")));
        }
        Ok(PotentialSeries { phi, eps_sat })
    }

    pub fn from_probes(records: &[ProbeRecord], eps_sat: f64) -> Result<Self> {
        let phi = records
            .iter()
            .map(|r| step_potential(r.correctness, r.confidence))
            .collect::<Result<Vec<_>>>()?;
        Self::new(phi, eps_sat)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn is_saturated(&self, k: usize) -> bool {
        self.phi[k - 1] > self.eps_sat
    }

    /// First 1-based step whose potential exceeds the threshold.
    pub fn first_saturated(&self) -> Option<usize> {
        self.phi.iter().position(|&p| p > self.eps_sat).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "S")]
    Solving,
    #[serde(rename = "C")]
    Checking,
}

/// Step phases plus the token-level view through a step map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseLabels {
    pub steps: Vec<Phase>,
}

impl PhaseLabels {
    /// Phase of each token; summary tokens have none.
    pub fn token_phases(&self, map: &StepIndexMap) -> Vec<Option<Phase>> {
        map.slots()
            .iter()
            .map(|s| match s {
                StepSlot::Step(k) => self.steps.get(k - 1).copied(),
                StepSlot::Summary => None,
            })
            .collect()
    }
}

/// Step `k` is checking iff some strictly earlier step is saturated.
pub fn classify_phases(series: &PotentialSeries) -> PhaseLabels {
    let mut seen = false;
    let steps = series
        .phi
        .iter()
        .map(|&p| {
            let phase = if seen { Phase::Checking } else { Phase::Solving };
            seen |= p > series.eps_sat;
            phase
        })
        .collect();
    PhaseLabels { steps }
}

/// Right-to-wrong: the potential saturated somewhere but the final reward is 0.
pub fn detect_r2w(series: &PotentialSeries, reward: u8) -> bool {
    reward == 0 && series.first_saturated().is_some()
}

/// Number of saturated steps strictly before step `k`.
pub fn saturation_count(series: &PotentialSeries, k: usize) -> Result<usize> {
    if k == 0 || k > series.len() {
        return Err(Error::StepOutOfRange {
            k,
            num_steps: series.len(),
        });
    }
    Ok(series.phi[..k - 1].iter().filter(|&&p| p > series.eps_sat).count())
}

/// `C_sat` for every step at once.
pub fn saturation_counts(series: &PotentialSeries) -> Vec<usize> {
    let mut count = 0;
    series
        .phi
        .iter()
        .map(|&p| {
            let c = count;
            count += usize::from(p > series.eps_sat);
            c
        })
        .collect()
}
