//! Advantage estimators.
//!
//! Every estimator produces one value per response token. GRPO broadcasts a
//! standardized group advantage. RF-B broadcasts the mean-centered group
//! advantage and standardizes over all batch tokens. SPAE rescales the
//! centered group advantage per step by a saturation penalty, adds a
//! batch-centered shaping bonus on potential gains and then applies the same
//! batch standardization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StepIndexMap, StepSlot};
use crate::potential::{saturation_counts, PotentialSeries, DEFAULT_EPS_SAT};

/// `R_i - mean(R)`.
pub fn group_advantage(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - mean).collect()
}

/// `(R_i - mean) / std` with the population standard deviation. A group with
/// no reward variance gets all-zero advantages.
pub fn grpo_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let centered = group_advantage(rewards);
    let std = population_std(&centered, 0.0);
    if std < 1e-12 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(centered.iter().map(|c| c / std).collect())
}

/// `1 - alpha (1 - exp(-c_sat))`.
pub fn saturation_penalty_factor(c_sat: usize, alpha: f64) -> f64 {
    1.0 - alpha * (1.0 - (-(c_sat as f64)).exp())
}

/// `Φ_k - Φ_{k-1}` for `k = 2..=K`; element `i` belongs to step `i + 2`.
pub fn potential_deltas(series: &PotentialSeries) -> Vec<f64> {
    series.phi.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Shaping bonus for a batch of potential deltas: min-max normalize, take
/// `exp`, and subtract the batch mean of the exponentials. When every delta
/// is equal all bonuses are zero.
pub fn shaping_signal(deltas: &[f64]) -> Result<Vec<f64>> {
    if deltas.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (lo, hi) = deltas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
        (lo.min(d), hi.max(d))
    });
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(vec![0.0; deltas.len()]);
    }
    let amplified: Vec<f64> = deltas.iter().map(|d| ((d - lo) / range).exp()).collect();
    let mean = amplified.iter().sum::<f64>() / amplified.len() as f64;
    Ok(amplified.iter().map(|e| e - mean).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaeConfig {
    pub xi: f64,
    pub alpha: f64,
    pub eps_sat: f64,
    pub eps_norm: f64,
}

impl Default for SpaeConfig {
    fn default() -> Self {
        SpaeConfig {
            xi: 0.5,
            alpha: 0.5,
            eps_sat: DEFAULT_EPS_SAT,
            eps_norm: 1e-8,
        }
    }
}

impl SpaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::OutOfUnitRange {
                name: "alpha",
                value: self.alpha,
            });
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.eps_norm.is_nan() || self.eps_norm <= 0.0 {
            return Err(Error::Config(format!("eps_norm must be > 0, got {}", self.eps_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "RAW_SPAE")]
    RawSpae,
    #[serde(rename = "FINAL")]
    Final,
}

/// Per-trajectory, per-token advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTensor {
    pub values: Vec<Vec<f64>>,
    pub stage: Stage,
}

impl AdvantageTensor {
    pub fn num_tokens(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }
}

/// Copies each trajectory's scalar advantage onto its tokens.
pub fn broadcast(per_trajectory: &[f64], lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    if per_trajectory.len() != lengths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} advantages for {} trajectories",
            per_trajectory.len(),
            lengths.len()
        )));
    }
    Ok(per_trajectory.iter().zip(lengths).map(|(&a, &n)| vec![a; n]).collect())
}

/// Raw SPAE advantages. `group_adv[i]` is trajectory `i`'s centered group
/// advantage; `series[i]` and `maps[i]` are its potentials and token map.
///
/// Step `k` tokens get `A·f(C_sat(k)) + ξ·g(k)` where `g` is zero for the
/// first step. Summary tokens get `A·1 + ξ·0`.
pub fn spae_token_advantages(
    group_adv: &[f64],
    series: &[PotentialSeries],
    maps: &[StepIndexMap],
    cfg: &SpaeConfig,
) -> Result<AdvantageTensor> {
    cfg.validate()?;
    if group_adv.len() != series.len() || group_adv.len() != maps.len() {
        return Err(Error::LengthMismatch(format!(
            "{} advantages, {} potential series, {} step maps",
            group_adv.len(),
            series.len(),
            maps.len()
        )));
    }
    for (i, (s, m)) in series.iter().zip(maps).enumerate() {
        let steps = m.slots().iter().filter_map(|s| s.step()).max().unwrap_or(0);
        if steps != s.len() {
            return Err(Error::LengthMismatch(format!(
                "trajectory {i}: {} potentials for {steps} steps",
                s.len()
            )));
        }
    }

    // Shaping population: every step k >= 2 of every trajectory.
    let deltas: Vec<Vec<f64>> = series.iter().map(potential_deltas).collect();
    let population: Vec<f64> = deltas.iter().flatten().copied().collect();
    let mut shaped = if population.is_empty() {
        Vec::new()
    } else {
        shaping_signal(&population)?
    }
    .into_iter();
    let g: Vec<Vec<f64>> = series
        .iter()
        .zip(&deltas)
        .map(|(s, d)| {
            let mut per_step = Vec::with_capacity(s.len());
            if !s.is_empty() {
                per_step.push(0.0);
            }
            per_step.extend(shaped.by_ref().take(d.len()));
            per_step
        })
        .collect();

    let values = group_adv
        .iter()
        .zip(series)
        .zip(maps)
        .zip(&g)
        .map(|(((&a, s), m), g)| {
            let counts = saturation_counts(&PotentialSeries {
                phi: s.phi.clone(),
                eps_sat: cfg.eps_sat,
            });
            m.slots()
                .iter()
                .map(|slot| match *slot {
                    StepSlot::Step(k) => a * saturation_penalty_factor(counts[k - 1], cfg.alpha) + cfg.xi * g[k - 1],
                    StepSlot::Summary => a * 1.0 + cfg.xi * 0.0,
                })
                .collect()
        })
        .collect();
    Ok(AdvantageTensor {
        values,
        stage: Stage::RawSpae,
    })
}

/// Standardizes every token advantage with the batch-wide mean and
/// population standard deviation (plus `eps_norm`).
pub fn batch_normalize(tensor: &AdvantageTensor, eps_norm: f64) -> Result<AdvantageTensor> {
    let n = tensor.num_tokens();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mean = tensor.flat().sum::<f64>() / n as f64;
    let var = tensor.flat().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let denom = var.sqrt() + eps_norm;
    Ok(AdvantageTensor {
        values: tensor
            .values
            .iter()
            .map(|row| row.iter().map(|x| (x - mean) / denom).collect())
            .collect(),
        stage: Stage::Final,
    })
}

/// RF-B: centered group advantages broadcast to tokens, then standardized
/// over the whole batch.
pub fn rfb_advantages(group_adv: &[f64], lengths: &[usize], eps_norm: f64) -> Result<AdvantageTensor> {
    if group_adv.len() < 2 {
        return Err(Error::GroupTooSmall(group_adv.len()));
    }
    let raw = AdvantageTensor {
        values: broadcast(group_adv, lengths)?,
        stage: Stage::RawSpae,
    };
    batch_normalize(&raw, eps_norm)
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::map_token_to_step;
    use crate::model::{TokenTrajectory, Vocab};
    use approx::assert_abs_diff_eq;

    #[test]
    fn group_and_grpo() {
        assert_eq!(group_advantage(&[1.0, 0.0, 0.0, 0.0]), vec![0.75, -0.25, -0.25, -0.25]);
        assert_eq!(group_advantage(&[1.0; 4]), vec![0.0; 4]);
        assert_eq!(group_advantage(&[0.0]), vec![0.0]);
        assert_eq!(
            grpo_advantage(&[1.0, 1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 1.0, -1.0, -1.0]
        );
        assert_eq!(grpo_advantage(&[1.0; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(grpo_advantage(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert!(grpo_advantage(&[1.0]).is_err());
    }

    #[test]
    fn penalty() {
        assert_eq!(saturation_penalty_factor(0, 0.5), 1.0);
        assert_abs_diff_eq!(saturation_penalty_factor(1, 0.5), 0.683940, epsilon = 1e-6);
        assert_abs_diff_eq!(saturation_penalty_factor(60, 0.5), 0.5, epsilon = 1e-12);
        for c in 0..20 {
            assert!(saturation_penalty_factor(c + 1, 0.3) < saturation_penalty_factor(c, 0.3));
        }
    }

    #[test]
    fn deltas() {
        let s = |phi: &[f64]| PotentialSeries::new(phi.to_vec(), 0.9).unwrap();
        assert_abs_diff_eq!(potential_deltas(&s(&[0.1, 0.6]))[0], 0.5, epsilon = 1e-15);
        assert_eq!(potential_deltas(&s(&[0.3, 0.3])), vec![0.0]);
        assert!(potential_deltas(&s(&[0.9])).is_empty());
    }

    #[test]
    fn shaping_golden() {
        let g = shaping_signal(&[-0.5, 0.0, 0.5]).unwrap();
        for (x, e) in g.iter().zip([-0.789001, -0.140280, 0.929281]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-6);
        }
        assert_eq!(shaping_signal(&[0.2; 4]).unwrap(), vec![0.0; 4]);
        assert!(shaping_signal(&[]).is_err());
    }

    #[test]
    fn normalize() {
        let t = AdvantageTensor {
            values: vec![vec![2.0], vec![4.0]],
            stage: Stage::RawSpae,
        };
        let f = batch_normalize(&t, 1e-8).unwrap();
        assert_abs_diff_eq!(f.values[0][0], -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(f.values[1][0], 1.0, epsilon = 1e-7);
        assert_eq!(f.stage, Stage::Final);
        let c = AdvantageTensor {
            values: vec![vec![3.0, 3.0]],
            stage: Stage::RawSpae,
        };
        assert_eq!(batch_normalize(&c, 1e-8).unwrap().values, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn rfb_pair() {
        let f = rfb_advantages(&group_advantage(&[1.0, 0.0]), &[3, 3], 1e-8).unwrap();
        for &x in &f.values[0] {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-7);
        }
        for &x in &f.values[1] {
            assert_abs_diff_eq!(x, -1.0, epsilon = 1e-7);
        }
        let z = rfb_advantages(&group_advantage(&[1.0, 1.0]), &[2, 5], 1e-8).unwrap();
        assert!(z.flat().all(|x| x == 0.0));
    }

    fn traj(tokens: Vec<u32>, v: &Vocab) -> StepIndexMap {
        let n = tokens.len();
        map_token_to_step(&TokenTrajectory::from_tokens(0, tokens, vec![0.0; n], v, false))
    }

    #[test]
    fn composed_golden_value() {
        // Trajectory 0 has steps with deltas -0.5 and 0.5, trajectory 1 one
        // delta of 0.0; the third step of trajectory 0 has C_sat = 1 and
        // shaping 0.929281.
        let v = Vocab::with_digits(10).unwrap();
        let d = v.delim();
        let m0 = traj(vec![1, d, 2, d, 3, d, v.think_end(), v.answer(), 3, v.eot()], &v);
        let m1 = traj(vec![1, d, 2, d, v.think_end()], &v);
        let s0 = PotentialSeries::new(vec![0.95, 0.45, 0.95], 0.9).unwrap();
        let s1 = PotentialSeries::new(vec![0.2, 0.2], 0.9).unwrap();
        let cfg = SpaeConfig::default();
        let t = spae_token_advantages(&[0.75, -0.25], &[s0, s1], &[m0, m1], &cfg).unwrap();
        // step 3 tokens are indices 4 and 5
        assert_abs_diff_eq!(t.values[0][4], 0.977596, epsilon = 1e-6);
        assert_eq!(t.values[0][4], t.values[0][5]);
        // step 1 has no shaping and no penalty
        assert_eq!(t.values[0][0], 0.75);
        // summary tokens carry the plain group advantage
        assert_eq!(&t.values[0][6..], &[0.75; 4]);
        // step 2 of trajectory 1: delta 0 maps to 0.5 -> g = -0.140280
        assert_abs_diff_eq!(t.values[1][2], -0.25 + 0.5 * -0.140280, epsilon = 1e-6);
    }

    #[test]
    fn spae_reduces_to_group_advantage() {
        let v = Vocab::with_digits(10).unwrap();
        let d = v.delim();
        let m = traj(vec![1, d, 2, d, v.think_end()], &v);
        let s = PotentialSeries::new(vec![0.95, -0.3], 0.9).unwrap();
        let cfg = SpaeConfig {
            xi: 0.0,
            alpha: 0.0,
            ..SpaeConfig::default()
        };
        let t = spae_token_advantages(&[0.4], &[s], &[m], &cfg).unwrap();
        assert_eq!(t.values, vec![vec![0.4; 5]]);
    }

    #[test]
    fn length_checks() {
        let v = Vocab::with_digits(10).unwrap();
        let m = traj(vec![1, v.delim(), v.think_end()], &v);
        let s = PotentialSeries::new(vec![0.1, 0.2], 0.9).unwrap();
        let cfg = SpaeConfig::default();
        assert!(spae_token_advantages(&[0.0], std::slice::from_ref(&s), std::slice::from_ref(&m), &cfg).is_err());
        assert!(spae_token_advantages(&[0.0, 1.0], &[s], &[m], &cfg).is_err());
        assert!(broadcast(&[1.0], &[1, 2]).is_err());
    }
}
