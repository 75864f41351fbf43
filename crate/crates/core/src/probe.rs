//! Training-free step probes.
//!
//! After step `k` the answer trigger is appended to the reasoning prefix and
//! the policy is asked for short continuations. Confidence is the mean of
//! `exp(-mean token entropy)` over the sampled continuations; correctness is
//! the teacher-forced mean probability of the ground-truth answer tokens.
//! Probes only read the policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Query, TokenId, TokenTrajectory, Vocab};
use crate::policy::{draw, entropy, DecodeConfig, PolicyOracle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_samples: usize,
    pub max_continuation_tokens: usize,
    pub decode: DecodeConfig,
}

impl ProbeConfig {
    /// N = 5 samples, continuations capped at 3 tokens (enough for a
    /// one-digit answer and EOT).
    pub fn new(decode: DecodeConfig) -> Self {
        ProbeConfig {
            n_samples: 5,
            max_continuation_tokens: 3,
            decode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("probe n_samples must be >= 1".into()));
        }
        if self.max_continuation_tokens == 0 {
            return Err(Error::Config("probe max_continuation_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::new(DecodeConfig::rollout(0))
    }
}

/// Per-step probe outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub k: usize,
    #[serde(rename = "conf")]
    pub confidence: f64,
    #[serde(rename = "acc")]
    pub correctness: f64,
    /// Length-normalized entropy of each continuation.
    pub entropies: Vec<f64>,
    /// Per-sample correctness.
    pub accs: Vec<f64>,
}

impl ProbeRecord {
    /// Per-sample confidences `exp(-entropies[n])`.
    pub fn sample_confidences(&self) -> Vec<f64> {
        self.entropies.iter().map(|h| (-h).exp()).collect()
    }
}

/// `prompt ‖ reasoning through step k ‖ ANSWER`.
pub fn build_probe_context(
    query: &Query,
    trajectory: &TokenTrajectory,
    k: usize,
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    let span = trajectory.step_span(k)?;
    let mut ctx = Vec::with_capacity(query.prompt.len() + span.end + 1);
    ctx.extend_from_slice(&query.prompt);
    ctx.extend_from_slice(&trajectory.tokens[..span.end]);
    ctx.push(vocab.answer());
    Ok(ctx)
}

/// Entropy in nats, `0 log 0 = 0`.
pub fn token_entropy(dist: &[f64]) -> f64 {
    entropy(dist)
}

/// Samples `cfg.n_samples` continuations and returns the confidence together
/// with each continuation's mean token entropy. A continuation always holds
/// at least its first token, so an immediate EOT counts as length 1.
pub fn probe_confidence<P: PolicyOracle, R: Rng + ?Sized>(
    policy: &P,
    context: &[TokenId],
    cfg: &ProbeConfig,
    vocab: &Vocab,
    rng: &mut R,
) -> (f64, Vec<f64>) {
    let mut ctx = context.to_vec();
    let mut mean_entropies = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        ctx.truncate(context.len());
        let mut total = 0.0;
        let mut len = 0;
        while len < cfg.max_continuation_tokens {
            let dist = policy.sampling_distribution(&ctx, &cfg.decode);
            total += entropy(&dist);
            len += 1;
            let t = draw(&dist, rng.gen::<f64>()) as TokenId;
            if t == vocab.eot() {
                break;
            }
            ctx.push(t);
        }
        mean_entropies.push(total / len as f64);
    }
    let conf = mean_entropies.iter().map(|h| (-h).exp()).sum::<f64>() / cfg.n_samples as f64;
    (conf.clamp(0.0, 1.0), mean_entropies)
}

/// Teacher-forced mean probability of `answer` (without EOT) after `context`.
pub fn probe_correctness<P: PolicyOracle>(
    policy: &P,
    context: &[TokenId],
    answer: &[TokenId],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if answer.is_empty() {
        return Err(Error::LengthMismatch("empty ground-truth answer".into()));
    }
    let mut ctx = context.to_vec();
    let mut total = 0.0;
    for &y in answer {
        total += policy.sampling_distribution(&ctx, &cfg.decode)[y as usize];
        ctx.push(y);
    }
    Ok((total / answer.len() as f64).clamp(0.0, 1.0))
}

pub fn probe_step<P: PolicyOracle, R: Rng + ?Sized>(
    policy: &P,
    query: &Query,
    trajectory: &TokenTrajectory,
    k: usize,
    cfg: &ProbeConfig,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<ProbeRecord> {
    cfg.validate()?;
    let ctx = build_probe_context(query, trajectory, k, vocab)?;
    let (confidence, entropies) = probe_confidence(policy, &ctx, cfg, vocab, rng);
    // The forced pass does not depend on the sampled continuation, so every
    // sample slot carries the same value.
    let correctness = probe_correctness(policy, &ctx, query.answer_content(vocab), cfg)?;
    Ok(ProbeRecord {
        k,
        confidence,
        correctness,
        entropies,
        accs: vec![correctness; cfg.n_samples],
    })
}

/// Seed of the rng stream owned by the probe of step `k` of the trajectory
/// identified by `stream`.
pub fn probe_seed(base: u64, stream: u64, k: usize) -> u64 {
    crate::seeds::mix(&[base, 0x0050_524f_4245, stream, k as u64])
}

/// Probes every step; step `k` draws from its own stream
/// `probe_seed(base, stream, k)`.
pub fn probe_trajectory<P: PolicyOracle>(
    policy: &P,
    query: &Query,
    trajectory: &TokenTrajectory,
    cfg: &ProbeConfig,
    vocab: &Vocab,
    base: u64,
    stream: u64,
) -> Result<Vec<ProbeRecord>> {
    (1..=trajectory.num_steps())
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(probe_seed(base, stream, k));
            probe_step(policy, query, trajectory, k, cfg, vocab, &mut rng)
        })
        .collect()
}
