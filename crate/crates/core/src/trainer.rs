//! Group-sampling policy-gradient trainer and probe-truncated decoding.
//!
//! One iteration samples `group_size` rollouts for each of `batch_queries`
//! fresh queries, optionally drops groups with constant reward, probes every
//! step (SPAE only), computes per-token advantages for the whole batch and
//! then takes one plain gradient-ascent step per mini-batch of groups on the
//! clipped surrogate. Every random draw of iteration `i` comes from a stream
//! seeded by `(seed, i)`, so a run resumed from a checkpoint continues
//! exactly like the uninterrupted run.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{
    batch_normalize, broadcast, group_advantage, grpo_advantage, rfb_advantages, spae_token_advantages,
    AdvantageTensor, SpaeConfig,
};
use crate::env::{generate_query, verify, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{map_token_to_step, Op, Query, TokenId, TokenTrajectory, Vocab};
use crate::policy::{sample_trajectory, DecodeConfig, Generation, OverCheckPrior, PolicyOracle, TabularPolicy};
use crate::potential::{step_potential, PotentialSeries};
use crate::probe::{probe_seed, probe_step, probe_trajectory, ProbeConfig, ProbeRecord};
use crate::seeds::mix;

const QUERY_TAG: u64 = 0x0051_5545_5259;
const ITER_TAG: u64 = 0x4954_4552;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "GRPO")]
    Grpo,
    #[serde(rename = "DAPO")]
    Dapo,
    #[serde(rename = "RFB")]
    Rfb,
    #[serde(rename = "SPAE")]
    Spae,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Grpo, Estimator::Dapo, Estimator::Rfb, Estimator::Spae];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Grpo => "GRPO",
            Estimator::Dapo => "DAPO",
            Estimator::Rfb => "RFB",
            Estimator::Spae => "SPAE",
        }
    }

    /// GRPO keeps every group; the others train only on groups with mixed
    /// rewards.
    pub fn filters_groups(self) -> bool {
        self != Estimator::Grpo
    }

    /// GRPO averages tokens within each sequence and then over sequences;
    /// the others average over every token of the mini-batch.
    pub fn token_mean(self) -> bool {
        self != Estimator::Grpo
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("RF-B") && *e == Estimator::Rfb))
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (expected GRPO, DAPO, RFB or SPAE)")))
    }
}

/// Training configuration. Serialized as a flat JSON object; missing keys
/// take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub estimator: Estimator,
    pub xi: f64,
    pub alpha: f64,
    pub eps_sat: f64,
    pub eps_norm: f64,
    pub group_size: usize,
    pub batch_queries: usize,
    pub mini_batch: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub lr: f64,
    pub max_len: usize,
    pub seed: u64,
    pub iterations: u64,
    pub modulus: u32,
    pub chain_length: usize,
    pub ops: Vec<Op>,
    /// Rollout sampling temperature.
    pub temperature: f64,
    pub probe_samples: usize,
    pub probe_max_tokens: usize,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    pub context_order: usize,
    pub prior: OverCheckPrior,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        TrainConfig {
            estimator: Estimator::Spae,
            xi: 0.5,
            alpha: 0.5,
            eps_sat: 0.9,
            eps_norm: 1e-8,
            group_size: 8,
            batch_queries: 64,
            mini_batch: 8,
            eps_low: 0.2,
            eps_high: 0.28,
            lr: 1e-2,
            max_len: 64,
            seed: 0,
            iterations: 300,
            modulus: task.modulus,
            chain_length: task.chain_length,
            ops: task.ops,
            temperature: 1.0,
            probe_samples: 5,
            probe_max_tokens: 3,
            checkpoint_every: 50,
            context_order: crate::policy::DEFAULT_CONTEXT_ORDER,
            prior: OverCheckPrior::default(),
        }
    }
}

impl TrainConfig {
    pub fn task(&self) -> TaskSpec {
        TaskSpec {
            modulus: self.modulus,
            chain_length: self.chain_length,
            ops: self.ops.clone(),
        }
    }

    pub fn spae(&self) -> SpaeConfig {
        SpaeConfig {
            xi: self.xi,
            alpha: self.alpha,
            eps_sat: self.eps_sat,
            eps_norm: self.eps_norm,
        }
    }

    pub fn rollout_decode(&self) -> DecodeConfig {
        DecodeConfig {
            temperature: self.temperature,
            ..DecodeConfig::rollout(self.max_len)
        }
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            n_samples: self.probe_samples,
            max_continuation_tokens: self.probe_max_tokens,
            decode: self.rollout_decode(),
        }
    }

    /// Clip bounds `(eps_low, eps_high)`; GRPO clips symmetrically with
    /// `eps_low`.
    pub fn clip_bounds(&self) -> (f64, f64) {
        match self.estimator {
            Estimator::Grpo => (self.eps_low, self.eps_low),
            _ => (self.eps_low, self.eps_high),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task().validate()?;
        self.spae().validate()?;
        self.probe().validate()?;
        self.prior.validate()?;
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if self.batch_queries == 0 || self.mini_batch == 0 {
            return Err(Error::Config("batch_queries and mini_batch must be >= 1".into()));
        }
        if !(self.eps_low > 0.0 && self.eps_high > 0.0 && self.eps_low < 1.0) {
            return Err(Error::Config(format!(
                "clip bounds must satisfy 0 < eps_low < 1 and eps_high > 0, got ({}, {})",
                self.eps_low, self.eps_high
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("rollout temperature must be > 0".into()));
        }
        if !(1..=4).contains(&self.context_order) {
            return Err(Error::Config(format!(
                "context_order must be in 1..=4, got {}",
                self.context_order
            )));
        }
        Ok(())
    }

    /// Fresh policy initialized from the over-checking prior.
    pub fn initial_policy(&self) -> Result<TabularPolicy> {
        self.validate()?;
        TabularPolicy::with_prior(self.task().vocab()?, self.context_order, &self.prior)
    }

    /// Training queries of an iteration.
    pub fn iteration_queries(&self, iteration: u64) -> Result<Vec<Query>> {
        let spec = self.task();
        (0..self.batch_queries as u64)
            .map(|q| {
                let mut query = generate_query(mix(&[self.seed, QUERY_TAG, iteration, q]), &spec)?;
                query.id = iteration * self.batch_queries as u64 + q;
                Ok(query)
            })
            .collect()
    }
}

/// All rollouts of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query: Query,
    pub rollouts: Vec<Generation>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|g| f64::from(g.trajectory.reward)).collect()
    }

    pub fn has_reward_variance(&self) -> bool {
        let r = self.rewards();
        r.iter().any(|&x| x != r[0])
    }
}

/// `group_size` independent rollouts per query, drawn in order from `rng`.
pub fn sample_groups<P: PolicyOracle, R: Rng + ?Sized>(
    policy: &P,
    queries: &[Query],
    group_size: usize,
    vocab: &Vocab,
    decode: &DecodeConfig,
    rng: &mut R,
) -> Vec<RolloutGroup> {
    queries
        .iter()
        .map(|q| RolloutGroup {
            query: q.clone(),
            rollouts: (0..group_size)
                .map(|_| sample_trajectory(policy, q, vocab, decode, rng))
                .collect(),
        })
        .collect()
}

/// Keeps groups whose rewards are not all equal.
pub fn dynamic_sampling_filter(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups.into_iter().filter(RolloutGroup::has_reward_variance).collect()
}

/// `min(r·A, clip(r, 1-eps_low, 1+eps_high)·A)`.
pub fn clipped_surrogate_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// Frozen token-level view of a mini-batch: everything the surrogate needs
/// besides the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub rows: Vec<usize>,
    pub tokens: Vec<TokenId>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Aggregation weight of each token in the loss.
    pub weights: Vec<f64>,
    pub eps_low: f64,
    pub eps_high: f64,
    pub decode: DecodeConfig,
}

/// Surrogate value, its gradient (sparse by row) and the number of tokens
/// whose clipped branch is active.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub grad: BTreeMap<usize, Vec<f64>>,
    pub clipped: usize,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Builds the token view of `trajectories` (with their prompts) for the
    /// given advantages. Token-mean weighting gives every token `1/T`;
    /// sequence-mean weighting gives token `j` of sequence `i` `1/(n·|o_i|)`.
    pub fn build(
        policy: &TabularPolicy,
        prompts: &[&[TokenId]],
        trajectories: &[&TokenTrajectory],
        advantages: &[Vec<f64>],
        token_mean: bool,
        (eps_low, eps_high): (f64, f64),
        decode: DecodeConfig,
    ) -> Result<Self> {
        if prompts.len() != trajectories.len() || advantages.len() != trajectories.len() {
            return Err(Error::LengthMismatch("mini-batch parts differ in length".into()));
        }
        let total: usize = trajectories.iter().map(|t| t.len()).sum();
        let nonempty = trajectories.iter().filter(|t| !t.is_empty()).count();
        let mut mb = MiniBatch {
            rows: Vec::with_capacity(total),
            tokens: Vec::with_capacity(total),
            old_logprobs: Vec::with_capacity(total),
            advantages: Vec::with_capacity(total),
            weights: Vec::with_capacity(total),
            eps_low,
            eps_high,
            decode,
        };
        for ((prompt, traj), adv) in prompts.iter().zip(trajectories).zip(advantages) {
            if adv.len() != traj.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} advantages for {} tokens",
                    adv.len(),
                    traj.len()
                )));
            }
            let weight = if token_mean {
                1.0 / total as f64
            } else {
                1.0 / (nonempty as f64 * traj.len() as f64)
            };
            let mut ctx = prompt.to_vec();
            for (j, &t) in traj.tokens.iter().enumerate() {
                mb.rows.push(policy.row_index(&ctx));
                mb.tokens.push(t);
                mb.old_logprobs.push(traj.logprobs[j]);
                mb.advantages.push(adv[j]);
                mb.weights.push(weight);
                ctx.push(t);
            }
        }
        Ok(mb)
    }

    /// Surrogate `Σ w·min(r·A, clip(r)·A)` and its analytic gradient.
    pub fn evaluate(&self, policy: &TabularPolicy) -> SurrogateEval {
        let mut grad: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut value = 0.0;
        let mut clipped = 0;
        for j in 0..self.len() {
            let (lp, g) = policy.row_logprob_and_grad(self.rows[j], self.tokens[j], &self.decode);
            let ratio = (lp - self.old_logprobs[j]).exp();
            let a = self.advantages[j];
            let unclipped = ratio * a;
            let term = clipped_surrogate_term(ratio, a, self.eps_low, self.eps_high);
            value += self.weights[j] * term;
            if unclipped > term {
                clipped += 1;
                continue;
            }
            let scale = self.weights[j] * a * ratio;
            if scale == 0.0 {
                continue;
            }
            let row = grad.entry(self.rows[j]).or_insert_with(|| vec![0.0; g.len()]);
            for (r, gi) in row.iter_mut().zip(&g) {
                *r += scale * gi;
            }
        }
        SurrogateEval { value, grad, clipped }
    }
}

/// Gradient-ascent step `θ += lr·grad`.
pub fn apply_gradient(policy: &mut TabularPolicy, grad: &BTreeMap<usize, Vec<f64>>, lr: f64) {
    for (&row, g) in grad {
        for (l, gi) in policy.row_mut(row).iter_mut().zip(g) {
            *l += lr * gi;
        }
    }
}

/// Per-iteration statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub iteration: u64,
    /// Mean reward over every sampled rollout (before filtering).
    pub mean_reward: f64,
    pub mean_length: f64,
    /// Mean entropy of the sampling distribution over generated tokens.
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    /// Mean surrogate value over mini-batches, evaluated before each step.
    pub loss: f64,
    pub groups_kept: usize,
    /// True when filtering left nothing to train on.
    pub skipped: bool,
}

/// Probes a batch of rollouts and returns their potential series.
fn batch_potentials(
    policy: &TabularPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
    probe_base: u64,
) -> Result<Vec<PotentialSeries>> {
    let cfg = config.probe();
    let vocab = policy.vocab();
    let mut out = Vec::new();
    for group in groups {
        for (g, gen) in group.rollouts.iter().enumerate() {
            let stream = mix(&[group.query.id, g as u64]);
            let records = probe_trajectory(policy, &group.query, &gen.trajectory, &cfg, vocab, probe_base, stream)?;
            out.push(PotentialSeries::from_probes(&records, config.eps_sat)?);
        }
    }
    Ok(out)
}

/// Per-token advantages of a filtered batch, one row per rollout in group
/// order.
pub fn batch_advantages(
    policy: &TabularPolicy,
    groups: &[RolloutGroup],
    config: &TrainConfig,
    probe_base: u64,
) -> Result<AdvantageTensor> {
    let lengths: Vec<usize> = groups
        .iter()
        .flat_map(|g| g.rollouts.iter().map(|r| r.trajectory.len()))
        .collect();
    match config.estimator {
        Estimator::Grpo | Estimator::Dapo => {
            let mut per_traj = Vec::new();
            for g in groups {
                per_traj.extend(grpo_advantage(&g.rewards())?);
            }
            Ok(AdvantageTensor {
                values: broadcast(&per_traj, &lengths)?,
                stage: crate::advantage::Stage::Final,
            })
        }
        Estimator::Rfb => {
            let per_traj: Vec<f64> = groups.iter().flat_map(|g| group_advantage(&g.rewards())).collect();
            rfb_advantages(&per_traj, &lengths, config.eps_norm)
        }
        Estimator::Spae => {
            let per_traj: Vec<f64> = groups.iter().flat_map(|g| group_advantage(&g.rewards())).collect();
            let series = batch_potentials(policy, groups, config, probe_base)?;
            let maps: Vec<_> = groups
                .iter()
                .flat_map(|g| g.rollouts.iter().map(|r| map_token_to_step(&r.trajectory)))
                .collect();
            let raw = spae_token_advantages(&per_traj, &series, &maps, &config.spae())?;
            batch_normalize(&raw, config.eps_norm)
        }
    }
}

/// Rollouts of one iteration after filtering, with the statistics of the
/// unfiltered batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    pub groups: Vec<RolloutGroup>,
    /// Base seed of the probe streams of this batch.
    pub probe_base: u64,
    /// Report with the rollout statistics filled in.
    pub report: UpdateReport,
}

/// Samples and filters the rollouts of iteration `iteration`.
pub fn prepare_batch(policy: &TabularPolicy, config: &TrainConfig, iteration: u64) -> Result<PreparedBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[config.seed, ITER_TAG, iteration]));
    let queries = config.iteration_queries(iteration)?;
    let groups = sample_groups(
        policy,
        &queries,
        config.group_size,
        policy.vocab(),
        &config.rollout_decode(),
        &mut rng,
    );
    let probe_base = rng.next_u64();

    let (mut tokens, mut rewards, mut entropy_sum, mut rollouts) = (0usize, 0.0, 0.0, 0usize);
    for r in groups.iter().flat_map(|g| &g.rollouts) {
        tokens += r.trajectory.len();
        rewards += f64::from(r.trajectory.reward);
        entropy_sum += r.entropies.iter().sum::<f64>();
        rollouts += 1;
    }
    let groups = if config.estimator.filters_groups() {
        dynamic_sampling_filter(groups)
    } else {
        groups
    };
    let report = UpdateReport {
        iteration,
        mean_reward: rewards / rollouts as f64,
        mean_length: tokens as f64 / rollouts as f64,
        mean_entropy: if tokens == 0 { 0.0 } else { entropy_sum / tokens as f64 },
        clip_fraction: 0.0,
        loss: 0.0,
        groups_kept: groups.len(),
        skipped: false,
    };
    Ok(PreparedBatch {
        groups,
        probe_base,
        report,
    })
}

/// Splits a batch into mini-batches of `config.mini_batch` groups.
pub fn build_minibatches(
    policy: &TabularPolicy,
    config: &TrainConfig,
    groups: &[RolloutGroup],
    advantages: &AdvantageTensor,
) -> Result<Vec<MiniBatch>> {
    let mut offset = 0;
    let mut out = Vec::new();
    for chunk in groups.chunks(config.mini_batch) {
        let prompts: Vec<&[TokenId]> = chunk
            .iter()
            .flat_map(|g| g.rollouts.iter().map(|_| g.query.prompt.as_slice()))
            .collect();
        let trajs: Vec<&TokenTrajectory> = chunk
            .iter()
            .flat_map(|g| g.rollouts.iter().map(|r| &r.trajectory))
            .collect();
        let adv = advantages
            .values
            .get(offset..offset + trajs.len())
            .ok_or_else(|| Error::LengthMismatch("fewer advantage rows than rollouts".into()))?;
        offset += trajs.len();
        let mb = MiniBatch::build(
            policy,
            &prompts,
            &trajs,
            adv,
            config.estimator.token_mean(),
            config.clip_bounds(),
            config.rollout_decode(),
        )?;
        if !mb.is_empty() {
            out.push(mb);
        }
    }
    Ok(out)
}

/// Runs iteration `iteration` of training on `policy`. All randomness is
/// derived from `(config.seed, iteration)`.
pub fn train_iteration(policy: &mut TabularPolicy, config: &TrainConfig, iteration: u64) -> Result<UpdateReport> {
    let PreparedBatch {
        groups,
        probe_base,
        mut report,
    } = prepare_batch(policy, config, iteration)?;
    let total_tokens: usize = groups
        .iter()
        .flat_map(|g| &g.rollouts)
        .map(|r| r.trajectory.len())
        .sum();
    if total_tokens == 0 {
        report.skipped = true;
        return Ok(report);
    }
    let advantages = batch_advantages(policy, &groups, config, probe_base)?;
    let minibatches = build_minibatches(policy, config, &groups, &advantages)?;
    let (mut clipped, mut seen, mut loss) = (0usize, 0usize, 0.0);
    for mb in &minibatches {
        let eval = mb.evaluate(policy);
        apply_gradient(policy, &eval.grad, config.lr);
        clipped += eval.clipped;
        seen += mb.len();
        loss += eval.value;
    }
    report.clip_fraction = clipped as f64 / seen as f64;
    report.loss = loss / minibatches.len() as f64;
    Ok(report)
}

/// Output of a probe-truncated decode.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDecode {
    pub generation: Generation,
    /// Potentials of the steps decoded before reasoning closed.
    pub phi: Vec<f64>,
    pub probes: Vec<ProbeRecord>,
    /// Step after which reasoning was forced closed.
    pub truncated_at: Option<usize>,
}

/// Decodes like [`sample_trajectory`] but probes every completed step and,
/// once the Step Potential exceeds `eps_sat`, replaces the next token with
/// the reasoning terminator so only the summary follows. The replaced token
/// still consumes its uniform draw, keeping the stream aligned with the
/// untruncated decode. Probe `k` uses the stream `probe_seed(probe_base,
/// stream, k)`.
#[allow(clippy::too_many_arguments)]
pub fn probe_truncated_decode<P: PolicyOracle, R: Rng + ?Sized>(
    policy: &P,
    query: &Query,
    vocab: &Vocab,
    decode: &DecodeConfig,
    probe: &ProbeConfig,
    eps_sat: f64,
    rng: &mut R,
    probe_base: u64,
    stream: u64,
) -> Result<TruncatedDecode> {
    probe.validate()?;
    let mut context = query.prompt.clone();
    let prompt_len = context.len();
    let (mut logprobs, mut entropies) = (Vec::new(), Vec::new());
    let (mut phi, mut probes) = (Vec::new(), Vec::new());
    let mut truncated_at = None;
    let mut force_close = false;
    let mut in_reasoning = true;
    let mut finished = false;
    while logprobs.len() < decode.max_len {
        let dist = policy.sampling_distribution(&context, decode);
        let u = rng.gen::<f64>();
        let token = if force_close {
            force_close = false;
            vocab.think_end()
        } else {
            crate::policy::draw(&dist, u) as TokenId
        };
        context.push(token);
        logprobs.push(dist[token as usize].ln());
        entropies.push(crate::policy::entropy(&dist));
        if token == vocab.eot() {
            finished = true;
            break;
        }
        if token == vocab.think_end() {
            in_reasoning = false;
        }
        if in_reasoning && token == vocab.delim() {
            let partial =
                TokenTrajectory::from_tokens(query.id, context[prompt_len..].to_vec(), logprobs.clone(), vocab, false);
            let k = partial.num_steps();
            let mut prng = ChaCha8Rng::seed_from_u64(probe_seed(probe_base, stream, k));
            let record = probe_step(policy, query, &partial, k, probe, vocab, &mut prng)?;
            let p = step_potential(record.correctness, record.confidence)?;
            phi.push(p);
            probes.push(record);
            if p > eps_sat {
                truncated_at = Some(k);
                force_close = true;
                in_reasoning = false;
            }
        }
    }
    let tokens = context.split_off(prompt_len);
    let mut trajectory = TokenTrajectory::from_tokens(query.id, tokens, logprobs, vocab, !finished);
    trajectory.reward = verify(&trajectory, query, vocab).reward;
    Ok(TruncatedDecode {
        generation: Generation { trajectory, entropies },
        phi,
        probes,
        truncated_at,
    })
}
