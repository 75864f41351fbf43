//! Behavioral metrics: solving/checking token split, reflection counts,
//! right-to-wrong rate, accuracy/length/pass at k, alignment of the first
//! saturated step with the analytic solving step, and progress-binned probe
//! variance. Includes the CSV writers used by the command-line tool.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::solving_step;
use crate::error::{Error, Result};
use crate::model::{Query, TokenTrajectory, Vocab};
use crate::policy::{sample_trajectory, DecodeConfig, PolicyOracle};
use crate::potential::{classify_phases, detect_r2w, Phase, PhaseLabels, PotentialSeries};
use crate::probe::{probe_trajectory, ProbeConfig, ProbeRecord};
use crate::seeds::mix;
use crate::trainer::{probe_truncated_decode, UpdateReport};

const EVAL_TAG: u64 = 0x4556_414c;
const EVAL_PROBE_TAG: u64 = 0x4550_524f_4245;

/// Tokens in solving steps and in checking steps; summary tokens count in
/// neither.
pub fn solve_check_split(trajectory: &TokenTrajectory, phases: &PhaseLabels) -> (usize, usize) {
    trajectory
        .steps
        .iter()
        .zip(&phases.steps)
        .fold((0, 0), |(s, c), (span, phase)| match phase {
            Phase::Solving => (s + span.len(), c),
            Phase::Checking => (s, c + span.len()),
        })
}

/// Number of reasoning steps containing at least one WAIT token.
pub fn reflect_count(trajectory: &TokenTrajectory, vocab: &Vocab) -> usize {
    trajectory
        .steps
        .iter()
        .filter(|s| trajectory.tokens[s.range()].contains(&vocab.wait()))
        .count()
}

/// A ratio that remembers its denominator so that an empty denominator is
/// visible instead of producing NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub numerator: usize,
    pub denominator: usize,
}

impl Rate {
    pub fn new(numerator: usize, denominator: usize) -> Self {
        let value = if denominator == 0 {
            0.0
        } else {
            numerator as f64 / denominator as f64
        };
        Rate {
            value,
            numerator,
            denominator,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.denominator == 0
    }
}

/// Fraction of incorrect trajectories whose potential saturated.
pub fn r2w_rate<'a>(items: impl IntoIterator<Item = (&'a PotentialSeries, u8)>) -> Rate {
    let (mut hits, mut wrong) = (0, 0);
    for (series, reward) in items {
        if reward == 0 {
            wrong += 1;
            hits += usize::from(detect_r2w(series, reward));
        }
    }
    Rate::new(hits, wrong)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub acc: f64,
    pub len: f64,
    pub pass: f64,
}

/// Aggregates per-query reward lists into accuracy, length and pass rate.
pub fn at_k_from_rewards(rewards: &[Vec<u8>], lengths: &[Vec<usize>], k: usize) -> AtK {
    let n = rewards.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let acc = rewards.iter().flatten().map(|&r| f64::from(r)).sum::<f64>() / n;
    let len = lengths.iter().flatten().sum::<usize>() as f64 / n;
    let pass = rewards.iter().filter(|r| r.contains(&1)).count() as f64 / rewards.len().max(1) as f64;
    AtK { k, acc, len, pass }
}

/// Seed of the decode of sample `s` of query `qi` in an evaluation.
pub fn eval_seed(seed: u64, qi: usize, s: usize) -> u64 {
    mix(&[seed, EVAL_TAG, qi as u64, s as u64])
}

/// `k` decodes per query: mean reward, mean generated length and the
/// fraction of queries with at least one correct decode.
pub fn eval_at_k<P: PolicyOracle>(
    policy: &P,
    queries: &[Query],
    k: usize,
    vocab: &Vocab,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<AtK> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut rewards = Vec::with_capacity(queries.len());
    let mut lengths = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let (mut r, mut l) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for s in 0..k {
            let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(seed, qi, s));
            let g = sample_trajectory(policy, q, vocab, decode, &mut rng);
            r.push(g.trajectory.reward);
            l.push(g.trajectory.len());
        }
        rewards.push(r);
        lengths.push(l);
    }
    Ok(at_k_from_rewards(&rewards, &lengths, k))
}

/// `k_probe - k_gt`, where `k_probe` is the first saturated step.
pub fn alignment_displacement(series: &PotentialSeries, k_gt: Option<usize>) -> Option<i64> {
    Some(series.first_saturated()? as i64 - k_gt? as i64)
}

pub const BIN_LABELS: [&str; 5] = ["[0.0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1.0]"];

/// Relative-progress bin of step `k` of `num_steps`; the last bin is closed.
pub fn progress_bin(k: usize, num_steps: usize) -> usize {
    ((5 * k) / num_steps).min(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceBin {
    pub var_conf: f64,
    pub var_acc: f64,
    /// Number of steps averaged into the bin.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceBins {
    pub bins: [VarianceBin; 5],
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(0.0)
}

/// Mean within-step sample variance of confidence and correctness, binned by
/// `k/K`. Each element of `trajectories` holds one trajectory's probe records
/// for steps `1..=K`. Records with fewer than two samples are skipped.
pub fn variance_bins(trajectories: &[&[ProbeRecord]]) -> VarianceBins {
    let mut sums = [(0.0, 0.0, 0usize); 5];
    for records in trajectories {
        let num_steps = records.len();
        for r in records.iter() {
            if r.entropies.len() < 2 || r.accs.len() < 2 || r.k == 0 || r.k > num_steps {
                continue;
            }
            let b = progress_bin(r.k, num_steps);
            sums[b].0 += population_variance(&r.sample_confidences());
            sums[b].1 += population_variance(&r.accs);
            sums[b].2 += 1;
        }
    }
    let mut out = VarianceBins::default();
    for (bin, (c, a, n)) in out.bins.iter_mut().zip(sums) {
        if n > 0 {
            *bin = VarianceBin {
                var_conf: c / n as f64,
                var_acc: a / n as f64,
                count: n,
            };
        }
    }
    out
}

/// Counts of `Δk` values plus the number of trajectories without one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentHistogram {
    pub counts: BTreeMap<i64, usize>,
    pub absent: usize,
}

impl AlignmentHistogram {
    pub fn add(&mut self, delta: Option<i64>) {
        match delta {
            Some(d) => *self.counts.entry(d).or_default() += 1,
            None => self.absent += 1,
        }
    }

    pub fn defined(&self) -> usize {
        self.counts.values().sum()
    }

    /// Fractions of defined displacements that are zero, negative and
    /// positive.
    pub fn exact_early_late(&self) -> (Rate, Rate, Rate) {
        let n = self.defined();
        let sum = |f: fn(i64) -> bool| self.counts.iter().filter(|(d, _)| f(**d)).map(|(_, c)| c).sum();
        (
            Rate::new(sum(|d| d == 0), n),
            Rate::new(sum(|d| d < 0), n),
            Rate::new(sum(|d| d > 0), n),
        )
    }
}

/// A trajectory together with everything the behavioral metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzedTrajectory {
    pub trajectory: TokenTrajectory,
    pub probes: Vec<ProbeRecord>,
    pub series: PotentialSeries,
    pub k_gt: Option<usize>,
}

impl AnalyzedTrajectory {
    pub fn phases(&self) -> PhaseLabels {
        classify_phases(&self.series)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSummary {
    pub method: String,
    pub acc: f64,
    pub len: f64,
    /// Mean solving tokens over correct trajectories.
    pub solve: f64,
    /// Mean checking tokens over correct trajectories.
    pub check: f64,
    /// Mean reflective-step count over correct trajectories.
    pub reflect: f64,
    pub num_correct: usize,
    pub r2w: Rate,
}

/// Behavioral summary of a set of analyzed trajectories.
pub fn summarize(method: &str, items: &[AnalyzedTrajectory], vocab: &Vocab) -> BehaviorSummary {
    let n = items.len();
    let (mut solve, mut check, mut reflect, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for it in items.iter().filter(|it| it.trajectory.reward == 1) {
        let (s, c) = solve_check_split(&it.trajectory, &it.phases());
        solve += s;
        check += c;
        reflect += reflect_count(&it.trajectory, vocab);
        correct += 1;
    }
    let per_correct = |x: usize| if correct == 0 { 0.0 } else { x as f64 / correct as f64 };
    let per_item = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    BehaviorSummary {
        method: method.to_string(),
        acc: per_item(items.iter().map(|it| f64::from(it.trajectory.reward)).sum()),
        len: per_item(items.iter().map(|it| it.trajectory.len() as f64).sum()),
        solve: per_correct(solve),
        check: per_correct(check),
        reflect: per_correct(reflect),
        num_correct: correct,
        r2w: r2w_rate(items.iter().map(|it| (&it.series, it.trajectory.reward))),
    }
}

pub fn alignment_histogram(items: &[AnalyzedTrajectory]) -> AlignmentHistogram {
    let mut h = AlignmentHistogram::default();
    for it in items {
        h.add(alignment_displacement(&it.series, it.k_gt));
    }
    h
}

/// Settings shared by the evaluation drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub k: usize,
    pub decode: DecodeConfig,
    pub probe: ProbeConfig,
    pub eps_sat: f64,
    pub seed: u64,
}

fn probe_base(seed: u64) -> u64 {
    mix(&[seed, EVAL_PROBE_TAG])
}

fn analyze<P: PolicyOracle>(
    policy: &P,
    query: &Query,
    trajectory: TokenTrajectory,
    vocab: &Vocab,
    settings: &EvalSettings,
    stream: u64,
) -> Result<AnalyzedTrajectory> {
    let probes = probe_trajectory(
        policy,
        query,
        &trajectory,
        &settings.probe,
        vocab,
        probe_base(settings.seed),
        stream,
    )?;
    let series = PotentialSeries::from_probes(&probes, settings.eps_sat)?;
    let k_gt = solving_step(&trajectory, query, vocab)?;
    Ok(AnalyzedTrajectory {
        trajectory,
        probes,
        series,
        k_gt,
    })
}

/// Decodes `k` samples per query with standard decoding and probes every
/// step of every sample.
pub fn evaluate_standard<P: PolicyOracle>(
    policy: &P,
    queries: &[Query],
    vocab: &Vocab,
    settings: &EvalSettings,
) -> Result<Vec<Vec<AnalyzedTrajectory>>> {
    queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            (0..settings.k)
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(settings.seed, qi, s));
                    let g = sample_trajectory(policy, q, vocab, &settings.decode, &mut rng);
                    analyze(policy, q, g.trajectory, vocab, settings, mix(&[qi as u64, s as u64]))
                })
                .collect()
        })
        .collect()
}

/// Same decodes as [`evaluate_standard`] (shared seeds) with probe-truncated
/// decoding.
pub fn evaluate_truncated<P: PolicyOracle>(
    policy: &P,
    queries: &[Query],
    vocab: &Vocab,
    settings: &EvalSettings,
) -> Result<Vec<Vec<AnalyzedTrajectory>>> {
    queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            (0..settings.k)
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(settings.seed, qi, s));
                    let stream = mix(&[qi as u64, s as u64]);
                    let t = probe_truncated_decode(
                        policy,
                        q,
                        vocab,
                        &settings.decode,
                        &settings.probe,
                        settings.eps_sat,
                        &mut rng,
                        probe_base(settings.seed),
                        stream,
                    )?;
                    let series = PotentialSeries::new(t.phi, settings.eps_sat)?;
                    let k_gt = solving_step(&t.generation.trajectory, q, vocab)?;
                    Ok(AnalyzedTrajectory {
                        trajectory: t.generation.trajectory,
                        probes: t.probes,
                        series,
                        k_gt,
                    })
                })
                .collect()
        })
        .collect()
}

/// Accuracy/length/pass over per-query groups of analyzed trajectories.
pub fn at_k(groups: &[Vec<AnalyzedTrajectory>], k: usize) -> AtK {
    let rewards: Vec<Vec<u8>> = groups
        .iter()
        .map(|g| g.iter().map(|t| t.trajectory.reward).collect())
        .collect();
    let lengths: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().map(|t| t.trajectory.len()).collect())
        .collect();
    at_k_from_rewards(&rewards, &lengths, k)
}

/// Everything an evaluation run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorReport {
    pub at_k: AtK,
    pub summary: BehaviorSummary,
    pub trajectories: Vec<AnalyzedTrajectory>,
}

pub fn evaluate_behavior<P: PolicyOracle>(
    method: &str,
    policy: &P,
    queries: &[Query],
    vocab: &Vocab,
    settings: &EvalSettings,
) -> Result<BehaviorReport> {
    let groups = evaluate_standard(policy, queries, vocab, settings)?;
    let at_k = at_k(&groups, settings.k);
    let trajectories: Vec<AnalyzedTrajectory> = groups.into_iter().flatten().collect();
    let summary = summarize(method, &trajectories, vocab);
    Ok(BehaviorReport {
        at_k,
        summary,
        trajectories,
    })
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_behavior_csv<W: Write>(w: W, rows: &[BehaviorSummary]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["method", "acc", "solve", "check", "reflect", "r2w"])?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            f6(r.acc),
            f6(r.solve),
            f6(r.check),
            f6(r.reflect),
            f6(r.r2w.value),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// Bins without any step are left out.
pub fn write_variance_bins_csv<W: Write>(w: W, bins: &VarianceBins) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["bin", "var_conf", "var_acc"])?;
    for (label, b) in BIN_LABELS.iter().zip(&bins.bins).filter(|(_, b)| b.count > 0) {
        out.write_record([label.to_string(), f6(b.var_conf), f6(b.var_acc)])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// One row per observed `Δk`, then `exact`, `early`, `late` summary rows
/// (fractions of defined displacements) and an `absent` row counting
/// trajectories without a displacement. Empty input gives the header only.
pub fn write_alignment_csv<W: Write>(w: W, hist: &AlignmentHistogram) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["delta_k", "count", "fraction"])?;
    let n = hist.defined();
    if n + hist.absent == 0 {
        return out.flush().map_err(|e| Error::io("<csv>", e));
    }
    for (d, c) in &hist.counts {
        out.write_record([d.to_string(), c.to_string(), f6(Rate::new(*c, n).value)])?;
    }
    let (exact, early, late) = hist.exact_early_late();
    for (name, r) in [("exact", exact), ("early", early), ("late", late)] {
        out.write_record([name.to_string(), r.numerator.to_string(), f6(r.value)])?;
    }
    let total = n + hist.absent;
    out.write_record([
        "absent".to_string(),
        hist.absent.to_string(),
        f6(Rate::new(hist.absent, total).value),
    ])?;
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_curves_csv<W: Write>(w: W, reports: &[UpdateReport]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["iteration", "entropy", "acc", "len"])?;
    for r in reports {
        out.write_record([
            r.iteration.to_string(),
            f6(r.mean_entropy),
            f6(r.mean_reward),
            f6(r.mean_length),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_eval_csv<W: Write>(w: W, rows: &[AtK]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["k", "acc_at_k", "len_at_k", "pass_at_k"])?;
    for r in rows {
        out.write_record([r.k.to_string(), f6(r.acc), f6(r.len), f6(r.pass)])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

/// Standard versus probe-truncated decoding metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub method: &'static str,
    pub at_k: AtK,
    pub r2w: Rate,
}

pub fn write_truncation_csv<W: Write>(w: W, rows: &[TruncationRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["method", "acc_at_k", "len_at_k", "r2w"])?;
    for r in rows {
        out.write_record([r.method.to_string(), f6(r.at_k.acc), f6(r.at_k.len), f6(r.r2w.value)])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TokenId;

    fn vocab() -> Vocab {
        Vocab::with_digits(10).unwrap()
    }

    fn traj(tokens: Vec<TokenId>) -> TokenTrajectory {
        let n = tokens.len();
        TokenTrajectory::from_tokens(0, tokens, vec![0.0; n], &vocab(), false)
    }

    #[test]
    fn split_counts() {
        let v = vocab();
        let d = v.delim();
        let t = traj(vec![1, 2, 3, d, v.wait(), 4, d, v.think_end(), v.answer(), 4, v.eot()]);
        use Phase::*;
        assert_eq!(
            solve_check_split(
                &t,
                &PhaseLabels {
                    steps: vec![Solving, Checking]
                }
            ),
            (4, 3)
        );
        assert_eq!(
            solve_check_split(
                &t,
                &PhaseLabels {
                    steps: vec![Solving, Solving]
                }
            ),
            (7, 0)
        );
        let empty = traj(vec![v.think_end(), v.answer(), 4, v.eot()]);
        assert_eq!(solve_check_split(&empty, &PhaseLabels { steps: vec![] }), (0, 0));
    }

    #[test]
    fn reflect_counts_steps() {
        let v = vocab();
        let (d, w) = (v.delim(), v.wait());
        assert_eq!(reflect_count(&traj(vec![1, d, 2, d]), &v), 0);
        assert_eq!(reflect_count(&traj(vec![w, 1, w, d, 2, d]), &v), 1);
        assert_eq!(reflect_count(&traj(vec![w, d, 1, d, w, d, 2, d, w, d]), &v), 3);
    }

    #[test]
    fn r2w_rates() {
        let sat = PotentialSeries::new(vec![0.95], 0.9).unwrap();
        let flat = PotentialSeries::new(vec![0.1], 0.9).unwrap();
        let r = r2w_rate([(&sat, 1u8), (&flat, 1)]);
        assert_eq!(r.value, 0.0);
        assert!(r.is_empty());
        let mut items = vec![(&sat, 0u8); 2];
        items.extend(vec![(&flat, 0u8); 8]);
        assert_eq!(r2w_rate(items).value, 0.2);
        assert_eq!(r2w_rate([(&sat, 0u8), (&sat, 0)]).value, 1.0);
    }

    #[test]
    fn at_k_counts() {
        let a = at_k_from_rewards(&[vec![1, 0, 0, 0]], &[vec![3, 3, 3, 3]], 4);
        assert_eq!((a.acc, a.pass, a.len), (0.25, 1.0, 3.0));
        let one = at_k_from_rewards(&[vec![1], vec![0], vec![1]], &[vec![1], vec![1], vec![1]], 1);
        assert_eq!(one.acc, one.pass);
    }

    #[test]
    fn displacement() {
        let s = |phi: &[f64]| PotentialSeries::new(phi.to_vec(), 0.9).unwrap();
        assert_eq!(alignment_displacement(&s(&[0.1, 0.2, 0.95]), Some(3)), Some(0));
        assert_eq!(
            alignment_displacement(&s(&[0.1, 0.2, 0.3, 0.4, 0.95]), Some(3)),
            Some(2)
        );
        assert_eq!(alignment_displacement(&s(&[0.1]), Some(1)), None);
        assert_eq!(alignment_displacement(&s(&[0.95]), None), None);
    }

    #[test]
    fn bins() {
        assert_eq!(progress_bin(3, 10), 1);
        assert_eq!(progress_bin(1, 5), 1);
        assert_eq!(progress_bin(4, 5), 4);
        assert_eq!(progress_bin(5, 5), 4);
        assert_eq!(progress_bin(1, 10), 0);
        let rec = |k, confs: &[f64], accs: &[f64]| ProbeRecord {
            k,
            confidence: 0.0,
            correctness: 0.0,
            entropies: confs.iter().map(|c: &f64| -c.ln()).collect(),
            accs: accs.to_vec(),
        };
        let t = vec![rec(1, &[0.4, 0.6], &[0.5, 0.5]), rec(2, &[0.5, 0.5], &[0.4, 0.6])];
        let b = variance_bins(&[&t]);
        assert!((b.bins[2].var_conf - 0.01).abs() < 1e-12);
        assert_eq!(b.bins[2].var_acc, 0.0);
        assert!((b.bins[4].var_acc - 0.01).abs() < 1e-12);
        assert_eq!(b.bins[0].count, 0);
        // a single sample per step carries no variance information
        let single = vec![rec(1, &[0.3], &[0.3])];
        assert_eq!(variance_bins(&[&single]), VarianceBins::default());
    }

    #[test]
    fn csv_layouts() {
        let mut buf = Vec::new();
        write_variance_bins_csv(&mut buf, &VarianceBins::default()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin,var_conf,var_acc\n");
        let mut bins = VarianceBins::default();
        bins.bins[4] = VarianceBin {
            var_conf: 0.01,
            var_acc: 0.0,
            count: 3,
        };
        let mut buf = Vec::new();
        write_variance_bins_csv(&mut buf, &bins).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin,var_conf,var_acc\n\"[0.8,1.0]\",0.010000,0.000000\n"
        );

        let mut buf = Vec::new();
        write_alignment_csv(&mut buf, &AlignmentHistogram::default()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "delta_k,count,fraction\n");

        let mut h = AlignmentHistogram::default();
        for d in [Some(0), Some(0), Some(2), Some(-1), None] {
            h.add(d);
        }
        let mut buf = Vec::new();
        write_alignment_csv(&mut buf, &h).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "delta_k,count,fraction\n-1,1,0.250000\n0,2,0.500000\n2,1,0.250000\n\
             exact,2,0.500000\nearly,1,0.250000\nlate,1,0.250000\nabsent,1,0.200000\n"
        );

        let mut buf = Vec::new();
        write_behavior_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method,acc,solve,check,reflect,r2w\n");
    }
}
