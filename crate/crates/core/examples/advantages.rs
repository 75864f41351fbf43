//! One group of rollouts from the prior, scored three ways: the plain group
//! baseline, RF-B batch normalization and SPAE. Per-token advantages are
//! written as JSONL (`adv_raw`, `adv_final`) to the path given as the first
//! argument, or to stdout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spae::advantage::{batch_normalize, group_advantage, rfb_advantages, spae_token_advantages, SpaeConfig};
use spae::env::{generate_query, TaskSpec};
use spae::model::map_token_to_step;
use spae::policy::{DecodeConfig, OverCheckPrior, TabularPolicy};
use spae::potential::PotentialSeries;
use spae::probe::{probe_trajectory, ProbeConfig};
use spae::records::{to_jsonl, write_jsonl, TrajectoryRecord};
use spae::trainer::sample_groups;

fn main() -> spae::Result<()> {
    let spec = TaskSpec::default();
    let v = spec.vocab()?;
    let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default())?;
    let decode = DecodeConfig::rollout(64);
    let queries = vec![generate_query(3, &spec)?];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let group = sample_groups(&policy, &queries, 8, &v, &decode, &mut rng).remove(0);

    let rewards = group.rewards();
    let adv = group_advantage(&rewards);
    let trajs: Vec<_> = group.rollouts.iter().map(|g| g.trajectory.clone()).collect();
    let probe = ProbeConfig::new(decode);
    let mut series = Vec::new();
    let mut probes = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let p = probe_trajectory(&policy, &queries[0], t, &probe, &v, 11, i as u64)?;
        series.push(PotentialSeries::from_probes(&p, 0.9)?);
        probes.push(p);
    }
    let maps: Vec<_> = trajs.iter().map(map_token_to_step).collect();
    let cfg = SpaeConfig::default();
    let raw = spae_token_advantages(&adv, &series, &maps, &cfg)?;
    let fin = batch_normalize(&raw, cfg.eps_norm)?;
    let lengths: Vec<usize> = trajs.iter().map(|t| t.len()).collect();
    let rfb = rfb_advantages(&adv, &lengths, cfg.eps_norm)?;

    eprintln!(
        "{:>3} {:>6} {:>6} {:>8} {:>10} {:>10}",
        "i", "reward", "steps", "group", "rfb mean", "spae mean"
    );
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    for i in 0..trajs.len() {
        eprintln!(
            "{i:>3} {:>6} {:>6} {:>+8.3} {:>+10.3} {:>+10.3}",
            rewards[i],
            trajs[i].num_steps(),
            adv[i],
            mean(&rfb.values[i]),
            mean(&fin.values[i])
        );
    }

    let records: Vec<TrajectoryRecord> = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = TrajectoryRecord::from_trajectory(t);
            r.method = Some("SPAE".into());
            r.probe = Some(probes[i].clone());
            r.phi = Some(series[i].phi.clone());
            r.adv_raw = Some(raw.values[i].clone());
            r.adv_final = Some(fin.values[i].clone());
            r
        })
        .collect();
    match std::env::args().nth(1) {
        Some(path) => write_jsonl(std::path::Path::new(&path), &records)?,
        None => print!("{}", to_jsonl(&records)?),
    }
    Ok(())
}
