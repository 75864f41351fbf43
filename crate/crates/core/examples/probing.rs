//! Samples one output from the over-checking prior and probes every step:
//! confidence, forced correctness and the resulting Step Potential.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spae::env::{generate_query, TaskSpec};
use spae::policy::{sample_trajectory, DecodeConfig, OverCheckPrior, TabularPolicy};
use spae::potential::PotentialSeries;
use spae::potential::{classify_phases, step_potential};
use spae::probe::{probe_trajectory, ProbeConfig};

fn main() -> spae::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let spec = TaskSpec::default();
    let v = spec.vocab()?;
    let policy = TabularPolicy::with_prior(v, 2, &OverCheckPrior::default())?;
    let query = generate_query(seed, &spec)?;
    let decode = DecodeConfig::rollout(64);
    let g = sample_trajectory(&policy, &query, &v, &decode, &mut ChaCha8Rng::seed_from_u64(seed));
    let t = &g.trajectory;

    println!("prompt : {}", v.render(&query.prompt));
    println!("output : {}", v.render(&t.tokens));
    println!("reward : {}", t.reward);

    let records = probe_trajectory(&policy, &query, t, &ProbeConfig::new(decode), &v, seed, 0)?;
    let series = PotentialSeries::from_probes(&records, 0.9)?;
    let phases = classify_phases(&series);
    println!("{:>4} {:>8} {:>8} {:>8}  phase  step", "k", "conf", "acc", "phi");
    for (r, phase) in records.iter().zip(&phases.steps) {
        let phi = step_potential(r.correctness, r.confidence)?;
        let step = v.render(t.step_tokens(r.k)?);
        println!(
            "{:>4} {:>8.4} {:>8.4} {:>8.4}  {:>5?}  {step}",
            r.k, r.confidence, r.correctness, phi, phase
        );
    }
    Ok(())
}
