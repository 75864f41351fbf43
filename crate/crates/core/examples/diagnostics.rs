//! Behavioral diagnostics of the prior on a small query set, printed as the
//! CSV files `spae diagnose` writes.

use spae::cli::generate_queries;
use spae::diagnostics::{
    alignment_histogram, evaluate_behavior, variance_bins, write_alignment_csv, write_behavior_csv,
    write_variance_bins_csv, EvalSettings,
};
use spae::policy::DecodeConfig;
use spae::probe::ProbeConfig;
use spae::trainer::TrainConfig;

fn main() -> spae::Result<()> {
    let cfg = TrainConfig::default();
    let policy = cfg.initial_policy()?;
    let queries = generate_queries(&cfg.task(), 9, 40)?;
    let decode = DecodeConfig::rollout(cfg.max_len);
    let settings = EvalSettings {
        k: 4,
        decode,
        probe: ProbeConfig::new(decode),
        eps_sat: cfg.eps_sat,
        seed: 3,
    };
    let rep = evaluate_behavior("prior", &policy, &queries, policy.vocab(), &settings)?;
    let stdout = std::io::stdout();

    println!("# behavior.csv");
    write_behavior_csv(stdout.lock(), std::slice::from_ref(&rep.summary))?;
    println!("\n# variance_bins.csv");
    let sets: Vec<&[_]> = rep.trajectories.iter().map(|t| t.probes.as_slice()).collect();
    write_variance_bins_csv(stdout.lock(), &variance_bins(&sets))?;
    println!("\n# alignment.csv");
    write_alignment_csv(stdout.lock(), &alignment_histogram(&rep.trajectories))?;
    Ok(())
}
