//! Trains RF-B and SPAE from the same prior and seed, then compares checking
//! tokens, accuracy and right-to-wrong rate on held-out queries.
//!
//!     cargo run --release --example training -- [iterations] [seed]

use spae::cli::generate_queries;
use spae::diagnostics::{evaluate_behavior, EvalSettings};
use spae::policy::DecodeConfig;
use spae::probe::ProbeConfig;
use spae::trainer::{train_iteration, Estimator, TrainConfig};

fn main() -> spae::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let held_out = generate_queries(&TrainConfig::default().task(), 0xE7A1, 64)?;
    for estimator in [Estimator::Rfb, Estimator::Spae] {
        let cfg = TrainConfig {
            estimator,
            iterations,
            seed,
            lr: 1.0,
            ..TrainConfig::default()
        };
        let mut policy = cfg.initial_policy()?;
        for it in 0..iterations {
            let r = train_iteration(&mut policy, &cfg, it)?;
            if it % 25 == 0 || it + 1 == iterations {
                println!(
                    "{estimator:>4} iter {it:>4}: reward {:.3} len {:.1} entropy {:.3} kept {}",
                    r.mean_reward, r.mean_length, r.mean_entropy, r.groups_kept
                );
            }
        }
        let decode = DecodeConfig::evaluation(cfg.max_len);
        let settings = EvalSettings {
            k: 8,
            decode,
            probe: ProbeConfig::new(decode),
            eps_sat: cfg.eps_sat,
            seed: 1,
        };
        let rep = evaluate_behavior(estimator.name(), &policy, &held_out, policy.vocab(), &settings)?;
        let s = &rep.summary;
        println!(
            "{estimator:>4} eval: acc@8 {:.4} len {:.2} solve {:.2} check {:.3} reflect {:.3} R2W {:.4} ({}/{})\n",
            rep.at_k.acc, rep.at_k.len, s.solve, s.check, s.reflect, s.r2w.value, s.r2w.numerator, s.r2w.denominator
        );
    }
    Ok(())
}
