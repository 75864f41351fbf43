//! Standard versus probe-truncated decoding of the untrained prior, paired
//! by seed.

use spae::cli::generate_queries;
use spae::diagnostics::{at_k, evaluate_standard, evaluate_truncated, r2w_rate, EvalSettings};
use spae::policy::DecodeConfig;
use spae::probe::ProbeConfig;
use spae::trainer::TrainConfig;

fn main() -> spae::Result<()> {
    let cfg = TrainConfig::default();
    let policy = cfg.initial_policy()?;
    let queries = generate_queries(&cfg.task(), 5, 50)?;
    let decode = DecodeConfig::evaluation(cfg.max_len);
    let settings = EvalSettings {
        k: 8,
        decode,
        probe: ProbeConfig::new(decode),
        eps_sat: cfg.eps_sat,
        seed: 2,
    };
    let v = *policy.vocab();
    let standard = evaluate_standard(&policy, &queries, &v, &settings)?;
    let truncated = evaluate_truncated(&policy, &queries, &v, &settings)?;

    let (s, t) = (&standard[0][0].trajectory, &truncated[0][0].trajectory);
    println!("standard : {}", v.render(&s.tokens));
    println!("truncated: {}\n", v.render(&t.tokens));

    println!("{:<10} {:>8} {:>8} {:>8}", "decode", "acc", "len", "R2W");
    for (name, groups) in [("standard", &standard), ("truncated", &truncated)] {
        let a = at_k(groups, settings.k);
        let r = r2w_rate(groups.iter().flatten().map(|x| (&x.series, x.trajectory.reward)));
        println!("{name:<10} {:>8.4} {:>8.2} {:>8.4}", a.acc, a.len, r.value);
    }
    Ok(())
}
