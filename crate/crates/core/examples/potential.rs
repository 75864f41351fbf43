//! Step Potential on a few hand-made series: phases, saturation counts and
//! the right-to-wrong flag.

use spae::diagnostics::alignment_displacement;
use spae::potential::{classify_phases, detect_r2w, saturation_counts, step_potential, PotentialSeries};

fn main() -> spae::Result<()> {
    println!("phi(acc, conf):");
    for (acc, conf) in [(1.0, 1.0), (0.0, 1.0), (0.5, 0.5), (1.0, 0.2), (0.2, 0.2)] {
        println!("  ({acc:.1}, {conf:.1}) -> {:+.3}", step_potential(acc, conf)?);
    }

    let cases = [
        ("never saturates", vec![0.1, 0.2, 0.3], 1),
        ("saturates at step 2, ends right", vec![0.2, 0.95, 0.97, 0.96], 1),
        ("saturates at step 2, ends wrong", vec![0.2, 0.95, 0.4, -0.6], 0),
    ];
    for (name, phi, reward) in cases {
        let s = PotentialSeries::new(phi, 0.9)?;
        let phases: Vec<_> = classify_phases(&s).steps.iter().map(|p| format!("{p:?}")).collect();
        println!("\n{name}: phi = {:?}", s.phi);
        println!("  phases     {}", phases.join(" "));
        println!("  C_sat      {:?}", saturation_counts(&s));
        println!("  R2W        {}", detect_r2w(&s, reward));
        println!(
            "  delta_k    {:?} (oracle solves at step 2)",
            alignment_displacement(&s, Some(2))
        );
    }
    Ok(())
}
