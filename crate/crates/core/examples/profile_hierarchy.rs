//! Leading profile, first and second correctors, and the residual of their sum.
//!
//! cargo run --release --example profile_hierarchy

use std::path::Path;

use maxbloch::config::parse_config;
use maxbloch::harness::{build_tm_profiles, residual_norms};

fn main() -> maxbloch::Result<()> {
    let cfg = parse_config(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/golden_tm.json"))?;
    let setup = cfg.convergence_setup()?;
    let profiles = build_tm_profiles(&setup)?;
    let last = profiles.times.len() - 1;
    for j in 0..=2 {
        println!("order {j}: sup over slots at t = {} is {:.4e}", profiles.times[last], profiles.order_sup(last, j));
    }
    println!("\n{:>10} {:>14} {:>14} {:>14}", "eps", "U0 only", "U0 + U1", "U0 + U1 + U2");
    for &eps in &setup.epsilons {
        let r: Vec<f64> = (0..=2)
            .map(|order| {
                residual_norms(&profiles, eps, &setup.grid, order)
                    .map(|s| s.iter().fold(0.0_f64, |m, x| m.max(x.sup)))
            })
            .collect::<maxbloch::Result<_>>()?;
        println!("{eps:>10} {:>14.4e} {:>14.4e} {:>14.4e}", r[0], r[1], r[2]);
    }
    Ok(())
}
