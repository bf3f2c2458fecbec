//! Principal eigenvalue of the nonlocal operator across the μ-trichotomy,
//! together with the critical mutation rate.

use phenowave::operators::ModelConfig;
use phenowave::spectral::{classify_trichotomy, eigen_nonlocal, gamma1_and_mucrit, minimal_speed, EigenOptions};

fn main() -> phenowave::Result<()> {
    let md = ModelConfig::standard(801, 0.25).assemble()?;
    let rate = gamma1_and_mucrit(&md.grid, &md.m, &md.a, EigenOptions::default())?;
    println!("gamma1 = {:.6}, mu0 = {:.6}", rate.gamma1, rate.mu0);
    for mu in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let eig = eigen_nonlocal(&md.grid, &md.m, &md.a, mu, EigenOptions::default())?;
        let class = classify_trichotomy(rate.gamma1, mu, eig.lambda, md.a.sup_a, 1e-3, 1e-2);
        let c = minimal_speed(eig.lambda).map(|c| format!("{c:.5}")).unwrap_or_else(|_| "-".into());
        println!("mu = {mu:.2}: lambda1 = {:.6}, regime {:?}, c* = {c}", eig.lambda, class.regime);
    }
    Ok(())
}
