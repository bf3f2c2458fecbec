//! Stationary states as ε → 0: mass bounds and the concentration verdict in
//! the singular (μ = 0.25) and continuous (μ = 0.75) regimes.

use phenowave::operators::ModelConfig;
use phenowave::stationary::{concentration_detector, mass_bounds, viscosity_sweep, NewtonOptions};

fn main() -> phenowave::Result<()> {
    let eps = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    for mu in [0.25, 0.75] {
        let md = ModelConfig::standard(201, mu).assemble()?;
        let rep = viscosity_sweep(&md, mu, 0.0, &eps, NewtonOptions::default())?;
        println!("mu = {mu}, lambda1 = {:.6}", rep.lambda1);
        for e in &rep.entries {
            let (Some(le), Some(p)) = (e.lambda_eps, e.profile.as_ref()) else {
                println!("  eps = {:.0e}: {}", e.eps, e.error.as_deref().unwrap_or("failed"));
                continue;
            };
            let mb = mass_bounds(&md.grid, &phenowave::spectral::MeasureProfile::density(p.clone()), le, md.k.lower_bound, md.k.upper_bound, md.a.sup_a, 1e-8);
            println!("  eps = {:.0e}: mass {:.6} in [{:.6}, {:.6}], sup {:.4}", e.eps, mb.mass, mb.lower, mb.upper, e.sup.unwrap_or(f64::NAN));
        }
        let v = concentration_detector(&md, &rep, 3, 0.25);
        println!("  verdict {:?}, window fractions {:.3?}", v.label, v.fractions);
    }
    Ok(())
}
