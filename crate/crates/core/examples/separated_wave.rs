//! Separated wave ρ(x)φ(dy) built from the KPP front and the singular eigenmeasure.

use phenowave::operators::ModelConfig;
use phenowave::spectral::{minimal_speed, singular_eigenvector};
use phenowave::waves::{kpp_front, separated_wave, weak_residual, TestFunctionSet, WeakTerms, XDerivatives};

fn main() -> phenowave::Result<()> {
    let mu = 0.25;
    let md = ModelConfig::standard(201, mu).assemble()?;
    let se = singular_eigenvector(&md.grid, &md.m, &md.a, mu)?;
    let mut phi = se.profile.clone();
    phi.scale(1.0 / phi.k_mass(&md.grid, &md.k)?);
    let a_eff: Vec<f64> = se.effective_gap.iter().map(|g| md.a.sup_a - g).collect();
    let r = -se.lambda;
    let c = minimal_speed(se.lambda)?;
    let front = kpp_front(r, c, 40.0, 0.5 * r, 8001)?;
    println!("front: c = {c:.6}, residual {:.2e}, decay {:?} (c/2 = {:.6})", front.residual, front.decay_rate, c / 2.0);
    let wave = separated_wave(&md.grid, &md.k, &phi, &front)?;
    let tests = TestFunctionSet::standard(&md.grid, 0.0, 4.0);
    let res = weak_residual(&md.grid, &md.m, &md.k, &md.a, &a_eff, mu, &wave, &tests, XDerivatives::Analytic, WeakTerms::default())?;
    println!("weak residual {res:.2e} over {} test functions", tests.len());
    Ok(())
}
