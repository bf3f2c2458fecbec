//! Eigenmeasure with a Dirac atom at the fitness peak when μγ₁ < 1.

use phenowave::operators::ModelConfig;
use phenowave::spectral::{cosine_tests, singular_eigenvector, weak_eigen_residual};

fn main() -> phenowave::Result<()> {
    let mu = 0.25;
    let md = ModelConfig::standard(401, mu).assemble()?;
    let se = singular_eigenvector(&md.grid, &md.m, &md.a, mu)?;
    let tests = cosine_tests(&md.grid, 16);
    let res = weak_eigen_residual(&md.grid, &md.m, &md.a, &se.effective_gap, mu, &se.profile, &tests)?;
    println!("lambda1 = {:.6}, atom mass = {:.6}, weak residual = {res:.2e}", se.lambda, se.atom_mass);
    for i in (0..md.grid.len()).step_by(50) {
        println!("y = {:+.3}  density = {:.6}", md.grid.node(i)[0], se.profile.ac[i]);
    }
    Ok(())
}
