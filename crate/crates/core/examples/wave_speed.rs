//! Traveling wave on growing boxes: the selected speed approaches c*_ε.

use phenowave::operators::{ModelConfig, PresetSpec};
use phenowave::spectral::{eigen_regularized, EigenOptions};
use phenowave::stationary::beta0;
use phenowave::waves::{extend_line, WaveOptions};

fn main() -> phenowave::Result<()> {
    let (mu, eps) = (0.25, 1e-2);
    let mut cfg = ModelConfig::standard(21, mu);
    cfg.a = PresetSpec::new("one_minus_quadratic");
    let md = cfg.assemble()?;
    let beta = beta0(&md.m, &md.k, &md.a, mu);
    let lambda = eigen_regularized(&md.grid, &md.m, &md.a, mu, eps, EigenOptions::default())?.lambda;
    let l0 = std::f64::consts::PI / (-lambda).sqrt();
    let ext = extend_line(&md, mu, eps, beta, -lambda / 4.0, &[4.0 * l0, 8.0 * l0], WaveOptions::default())?;
    for (l, c) in &ext.speeds {
        println!("l = {l:.3}: c = {c:.6} (c/c* = {:.5})", c / ext.c_star_eps);
    }
    println!("max forward increase {:.2e}", ext.wave.max_forward_increase());
    Ok(())
}
