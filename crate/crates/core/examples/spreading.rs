//! Invasion from compactly supported data, with the front speed compared to c*_ε.

use phenowave::operators::{ModelConfig, PresetSpec};
use phenowave::parabolic::{matching_eigen, simulate, SimulationParams};

fn main() -> phenowave::Result<()> {
    let (mu, eps) = (0.25, 1e-2);
    let mut cfg = ModelConfig::standard(21, mu);
    cfg.a = PresetSpec::new("one_minus_quadratic");
    let md = cfg.assemble()?;
    let lambda = matching_eigen(&md, mu, eps)?.lambda;
    let params = SimulationParams::for_run(lambda, mu, eps, 40.0)?;
    let r = simulate(&md, &params, None)?;
    for (t, x) in r.state.front.iter().step_by(20) {
        println!("t = {t:6.2}  front at x = {x:8.3}");
    }
    if let Some(e) = r.estimate {
        println!("c_obs = {:.5} +- {:.1e}, c* = {:.5}", e.c_obs, e.stderr, r.c_star);
    }
    Ok(())
}
