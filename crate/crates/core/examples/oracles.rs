//! Cross-checks of the spectral solver: determinant scan and grid refinement.

use nalgebra::DMatrix;
use phenowave::operators::ModelConfig;
use phenowave::spectral::{gamma1_and_mucrit, EigenOptions};
use phenowave::validation::{perron_oracle_report, richardson_quadrature_check};

fn main() -> phenowave::Result<()> {
    let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.5, 0.2, 0.3, -0.4, 0.1, 0.6, 0.2, -2.0]);
    let rep = perron_oracle_report("3x3 Metzler", &a, 1e-8)?;
    println!("det scan {:?} vs power {:?}: pass {}", rep.oracle_values, rep.main_values, rep.pass);
    let conv = richardson_quadrature_check(&[51, 101, 201, 401, 801], Some(2.0), |n| {
        let md = ModelConfig::standard(n, 0.25).assemble()?;
        Ok(gamma1_and_mucrit(&md.grid, &md.m, &md.a, EigenOptions::default())?.gamma1)
    })?;
    println!("gamma1 errors {:?}, order {:?} ({})", conv.errors, conv.order, conv.label);
    Ok(())
}
