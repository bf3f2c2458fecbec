//! Small-instance oracles: determinant-scan Perron values, a brute-force weak
//! eigen-residual and grid-refinement order fits.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::operators::{FitnessProfile, KernelMatrix};
use crate::spectral::{perron_metzler, MeasureProfile};

/// Oracle value against main-path value.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub oracle: String,
    pub instance: String,
    pub oracle_values: Vec<f64>,
    pub main_values: Vec<f64>,
    /// Max |oracle − main| over the values.
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(oracle: &str, instance: impl Into<String>, oracle_values: Vec<f64>, main_values: Vec<f64>, tolerance: f64) -> Result<Self> {
        if oracle_values.len() != main_values.len() {
            return Err(Error::ShapeMismatch {
                expected: oracle_values.len(),
                got: main_values.len(),
            });
        }
        let discrepancy = oracle_values
            .iter()
            .zip(&main_values)
            .map(|(o, m)| (o - m).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            oracle: oracle.to_string(),
            instance: instance.into(),
            oracle_values,
            main_values,
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        })
    }

    /// Appends one JSON line to `path`.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{}", serde_json::to_string(self)?)?;
        Ok(())
    }
}

pub const DET_SCAN_MAX_DIM: usize = 12;

/// Largest real root of det(A − ΛI) in [lo, hi], located by determinant sign
/// changes on `points` equally spaced values scanned downward from `hi`, then
/// bisected to 1e−12.
pub fn det_scan_eigen(a: &DMatrix<f64>, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let n = a.nrows();
    if n == 0 || n != a.ncols() {
        return Err(Error::ShapeMismatch { expected: n, got: a.ncols() });
    }
    if n > DET_SCAN_MAX_DIM {
        return Err(Error::Precondition(format!("determinant scan needs dimension ≤ {DET_SCAN_MAX_DIM}, got {n}")));
    }
    if !(hi > lo) || points < 2 {
        return Err(Error::Precondition("need hi > lo and at least 2 scan points".into()));
    }
    let det = |l: f64| -> f64 {
        let mut s = a.clone();
        for i in 0..n {
            s[(i, i)] -= l;
        }
        s.lu().determinant()
    };
    let step = (hi - lo) / (points - 1) as f64;
    let mut upper = hi;
    let mut d_upper = det(hi);
    for k in 1..points {
        let l = hi - k as f64 * step;
        let d = det(l);
        if d == 0.0 {
            return Ok(l);
        }
        if d.signum() != d_upper.signum() && d_upper != 0.0 {
            let (mut a_lo, mut a_hi, mut d_lo) = (l, upper, d);
            while a_hi - a_lo > 1e-12 {
                let mid = 0.5 * (a_lo + a_hi);
                let dm = det(mid);
                if dm == 0.0 {
                    return Ok(mid);
                }
                if dm.signum() == d_lo.signum() {
                    a_lo = mid;
                    d_lo = dm;
                } else {
                    a_hi = mid;
                }
            }
            return Ok(0.5 * (a_lo + a_hi));
        }
        if d_upper == 0.0 {
            return Ok(upper);
        }
        upper = l;
        d_upper = d;
    }
    Err(Error::WidenRange { lo, hi })
}

/// Gershgorin interval containing every real eigenvalue of `a`.
pub fn gershgorin_range(a: &DMatrix<f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..a.nrows() {
        let r: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        lo = lo.min(a[(i, i)] - r);
        hi = hi.max(a[(i, i)] + r);
    }
    let pad = 1e-3 * (hi - lo).max(1.0);
    (lo - pad, hi + pad)
}

/// Perron value of a small Metzler matrix: determinant scan vs the main-path
/// iteration.
pub fn perron_oracle_report(instance: impl Into<String>, a: &DMatrix<f64>, tolerance: f64) -> Result<OracleReport> {
    let (lo, hi) = gershgorin_range(a);
    let oracle = det_scan_eigen(a, lo, hi, 4000)?;
    let main = perron_metzler(a, 1e-13, 100_000)?.value;
    OracleReport::new("det-scan", instance, vec![oracle], vec![main], tolerance)
}

/// Weak eigen-equation defect evaluated in the dual form
/// Σ_j φ_j w_j [μ Σ_i w_i χ_i M(y_i, z_j) − gap_j χ_j] plus atom terms, by
/// explicit loops over kernel entries.
pub fn weak_eigen_residual_bruteforce(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    gap: &[f64],
    mu: f64,
    phi: &MeasureProfile,
    tests: &[Vec<f64>],
) -> f64 {
    let n = grid.len();
    let w = grid.weights();
    let mut worst: f64 = 0.0;
    for chi in tests {
        let mut total = 0.0;
        for j in 0..n {
            let mut pulled = 0.0;
            for i in 0..n {
                pulled += w[i] * chi[i] * m.value(i, j);
            }
            total += w[j] * phi.ac[j] * (mu * pulled - gap[j] * chi[j]);
        }
        for at in &phi.atoms {
            let mut pulled = 0.0;
            for i in 0..n {
                pulled += w[i] * chi[i] * m.value(i, at.node);
            }
            total += at.mass * (mu * pulled - (a.sup_a - a.values[at.node]) * chi[at.node]);
        }
        worst = worst.max(total.abs());
    }
    worst
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub sizes: Vec<usize>,
    pub values: Vec<f64>,
    /// |value − exact| when a target is known, otherwise successive differences.
    pub errors: Vec<f64>,
    /// Fitted order in h; None when the errors vanish or are irregular.
    pub order: Option<f64>,
    pub fit_residual: f64,
    /// "regular", "irregular" or "exact".
    pub label: String,
}

/// Refinement study of `quantity(n)` over node counts whose spacings
/// (n − 1)⁻¹ form a geometric progression.
pub fn richardson_quadrature_check(sizes: &[usize], exact: Option<f64>, quantity: impl Fn(usize) -> Result<f64>) -> Result<ConvergenceReport> {
    if sizes.len() < 3 {
        return Err(Error::Precondition("need at least 3 grid sizes".into()));
    }
    let h: Vec<f64> = sizes.iter().map(|&n| 1.0 / (n.max(2) - 1) as f64).collect();
    let ratio = h[0] / h[1];
    if !(ratio > 1.0) || h.windows(2).any(|p| ((p[0] / p[1]) / ratio - 1.0).abs() > 1e-9) {
        return Err(Error::Precondition("grid sizes must refine geometrically".into()));
    }
    let values = sizes.iter().map(|&n| quantity(n)).collect::<Result<Vec<f64>>>()?;
    let (errors, hs): (Vec<f64>, Vec<f64>) = match exact {
        Some(t) => (values.iter().map(|v| (v - t).abs()).collect(), h.clone()),
        None => (values.windows(2).map(|p| (p[1] - p[0]).abs()).collect(), h[..h.len() - 1].to_vec()),
    };
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let report = |order, fit_residual, label: &str| ConvergenceReport {
        sizes: sizes.to_vec(),
        values: values.clone(),
        errors: errors.clone(),
        order,
        fit_residual,
        label: label.to_string(),
    };
    if errors.iter().all(|&e| e <= 1e-14 * scale) {
        return Ok(report(None, 0.0, "exact"));
    }
    if errors.len() < 2 || errors.windows(2).any(|p| !(p[1] < p[0])) || errors.iter().any(|&e| e <= 0.0) {
        return Ok(report(None, f64::NAN, "irregular"));
    }
    let xs: Vec<f64> = hs.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>() / sxx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ym - slope * (x - xm)).powi(2)).sum();
    Ok(report(Some(slope), rss.sqrt(), "regular"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{ModelConfig, PresetSpec};
    use crate::spectral::{eigen_nonlocal, eigen_regularized, gamma1_and_mucrit, EigenOptions};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn det_scan_small_cases() {
        let one = DMatrix::from_element(1, 1, 3.0);
        assert!((det_scan_eigen(&one, 0.0, 5.0, 11).unwrap() - 3.0).abs() < 1e-12);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((det_scan_eigen(&swap, -2.0, 2.0, 17).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(det_scan_eigen(&swap, 2.0, 3.0, 10), Err(Error::WidenRange { .. })));
        assert!(det_scan_eigen(&DMatrix::zeros(13, 13), -1.0, 1.0, 10).is_err());
    }

    #[test]
    fn random_positive_instances_match_power_iteration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 0..5 {
            let a = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(0.05..1.0));
            let r = perron_oracle_report(format!("positive 8x8 #{k}"), &a, 1e-8).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn report_records_discrepancy_before_threshold() {
        let r = OracleReport::new("x", "y", vec![1.0, 2.0], vec![1.0, 2.5], 0.1).unwrap();
        assert_eq!(r.discrepancy, 0.5);
        assert!(!r.pass);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        r.append_to(&path).unwrap();
        r.append_to(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn gamma1_converges_to_two() {
        let r = richardson_quadrature_check(&[101, 201, 401, 801], Some(2.0), |n| {
            let md = ModelConfig::standard(n, 0.25).assemble()?;
            Ok(gamma1_and_mucrit(&md.grid, &md.m, &md.a, EigenOptions::default())?.gamma1)
        })
        .unwrap();
        assert_eq!(r.label, "regular", "{r:?}");
        assert!(r.order.unwrap() >= 0.5, "{r:?}");
    }

    #[test]
    fn smooth_viscous_eigenvalue_is_second_order() {
        let r = richardson_quadrature_check(&[21, 41, 81, 161], None, |n| {
            let mut cfg = ModelConfig::standard(n, 0.5);
            cfg.a = PresetSpec::new("one_minus_quadratic");
            let md = cfg.assemble()?;
            Ok(eigen_regularized(&md.grid, &md.m, &md.a, 0.5, 0.1, EigenOptions::default())?.lambda)
        })
        .unwrap();
        assert!((r.order.unwrap() - 2.0).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn constant_fitness_has_zero_error() {
        let r = richardson_quadrature_check(&[11, 21, 41], Some(-0.7), |n| {
            let mut cfg = ModelConfig::standard(n, 0.3);
            cfg.a = PresetSpec::new("constant").with("value", 0.7);
            let md = cfg.assemble()?;
            Ok(eigen_nonlocal(&md.grid, &md.m, &md.a, 0.3, EigenOptions::default())?.lambda)
        })
        .unwrap();
        assert_eq!(r.label, "exact", "{r:?}");
    }

    #[test]
    fn irregular_errors_are_flagged() {
        let vals = [0.1, 0.3, 0.05];
        let r = richardson_quadrature_check(&[11, 21, 41], Some(0.0), |n| Ok(vals[[11, 21, 41].iter().position(|&s| s == n).unwrap()])).unwrap();
        assert_eq!(r.label, "irregular");
        assert!(richardson_quadrature_check(&[11, 21, 31], None, |_| Ok(0.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn det_scan_matches_perron_on_metzler(seed in 0u64..10_000, n in 1usize..=8) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(-2.0..1.0) } else { rng.gen_range(0.01..1.0) });
            let r = perron_oracle_report("metzler", &a, 1e-8).unwrap();
            prop_assert!(r.pass, "{:?}", r);
        }
    }
}
