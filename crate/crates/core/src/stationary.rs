//! Stationary states of the regularized competition model, their a priori
//! bounds, the vanishing-viscosity sweep and the concentration detector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::linalg::max_abs;
use crate::operators::{FitnessProfile, KernelMatrix, Model};
use crate::spectral::{eigen_nonlocal, eigen_regularized, minimal_speed, EigenOptions, MeasureProfile};

/// Newton controls.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub eigen: EigenOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 60,
            eigen: EigenOptions::default(),
        }
    }
}

/// Stationary solve outcome.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub profile: MeasureProfile,
    pub lambda_eps: f64,
    pub residual: f64,
    pub iterations: usize,
    /// True when λ₁^ε > 0 and the zero state was returned.
    pub extinct: bool,
    /// β values visited by the continuation fallback, empty if plain Newton sufficed.
    pub homotopy_path: Vec<f64>,
}

/// Problem data for −εΔp − μ(M⋆p − p) = p(a − K⋆p − βp).
pub struct StationaryProblem<'a> {
    pub grid: &'a PhenotypeGrid,
    pub m: &'a KernelMatrix,
    pub k: &'a KernelMatrix,
    pub a: &'a FitnessProfile,
    pub mu: f64,
    pub eps: f64,
}

impl<'a> StationaryProblem<'a> {
    pub fn from_model(model: &'a Model, mu: f64, eps: f64) -> Self {
        Self {
            grid: &model.grid,
            m: &model.m,
            k: &model.k,
            a: &model.a,
            mu,
            eps,
        }
    }

    /// F(p) = εΔp + μ(M⋆p − p) + p(a − K⋆p − βp).
    pub fn residual(&self, p: &[f64], beta: f64) -> Result<Vec<f64>> {
        let lap = self.grid.apply_laplacian(p);
        let mp = self.m.apply(p)?;
        let kp = self.k.apply(p)?;
        Ok((0..p.len())
            .map(|i| {
                self.eps * lap[i] + self.mu * (mp[i] - p[i]) + p[i] * (self.a.values[i] - kp[i] - beta * p[i])
            })
            .collect())
    }

    fn jacobian(&self, lin: &DMatrix<f64>, kw: &DMatrix<f64>, p: &[f64], beta: f64) -> Result<DMatrix<f64>> {
        let kp = self.k.apply(p)?;
        let n = p.len();
        let mut j = lin.clone();
        for i in 0..n {
            j[(i, i)] -= kp[i] + 2.0 * beta * p[i];
            for c in 0..n {
                j[(i, c)] -= p[i] * kw[(i, c)];
            }
        }
        Ok(j)
    }

    fn newton(&self, p0: &[f64], beta: f64, opts: NewtonOptions) -> Result<(Vec<f64>, f64, usize)> {
        let lin = crate::spectral::regularized_operator(self.grid, self.m, &self.a.values, self.mu, self.eps)?;
        let kw = self.k.weighted_dense();
        let mut p = p0.to_vec();
        let mut f = self.residual(&p, beta)?;
        let merit = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>();
        let mut r = max_abs(&f);
        for it in 0..opts.max_iter {
            if r <= opts.tol {
                return Ok((p, r, it));
            }
            let j = self.jacobian(&lin, &kw, &p, beta)?;
            let d = j
                .lu()
                .solve(&DVector::from_iterator(f.len(), f.iter().map(|v| -v)))
                .ok_or(Error::SingularSystem("stationary Newton"))?;
            let m0 = merit(&f);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = p.iter().zip(d.iter()).map(|(pi, di)| pi + t * di).collect();
                if trial.iter().all(|&v| v > 0.0) {
                    let ft = self.residual(&trial, beta)?;
                    if merit(&ft) <= (1.0 - 1e-4 * t) * m0 {
                        p = trial;
                        f = ft;
                        r = max_abs(&f);
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-10 {
                    return Err(Error::NoConvergence {
                        solver: "stationary Newton (line search)",
                        iterations: it,
                        residual: r,
                    });
                }
            }
        }
        if r <= opts.tol {
            return Ok((p, r, opts.max_iter));
        }
        Err(Error::NoConvergence {
            solver: "stationary Newton",
            iterations: opts.max_iter,
            residual: r,
        })
    }
}

/// Largest self-competition level needed by the comparison arguments: k∞ sup a/(μ m₀).
pub fn beta0(m: &KernelMatrix, k: &KernelMatrix, a: &FitnessProfile, mu: f64) -> f64 {
    k.upper_bound * a.sup_a / (mu * m.lower_bound)
}

/// Solves the stationary problem by damped Newton from the scaled eigenvector,
/// falling back to continuation from large β.
pub fn solve_stationary(prob: &StationaryProblem<'_>, beta: f64, opts: NewtonOptions) -> Result<StationaryResult> {
    if !(prob.eps > 0.0) {
        return Err(Error::Precondition("stationary solve needs eps > 0".into()));
    }
    let eig = eigen_regularized(prob.grid, prob.m, prob.a, prob.mu, prob.eps, opts.eigen)?;
    if eig.lambda.abs() < 1e-8 {
        return Err(Error::Precondition(format!(
            "λ₁^ε = {:e} is within 1e-8 of 0; the borderline case is not decided",
            eig.lambda
        )));
    }
    let n = prob.grid.len();
    if eig.lambda > 0.0 {
        return Ok(StationaryResult {
            profile: MeasureProfile::zero(n),
            lambda_eps: eig.lambda,
            residual: 0.0,
            iterations: 0,
            extinct: true,
            homotopy_path: Vec::new(),
        });
    }
    let theta = (-eig.lambda).max(0.1);
    let p0: Vec<f64> = eig.phi.iter().map(|v| theta * v).collect();
    let finish = |p: Vec<f64>, residual: f64, iterations: usize, path: Vec<f64>| -> Result<StationaryResult> {
        if p.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NoConvergence {
                solver: "stationary Newton (positivity lost)",
                iterations,
                residual,
            });
        }
        Ok(StationaryResult {
            profile: MeasureProfile::density(p),
            lambda_eps: eig.lambda,
            residual,
            iterations,
            extinct: false,
            homotopy_path: path,
        })
    };
    let first = prob.newton(&p0, beta, opts);
    let direct_err = match first {
        Ok((p, r, it)) => return finish(p, r, it, Vec::new()),
        Err(e) => e,
    };

    // Continuation in β from a strongly self-limited state.
    let b0 = beta0(prob.m, prob.k, prob.a, prob.mu);
    let b_hi = b0.max(4.0 * beta).max(1.0_f64);
    let (mut p, _, mut total) = prob.newton(&p0, b_hi, opts).map_err(|_| direct_err)?;
    let mut path = vec![b_hi];
    let mut s: f64 = 1.0;
    let mut ds: f64 = 0.25;
    let beta_at = |s: f64| beta + (b_hi - beta) * s;
    while s > 0.0 {
        let s_next = (s - ds).max(0.0);
        match prob.newton(&p, beta_at(s_next), opts) {
            Ok((q, r, it)) => {
                p = q;
                s = s_next;
                total += it;
                path.push(beta_at(s));
                if s == 0.0 {
                    return finish(p, r, total, path);
                }
                ds = (ds * 2.0).min(0.5);
            }
            Err(e) => {
                ds *= 0.5;
                if ds < 1e-4 {
                    return Err(e);
                }
            }
        }
    }
    unreachable!("continuation loop exits through finish")
}

/// Verdict on the mass estimates −λ₁^ε/k∞ ≤ Σwp ≤ sup a/k₀.
#[derive(Debug, Clone, Serialize)]
pub struct MassBounds {
    pub mass: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_slack: f64,
    pub upper_slack: f64,
    pub valid: bool,
    pub note: Option<String>,
}

pub fn mass_bounds(grid: &PhenotypeGrid, p: &MeasureProfile, lambda_eps: f64, k0: f64, kinf: f64, sup_a: f64, tol: f64) -> MassBounds {
    let mass = p.total_mass(grid);
    let lower = -lambda_eps / kinf;
    let upper = sup_a / k0;
    let (lower_slack, upper_slack) = (mass - lower, upper - mass);
    if mass == 0.0 {
        return MassBounds {
            mass,
            lower,
            upper,
            lower_slack,
            upper_slack,
            valid: false,
            note: Some("nontrivial solve required".into()),
        };
    }
    MassBounds {
        mass,
        lower,
        upper,
        lower_slack,
        upper_slack,
        valid: lower_slack >= -tol && upper_slack >= -tol,
        note: None,
    }
}

/// sup p ≤ sup a/β + tol for β > 0.
pub fn sup_bound_holds(p: &MeasureProfile, sup_a: f64, beta: f64, tol: f64) -> bool {
    beta <= 0.0 || p.sup_density() <= sup_a / beta + tol
}

/// Constants entering the lower bound on stationary states and the wave construction.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedConstants {
    pub beta0: f64,
    pub delta: f64,
    pub delta_cap: f64,
    pub lambda_delta0: f64,
    pub eta: f64,
    /// Whether λ^{δ,0} ≤ 3λ₁/4, the closeness requirement on δ.
    pub delta_close_enough: bool,
    pub lambda1: f64,
    pub rho_beta: f64,
    pub lambda_eps: Option<f64>,
    pub l0: Option<f64>,
    pub tau0: Option<f64>,
    pub c_star_eps: Option<f64>,
}

/// Admissibility cap ½ min(μ, sup a − inf a, sup a − sup_∂Ω a⁺ − μ).
pub fn delta_cap(grid: &PhenotypeGrid, a: &FitnessProfile, mu: f64) -> f64 {
    let sup_boundary = (0..grid.len())
        .filter(|&i| grid.is_boundary(i))
        .map(|i| a.values[i].max(0.0))
        .fold(0.0, f64::max);
    0.5 * mu.min(a.sup_a - a.inf_a).min(a.sup_a - sup_boundary - mu)
}

/// ρ_β = min(m₀η/(2k∞m∞), (−λ₁)η/(4βμm∞ + 2ηk∞)) · μm₀/(sup a − inf a + μ).
#[allow(clippy::too_many_arguments)]
pub fn rho_beta_constant(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    k: &KernelMatrix,
    a: &FitnessProfile,
    mu: f64,
    beta: f64,
    delta: Option<f64>,
    opts: EigenOptions,
) -> Result<DerivedConstants> {
    let cap = delta_cap(grid, a, mu);
    if !(cap > 0.0) {
        return Err(Error::Precondition(format!(
            "no admissible δ: ½ min(μ, sup a − inf a, sup a − sup∂Ω a⁺ − μ) = {cap}"
        )));
    }
    let delta = delta.unwrap_or(0.8 * cap);
    if !(delta > 0.0 && delta < cap) {
        let which = if delta <= 0.0 {
            "δ must be positive".to_string()
        } else if 2.0 * delta >= mu {
            "δ < μ/2 violated".to_string()
        } else if 2.0 * delta >= a.sup_a - a.inf_a {
            "δ < (sup a − inf a)/2 violated".to_string()
        } else {
            "δ < (sup a − sup∂Ω a⁺ − μ)/2 violated".to_string()
        };
        return Err(Error::Precondition(format!("inadmissible δ = {delta}: {which}")));
    }
    let l1 = eigen_nonlocal(grid, m, a, mu, opts)?.lambda;
    if !(l1 < 0.0) {
        return Err(Error::NoPositiveSpeed(l1));
    }
    let ad = a.truncated(delta);
    let ld0 = eigen_nonlocal(grid, m, &ad, mu, opts)?.lambda;
    let eta = -ld0 - a.sup_a + delta + mu;
    let (m0, minf, kinf) = (m.lower_bound, m.upper_bound, k.upper_bound);
    let first = m0 * eta / (2.0 * kinf * minf);
    let second = -l1 * eta / (4.0 * beta * mu * minf + 2.0 * eta * kinf);
    let rho = first.min(second) * mu * m0 / (a.sup_a - a.inf_a + mu);
    Ok(DerivedConstants {
        beta0: beta0(m, k, a, mu),
        delta,
        delta_cap: cap,
        lambda_delta0: ld0,
        eta,
        delta_close_enough: ld0 <= 0.75 * l1,
        lambda1: l1,
        rho_beta: rho,
        lambda_eps: None,
        l0: None,
        tau0: None,
        c_star_eps: None,
    })
}

impl DerivedConstants {
    /// Adds the ε-dependent box constants l₀, τ₀ and c*_ε.
    pub fn with_lambda_eps(mut self, lambda_eps: f64) -> Result<Self> {
        let c = minimal_speed(lambda_eps)?;
        self.lambda_eps = Some(lambda_eps);
        self.l0 = Some(std::f64::consts::PI / (-lambda_eps).sqrt());
        self.tau0 = Some(-lambda_eps / 2.0);
        self.c_star_eps = Some(c);
        Ok(self)
    }
}

/// One member of a viscosity sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub eps: f64,
    pub lambda_eps: Option<f64>,
    pub mass: Option<f64>,
    pub sup: Option<f64>,
    pub residual: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub profile: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub mu: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub entries: Vec<SweepEntry>,
    /// −λ₁/k∞, the lower bound on the limiting mass.
    pub mass_lower_bound: f64,
    pub limit_mass_ok: Option<bool>,
    #[serde(skip)]
    pub limit: Option<MeasureProfile>,
}

/// Solves for every ε in `eps_list` (decreasing) and takes the finest solve as
/// the weak-limit estimate.
pub fn viscosity_sweep(model: &Model, mu: f64, beta: f64, eps_list: &[f64], opts: NewtonOptions) -> Result<SweepReport> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("eps_list must be strictly decreasing".into()));
    }
    let lambda1 = eigen_nonlocal(&model.grid, &model.m, &model.a, mu, opts.eigen)?.lambda;
    if !(lambda1 < 0.0) {
        return Err(Error::NoPositiveSpeed(lambda1));
    }
    let entries: Vec<SweepEntry> = eps_list
        .par_iter()
        .map(|&eps| {
            let prob = StationaryProblem::from_model(model, mu, eps);
            match solve_stationary(&prob, beta, opts) {
                Ok(r) => SweepEntry {
                    eps,
                    lambda_eps: Some(r.lambda_eps),
                    mass: Some(r.profile.total_mass(&model.grid)),
                    sup: Some(r.profile.sup_density()),
                    residual: Some(r.residual),
                    error: None,
                    profile: Some(r.profile.ac),
                },
                Err(e) => SweepEntry {
                    eps,
                    lambda_eps: None,
                    mass: None,
                    sup: None,
                    residual: None,
                    error: Some(e.to_string()),
                    profile: None,
                },
            }
        })
        .collect();
    let limit = entries.last().and_then(|e| e.profile.clone()).map(MeasureProfile::density);
    let mass_lower_bound = -lambda1 / model.k.upper_bound;
    let limit_mass_ok = entries
        .last()
        .and_then(|e| e.mass)
        .map(|m| m >= mass_lower_bound - 1e-2 * mass_lower_bound);
    Ok(SweepReport {
        mu,
        beta,
        lambda1,
        entries,
        mass_lower_bound,
        limit_mass_ok,
        limit,
    })
}

/// Nodes within the `cells`-wide window centered on `center` (per axis).
pub fn window_nodes(grid: &PhenotypeGrid, center: usize, cells: usize) -> Vec<usize> {
    let r = cells / 2;
    (0..grid.len())
        .filter(|&i| (0..grid.dim()).all(|ax| grid.axis_index(i, ax).abs_diff(grid.axis_index(center, ax)) <= r))
        .collect()
}

/// Mass fraction of a density inside a node window.
pub fn window_fraction(grid: &PhenotypeGrid, p: &[f64], window: &[usize]) -> f64 {
    let total = grid.integrate(p);
    let inside: f64 = window.iter().map(|&i| grid.weights()[i] * p[i]).sum();
    inside / total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcentrationLabel {
    Concentrating,
    NotConcentrating,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationVerdict {
    pub label: ConcentrationLabel,
    pub fractions: Vec<f64>,
    pub sups: Vec<f64>,
    pub threshold: f64,
    /// sup(a − K⋆p) attained on Ω₀ for the finest solve.
    pub b_max_on_omega0: Option<bool>,
    /// sup b − b ≥ sup a − a at every node, up to 1e−10.
    pub b_gap_dominates: Option<bool>,
}

/// Labels a sweep concentrating when the window fraction around Ω₀ never
/// decreases along the sweep and ends above `threshold`.
pub fn concentration_detector(
    model: &Model,
    report: &SweepReport,
    neighborhood_cells: usize,
    threshold: f64,
) -> ConcentrationVerdict {
    let anchor = model.a.omega0.first().copied().unwrap_or(model.grid.anchor());
    let dom = (0..model.k.len()).all(|j| (0..model.k.len()).all(|i| model.k.value(i, j) >= model.k.value(anchor, j) - 1e-14));
    let window = window_nodes(&model.grid, anchor, neighborhood_cells);
    let profiles: Vec<&Vec<f64>> = report.entries.iter().filter_map(|e| e.profile.as_ref()).collect();
    let fractions: Vec<f64> = profiles.iter().map(|p| window_fraction(&model.grid, p, &window)).collect();
    let sups: Vec<f64> = profiles.iter().map(|p| p.iter().copied().fold(0.0, f64::max)).collect();
    if !dom || profiles.len() != report.entries.len() || profiles.is_empty() {
        return ConcentrationVerdict {
            label: ConcentrationLabel::NotApplicable,
            fractions,
            sups,
            threshold,
            b_max_on_omega0: None,
            b_gap_dominates: None,
        };
    }
    let finest = profiles[profiles.len() - 1];
    let (mut b_max_on_omega0, mut b_gap_dominates) = (None, None);
    if let Ok(kp) = model.k.apply(finest) {
        let b: Vec<f64> = model.a.values.iter().zip(&kp).map(|(a, k)| a - k).collect();
        let sup_b = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        b_max_on_omega0 = Some(model.a.omega0.iter().any(|&i| b[i] >= sup_b - 1e-12));
        b_gap_dominates = Some((0..b.len()).all(|i| sup_b - b[i] >= model.a.sup_a - model.a.values[i] - 1e-10));
    }
    let rising = fractions.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let label = if rising && *fractions.last().unwrap() >= threshold {
        ConcentrationLabel::Concentrating
    } else {
        ConcentrationLabel::NotConcentrating
    };
    ConcentrationVerdict {
        label,
        fractions,
        sups,
        threshold,
        b_max_on_omega0,
        b_gap_dominates,
    }
}
