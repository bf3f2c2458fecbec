//! Time integration of u_t = u_xx + εΔ_y u + μ(M⋆u − u) + u(a − K⋆u − βu) on a
//! truncated line, front tracking and spreading-speed estimation.
//!
//! One step is IMEX Euler: the nonlocal terms and the reaction are explicit,
//! u_xx is implicit along each y-row, and εΔ_y is implicit along each x-column.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::linalg::{least_squares, solve_tridiagonal};
use crate::operators::Model;
use crate::spectral::{eigen_nonlocal, eigen_regularized, minimal_speed, EigenOptions, SpectralResult};

/// Run controls.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationParams {
    pub mu: f64,
    pub eps: f64,
    pub beta: f64,
    /// Half-width X of the x-domain [−X, X].
    pub x_half: f64,
    pub hx: f64,
    /// None selects 0.4× the stability cap.
    pub dt: Option<f64>,
    pub t_final: f64,
    /// Tracking level; None selects 0.1·sup a/k₀.
    pub theta: Option<f64>,
    /// Front samples per unit time.
    pub samples_per_time: f64,
    /// Drop the competition (K = 0, β = 0).
    pub linearized: bool,
    /// Keep full fields every this many samples.
    pub snapshot_stride: Option<usize>,
}

impl SimulationParams {
    /// X = c*·T + 10 decay lengths, 20 nodes per decay length 2/c*.
    pub fn for_run(lambda: f64, mu: f64, eps: f64, t_final: f64) -> Result<Self> {
        let c = minimal_speed(lambda)?;
        let decay = 2.0 / c;
        Ok(Self {
            mu,
            eps,
            beta: 0.0,
            x_half: c * t_final + 10.0 * decay,
            hx: decay / 20.0,
            dt: None,
            t_final,
            theta: None,
            samples_per_time: 4.0,
            linearized: false,
            snapshot_stride: None,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationState {
    pub t: f64,
    pub x: Vec<f64>,
    pub ny: usize,
    /// `u[j * ny + i] = u(x_j, y_i)`.
    pub u: Vec<f64>,
    pub front: Vec<(f64, f64)>,
    pub dt: f64,
    pub hx: f64,
    pub steps: usize,
    /// Mass removed by clipping negative values, summed over the run.
    pub clipped_mass: f64,
    pub alarms: Vec<String>,
}

impl SimulationState {
    pub fn new(x_half: f64, hx: f64, ny: usize, u0: Vec<f64>, dt: f64) -> Result<Self> {
        let nx = (2.0 * x_half / hx).round() as usize + 1;
        if nx < 3 {
            return Err(Error::Precondition("x-grid needs at least 3 nodes".into()));
        }
        if u0.len() != nx * ny {
            return Err(Error::ShapeMismatch {
                expected: nx * ny,
                got: u0.len(),
            });
        }
        if u0.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Precondition("initial data must be nonnegative".into()));
        }
        let h = 2.0 * x_half / (nx - 1) as f64;
        Ok(Self {
            t: 0.0,
            x: (0..nx).map(|j| -x_half + j as f64 * h).collect(),
            ny,
            u: u0,
            front: Vec::new(),
            dt,
            hx: h,
            steps: 0,
            clipped_mass: 0.0,
            alarms: Vec::new(),
        })
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        &self.u[j * self.ny..(j + 1) * self.ny]
    }

    pub fn slice_masses(&self, grid: &PhenotypeGrid) -> Vec<f64> {
        (0..self.nx()).map(|j| grid.integrate(self.slice(j))).collect()
    }

    pub fn total_mass(&self, grid: &PhenotypeGrid) -> f64 {
        let m = self.slice_masses(grid);
        let h = self.hx;
        m.iter().enumerate().map(|(j, v)| if j == 0 || j == m.len() - 1 { 0.5 * h * v } else { h * v }).sum()
    }
}

/// Precomputed operators for repeated steps.
pub struct Stepper<'a> {
    model: &'a Model,
    params: SimulationParams,
    mw: DMatrix<f64>,
    kw: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, params: SimulationParams) -> Result<Self> {
        if model.grid.dim() != 1 {
            return Err(Error::Unsupported("simulation is implemented for one-dimensional Ω".into()));
        }
        if params.eps < 0.0 || params.beta < 0.0 || !(params.mu > 0.0) {
            return Err(Error::Precondition("need μ > 0, ε ≥ 0, β ≥ 0".into()));
        }
        Ok(Self {
            model,
            mw: model.m.weighted_dense(),
            kw: model.k.weighted_dense(),
            params,
        })
    }

    pub fn params(&self) -> &SimulationParams {
        &self.params
    }

    fn k_inf(&self) -> f64 {
        if self.params.linearized {
            0.0
        } else {
            self.model.k.upper_bound
        }
    }

    /// Largest dt with dt·(sup a + μ + k∞·mass) ≤ 0.5.
    pub fn dt_cap(&self, max_slice_mass: f64) -> f64 {
        0.5 / (self.model.a.sup_a.max(0.0) + self.params.mu + self.k_inf() * max_slice_mass)
    }

    /// One IMEX step.
    pub fn step(&self, state: &mut SimulationState) -> Result<()> {
        let grid = &self.model.grid;
        let ny = state.ny;
        let nx = state.nx();
        let masses = state.slice_masses(grid);
        let max_mass = masses.iter().copied().fold(0.0, f64::max);
        let cap = self.dt_cap(max_mass);
        if state.dt > cap {
            return Err(Error::TimeStepTooLarge(cap));
        }
        let dt = state.dt;
        let (mu, beta) = (self.params.mu, if self.params.linearized { 0.0 } else { self.params.beta });
        let a = &self.model.a.values;
        let linear = self.params.linearized;
        // Explicit part, column by column.
        let mut next = state.u.clone();
        next.par_chunks_mut(ny).enumerate().for_each(|(j, col)| {
            let uj = &state.u[j * ny..(j + 1) * ny];
            let v = nalgebra::DVector::from_column_slice(uj);
            let mu_part = &self.mw * &v;
            let k_part = if linear { nalgebra::DVector::zeros(ny) } else { &self.kw * &v };
            for i in 0..ny {
                let r = mu * (mu_part[i] - uj[i]) + uj[i] * (a[i] - k_part[i] - beta * uj[i]);
                col[i] = uj[i] + dt * r;
            }
        });
        // Implicit u_xx along each y-row with mirrored-ghost Neumann ends.
        let s = dt / (state.hx * state.hx);
        let rows: Vec<Vec<f64>> = (0..ny)
            .into_par_iter()
            .map(|i| {
                let mut rhs: Vec<f64> = (0..nx).map(|j| next[j * ny + i]).collect();
                let mut lower = vec![-s; nx];
                let diag = vec![1.0 + 2.0 * s; nx];
                let mut upper = vec![-s; nx];
                upper[0] = -2.0 * s;
                lower[nx - 1] = -2.0 * s;
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs).map(|_| rhs)
            })
            .collect::<Result<_>>()?;
        for (i, row) in rows.iter().enumerate() {
            for j in 0..nx {
                next[j * ny + i] = row[j];
            }
        }
        // Implicit εΔ_y along each x-column.
        if self.params.eps > 0.0 {
            let hy = grid.spacing()[0];
            let sy = self.params.eps * dt / (hy * hy);
            let mut lower = vec![-sy; ny];
            let diag = vec![1.0 + 2.0 * sy; ny];
            let mut upper = vec![-sy; ny];
            upper[0] = -2.0 * sy;
            lower[ny - 1] = -2.0 * sy;
            next.par_chunks_mut(ny)
                .try_for_each(|col| solve_tridiagonal(&lower, &diag, &upper, col))?;
        }
        // Clip negatives.
        let w = grid.weights();
        let mut clipped = 0.0;
        for j in 0..nx {
            for i in 0..ny {
                let v = &mut next[j * ny + i];
                if *v < 0.0 {
                    clipped += -*v * w[i] * state.hx;
                    *v = 0.0;
                }
            }
        }
        state.clipped_mass += clipped;
        state.u = next;
        state.t += dt;
        state.steps += 1;
        if !linear {
            let bound = 1.5 * self.model.a.sup_a / self.model.k.lower_bound;
            let new_max = state.slice_masses(grid).into_iter().fold(0.0, f64::max);
            if new_max > bound && state.t > 1.0 {
                state.alarms.push(format!("t = {:.4}: slice mass {new_max:.6} above 1.5·sup a/k₀", state.t));
            }
        }
        Ok(())
    }
}

/// Largest x with slice mass ≥ θ, linearly interpolated.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrontPosition {
    pub x: f64,
    /// False when the level is never attained; `x` is then the left edge.
    pub attained: bool,
}

pub fn front_position(x: &[f64], masses: &[f64], theta: f64) -> FrontPosition {
    match (0..masses.len()).rev().find(|&j| masses[j] >= theta) {
        None => FrontPosition { x: x[0], attained: false },
        Some(j) if j + 1 == masses.len() => FrontPosition { x: x[j], attained: true },
        Some(j) => {
            let (m0, m1) = (masses[j], masses[j + 1]);
            let t = if m0 > m1 { (m0 - theta) / (m0 - m1) } else { 0.0 };
            FrontPosition {
                x: x[j] + t * (x[j + 1] - x[j]),
                attained: true,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeedEstimate {
    pub c_obs: f64,
    pub stderr: f64,
    pub samples: usize,
    pub edge_contaminated: bool,
    pub reliable: bool,
}

/// Least-squares slope of x_f(t) over the last `window_fraction` of the
/// history. `edge` = (X, decay length) flags fronts within 5 decay lengths of X.
pub fn estimate_speed(history: &[(f64, f64)], window_fraction: f64, edge: Option<(f64, f64)>) -> Result<SpeedEstimate> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Precondition("window fraction must lie in (0, 1]".into()));
    }
    let Some(&(t_end, _)) = history.last() else {
        return Err(Error::Precondition("empty front history".into()));
    };
    let t_start = history[0].0;
    let t_cut = t_end - window_fraction * (t_end - t_start);
    let pts: Vec<(f64, f64)> = history.iter().copied().filter(|(t, _)| *t >= t_cut - 1e-12).collect();
    if pts.len() < 20 {
        return Err(Error::Precondition(format!("{} samples in the fit window, need ≥ 20", pts.len())));
    }
    let design = DMatrix::from_fn(pts.len(), 2, |r, c| if c == 0 { 1.0 } else { pts[r].0 });
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (beta, rss) = least_squares(&design, &y)?;
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    let edge_contaminated = edge.is_some_and(|(x_max, decay)| pts.iter().any(|p| p.1 > x_max - 5.0 * decay));
    Ok(SpeedEstimate {
        c_obs: beta[1],
        stderr,
        samples: pts.len(),
        edge_contaminated,
        reliable: !edge_contaminated,
    })
}

/// u₀ = A·φ(y)·exp(−x²/2) for x < 0, zero for x ≥ 0.
pub fn half_gaussian_initial(x: &[f64], phi: &[f64], amplitude: f64) -> Vec<f64> {
    let mut u = Vec::with_capacity(x.len() * phi.len());
    for &xj in x {
        let g = if xj < 0.0 { (-0.5 * xj * xj).exp() } else { 0.0 };
        u.extend(phi.iter().map(|p| amplitude * g * p));
    }
    u
}

pub fn x_nodes(x_half: f64, hx: f64) -> Vec<f64> {
    let nx = (2.0 * x_half / hx).round() as usize + 1;
    let h = 2.0 * x_half / (nx - 1) as f64;
    (0..nx).map(|j| -x_half + j as f64 * h).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationResult {
    pub lambda_eps: f64,
    pub c_star: f64,
    pub theta: f64,
    pub estimate: Option<SpeedEstimate>,
    pub dt_halved: bool,
    #[serde(skip)]
    pub state: SimulationState,
    #[serde(skip)]
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Principal eigenpair matching the simulated operator (regularized when ε > 0).
pub fn matching_eigen(model: &Model, mu: f64, eps: f64) -> Result<SpectralResult> {
    if eps > 0.0 {
        eigen_regularized(&model.grid, &model.m, &model.a, mu, eps, EigenOptions::default())
    } else {
        eigen_nonlocal(&model.grid, &model.m, &model.a, mu, EigenOptions::default())
    }
}

/// Runs to `t_final`, tracking the front; `u0` defaults to the half-Gaussian
/// times the sup-one eigenvector with amplitude 0.1·sup a/k₀.
pub fn simulate(model: &Model, params: &SimulationParams, u0: Option<Vec<f64>>) -> Result<SimulationResult> {
    let eig = matching_eigen(model, params.mu, params.eps)?;
    let c_star = minimal_speed(eig.lambda).unwrap_or(0.0);
    let level = model.a.sup_a / model.k.lower_bound;
    let theta = params.theta.unwrap_or(0.1 * level);
    let x = x_nodes(params.x_half, params.hx);
    let u0 = match u0 {
        Some(u) => u,
        None => {
            let sup = eig.phi.iter().copied().fold(0.0, f64::max);
            let phi: Vec<f64> = eig.phi.iter().map(|v| v / sup).collect();
            half_gaussian_initial(&x, &phi, 0.1 * level)
        }
    };
    let stepper = Stepper::new(model, params.clone())?;
    let default_dt = params.dt.is_none();
    let dt = params.dt.unwrap_or_else(|| {
        let m0 = if params.linearized { 0.0 } else { 1.5 * level };
        0.4 * stepper.dt_cap(m0)
    });
    let mut state = SimulationState::new(params.x_half, params.hx, model.grid.len(), u0, dt)?;
    let sample_dt = 1.0 / params.samples_per_time;
    let mut next_sample = 0.0;
    let mut snapshots = Vec::new();
    let mut samples = 0usize;
    let mut dt_halved = false;
    loop {
        if state.t >= next_sample - 1e-12 {
            let masses = state.slice_masses(&model.grid);
            let fp = front_position(&state.x, &masses, theta);
            state.front.push((state.t, fp.x));
            if let Some(stride) = params.snapshot_stride {
                if samples.is_multiple_of(stride.max(1)) {
                    snapshots.push((state.t, state.u.clone()));
                }
            }
            samples += 1;
            next_sample += sample_dt;
        }
        if state.t >= params.t_final - 1e-12 {
            break;
        }
        let remaining = params.t_final - state.t;
        let full = state.dt;
        if remaining < full {
            state.dt = remaining;
        }
        let alarms_before = state.alarms.len();
        stepper.step(&mut state)?;
        state.dt = full;
        if default_dt && !dt_halved && state.alarms.len() > alarms_before {
            state.dt *= 0.5;
            dt_halved = true;
        }
    }
    let decay = if c_star > 0.0 { 2.0 / c_star } else { f64::INFINITY };
    let estimate = estimate_speed(&state.front, 0.5, Some((params.x_half, decay))).ok();
    Ok(SimulationResult {
        lambda_eps: eig.lambda,
        c_star,
        theta,
        estimate,
        dt_halved,
        state,
        snapshots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderVerdict {
    pub status: OrderStatus,
    /// min over checked times and nodes of u_high − u_low.
    pub min_gap: f64,
    pub region_bound: f64,
    pub checked_until: f64,
    pub notice: Option<String>,
}

/// Simulates both data with the same steps and checks u_low ≤ u_high + 1e−8
/// while both stay below μm₀/k∞.
pub fn order_preservation_test(model: &Model, params: &SimulationParams, beta0: f64, u_low: Vec<f64>, u_high: Vec<f64>) -> Result<OrderVerdict> {
    let bound = params.mu * model.m.lower_bound / model.k.upper_bound;
    let skipped = |msg: String| OrderVerdict {
        status: OrderStatus::Skipped,
        min_gap: f64::NAN,
        region_bound: bound,
        checked_until: 0.0,
        notice: Some(msg),
    };
    if params.beta < beta0 {
        return Ok(skipped(format!("β = {} below β₀ = {beta0}: no comparison principle", params.beta)));
    }
    if u_low.len() != u_high.len() {
        return Err(Error::ShapeMismatch {
            expected: u_high.len(),
            got: u_low.len(),
        });
    }
    if u_low.iter().chain(&u_high).any(|&v| v > bound) {
        return Ok(skipped(format!("initial data leave the region u ≤ μm₀/k∞ = {bound}")));
    }
    if u_low.iter().zip(&u_high).any(|(l, h)| l > h) {
        return Err(Error::Precondition("initial data are not ordered".into()));
    }
    let stepper = Stepper::new(model, params.clone())?;
    let dt = params.dt.unwrap_or_else(|| 0.4 * stepper.dt_cap(1.5 * model.a.sup_a / model.k.lower_bound));
    let ny = model.grid.len();
    let mut lo = SimulationState::new(params.x_half, params.hx, ny, u_low, dt)?;
    let mut hi = SimulationState::new(params.x_half, params.hx, ny, u_high, dt)?;
    let mut min_gap = f64::INFINITY;
    while lo.t < params.t_final - 1e-12 {
        let gap = lo.u.iter().zip(&hi.u).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min);
        min_gap = min_gap.min(gap);
        let top = hi.u.iter().chain(&lo.u).copied().fold(0.0, f64::max);
        if top > bound {
            return Ok(OrderVerdict {
                status: OrderStatus::Skipped,
                min_gap,
                region_bound: bound,
                checked_until: lo.t,
                notice: Some(format!("region u ≤ {bound} exited at t = {}", lo.t)),
            });
        }
        if gap < -1e-8 {
            return Ok(OrderVerdict {
                status: OrderStatus::Fail,
                min_gap,
                region_bound: bound,
                checked_until: lo.t,
                notice: None,
            });
        }
        let step = dt.min(params.t_final - lo.t);
        lo.dt = step;
        hi.dt = step;
        stepper.step(&mut lo)?;
        stepper.step(&mut hi)?;
    }
    let gap = lo.u.iter().zip(&hi.u).map(|(l, h)| h - l).fold(f64::INFINITY, f64::min);
    min_gap = min_gap.min(gap);
    Ok(OrderVerdict {
        status: if min_gap >= -1e-8 { OrderStatus::Pass } else { OrderStatus::Fail },
        min_gap,
        region_bound: bound,
        checked_until: lo.t,
        notice: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{ModelConfig, PresetSpec};
    use crate::stationary::{beta0, solve_stationary, NewtonOptions, StationaryProblem};
    use rand::{Rng, SeedableRng};

    fn smooth(n: usize, mu: f64) -> Model {
        let mut cfg = ModelConfig::standard(n, mu);
        cfg.a = PresetSpec::new("one_minus_quadratic");
        cfg.assemble().unwrap()
    }

    fn short_params(mu: f64, eps: f64) -> SimulationParams {
        SimulationParams {
            mu,
            eps,
            beta: 0.0,
            x_half: 5.0,
            hx: 0.1,
            dt: Some(0.01),
            t_final: 1.0,
            theta: None,
            samples_per_time: 10.0,
            linearized: false,
            snapshot_stride: None,
        }
    }

    #[test]
    fn zero_stays_zero() {
        let md = smooth(11, 0.5);
        let st = Stepper::new(&md, short_params(0.5, 1e-2)).unwrap();
        let mut s = SimulationState::new(5.0, 0.1, 11, vec![0.0; 101 * 11], 0.01).unwrap();
        for _ in 0..10 {
            st.step(&mut s).unwrap();
        }
        assert!(s.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_large_dt() {
        let md = smooth(11, 0.5);
        let st = Stepper::new(&md, short_params(0.5, 1e-2)).unwrap();
        let mut s = SimulationState::new(5.0, 0.1, 11, vec![0.1; 101 * 11], 1.0).unwrap();
        assert!(matches!(st.step(&mut s), Err(Error::TimeStepTooLarge(_))));
    }

    #[test]
    fn linear_growth_matches_eigenvalue() {
        let (mu, eps) = (0.5, 1e-2);
        let md = smooth(21, mu);
        let eig = matching_eigen(&md, mu, eps).unwrap();
        let mut p = short_params(mu, eps);
        p.linearized = true;
        p.dt = Some(1e-3);
        let x = x_nodes(p.x_half, p.hx);
        let u0: Vec<f64> = x.iter().flat_map(|_| eig.phi.iter().copied()).collect();
        let st = Stepper::new(&md, p.clone()).unwrap();
        let mut s = SimulationState::new(p.x_half, p.hx, 21, u0, 1e-3).unwrap();
        let m0 = s.total_mass(&md.grid);
        for _ in 0..1000 {
            st.step(&mut s).unwrap();
        }
        let rate = (s.total_mass(&md.grid) / m0).ln() / s.t;
        assert!((rate + eig.lambda).abs() <= 0.02 * eig.lambda.abs(), "{rate} vs {}", -eig.lambda);
    }

    #[test]
    fn stationary_profile_does_not_drift() {
        let (mu, eps) = (0.5, 1e-2);
        let mut cfg = ModelConfig::standard(21, mu);
        cfg.a = PresetSpec::new("one_minus_quadratic");
        cfg.k = PresetSpec::new("y_independent").with("slope", 0.3);
        let md = cfg.assemble().unwrap();
        let p = solve_stationary(&StationaryProblem::from_model(&md, mu, eps), 0.0, NewtonOptions::default())
            .unwrap()
            .profile
            .ac;
        let params = short_params(mu, eps);
        let x = x_nodes(params.x_half, params.hx);
        let u0: Vec<f64> = x.iter().flat_map(|_| p.iter().copied()).collect();
        let st = Stepper::new(&md, params.clone()).unwrap();
        let mut s = SimulationState::new(params.x_half, params.hx, 21, u0.clone(), 0.01).unwrap();
        for _ in 0..100 {
            st.step(&mut s).unwrap();
        }
        let drift = s.u.iter().zip(&u0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / s.t;
        assert!(drift <= 1e-6, "{drift}");
    }

    #[test]
    fn front_position_examples() {
        let x: Vec<f64> = (0..11).map(|j| j as f64).collect();
        let step: Vec<f64> = x.iter().map(|&x| if x <= 3.0 { 1.0 } else { 0.0 }).collect();
        let f = front_position(&x, &step, 0.5);
        assert!(f.attained && (f.x - 3.5).abs() < 1e-12);
        let sharp = vec![1.0; 11];
        assert_eq!(front_position(&x, &sharp, 0.5).x, 10.0);
        let f = front_position(&x, &step, 2.0);
        assert!(!f.attained && f.x == 0.0);
    }

    #[test]
    fn front_on_a_jump_sits_at_the_jump() {
        // Nodes on both sides of the jump at 3.0.
        let x: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 3.0 + 1e-12, 4.0, 5.0];
        let m = vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let f = front_position(&x, &m, 0.5);
        assert!((f.x - 3.0).abs() < 1e-9);
    }

    #[test]
    fn synthetic_speed_fit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let hist: Vec<(f64, f64)> = (0..400)
            .map(|k| {
                let t = k as f64 * 0.1;
                (t, 2.0 * t + 1e-3 * (rng.gen::<f64>() - 0.5))
            })
            .collect();
        let e = estimate_speed(&hist, 0.5, None).unwrap();
        assert!((e.c_obs - 2.0).abs() < 1e-3 && e.stderr < 1e-3);
        assert!(estimate_speed(&hist[..30], 0.5, None).is_err());
        // A transient in the early history inflates the full-window error.
        let curved: Vec<(f64, f64)> = hist.iter().map(|&(t, x)| (t, x - 3.0 * (1.0 + t).ln())).collect();
        let half = estimate_speed(&curved, 0.5, None).unwrap();
        let all = estimate_speed(&curved, 1.0, None).unwrap();
        assert!(all.stderr > half.stderr);
    }

    #[test]
    fn ordering_and_determinism() {
        let mu = 0.5;
        let md = smooth(11, mu);
        let b0 = beta0(&md.m, &md.k, &md.a, mu);
        let mut p = short_params(mu, 1e-2);
        p.beta = b0;
        p.t_final = 2.0;
        let x = x_nodes(p.x_half, p.hx);
        let bound = mu * md.m.lower_bound / md.k.upper_bound;
        let high: Vec<f64> = x
            .iter()
            .flat_map(|&x| (0..11).map(move |i| 0.9 * bound * (-(x * x)).exp() * (1.0 - 0.05 * i as f64)))
            .collect();
        let low: Vec<f64> = high.iter().map(|v| 0.5 * v).collect();
        let v = order_preservation_test(&md, &p, b0, low, high.clone()).unwrap();
        assert_eq!(v.status, OrderStatus::Pass, "{v:?}");
        let same = order_preservation_test(&md, &p, b0, high.clone(), high.clone()).unwrap();
        assert_eq!(same.min_gap, 0.0);
        p.beta = 0.0;
        let skipped = order_preservation_test(&md, &p, b0, high.clone(), high).unwrap();
        assert_eq!(skipped.status, OrderStatus::Skipped);
    }
}
