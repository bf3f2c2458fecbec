//! Traveling waves: box problems at fixed speed, speed selection by
//! normalization, extension to the line, the KPP front and the separated
//! singular wave, plus the weak-form residual used to check them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::linalg::{least_squares, max_abs, BlockTridiagonal};
use crate::operators::{apply_star, FitnessProfile, KernelMatrix, Model};
use crate::spectral::{eigen_regularized, minimal_speed, EigenOptions, MeasureProfile};
use crate::stationary::{solve_stationary, NewtonOptions, StationaryProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveKind {
    Regularized,
    SeparatedSingular,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveMeta {
    pub eps: f64,
    pub beta: f64,
    pub l: f64,
    pub tau: Option<f64>,
}

/// Speed plus an x-indexed family of phenotype measures.
///
/// Regularized waves store `u[j * ny + i] = u(x_j, y_i)`; separated waves
/// store ρ(x_j) and a single measure φ.
#[derive(Debug, Clone, Serialize)]
pub struct WaveProfile {
    pub c: f64,
    pub kind: WaveKind,
    pub x: Vec<f64>,
    pub ny: usize,
    pub u: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi: Option<MeasureProfile>,
    pub p_left: Vec<f64>,
    pub meta: WaveMeta,
}

impl WaveProfile {
    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn hx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn slice(&self, j: usize) -> MeasureProfile {
        match self.kind {
            WaveKind::Regularized => MeasureProfile::density(self.u[j * self.ny..(j + 1) * self.ny].to_vec()),
            WaveKind::SeparatedSingular => {
                let mut m = self.phi.clone().expect("separated wave carries φ");
                m.scale(self.rho[j]);
                m
            }
        }
    }

    pub fn slice_mass(&self, grid: &PhenotypeGrid, j: usize) -> f64 {
        self.slice(j).total_mass(grid)
    }

    /// Largest value of the density part.
    pub fn sup(&self) -> f64 {
        match self.kind {
            WaveKind::Regularized => self.u.iter().copied().fold(0.0, f64::max),
            WaveKind::SeparatedSingular => {
                let s = self.phi.as_ref().map_or(0.0, MeasureProfile::sup_density);
                s * self.rho.iter().copied().fold(0.0, f64::max)
            }
        }
    }

    /// Largest forward difference u(x_{j+1}, y) − u(x_j, y).
    pub fn max_forward_increase(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..self.nx() - 1 {
            match self.kind {
                WaveKind::Regularized => {
                    for i in 0..self.ny {
                        worst = worst.max(self.u[(j + 1) * self.ny + i] - self.u[j * self.ny + i]);
                    }
                }
                WaveKind::SeparatedSingular => worst = worst.max(self.rho[j + 1] - self.rho[j]),
            }
        }
        worst
    }
}

/// Box problem data: −εΔ_y u − u_xx − cu_x = μ(M⋆u − u) + u⁺(a − K⋆u − βu) on
/// (−l, l) × Ω with u(−l) = p, u(l) = 0.
pub struct BoxProblem<'a> {
    pub grid: &'a PhenotypeGrid,
    pub m: &'a KernelMatrix,
    pub k: &'a KernelMatrix,
    pub a: &'a FitnessProfile,
    pub mu: f64,
    pub eps: f64,
    pub beta: f64,
    pub l: f64,
    pub nx: usize,
    pub p_left: Vec<f64>,
}

/// Number of x-nodes so that one decay length 2/c* spans at least 40 cells.
pub fn box_nodes(l: f64, c_star: f64) -> usize {
    let h = (2.0 / c_star) / 40.0;
    (2.0 * l / h).ceil() as usize + 1
}

struct BoxOps {
    base: DMatrix<f64>,
    kw: DMatrix<f64>,
    h: f64,
}

impl<'a> BoxProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a Model,
        mu: f64,
        eps: f64,
        beta: f64,
        l: f64,
        nx: usize,
        p_left: Vec<f64>,
    ) -> Result<Self> {
        if model.grid.dim() != 1 {
            return Err(Error::Unsupported("box waves are implemented for one-dimensional Ω".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::Precondition("box problem needs eps > 0".into()));
        }
        if nx < 5 || !(l > 0.0) {
            return Err(Error::Precondition("box needs l > 0 and at least 5 x-nodes".into()));
        }
        if p_left.len() != model.grid.len() {
            return Err(Error::ShapeMismatch {
                expected: model.grid.len(),
                got: p_left.len(),
            });
        }
        Ok(Self {
            grid: &model.grid,
            m: &model.m,
            k: &model.k,
            a: &model.a,
            mu,
            eps,
            beta,
            l,
            nx,
            p_left,
        })
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        let h = 2.0 * self.l / (self.nx - 1) as f64;
        (0..self.nx)
            .map(|j| if j == self.nx - 1 { self.l } else { -self.l + j as f64 * h })
            .collect()
    }

    fn ops(&self) -> Result<BoxOps> {
        let h = 2.0 * self.l / (self.nx - 1) as f64;
        let ny = self.grid.len();
        let mut base = crate::spectral::regularized_operator(self.grid, self.m, &self.a.values, self.mu, self.eps)?;
        for i in 0..ny {
            base[(i, i)] -= 2.0 / (h * h);
        }
        Ok(BoxOps {
            base,
            kw: self.k.weighted_dense(),
            h,
        })
    }

    fn column<'u>(&'u self, u: &'u [f64], j: usize, ny: usize) -> &'u [f64] {
        if j == 0 {
            &self.p_left
        } else {
            &u[(j - 1) * ny..j * ny]
        }
    }

    /// Residual at interior nodes; `u` stores columns 1..nx−1 (the right
    /// boundary column is zero and omitted).
    fn residual(&self, ops: &BoxOps, u: &[f64], c: f64) -> Vec<f64> {
        let ny = self.grid.len();
        let ni = self.nx - 2;
        let h = ops.h;
        let (lo, up) = (1.0 / (h * h) - c / (2.0 * h), 1.0 / (h * h) + c / (2.0 * h));
        let zero = vec![0.0; ny];
        let mut out = vec![0.0; ni * ny];
        for j in 1..=ni {
            let uj = self.column(u, j, ny);
            let um = self.column(u, j - 1, ny);
            let up_col = if j + 1 == self.nx - 1 { &zero[..] } else { self.column(u, j + 1, ny) };
            let vj = DVector::from_column_slice(uj);
            let lin = &ops.base * &vj;
            let kp = &ops.kw * &vj;
            for i in 0..ny {
                let react = if uj[i] > 0.0 {
                    uj[i] * (-kp[i] - self.beta * uj[i])
                } else {
                    // the linear a·u part sits in `base`; remove it where u ≤ 0
                    -self.a.values[i] * uj[i]
                };
                out[(j - 1) * ny + i] = lo * um[i] + up * up_col[i] + lin[i] + react;
            }
        }
        out
    }

    fn jacobian(&self, ops: &BoxOps, u: &[f64], c: f64) -> BlockTridiagonal {
        let ny = self.grid.len();
        let ni = self.nx - 2;
        let h = ops.h;
        let (lo, up) = (1.0 / (h * h) - c / (2.0 * h), 1.0 / (h * h) + c / (2.0 * h));
        let diag = (1..=ni)
            .map(|j| {
                let uj = self.column(u, j, ny);
                let vj = DVector::from_column_slice(uj);
                let kp = &ops.kw * &vj;
                let mut d = ops.base.clone();
                for i in 0..ny {
                    if uj[i] > 0.0 {
                        d[(i, i)] -= kp[i] + 2.0 * self.beta * uj[i];
                        for q in 0..ny {
                            d[(i, q)] -= uj[i] * ops.kw[(i, q)];
                        }
                    } else {
                        d[(i, i)] -= self.a.values[i];
                    }
                }
                d
            })
            .collect();
        BlockTridiagonal {
            lower: vec![lo; ni],
            diag,
            upper: vec![up; ni],
        }
    }

    /// Default initial guess: p times a logistic front centered according to c.
    pub fn initial_guess(&self, c: f64, c_star: f64) -> Vec<f64> {
        let xs = self.x_nodes();
        let ny = self.grid.len();
        let center = self.l * (1.0 - 2.0 * (c / c_star).clamp(0.0, 1.0)) * 0.9;
        let width = 2.0 / c_star;
        let mut u = Vec::with_capacity((self.nx - 2) * ny);
        for &x in &xs[1..self.nx - 1] {
            let s = 0.5 * (1.0 - ((x - center) / width).tanh()) * (self.l - x) / (self.l - x).max(width).min(2.0 * self.l);
            let floor = 1e-3 * (self.l - x) / (2.0 * self.l) * (-0.5 * c * (x + self.l)).exp();
            u.extend(self.p_left.iter().map(|p| p * s.max(floor)));
        }
        u
    }

    /// Newton solve at fixed c from `guess` (interior columns).
    pub fn solve(&self, c: f64, guess: &[f64], opts: NewtonOptions) -> Result<WaveProfile> {
        let (u, c) = self.newton(c, guess, None, opts)?;
        Ok(self.wave_from(c, &u))
    }

    /// Newton solve for (u, c) with the phase condition N(u) = τ, N the
    /// normalization over |x| ≤ l₀, started from `start`.
    pub fn solve_normalized(&self, tau: f64, l0: f64, start: &WaveProfile, opts: NewtonOptions) -> Result<WaveProfile> {
        let xs = self.x_nodes();
        let window: Vec<usize> = (1..self.nx - 1).filter(|&j| xs[j].abs() <= l0 + 1e-12).collect();
        if window.is_empty() {
            return Err(Error::Precondition("normalization window holds no interior x-node".into()));
        }
        let (u, c) = self.newton(start.c, &interior(start), Some((tau, window)), opts)?;
        let mut w = self.wave_from(c, &u);
        w.meta.tau = Some(tau);
        Ok(w)
    }

    fn wave_from(&self, c: f64, u: &[f64]) -> WaveProfile {
        let ny = self.grid.len();
        let mut full = Vec::with_capacity(self.nx * ny);
        full.extend_from_slice(&self.p_left);
        full.extend(u.iter().map(|v| v.max(0.0)));
        full.extend(std::iter::repeat_n(0.0, ny));
        WaveProfile {
            c,
            kind: WaveKind::Regularized,
            x: self.x_nodes(),
            ny,
            u: full,
            rho: Vec::new(),
            phi: None,
            p_left: self.p_left.clone(),
            meta: WaveMeta {
                eps: self.eps,
                beta: self.beta,
                l: self.l,
                tau: None,
            },
        }
    }

    /// N(u) and the (column, node) where the sup is attained; `cols` index
    /// interior columns from 1.
    fn normalization_at(&self, ops: &BoxOps, u: &[f64], cols: &[usize]) -> (f64, usize, usize) {
        let ny = self.grid.len();
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for &j in cols {
            let uj = &u[(j - 1) * ny..j * ny];
            let kp = &ops.kw * DVector::from_column_slice(uj);
            for i in 0..ny {
                let v = kp[i] + self.beta * uj[i];
                if v > best.0 {
                    best = (v, j, i);
                }
            }
        }
        best
    }

    fn newton(&self, c0: f64, guess: &[f64], phase: Option<(f64, Vec<usize>)>, opts: NewtonOptions) -> Result<(Vec<f64>, f64)> {
        let ny = self.grid.len();
        let ni = self.nx - 2;
        if guess.len() != ni * ny {
            return Err(Error::ShapeMismatch {
                expected: ni * ny,
                got: guess.len(),
            });
        }
        let ops = self.ops()?;
        let scale = max_abs(&self.p_left).max(1e-300);
        let mut u = guess.to_vec();
        let mut c = c0;
        if max_abs(&self.p_left) == 0.0 {
            if phase.is_some() {
                return Err(Error::Precondition("normalized box solve needs nonzero left data".into()));
            }
            return Ok((vec![0.0; ni * ny], c));
        }
        // Newton runs in the variables e^{κ(x − x_ref)}u, κ = c/2, where the
        // linearization is well conditioned; unweighted steps blow up like e^{cl}.
        // The weight is clipped to 1 behind the front of the initial iterate so
        // the weighted unknowns stay O(sup p).
        let kappa = 0.5 * c.max(0.0);
        let xs = self.x_nodes();
        let half = 0.5 * scale;
        let x_ref = (0..ni)
            .rev()
            .find(|&j| u[j * ny..(j + 1) * ny].iter().any(|&v| v >= half))
            .map_or(-self.l, |j| xs[j + 1]);
        let col_w: Vec<f64> = xs.iter().map(|x| (kappa * (x - x_ref)).exp().max(1.0)).collect();
        let omega: Vec<f64> = col_w[1..self.nx - 1]
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w, ny))
            .collect();
        let weigh = |f: Vec<f64>| -> Vec<f64> { f.iter().zip(&omega).map(|(a, w)| a * w).collect() };
        // Phase residual ln N − ln τ.
        let phase_res = |u: &[f64]| -> (f64, usize, usize) {
            match &phase {
                Some((tau, cols)) => {
                    let (n, j, i) = self.normalization_at(&ops, u, cols);
                    if n > 0.0 {
                        ((n / tau).ln(), j, i)
                    } else {
                        (f64::INFINITY, j, i)
                    }
                }
                None => (0.0, 0, 0),
            }
        };
        let merit = |f: &[f64], ph: f64| f.iter().map(|v| v * v).sum::<f64>() + ph * ph;
        let mut f = weigh(self.residual(&ops, &u, c));
        let (mut ph, mut pj, mut pi) = phase_res(&u);
        let mut r = max_abs(&f);
        let done = |r: f64, ph: f64| r <= opts.tol && ph.abs() <= 1e-7;
        let mut it = 0;
        let mut polished = false;
        while it < opts.max_iter {
            if done(r, ph) {
                if polished || (r == 0.0 && ph == 0.0) {
                    break;
                }
                polished = true;
            }
            let mut jac = self.jacobian(&ops, &u, c);
            for j in 0..ni {
                jac.lower[j] *= col_w[j + 1] / col_w[j];
                jac.upper[j] *= col_w[j + 1] / col_w[j + 2];
            }
            let fac = jac.factor()?;
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            let y: Vec<f64> = fac.solve(&neg)?.iter().zip(&omega).map(|(a, w)| a / w).collect();
            let (du, dc) = if phase.is_some() {
                // ∂F/∂c = u_x by central differences.
                let zero = vec![0.0; ny];
                let mut fc = vec![0.0; ni * ny];
                for j in 1..=ni {
                    let um = self.column(&u, j - 1, ny);
                    let up = if j + 1 == self.nx - 1 { &zero[..] } else { self.column(&u, j + 1, ny) };
                    for i in 0..ny {
                        fc[(j - 1) * ny + i] = -(up[i] - um[i]) / (2.0 * ops.h) * omega[(j - 1) * ny + i];
                    }
                }
                let z: Vec<f64> = fac.solve(&fc)?.iter().zip(&omega).map(|(a, w)| a / w).collect();
                // Gradient of ln N: row i of K̂ + βe_i at column pj, over N.
                let n = self.normalization_at(&ops, &u, std::slice::from_ref(&pj)).0;
                let g = |v: &[f64]| -> f64 {
                    let col = &v[(pj - 1) * ny..pj * ny];
                    let mut acc = self.beta * col[pi];
                    for q in 0..ny {
                        acc += ops.kw[(pi, q)] * col[q];
                    }
                    acc / n
                };
                let gz = g(&z);
                if gz == 0.0 || !gz.is_finite() {
                    return Err(Error::SingularSystem("bordered box system"));
                }
                let dc = (-ph - g(&y)) / gz;
                (y.iter().zip(&z).map(|(a, b)| a + dc * b).collect::<Vec<f64>>(), dc)
            } else {
                (y, 0.0)
            };
            let m0 = merit(&f, ph);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + t * b).collect();
                let ct = c + t * dc;
                let ft = weigh(self.residual(&ops, &trial, ct));
                let pt = phase_res(&trial);
                let mt = merit(&ft, pt.0);
                if mt <= (1.0 - 1e-4 * t) * m0 || (polished && mt <= m0) {
                    u = trial;
                    c = ct;
                    f = ft;
                    (ph, pj, pi) = pt;
                    r = max_abs(&f);
                    break;
                }
                t *= 0.5;
                if t < 1e-8 {
                    if polished {
                        break;
                    }
                    return Err(Error::NoConvergence {
                        solver: "box Newton (line search)",
                        iterations: it,
                        residual: r.max(ph.abs()),
                    });
                }
            }
            it += 1;
            if polished {
                break;
            }
        }
        if !done(r, ph) {
            return Err(Error::NoConvergence {
                solver: "box Newton",
                iterations: it,
                residual: r.max(ph.abs()),
            });
        }
        let min = u.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * scale {
            return Err(Error::NoConvergence {
                solver: "box Newton (positivity lost)",
                iterations: it,
                residual: min,
            });
        }
        Ok((u, c))
    }

    /// Max-norm residual of a full wave at its own speed, interior nodes only.
    pub fn residual_norm(&self, wave: &WaveProfile) -> Result<f64> {
        let ny = self.grid.len();
        let ops = self.ops()?;
        let interior = &wave.u[ny..(self.nx - 1) * ny];
        Ok(max_abs(&self.residual(&ops, interior, wave.c)))
    }
}

fn interior(wave: &WaveProfile) -> Vec<f64> {
    wave.u[wave.ny..(wave.nx() - 1) * wave.ny].to_vec()
}

/// Solves the box problem at speed `c`, continuing in c from `warm` if the
/// direct Newton solve fails.
pub fn solve_box(
    prob: &BoxProblem<'_>,
    c: f64,
    c_star: f64,
    warm: Option<&WaveProfile>,
    opts: NewtonOptions,
) -> Result<WaveProfile> {
    let near = warm.filter(|w| w.nx() == prob.nx && (w.c - c).abs() <= 0.1 * c_star);
    let guess = match near {
        Some(w) => interior(w),
        None => prob.initial_guess(c, c_star),
    };
    match prob.solve(c, &guess, opts) {
        Ok(w) => Ok(w),
        Err(e) => {
            let Some(start) = warm else { return Err(e) };
            // Continuation in c from the warm start.
            let mut cur = start.clone();
            let mut step = (c - start.c) / 2.0;
            while (cur.c - c).abs() > 0.0 {
                let target = if (c - cur.c).abs() <= step.abs() { c } else { cur.c + step };
                match prob.solve(target, &interior(&cur), opts) {
                    Ok(w) => {
                        cur = w;
                        step *= 1.5;
                    }
                    Err(err) => {
                        step *= 0.5;
                        if step.abs() < 1e-6 * c_star.max(1e-12) {
                            return Err(err);
                        }
                    }
                }
            }
            Ok(cur)
        }
    }
}

/// sup over x ∈ [−l₀, l₀] and y of K⋆u + βu.
pub fn normalization_n(wave: &WaveProfile, k: &KernelMatrix, beta: f64, l0: f64) -> Result<f64> {
    let (x_lo, x_hi) = (wave.x[0], wave.x[wave.nx() - 1]);
    if l0 > x_hi.min(-x_lo) + 1e-12 {
        return Err(Error::Precondition(format!(
            "normalization window (−{l0}, {l0}) exceeds the wave domain [{x_lo}, {x_hi}]"
        )));
    }
    let mut best: f64 = 0.0;
    for j in 0..wave.nx() {
        if wave.x[j].abs() > l0 + 1e-12 {
            continue;
        }
        let s = wave.slice(j);
        let ks = apply_star(k, &s)?;
        for i in 0..wave.ny {
            best = best.max(ks[i] + beta * s.ac[i]);
        }
    }
    Ok(best)
}

/// Outcome of the speed search.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedSelection {
    pub c: f64,
    pub c_star_eps: f64,
    pub lambda_eps: f64,
    pub tau: f64,
    pub normalization: f64,
    pub l: f64,
    pub l0: f64,
    pub evaluations: usize,
    pub residual: f64,
    #[serde(skip)]
    pub wave: WaveProfile,
}

/// Settings shared by the speed search and line extension.
#[derive(Debug, Clone, Copy)]
pub struct WaveOptions {
    pub newton: NewtonOptions,
    /// Relative target |N − τ| ≤ tol·τ.
    pub normalization_tol: f64,
    pub max_evaluations: usize,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            normalization_tol: 1e-6,
            max_evaluations: 80,
        }
    }
}

/// Box length heuristic l = 2(l₀ + (2/c*) ln(2A(k∞·mass(φ) + β sup φ)/τ)).
pub fn default_box_length(model: &Model, mu: f64, eps: f64, beta: f64, tau: f64, p_left: &[f64]) -> Result<f64> {
    let eig = eigen_regularized(&model.grid, &model.m, &model.a, mu, eps, EigenOptions::default())?;
    let c = minimal_speed(eig.lambda)?;
    let l0 = std::f64::consts::PI / (-eig.lambda).sqrt();
    let inf_phi = eig.phi.iter().copied().fold(f64::INFINITY, f64::min);
    let sup_phi = eig.phi.iter().copied().fold(0.0, f64::max);
    let a_const = p_left.iter().copied().fold(0.0, f64::max) / inf_phi;
    let arg = 2.0 * a_const * (model.k.upper_bound * model.grid.integrate(&eig.phi) + beta * sup_phi) / tau;
    Ok(2.0 * (l0 + (2.0 / c) * arg.max(1.0).ln()))
}

/// Finds c ∈ (0, c*_ε] with N(u_c) = τ on the box (−l, l).
pub fn select_speed(model: &Model, mu: f64, eps: f64, beta: f64, tau: f64, l: f64, opts: WaveOptions) -> Result<SpeedSelection> {
    let eig = eigen_regularized(&model.grid, &model.m, &model.a, mu, eps, opts.newton.eigen)?;
    let c_star = minimal_speed(eig.lambda)?;
    let tau0 = -eig.lambda / 2.0;
    if !(tau > 0.0 && tau <= tau0) {
        return Err(Error::Precondition(format!("τ = {tau} must lie in (0, τ₀ = {tau0}]")));
    }
    let l0 = std::f64::consts::PI / (-eig.lambda).sqrt();
    if l < l0 {
        return Err(Error::Precondition(format!("box half-length {l} is below l₀ = {l0}")));
    }
    let prob_s = StationaryProblem::from_model(model, mu, eps);
    let p = solve_stationary(&prob_s, beta, opts.newton)?.profile.ac;
    let nx = box_nodes(l, c_star);
    let prob = BoxProblem::new(model, mu, eps, beta, l, nx, p)?;

    let mut solved: Vec<WaveProfile> = Vec::new();
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |c: f64, solved: &mut Vec<WaveProfile>| -> Result<(f64, WaveProfile)> {
        evaluations.set(evaluations.get() + 1);
        let warm = solved
            .iter()
            .min_by(|a, b| (a.c - c).abs().total_cmp(&(b.c - c).abs()))
            .cloned();
        let w = solve_box(&prob, c, c_star, warm.as_ref(), opts.newton)?;
        let n = normalization_n(&w, &model.k, beta, l0)?;
        solved.push(w.clone());
        Ok((n - tau, w))
    };

    let (g_hi, w_hi) = eval(c_star, &mut solved)?;
    let (g_lo, w_lo) = eval(0.0, &mut solved)?;
    let b0 = crate::stationary::beta0(&model.m, &model.k, &model.a, mu);
    if g_lo.signum() == g_hi.signum() && beta >= b0 {
        return Err(Error::BracketFailed(format!("N(0) − τ = {g_lo:e}, N(c*) − τ = {g_hi:e}")));
    }
    if g_lo > 0.0 && g_hi < 0.0 {
        // Continuation in ln τ from the c* solution, with c solved jointly and
        // a secant predictor from the last two accepted points.
        let step_opts = NewtonOptions {
            max_iter: opts.newton.max_iter.min(20),
            ..opts.newton
        };
        let mut cur = w_hi.clone();
        let mut ln_cur = normalization_n(&w_hi, &model.k, beta, l0)?.ln();
        let mut prev: Option<(f64, WaveProfile)> = None;
        let ln_target = tau.ln();
        let mut step: f64 = 3.0;
        while ln_cur < ln_target && step > 1e-3 && evaluations.get() < opts.max_evaluations {
            let next = (ln_cur + step).min(ln_target);
            evaluations.set(evaluations.get() + 1);
            let start = match &prev {
                Some((ln_prev, wp)) => {
                    let t = (next - ln_cur) / (ln_cur - ln_prev);
                    let mut guess = cur.clone();
                    guess.c = cur.c + t * (cur.c - wp.c);
                    for (g, q) in guess.u.iter_mut().zip(&wp.u) {
                        *g = (*g + t * (*g - q)).max(0.0);
                    }
                    guess
                }
                None => cur.clone(),
            };
            match prob.solve_normalized(next.exp(), l0, &start, step_opts) {
                Ok(w) if w.c > 0.0 && w.c <= c_star + 1e-10 => {
                    prev = Some((ln_cur, std::mem::replace(&mut cur, w)));
                    ln_cur = next;
                    step *= 1.5;
                }
                _ => step *= 0.5,
            }
        }
        if ln_cur >= ln_target {
            let n = normalization_n(&cur, &model.k, beta, l0)?;
            return Ok(selection(cur.c, n - tau, cur, c_star, eig.lambda, tau, l, l0, evaluations.get(), &prob));
        }
    }
    // Fallback: march down from c* with warm starts until N − τ changes sign,
    // then false position. This is also the scan used when β < β₀ leaves the
    // c ↦ u map without a monotonicity guarantee.
    let (mut b, mut fb, mut wb) = (c_star, g_hi, w_hi);
    let (mut a, mut fa, mut wa) = (0.0, g_lo, w_lo);
    let mut step = 0.01 * c_star;
    loop {
        let c = b - step;
        if c <= 0.5 * step {
            if fa.signum() == fb.signum() {
                return Err(Error::BracketFailed("no sign change of N − τ on the c-scan".into()));
            }
            break;
        }
        let (g, w) = eval(c, &mut solved)?;
        if g.signum() != fb.signum() {
            (a, fa, wa) = (c, g, w);
            break;
        }
        (b, fb, wb) = (c, g, w);
        step *= 2.0;
    }
    solved.retain(|w| w.c >= a && w.c <= b);
    let target = opts.normalization_tol * tau;
    if fa.abs() <= target {
        return Ok(selection(a, fa, wa, c_star, eig.lambda, tau, l, l0, evaluations.get(), &prob));
    }
    if fb.abs() <= target {
        return Ok(selection(b, fb, wb, c_star, eig.lambda, tau, l, l0, evaluations.get(), &prob));
    }
    // Illinois false position with a bisection safeguard.
    let mut side = 0i8;
    while evaluations.get() < opts.max_evaluations {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let (g, w) = eval(c, &mut solved)?;
        if g.abs() <= target || (b - a).abs() < 1e-14 * c_star {
            return Ok(selection(c, g, w, c_star, eig.lambda, tau, l, l0, evaluations.get(), &prob));
        }
        if g.signum() == fb.signum() {
            (b, fb) = (c, g);
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            (a, fa) = (c, g);
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if solved.len() > 6 {
            solved.drain(0..solved.len() - 6);
        }
    }
    Err(Error::NoConvergence {
        solver: "speed selection",
        iterations: evaluations.get(),
        residual: fa.abs().min(fb.abs()),
    })
}

#[allow(clippy::too_many_arguments)]
fn selection(
    c: f64,
    g: f64,
    mut wave: WaveProfile,
    c_star: f64,
    lambda_eps: f64,
    tau: f64,
    l: f64,
    l0: f64,
    evaluations: usize,
    prob: &BoxProblem<'_>,
) -> SpeedSelection {
    wave.meta.tau = Some(tau);
    let residual = prob.residual_norm(&wave).unwrap_or(f64::NAN);
    SpeedSelection {
        c,
        c_star_eps: c_star,
        lambda_eps,
        tau,
        normalization: g + tau,
        l,
        l0,
        evaluations,
        residual,
        wave,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LineExtension {
    pub speeds: Vec<(f64, f64)>,
    pub c: f64,
    pub c_star_eps: f64,
    pub converged: bool,
    pub max_slice_mass: f64,
    pub slice_mass_bound: f64,
    #[serde(skip)]
    pub wave: WaveProfile,
}

/// Speed selection along an increasing sequence of box lengths, stopping
/// once successive speeds agree to 1e−4·c*_ε.
pub fn extend_line(model: &Model, mu: f64, eps: f64, beta: f64, tau: f64, l_sequence: &[f64], opts: WaveOptions) -> Result<LineExtension> {
    if l_sequence.is_empty() || l_sequence.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("l_sequence must be nonempty and increasing".into()));
    }
    let sels: Vec<Result<SpeedSelection>> = l_sequence
        .par_iter()
        .map(|&l| select_speed(model, mu, eps, beta, tau, l, opts))
        .collect();
    let mut done: Vec<SpeedSelection> = Vec::new();
    for s in sels {
        done.push(s?);
    }
    let c_star = done[0].c_star_eps;
    let speeds: Vec<(f64, f64)> = done.iter().map(|s| (s.l, s.c)).collect();
    let converged = match speeds.len() {
        1 => true,
        n => (speeds[n - 1].1 - speeds[n - 2].1).abs() <= 1e-4 * c_star,
    };
    let last = done.pop().expect("nonempty");
    let max_slice_mass = (0..last.wave.nx())
        .map(|j| last.wave.slice_mass(&model.grid, j))
        .fold(0.0, f64::max);
    Ok(LineExtension {
        c: last.c,
        c_star_eps: c_star,
        speeds,
        converged,
        max_slice_mass,
        slice_mass_bound: model.a.sup_a / model.k.lower_bound,
        wave: last.wave,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveDiagnostics {
    /// Largest slice mass over the last 10% of the x-window.
    pub right_tail_mass: f64,
    pub right_tail_ok: bool,
    /// min over y and the first 10% of x of u.
    pub left_plateau_min: f64,
    pub rho_beta0: f64,
    pub left_plateau_ok: bool,
    /// max over unit x-windows of sup mass / inf mass.
    pub harnack_ratio: f64,
    pub tail_rate: Option<f64>,
    pub tail_rate_expected: f64,
    pub tail_rate_ok: bool,
}

/// Decay rate of the leading edge by two-term linear prediction
/// m_{j+1} = α m_j + β m_{j−1} over nodes where `lo ≤ m/m₀ ≤ hi`, skipping
/// the last 15% of the window. The characteristic roots z± satisfy
/// z₊z₋ = −β, so the rate is −ln(−β)/(2h); this is the real part of the
/// exponents whether the roots are real, double or complex.
pub fn fit_tail_rate(x: &[f64], mass: &[f64], hi: f64, lo: f64) -> Option<f64> {
    let plateau = mass[0];
    let h = x[1] - x[0];
    let cut = x[0] + 0.85 * (x[x.len() - 1] - x[0]);
    let idx: Vec<usize> = (1..x.len() - 1)
        .filter(|&j| x[j + 1] < cut && [j - 1, j, j + 1].iter().all(|&q| mass[q] > 0.0 && mass[q] <= hi * plateau && mass[q] >= lo * plateau))
        .collect();
    if idx.len() < 10 {
        return None;
    }
    let design = DMatrix::from_fn(idx.len(), 2, |r, col| match col {
        0 => 1.0,
        _ => mass[idx[r] - 1] / mass[idx[r]],
    });
    let y: Vec<f64> = idx.iter().map(|&j| mass[j + 1] / mass[j]).collect();
    let (coef, _) = least_squares(&design, &y).ok()?;
    (coef[1] < 0.0).then(|| -(-coef[1]).ln() / (2.0 * h))
}

pub fn wave_diagnostics(model: &Model, wave: &WaveProfile, rho_beta0: f64, tol: f64) -> WaveDiagnostics {
    let nx = wave.nx();
    let masses: Vec<f64> = (0..nx).map(|j| wave.slice_mass(&model.grid, j)).collect();
    let tail_start = nx - nx / 10;
    let right_tail_mass = masses[tail_start..].iter().copied().fold(0.0, f64::max);
    let bound = model.a.sup_a / model.k.lower_bound;
    let left_plateau_min = (0..(nx / 10).max(1))
        .map(|j| wave.slice(j).ac.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    let h = wave.hx();
    let win = ((1.0 / h).round() as usize).max(1);
    let mut harnack: f64 = 1.0;
    for s in (0..nx.saturating_sub(win)).step_by(win) {
        let seg = &masses[s..=s + win];
        let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = seg.iter().copied().fold(0.0, f64::max);
        if lo > 1e-200 {
            harnack = harnack.max(hi / lo);
        }
    }
    let tail_rate = fit_tail_rate(&wave.x, &masses, 1e-2, 1e-12);
    let expected = wave.c / 2.0;
    WaveDiagnostics {
        right_tail_mass,
        right_tail_ok: right_tail_mass <= 1e-6 * bound,
        left_plateau_min,
        rho_beta0,
        left_plateau_ok: left_plateau_min >= rho_beta0 - tol,
        harnack_ratio: harnack,
        tail_rate,
        tail_rate_expected: expected,
        tail_rate_ok: tail_rate.is_some_and(|k| (k - expected).abs() <= 0.1 * expected),
    }
}

/// Monotone KPP front with −ρ'' − cρ' = ρ(r − ρ), ρ(0) = pin.
#[derive(Debug, Clone, Serialize)]
pub struct KppFront {
    pub r: f64,
    pub c: f64,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    /// Max |ρ'' + cρ' + ρ(r − ρ)| by sixth-order differences on the interior.
    pub residual: f64,
    pub decay_rate: Option<f64>,
}

fn kpp_rhs(r: f64, c: f64, s: [f64; 2]) -> [f64; 2] {
    [s[1], -c * s[1] - s[0] * (r - s[0])]
}

fn rk4(r: f64, c: f64, s: [f64; 2], h: f64) -> [f64; 2] {
    let k1 = kpp_rhs(r, c, s);
    let k2 = kpp_rhs(r, c, [s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
    let k3 = kpp_rhs(r, c, [s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
    let k4 = kpp_rhs(r, c, [s[0] + h * k3[0], s[1] + h * k3[1]]);
    [
        s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Shoots from the unstable manifold of ρ = r. `n` output points on [−L, L].
pub fn kpp_front(r: f64, c: f64, half_length: f64, pin: f64, n: usize) -> Result<KppFront> {
    if !(r > 0.0) {
        return Err(Error::NoPositiveSpeed(-r));
    }
    let cmin = 2.0 * r.sqrt();
    if c < cmin * (1.0 - 1e-12) {
        return Err(Error::SubcriticalSpeed { c, cmin });
    }
    if !(pin > 0.0 && pin < r) {
        return Err(Error::Precondition(format!("pin {pin} must lie in (0, r = {r})")));
    }
    if n < 21 {
        return Err(Error::Precondition("kpp_front needs at least 21 points".into()));
    }
    let m_plus = 0.5 * (-c + (c * c + 4.0 * r).sqrt());
    let delta = 1e-7 * r;
    let sub = 8;
    let dx = 2.0 * half_length / (n - 1) as f64;
    let hs = dx / sub as f64;
    // Distance from the manifold start to the pin level.
    let mut s = [r - delta, -m_plus * delta];
    let mut dist = 0.0;
    loop {
        let next = rk4(r, c, s, hs);
        if next[0] <= pin {
            let t = (s[0] - pin) / (s[0] - next[0]);
            dist += t * hs;
            break;
        }
        s = next;
        dist += hs;
        if dist > 1e6 / m_plus.max(1e-12) {
            return Err(Error::NoConvergence {
                solver: "KPP shooting",
                iterations: 0,
                residual: s[0],
            });
        }
    }
    let xs: Vec<f64> = (0..n).map(|k| -half_length + k as f64 * dx).collect();
    let mut x_start = -dist;
    let mut rho = vec![0.0; n];
    for _ in 0..4 {
        integrate_front(r, c, m_plus, delta, x_start, &xs, sub, &mut rho);
        let k0 = ((0.0 - xs[0]) / dx).round() as usize;
        let (v0, slope) = if (xs[k0]).abs() < 1e-12 * dx.max(1.0) {
            (rho[k0], (rho[k0 + 1] - rho[k0 - 1]) / (2.0 * dx))
        } else {
            let k = ((0.0 - xs[0]) / dx).floor() as usize;
            let t = (0.0 - xs[k]) / dx;
            (rho[k] + t * (rho[k + 1] - rho[k]), (rho[k + 1] - rho[k]) / dx)
        };
        let shift = (v0 - pin) / slope;
        x_start -= shift;
        if shift.abs() < 1e-13 {
            break;
        }
    }
    integrate_front(r, c, m_plus, delta, x_start, &xs, sub, &mut rho);
    if rho[0] < r - 1e-6 {
        return Err(Error::Precondition(format!(
            "front not saturated at −L: ρ(−L) = {}, increase L",
            rho[0]
        )));
    }
    if rho[n - 1] > 1e-8 * r {
        return Err(Error::Precondition(format!(
            "front tail not resolved: ρ(L) = {:e} > 1e-8·r, increase L",
            rho[n - 1]
        )));
    }
    let residual = kpp_residual(r, c, &rho, dx);
    let decay_rate = fit_kpp_decay(&xs, &rho, r);
    Ok(KppFront {
        r,
        c,
        x: xs,
        rho,
        residual,
        decay_rate,
    })
}

#[allow(clippy::too_many_arguments)]
fn integrate_front(r: f64, c: f64, m_plus: f64, delta: f64, x_start: f64, xs: &[f64], sub: usize, rho: &mut [f64]) {
    let dx = xs[1] - xs[0];
    let hs = dx / sub as f64;
    let mut state: Option<[f64; 2]> = None;
    for (k, &x) in xs.iter().enumerate() {
        if x <= x_start {
            rho[k] = r - delta * (m_plus * (x - x_start)).exp();
            continue;
        }
        let mut s = match state {
            Some(s) => s,
            None => {
                // First node past the start: integrate from x_start.
                let mut s = [r - delta, -m_plus * delta];
                let span = x - x_start;
                let steps = (span / hs).ceil().max(1.0) as usize;
                let h = span / steps as f64;
                for _ in 0..steps {
                    s = rk4(r, c, s, h);
                }
                rho[k] = s[0];
                state = Some(s);
                continue;
            }
        };
        for _ in 0..sub {
            s = rk4(r, c, s, hs);
        }
        rho[k] = s[0];
        state = Some(s);
    }
}

const D1: [f64; 7] = [-1.0 / 60.0, 3.0 / 20.0, -3.0 / 4.0, 0.0, 3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
const D2: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 3.0 / 2.0, -49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];

fn kpp_residual(r: f64, c: f64, rho: &[f64], dx: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 3..rho.len() - 3 {
        let d1: f64 = (0..7).map(|q| D1[q] * rho[k + q - 3]).sum::<f64>() / dx;
        let d2: f64 = (0..7).map(|q| D2[q] * rho[k + q - 3]).sum::<f64>() / (dx * dx);
        worst = worst.max((d2 + c * d1 + rho[k] * (r - rho[k])).abs());
    }
    worst
}

/// Fits ln ρ ≈ a₀ + a₁ ln x − κx on the tail where 1e−10 r ≤ ρ ≤ 1e−3 r.
fn fit_kpp_decay(x: &[f64], rho: &[f64], r: f64) -> Option<f64> {
    let idx: Vec<usize> = (0..x.len())
        .filter(|&k| x[k] > 0.0 && rho[k] <= 1e-3 * r && rho[k] >= 1e-10 * r)
        .collect();
    if idx.len() < 10 {
        return None;
    }
    let design = DMatrix::from_fn(idx.len(), 3, |q, col| match col {
        0 => 1.0,
        1 => -x[idx[q]],
        _ => x[idx[q]].ln(),
    });
    let y: Vec<f64> = idx.iter().map(|&k| rho[k].ln()).collect();
    least_squares(&design, &y).ok().map(|(b, _)| b[1])
}

/// u(x, dy) = ρ(x) φ(dy) for a y-independent K and K-mass-one φ.
pub fn separated_wave(grid: &PhenotypeGrid, k: &KernelMatrix, phi: &MeasureProfile, front: &KppFront) -> Result<WaveProfile> {
    let kmass = phi.k_mass(grid, k)?;
    if (kmass - 1.0).abs() > 1e-8 {
        return Err(Error::Precondition(format!("φ must be K-mass-one, got {kmass}")));
    }
    Ok(WaveProfile {
        c: front.c,
        kind: WaveKind::SeparatedSingular,
        x: front.x.clone(),
        ny: grid.len(),
        u: Vec::new(),
        rho: front.rho.clone(),
        phi: Some(phi.clone()),
        p_left: phi.ac.iter().map(|v| v * front.r).collect(),
        meta: WaveMeta {
            eps: 0.0,
            beta: 0.0,
            l: front.x[front.x.len() - 1],
            tau: None,
        },
    })
}

/// Tensor-product test functions b_k(x)χ_m(y) with smooth compact bumps in x
/// and positive zero-flux cosine profiles 1 + ½cos(mπ(y − lo)/|Ω|) in y.
#[derive(Debug, Clone)]
pub struct TestFunctionSet {
    pub centers: Vec<f64>,
    pub half_width: f64,
    pub y_profiles: Vec<Vec<f64>>,
    /// Discrete Laplacian of each y-profile.
    pub y_laplacians: Vec<Vec<f64>>,
}

impl TestFunctionSet {
    pub fn new(grid: &PhenotypeGrid, centers: Vec<f64>, half_width: f64, n_profiles: usize) -> Self {
        let b = grid.bounds()[0];
        let y_profiles: Vec<Vec<f64>> = (1..=n_profiles)
            .map(|m| grid.sample(|y| 1.0 + 0.5 * (m as f64 * std::f64::consts::PI * (y[0] - b.lo) / b.len()).cos()))
            .collect();
        let y_laplacians = y_profiles.iter().map(|p| grid.apply_laplacian(p)).collect();
        Self {
            centers,
            half_width,
            y_profiles,
            y_laplacians,
        }
    }

    /// 3 x-windows × 8 y-profiles around `center`, spaced by `spread`.
    pub fn standard(grid: &PhenotypeGrid, center: f64, spread: f64) -> Self {
        Self::new(grid, vec![center - spread, center, center + spread], spread, 8)
    }

    pub fn len(&self) -> usize {
        self.centers.len() * self.y_profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bump exp(−1/(1 − s²)) and its first two x-derivatives.
    pub fn bump(&self, center: f64, x: f64) -> (f64, f64, f64) {
        let w = self.half_width;
        let s = (x - center) / w;
        if s.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let q = 1.0 - s * s;
        let b = (-1.0 / q).exp();
        let g1 = -2.0 * s / (q * q);
        let g2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
        (b, b * g1 / w, b * (g1 * g1 + g2) / (w * w))
    }

    /// Analytic normal derivative of every y-profile at both ends of Ω.
    pub fn max_normal_derivative(&self, grid: &PhenotypeGrid) -> f64 {
        let b = grid.bounds()[0];
        (1..=self.y_profiles.len())
            .map(|m| {
                let k = m as f64 * std::f64::consts::PI / b.len();
                (0.5 * k * (k * 0.0).sin()).abs().max((0.5 * k * (k * b.len()).sin()).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Which x-derivatives of the test functions enter the weak form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XDerivatives {
    /// Exact derivatives of the bump.
    Analytic,
    /// Transposed central differences on the wave grid, matching the box discretization.
    Discrete,
}

/// Extra terms of the regularized/self-limited equation to include in the defect.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeakTerms {
    pub eps: f64,
    pub beta: f64,
}

/// Weak-form defect of −cu_x − u_xx = μ(M⋆u − u) + u(a − K⋆u) against each test
/// function; returns the largest absolute value. `a_density` is the fitness
/// seen by the density part (the cell-consistent fitness for singular φ).
#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    k: &KernelMatrix,
    a: &FitnessProfile,
    a_density: &[f64],
    mu: f64,
    wave: &WaveProfile,
    tests: &TestFunctionSet,
    mode: XDerivatives,
    extra: WeakTerms,
) -> Result<f64> {
    let nx = wave.nx();
    let h = wave.hx();
    // Per-slice y-pairings, independent of the x-bump.
    let mut pair_chi = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mut pair_growth = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mut pair_mut = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mut pair_comp = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mut pair_lap = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mut pair_sq = vec![vec![0.0; nx]; tests.y_profiles.len()];
    let mt: Vec<Vec<f64>> = tests.y_profiles.iter().map(|chi| m.apply_transpose(chi)).collect::<Result<_>>()?;
    let w = grid.weights();
    for j in 0..nx {
        let s = wave.slice(j);
        if s.ac.iter().all(|&v| v == 0.0) && s.atoms.iter().all(|a| a.mass == 0.0) {
            continue;
        }
        let ks = apply_star(k, &s)?;
        for (t, chi) in tests.y_profiles.iter().enumerate() {
            pair_chi[t][j] = s.pair(grid, chi);
            pair_mut[t][j] = s.pair(grid, &mt[t]);
            pair_lap[t][j] = s.pair(grid, &tests.y_laplacians[t]);
            let mut g = 0.0;
            let mut cpt = 0.0;
            let mut sq = 0.0;
            for i in 0..grid.len() {
                let wi = w[i] * s.ac[i] * chi[i];
                g += wi * a_density[i];
                cpt += wi * ks[i];
                sq += wi * s.ac[i];
            }
            for at in &s.atoms {
                g += at.mass * chi[at.node] * a.values[at.node];
                cpt += at.mass * chi[at.node] * ks[at.node];
            }
            pair_growth[t][j] = g;
            pair_comp[t][j] = cpt;
            pair_sq[t][j] = sq;
        }
    }
    let mut worst: f64 = 0.0;
    for &center in &tests.centers {
        if center - tests.half_width < wave.x[0] - 1e-12 || center + tests.half_width > wave.x[nx - 1] + 1e-12 {
            return Err(Error::Precondition("test function support leaves the wave window".into()));
        }
        let vals: Vec<(f64, f64, f64)> = wave.x.iter().map(|&x| tests.bump(center, x)).collect();
        let (dx1, dx2): (Vec<f64>, Vec<f64>) = match mode {
            XDerivatives::Analytic => (vals.iter().map(|v| v.1).collect(), vals.iter().map(|v| v.2).collect()),
            XDerivatives::Discrete => {
                // Summation by parts against the central differences of the box scheme.
                let b: Vec<f64> = vals.iter().map(|v| v.0).collect();
                let get = |q: isize| if q < 0 || q >= nx as isize { 0.0 } else { b[q as usize] };
                let d1 = (0..nx as isize).map(|q| (get(q + 1) - get(q - 1)) / (2.0 * h)).collect();
                let d2 = (0..nx as isize).map(|q| (get(q + 1) - 2.0 * get(q) + get(q - 1)) / (h * h)).collect();
                (d1, d2)
            }
        };
        for t in 0..tests.y_profiles.len() {
            let mut d = 0.0;
            for j in 0..nx {
                let q = if j == 0 || j == nx - 1 { 0.5 * h } else { h };
                let b = vals[j].0;
                let transport = wave.c * dx1[j] * pair_chi[t][j];
                let diffusion = -dx2[j] * pair_chi[t][j];
                let mutation = -mu * b * (pair_mut[t][j] - pair_chi[t][j]);
                let growth = -b * pair_growth[t][j];
                let competition = b * pair_comp[t][j];
                let mut v = transport + diffusion + mutation + growth + competition;
                v -= extra.eps * b * pair_lap[t][j];
                v += extra.beta * b * pair_sq[t][j];
                d += q * v;
            }
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

/// Pairings ∫∫ψ(x − s, y) u(dx, dy) at the five largest left and right shifts
/// that keep each bump inside the window.
#[derive(Debug, Clone, Serialize)]
pub struct LimitPairings {
    pub left_min: f64,
    pub right_max: f64,
}

pub fn limit_pairings(grid: &PhenotypeGrid, wave: &WaveProfile, tests: &TestFunctionSet) -> LimitPairings {
    let nx = wave.nx();
    let h = wave.hx();
    let (x_lo, x_hi) = (wave.x[0] + tests.half_width, wave.x[nx - 1] - tests.half_width);
    let slices: Vec<MeasureProfile> = (0..nx).map(|j| wave.slice(j)).collect();
    let pairing = |center: f64, chi: &[f64]| -> f64 {
        (0..nx)
            .map(|j| {
                let b = tests.bump(center, wave.x[j]).0;
                if b == 0.0 {
                    0.0
                } else {
                    h * b * slices[j].pair(grid, chi)
                }
            })
            .sum()
    };
    let mut left_min = f64::INFINITY;
    let mut right_max: f64 = 0.0;
    for k in 0..5 {
        let (cl, cr) = (x_lo + k as f64 * h, x_hi - k as f64 * h);
        for chi in &tests.y_profiles {
            left_min = left_min.min(pairing(cl, chi));
            right_max = right_max.max(pairing(cr, chi).abs());
        }
    }
    LimitPairings { left_min, right_max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{ModelConfig, PresetSpec};
    use crate::spectral::{eigen_nonlocal, singular_eigenvector, Normalization};

    fn smooth_model(n: usize) -> Model {
        let mut cfg = ModelConfig::standard(n, 0.5);
        cfg.a = PresetSpec::new("one_minus_quadratic");
        cfg.assemble().unwrap()
    }

    #[test]
    fn kpp_equilibria_have_zero_residual() {
        assert_eq!(kpp_residual(1.0, 2.0, &[0.0; 20], 0.1), 0.0);
        assert!(kpp_residual(1.0, 2.0, &[1.0; 20], 0.1) < 1e-12);
    }

    #[test]
    fn kpp_front_critical_speed() {
        let f = kpp_front(1.0, 2.0, 40.0, 0.5, 8001).unwrap();
        assert!(f.residual < 1e-8, "{}", f.residual);
        assert!(f.rho.windows(2).all(|w| w[1] <= w[0]));
        let k0 = f.x.iter().position(|&x| x.abs() < 1e-9).unwrap();
        assert!((f.rho[k0] - 0.5).abs() < 1e-9);
        assert!((f.decay_rate.unwrap() - 1.0).abs() < 0.05, "{:?}", f.decay_rate);
        let g = kpp_front(0.75, 3f64.sqrt(), 40.0, 0.3, 8001).unwrap();
        let k = g.decay_rate.unwrap();
        assert!((k - 3f64.sqrt() / 2.0).abs() < 0.05 * 3f64.sqrt() / 2.0, "{k}");
    }

    #[test]
    fn kpp_rejects_subcritical() {
        assert!(matches!(kpp_front(1.0, 1.9, 30.0, 0.5, 1001), Err(Error::SubcriticalSpeed { .. })));
    }

    #[test]
    fn zero_left_data_gives_zero_wave() {
        let md = smooth_model(11);
        let prob = BoxProblem::new(&md, 0.5, 1e-2, 4.0, 10.0, 101, vec![0.0; 11]).unwrap();
        let w = prob.solve(0.5, &prob.initial_guess(0.5, 1.5), NewtonOptions::default()).unwrap();
        assert!(w.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_examples() {
        let md = smooth_model(11);
        let mut w = WaveProfile {
            c: 1.0,
            kind: WaveKind::Regularized,
            x: (0..21).map(|j| -5.0 + j as f64 * 0.5).collect(),
            ny: 11,
            u: vec![0.0; 21 * 11],
            rho: Vec::new(),
            phi: None,
            p_left: vec![0.0; 11],
            meta: WaveMeta { eps: 0.0, beta: 0.0, l: 5.0, tau: None },
        };
        assert_eq!(normalization_n(&w, &md.k, 0.0, 2.0).unwrap(), 0.0);
        w.u = vec![0.3; 21 * 11];
        assert!((normalization_n(&w, &md.k, 0.0, 2.0).unwrap() - 0.6).abs() < 1e-14);
        assert!(normalization_n(&w, &md.k, 0.0, 6.0).is_err());
    }

    #[test]
    fn box_at_zero_speed_exceeds_tau0() {
        let md = smooth_model(15);
        let (mu, eps) = (0.5, 1e-2);
        let b0 = crate::stationary::beta0(&md.m, &md.k, &md.a, mu);
        let eig = eigen_regularized(&md.grid, &md.m, &md.a, mu, eps, EigenOptions::default()).unwrap();
        let c_star = minimal_speed(eig.lambda).unwrap();
        let l0 = std::f64::consts::PI / (-eig.lambda).sqrt();
        let p = solve_stationary(&StationaryProblem::from_model(&md, mu, eps), b0, NewtonOptions::default())
            .unwrap()
            .profile
            .ac;
        let l = 3.0 * l0;
        let prob = BoxProblem::new(&md, mu, eps, b0, l, box_nodes(l, c_star), p.clone()).unwrap();
        let w0 = solve_box(&prob, 0.0, c_star, None, NewtonOptions::default()).unwrap();
        assert!(normalization_n(&w0, &md.k, b0, l0).unwrap() > -eig.lambda / 2.0);
        assert!(w0.max_forward_increase() <= 1e-12 * w0.sup());
        // At c*, u ≤ A e^{−(c*/2)(x+l)} φ^ε with A = sup p / inf φ^ε.
        let ws = solve_box(&prob, c_star, c_star, Some(&w0), NewtonOptions::default()).unwrap();
        let a_const = p.iter().copied().fold(0.0, f64::max) / eig.phi.iter().copied().fold(f64::INFINITY, f64::min);
        for j in 0..ws.nx() {
            let env = a_const * (-(c_star / 2.0) * (ws.x[j] + l)).exp();
            for i in 0..15 {
                assert!(ws.u[j * 15 + i] <= env * eig.phi[i] * (1.0 + 1e-9) + 1e-14);
            }
        }
        // Larger speed, smaller solution.
        for (a, b) in ws.u.iter().zip(&w0.u) {
            assert!(*a <= b + 1e-10);
        }
    }

    #[test]
    fn separated_singular_wave_residual() {
        let md = ModelConfig::standard(201, 0.25).assemble().unwrap();
        let se = singular_eigenvector(&md.grid, &md.m, &md.a, 0.25).unwrap();
        let mut phi = se.profile.clone();
        let km = phi.k_mass(&md.grid, &md.k).unwrap();
        phi.scale(1.0 / km);
        let r = -se.lambda;
        let front = kpp_front(r, 2.0 * r.sqrt(), 40.0, 0.5 * r, 8001).unwrap();
        let wave = separated_wave(&md.grid, &md.k, &phi, &front).unwrap();
        let tests = TestFunctionSet::standard(&md.grid, 0.0, 4.0);
        assert_eq!(tests.len(), 24);
        let a_eff: Vec<f64> = se.effective_gap.iter().map(|g| md.a.sup_a - g).collect();
        let res = weak_residual(&md.grid, &md.m, &md.k, &md.a, &a_eff, 0.25, &wave, &tests, XDerivatives::Analytic, WeakTerms::default()).unwrap();
        assert!(res <= 1e-6, "{res}");
        let lp = limit_pairings(&md.grid, &wave, &TestFunctionSet::standard(&md.grid, 0.0, 2.0));
        assert!(lp.left_min > 0.1 && lp.right_max < 1e-6, "{lp:?}");
    }

    #[test]
    fn separated_wave_scaling_is_bilinear() {
        let md = ModelConfig::standard(101, 0.75).assemble().unwrap();
        let mut eig = eigen_nonlocal(&md.grid, &md.m, &md.a, 0.75, EigenOptions::default()).unwrap();
        eig.renormalize(&md.grid, Normalization::KMassOne, Some(&md.k)).unwrap();
        let phi = MeasureProfile::density(eig.phi.clone());
        let r = -eig.lambda;
        let front = kpp_front(r, 2.0 * r.sqrt(), 60.0, 0.5 * r, 6001).map_err(|e| e.to_string()).unwrap();
        let wave = separated_wave(&md.grid, &md.k, &phi, &front).unwrap();
        let tests = TestFunctionSet::standard(&md.grid, 0.0, 4.0);
        let base = weak_residual(&md.grid, &md.m, &md.k, &md.a, &md.a.values, 0.75, &wave, &tests, XDerivatives::Analytic, WeakTerms::default()).unwrap();
        assert!(base <= 1e-6, "{base}");
        let theta = 3.0;
        let mut scaled = wave.clone();
        scaled.rho.iter_mut().for_each(|v| *v *= theta);
        let k3 = md.k.scaled(1.0 / theta).unwrap();
        // Compare the signed defects of a perturbed wave so the check is not vacuous.
        let mut bent = wave.clone();
        bent.c *= 1.01;
        let mut bent_scaled = scaled.clone();
        bent_scaled.c *= 1.01;
        let d1 = weak_residual(&md.grid, &md.m, &md.k, &md.a, &md.a.values, 0.75, &bent, &tests, XDerivatives::Analytic, WeakTerms::default()).unwrap();
        let d3 = weak_residual(&md.grid, &md.m, &k3, &md.a, &md.a.values, 0.75, &bent_scaled, &tests, XDerivatives::Analytic, WeakTerms::default()).unwrap();
        assert!((d3 - theta * d1).abs() <= 1e-12 * d3.abs().max(1.0), "{d1} {d3}");
    }

    #[test]
    fn prony_rate_recovers_complex_and_double_roots() {
        let x: Vec<f64> = (0..2001).map(|j| j as f64 * 0.02).collect();
        let damped: Vec<f64> = x.iter().map(|&x| (-0.7 * x).exp() * (0.05 * (45.0 - x)).sin().max(0.0) + 1e-300).collect();
        let k = fit_tail_rate(&x, &damped, 1.0, 1e-14).unwrap();
        assert!((k - 0.7).abs() < 1e-6, "{k}");
        let double: Vec<f64> = x.iter().map(|&x| (1.0 + x) * (-0.5 * x).exp()).collect();
        let k = fit_tail_rate(&x, &double, 1.0, 1e-14).unwrap();
        assert!((k - 0.5).abs() < 1e-6, "{k}");
    }

    #[test]
    fn speed_selection_within_envelope() {
        let md = smooth_model(11);
        let (mu, eps) = (0.5, 1e-2);
        let b0 = crate::stationary::beta0(&md.m, &md.k, &md.a, mu);
        let eig = eigen_regularized(&md.grid, &md.m, &md.a, mu, eps, EigenOptions::default()).unwrap();
        let l0 = std::f64::consts::PI / (-eig.lambda).sqrt();
        let tau = -eig.lambda / 4.0;
        let s = select_speed(&md, mu, eps, b0, tau, 3.0 * l0, WaveOptions::default()).unwrap();
        assert!(s.c > 0.0 && s.c <= s.c_star_eps + 1e-10);
        assert!((s.normalization - tau).abs() <= 1e-6 * tau);
        assert!(s.wave.max_forward_increase() <= 1e-12 * s.wave.sup());
        let line = extend_line(&md, mu, eps, b0, tau, &[3.0 * l0], WaveOptions::default()).unwrap();
        assert!(line.converged && line.c == s.c);
        assert!(line.max_slice_mass <= line.slice_mass_bound + 1e-8);
        let tests = TestFunctionSet::standard(&md.grid, 0.0, l0);
        let full = WeakTerms { eps, beta: b0 };
        let r_full = weak_residual(&md.grid, &md.m, &md.k, &md.a, &md.a.values, mu, &s.wave, &tests, XDerivatives::Discrete, full).unwrap();
        assert!(r_full <= 1e-8, "{r_full}");
        let no_eps = WeakTerms { eps: 0.0, beta: b0 };
        let r = weak_residual(&md.grid, &md.m, &md.k, &md.a, &md.a.values, mu, &s.wave, &tests, XDerivatives::Discrete, no_eps).unwrap();
        let lap = tests.y_laplacians.iter().map(|v| max_abs(v)).fold(0.0, f64::max);
        let bump_int: f64 = s.wave.x.iter().map(|&x| tests.bump(0.0, x).0 * s.wave.hx()).sum();
        assert!(r <= eps * lap * line.max_slice_mass * bump_int + 1e-8, "{r}");
        assert!(select_speed(&md, mu, eps, b0, 2.0 * tau0_of(eig.lambda), 3.0 * l0, WaveOptions::default()).is_err());
    }

    fn tau0_of(lambda: f64) -> f64 {
        -lambda / 2.0
    }

    #[test]
    fn zero_separated_wave_has_zero_residual() {
        let md = ModelConfig::standard(41, 0.75).assemble().unwrap();
        let phi = MeasureProfile::density(vec![1.0 / 2.0; 41]);
        let front = KppFront {
            r: 0.5,
            c: 2.0,
            x: (0..201).map(|j| -10.0 + j as f64 * 0.1).collect(),
            rho: vec![0.0; 201],
            residual: 0.0,
            decay_rate: None,
        };
        let wave = separated_wave(&md.grid, &md.k, &phi, &front).unwrap();
        let tests = TestFunctionSet::standard(&md.grid, 0.0, 2.0);
        let r = weak_residual(&md.grid, &md.m, &md.k, &md.a, &md.a.values, 0.75, &wave, &tests, XDerivatives::Analytic, WeakTerms::default()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn test_functions_have_zero_flux() {
        let md = smooth_model(21);
        let t = TestFunctionSet::standard(&md.grid, 0.0, 1.0);
        assert!(t.max_normal_derivative(&md.grid) < 1e-12);
        let (b, _, _) = t.bump(0.0, 1.0);
        assert_eq!(b, 0.0);
    }
}
