//! Principal eigenpairs of the mutation–selection operator, the critical
//! mutation rate, regime classification and the singular eigenvector.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhenotypeGrid;
use crate::linalg::max_abs;
use crate::operators::{apply_star, singular_weights, FitnessProfile, KernelMatrix, SingularRule};

/// Point mass sitting on a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub node: usize,
    pub mass: f64,
}

/// Measure on Ω: node density plus finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureProfile {
    pub ac: Vec<f64>,
    pub atoms: Vec<Atom>,
}

impl MeasureProfile {
    pub fn density(ac: Vec<f64>) -> Self {
        Self { ac, atoms: Vec::new() }
    }

    pub fn zero(n: usize) -> Self {
        Self::density(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.ac.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ac.is_empty()
    }

    pub fn atom_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn total_mass(&self, grid: &PhenotypeGrid) -> f64 {
        grid.integrate(&self.ac) + self.atom_mass()
    }

    /// ∫ χ dφ for node values χ.
    pub fn pair(&self, grid: &PhenotypeGrid, chi: &[f64]) -> f64 {
        grid.inner(&self.ac, chi) + self.atoms.iter().map(|a| a.mass * chi[a.node]).sum::<f64>()
    }

    /// ∫ K(z) φ(dz); needs a kernel that does not depend on y.
    pub fn k_mass(&self, grid: &PhenotypeGrid, k: &KernelMatrix) -> Result<f64> {
        let zp = k
            .z_profile
            .as_ref()
            .ok_or_else(|| Error::Unsupported("separation of variables inapplicable: K depends on y".into()))?;
        Ok(self.pair(grid, zp))
    }

    pub fn scale(&mut self, c: f64) {
        self.ac.iter_mut().for_each(|v| *v *= c);
        self.atoms.iter_mut().for_each(|a| a.mass *= c);
    }

    pub fn sup_density(&self) -> f64 {
        self.ac.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    MassOne,
    SupOne,
    KMassOne,
}

/// Eigenvalue λ = −Λ with Λ the Perron value, and its positive eigenvector.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub lambda: f64,
    pub phi: Vec<f64>,
    pub normalization: Normalization,
    /// ‖Aφ − Λφ‖∞ / ‖φ‖∞.
    pub residual: f64,
    pub iterations: usize,
    pub n_nodes: usize,
    /// Σ w (λ + a) φ, which vanishes for the exact discrete eigenpair.
    pub identity_defect: f64,
}

impl SpectralResult {
    pub fn renormalize(&mut self, grid: &PhenotypeGrid, norm: Normalization, k: Option<&KernelMatrix>) -> Result<()> {
        let s = match norm {
            Normalization::MassOne => grid.integrate(&self.phi),
            Normalization::SupOne => max_abs(&self.phi),
            Normalization::KMassOne => {
                let k = k.ok_or_else(|| Error::Precondition("K-mass normalization needs K".into()))?;
                MeasureProfile::density(self.phi.clone()).k_mass(grid, k)?
            }
        };
        self.phi.iter_mut().for_each(|v| *v /= s);
        self.identity_defect /= s;
        self.normalization = norm;
        Ok(())
    }
}

/// Perron value and vector (sup-one) of a Metzler or nonnegative matrix.
#[derive(Debug, Clone)]
pub struct PerronPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

const POWER_PHASE: usize = 300;
const NODA_MAX: usize = 60;
const DENSE_LIMIT: usize = 3000;

fn residual_of(apply: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> (f64, f64) {
    let ax = apply(x);
    let num: f64 = ax.iter().zip(x).map(|(p, q)| p * q).sum();
    let den: f64 = x.iter().map(|q| q * q).sum();
    let lam = num / den;
    let r = ax.iter().zip(x).map(|(p, q)| (p - lam * q).abs()).fold(0.0, f64::max);
    (lam, r / max_abs(x))
}

fn normalize_sup(x: &mut [f64]) {
    let s = max_abs(x);
    x.iter_mut().for_each(|v| *v /= s);
}

/// Shifted power iteration on an operator with nonnegative `apply + shift·I`.
fn power_phase(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    x: &mut Vec<f64>,
    shift: f64,
    tol: f64,
    iters: usize,
) -> (f64, f64, usize) {
    let mut last = residual_of(apply, x);
    for k in 1..=iters {
        let mut y = apply(x);
        y.iter_mut().zip(x.iter()).for_each(|(p, q)| *p += shift * q);
        normalize_sup(&mut y);
        *x = y;
        if k % 10 == 0 || k == iters {
            last = residual_of(apply, x);
            if last.1 <= tol {
                return (last.0, last.1, k);
            }
        }
    }
    (last.0, last.1, iters)
}

/// Perron pair of a dense Metzler matrix (nonnegative off-diagonal).
///
/// Shifted power iteration first; if that has not converged after a short
/// phase, Noda's shift-and-invert iteration with the Collatz–Wielandt upper
/// bound as shift finishes the job.
pub fn perron_metzler(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<PerronPair> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::ShapeMismatch { expected: n, got: a.ncols() });
    }
    if n == 1 {
        return finish(vec![1.0], a[(0, 0)], 0.0, 0);
    }
    let apply = |x: &[f64]| -> Vec<f64> { (a * nalgebra::DVector::from_column_slice(x)).data.into() };
    let shift = (0..n).map(|i| (-a[(i, i)]).max(0.0)).fold(0.0, f64::max);
    let mut x = vec![1.0; n];
    let budget = if n <= DENSE_LIMIT { POWER_PHASE.min(max_iter) } else { max_iter };
    let (mut lam, mut res, mut iters) = power_phase(&apply, &mut x, shift, tol, budget);
    if res <= tol {
        return finish(x, lam, res, iters);
    }
    if n > DENSE_LIMIT {
        return Err(Error::NoConvergence {
            solver: "power iteration",
            iterations: iters,
            residual: res,
        });
    }
    for _ in 0..NODA_MAX {
        let ax = apply(&x);
        let upper = ax
            .iter()
            .zip(&x)
            .map(|(p, q)| p / q)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut shifted = -a.clone();
        for i in 0..n {
            shifted[(i, i)] += upper;
        }
        iters += 1;
        let z = match shifted.lu().solve(&nalgebra::DVector::from_column_slice(&x)) {
            Some(z) if z.iter().all(|v| v.is_finite()) => z,
            _ => break,
        };
        let mut z: Vec<f64> = z.data.into();
        let sign = if z.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        z.iter_mut().for_each(|v| *v *= sign);
        normalize_sup(&mut z);
        if z.iter().any(|&v| v <= 0.0) {
            z.iter_mut().for_each(|v| *v = v.max(f64::MIN_POSITIVE));
        }
        x = z;
        (lam, res) = residual_of(&apply, &x);
        if res <= tol {
            return finish(x, lam, res, iters);
        }
    }
    // Polish with a few power steps in case Noda stalled at the singular shift.
    let (l2, r2, k2) = power_phase(&apply, &mut x, shift, tol, 50);
    if r2 <= tol {
        return finish(x, l2, r2, iters + k2);
    }
    Err(Error::NoConvergence {
        solver: "Perron iteration",
        iterations: iters + k2,
        residual: res.min(r2),
    })
}

/// Perron pair of a nonnegative operator given by its action (power iteration).
pub fn perron_nonnegative(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PerronPair> {
    let mut x = vec![1.0; n];
    let (lam, res, iters) = power_phase(apply, &mut x, 0.0, tol, max_iter);
    if res <= tol {
        finish(x, lam, res, iters)
    } else {
        Err(Error::NoConvergence {
            solver: "power iteration",
            iterations: iters,
            residual: res,
        })
    }
}

fn finish(x: Vec<f64>, value: f64, residual: f64, iterations: usize) -> Result<PerronPair> {
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NoConvergence {
            solver: "Perron iteration (lost positivity)",
            iterations,
            residual,
        });
    }
    Ok(PerronPair {
        value,
        vector: x,
        residual,
        iterations,
    })
}

/// Dense A = εΔ + μ(M̂ − I) + diag(a).
pub fn regularized_operator(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &[f64],
    mu: f64,
    eps: f64,
) -> Result<DMatrix<f64>> {
    let n = grid.len();
    if m.len() != n || a.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: m.len().min(a.len()),
        });
    }
    let mut op = m.weighted_dense() * mu;
    for i in 0..n {
        op[(i, i)] += a[i] - mu;
    }
    if eps > 0.0 {
        for i in 0..n {
            for (j, v) in grid.laplacian().row(i) {
                op[(i, j)] += eps * v;
            }
        }
    }
    Ok(op)
}

fn eigen_impl(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &[f64],
    mu: f64,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralResult> {
    let op = regularized_operator(grid, m, a, mu, eps)?;
    let pp = perron_metzler(&op, tol, max_iter)?;
    let lambda = -pp.value;
    let mut res = SpectralResult {
        lambda,
        identity_defect: grid.integrate(
            &pp.vector
                .iter()
                .zip(a)
                .map(|(p, ai)| (lambda + ai) * p)
                .collect::<Vec<_>>(),
        ),
        phi: pp.vector,
        normalization: Normalization::SupOne,
        residual: pp.residual,
        iterations: pp.iterations,
        n_nodes: grid.len(),
    };
    res.renormalize(grid, Normalization::MassOne, None)?;
    Ok(res)
}

/// Solver controls for the Perron iteration.
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

/// λ₁^ε for εΔ + μ(M⋆· − ·) + a with zero-flux boundary; φ mass-one.
pub fn eigen_regularized(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    mu: f64,
    eps: f64,
    opts: EigenOptions,
) -> Result<SpectralResult> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eigen_regularized needs eps > 0".into()));
    }
    eigen_impl(grid, m, &a.values, mu, eps, opts.tol, opts.max_iter)
}

/// λ₁ for μ(M⋆· − ·) + a on the grid; φ mass-one.
pub fn eigen_nonlocal(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    mu: f64,
    opts: EigenOptions,
) -> Result<SpectralResult> {
    let r = eigen_impl(grid, m, &a.values, mu, 0.0, opts.tol, opts.max_iter)?;
    let bound = -(a.sup_a - mu) + 1e-10;
    if r.lambda > bound {
        return Err(Error::Precondition(format!(
            "Perron value below the largest diagonal entry: λ₁ = {} > {}",
            r.lambda, bound
        )));
    }
    Ok(r)
}

/// γ₁¹ and μ₀ = 1/γ₁¹.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalRate {
    pub gamma1: f64,
    pub mu0: f64,
    pub residual: f64,
    pub iterations: usize,
    pub n_nodes: usize,
}

/// Perron value of 𝓜¹, applied as M·(w̃ ∘ ψ) without forming the matrix.
pub fn gamma1_and_mucrit(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    opts: EigenOptions,
) -> Result<CriticalRate> {
    let sw = singular_weights(grid, a, SingularRule::CellMidpoint)?;
    let apply = |psi: &[f64]| -> Vec<f64> {
        let v = nalgebra::DVector::from_iterator(psi.len(), psi.iter().zip(&sw).map(|(p, w)| p * w));
        (&m.values * v).data.into()
    };
    let pp = perron_nonnegative(&apply, grid.len(), opts.tol * 1e2, opts.max_iter)?;
    Ok(CriticalRate {
        gamma1: pp.value,
        mu0: 1.0 / pp.value,
        residual: pp.residual,
        iterations: pp.iterations,
        n_nodes: grid.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Continuous,
    L1Critical,
    Singular,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Classification {
    pub regime: Regime,
    /// μγ₁¹.
    pub product: f64,
    /// −(sup a − μ) − λ₁; positive means λ₁ lies strictly below the diagonal bound.
    pub lambda_gap: f64,
    /// Whether the gap agrees with the label, up to `gap_band`.
    pub consistent: bool,
}

/// Labels the regime from μγ₁¹ and cross-checks against λ₁. The discrete λ₁
/// sits O(h) below −(sup a − μ) even in the singular regime; `gap_band` absorbs that.
pub fn classify_trichotomy(gamma1: f64, mu: f64, lambda1: f64, sup_a: f64, tol: f64, gap_band: f64) -> Classification {
    let product = mu * gamma1;
    let regime = if (product - 1.0).abs() <= tol {
        Regime::L1Critical
    } else if product > 1.0 {
        Regime::Continuous
    } else {
        Regime::Singular
    };
    let lambda_gap = -(sup_a - mu) - lambda1;
    let consistent = match regime {
        Regime::Continuous => lambda_gap > gap_band,
        Regime::Singular | Regime::L1Critical => lambda_gap <= gap_band,
    };
    Classification {
        regime,
        product,
        lambda_gap,
        consistent,
    }
}

/// Eigenvector with an atom on Ω₀ in the regime μγ₁¹ < 1.
#[derive(Debug, Clone, Serialize)]
pub struct SingularEigen {
    pub lambda: f64,
    pub profile: MeasureProfile,
    pub atom_mass: f64,
    /// ψ = M⋆φ at the nodes.
    pub psi: Vec<f64>,
    /// Cell-harmonic gap w_j / w̃_j: equals sup a − a_j away from Ω₀.
    pub effective_gap: Vec<f64>,
    pub linear_residual: f64,
}

/// Builds φ = φ_ac + s δ_{y₀} from (I − μ𝓜¹)ψ = s M(·, y₀).
///
/// At the Ω₀ node the density is the cell average of μψ/(sup a − a), so that
/// total mass and weak pairings use the same singular quadrature.
pub fn singular_eigenvector(grid: &PhenotypeGrid, m: &KernelMatrix, a: &FitnessProfile, mu: f64) -> Result<SingularEigen> {
    if a.omega0.len() != 1 {
        return Err(Error::Unsupported(format!(
            "Ω₀ has {} nodes; only a single atom is supported",
            a.omega0.len()
        )));
    }
    let y0 = a.omega0[0];
    let sw = singular_weights(grid, a, SingularRule::CellMidpoint)?;
    let rate = gamma1_and_mucrit(grid, m, a, EigenOptions::default())?;
    if mu * rate.gamma1 >= 1.0 {
        return Err(Error::Precondition(format!(
            "no singular eigenvector in this regime: μγ₁¹ = {} ≥ 1",
            mu * rate.gamma1
        )));
    }
    let n = grid.len();
    let mut lhs = m.values.clone();
    for (j, w) in sw.iter().enumerate() {
        lhs.column_mut(j).scale_mut(-mu * w);
    }
    for i in 0..n {
        lhs[(i, i)] += 1.0;
    }
    let rhs = m.values.column(y0).into_owned();
    let psi = lhs
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularSystem("singular eigenvector"))?;
    let linear_residual = max_abs((&lhs * &psi - &rhs).as_slice());
    let psi: Vec<f64> = psi.data.into();

    let w = grid.weights();
    let effective_gap: Vec<f64> = (0..n).map(|j| w[j] / sw[j]).collect();
    let ac: Vec<f64> = (0..n).map(|j| mu * psi[j] / effective_gap[j]).collect();
    let ac_mass = grid.integrate(&ac);
    let total = ac_mass + 1.0;
    let mut profile = MeasureProfile {
        ac,
        atoms: vec![Atom { node: y0, mass: 1.0 }],
    };
    profile.scale(1.0 / total);
    Ok(SingularEigen {
        lambda: -(a.sup_a - mu),
        atom_mass: 1.0 / total,
        psi: psi.iter().map(|p| p / total).collect(),
        effective_gap,
        profile,
        linear_residual,
    })
}

/// Weak eigen-equation defect ∫χ [μ M⋆φ dy − (sup a − a) dφ] for each test χ,
/// with λ = −(sup a − μ) substituted. `gap` carries sup a − a for the density
/// part (use [`SingularEigen::effective_gap`] to match the singular quadrature);
/// atoms see the pointwise gap.
pub fn weak_eigen_residual(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    gap: &[f64],
    mu: f64,
    phi: &MeasureProfile,
    tests: &[Vec<f64>],
) -> Result<f64> {
    let mstar = apply_star(m, phi)?;
    let mut worst: f64 = 0.0;
    for chi in tests {
        let gain = mu * grid.inner(&mstar, chi);
        let density: f64 = (0..grid.len())
            .map(|j| grid.weights()[j] * gap[j] * phi.ac[j] * chi[j])
            .sum();
        let atoms: f64 = phi
            .atoms
            .iter()
            .map(|at| (a.sup_a - a.values[at.node]) * at.mass * chi[at.node])
            .sum();
        worst = worst.max((gain - density - atoms).abs());
    }
    Ok(worst)
}

/// Zero-flux cosine profiles cos(kπ(y − lo)/L) per axis, k < `count`.
pub fn cosine_tests(grid: &PhenotypeGrid, count: usize) -> Vec<Vec<f64>> {
    let b = grid.bounds()[0];
    (0..count)
        .map(|k| {
            grid.sample(|y| (k as f64 * std::f64::consts::PI * (y[0] - b.lo) / b.len()).cos())
        })
        .collect()
}

/// Random smooth test functions: cosine series with decaying random coefficients.
pub fn random_smooth_tests(grid: &PhenotypeGrid, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let basis = cosine_tests(grid, 8);
    (0..count)
        .map(|_| {
            let c: Vec<f64> = (0..8).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect();
            (0..grid.len()).map(|i| basis.iter().zip(&c).map(|(b, ck)| ck * b[i]).sum()).collect()
        })
        .collect()
}

/// c* = 2√(−λ₁).
pub fn minimal_speed(lambda1: f64) -> Result<f64> {
    if !(lambda1 < 0.0) {
        return Err(Error::NoPositiveSpeed(lambda1));
    }
    Ok(2.0 * (-lambda1).sqrt())
}
