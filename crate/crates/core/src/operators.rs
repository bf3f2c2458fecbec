//! Kernels, fitness profiles, model configuration and the singular-weight
//! operator 𝓜¹.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::{Interval, PhenotypeGrid};
use crate::spectral::MeasureProfile;

/// Named preset with free-form parameters, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub preset: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl PresetSpec {
    pub fn new(preset: &str) -> Self {
        Self {
            preset: preset.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::InvalidPreset(format!(
                    "unknown parameter `{k}` for preset `{}`",
                    self.preset
                )));
            }
        }
        Ok(())
    }

    fn num(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| {
                Error::InvalidPreset(format!("parameter `{key}` of `{}` must be a number", self.preset))
            }),
        }
    }

    fn vector(&self, key: &str) -> Result<Vec<f64>> {
        let v = self
            .params
            .get(key)
            .ok_or_else(|| Error::InvalidPreset(format!("preset `{}` needs `{key}`", self.preset)))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::InvalidPreset(format!("parameter `{key}` of `{}`: {e}", self.preset)))
    }

    fn table(&self, key: &str) -> Result<Vec<Vec<f64>>> {
        let v = self
            .params
            .get(key)
            .ok_or_else(|| Error::InvalidPreset(format!("preset `{}` needs `{key}`", self.preset)))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::InvalidPreset(format!("parameter `{key}` of `{}`: {e}", self.preset)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Max-norm eigen-residual target.
    pub eigen: f64,
    pub eigen_max_iter: usize,
    /// Max-norm residual target for Newton solves.
    pub newton: f64,
    pub newton_max_iter: usize,
    /// Relative band around μγ₁¹ = 1 labelled critical.
    pub critical_band: f64,
    /// Relative target for the speed normalization.
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen: 1e-10,
            eigen_max_iter: 100_000,
            newton: 1e-9,
            newton_max_iter: 60,
            critical_band: 1e-6,
            normalization: 1e-6,
        }
    }
}

/// Full model description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub mu: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub beta: f64,
    pub a: PresetSpec,
    #[serde(rename = "M")]
    pub m: PresetSpec,
    #[serde(rename = "K")]
    pub k: PresetSpec,
    #[serde(default)]
    pub wave: WaveSpec,
    #[serde(default)]
    pub tol: Tolerances,
}

impl ModelConfig {
    /// The standard test model on (−1,1): a = 1 − √|y|, uniform M, K ≡ 1.
    pub fn standard(n: usize, mu: f64) -> Self {
        Self {
            grid: GridSpec {
                dim: 1,
                bounds: vec![[-1.0, 1.0]],
                n,
            },
            mu,
            eps: 0.0,
            beta: 0.0,
            a: PresetSpec::new("one_minus_sqrt_abs"),
            m: PresetSpec::new("uniform"),
            k: PresetSpec::new("constant"),
            wave: WaveSpec::default(),
            tol: Tolerances::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu must be positive");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be nonnegative");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if matches!(self.wave.l, Some(l) if !(l > 0.0)) {
            return bad("wave.l must be positive");
        }
        if matches!(self.wave.tau, Some(t) if !(t > 0.0)) {
            return bad("wave.tau must be positive");
        }
        if self.grid.bounds.len() != self.grid.dim {
            return bad("grid.bounds needs one [lo, hi] pair per dimension");
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<PhenotypeGrid> {
        let bounds: Vec<Interval> = self.grid.bounds.iter().map(|b| Interval::new(b[0], b[1])).collect();
        PhenotypeGrid::build(self.grid.dim, &bounds, self.grid.n)
    }

    /// Builds grid and all operators in one go.
    pub fn assemble(&self) -> Result<Model> {
        let grid = self.build_grid()?;
        let (m, k, a) = assemble_kernels(self, &grid)?;
        Ok(Model { grid, m, k, a })
    }
}

/// Grid plus assembled operators.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: PhenotypeGrid,
    pub m: KernelMatrix,
    pub k: KernelMatrix,
    pub a: FitnessProfile,
}

/// Analytic fitness presets, evaluable anywhere in Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum FitnessPreset {
    OneMinusSqrtAbs { peak: f64, scale: f64 },
    OneMinusAbs { peak: f64, scale: f64 },
    OneMinusQuadratic { peak: f64, scale: f64 },
    Constant { value: f64 },
    /// Piecewise-linear in the first coordinate.
    Tabulated { y: Vec<f64>, values: Vec<f64>, integrable: bool },
}

impl FitnessPreset {
    pub fn from_spec(spec: &PresetSpec) -> Result<Self> {
        let ps = |spec: &PresetSpec| -> Result<(f64, f64)> {
            spec.check_keys(&["peak", "scale"])?;
            let scale = spec.num("scale", 1.0)?;
            if !(scale > 0.0) {
                return Err(Error::InvalidPreset(format!("`{}` needs scale > 0", spec.preset)));
            }
            Ok((spec.num("peak", 1.0)?, scale))
        };
        match spec.preset.as_str() {
            "one_minus_sqrt_abs" => ps(spec).map(|(peak, scale)| Self::OneMinusSqrtAbs { peak, scale }),
            "one_minus_abs" => ps(spec).map(|(peak, scale)| Self::OneMinusAbs { peak, scale }),
            "one_minus_quadratic" => ps(spec).map(|(peak, scale)| Self::OneMinusQuadratic { peak, scale }),
            "constant" => {
                spec.check_keys(&["value"])?;
                Ok(Self::Constant {
                    value: spec.num("value", 1.0)?,
                })
            }
            "tabulated" => {
                spec.check_keys(&["y", "values", "integrable"])?;
                let y = spec.vector("y")?;
                let values = spec.vector("values")?;
                if y.len() != values.len() || y.len() < 2 {
                    return Err(Error::InvalidPreset("tabulated a needs matching y/values, length ≥ 2".into()));
                }
                if y.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPreset("tabulated a needs increasing y".into()));
                }
                let integrable = match spec.params.get("integrable") {
                    None => false,
                    Some(v) => v
                        .as_bool()
                        .ok_or_else(|| Error::InvalidPreset("`integrable` must be a boolean".into()))?,
                };
                Ok(Self::Tabulated { y, values, integrable })
            }
            other => Err(Error::InvalidPreset(format!("unknown fitness preset `{other}`"))),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().map(|c| c * c).sum();
        match self {
            Self::OneMinusSqrtAbs { peak, scale } => peak - scale * r2.sqrt().sqrt(),
            Self::OneMinusAbs { peak, scale } => peak - scale * r2.sqrt(),
            Self::OneMinusQuadratic { peak, scale } => peak - scale * r2,
            Self::Constant { value } => *value,
            Self::Tabulated { y: ys, values, .. } => interpolate(ys, values, y[0]),
        }
    }

    /// Whether 1/(sup a − a) is integrable near its maximizer. For the power
    /// presets sup a − a ~ |y|^p, integrable iff p < dim.
    pub fn integrable(&self, dim: usize) -> bool {
        let d = dim as f64;
        match self {
            Self::OneMinusSqrtAbs { .. } => 0.5 < d,
            Self::OneMinusAbs { .. } => 1.0 < d,
            Self::OneMinusQuadratic { .. } => 2.0 < d,
            Self::Constant { .. } => false,
            Self::Tabulated { integrable, .. } => *integrable,
        }
    }
}

fn interpolate(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return vs[0];
    }
    if x >= xs[xs.len() - 1] {
        return vs[vs.len() - 1];
    }
    let k = xs.partition_point(|&p| p <= x) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    vs[k] + t * (vs[k + 1] - vs[k])
}

/// Fitness sampled on the grid.
#[derive(Debug, Clone)]
pub struct FitnessProfile {
    pub values: Vec<f64>,
    pub sup_a: f64,
    pub inf_a: f64,
    /// Nodes within 1e−12 of the maximum.
    pub omega0: Vec<usize>,
    pub integrable: bool,
    pub preset: Option<FitnessPreset>,
}

impl FitnessProfile {
    pub fn from_preset(grid: &PhenotypeGrid, preset: FitnessPreset) -> Self {
        let values = grid.sample(|y| preset.eval(y));
        let integrable = preset.integrable(grid.dim());
        let mut p = Self::from_values(values);
        p.integrable = integrable;
        p.preset = Some(preset);
        p
    }

    /// Node values only; no off-grid evaluation, integrability flag unset.
    pub fn from_values(values: Vec<f64>) -> Self {
        let sup_a = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inf_a = values.iter().copied().fold(f64::INFINITY, f64::min);
        let omega0 = (0..values.len()).filter(|&i| values[i] >= sup_a - 1e-12).collect();
        Self {
            values,
            sup_a,
            inf_a,
            omega0,
            integrable: false,
            preset: None,
        }
    }

    /// Evaluates off-grid through the preset.
    pub fn eval(&self, y: &[f64]) -> Option<f64> {
        self.preset.as_ref().map(|p| p.eval(y))
    }

    pub fn is_constant(&self) -> bool {
        self.sup_a - self.inf_a <= 1e-12
    }

    /// Truncated fitness min(a, sup a − δ), sampled at the nodes.
    pub fn truncated(&self, delta: f64) -> Self {
        let cap = self.sup_a - delta;
        Self::from_values(self.values.iter().map(|&v| v.min(cap)).collect())
    }

    /// a + c, keeping preset-free node values.
    pub fn shifted(&self, c: f64) -> Self {
        let mut p = Self::from_values(self.values.iter().map(|v| v + c).collect());
        p.integrable = self.integrable;
        p
    }
}

/// Which kernel a matrix samples; used in messages and to gate operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KernelKind {
    Mutation,
    Competition,
}

/// Kernel sampled at node pairs, entry (i,j) = kernel(y_i, y_j), together with
/// the quadrature weights that turn it into an operator.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub kind: KernelKind,
    pub values: DMatrix<f64>,
    weights: Vec<f64>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub normalized: bool,
    /// Max |Σ_i w_i M_ij − 1| before renormalization (mutation kernel only).
    pub pre_normalization_deviation: Option<f64>,
    /// z-profile when the kernel does not depend on y.
    pub z_profile: Option<Vec<f64>>,
}

impl KernelMatrix {
    fn new(kind: KernelKind, values: DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        let name = match kind {
            KernelKind::Mutation => "M",
            KernelKind::Competition => "K",
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                let v = values[(i, j)];
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::KernelPositivity {
                        kernel: name,
                        i,
                        j,
                        value: v,
                    });
                }
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok(Self {
            kind,
            values,
            weights: weights.to_vec(),
            lower_bound: lo,
            upper_bound: hi,
            normalized: false,
            pre_normalization_deviation: None,
            z_profile: None,
        })
    }

    /// Builds a mutation kernel from samples and renormalizes its columns.
    pub fn mutation(values: DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        let mut km = Self::new(KernelKind::Mutation, values, weights)?;
        let mut dev: f64 = 0.0;
        for j in 0..km.values.ncols() {
            let s: f64 = (0..km.values.nrows()).map(|i| weights[i] * km.values[(i, j)]).sum();
            dev = dev.max((s - 1.0).abs());
            km.values.column_mut(j).scale_mut(1.0 / s);
        }
        km.lower_bound = km.values.min();
        km.upper_bound = km.values.max();
        km.normalized = true;
        km.pre_normalization_deviation = Some(dev);
        Ok(km)
    }

    pub fn competition(values: DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        Self::new(KernelKind::Competition, values, weights)
    }

    /// Competition kernel K(y,z) = g(z).
    pub fn separable_competition(profile: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let n = profile.len();
        let values = DMatrix::from_fn(n, n, |_, j| profile[j]);
        let mut k = Self::competition(values, weights)?;
        k.z_profile = Some(profile);
        Ok(k)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Σ_j k_ij w_j g_j for a node density g.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_len(g.len())?;
        if let Some(zp) = &self.z_profile {
            let s: f64 = (0..g.len()).map(|j| zp[j] * self.weights[j] * g[j]).sum();
            return Ok(vec![s; g.len()]);
        }
        let wg = DVector::from_iterator(g.len(), g.iter().zip(&self.weights).map(|(a, b)| a * b));
        Ok((&self.values * wg).data.into())
    }

    /// Transposed pairing: out_j = Σ_i w_i k_ij ψ_i.
    pub fn apply_transpose(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_len(psi.len())?;
        let wp = DVector::from_iterator(psi.len(), psi.iter().zip(&self.weights).map(|(a, b)| a * b));
        Ok((self.values.tr_mul(&wp)).data.into())
    }

    /// The discrete operator K W as a dense matrix.
    pub fn weighted_dense(&self) -> DMatrix<f64> {
        let mut m = self.values.clone();
        for (j, w) in self.weights.iter().enumerate() {
            m.column_mut(j).scale_mut(*w);
        }
        m
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut k = self.clone();
        if !(factor > 0.0) {
            return Err(Error::Precondition("kernel scale must be positive".into()));
        }
        k.values *= factor;
        k.lower_bound *= factor;
        k.upper_bound *= factor;
        if let Some(zp) = &mut k.z_profile {
            zp.iter_mut().for_each(|v| *v *= factor);
        }
        Ok(k)
    }
}

/// (f⋆g)(y_i) for a measure g with density and atoms; linear in g.
pub fn apply_star(kernel: &KernelMatrix, g: &MeasureProfile) -> Result<Vec<f64>> {
    let mut out = kernel.apply(&g.ac)?;
    for atom in &g.atoms {
        if atom.node >= kernel.len() {
            return Err(Error::ShapeMismatch {
                expected: kernel.len(),
                got: atom.node + 1,
            });
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += kernel.value(i, atom.node) * atom.mass;
        }
    }
    Ok(out)
}

fn build_mutation(spec: &PresetSpec, grid: &PhenotypeGrid) -> Result<KernelMatrix> {
    let n = grid.len();
    let values = match spec.preset.as_str() {
        "uniform" => {
            spec.check_keys(&[])?;
            DMatrix::from_element(n, n, 1.0 / grid.volume())
        }
        "gaussian_renormalized" => {
            spec.check_keys(&["sigma"])?;
            let sigma = spec.num("sigma", 0.2)?;
            if !(sigma > 0.0) {
                return Err(Error::InvalidPreset("gaussian sigma must be positive".into()));
            }
            let d = grid.dim() as i32;
            let c = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.5 * d as f64);
            DMatrix::from_fn(n, n, |i, j| {
                let r2: f64 = grid.node(i).iter().zip(grid.node(j)).map(|(p, q)| (p - q).powi(2)).sum();
                c * (-0.5 * r2 / (sigma * sigma)).exp()
            })
        }
        "tabulated" => {
            spec.check_keys(&["values"])?;
            tabulated_matrix(&spec.table("values")?, n)?
        }
        other => return Err(Error::InvalidPreset(format!("unknown mutation preset `{other}`"))),
    };
    KernelMatrix::mutation(values, grid.weights())
}

fn build_competition(spec: &PresetSpec, grid: &PhenotypeGrid) -> Result<KernelMatrix> {
    let n = grid.len();
    let w = grid.weights();
    match spec.preset.as_str() {
        "constant" => {
            spec.check_keys(&["value"])?;
            let v = spec.num("value", 1.0)?;
            KernelMatrix::separable_competition(vec![v; n], w)
        }
        "y_independent" => {
            spec.check_keys(&["base", "slope", "curvature"])?;
            let (b, s, q) = (spec.num("base", 1.0)?, spec.num("slope", 0.0)?, spec.num("curvature", 0.0)?);
            let prof = grid.sample(|z| b + s * z[0] + q * z.iter().map(|c| c * c).sum::<f64>());
            KernelMatrix::separable_competition(prof, w)
        }
        "trait_dependent" => {
            spec.check_keys(&["base", "y_slope", "z_slope"])?;
            let (b, ys, zs) = (spec.num("base", 1.0)?, spec.num("y_slope", 0.0)?, spec.num("z_slope", 0.0)?);
            let values = DMatrix::from_fn(n, n, |i, j| b + ys * grid.norm(i) + zs * grid.norm(j));
            KernelMatrix::competition(values, w)
        }
        "general_tabulated" => {
            spec.check_keys(&["values"])?;
            KernelMatrix::competition(tabulated_matrix(&spec.table("values")?, n)?, w)
        }
        other => Err(Error::InvalidPreset(format!("unknown competition preset `{other}`"))),
    }
}

fn tabulated_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: n * n,
            got: rows.iter().map(Vec::len).sum(),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Samples M, K and a on the grid; M columns are renormalized.
pub fn assemble_kernels(
    config: &ModelConfig,
    grid: &PhenotypeGrid,
) -> Result<(KernelMatrix, KernelMatrix, FitnessProfile)> {
    let m = build_mutation(&config.m, grid)?;
    let k = build_competition(&config.k, grid)?;
    let a = FitnessProfile::from_preset(grid, FitnessPreset::from_spec(&config.a)?);
    Ok((m, k, a))
}

/// How the weight 1/(sup a − a) is integrated across Ω₀ nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularRule {
    /// Ω₀ nodes are given the weight's values at the centers of their half-cells.
    #[default]
    CellMidpoint,
    /// Fail if any node lies in Ω₀.
    Reject,
}

/// Quadrature weights w̃_j/(sup a − a(y_j)) of the operator 𝓜¹.
pub fn singular_weights(grid: &PhenotypeGrid, a: &FitnessProfile, rule: SingularRule) -> Result<Vec<f64>> {
    if a.is_constant() {
        return Err(Error::Precondition("fitness must be non-constant".into()));
    }
    if !a.integrable {
        return Err(Error::NotIntegrable(
            "1/(sup a − a) is not integrable for this fitness".into(),
        ));
    }
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let gap = a.sup_a - a.values[j];
        if a.omega0.contains(&j) {
            if rule == SingularRule::Reject {
                return Err(Error::Precondition(format!(
                    "node {j} lies in Ω₀ and no singular rule was given"
                )));
            }
            let mut s = 0.0;
            for (center, vol) in grid.subcells(j) {
                let v = a.eval(&center).ok_or_else(|| {
                    Error::Precondition("singular rule needs a fitness preset evaluable off-grid".into())
                })?;
                let g = a.sup_a - v;
                if !(g > 0.0) {
                    return Err(Error::NotIntegrable(format!("sup a − a vanishes near node {j}")));
                }
                s += vol / g;
            }
            out.push(s);
        } else {
            out.push(grid.weights()[j] / gap);
        }
    }
    Ok(out)
}

/// Dense 𝓜¹ with entry (i,j) = M(y_i,y_j)·w̃_j/(sup a − a(y_j)).
pub fn assemble_m1(
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    a: &FitnessProfile,
    rule: SingularRule,
) -> Result<DMatrix<f64>> {
    let sw = singular_weights(grid, a, rule)?;
    let mut out = m.values.clone();
    for (j, w) in sw.iter().enumerate() {
        out.column_mut(j).scale_mut(*w);
    }
    Ok(out)
}

/// One line of the assumption report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Checks the standing hypotheses on the sampled model. Never fails.
pub fn check_assumptions(
    mu: f64,
    grid: &PhenotypeGrid,
    m: &KernelMatrix,
    k: &KernelMatrix,
    a: &FitnessProfile,
) -> AssumptionReport {
    let mut checks = Vec::new();
    let mut push = |name, margin: f64, pass: bool| checks.push(AssumptionCheck { name, pass, margin });

    push("mutation kernel positive", m.lower_bound, m.lower_bound > 0.0);
    let col_dev = (0..m.len())
        .map(|j| ((0..m.len()).map(|i| m.weights()[i] * m.value(i, j)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    push("mutation kernel normalized", -col_dev, col_dev <= 1e-12);
    push("competition kernel positive", k.lower_bound, k.lower_bound > 0.0);
    push("mutation rate positive", mu, mu > 0.0);
    push("fitness maximum positive", a.sup_a, a.sup_a > 0.0);
    push("fitness non-constant", a.sup_a - a.inf_a, a.sup_a - a.inf_a > 1e-12);
    let interior = a.omega0.iter().all(|&i| !grid.is_boundary(i));
    push("maximizers interior", if interior { 0.0 } else { -1.0 }, interior && !a.omega0.is_empty());
    let sup_boundary = (0..grid.len())
        .filter(|&i| grid.is_boundary(i))
        .map(|i| a.values[i].max(0.0))
        .fold(0.0, f64::max);
    let gap = a.sup_a - sup_boundary - mu;
    push("mutation rate below boundary fitness gap", gap, gap > 0.0);
    push("singular weight integrable", 0.0, a.integrable);
    let anchor = grid.anchor();
    let mut dom = f64::INFINITY;
    for j in 0..k.len() {
        let k0 = k.value(anchor, j);
        for i in 0..k.len() {
            dom = dom.min(k.value(i, j) - k0);
        }
    }
    push("competition minimal at the fittest trait", dom, dom >= -1e-14);
    AssumptionReport { checks }
}
