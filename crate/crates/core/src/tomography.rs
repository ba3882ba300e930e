//! Two-qubit frequency-bin tomography.
//!
//! Sixteen projections built from the single-photon settings `|1⟩`, `|2⟩`,
//! `|+⟩` and `|L⟩` are recorded over up to four shaper phase configurations
//! each. The summed counts feed a maximum-likelihood fit over a Cholesky
//! parameterization, which keeps every candidate physical.
//!
//! A projection's coefficient vector lists the weights the apparatus applies
//! to each two-photon bin before detection, so the detected amplitude is
//! `Σ cᵢ·ψᵢ` and the predicted probability is `Σᵢⱼ cᵢ·ρᵢⱼ·cⱼ*`.

use std::cell::Cell;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Phase the first shaper puts on the second bin of one photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShaperPhase {
    Zero,
    /// π/2
    Quarter,
}

impl ShaperPhase {
    pub fn radians(self) -> f64 {
        match self {
            ShaperPhase::Zero => 0.0,
            ShaperPhase::Quarter => std::f64::consts::FRAC_PI_2,
        }
    }
}

/// One (φ_S, φ_I) column of the measurement table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub signal: ShaperPhase,
    pub idler: ShaperPhase,
}

impl PhaseConfig {
    /// Column order (0,0), (0,π/2), (π/2,0), (π/2,π/2).
    pub const ALL: [PhaseConfig; 4] = [
        PhaseConfig::new(ShaperPhase::Zero, ShaperPhase::Zero),
        PhaseConfig::new(ShaperPhase::Zero, ShaperPhase::Quarter),
        PhaseConfig::new(ShaperPhase::Quarter, ShaperPhase::Zero),
        PhaseConfig::new(ShaperPhase::Quarter, ShaperPhase::Quarter),
    ];

    pub const fn new(signal: ShaperPhase, idler: ShaperPhase) -> Self {
        Self { signal, idler }
    }

    pub fn column(self) -> usize {
        2 * (self.signal == ShaperPhase::Quarter) as usize + (self.idler == ShaperPhase::Quarter) as usize
    }
}

/// Single-photon projection setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitSetting {
    One,
    Two,
    /// `(|1⟩ + |2⟩)/√2`
    Plus,
    /// `(|1⟩ + i|2⟩)/√2`
    L,
}

impl QubitSetting {
    pub fn vector(self) -> [Complex64; 2] {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            QubitSetting::One => [ONE, ZERO],
            QubitSetting::Two => [ZERO, ONE],
            QubitSetting::Plus => [h, h],
            QubitSetting::L => [h, Complex64::new(0.0, FRAC_1_SQRT_2)],
        }
    }

    /// Shaper phases under which this setting is recorded. Single-bin
    /// settings ignore the phase, so both columns contribute.
    pub fn phases(self) -> &'static [ShaperPhase] {
        match self {
            QubitSetting::One | QubitSetting::Two => &[ShaperPhase::Zero, ShaperPhase::Quarter],
            QubitSetting::Plus => &[ShaperPhase::Zero],
            QubitSetting::L => &[ShaperPhase::Quarter],
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            QubitSetting::One => "1",
            QubitSetting::Two => "2",
            QubitSetting::Plus => "+",
            QubitSetting::L => "L",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s.trim() {
            "1" => Some(QubitSetting::One),
            "2" => Some(QubitSetting::Two),
            "+" => Some(QubitSetting::Plus),
            "L" => Some(QubitSetting::L),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    /// ν, 1-based.
    pub label: usize,
    pub signal: QubitSetting,
    pub idler: QubitSetting,
    /// Weights on (|11⟩, |12⟩, |21⟩, |22⟩).
    pub coefficients: [Complex64; 4],
    pub phase_configs: Vec<PhaseConfig>,
}

impl ProjectionSpec {
    pub fn new(label: usize, signal: QubitSetting, idler: QubitSetting) -> Self {
        let s = signal.vector();
        let i = idler.vector();
        let coefficients = [s[0] * i[0], s[0] * i[1], s[1] * i[0], s[1] * i[1]];
        let mut phase_configs = Vec::new();
        for &ps in signal.phases() {
            for &pi in idler.phases() {
                phase_configs.push(PhaseConfig::new(ps, pi));
            }
        }
        phase_configs.sort();
        Self {
            label,
            signal,
            idler,
            coefficients,
            phase_configs,
        }
    }

    /// `Σᵢⱼ cᵢ·ρᵢⱼ·cⱼ*`
    pub fn probability(&self, rho: &DMatrix<Complex64>) -> f64 {
        let c = &self.coefficients;
        let mut p = ZERO;
        for i in 0..4 {
            for j in 0..4 {
                p += c[i] * rho[(i, j)] * c[j].conj();
            }
        }
        p.re
    }

    fn probability4(&self, rho: &Matrix4<Complex64>) -> f64 {
        let c = &self.coefficients;
        let mut p = 0.0;
        for i in 0..4 {
            p += c[i].norm_sqr() * rho[(i, i)].re;
            for j in i + 1..4 {
                p += 2.0 * (c[i] * rho[(i, j)] * c[j].conj()).re;
            }
        }
        p
    }
}

/// Signal/idler settings of the sixteen projections, in table order.
pub const PROJECTION_ORDER: [(QubitSetting, QubitSetting); 16] = {
    use QubitSetting::*;
    [
        (One, One),
        (One, Two),
        (Two, One),
        (Two, Two),
        (Two, Plus),
        (One, Plus),
        (Plus, Plus),
        (L, Plus),
        (L, One),
        (L, Two),
        (L, L),
        (One, L),
        (Two, L),
        (Plus, L),
        (Plus, One),
        (Plus, Two),
    ]
};

/// The sixteen two-qubit projections (36 phase-configuration slots in total).
pub fn build_projection_set() -> Vec<ProjectionSpec> {
    PROJECTION_ORDER
        .iter()
        .enumerate()
        .map(|(i, &(s, idl))| ProjectionSpec::new(i + 1, s, idl))
        .collect()
}

/// Per-configuration counts of one projection, indexed by
/// [`PhaseConfig::column`]; `None` where the configuration is not recorded.
pub type RawRow = [Option<f64>; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyData {
    /// n_ν for ν = 1..16.
    pub counts: [f64; 16],
    /// C = n₁ + n₂ + n₃ + n₄.
    pub normalization: f64,
}

impl TomographyData {
    pub fn from_counts(counts: [f64; 16]) -> Result<Self> {
        if counts.iter().any(|&n| !(n.is_finite() && n >= 0.0)) {
            return Err(Error::InvalidInput("projection counts must be non-negative".into()));
        }
        Ok(Self {
            counts,
            normalization: counts[..4].iter().sum(),
        })
    }

    /// Expected counts for `rho` with normalization `c_total`.
    pub fn expected(rho: &DensityMatrix, projections: &[ProjectionSpec], c_total: f64) -> Result<Self> {
        check_dim(rho, 4)?;
        if projections.len() != 16 {
            return Err(Error::DimensionMismatch {
                expected: 16,
                actual: projections.len(),
            });
        }
        let mut counts = [0.0; 16];
        for (n, p) in counts.iter_mut().zip(projections) {
            *n = (c_total * p.probability(rho.matrix())).max(0.0);
        }
        Self::from_counts(counts)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut counts = self.counts;
        counts.iter_mut().for_each(|n| *n *= factor);
        Self {
            counts,
            normalization: self.normalization * factor,
        }
    }
}

/// Sums each projection's recorded configurations, enforcing the pattern of
/// which configurations each projection uses.
pub fn tally_projection_counts(raw: &[RawRow], projections: &[ProjectionSpec]) -> Result<TomographyData> {
    if raw.len() != projections.len() || projections.len() != 16 {
        return Err(Error::IncompleteData(format!(
            "expected 16 projection rows, got {}",
            raw.len()
        )));
    }
    let mut counts = [0.0; 16];
    for ((row, proj), n) in raw.iter().zip(projections).zip(counts.iter_mut()) {
        for cfg in PhaseConfig::ALL {
            let wanted = proj.phase_configs.contains(&cfg);
            match (row[cfg.column()], wanted) {
                (Some(v), true) => {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "projection {} has negative count {v}",
                            proj.label
                        )));
                    }
                    *n += v;
                }
                (None, true) => {
                    return Err(Error::IncompleteData(format!(
                        "projection {} is missing configuration column {}",
                        proj.label,
                        cfg.column() + 1
                    )))
                }
                (Some(_), false) => {
                    return Err(Error::InvalidInput(format!(
                        "projection {} records configuration column {} which it does not use",
                        proj.label,
                        cfg.column() + 1
                    )))
                }
                (None, false) => {}
            }
        }
    }
    TomographyData::from_counts(counts)
}

/// Hermitian, positive semidefinite, unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Default tolerance on Hermiticity, trace and eigenvalue bounds.
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        Self::with_tolerance(matrix, Self::TOLERANCE)
    }

    /// Validates with a looser tolerance, for matrices printed to finite
    /// precision.
    pub fn with_tolerance(matrix: DMatrix<Complex64>, tol: f64) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::InvalidState("density matrix must be square and non-empty".into()));
        }
        let herm_err = (&matrix - matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let herm_tol = if tol <= Self::TOLERANCE { 1e-10 } else { tol };
        if herm_err > herm_tol {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm_err:e})")));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > tol || trace.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {trace} is not one")));
        }
        let hermitian = hermitize(&matrix);
        let eig = hermitian.symmetric_eigenvalues();
        if let Some(bad) = eig.iter().find(|&&l| l < -tol || l > 1.0 + tol) {
            return Err(Error::InvalidState(format!("eigenvalue {bad:e} outside [0, 1]")));
        }
        Ok(Self { matrix })
    }

    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let v = DVector::from_column_slice(psi);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let v = v / Complex64::new(norm, 0.0);
        Self::new(&v * v.adjoint())
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim) / Complex64::new(dim as f64, 0.0),
        }
    }

    /// `(|11⟩ + |22⟩)/√2`
    pub fn bell() -> Self {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self::pure(&[h, ZERO, ZERO, h]).expect("valid Bell state")
    }

    /// Tensor product `a ⊗ b`.
    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Self {
        Self {
            matrix: a.matrix.kronecker(&b.matrix),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = hermitize(&self.matrix).symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    /// `U·ρ·U†`
    pub fn transform(&self, unitary: &DMatrix<Complex64>) -> Result<Self> {
        if unitary.nrows() != self.dim() || unitary.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: unitary.nrows(),
            });
        }
        Ok(Self {
            matrix: unitary * &self.matrix * unitary.adjoint(),
        })
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> Result<f64> {
        check_dim(other, self.dim())?;
        Ok((&self.matrix - &other.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max))
    }
}

impl fmt::Display for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                let z = self.matrix[(r, c)];
                write!(f, "{:>8.4}{:+.4}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn hermitize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn check_dim(rho: &DensityMatrix, dim: usize) -> Result<()> {
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: rho.dim(),
        });
    }
    Ok(())
}

/// Predicted-probability floor in the likelihood denominator.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `Σ_ν (C·p_ν − n_ν)² / (2·C·p_ν)` with `p_ν = ⟨Ψ_ν|ρ|Ψ_ν⟩`.
pub fn likelihood(rho: &DensityMatrix, data: &TomographyData, projections: &[ProjectionSpec]) -> Result<f64> {
    check_dim(rho, 4)?;
    if projections.len() != 16 {
        return Err(Error::DimensionMismatch {
            expected: 16,
            actual: projections.len(),
        });
    }
    let m = Matrix4::from_fn(|r, c| rho.matrix[(r, c)]);
    Ok(likelihood4(&m, data, projections))
}

fn likelihood4(rho: &Matrix4<Complex64>, data: &TomographyData, projections: &[ProjectionSpec]) -> f64 {
    let c = data.normalization;
    projections
        .iter()
        .zip(&data.counts)
        .map(|(p, &n)| {
            let prob = p.probability4(rho);
            if n == 0.0 && prob <= 0.0 {
                return 0.0;
            }
            let predicted = c * prob.max(PROBABILITY_FLOOR);
            (predicted - n).powi(2) / (2.0 * predicted)
        })
        .sum()
}

/// Number of real parameters of the 4×4 Cholesky factor.
const N_PARAMS: usize = 16;
const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 1), (3, 2), (2, 0), (3, 1), (3, 0)];

/// Lower-triangular `T` from 4 real diagonal and 6 complex off-diagonal
/// parameters.
fn factor_from_params(t: &[f64]) -> Matrix4<Complex64> {
    let mut m = Matrix4::zeros();
    for i in 0..4 {
        m[(i, i)] = Complex64::new(t[i], 0.0);
    }
    for (k, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        m[(r, c)] = Complex64::new(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

/// `T†T / Tr(T†T)`, or `None` for the all-zero factor.
fn rho_from_params(t: &[f64]) -> Option<Matrix4<Complex64>> {
    let f = factor_from_params(t);
    let rho = f.adjoint() * f;
    let tr = rho.trace().re;
    (tr > 0.0 && tr.is_finite()).then(|| rho / Complex64::new(tr, 0.0))
}

/// Parameters with `T†T = rho` for a positive-definite `rho`.
fn params_from_rho(rho: &Matrix4<Complex64>) -> Option<[f64; N_PARAMS]> {
    // Cholesky of the index-reversed matrix gives the lower-triangular factor
    // in the T†T orientation.
    let rev = Matrix4::from_fn(|r, c| rho[(3 - r, 3 - c)]);
    let l = rev.cholesky()?.l();
    let upper = Matrix4::from_fn(|r, c| l[(3 - r, 3 - c)]);
    let t = upper.adjoint();
    let mut p = [0.0; N_PARAMS];
    for i in 0..4 {
        p[i] = t[(i, i)].re;
    }
    for (k, &(r, c)) in OFF_DIAGONAL.iter().enumerate() {
        p[4 + 2 * k] = t[(r, c)].re;
        p[5 + 2 * k] = t[(r, c)].im;
    }
    Some(p)
}

/// Linear-inversion estimate, eigenvalue-clipped to a physical state and
/// mixed with a little white noise so its Cholesky factor exists.
fn linear_inversion(data: &TomographyData, projections: &[ProjectionSpec]) -> Option<Matrix4<Complex64>> {
    if data.normalization <= 0.0 {
        return None;
    }
    // unknowns: ρ₀₀..ρ₃₃ (real), then Re/Im of ρᵢⱼ for i<j
    let mut pairs = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            pairs.push((i, j));
        }
    }
    let mut a = DMatrix::<f64>::zeros(16, 16);
    let mut b = DVector::<f64>::zeros(16);
    for (row, (p, &n)) in projections.iter().zip(&data.counts).enumerate() {
        let c = &p.coefficients;
        for i in 0..4 {
            a[(row, i)] = c[i].norm_sqr();
        }
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let w = c[i] * c[j].conj();
            a[(row, 4 + 2 * k)] = 2.0 * w.re;
            a[(row, 5 + 2 * k)] = -2.0 * w.im;
        }
        b[row] = n / data.normalization;
    }
    let x = a.lu().solve(&b)?;
    let mut rho = Matrix4::<Complex64>::zeros();
    for i in 0..4 {
        rho[(i, i)] = Complex64::new(x[i], 0.0);
    }
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let z = Complex64::new(x[4 + 2 * k], x[5 + 2 * k]);
        rho[(i, j)] = z;
        rho[(j, i)] = z.conj();
    }
    let eig = rho.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let v = &eig.eigenvectors;
    let mut out = Matrix4::<Complex64>::zeros();
    for (k, &l) in clipped.iter().enumerate() {
        let col = v.column(k);
        out += col * col.adjoint() * Complex64::new(l / total, 0.0);
    }
    let eps = 1e-3;
    Some(out * Complex64::new(1.0 - eps, 0.0) + Matrix4::identity() * Complex64::new(eps / 4.0, 0.0))
}

/// Settings of the maximum-likelihood search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Restarts from random Cholesky factors, on top of the one seeded from
    /// linear inversion.
    pub random_restarts: usize,
    pub seed: u64,
    /// Stop once a full simplex sweep improves the likelihood by less than this.
    pub tolerance: f64,
    /// Evaluation budget per restart.
    pub max_evaluations: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            random_restarts: 8,
            seed: 0x5eed,
            tolerance: 1e-10,
            max_evaluations: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub likelihood: f64,
    /// Restarts (including the seeded one) that met the tolerance.
    pub converged_restarts: usize,
    pub evaluations: usize,
}

/// Maximum-likelihood density matrix for two-qubit projection data.
pub fn mle_estimate(data: &TomographyData, projections: &[ProjectionSpec], opts: &MleOptions) -> Result<MleResult> {
    if projections.len() != 16 {
        return Err(Error::DimensionMismatch {
            expected: 16,
            actual: projections.len(),
        });
    }
    if !(data.normalization > 0.0) {
        return Err(Error::InvalidInput(
            "normalization C is zero: the first four projections recorded no counts".into(),
        ));
    }
    let objective = |t: &[f64]| match rho_from_params(t) {
        Some(rho) => likelihood4(&rho, data, projections),
        None => f64::INFINITY,
    };

    let mut starts: Vec<[f64; N_PARAMS]> = Vec::new();
    if let Some(p) = linear_inversion(data, projections).and_then(|r| params_from_rho(&r)) {
        starts.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.random_restarts {
        let mut p = [0.0; N_PARAMS];
        for v in p.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        starts.push(p);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = 0;
    let mut evaluations = 0;
    for start in &starts {
        let run = minimize_with_sweeps(&objective, start, opts.tolerance, opts.max_evaluations);
        evaluations += run.evaluations;
        converged += run.converged as usize;
        if best.as_ref().is_none_or(|(f, _)| run.value < *f) {
            best = Some((run.value, run.point));
        }
    }
    let (value, point) = best.expect("at least one restart");
    let rho4 = rho_from_params(&point).expect("finite optimum");
    let rho = DensityMatrix {
        matrix: hermitize(&DMatrix::from_fn(4, 4, |r, c| rho4[(r, c)])),
    };
    if converged == 0 {
        return Err(Error::NonConvergence {
            restarts: starts.len(),
            best_likelihood: value,
            best: Box::new(rho),
        });
    }
    Ok(MleResult {
        rho,
        likelihood: value,
        converged_restarts: converged,
        evaluations,
    })
}

struct Minimum {
    point: Vec<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
}

/// Repeated Nelder–Mead sweeps, each from a fresh simplex around the
/// previous optimum, until a sweep improves by less than `tol`.
fn minimize_with_sweeps(f: &impl Fn(&[f64]) -> f64, start: &[f64], tol: f64, budget: usize) -> Minimum {
    let mut point = start.to_vec();
    let mut value = f(&point);
    let mut used = 1;
    let mut converged = false;
    while used < budget {
        let (p, v, n) = nelder_mead(f, &point, budget - used);
        used += n;
        let gain = value - v;
        if v < value {
            point = p;
            value = v;
        }
        if gain < tol {
            converged = true;
            break;
        }
    }
    Minimum {
        point,
        value,
        evaluations: used,
        converged,
    }
}

struct Objective<'a, F: Fn(&[f64]) -> f64> {
    f: &'a F,
    calls: Cell<usize>,
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        self.calls.set(self.calls.get() + 1);
        Ok((self.f)(p))
    }
}

/// One Nelder–Mead run from a fresh simplex around `start`, with the
/// dimension-dependent expansion and shrink coefficients.
fn nelder_mead(f: &impl Fn(&[f64]) -> f64, start: &[f64], budget: usize) -> (Vec<f64>, f64, usize) {
    let n = start.len();
    let nf = n as f64;
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += 0.1 * v[i].abs().max(0.05);
        simplex.push(v);
    }
    let fallback = || (start.to_vec(), f(start), 1);
    let solver = match NelderMead::new(simplex)
        .with_sd_tolerance(1e-14)
        .and_then(|s| s.with_gamma(1.0 + 2.0 / nf))
        .and_then(|s| s.with_rho(0.5))
        .and_then(|s| s.with_sigma(1.0 - 1.0 / nf))
    {
        Ok(s) => s,
        Err(_) => return fallback(),
    };
    let objective = Objective { f, calls: Cell::new(0) };
    let iters = (budget / 2).max(1) as u64;
    let run = Executor::new(objective, solver).configure(|state| state.max_iters(iters)).run();
    match run {
        Ok(res) => {
            let calls = res.problem.problem.as_ref().map_or(0, |o| o.calls.get());
            let state = res.state();
            match state.get_best_param() {
                Some(p) => (p.clone(), state.get_best_cost(), calls),
                None => fallback(),
            }
        }
        Err(_) => fallback(),
    }
}

/// Partial transpose on the second (idler) factor.
pub fn partial_transpose(rho: &DMatrix<Complex64>, dims: (usize, usize)) -> Result<DMatrix<Complex64>> {
    let (ds, di) = dims;
    if ds * di != rho.nrows() || !rho.is_square() {
        return Err(Error::DimensionMismatch {
            expected: ds * di,
            actual: rho.nrows(),
        });
    }
    Ok(DMatrix::from_fn(ds * di, ds * di, |r, c| {
        let (a, b) = (r / di, r % di);
        let (a2, b2) = (c / di, c % di);
        rho[(a * di + b2, a2 * di + b)]
    }))
}

/// Σ (|λ| − λ)/2 over the eigenvalues of the partial transpose.
pub fn negativity(rho: &DensityMatrix, dims: (usize, usize)) -> Result<f64> {
    let pt = partial_transpose(&rho.matrix, dims)?;
    Ok(hermitize(&pt)
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| (l.abs() - l) / 2.0)
        .sum())
}

fn sqrt_psd(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = hermitize(m).symmetric_eigen();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        out += col * col.adjoint() * Complex64::new(l.max(0.0).sqrt(), 0.0);
    }
    out
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    check_dim(b, a.dim())?;
    let s = sqrt_psd(&a.matrix);
    let inner = &s * &b.matrix * &s;
    let root: f64 = hermitize(&inner)
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok((root * root).clamp(0.0, 1.0))
}
