//! Qutrit CGLMP test on three consecutive comb lines.
//!
//! Each photon is projected onto `(|k₀⟩ + e^{iφ}|k₀+1⟩ + e^{2iφ}|k₀+2⟩)/√3`:
//! the first shaper writes the phase ramp, the modulator mixes the three lines
//! into the channel half a line spacing below the middle line, and the
//! detector sits on that channel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detection::{counts_for_probability, reduce_phase, CountSampler, DetectionConfig};
use crate::lattice::{BiphotonState, FrequencyLattice};
use crate::optics::{apply_mask, apply_modulator, equalize_sidebands, MaskMode, ModulatorDrive, SpectralMask};
use crate::tomography::DensityMatrix;
use crate::{Error, Result};

/// Measurement-basis offsets and the comb lines used as the qutrit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CglmpBasis {
    /// (α₁, α₂)
    pub alpha: [f64; 2],
    /// (β₁, β₂)
    pub beta: [f64; 2],
    /// Three consecutive comb pairs.
    pub triplet: [u32; 3],
}

impl Default for CglmpBasis {
    fn default() -> Self {
        Self {
            alpha: [0.0, 0.5],
            beta: [0.25, -0.25],
            triplet: [5, 6, 7],
        }
    }
}

impl CglmpBasis {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.triplet;
        if a == 0 || b != a + 1 || c != b + 1 {
            return Err(Error::InvalidInput(format!(
                "comb triplet must be three consecutive pairs starting at 1 or above, got {:?}",
                self.triplet
            )));
        }
        if self.alpha.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("basis offsets must be finite".into()));
        }
        Ok(())
    }
}

/// Shaper phases of one measurement setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisPhases {
    /// φ_S in (−π, π]
    pub signal: f64,
    /// φ_I in (−π, π]
    pub idler: f64,
    /// Phase on each triplet line of the signal photon, in (−π, π].
    pub signal_lines: [f64; 3],
    pub idler_lines: [f64; 3],
}

impl BasisPhases {
    /// Phases `(φ_S, φ_I)` with line phases `(0, φ, 2φ)`.
    pub fn from_phases(phi_s: f64, phi_i: f64) -> Self {
        let lines = |phi: f64| [0.0, reduce_phase(phi), reduce_phase(2.0 * phi)];
        Self {
            signal: reduce_phase(phi_s),
            idler: reduce_phase(phi_i),
            signal_lines: lines(phi_s),
            idler_lines: lines(phi_i),
        }
    }
}

fn check_setting(x: u8, y: u8, a: u8, b: u8) -> Result<()> {
    if !(1..=2).contains(&x) || !(1..=2).contains(&y) {
        return Err(Error::InvalidInput(format!("settings x={x}, y={y} must be 1 or 2")));
    }
    if a > 2 || b > 2 {
        return Err(Error::InvalidInput(format!("outcomes a={a}, b={b} must be 0, 1 or 2")));
    }
    Ok(())
}

/// `φ_S = (2π/3)(a + α_x)`, `φ_I = (2π/3)(−b + β_y)`.
pub fn basis_phases(basis: &CglmpBasis, x: u8, y: u8, a: u8, b: u8) -> Result<BasisPhases> {
    check_setting(x, y, a, b)?;
    let (phi_s, phi_i) = raw_phases(basis, x, y, a, b);
    Ok(BasisPhases::from_phases(phi_s, phi_i))
}

fn raw_phases(basis: &CglmpBasis, x: u8, y: u8, a: u8, b: u8) -> (f64, f64) {
    let third = 2.0 * PI / 3.0;
    (
        third * (f64::from(a) + basis.alpha[usize::from(x - 1)]),
        third * (-f64::from(b) + basis.beta[usize::from(y - 1)]),
    )
}

/// Weight λ of the maximally entangled qutrit state against white noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMixture {
    lambda: f64,
}

impl NoiseMixture {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("mixing weight {lambda} outside [0, 1]")));
        }
        Ok(Self { lambda })
    }

    pub fn pure() -> Self {
        Self { lambda: 1.0 }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// 9×9 density matrix on (signal line, idler line), signal-major.
    pub fn density_matrix(&self) -> DensityMatrix {
        let mut psi = DVector::<Complex64>::zeros(9);
        for k in 0..3 {
            psi[4 * k] = Complex64::new(3f64.sqrt().recip(), 0.0);
        }
        let pure = &psi * psi.adjoint();
        let noise = DMatrix::<Complex64>::identity(9, 9) / Complex64::new(9.0, 0.0);
        let m = pure * Complex64::new(self.lambda, 0.0) + noise * Complex64::new(1.0 - self.lambda, 0.0);
        DensityMatrix::new(m).expect("mixture of valid states")
    }
}

/// `λ·|1 + e^{iΔ} + e^{2iΔ}|²/27 + (1 − λ)/9` with `Δ = φ_S + φ_I`.
pub fn model_probability(noise: &NoiseMixture, phi_s: f64, phi_i: f64) -> f64 {
    let d = phi_s + phi_i;
    let s = Complex64::new(1.0, 0.0) + Complex64::from_polar(1.0, d) + Complex64::from_polar(1.0, 2.0 * d);
    noise.lambda * s.norm_sqr() / 27.0 + (1.0 - noise.lambda) / 9.0
}

/// `vv†` with `v = (1, e^{iφ}, e^{2iφ})/√3`.
pub fn projector(phi: f64) -> DMatrix<Complex64> {
    let v = projector_vector(phi);
    &v * v.adjoint()
}

fn projector_vector(phi: f64) -> DVector<Complex64> {
    DVector::from_fn(3, |k, _| Complex64::from_polar(3f64.sqrt().recip(), k as f64 * phi))
}

/// One probability of the eight-term inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CglmpTerm {
    pub x: u8,
    pub y: u8,
    pub a: u8,
    pub b: u8,
    /// +1 or −1
    pub sign: i8,
}

impl CglmpTerm {
    pub fn label(&self) -> String {
        format!("P{}{}({},{})", self.x, self.y, self.a, self.b)
    }

    /// `d` such that the term stands for all outcomes with `b ≡ a − d (mod 3)`.
    fn offset(&self) -> i32 {
        i32::from(self.a) - i32::from(self.b)
    }
}

/// Positive terms first, in inequality order.
pub const CGLMP_TERMS: [CglmpTerm; 8] = [
    CglmpTerm { x: 1, y: 1, a: 0, b: 0, sign: 1 },
    CglmpTerm { x: 2, y: 1, a: 0, b: 1, sign: 1 },
    CglmpTerm { x: 2, y: 2, a: 0, b: 0, sign: 1 },
    CglmpTerm { x: 1, y: 2, a: 0, b: 0, sign: 1 },
    CglmpTerm { x: 1, y: 1, a: 0, b: 1, sign: -1 },
    CglmpTerm { x: 2, y: 1, a: 0, b: 0, sign: -1 },
    CglmpTerm { x: 2, y: 2, a: 0, b: 1, sign: -1 },
    CglmpTerm { x: 1, y: 2, a: 1, b: 0, sign: -1 },
];

/// `3·(P₁ + P₂ + P₃ + P₄ − P₅ − P₆ − P₇ − P₈)` in [`CGLMP_TERMS`] order.
pub fn i3_from_probabilities(p: &[f64; 8]) -> f64 {
    3.0 * CGLMP_TERMS.iter().zip(p).map(|(t, &v)| f64::from(t.sign) * v).sum::<f64>()
}

/// Term probabilities of the noise-mixture model.
pub fn model_term_probabilities(basis: &CglmpBasis, noise: &NoiseMixture) -> [f64; 8] {
    CGLMP_TERMS.map(|t| {
        let (ps, pi) = raw_phases(basis, t.x, t.y, t.a, t.b);
        model_probability(noise, ps, pi)
    })
}

pub fn i3_model(basis: &CglmpBasis, noise: &NoiseMixture) -> f64 {
    i3_from_probabilities(&model_term_probabilities(basis, noise))
}

/// `Tr[ρ·Π_S ⊗ Π_I]` for a 9×9 state on (signal line, idler line).
pub fn joint_probability(rho: &DensityMatrix, phi_s: f64, phi_i: f64) -> Result<f64> {
    if rho.dim() != 9 {
        return Err(Error::DimensionMismatch {
            expected: 9,
            actual: rho.dim(),
        });
    }
    let v = projector_vector(phi_s).kronecker(&projector_vector(phi_i));
    Ok((v.adjoint() * rho.matrix() * &v)[(0, 0)].re)
}

/// Eight-term value evaluated on an arbitrary two-qutrit state.
pub fn i3_reduced(rho: &DensityMatrix, basis: &CglmpBasis) -> Result<f64> {
    let mut p = [0.0; 8];
    for (v, t) in p.iter_mut().zip(&CGLMP_TERMS) {
        let (ps, pi) = raw_phases(basis, t.x, t.y, t.a, t.b);
        *v = joint_probability(rho, ps, pi)?;
    }
    Ok(i3_from_probabilities(&p))
}

/// Value built from all 24 outcome probabilities: each term of the
/// inequality is summed over every `(a, b)` with the same `a − b (mod 3)`
/// instead of being represented by one outcome times three. Equal to
/// [`i3_reduced`] whenever the probabilities depend on `a − b` only, and
/// bounded by 2 for every local model.
pub fn i3_full(rho: &DensityMatrix, basis: &CglmpBasis) -> Result<f64> {
    let mut total = 0.0;
    for t in &CGLMP_TERMS {
        for a in 0..3u8 {
            let b = (i32::from(a) - t.offset()).rem_euclid(3) as u8;
            let (ps, pi) = raw_phases(basis, t.x, t.y, a, b);
            total += f64::from(t.sign) * joint_probability(rho, ps, pi)?;
        }
    }
    Ok(total)
}

/// A count with its optional repeat standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermCount {
    pub counts: f64,
    pub std: Option<f64>,
}

impl TermCount {
    pub fn new(counts: f64, std: Option<f64>) -> Self {
        Self { counts, std }
    }
}

/// Counts for the eight terms in [`CGLMP_TERMS`] order plus the all-zero-phase
/// maximum and the minimum reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CglmpCounts {
    pub terms: [TermCount; 8],
    pub n_max: TermCount,
    pub n_min: TermCount,
}

impl CglmpCounts {
    pub fn validate(&self) -> Result<()> {
        let all = self.terms.iter().chain([&self.n_max, &self.n_min]);
        for t in all {
            if !(t.counts.is_finite() && t.counts >= 0.0) {
                return Err(Error::InvalidInput(format!("negative or non-finite count {}", t.counts)));
            }
            if let Some(s) = t.std {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::InvalidInput(format!("invalid standard deviation {s}")));
                }
            }
        }
        if self.n_max.counts <= 0.0 {
            return Err(Error::InvalidInput("maximum reference count must be positive".into()));
        }
        Ok(())
    }

    /// `n / (3·n_max)` for each term.
    pub fn probabilities(&self) -> Result<[f64; 8]> {
        self.validate()?;
        Ok(self.terms.map(|t| t.counts / (3.0 * self.n_max.counts)))
    }
}

/// Source of the per-count uncertainties fed into the propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Listed standard deviations where present, `√n` where absent.
    #[default]
    ListedStd,
    /// `√n` for every count.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CglmpEstimate {
    pub i3: f64,
    pub sigma: f64,
}

pub fn i3_from_counts(counts: &CglmpCounts) -> Result<CglmpEstimate> {
    i3_from_counts_with(counts, SigmaMode::ListedStd)
}

/// `I₃ = (Σn₊ − Σn₋)/n_max` with first-order error propagation over the ten
/// counts, `n_max` included.
pub fn i3_from_counts_with(counts: &CglmpCounts, mode: SigmaMode) -> Result<CglmpEstimate> {
    let p = counts.probabilities()?;
    let i3 = i3_from_probabilities(&p);
    let sd = |t: &TermCount| match (mode, t.std) {
        (SigmaMode::ListedStd, Some(s)) => s,
        _ => t.counts.sqrt(),
    };
    let n_max = counts.n_max.counts;
    let var_terms: f64 = counts.terms.iter().map(|t| sd(t).powi(2)).sum();
    let var = (var_terms + (i3 * sd(&counts.n_max)).powi(2)) / (n_max * n_max);
    Ok(CglmpEstimate { i3, sigma: var.sqrt() })
}

/// Lattice indices of a photon's triplet and of its detection channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletChannels {
    pub signal_lines: [i64; 3],
    pub idler_lines: [i64; 3],
    pub signal_target: i64,
    pub idler_target: i64,
    /// Modulator frequency in lattice steps (half a line spacing).
    pub rf_steps: u32,
}

impl TripletChannels {
    pub fn new(lattice: &FrequencyLattice, basis: &CglmpBasis) -> Result<Self> {
        basis.validate()?;
        let s = lattice.subdivision();
        if !s.is_multiple_of(2) {
            return Err(Error::InvalidLattice(format!(
                "the midpoint channel needs an even subdivision, got {s}"
            )));
        }
        let mut signal_lines = [0; 3];
        let mut idler_lines = [0; 3];
        for (i, &k) in basis.triplet.iter().enumerate() {
            signal_lines[i] = lattice.signal_index(k)?;
            idler_lines[i] = lattice.idler_index(k)?;
        }
        let half = i64::from(s / 2);
        let signal_target = lattice.check(signal_lines[1] - half)?;
        let idler_target = lattice.check(idler_lines[1] + half)?;
        // the highest sideband order needed (3) must stay on the lattice
        lattice.check(signal_lines[2] + 3 * half)?;
        lattice.check(idler_lines[2] - 3 * half)?;
        Ok(Self {
            signal_lines,
            idler_lines,
            signal_target,
            idler_target,
            rf_steps: s / 2,
        })
    }
}

/// Shaper mask writing `(0, φ_S, 2φ_S)` on the signal triplet and
/// `(0, φ_I, 2φ_I)` on the idler triplet; other lines pass untouched.
pub fn cglmp_mask(channels: &TripletChannels, phi_s: f64, phi_i: f64) -> SpectralMask {
    let mut mask = SpectralMask::new(MaskMode::PhaseOnly);
    for k in 0..3 {
        mask.add_phase(channels.signal_lines[k], k as f64 * phi_s);
        mask.add_phase(channels.idler_lines[k], k as f64 * phi_i);
    }
    mask
}

/// Modulator drive with `|J₁| = |J₃|` at half a line spacing.
pub fn cglmp_drive(channels: &TripletChannels) -> Result<ModulatorDrive> {
    ModulatorDrive::new(channels.rf_steps, equalize_sidebands(&[1, 3])?, 0.0)
}

/// Coincidence probability at the two midpoint channels for a pure input.
pub fn chain_probability(
    state: &BiphotonState,
    channels: &TripletChannels,
    drive: &ModulatorDrive,
    phi_s: f64,
    phi_i: f64,
) -> f64 {
    let shaped = apply_mask(state, &cglmp_mask(channels, phi_s, phi_i));
    apply_modulator(&shaped, drive)
        .amplitude(channels.signal_target, channels.idler_target)
        .norm_sqr()
}

/// Same as [`chain_probability`] for the noise mixture: the entangled part
/// runs through the chain coherently, the white-noise part as the incoherent
/// average over the nine product states.
pub fn mixture_chain_probability(
    lattice: &FrequencyLattice,
    channels: &TripletChannels,
    drive: &ModulatorDrive,
    noise: &NoiseMixture,
    phi_s: f64,
    phi_i: f64,
) -> Result<f64> {
    let one = Complex64::new(1.0, 0.0);
    let entangled = BiphotonState::from_amplitudes(
        *lattice,
        (0..3).map(|k| ((channels.signal_lines[k], channels.idler_lines[k]), one / 3f64.sqrt())),
    )?;
    let mut p = noise.lambda * chain_probability(&entangled, channels, drive, phi_s, phi_i);
    if noise.lambda < 1.0 {
        let mut incoherent = 0.0;
        for &m in &channels.signal_lines {
            for &n in &channels.idler_lines {
                let product = BiphotonState::from_amplitudes(*lattice, [((m, n), one)])?;
                incoherent += chain_probability(&product, channels, drive, phi_s, phi_i);
            }
        }
        p += (1.0 - noise.lambda) * incoherent / 9.0;
    }
    Ok(p)
}

/// Output of a simulated CGLMP run.
#[derive(Debug, Clone, PartialEq)]
pub struct CglmpRun {
    pub counts: CglmpCounts,
    /// Full-chain probabilities of the eight terms.
    pub chain_probabilities: [f64; 8],
    /// Full-chain probabilities at the maximum and minimum reference phases.
    pub reference_probabilities: [f64; 2],
    pub mod_index: f64,
}

/// Reference phases: maximum at (0, 0), minimum at (π/3, π/3).
pub const REFERENCE_PHASES: [(f64, f64); 2] = [(0.0, 0.0), (PI / 3.0, PI / 3.0)];

/// Simulates the eight terms and the two references through
/// mask → modulator → midpoint channels, then samples Poisson counts.
pub fn simulate_cglmp_run(
    lattice: &FrequencyLattice,
    basis: &CglmpBasis,
    noise: &NoiseMixture,
    cfg: &DetectionConfig,
) -> Result<CglmpRun> {
    cfg.validate()?;
    let channels = TripletChannels::new(lattice, basis)?;
    let drive = cglmp_drive(&channels)?;

    let mut chain = [0.0; 8];
    for (p, t) in chain.iter_mut().zip(&CGLMP_TERMS) {
        let (ps, pi) = raw_phases(basis, t.x, t.y, t.a, t.b);
        *p = mixture_chain_probability(lattice, &channels, &drive, noise, ps, pi)?;
    }
    let mut refs = [0.0; 2];
    for (p, &(ps, pi)) in refs.iter_mut().zip(&REFERENCE_PHASES) {
        *p = mixture_chain_probability(lattice, &channels, &drive, noise, ps, pi)?;
    }

    let mut sampler = CountSampler::from_config(cfg);
    let mut draw = |p: f64| -> Result<TermCount> {
        let n = sampler.sample(counts_for_probability(p, cfg))?;
        Ok(TermCount::new(n as f64, None))
    };
    let mut terms = [TermCount::new(0.0, None); 8];
    for (t, &p) in terms.iter_mut().zip(&chain) {
        *t = draw(p)?;
    }
    let n_max = draw(refs[0])?;
    let n_min = draw(refs[1])?;
    Ok(CglmpRun {
        counts: CglmpCounts { terms, n_max, n_min },
        chain_probabilities: chain,
        reference_probabilities: refs,
        mod_index: drive.mod_index(),
    })
}
