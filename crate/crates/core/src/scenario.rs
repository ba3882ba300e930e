//! TOML scenario files and the runner that turns them into result bundles.
//!
//! Keys carry their units (`fsr_ghz`, `fwhm_mhz`, `fiber_length_m`); unknown
//! keys are rejected. Relative paths are resolved against the directory of
//! the scenario file.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bell::{
    i3_from_counts_with, i3_model, model_probability, simulate_cglmp_run, CglmpBasis, CglmpCounts, NoiseMixture,
    SigmaMode, CGLMP_TERMS, REFERENCE_PHASES,
};
use crate::detection::{
    compute_jsi, counts_for_probability, fit_fringe, reduce_phase, schmidt_bound, CountSampler, DetectionConfig,
};
use crate::fixtures::{read_table1, read_table2};
use crate::lattice::{BiphotonState, FrequencyLattice, Lineshape};
use crate::optics::{
    apply_mask, apply_modulator, dip_scan, dip_width, dispersion_mask, equalize_sidebands, DispersionSpec, MaskMode,
    ModulatorDrive, PairFringe, SpectralMask,
};
use crate::output::{read_matrix, Provenance, ResultBundle, Sweep};
use crate::tomography::{
    build_projection_set, fidelity, likelihood, mle_estimate, negativity, tally_projection_counts, DensityMatrix,
    MleOptions, TomographyData,
};
use crate::{Error, Result};

/// Tolerance for density matrices read from files printed to four digits.
pub const PRINTED_MATRIX_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Jsi,
    Dip,
    Fringe,
    Tomo,
    Cglmp,
    Simulate,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Jsi => "jsi",
            Kind::Dip => "dip",
            Kind::Fringe => "fringe",
            Kind::Tomo => "tomo",
            Kind::Cglmp => "cglmp",
            Kind::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    #[serde(default = "default_pump")]
    pub pump_thz: f64,
    #[serde(default = "default_fsr")]
    pub fsr_ghz: f64,
    #[serde(default = "default_subdivision")]
    pub subdivision: u32,
    #[serde(default = "default_half_range")]
    pub half_range: i64,
}

fn default_pump() -> f64 {
    193.4
}
fn default_fsr() -> f64 {
    49.6
}
fn default_subdivision() -> u32 {
    2
}
fn default_half_range() -> i64 {
    128
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            pump_thz: default_pump(),
            fsr_ghz: default_fsr(),
            subdivision: default_subdivision(),
            half_range: default_half_range(),
        }
    }
}

impl LatticeConfig {
    pub fn build(&self) -> Result<FrequencyLattice> {
        FrequencyLattice::new(self.pump_thz, self.fsr_ghz, self.subdivision, self.half_range)
    }
}

/// Comb state: pair numbers with optional real weights and phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub pairs: Vec<u32>,
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default)]
    pub phases_rad: Option<Vec<f64>>,
}

impl SourceConfig {
    fn violations(&self, v: &mut Vec<String>) {
        if self.pairs.is_empty() {
            v.push("source.pairs must list at least one comb pair".into());
        }
        for (name, len) in [
            ("amplitudes", self.amplitudes.as_ref().map(Vec::len)),
            ("phases_rad", self.phases_rad.as_ref().map(Vec::len)),
        ] {
            if let Some(n) = len {
                if n != self.pairs.len() {
                    v.push(format!("source.{name} has {n} entries for {} pairs", self.pairs.len()));
                }
            }
        }
    }

    pub fn build(&self, lattice: FrequencyLattice) -> Result<BiphotonState> {
        let entries: Vec<(u32, Complex64)> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let a = self.amplitudes.as_ref().map_or(1.0, |v| v[i]);
                let p = self.phases_rad.as_ref().map_or(0.0, |v| v[i]);
                (k, Complex64::from_polar(a, p))
            })
            .collect();
        BiphotonState::comb_pairs(lattice, &entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    #[serde(default = "one")]
    pub eta_signal: f64,
    #[serde(default = "one")]
    pub eta_idler: f64,
    #[serde(default = "one")]
    pub pair_flux_hz: f64,
    #[serde(default = "one")]
    pub integration_time_s: f64,
    #[serde(default)]
    pub accidental_rate_hz: f64,
    /// Draw Poisson counts instead of reporting expectations.
    #[serde(default)]
    pub shot_noise: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            eta_signal: 1.0,
            eta_idler: 1.0,
            pair_flux_hz: 1.0,
            integration_time_s: 1.0,
            accidental_rate_hz: 0.0,
            shot_noise: false,
        }
    }
}

impl DetectionSection {
    pub fn build(&self, seed: u64) -> DetectionConfig {
        DetectionConfig {
            eta_signal: self.eta_signal,
            eta_idler: self.eta_idler,
            pair_flux_hz: self.pair_flux_hz,
            integration_time_s: self.integration_time_s,
            accidental_rate_hz: self.accidental_rate_hz,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsiConfig {
    /// Defaults to the source pairs.
    #[serde(default)]
    pub signal_pairs: Option<Vec<u32>>,
    #[serde(default)]
    pub idler_pairs: Option<Vec<u32>>,
    /// Remove the accidental floor (clipping at zero) before the Schmidt bound.
    #[serde(default)]
    pub subtract_background: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeConfig {
    pub start_ghz: f64,
    pub stop_ghz: f64,
    pub step_ghz: f64,
}

impl RangeConfig {
    fn violations(&self, prefix: &str, v: &mut Vec<String>) {
        if !(self.step_ghz > 0.0) {
            v.push(format!("{prefix}.step_ghz must be positive"));
        }
        if !(self.stop_ghz >= self.start_ghz) {
            v.push(format!("{prefix}.stop_ghz must not be below start_ghz"));
        }
        if self.step_ghz > 0.0 && (self.stop_ghz - self.start_ghz) / self.step_ghz > 1e6 {
            v.push(format!("{prefix} has more than a million points"));
        }
    }

    fn points(&self) -> Vec<f64> {
        let n = ((self.stop_ghz - self.start_ghz) / self.step_ghz + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start_ghz + i as f64 * self.step_ghz).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipConfig {
    pub pairs: [u32; 2],
    #[serde(default)]
    pub offsets: Option<RangeConfig>,
    #[serde(default)]
    pub offsets_ghz: Option<Vec<f64>>,
    #[serde(default = "default_pi")]
    pub relative_phase_rad: f64,
    /// Lorentzian intensity FWHM; alternatively `quality_factor`.
    #[serde(default)]
    pub fwhm_mhz: Option<f64>,
    #[serde(default)]
    pub quality_factor: Option<f64>,
}

fn default_pi() -> f64 {
    PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionConfig {
    pub fiber_length_m: f64,
    #[serde(default = "default_d")]
    pub dispersion_ps_nm_km: f64,
    #[serde(default = "default_wavelength")]
    pub ref_wavelength_nm: f64,
    #[serde(default)]
    pub compensate: bool,
}

fn default_d() -> f64 {
    17.0
}
fn default_wavelength() -> f64 {
    1550.0
}

impl DispersionConfig {
    fn spec(&self) -> DispersionSpec {
        DispersionSpec {
            fiber_length_m: self.fiber_length_m,
            dispersion_ps_nm_km: self.dispersion_ps_nm_km,
            ref_wavelength_nm: self.ref_wavelength_nm,
        }
    }

    fn violations(&self, prefix: &str, v: &mut Vec<String>) {
        if !(self.fiber_length_m >= 0.0 && self.fiber_length_m.is_finite()) {
            v.push(format!("{prefix}.fiber_length_m must be finite and non-negative"));
        }
        if !(self.ref_wavelength_nm > 0.0) {
            v.push(format!("{prefix}.ref_wavelength_nm must be positive"));
        }
        if !self.dispersion_ps_nm_km.is_finite() {
            v.push(format!("{prefix}.dispersion_ps_nm_km must be finite"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeConfig {
    pub pairs: [u32; 2],
    pub mod_index: f64,
    #[serde(default)]
    pub phases_rad: Option<Vec<f64>>,
    /// Evenly spaced phases over [0, 2π) when `phases_rad` is absent.
    #[serde(default = "default_phase_points")]
    pub phase_points: usize,
    #[serde(default)]
    pub dispersion: Option<DispersionConfig>,
    /// Coincidence-to-accidental ratio: adds a flat floor of peak/car.
    #[serde(default)]
    pub car: Option<f64>,
    #[serde(default)]
    pub subtract_background: bool,
}

fn default_phase_points() -> usize {
    24
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticState {
    Bell,
    MaximallyMixed,
    /// The matrix given by `tomo.reference`.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTomo {
    pub state: SyntheticState,
    /// C, the total over the first four projections.
    pub normalization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoConfig {
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticTomo>,
    /// Matrix file compared against the estimate.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
}

fn default_restarts() -> usize {
    8
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_max_evaluations() -> usize {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CglmpSimulation {
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CglmpConfig {
    #[serde(default)]
    pub fixture: Option<String>,
    #[serde(default)]
    pub simulate: Option<CglmpSimulation>,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    #[serde(default)]
    pub alpha: Option<[f64; 2]>,
    #[serde(default)]
    pub beta: Option<[f64; 2]>,
    #[serde(default)]
    pub triplet: Option<[u32; 3]>,
}

impl CglmpConfig {
    fn basis(&self) -> CglmpBasis {
        let d = CglmpBasis::default();
        CglmpBasis {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            triplet: self.triplet.unwrap_or(d.triplet),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEntry {
    pub index: i64,
    pub phase_rad: f64,
}

/// One element of a free-form chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Element {
    Mask {
        #[serde(default = "default_mask_mode")]
        mode: MaskMode,
        /// Comb pairs passed unchanged (blocking masks).
        #[serde(default)]
        pass_pairs: Vec<u32>,
        #[serde(default)]
        phases: Vec<PhaseEntry>,
    },
    Modulator {
        rf_steps: u32,
        #[serde(default)]
        mod_index: Option<f64>,
        /// Sideband orders to equalize instead of giving `mod_index`.
        #[serde(default)]
        equalize: Option<Vec<u32>>,
        #[serde(default)]
        rf_phase_rad: f64,
    },
    Dispersion {
        fiber_length_m: f64,
        #[serde(default = "default_d")]
        dispersion_ps_nm_km: f64,
        #[serde(default = "default_wavelength")]
        ref_wavelength_nm: f64,
        #[serde(default)]
        compensate: bool,
    },
}

fn default_mask_mode() -> MaskMode {
    MaskMode::PhaseOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub elements: Vec<Element>,
    /// Detected (signal, idler) channel pairs.
    pub channels: Vec<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: Kind,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub jsi: Option<JsiConfig>,
    #[serde(default)]
    pub dip: Option<DipConfig>,
    #[serde(default)]
    pub fringe: Option<FringeConfig>,
    #[serde(default)]
    pub tomo: Option<TomoConfig>,
    #[serde(default)]
    pub cglmp: Option<CglmpConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Reads and validates a scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_config(&text, &path.display().to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses TOML without the semantic checks of [`ScenarioConfig::validate`].
pub fn parse_config(text: &str, source: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::Parse {
            path: source.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

impl ScenarioConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let lattice = match self.lattice.build() {
            Ok(l) => Some(l),
            Err(e) => {
                v.push(format!("lattice: {e}"));
                None
            }
        };
        v.extend(self.detection.build(self.rng_seed).violations().into_iter().map(|m| format!("detection.{m}")));
        if let Some(s) = &self.source {
            s.violations(&mut v);
            if let Some(l) = &lattice {
                for &k in &s.pairs {
                    if k == 0 || k > l.max_comb_pairs() {
                        v.push(format!("source pair {k} is not representable (1..={})", l.max_comb_pairs()));
                    }
                }
            }
        }
        let needs_source = matches!(self.kind, Kind::Jsi | Kind::Fringe | Kind::Simulate);
        if needs_source && self.source.is_none() {
            v.push(format!("kind {} needs a [source] section", self.kind.name()));
        }
        let present = [
            (Kind::Jsi, self.jsi.is_some()),
            (Kind::Dip, self.dip.is_some()),
            (Kind::Fringe, self.fringe.is_some()),
            (Kind::Tomo, self.tomo.is_some()),
            (Kind::Cglmp, self.cglmp.is_some()),
            (Kind::Simulate, self.simulate.is_some()),
        ];
        for (k, has) in present {
            if k == self.kind && !has && k != Kind::Jsi {
                v.push(format!("kind {} needs a [{}] section", k.name(), k.name()));
            }
            if k != self.kind && has {
                v.push(format!("section [{}] does not apply to kind {}", k.name(), self.kind.name()));
            }
        }

        if let Some(d) = &self.dip {
            if d.pairs[0] == d.pairs[1] {
                v.push("dip.pairs must be two distinct pairs".into());
            }
            match (&d.offsets, &d.offsets_ghz) {
                (Some(r), None) => r.violations("dip.offsets", &mut v),
                (None, Some(list)) if list.len() < 3 => v.push("dip.offsets_ghz needs at least three points".into()),
                (None, Some(_)) => {}
                _ => v.push("dip needs exactly one of offsets or offsets_ghz".into()),
            }
            match (d.fwhm_mhz, d.quality_factor) {
                (Some(w), None) if !(w > 0.0) => v.push("dip.fwhm_mhz must be positive".into()),
                (None, Some(q)) if !(q > 0.0) => v.push("dip.quality_factor must be positive".into()),
                (Some(_), Some(_)) => v.push("dip takes fwhm_mhz or quality_factor, not both".into()),
                _ => {}
            }
        }
        if let Some(f) = &self.fringe {
            if f.pairs[0] == f.pairs[1] {
                v.push("fringe.pairs must be two distinct pairs".into());
            }
            if !(0.0..=20.0).contains(&f.mod_index) {
                v.push(format!("fringe.mod_index {} outside [0, 20]", f.mod_index));
            }
            match &f.phases_rad {
                Some(p) if p.len() < 3 => v.push("fringe.phases_rad needs at least three phases".into()),
                None if f.phase_points < 3 => v.push("fringe.phase_points must be at least 3".into()),
                _ => {}
            }
            if let Some(c) = f.car {
                if !(c > 0.0) {
                    v.push("fringe.car must be positive".into());
                }
            }
            if let Some(d) = &f.dispersion {
                d.violations("fringe.dispersion", &mut v);
            }
        }
        if let Some(t) = &self.tomo {
            match (&t.fixture, &t.synthetic) {
                (Some(_), None) => {}
                (None, Some(s)) => {
                    if !(s.normalization > 0.0) {
                        v.push("tomo.synthetic.normalization must be positive".into());
                    }
                    if s.state == SyntheticState::Reference && t.reference.is_none() {
                        v.push("tomo.synthetic.state = \"reference\" needs tomo.reference".into());
                    }
                }
                _ => v.push("tomo needs exactly one of fixture or synthetic".into()),
            }
            if !(t.tolerance > 0.0) {
                v.push("tomo.tolerance must be positive".into());
            }
            if t.max_evaluations < 100 {
                v.push("tomo.max_evaluations must be at least 100".into());
            }
        }
        if let Some(c) = &self.cglmp {
            match (&c.fixture, &c.simulate) {
                (Some(_), None) => {}
                (None, Some(s)) => {
                    if !(0.0..=1.0).contains(&s.lambda) {
                        v.push(format!("cglmp.simulate.lambda {} outside [0, 1]", s.lambda));
                    }
                }
                _ => v.push("cglmp needs exactly one of fixture or simulate".into()),
            }
            if let Err(e) = c.basis().validate() {
                v.push(format!("cglmp: {e}"));
            }
        }
        if let Some(s) = &self.simulate {
            if s.channels.is_empty() {
                v.push("simulate.channels must list at least one channel pair".into());
            }
            for (i, el) in s.elements.iter().enumerate() {
                match el {
                    Element::Modulator {
                        mod_index, equalize, ..
                    } => match (mod_index, equalize) {
                        (Some(m), None) if !(0.0..=20.0).contains(m) => {
                            v.push(format!("simulate.elements[{i}].mod_index {m} outside [0, 20]"))
                        }
                        (Some(_), None) | (None, Some(_)) => {}
                        _ => v.push(format!("simulate.elements[{i}] needs exactly one of mod_index or equalize")),
                    },
                    Element::Dispersion {
                        fiber_length_m,
                        ref_wavelength_nm,
                        ..
                    } => {
                        if !(*fiber_length_m >= 0.0) || !(*ref_wavelength_nm > 0.0) {
                            v.push(format!("simulate.elements[{i}] has a non-physical fiber"));
                        }
                    }
                    Element::Mask { .. } => {}
                }
            }
            if let Some(l) = &lattice {
                for ch in &s.channels {
                    if !l.contains(ch[0]) || !l.contains(ch[1]) {
                        v.push(format!("simulate channel {ch:?} is outside the lattice"));
                    }
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Command-line overrides and the directory relative paths resolve against.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub base_dir: PathBuf,
    pub seed: Option<u64>,
    pub fixture: Option<PathBuf>,
}

impl RunOptions {
    pub fn for_config(path: &Path) -> Self {
        Self {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Self::default()
        }
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Runs a validated scenario. Output files are not written here; see
/// [`crate::output::emit_outputs`].
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<ResultBundle> {
    let mut cfg = config.clone();
    if let Some(seed) = opts.seed {
        cfg.rng_seed = seed;
    }
    if let Some(f) = &opts.fixture {
        let f = f.display().to_string();
        match cfg.kind {
            Kind::Tomo => {
                if let Some(t) = cfg.tomo.as_mut() {
                    t.fixture = Some(f);
                    t.synthetic = None;
                }
            }
            Kind::Cglmp => {
                if let Some(c) = cfg.cglmp.as_mut() {
                    c.fixture = Some(f);
                    c.simulate = None;
                }
            }
            k => {
                return Err(Error::Validation(vec![format!("kind {} takes no fixture", k.name())]));
            }
        }
    }
    cfg.validate()?;

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(&cfg).map_err(|e| Error::InvalidInput(e.to_string()))?);
    for p in [
        cfg.tomo.as_ref().and_then(|t| t.fixture.clone()),
        cfg.tomo.as_ref().and_then(|t| t.reference.clone()),
        cfg.cglmp.as_ref().and_then(|c| c.fixture.clone()),
    ]
    .into_iter()
    .flatten()
    {
        let path = opts.resolve(&p);
        hasher.update(std::fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    let provenance = Provenance {
        config_hash: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        seed: cfg.rng_seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let mut bundle = ResultBundle::new(cfg.kind.name(), provenance);
    let lattice = cfg.lattice.build()?;
    let det = cfg.detection.build(cfg.rng_seed);
    match cfg.kind {
        Kind::Jsi => run_jsi(&cfg, lattice, &det, &mut bundle)?,
        Kind::Dip => run_dip(&cfg, lattice, &mut bundle)?,
        Kind::Fringe => run_fringe(&cfg, lattice, &det, &mut bundle)?,
        Kind::Tomo => run_tomo(&cfg, opts, &mut bundle)?,
        Kind::Cglmp => run_cglmp(&cfg, opts, lattice, &det, &mut bundle)?,
        Kind::Simulate => run_simulate(&cfg, lattice, &det, &mut bundle)?,
    }
    Ok(bundle)
}

fn real_matrix(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn run_jsi(cfg: &ScenarioConfig, lattice: FrequencyLattice, det: &DetectionConfig, out: &mut ResultBundle) -> Result<()> {
    let src = cfg.source.as_ref().expect("validated");
    let state = src.build(lattice)?;
    let jsi_cfg = cfg.jsi.clone().unwrap_or(JsiConfig {
        signal_pairs: None,
        idler_pairs: None,
        subtract_background: false,
    });
    let signal: Vec<i64> = jsi_cfg
        .signal_pairs
        .unwrap_or_else(|| src.pairs.clone())
        .iter()
        .map(|&k| lattice.signal_index(k))
        .collect::<Result<_>>()?;
    let idler: Vec<i64> = jsi_cfg
        .idler_pairs
        .unwrap_or_else(|| src.pairs.clone())
        .iter()
        .map(|&k| lattice.idler_index(k))
        .collect::<Result<_>>()?;
    let mut jsi = compute_jsi(&state, &signal, &idler, det)?;
    if cfg.detection.shot_noise {
        let mut sampler = CountSampler::from_config(det);
        for v in jsi.iter_mut() {
            *v = sampler.sample(*v)? as f64;
        }
    }
    let raw_bound = schmidt_bound(&jsi)?;
    out.set_scalar("schmidt_bound_raw", raw_bound);
    if jsi_cfg.subtract_background {
        let floor = det.accidental_floor();
        jsi.iter_mut().for_each(|v| *v = (*v - floor).max(0.0));
        out.set_scalar("schmidt_bound", schmidt_bound(&jsi)?);
    } else {
        out.set_scalar("schmidt_bound", raw_bound);
    }
    out.set_scalar("total_counts", jsi.sum());
    out.matrices.insert("jsi".into(), real_matrix(&jsi));
    Ok(())
}

fn run_dip(cfg: &ScenarioConfig, lattice: FrequencyLattice, out: &mut ResultBundle) -> Result<()> {
    let d = cfg.dip.as_ref().expect("validated");
    let lineshape = match (d.fwhm_mhz, d.quality_factor) {
        (Some(w), _) => Lineshape::lorentzian(w)?,
        (None, Some(q)) => Lineshape::from_quality_factor(lattice.pump_thz(), q)?,
        (None, None) => Lineshape::Delta,
    };
    let offsets = match (&d.offsets, &d.offsets_ghz) {
        (Some(r), _) => r.points(),
        (None, Some(list)) => list.clone(),
        _ => unreachable!("validated"),
    };
    let scan = dip_scan(&lattice, d.pairs[0], d.pairs[1], &lineshape, &offsets, d.relative_phase_rad)?;
    let mut sweep = Sweep::new(&["offset_ghz", "coincidence"]);
    for &(f, c) in &scan {
        sweep.push(vec![f, c])?;
    }
    if let Lineshape::Lorentzian { fwhm_mhz } = lineshape {
        out.set_scalar("linewidth_mhz", fwhm_mhz);
    }
    let min = scan.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    out.set_scalar("dip_min", min);
    match dip_width(&scan) {
        Ok((center, width)) => {
            out.set_scalar("dip_center_ghz", center);
            out.set_scalar("dip_width_mhz", width * 1e3);
        }
        Err(_) => {
            out.set_scalar("dip_center_ghz", f64::NAN);
            out.set_scalar("dip_width_mhz", f64::NAN);
        }
    }
    out.sweeps.insert("dip".into(), sweep);
    Ok(())
}

/// Expected counts of a two-pair fringe at `phases`.
fn fringe_counts(
    fringe: &PairFringe,
    source: &BiphotonState,
    phases: &[f64],
    extra: Option<&SpectralMask>,
    det: &DetectionConfig,
) -> Result<Vec<f64>> {
    phases
        .iter()
        .map(|&phi| {
            let st = fringe.state_at(source, phi, extra)?;
            let p = st.amplitude(fringe.signal_channel, fringe.idler_channel).norm_sqr();
            Ok(counts_for_probability(p, det))
        })
        .collect()
}

fn run_fringe(cfg: &ScenarioConfig, lattice: FrequencyLattice, det: &DetectionConfig, out: &mut ResultBundle) -> Result<()> {
    let f = cfg.fringe.as_ref().expect("validated");
    let source = cfg.source.as_ref().expect("validated").build(lattice)?;
    let fringe = PairFringe::new(&lattice, f.pairs[0], f.pairs[1], f.mod_index)?;
    let phases = f.phases_rad.clone().unwrap_or_else(|| {
        (0..f.phase_points)
            .map(|i| TAU * i as f64 / f.phase_points as f64)
            .collect()
    });
    let disp = match &f.dispersion {
        Some(d) => Some(dispersion_mask(&lattice, &d.spec(), d.compensate)?),
        None => None,
    };

    let mut det = *det;
    if let Some(car) = f.car {
        let no_floor = DetectionConfig {
            accidental_rate_hz: 0.0,
            ..det
        };
        let peak = fringe_counts(&fringe, &source, &phases, disp.as_ref(), &no_floor)?
            .into_iter()
            .fold(0.0, f64::max);
        det.accidental_rate_hz += peak / car / det.integration_time_s;
    }
    let floor = det.accidental_floor();
    let expected = fringe_counts(&fringe, &source, &phases, disp.as_ref(), &det)?;
    let counts: Vec<f64> = if cfg.detection.shot_noise {
        let mut sampler = CountSampler::from_config(&det);
        expected
            .iter()
            .map(|&e| sampler.sample(e).map(|n| n as f64))
            .collect::<Result<_>>()?
    } else {
        expected.clone()
    };

    let mut sweep = Sweep::new(&["phase_rad", "counts", "expected"]);
    for ((&p, &c), &e) in phases.iter().zip(&counts).zip(&expected) {
        sweep.push(vec![p, c, e])?;
    }
    let points: Vec<(f64, f64)> = phases.iter().copied().zip(counts.iter().copied()).collect();
    let raw = fit_fringe(&points, 0.0)?;
    out.set_scalar("visibility_raw", raw.visibility);
    let reported = if f.subtract_background {
        let sub = fit_fringe(&points, floor)?;
        out.set_scalar("visibility_subtracted", sub.visibility);
        sub
    } else {
        raw
    };
    out.set_scalar("visibility", reported.visibility);
    out.set_scalar("phase_offset_rad", reported.phase_offset);
    out.set_scalar("accidental_floor", floor);
    if disp.is_some() {
        let bare = DetectionConfig {
            accidental_rate_hz: 0.0,
            ..det
        };
        let reference: Vec<(f64, f64)> = phases
            .iter()
            .copied()
            .zip(fringe_counts(&fringe, &source, &phases, None, &bare)?)
            .collect();
        let base = fit_fringe(&reference, 0.0)?;
        out.set_scalar("dispersion_shift_rad", reduce_phase(reported.phase_offset - base.phase_offset));
    }
    out.sweeps.insert("fringe".into(), sweep);
    Ok(())
}

fn run_tomo(cfg: &ScenarioConfig, opts: &RunOptions, out: &mut ResultBundle) -> Result<()> {
    let t = cfg.tomo.as_ref().expect("validated");
    let projections = build_projection_set();
    let reference = match &t.reference {
        Some(p) => Some(DensityMatrix::with_tolerance(
            read_matrix(&opts.resolve(p))?,
            PRINTED_MATRIX_TOLERANCE,
        )?),
        None => None,
    };
    let data = match (&t.fixture, &t.synthetic) {
        (Some(path), _) => {
            let table = read_table1(&opts.resolve(path))?;
            tally_projection_counts(&table.raw_rows(), &projections)?
        }
        (None, Some(s)) => {
            let rho = match s.state {
                SyntheticState::Bell => DensityMatrix::bell(),
                SyntheticState::MaximallyMixed => DensityMatrix::maximally_mixed(4),
                SyntheticState::Reference => reference.clone().expect("validated"),
            };
            let expected = TomographyData::expected(&rho, &projections, s.normalization)?;
            if cfg.detection.shot_noise {
                let mut sampler = CountSampler::new(cfg.rng_seed);
                let mut counts = [0.0; 16];
                for (c, &e) in counts.iter_mut().zip(&expected.counts) {
                    *c = sampler.sample(e)? as f64;
                }
                TomographyData::from_counts(counts)?
            } else {
                expected
            }
        }
        _ => unreachable!("validated"),
    };
    let mle = MleOptions {
        random_restarts: t.restarts,
        seed: cfg.rng_seed,
        tolerance: t.tolerance,
        max_evaluations: t.max_evaluations,
    };
    let result = mle_estimate(&data, &projections, &mle)?;
    let rho = &result.rho;

    out.set_scalar("normalization", data.normalization);
    out.set_scalar("likelihood", result.likelihood);
    out.set_scalar("negativity", negativity(rho, (2, 2))?);
    out.set_scalar("fidelity_bell", fidelity(rho, &DensityMatrix::bell())?);
    out.set_scalar("min_eigenvalue", rho.eigenvalues()[0]);
    if let Some(r) = &reference {
        out.set_scalar("fidelity", fidelity(rho, r)?);
        out.set_scalar("max_deviation", rho.max_abs_diff(r)?);
        out.set_scalar("negativity_reference", negativity(r, (2, 2))?);
    }
    let mut sweep = Sweep::new(&["nu", "measured", "predicted"]);
    for (i, (p, &n)) in projections.iter().zip(&data.counts).enumerate() {
        sweep.push(vec![(i + 1) as f64, n, data.normalization * p.probability(rho.matrix())])?;
    }
    out.sweeps.insert("projections".into(), sweep);
    out.matrices.insert("rho".into(), rho.matrix().clone());
    // recomputed from the returned matrix as a consistency check on the bundle
    out.set_scalar("likelihood_check", likelihood(rho, &data, &projections)?);
    Ok(())
}

fn run_cglmp(
    cfg: &ScenarioConfig,
    opts: &RunOptions,
    lattice: FrequencyLattice,
    det: &DetectionConfig,
    out: &mut ResultBundle,
) -> Result<()> {
    let c = cfg.cglmp.as_ref().expect("validated");
    let basis = c.basis();
    let (counts, model): (CglmpCounts, Option<NoiseMixture>) = match (&c.fixture, &c.simulate) {
        (Some(path), _) => (read_table2(&opts.resolve(path))?.to_counts()?, None),
        (None, Some(s)) => {
            let noise = NoiseMixture::new(s.lambda)?;
            let run = simulate_cglmp_run(&lattice, &basis, &noise, det)?;
            out.set_scalar("mod_index", run.mod_index);
            out.set_scalar("lambda", s.lambda);
            out.set_scalar("i3_model", i3_model(&basis, &noise));
            (run.counts, Some(noise))
        }
        _ => unreachable!("validated"),
    };
    let est = i3_from_counts_with(&counts, c.sigma_mode)?;
    let other = match c.sigma_mode {
        SigmaMode::ListedStd => SigmaMode::Poisson,
        SigmaMode::Poisson => SigmaMode::ListedStd,
    };
    let alt = i3_from_counts_with(&counts, other)?;
    out.set_scalar("i3", est.i3);
    out.set_scalar("i3_sigma", est.sigma);
    let (listed, poisson) = match c.sigma_mode {
        SigmaMode::ListedStd => (est.sigma, alt.sigma),
        SigmaMode::Poisson => (alt.sigma, est.sigma),
    };
    out.set_scalar("i3_sigma_listed", listed);
    out.set_scalar("i3_sigma_poisson", poisson);
    out.set_scalar("n_max", counts.n_max.counts);
    out.set_scalar("n_min", counts.n_min.counts);

    let mut sweep = Sweep::new(&["term", "sign", "counts", "probability", "model_probability"]);
    let probs = counts.probabilities()?;
    let noise = model.unwrap_or_else(NoiseMixture::pure);
    for (i, (t, (tc, &p))) in CGLMP_TERMS.iter().zip(counts.terms.iter().zip(&probs)).enumerate() {
        let ph = crate::bell::basis_phases(&basis, t.x, t.y, t.a, t.b)?;
        sweep.push(vec![
            (i + 1) as f64,
            f64::from(t.sign),
            tc.counts,
            p,
            model_probability(&noise, ph.signal, ph.idler),
        ])?;
    }
    let [(max_s, max_i), (min_s, min_i)] = REFERENCE_PHASES;
    out.set_scalar("reference_max_model", model_probability(&noise, max_s, max_i));
    out.set_scalar("reference_min_model", model_probability(&noise, min_s, min_i));
    out.sweeps.insert("terms".into(), sweep);
    Ok(())
}

fn run_simulate(cfg: &ScenarioConfig, lattice: FrequencyLattice, det: &DetectionConfig, out: &mut ResultBundle) -> Result<()> {
    let s = cfg.simulate.as_ref().expect("validated");
    let mut state = cfg.source.as_ref().expect("validated").build(lattice)?;
    for el in &s.elements {
        state = match el {
            Element::Mask {
                mode,
                pass_pairs,
                phases,
            } => {
                let mut mask = SpectralMask::new(*mode);
                for &k in pass_pairs {
                    mask.set(lattice.signal_index(k)?, Complex64::new(1.0, 0.0))?;
                    mask.set(lattice.idler_index(k)?, Complex64::new(1.0, 0.0))?;
                }
                for p in phases {
                    lattice.check(p.index)?;
                    let mut m = SpectralMask::new(MaskMode::PhaseOnly);
                    m.add_phase(p.index, p.phase_rad);
                    mask = mask.compose(&m);
                }
                apply_mask(&state, &mask)
            }
            Element::Modulator {
                rf_steps,
                mod_index,
                equalize,
                rf_phase_rad,
            } => {
                let mu = match (mod_index, equalize) {
                    (Some(m), _) => *m,
                    (None, Some(orders)) => equalize_sidebands(orders)?,
                    _ => unreachable!("validated"),
                };
                apply_modulator(&state, &ModulatorDrive::new(*rf_steps, mu, *rf_phase_rad)?)
            }
            Element::Dispersion {
                fiber_length_m,
                dispersion_ps_nm_km,
                ref_wavelength_nm,
                compensate,
            } => {
                let spec = DispersionSpec {
                    fiber_length_m: *fiber_length_m,
                    dispersion_ps_nm_km: *dispersion_ps_nm_km,
                    ref_wavelength_nm: *ref_wavelength_nm,
                };
                apply_mask(&state, &dispersion_mask(&lattice, &spec, *compensate)?)
            }
        };
    }
    let mut sampler = CountSampler::from_config(det);
    let mut sweep = Sweep::new(&["signal", "idler", "probability", "counts"]);
    for ch in &s.channels {
        let p = state.amplitude(ch[0], ch[1]).norm_sqr();
        let e = counts_for_probability(p, det);
        let n = if cfg.detection.shot_noise {
            sampler.sample(e)? as f64
        } else {
            e
        };
        sweep.push(vec![ch[0] as f64, ch[1] as f64, p, n])?;
    }
    out.set_scalar("survival", state.norm_sqr());
    out.sweeps.insert("channels".into(), sweep);
    Ok(())
}
