//! Scenario configuration (TOML).

use std::path::Path;

use multifreq_core::diagnostics::{IndependenceSetup, InitKind, ScatterMode, DEFAULT_THRESHOLD};
use multifreq_core::forward::{Displacement, ProbeArray};
use multifreq_core::geometry::SamplingSurface;
use multifreq_core::operators::DEFAULT_REL_TOL;
use multifreq_core::retrieval::{SpectralOptions, WirtingerOptions};
use multifreq_core::sync::{DEFAULT_CARRIER_HZ, DEFAULT_LEAKAGE_TOL, DEFAULT_LO_HZ, DEFAULT_SAMPLE_RATE_HZ};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Root of every random stream in a run.
    #[serde(default)]
    pub seed: u64,
    pub aut: AutSpec,
    #[serde(default)]
    pub surfaces: Vec<SamplingSurface>,
    pub frequencies: Option<FrequencySpec>,
    #[serde(default)]
    pub probe: ProbeSpec,
    /// Complex white noise on the synthesized samples, relative to their RMS.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub farfield: FarFieldSpec,
    pub independence: Option<IndependenceSpec>,
    pub freq_step: Option<FreqStepSpec>,
    pub sync: Option<SyncSpec>,
    pub scatter: Option<ScatterSpec>,
}

/// Source model; hull excitations are drawn from the top-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AutSpec {
    Hull { n_dipoles: usize, radius: f64 },
    Ring { n_dipoles: usize, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    pub values: Vec<f64>,
    #[serde(default)]
    pub reference: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeSpec {
    #[default]
    Plain,
    Array {
        separation: f64,
        displacement: Displacement,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitSpec {
    #[default]
    Spectral,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub max_iter: usize,
    pub t0: f64,
    pub mu_max: f64,
    pub stop_tol: f64,
    pub spectral_max_iter: usize,
    pub rel_tol: f64,
    pub init: InitSpec,
    pub multi_frequency: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let w = WirtingerOptions::default();
        Self {
            max_iter: w.max_iter,
            t0: w.t0,
            mu_max: w.mu_max,
            stop_tol: w.stop_tol,
            spectral_max_iter: SpectralOptions::default().max_iter,
            rel_tol: DEFAULT_REL_TOL,
            init: InitSpec::Spectral,
            multi_frequency: true,
        }
    }
}

impl SolverSpec {
    pub fn wirtinger(&self) -> WirtingerOptions {
        WirtingerOptions {
            max_iter: self.max_iter,
            t0: self.t0,
            mu_max: self.mu_max,
            stop_tol: self.stop_tol,
        }
    }

    pub fn spectral(&self, seed: u64) -> SpectralOptions {
        SpectralOptions {
            max_iter: self.spectral_max_iter,
            seed,
            ..SpectralOptions::default()
        }
    }
}

/// θ-cut of the far-field pattern used for pattern deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FarFieldSpec {
    pub phi_deg: f64,
    pub step_deg: f64,
}

impl Default for FarFieldSpec {
    fn default() -> Self {
        Self {
            phi_deg: 0.0,
            step_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetupSpec {
    Gaussian {
        n: usize,
    },
    SingleSphere {
        radius: f64,
    },
    TwoSpheres {
        r1: f64,
        r2: f64,
    },
    ProbeArray {
        radius: f64,
        separation: f64,
        displacement: Displacement,
    },
    MultiFrequency {
        radius: f64,
        frequencies: Vec<f64>,
    },
}

impl SetupSpec {
    pub fn to_setup(&self, gaussian_seed: u64) -> Result<IndependenceSetup, HarnessError> {
        Ok(match self {
            Self::Gaussian { n } => IndependenceSetup::Gaussian {
                n: *n,
                seed: gaussian_seed,
            },
            Self::SingleSphere { radius } => IndependenceSetup::SingleSphere { radius: *radius },
            Self::TwoSpheres { r1, r2 } => IndependenceSetup::TwoSpheres { r1: *r1, r2: *r2 },
            Self::ProbeArray {
                radius,
                separation,
                displacement,
            } => IndependenceSetup::ProbeArray {
                radius: *radius,
                probe: ProbeArray::new(*separation, *displacement)
                    .map_err(|e| HarnessError::Config(format!("independence.setups: {e}")))?,
            },
            Self::MultiFrequency { radius, frequencies } => IndependenceSetup::MultiFrequency {
                radius: *radius,
                frequencies: frequencies.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependenceSpec {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Frequency of the single-frequency setups.
    pub frequency: f64,
    pub sample_counts: Vec<usize>,
    pub setups: Vec<SetupSpec>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqStepSpec {
    pub n_dipoles: usize,
    pub ring_radii: Vec<f64>,
    pub observation_distance: f64,
    pub f1: f64,
    pub max_step_hz: f64,
    pub step_hz: f64,
}

impl Default for FreqStepSpec {
    fn default() -> Self {
        Self {
            n_dipoles: 1000,
            ring_radii: vec![0.18, 1.38],
            observation_distance: 2.1,
            f1: 1e9,
            max_step_hz: 500e6,
            step_hz: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSpec {
    pub tone_start_hz: f64,
    pub tone_spacing_hz: f64,
    pub n_tones: usize,
    pub reference_tone: usize,
    pub carrier_hz: f64,
    pub lo_hz: f64,
    pub sample_rate_hz: f64,
    pub n_periods: usize,
    pub n_positions: usize,
    /// Radius of the sphere carrying the receive positions, m.
    pub position_radius: f64,
    pub reference_position: usize,
    /// Noise relative to the comb RMS at unit channel gain.
    pub noise_level: f64,
    pub lo_offset_hz: f64,
    /// Per-position sampling offsets are drawn uniformly from `[0, max)`.
    pub max_delay_samples: f64,
    pub null_position: Option<usize>,
    pub null_level_db: f64,
    pub leakage_tol: f64,
    /// Residual synchronization errors of the jitter sweep, s.
    pub jitter_steps_s: Vec<f64>,
}

impl Default for SyncSpec {
    fn default() -> Self {
        Self {
            tone_start_hz: -9e6,
            tone_spacing_hz: 1e6,
            n_tones: 21,
            reference_tone: 9,
            carrier_hz: DEFAULT_CARRIER_HZ,
            lo_hz: DEFAULT_LO_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            n_periods: 10,
            n_positions: 10,
            position_radius: 1.0,
            reference_position: 0,
            noise_level: 1e-2,
            lo_offset_hz: 2e3,
            max_delay_samples: 200.0,
            null_position: Some(4),
            null_level_db: -60.0,
            leakage_tol: DEFAULT_LEAKAGE_TOL,
            jitter_steps_s: (1..=10).map(|i| i as f64 * 0.1e-9).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterSpec {
    pub n_trials: usize,
    pub modes: Vec<ScatterMode>,
    /// Initial guess of trial 0 (multi-frequency mode; single-frequency mode
    /// uses the spectral start instead of its own solution).
    pub special: Option<InitKind>,
    pub converged_db: f64,
}

impl Default for ScatterSpec {
    fn default() -> Self {
        Self {
            n_trials: 20,
            modes: vec![ScatterMode::SingleFrequency, ScatterMode::MultiFrequency],
            special: Some(InitKind::SingleFrequency),
            converged_db: -30.0,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.aut {
            AutSpec::Hull { n_dipoles, radius } => {
                if n_dipoles == 0 || n_dipoles % 2 != 0 {
                    return Err(invalid("aut.n_dipoles", "must be even and positive for a hull"));
                }
                positive("aut.radius", radius)?;
            }
            AutSpec::Ring { n_dipoles, radius } => {
                if n_dipoles == 0 {
                    return Err(invalid("aut.n_dipoles", "must be positive"));
                }
                if !(radius >= 0.0) {
                    return Err(invalid("aut.radius", "must be non-negative"));
                }
            }
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            s.expected_count().map_err(|e| invalid(&format!("surfaces[{i}]"), e))?;
        }
        if let Some(f) = &self.frequencies {
            if f.values.is_empty() {
                return Err(invalid("frequencies.values", "must not be empty"));
            }
            for (i, v) in f.values.iter().enumerate() {
                positive(&format!("frequencies.values[{i}]"), *v)?;
            }
            if f.reference >= f.values.len() {
                return Err(invalid(
                    "frequencies.reference",
                    format!("index {} out of range for {} frequencies", f.reference, f.values.len()),
                ));
            }
        }
        if let ProbeSpec::Array { separation, .. } = self.probe {
            positive("probe.separation", separation)?;
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(invalid("noise_level", "must be non-negative"));
        }
        positive("solver.t0", self.solver.t0)?;
        positive("solver.mu_max", self.solver.mu_max)?;
        positive("solver.rel_tol", self.solver.rel_tol)?;
        positive("farfield.step_deg", self.farfield.step_deg)?;
        if let Some(ind) = &self.independence {
            positive("independence.threshold", ind.threshold)?;
            positive("independence.frequency", ind.frequency)?;
            if ind.sample_counts.is_empty() || ind.sample_counts.contains(&0) {
                return Err(invalid("independence.sample_counts", "must be non-empty and positive"));
            }
            if ind.setups.is_empty() {
                return Err(invalid("independence.setups", "must not be empty"));
            }
            for (i, s) in ind.setups.iter().enumerate() {
                if let SetupSpec::MultiFrequency { frequencies, .. } = s {
                    if frequencies.is_empty() {
                        return Err(invalid(
                            &format!("independence.setups[{i}].frequencies"),
                            "must not be empty",
                        ));
                    }
                }
                s.to_setup(0)?;
            }
        }
        if let Some(fs) = &self.freq_step {
            if fs.n_dipoles == 0 || fs.ring_radii.is_empty() {
                return Err(invalid("freq_step", "needs dipoles and at least one ring radius"));
            }
            positive("freq_step.f1", fs.f1)?;
            positive("freq_step.step_hz", fs.step_hz)?;
            positive("freq_step.max_step_hz", fs.max_step_hz)?;
            positive("freq_step.observation_distance", fs.observation_distance)?;
        }
        if let Some(s) = &self.sync {
            if s.n_tones == 0 || s.reference_tone >= s.n_tones {
                return Err(invalid("sync.reference_tone", "out of range"));
            }
            if s.n_positions < 2 || s.reference_position >= s.n_positions {
                return Err(invalid(
                    "sync.reference_position",
                    "needs at least two positions and a valid index",
                ));
            }
            if let Some(p) = s.null_position {
                if p >= s.n_positions {
                    return Err(invalid("sync.null_position", "out of range"));
                }
            }
            if s.n_periods < 2 {
                return Err(invalid("sync.n_periods", "at least two periods are needed"));
            }
            positive("sync.sample_rate_hz", s.sample_rate_hz)?;
            positive("sync.tone_spacing_hz", s.tone_spacing_hz)?;
        }
        if let Some(s) = &self.scatter {
            if s.n_trials == 0 {
                return Err(invalid("scatter.n_trials", "must be positive"));
            }
        }
        Ok(())
    }

    /// Frequencies, or a config error naming the missing section.
    pub fn frequency_spec(&self) -> Result<&FrequencySpec, HarnessError> {
        self.frequencies
            .as_ref()
            .ok_or_else(|| invalid("frequencies", "section required by this subcommand"))
    }
}
