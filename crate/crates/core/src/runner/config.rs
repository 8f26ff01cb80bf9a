//! Experiment configuration (TOML, units in key names) and the physical
//! setup derived from it.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condition::Conditioning;
use crate::error::{Error, Result};
use crate::params::{
    derive_beta, derive_chi, presets, sigma_m, thermal_occupation, thermal_width, CavitySetup,
    MechMode, PulseSetup,
};
use crate::transduce::{shot_noise_sd, Transducer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub freq_mhz: f64,
    /// Energy decay rate Gamma/2pi.
    #[serde(default)]
    pub gamma_decay_hz: f64,
    /// Bath temperature; ignored when `n_th` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    #[serde(default = "one")]
    pub x_zpf_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub g0_mhz: f64,
    pub kappa_ghz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_in_ghz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_out_ghz: Option<f64>,
    pub eta_in: f64,
    pub eta_out: f64,
    #[serde(default)]
    pub detuning_mhz: f64,
    #[serde(default = "half")]
    pub phi_over_pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub n_photons: f64,
    #[serde(default = "default_n_lo")]
    pub n_lo: f64,
    #[serde(default = "default_tau_ns")]
    pub tau_ns: f64,
    #[serde(default = "default_gap_ms")]
    pub train_gap_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransductionModel {
    Eq1,
    Full,
    Linear,
    OffResonance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransductionConfig {
    #[serde(default = "default_model")]
    pub model: TransductionModel,
    /// Per-train detector offset SD (H').
    #[serde(default = "default_offset_sd")]
    pub offset_sd_hprime: f64,
    /// Detector volts per unit H'.
    #[serde(default = "one")]
    pub scale_a_volts: f64,
    #[serde(default = "yes")]
    pub shot_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Tomography angles (mode-1 phase) in units of pi.
    #[serde(default = "default_thetas")]
    pub theta_over_pi: Vec<f64>,
    /// Decoherence scan points `theta = 2 n pi`.
    #[serde(default)]
    pub decoherence_n: Vec<u32>,
    /// Time offsets around each scan point.
    #[serde(default = "zero_list")]
    pub offsets_ns: Vec<f64>,
    /// Add a tomography pulse at `2 pi` to every decoherence train.
    #[serde(default)]
    pub dual_tomography: bool,
    /// Estimator used by the decoherence scan.
    #[serde(default = "default_conditioning")]
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "yes")]
    pub postselect: bool,
    #[serde(default = "default_threshold")]
    pub threshold_hprime: f64,
    /// Accepted two-pulse samples to collect per angle when post-selecting.
    #[serde(default = "default_accepted")]
    pub accepted_per_angle: usize,
    #[serde(default = "default_cap")]
    pub max_trains_per_angle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationSource {
    /// Convert with the true `beta` and detector scale.
    Truth,
    /// Fit a simulated thermal histogram first and convert with the result.
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_source")]
    pub source: CalibrationSource,
    /// Pulse pairs used when `source = "fit"`.
    #[serde(default = "default_cal_trains")]
    pub trains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Deterministic conjugate kick of the Gaussian update (units of sqrt(2) x_zpf).
    #[serde(default)]
    pub omega_kick: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyConfig {
    /// Grid points per half axis of the reconstruction.
    #[serde(default = "default_half_points")]
    pub half_points: usize,
    #[serde(default = "yes")]
    pub hann: bool,
    /// Interpolated projections per measured angle before back-projection.
    #[serde(default = "default_angular_upsample")]
    pub angular_upsample: usize,
    #[serde(default = "yes")]
    pub write_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sweep_thresholds")]
    pub thresholds_hprime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Trains per batch (per angle or scan point); pulse pairs for `thermal`.
    pub trains: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub write_pulses: bool,
    pub modes: Vec<ModeConfig>,
    pub cavity: CavityConfig,
    pub pulse: PulseConfig,
    pub transduction: TransductionConfig,
    pub schedule: ScheduleConfig,
    pub selection: SelectionConfig,
    pub calibration: CalibrationConfig,
    pub measurement: MeasurementConfig,
    pub tomography: TomographyConfig,
    pub sweep: SweepConfig,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn default_n_lo() -> f64 {
    1e8
}
fn default_tau_ns() -> f64 {
    20.0
}
fn default_gap_ms() -> f64 {
    30.0
}
fn default_model() -> TransductionModel {
    TransductionModel::Eq1
}
fn default_offset_sd() -> f64 {
    0.05
}
fn default_thetas() -> Vec<f64> {
    (0..9).map(|k| 1.0 + k as f64 / 8.0).collect()
}
fn default_conditioning() -> Conditioning {
    Conditioning::TwoPulse
}
fn zero_list() -> Vec<f64> {
    vec![0.0]
}
fn default_threshold() -> f64 {
    0.31
}
fn default_accepted() -> usize {
    2000
}
fn default_cap() -> usize {
    200_000
}
fn default_source() -> CalibrationSource {
    CalibrationSource::Truth
}
fn default_cal_trains() -> usize {
    200_000
}
fn default_angular_upsample() -> usize {
    2
}

fn default_half_points() -> usize {
    40
}
fn default_sweep_thresholds() -> Vec<f64> {
    vec![0.1, 0.15, 0.2, 0.25, 0.31, 0.35, 0.4, 0.45, 0.5]
}

/// Named starting points matching the datasets of the reference device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Thermal calibration histogram.
    Thermal,
    /// Conditional-state tomography (two modes at 3.1081/3.2280 MHz).
    Tomography,
    /// Common-mode scan, 3.340/3.218 MHz.
    CommonMode,
    /// Thermal decoherence scan, 3.090/2.976 MHz, two tomography pulses.
    Decoherence,
    /// Off-resonance reference measurement.
    NoiseFloor,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thermal" => Ok(Preset::Thermal),
            "tomography" => Ok(Preset::Tomography),
            "common-mode" | "common_mode" => Ok(Preset::CommonMode),
            "decoherence" => Ok(Preset::Decoherence),
            "noise-floor" | "noise_floor" => Ok(Preset::NoiseFloor),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

fn mode(freq_mhz: f64, gamma_hz: f64) -> ModeConfig {
    ModeConfig {
        freq_mhz,
        gamma_decay_hz: gamma_hz,
        temp_k: Some(presets::TEMPERATURE_K),
        n_th: None,
        x_zpf_rel: 1.0,
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = ExperimentConfig {
            seed: 20_180_501,
            trains: 2000,
            output_dir: PathBuf::from("out"),
            write_pulses: false,
            modes: vec![mode(3.1081, 0.0), mode(3.2280, 0.0)],
            cavity: CavityConfig {
                g0_mhz: presets::G0_HZ / 1e6,
                kappa_ghz: presets::KAPPA_HZ / 1e9,
                kappa_in_ghz: None,
                kappa_out_ghz: None,
                eta_in: presets::ETA_IN,
                eta_out: presets::ETA_OUT_OVER_IN * presets::ETA_IN,
                detuning_mhz: 0.0,
                phi_over_pi: 0.5,
            },
            pulse: PulseConfig {
                n_photons: presets::N_PHOTONS,
                n_lo: default_n_lo(),
                tau_ns: default_tau_ns(),
                train_gap_ms: default_gap_ms(),
            },
            transduction: TransductionConfig {
                model: TransductionModel::Eq1,
                offset_sd_hprime: default_offset_sd(),
                scale_a_volts: 1.0,
                shot_noise: true,
            },
            schedule: ScheduleConfig {
                theta_over_pi: default_thetas(),
                decoherence_n: Vec::new(),
                offsets_ns: zero_list(),
                dual_tomography: false,
                conditioning: Conditioning::TwoPulse,
            },
            selection: SelectionConfig {
                postselect: true,
                threshold_hprime: default_threshold(),
                accepted_per_angle: default_accepted(),
                max_trains_per_angle: default_cap(),
            },
            calibration: CalibrationConfig {
                source: CalibrationSource::Truth,
                trains: default_cal_trains(),
            },
            measurement: MeasurementConfig { omega_kick: 0.0 },
            tomography: TomographyConfig {
                half_points: default_half_points(),
                hann: true,
                angular_upsample: default_angular_upsample(),
                write_samples: true,
            },
            sweep: SweepConfig {
                thresholds_hprime: default_sweep_thresholds(),
            },
        };
        match p {
            Preset::Thermal => {
                c.trains = 200_000;
                c.output_dir = PathBuf::from("out/thermal");
            }
            Preset::Tomography => {
                c.output_dir = PathBuf::from("out/tomography");
            }
            Preset::CommonMode => {
                c.modes = vec![mode(3.340, 400.0), mode(3.218, 400.0)];
                c.trains = 1000;
                c.schedule.decoherence_n = vec![1, 27, 28];
                c.schedule.conditioning = Conditioning::OnePulse;
                c.schedule.offsets_ns = vec![-10.0, 0.0, 10.0];
                c.transduction.model = TransductionModel::Linear;
                c.selection.postselect = false;
                c.output_dir = PathBuf::from("out/common_mode");
            }
            Preset::Decoherence => {
                c.modes = vec![mode(3.090, 400.0), mode(2.976, 400.0)];
                c.trains = 1000;
                c.schedule.decoherence_n = vec![1, 7, 14, 20, 27, 34, 41, 47, 54, 61, 68, 74, 81, 88, 95, 100];
                c.schedule.offsets_ns = vec![-10.0, 0.0, 10.0];
                c.schedule.dual_tomography = true;
                c.transduction.model = TransductionModel::Linear;
                c.selection.postselect = false;
                c.output_dir = PathBuf::from("out/decoherence");
            }
            Preset::NoiseFloor => {
                c.trains = 100_000;
                c.schedule.theta_over_pi = vec![2.0];
                c.transduction.model = TransductionModel::OffResonance;
                c.selection.postselect = false;
                c.output_dir = PathBuf::from("out/noise_floor");
            }
        }
        c
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trains < 1 {
            return bad("trains must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("at least one [[modes]] entry is required".into());
        }
        for (k, m) in self.modes.iter().enumerate() {
            if m.temp_k.is_none() && m.n_th.is_none() {
                return bad(format!("mode {k}: give temp_k or n_th"));
            }
        }
        if self.schedule.theta_over_pi.is_empty() {
            return bad("schedule.theta_over_pi must not be empty".into());
        }
        if self.schedule.theta_over_pi.iter().any(|t| !(*t > 0.0)) {
            return bad("tomography angles must be positive".into());
        }
        if !(self.selection.threshold_hprime > 0.0) {
            return bad("selection.threshold_hprime must be positive".into());
        }
        if !(self.transduction.offset_sd_hprime >= 0.0) || !(self.transduction.scale_a_volts > 0.0) {
            return bad("transduction offset must be >= 0 and scale positive".into());
        }
        self.physical().map(|_| ())
    }

    /// Physical parameters in SI / x_zpf units.
    pub fn physical(&self) -> Result<Physical> {
        let to_cfg = |e: Error| Error::Config(e.to_string());
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let omega = 2.0 * PI * m.freq_mhz * 1e6;
                let n_th = match (m.n_th, m.temp_k) {
                    (Some(n), _) => n,
                    (None, Some(t)) => thermal_occupation(t, omega)?,
                    (None, None) => unreachable!("validated"),
                };
                let mode = MechMode {
                    omega,
                    gamma_decay: 2.0 * PI * m.gamma_decay_hz,
                    n_th,
                    x_zpf_rel: m.x_zpf_rel,
                };
                mode.validate()?;
                Ok(mode)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(to_cfg)?;
        let kappa = 2.0 * PI * self.cavity.kappa_ghz * 1e9;
        let cavity = CavitySetup {
            g0: 2.0 * PI * self.cavity.g0_mhz * 1e6,
            kappa,
            kappa_in: self.cavity.kappa_in_ghz.map_or(0.5 * kappa, |k| 2.0 * PI * k * 1e9),
            kappa_out: self.cavity.kappa_out_ghz.map_or(0.5 * kappa, |k| 2.0 * PI * k * 1e9),
            eta_in: self.cavity.eta_in,
            eta_out: self.cavity.eta_out,
            detuning0: 2.0 * PI * self.cavity.detuning_mhz * 1e6,
            phi: PI * self.cavity.phi_over_pi,
        };
        cavity.validate().map_err(to_cfg)?;
        let pulse = PulseSetup {
            n_photons: self.pulse.n_photons,
            n_lo: self.pulse.n_lo,
            tau_pulse: self.pulse.tau_ns * 1e-9,
            train_gap: self.pulse.train_gap_ms * 1e-3,
        };
        pulse.validate().map_err(to_cfg)?;
        let beta = derive_beta(&cavity).map_err(to_cfg)?;
        let chi = derive_chi(&cavity, &pulse).map_err(to_cfg)?;
        let sigma_th = thermal_width(&modes).map_err(to_cfg)?;
        let noise_sd = if self.transduction.shot_noise {
            shot_noise_sd(beta, chi).map_err(to_cfg)?
        } else {
            0.0
        };
        let transducer = match self.transduction.model {
            TransductionModel::Eq1 => Transducer::Resonant { beta },
            TransductionModel::Full => Transducer::Full { cavity },
            TransductionModel::Linear => Transducer::Linear { beta },
            TransductionModel::OffResonance => Transducer::OffResonance,
        };
        Ok(Physical {
            modes,
            cavity,
            pulse,
            beta,
            chi,
            sigma_th,
            sigma_m: sigma_m(chi),
            noise_sd,
            transducer,
        })
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.schedule.theta_over_pi.iter().map(|t| t * PI).collect()
    }
}

/// Everything the simulation needs, in internal units.
#[derive(Debug, Clone)]
pub struct Physical {
    pub modes: Vec<MechMode>,
    pub cavity: CavitySetup,
    pub pulse: PulseSetup,
    pub beta: f64,
    pub chi: f64,
    pub sigma_th: f64,
    pub sigma_m: f64,
    /// Shot noise per pulse (H').
    pub noise_sd: f64,
    pub transducer: Transducer,
}

impl Physical {
    pub fn omega1(&self) -> f64 {
        self.modes[0].omega
    }

    /// Modes whose period is too short for the instantaneous-pulse model.
    pub fn snapshot_warnings(&self) -> Vec<String> {
        self.pulse
            .snapshot_violations(&self.modes)
            .into_iter()
            .map(|m| {
                format!(
                    "pulse of {:.1} ns exceeds 5% of the {:.4} MHz period; snapshot model still applied",
                    self.pulse.tau_pulse * 1e9,
                    m.omega / (2e6 * PI)
                )
            })
            .collect()
    }

    /// Shot noise expressed as displacement.
    pub fn noise_xzpf(&self) -> f64 {
        self.noise_sd / self.beta
    }
}
