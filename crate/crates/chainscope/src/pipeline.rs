//! End-to-end runs shared by the command-line driver and the validators:
//! plan, simulate, transform, extract, reconstruct.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainError, ChainSpec, Sign};
use crate::dynamics::{self, DynamicsError, SignalSeries, TomographyRecord};
use crate::eigensolve::EigensolveError;
use crate::reconstruct::{
    self, ReconstructError, ReconstructOptions, ReconstructionResult, SpectralInput,
};
use crate::spectral::{
    self, PeakOptions, Periodogram, PlanConfig, SamplingPlan, SpectralError, SpectrumEstimate,
    Window,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("eigensolve: {0}")]
    Eigensolve(#[from] EigensolveError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("reconstruct: {0}")]
    Reconstruct(#[from] ReconstructError),
}

impl PipelineError {
    /// Module the failure originated in, for operator-facing diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            PipelineError::Chain(_) => "chain",
            PipelineError::Eigensolve(_) => "eigensolve",
            PipelineError::Dynamics(_) => "dynamics",
            PipelineError::Spectral(_) => "spectral",
            PipelineError::Reconstruct(_) => "reconstruct",
        }
    }

    /// True when the failure is a sampling-budget overrun.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            PipelineError::Spectral(SpectralError::SampleBudget { .. })
        )
    }
}

/// Explicit grid values that take precedence over the automatic plan.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOverrides {
    pub dt: Option<f64>,
    pub total_time: Option<f64>,
    pub n_samples: Option<usize>,
}

/// All tunables of a run, in one place.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub plan: PlanConfig,
    pub overrides: SamplingOverrides,
    pub window: Window,
    pub peaks: PeakOptions,
    pub reconstruct: ReconstructOptions,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            plan: PlanConfig::default(),
            overrides: SamplingOverrides::default(),
            window: Window::Hann,
            peaks: PeakOptions::default(),
            reconstruct: ReconstructOptions::default(),
        }
    }
}

/// Sampling plan for a known chain, with overrides applied and the sample
/// budget enforced.
pub fn effective_plan(
    spec: &ChainSpec,
    settings: &PipelineSettings,
) -> Result<SamplingPlan, PipelineError> {
    let planned = spectral::plan_sampling(
        spec.n_sites(),
        spec.coupling_scale(),
        spec.anisotropy(),
        &settings.plan,
    )?;
    let o = &settings.overrides;
    if o.dt.is_none() && o.total_time.is_none() && o.n_samples.is_none() {
        return Ok(planned);
    }
    let dt = o.dt.unwrap_or(planned.dt);
    let n_samples = match (o.n_samples, o.total_time) {
        (Some(n), _) => n,
        (None, Some(t)) => ((t / dt).ceil() as usize).next_power_of_two(),
        (None, None) => ((planned.total_time / dt).ceil() as usize).next_power_of_two(),
    };
    if n_samples > settings.plan.max_samples {
        return Err(PipelineError::Spectral(SpectralError::SampleBudget {
            needed: n_samples,
            budget: settings.plan.max_samples,
        }));
    }
    Ok(SamplingPlan {
        dt,
        total_time: n_samples as f64 * dt,
        n_samples,
    })
}

/// Runs the measurement simulation on the planned grid.
pub fn simulate(
    spec: &ChainSpec,
    plan: &SamplingPlan,
    shots_per_axis: u64,
    seed: u64,
) -> Result<(Vec<TomographyRecord>, SignalSeries), PipelineError> {
    let records = dynamics::simulate_tomography(spec, &plan.times(), shots_per_axis, seed)?;
    let signal = dynamics::signal_from_tomography(&records, None)?;
    Ok((records, signal))
}

/// Everything the estimation stage produces.
#[derive(Debug)]
pub struct EstimateOutput {
    pub periodogram: Periodogram,
    pub spectrum: SpectrumEstimate,
    pub result: ReconstructionResult,
}

/// Spectrum extraction and reconstruction from a measured signal.
pub fn estimate(
    signal: &SignalSeries,
    n_sites: usize,
    sign_hints: (Sign, Sign),
    settings: &PipelineSettings,
) -> Result<EstimateOutput, PipelineError> {
    let periodogram = spectral::periodogram(signal, settings.window)?;
    let spectrum = spectral::extract_peaks(&periodogram, n_sites, &settings.peaks)?;
    let input = SpectralInput::from_spectrum(&spectrum, sign_hints);
    let mut result = reconstruct::reconstruct_couplings(&input, &settings.reconstruct)?;
    reconstruct::verify_reconstruction(&mut result, &input)?;
    Ok(EstimateOutput {
        periodogram,
        spectrum,
        result,
    })
}

/// Simulate-then-estimate against a known ground truth.
pub fn roundtrip(
    spec: &ChainSpec,
    shots_per_axis: u64,
    seed: u64,
    settings: &PipelineSettings,
) -> Result<(SamplingPlan, EstimateOutput), PipelineError> {
    let plan = effective_plan(spec, settings)?;
    let (_, signal) = simulate(spec, &plan, shots_per_axis, seed)?;
    let output = estimate(&signal, spec.n_sites(), spec.sign_hints(), settings)?;
    Ok((plan, output))
}

/// Error summary of an estimate against the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingErrors {
    /// Signed per-coupling errors, estimate minus truth.
    pub per_coupling: Vec<f64>,
    pub max_abs: f64,
    pub rms: f64,
    /// Standard deviation of the signed errors around their mean.
    pub std: f64,
    pub anisotropy_error: f64,
}

pub fn coupling_errors(truth: &ChainSpec, estimate: &ReconstructionResult) -> CouplingErrors {
    let per_coupling: Vec<f64> = estimate
        .couplings_hat
        .iter()
        .zip(truth.couplings())
        .map(|(got, want)| got - want)
        .collect();
    let k = per_coupling.len() as f64;
    let max_abs = per_coupling.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let rms = (per_coupling.iter().map(|e| e * e).sum::<f64>() / k).sqrt();
    let mean = per_coupling.iter().sum::<f64>() / k;
    let std = (per_coupling.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / k).sqrt();
    CouplingErrors {
        per_coupling,
        max_abs,
        rms,
        std,
        anisotropy_error: estimate.anisotropy_hat - truth.anisotropy(),
    }
}

/// Sub-seed derivation: every stochastic stage hashes the master seed with
/// a fixed domain tag and an index, so runs are reproducible and stages
/// stay decoupled.
pub mod seeds {
    pub const DOMAIN_COUPLINGS: u64 = 1;
    pub const DOMAIN_TOMOGRAPHY: u64 = 2;
    pub const DOMAIN_SWEEP: u64 = 3;
    pub const DOMAIN_PERTURBATION: u64 = 4;

    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Deterministic sub-seed for (master, domain, index).
    pub fn derive(master: u64, domain: u64, index: u64) -> u64 {
        splitmix64(splitmix64(master ^ splitmix64(domain)) ^ index)
    }
}
