//! Forward simulation of the measurement protocol.
//!
//! The system starts in an equal superposition of the empty chain and one
//! excitation on the first site. Everything the experimenter sees is the
//! reduced state of that site: its off-diagonal interferes the excitation's
//! return amplitude against the vacuum amplitude, so the measured complex
//! signal oscillates at the sector energies *relative to the vacuum energy*.
//! Shot noise enters through binomially sampled single-axis measurements.

use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::ChainSpec;
use crate::eigensolve::{self, EigenData, EigensolveError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Eigensolve(#[from] EigensolveError),
    #[error("need at least two records to form a time series")]
    TooFewRecords,
    #[error("time grid is not uniform at record {index}")]
    NonUniformGrid { index: usize },
    #[error("demodulation phases ({got}) must match the record count ({want})")]
    DemodLengthMismatch { got: usize, want: usize },
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Single-qubit state estimate at one time point. `shots_per_axis == 0`
/// marks exact (infinite-shot) expectation values.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyRecord {
    pub time: f64,
    /// Estimated (<x>, <y>, <z>).
    pub bloch: [f64; 3],
    pub shots_per_axis: u64,
}

/// Uniformly sampled complex return signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
}

impl SignalSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    /// Writes the `t, re, im` CSV form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,re,im")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(w, "{},{},{}", self.time(k), s.re, s.im)?;
        }
        Ok(())
    }

    /// Reads the `t, re, im` CSV form, checking grid uniformity.
    pub fn read_csv<R: BufRead>(r: R, path: &str) -> Result<Self, DynamicsError> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                continue; // header
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields = split_csv(&line, 3, path, lineno + 1)?;
            times.push(parse_field(fields[0], path, lineno + 1)?);
            samples.push(Complex64::new(
                parse_field(fields[1], path, lineno + 1)?,
                parse_field(fields[2], path, lineno + 1)?,
            ));
        }
        let (t0, dt) = uniform_grid(&times)?;
        Ok(SignalSeries { t0, dt, samples })
    }
}

fn split_csv<'a>(
    line: &'a str,
    want: usize,
    path: &str,
    lineno: usize,
) -> Result<Vec<&'a str>, DynamicsError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != want {
        return Err(DynamicsError::Csv {
            path: path.to_string(),
            line: lineno,
            message: format!("expected {want} fields, got {}", fields.len()),
        });
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    path: &str,
    lineno: usize,
) -> Result<T, DynamicsError> {
    field.parse().map_err(|_| DynamicsError::Csv {
        path: path.to_string(),
        line: lineno,
        message: format!("cannot parse {field:?}"),
    })
}

fn uniform_grid(times: &[f64]) -> Result<(f64, f64), DynamicsError> {
    if times.len() < 2 {
        return Err(DynamicsError::TooFewRecords);
    }
    let t0 = times[0];
    let dt = times[1] - times[0];
    for (index, pair) in times.windows(2).enumerate() {
        if ((pair[1] - pair[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-12) {
            return Err(DynamicsError::NonUniformGrid { index: index + 1 });
        }
    }
    Ok((t0, dt))
}

/// Amplitude for an excitation injected at the first site to return there
/// after time `t`: the weighted sum of eigenphases.
pub fn return_amplitude(eig: &EigenData, t: f64) -> Complex64 {
    eig.energies()
        .iter()
        .zip(eig.first_components())
        .map(|(&energy, &a)| a * a * Complex64::from_polar(1.0, -energy * t))
        .sum()
}

/// 2x2 density matrix in the (no excitation, excitation) basis of the
/// first site.
pub type DensityMatrix = [[Complex64; 2]; 2];

/// Bloch components (<x>, <y>, <z>) of a single-qubit state.
pub fn bloch_vector(rho: &DensityMatrix) -> [f64; 3] {
    [
        2.0 * rho[1][0].re,
        2.0 * rho[1][0].im,
        (rho[0][0] - rho[1][1]).re,
    ]
}

/// Reduced state of the first spin at time `t` for the protocol's initial
/// state (equal superposition of vacuum and one excitation at site 1).
///
/// The off-diagonal carries the return amplitude referenced to the vacuum
/// phase: with `g(t) = sum_j w_j exp(-i (E_j - e_vac) t)` the state is
/// `[[2 - |g|^2, g*], [g, |g|^2]] / 2`. Pass eigendata of the vacuum-shifted
/// operator together with `e_vac = 0` for the same result.
pub fn reduced_state_spin1(eig: &EigenData, e_vac: f64, t: f64) -> DensityMatrix {
    let g: Complex64 = eig
        .energies()
        .iter()
        .zip(eig.first_components())
        .map(|(&energy, &a)| a * a * Complex64::from_polar(1.0, -(energy - e_vac) * t))
        .sum();
    let population = g.norm_sqr();
    [
        [
            Complex64::new(1.0 - 0.5 * population, 0.0),
            0.5 * g.conj(),
        ],
        [0.5 * g, Complex64::new(0.5 * population, 0.0)],
    ]
}

/// Simulates single-qubit tomography of the first spin at the given times.
///
/// `shots_per_axis == 0` returns exact expectation values. Otherwise each
/// Pauli axis is measured independently `shots_per_axis` times and the
/// empirical mean recorded. Each (time index, axis) pair draws from its own
/// deterministic RNG stream, so results do not depend on evaluation order.
pub fn simulate_tomography(
    spec: &ChainSpec,
    times: &[f64],
    shots_per_axis: u64,
    seed: u64,
) -> Result<Vec<TomographyRecord>, DynamicsError> {
    let op = spec
        .single_excitation_hamiltonian()
        .shifted(-spec.vacuum_energy());
    let eig = eigensolve::eigendecompose(&op, false)?;
    let records = times
        .par_iter()
        .enumerate()
        .map(|(index, &time)| {
            let rho = reduced_state_spin1(&eig, 0.0, time);
            let exact = bloch_vector(&rho);
            let bloch = if shots_per_axis == 0 {
                exact
            } else {
                let mut sampled = [0.0; 3];
                for (axis, value) in exact.iter().enumerate() {
                    sampled[axis] =
                        sample_axis_mean(*value, shots_per_axis, seed, index as u64, axis as u64);
                }
                sampled
            };
            TomographyRecord {
                time,
                bloch,
                shots_per_axis,
            }
        })
        .collect();
    Ok(records)
}

/// Empirical mean of `shots` projective +-1 measurements with expectation
/// `expectation`, drawn from the stream keyed by (time index, axis).
fn sample_axis_mean(expectation: f64, shots: u64, seed: u64, index: u64, axis: u64) -> f64 {
    let p_up = (0.5 * (1.0 + expectation)).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3 * index + axis);
    let ups = Binomial::new(shots, p_up)
        .expect("probability is clamped to [0, 1]")
        .sample(&mut rng);
    2.0 * ups as f64 / shots as f64 - 1.0
}

/// Assembles the complex return signal from tomography records.
///
/// The measured off-diagonal already contains the vacuum reference, so
/// `s_k = <x>_k + i <y>_k` oscillates at the vacuum-relative energies; with
/// exact records `s_k = sum_j w_j exp(-i (E_j - E_vac) t_k)`. An optional
/// per-sample phase factor can be applied for diagnostics in a different
/// rotating frame.
pub fn signal_from_tomography(
    records: &[TomographyRecord],
    demod: Option<&[Complex64]>,
) -> Result<SignalSeries, DynamicsError> {
    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    let (t0, dt) = uniform_grid(&times)?;
    if let Some(phases) = demod {
        if phases.len() != records.len() {
            return Err(DynamicsError::DemodLengthMismatch {
                got: phases.len(),
                want: records.len(),
            });
        }
    }
    let samples = records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let s = Complex64::new(r.bloch[0], r.bloch[1]);
            match demod {
                Some(phases) => s * phases[k],
                None => s,
            }
        })
        .collect();
    Ok(SignalSeries { t0, dt, samples })
}

/// Writes records as `t, sx, sy, sz, shots` CSV.
pub fn write_tomography_csv<W: Write>(records: &[TomographyRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "t,sx,sy,sz,shots")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.time, r.bloch[0], r.bloch[1], r.bloch[2], r.shots_per_axis
        )?;
    }
    Ok(())
}

/// Reads the `t, sx, sy, sz, shots` CSV form.
pub fn read_tomography_csv<R: BufRead>(
    r: R,
    path: &str,
) -> Result<Vec<TomographyRecord>, DynamicsError> {
    let mut records = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields = split_csv(&line, 5, path, lineno + 1)?;
        records.push(TomographyRecord {
            time: parse_field(fields[0], path, lineno + 1)?,
            bloch: [
                parse_field(fields[1], path, lineno + 1)?,
                parse_field(fields[2], path, lineno + 1)?,
                parse_field(fields[3], path, lineno + 1)?,
            ],
            shots_per_axis: parse_field(fields[4], path, lineno + 1)?,
        });
    }
    Ok(records)
}
