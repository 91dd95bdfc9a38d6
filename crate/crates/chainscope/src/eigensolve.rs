//! Eigendecomposition of real symmetric tridiagonal operators.
//!
//! Implicit-shift QL with accumulated Givens rotations, the standard
//! workhorse for Jacobi matrices. The solver always tracks the first row of
//! the eigenvector matrix (the overlaps of the eigenvectors with the first
//! site, which is all the measurement protocol can see); full eigenvectors
//! are accumulated only on request.

use crate::chain::TridiagonalOperator;
use thiserror::Error;

/// Energies closer than this times the spectral radius are reported as
/// degenerate by [`gap_report`].
pub const DEGENERACY_RTOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EigensolveError {
    #[error("QL iteration failed to converge for eigenvalue {index}")]
    NoConvergence { index: usize },
    #[error("operator must have at least one row")]
    Empty,
}

/// Spectrum of a tridiagonal operator together with the first components
/// of its eigenvectors.
///
/// Energies are ascending. Every eigenvector is flipped, if necessary, so
/// that its first component is positive; with all off-diagonal entries
/// nonzero a first component cannot vanish, so the convention is total.
#[derive(Debug, Clone)]
pub struct EigenData {
    energies: Vec<f64>,
    first_components: Vec<f64>,
    vectors: Option<Vec<Vec<f64>>>,
}

impl EigenData {
    pub fn n(&self) -> usize {
        self.energies.len()
    }

    /// Eigenvalues, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// First component of each eigenvector, aligned with `energies`.
    pub fn first_components(&self) -> &[f64] {
        &self.first_components
    }

    /// Squared first components; the spectral weights seen by the protocol.
    pub fn weights(&self) -> Vec<f64> {
        self.first_components.iter().map(|a| a * a).collect()
    }

    /// Full eigenvectors (one `Vec` per eigenvalue) if they were requested.
    pub fn vectors(&self) -> Option<&[Vec<f64>]> {
        self.vectors.as_deref()
    }

    /// Same eigendata with `offset` added to every energy.
    pub fn shifted(&self, offset: f64) -> EigenData {
        EigenData {
            energies: self.energies.iter().map(|e| e + offset).collect(),
            first_components: self.first_components.clone(),
            vectors: self.vectors.clone(),
        }
    }
}

/// Diagonalizes a symmetric tridiagonal operator.
///
/// Eigenvalues come from implicit-shift QL. The first components are then
/// recomputed one eigenvalue at a time by twisted factorization, which
/// keeps their *relative* accuracy even when localization makes them
/// exponentially small; rotation-accumulated values would only be accurate
/// in an absolute sense, which silently erases the far end of a disordered
/// chain. Full eigenvectors, when requested, come from the accumulated
/// rotations (orthonormal to machine precision).
pub fn eigendecompose(
    op: &TridiagonalOperator,
    want_vectors: bool,
) -> Result<EigenData, EigensolveError> {
    let n = op.n();
    if n == 0 {
        return Err(EigensolveError::Empty);
    }
    let mut d = op.diagonal().to_vec();
    let mut e = op.off_diagonal().to_vec();
    e.push(0.0);

    // rotation accumulator: row k holds <k|E_j> in column j
    let mut rows: Vec<Vec<f64>> = if want_vectors {
        (0..n)
            .map(|k| {
                let mut row = vec![0.0; n];
                row[k] = 1.0;
                row
            })
            .collect()
    } else {
        Vec::new()
    };

    ql_implicit_shift(&mut d, &mut e, &mut rows)?;

    // ascending energies
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let energies: Vec<f64> = order.iter().map(|&j| d[j]).collect();

    let first_components: Vec<f64> = energies
        .iter()
        .map(|&energy| twisted_first_component(op.diagonal(), op.off_diagonal(), energy))
        .collect();

    let columns = want_vectors.then(|| {
        let mut columns: Vec<Vec<f64>> = order
            .iter()
            .map(|&j| rows.iter().map(|row| row[j]).collect())
            .collect();
        // phase convention: first component positive
        for column in &mut columns {
            if column[0] < 0.0 {
                for x in column.iter_mut() {
                    *x = -*x;
                }
            }
        }
        columns
    });

    Ok(EigenData {
        energies,
        first_components,
        vectors: columns,
    })
}

/// First component of the eigenvector for `lambda`, by twisted
/// factorization.
///
/// The operator minus the eigenvalue is factored top-down and bottom-up;
/// the twist sits where the two meet with the smallest pivot defect, which
/// is where the eigenvector is largest. Components are then built outward
/// from the twist as products of pivot ratios, so each one carries relative
/// (not just absolute) accuracy. The first component's sign is a gauge
/// choice and is returned positive.
fn twisted_first_component(diag: &[f64], off: &[f64], lambda: f64) -> f64 {
    let n = diag.len();
    if n == 1 {
        return 1.0;
    }
    let scale = diag
        .iter()
        .chain(off)
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(lambda.abs());
    // pivot breakdown guard; an exact zero only occurs when lambda is an
    // eigenvalue of a leading/trailing block
    let tiny = f64::EPSILON * f64::EPSILON * scale.max(f64::MIN_POSITIVE);
    let guard = |pivot: f64| {
        if pivot == 0.0 {
            tiny
        } else {
            pivot
        }
    };

    // top-down pivots of (H - lambda)
    let mut forward = vec![0.0; n];
    forward[0] = guard(diag[0] - lambda);
    for i in 1..n {
        forward[i] = guard((diag[i] - lambda) - off[i - 1] * off[i - 1] / forward[i - 1]);
    }
    // bottom-up pivots
    let mut backward = vec![0.0; n];
    backward[n - 1] = guard(diag[n - 1] - lambda);
    for i in (0..n - 1).rev() {
        backward[i] = guard((diag[i] - lambda) - off[i] * off[i] / backward[i + 1]);
    }
    // twist where the combined pivot defect is smallest
    let twist = (0..n)
        .min_by(|&a, &b| {
            let ga = (forward[a] + backward[a] - (diag[a] - lambda)).abs();
            let gb = (forward[b] + backward[b] - (diag[b] - lambda)).abs();
            ga.total_cmp(&gb)
        })
        .expect("n >= 1");

    let mut z = vec![0.0; n];
    z[twist] = 1.0;
    for i in (0..twist).rev() {
        z[i] = -(off[i] / forward[i]) * z[i + 1];
    }
    for i in twist + 1..n {
        z[i] = -(off[i - 1] / backward[i]) * z[i - 1];
    }
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    (z[0] / norm).abs()
}

/// QL sweeps with implicit Wilkinson-style shifts. `e` has length n with a
/// trailing zero; `rows` are rotated in place.
fn ql_implicit_shift(
    d: &mut [f64],
    e: &mut [f64],
    rows: &mut [Vec<f64>],
) -> Result<(), EigensolveError> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            // locate the first negligible off-diagonal at or after l
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(EigensolveError::NoConvergence { index: l });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut deflated = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // lost orthogonality recovered by deflation
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in rows.iter_mut() {
                    f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Spectral gap summary used to judge whether two lines can be resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// Smallest distance between adjacent energies.
    pub min_gap: f64,
    /// Largest energy magnitude (the spectral radius).
    pub max_abs_energy: f64,
    /// True when `min_gap <= DEGENERACY_RTOL * max_abs_energy`, the premise
    /// of the reconstruction no longer holding in practice.
    pub degenerate: bool,
}

/// Reports the minimal adjacent energy distance and the spectral radius.
pub fn gap_report(eig: &EigenData) -> GapReport {
    assert!(eig.n() >= 2, "gap report needs at least two energies");
    let energies = eig.energies();
    let min_gap = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let max_abs_energy = energies.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    GapReport {
        min_gap,
        max_abs_energy,
        degenerate: min_gap <= DEGENERACY_RTOL * max_abs_energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainSpec, TridiagonalOperator};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_operator(n: usize, seed: u64) -> TridiagonalOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diagonal: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let off: Vec<f64> = (0..n - 1)
            .map(|_| {
                let x: f64 = rng.random_range(0.2..1.5);
                if rng.random::<bool>() {
                    x
                } else {
                    -x
                }
            })
            .collect();
        TridiagonalOperator::new(diagonal, off).unwrap()
    }

    fn apply(op: &TridiagonalOperator, v: &[f64]) -> Vec<f64> {
        let n = op.n();
        let d = op.diagonal();
        let e = op.off_diagonal();
        (0..n)
            .map(|i| {
                let mut y = d[i] * v[i];
                if i > 0 {
                    y += e[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    y += e[i] * v[i + 1];
                }
                y
            })
            .collect()
    }

    #[test]
    fn two_by_two_exact() {
        let op = TridiagonalOperator::new(vec![0.0, 0.0], vec![1.0]).unwrap();
        let eig = eigendecompose(&op, false).unwrap();
        assert!((eig.energies()[0] + 1.0).abs() < 1e-14);
        assert!((eig.energies()[1] - 1.0).abs() < 1e-14);
        let inv_sqrt2 = 0.5f64.sqrt();
        for a in eig.first_components() {
            assert!((a - inv_sqrt2).abs() < 1e-14);
        }
    }

    #[test]
    fn three_by_three_matches_characteristic_roots() {
        // roots of x(x^2 + 2x - 2) = 0, worked out independently
        let op = TridiagonalOperator::new(vec![0.0, -2.0, 0.0], vec![1.0, 1.0]).unwrap();
        let eig = eigendecompose(&op, false).unwrap();
        let sqrt3 = 3.0f64.sqrt();
        let expected = [-1.0 - sqrt3, 0.0, sqrt3 - 1.0];
        for (e, x) in eig.energies().iter().zip(expected) {
            assert!((e - x).abs() < 1e-13, "got {e}, want {x}");
        }
    }

    #[test]
    fn residuals_below_tolerance_for_random_operator() {
        let op = random_operator(20, 11);
        let eig = eigendecompose(&op, true).unwrap();
        let scale = op.norm_bound();
        for (j, vector) in eig.vectors().unwrap().iter().enumerate() {
            let hv = apply(&op, vector);
            let resid: f64 = hv
                .iter()
                .zip(vector)
                .map(|(hv_i, v_i)| (hv_i - eig.energies()[j] * v_i).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-12 * scale, "residual {resid} at {j}");
        }
    }

    #[test]
    fn vectors_orthonormal_up_to_n_200() {
        for &(n, seed) in &[(50usize, 1u64), (200, 2)] {
            let op = random_operator(n, seed);
            let eig = eigendecompose(&op, true).unwrap();
            let vs = eig.vectors().unwrap();
            for i in 0..n {
                for j in i..n {
                    let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (dot - want).abs() <= 1e-12,
                        "n={n} <v{i},v{j}> = {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn trace_identity() {
        let op = random_operator(37, 5);
        let eig = eigendecompose(&op, false).unwrap();
        let tr_spectrum: f64 = eig.energies().iter().sum();
        let tr_diag: f64 = op.diagonal().iter().sum();
        assert!((tr_spectrum - tr_diag).abs() <= 1e-10);
    }

    #[test]
    fn first_components_positive_and_normalized() {
        let op = random_operator(31, 9);
        let eig = eigendecompose(&op, false).unwrap();
        let mut norm = 0.0;
        for a in eig.first_components() {
            assert!(*a > 0.0);
            norm += a * a;
        }
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_row_matches_full_vectors() {
        let op = random_operator(24, 13);
        let fast = eigendecompose(&op, false).unwrap();
        let full = eigendecompose(&op, true).unwrap();
        for j in 0..op.n() {
            assert!((fast.energies()[j] - full.energies()[j]).abs() < 1e-13);
            assert!(
                (fast.first_components()[j] - full.first_components()[j]).abs() < 1e-13
            );
            // twisted-factorization value vs accumulated-rotation value
            assert!((full.vectors().unwrap()[j][0] - full.first_components()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_first_components_keep_relative_accuracy() {
        // a weak bridge in the middle: the eigenvectors living on the far
        // side reach the first site only through the bridge, so their first
        // components are proportional to it. Doubling the bridge must
        // double them; rotation-accumulated components at this scale would
        // be rounding noise and fail the ratio badly.
        let barrier = 1e-12;
        let spectrum_at = |eps: f64| {
            let op = TridiagonalOperator::new(
                vec![0.3, -0.1, 0.2, 0.4, -0.2, 0.1],
                vec![1.0, 0.9, eps, 1.1, 0.95],
            )
            .unwrap();
            eigendecompose(&op, false).unwrap()
        };
        let base = spectrum_at(barrier);
        let doubled = spectrum_at(2.0 * barrier);
        let mut saw_tiny = false;
        for j in 0..base.n() {
            let a = base.first_components()[j];
            assert!(a > 0.0);
            if a < 1e-9 {
                saw_tiny = true;
                let ratio = doubled.first_components()[j] / a;
                assert!((ratio - 2.0).abs() < 1e-6, "component {j}: ratio {ratio}");
            }
        }
        assert!(saw_tiny, "expected far-side components below 1e-9");
    }

    #[test]
    fn shift_moves_energies_not_components() {
        let op = random_operator(15, 21);
        let eig = eigendecompose(&op, false).unwrap();
        let shifted = eigendecompose(&op.shifted(0.37), false).unwrap();
        for j in 0..op.n() {
            assert!((shifted.energies()[j] - eig.energies()[j] - 0.37).abs() <= 1e-12);
            assert!(
                (shifted.first_components()[j] - eig.first_components()[j]).abs() <= 1e-12
            );
        }
    }

    #[test]
    fn gap_report_two_levels() {
        let op = TridiagonalOperator::new(vec![0.0, 0.0], vec![1.0]).unwrap();
        let report = gap_report(&eigendecompose(&op, false).unwrap());
        assert!((report.min_gap - 2.0).abs() < 1e-14);
        assert!((report.max_abs_energy - 1.0).abs() < 1e-14);
        assert!(!report.degenerate);
    }

    #[test]
    fn gap_report_flags_degenerate_pair() {
        // decoupled-in-practice chain: tiny bridge coupling splits a
        // symmetric pair by next to nothing
        let op = TridiagonalOperator::new(vec![1.0, 0.0, 1.0], vec![1e-12, 1e-12]).unwrap();
        let report = gap_report(&eigendecompose(&op, false).unwrap());
        assert!(report.degenerate);
        assert!(report.min_gap < 1e-9);
    }

    #[test]
    fn uniform_chain_min_gap_scales_inverse_square() {
        // dispersion check: for uniform couplings the minimal gap shrinks
        // like 1/N^2; fit the log-log slope over a range of sizes
        let mut logs: Vec<(f64, f64)> = Vec::new();
        for n in (10..=60).step_by(10) {
            let spec = ChainSpec::with_true_hints(vec![1.0; n - 1], 0.0).unwrap();
            let eig = eigendecompose(&spec.single_excitation_hamiltonian(), false).unwrap();
            let report = gap_report(&eig);
            logs.push(((n as f64).ln(), report.min_gap.ln()));
        }
        let k = logs.len() as f64;
        let mean_x = logs.iter().map(|(x, _)| x).sum::<f64>() / k;
        let mean_y = logs.iter().map(|(_, y)| y).sum::<f64>() / k;
        let slope: f64 = logs
            .iter()
            .map(|(x, y)| (x - mean_x) * (y - mean_y))
            .sum::<f64>()
            / logs.iter().map(|(x, _)| (x - mean_x).powi(2)).sum::<f64>();
        assert!((slope + 2.0).abs() < 0.15, "slope {slope}");
    }
}
