//! Domain model of the spin chain and its single-excitation-sector operator.
//!
//! A chain of `N` spins is described by `N - 1` exchange couplings and a
//! global anisotropy. Because the Hamiltonian conserves the number of
//! flipped spins, the dynamics started from a one-excitation state stays in
//! an `N`-dimensional subspace where the Hamiltonian is a real symmetric
//! tridiagonal matrix. Only that matrix is stored here; the exponentially
//! large operator exists solely inside the [`crate::oracle`] checks.
//!
//! Indexing: couplings are 0-based in code, so `couplings[n]` joins sites
//! `n` and `n + 1`. Human-facing output uses 1-based site labels.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Coefficient `c` in the identity `D_1 - D_2 = c * anisotropy * couplings[1]`
/// relating the first two diagonal entries of the single-excitation operator.
///
/// `oracle::derive_constants` re-derives this value from dense matrices so
/// that drift between this constant and the model is caught mechanically.
pub const DIAG_DIFF_COEFF: f64 = 2.0;

/// Coefficient `c` in `E_vac = c * anisotropy * total_coupling`, the energy of
/// the state with no excitation. Cross-checked by `oracle::derive_constants`.
pub const VACUUM_ENERGY_COEFF: f64 = 1.0;

/// Sign of a coupling whose magnitude is estimated from data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    /// Sign of a nonzero real number.
    pub fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    /// `+1.0` or `-1.0`.
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        })
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match i8::deserialize(deserializer)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(D::Error::custom(format!(
                "sign must be 1 or -1, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("a chain needs at least one coupling (two sites)")]
    NoCouplings,
    #[error("coupling {index} is not finite")]
    NonFiniteCoupling { index: usize },
    #[error("coupling {index} is zero; the chain would be disconnected")]
    ZeroCoupling { index: usize },
    #[error("anisotropy is not finite")]
    NonFiniteAnisotropy,
    #[error("sign hint {index} contradicts the sign of coupling {index}")]
    SignHintMismatch { index: usize },
    #[error("n_sites = {n_sites} does not match {n_couplings} couplings")]
    SiteCountMismatch { n_sites: usize, n_couplings: usize },
}

/// Ground-truth description of a chain: couplings, anisotropy, and the two
/// coupling signs that are assumed known to the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    n_sites: usize,
    couplings: Vec<f64>,
    anisotropy: f64,
    sign_hints: (Sign, Sign),
}

impl ChainSpec {
    /// Validates and builds a chain description.
    ///
    /// Couplings must be finite and nonzero (a zero coupling disconnects the
    /// chain), and the hints must match the actual signs of the first two
    /// couplings. For a two-site chain the second hint is ignored.
    pub fn new(
        couplings: Vec<f64>,
        anisotropy: f64,
        sign_hints: (Sign, Sign),
    ) -> Result<Self, ChainError> {
        if couplings.is_empty() {
            return Err(ChainError::NoCouplings);
        }
        for (index, &c) in couplings.iter().enumerate() {
            if !c.is_finite() {
                return Err(ChainError::NonFiniteCoupling { index });
            }
            if c == 0.0 {
                return Err(ChainError::ZeroCoupling { index });
            }
        }
        if !anisotropy.is_finite() {
            return Err(ChainError::NonFiniteAnisotropy);
        }
        if sign_hints.0 != Sign::of(couplings[0]) {
            return Err(ChainError::SignHintMismatch { index: 0 });
        }
        if couplings.len() > 1 && sign_hints.1 != Sign::of(couplings[1]) {
            return Err(ChainError::SignHintMismatch { index: 1 });
        }
        Ok(ChainSpec {
            n_sites: couplings.len() + 1,
            couplings,
            anisotropy,
            sign_hints,
        })
    }

    /// Convenience constructor that records the true signs as hints.
    pub fn with_true_hints(couplings: Vec<f64>, anisotropy: f64) -> Result<Self, ChainError> {
        let hints = (
            Sign::of(*couplings.first().ok_or(ChainError::NoCouplings)?),
            Sign::of(*couplings.get(1).unwrap_or(&1.0)),
        );
        ChainSpec::new(couplings, anisotropy, hints)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn anisotropy(&self) -> f64 {
        self.anisotropy
    }

    pub fn sign_hints(&self) -> (Sign, Sign) {
        self.sign_hints
    }

    /// Sum of all couplings.
    pub fn total_coupling(&self) -> f64 {
        self.couplings.iter().sum()
    }

    /// Largest coupling magnitude; a scale for sampling plans and tolerances.
    pub fn coupling_scale(&self) -> f64 {
        self.couplings.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Energy of the excitation-free state, `VACUUM_ENERGY_COEFF * Δ * G`.
    ///
    /// All measured frequencies are eigenvalues relative to this reference;
    /// the estimator never needs its absolute value.
    pub fn vacuum_energy(&self) -> f64 {
        VACUUM_ENERGY_COEFF * self.anisotropy * self.total_coupling()
    }

    /// The Hamiltonian restricted to the one-excitation subspace.
    pub fn single_excitation_hamiltonian(&self) -> TridiagonalOperator {
        let n = self.n_sites;
        let total = self.total_coupling();
        let mut diagonal = Vec::with_capacity(n);
        for site in 0..n {
            // boundary couplings are zero
            let left = if site == 0 { 0.0 } else { self.couplings[site - 1] };
            let right = if site == n - 1 { 0.0 } else { self.couplings[site] };
            diagonal.push(self.anisotropy * (total - 2.0 * right - 2.0 * left));
        }
        TridiagonalOperator {
            diagonal,
            off_diagonal: self.couplings.clone(),
            shift: 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChainSpecRepr {
    n_sites: usize,
    couplings: Vec<f64>,
    anisotropy: f64,
    sign_hints: [Sign; 2],
}

impl Serialize for ChainSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ChainSpecRepr {
            n_sites: self.n_sites,
            couplings: self.couplings.clone(),
            anisotropy: self.anisotropy,
            sign_hints: [self.sign_hints.0, self.sign_hints.1],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChainSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = ChainSpecRepr::deserialize(deserializer)?;
        if repr.n_sites != repr.couplings.len() + 1 {
            return Err(D::Error::custom(
                ChainError::SiteCountMismatch {
                    n_sites: repr.n_sites,
                    n_couplings: repr.couplings.len(),
                }
                .to_string(),
            ));
        }
        ChainSpec::new(
            repr.couplings,
            repr.anisotropy,
            (repr.sign_hints[0], repr.sign_hints[1]),
        )
        .map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Real symmetric tridiagonal operator, stored as its diagonal and single
/// off-diagonal. `shift` records any uniform offset added to the diagonal
/// (zero for the physical operator), so downstream code can work in a frame
/// relative to the vacuum energy without losing track of the original.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    diagonal: Vec<f64>,
    off_diagonal: Vec<f64>,
    shift: f64,
}

impl TridiagonalOperator {
    pub fn new(diagonal: Vec<f64>, off_diagonal: Vec<f64>) -> Result<Self, ChainError> {
        if off_diagonal.len() + 1 != diagonal.len() {
            return Err(ChainError::SiteCountMismatch {
                n_sites: diagonal.len(),
                n_couplings: off_diagonal.len(),
            });
        }
        Ok(TridiagonalOperator {
            diagonal,
            off_diagonal,
            shift: 0.0,
        })
    }

    /// Builds the operator directly from couplings and anisotropy without
    /// the `ChainSpec` validity checks. Used when re-assembling an operator
    /// from estimated parameters, which may legitimately contain zeros.
    pub fn from_parts(couplings: &[f64], anisotropy: f64) -> Self {
        let n = couplings.len() + 1;
        let total: f64 = couplings.iter().sum();
        let mut diagonal = Vec::with_capacity(n);
        for site in 0..n {
            let left = if site == 0 { 0.0 } else { couplings[site - 1] };
            let right = if site == n - 1 { 0.0 } else { couplings[site] };
            diagonal.push(anisotropy * (total - 2.0 * right - 2.0 * left));
        }
        TridiagonalOperator {
            diagonal,
            off_diagonal: couplings.to_vec(),
            shift: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn off_diagonal(&self) -> &[f64] {
        &self.off_diagonal
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Same operator with `offset` added to every diagonal entry; eigenvalues
    /// move by exactly `offset`, eigenvectors do not change.
    pub fn shifted(&self, offset: f64) -> Self {
        TridiagonalOperator {
            diagonal: self.diagonal.iter().map(|d| d + offset).collect(),
            off_diagonal: self.off_diagonal.clone(),
            shift: self.shift + offset,
        }
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let n = self.n();
        (0..n).fold(0.0f64, |m, i| {
            let left = if i == 0 { 0.0 } else { self.off_diagonal[i - 1].abs() };
            let right = if i + 1 == n { 0.0 } else { self.off_diagonal[i].abs() };
            m.max(self.diagonal[i].abs() + left + right)
        })
    }
}

/// How coupling signs are chosen when drawing a random chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPolicy {
    /// All couplings positive.
    Positive,
    /// Each coupling keeps or flips its sign with equal probability.
    Random,
}

/// Draws a chain with coupling magnitudes uniform in `magnitude_range`.
/// Hints always record the true signs of the first two couplings.
pub fn random_chain_spec<R: rand::Rng>(
    n_sites: usize,
    magnitude_range: (f64, f64),
    sign_policy: SignPolicy,
    anisotropy: f64,
    rng: &mut R,
) -> Result<ChainSpec, ChainError> {
    use rand::RngExt;
    if n_sites < 2 {
        return Err(ChainError::NoCouplings);
    }
    let (lo, hi) = magnitude_range;
    let couplings: Vec<f64> = (0..n_sites - 1)
        .map(|_| {
            let magnitude = rng.random_range(lo..=hi);
            match sign_policy {
                SignPolicy::Positive => magnitude,
                SignPolicy::Random => {
                    if rng.random::<bool>() {
                        magnitude
                    } else {
                        -magnitude
                    }
                }
            }
        })
        .collect();
    ChainSpec::with_true_hints(couplings, anisotropy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_site_chain() {
        let spec = ChainSpec::new(vec![1.0], 0.0, (Sign::Plus, Sign::Plus)).unwrap();
        assert_eq!(spec.n_sites(), 2);
        let op = spec.single_excitation_hamiltonian();
        assert_eq!(op.diagonal(), &[0.0, 0.0]);
        assert_eq!(op.off_diagonal(), &[1.0]);
    }

    #[test]
    fn uniform_three_site_chain() {
        let spec = ChainSpec::new(vec![1.0, 1.0], 1.0, (Sign::Plus, Sign::Plus)).unwrap();
        assert_eq!(spec.n_sites(), 3);
        let op = spec.single_excitation_hamiltonian();
        // G = 2, middle site loses both bonds twice over
        assert_eq!(op.diagonal(), &[0.0, -2.0, 0.0]);
        assert_eq!(op.off_diagonal(), &[1.0, 1.0]);
    }

    #[test]
    fn zero_coupling_rejected() {
        let err = ChainSpec::new(vec![1.0, 0.0, 1.0], 0.5, (Sign::Plus, Sign::Plus)).unwrap_err();
        assert_eq!(err, ChainError::ZeroCoupling { index: 1 });
    }

    #[test]
    fn non_finite_coupling_rejected() {
        let err =
            ChainSpec::new(vec![1.0, f64::NAN], 0.5, (Sign::Plus, Sign::Plus)).unwrap_err();
        assert_eq!(err, ChainError::NonFiniteCoupling { index: 1 });
    }

    #[test]
    fn inconsistent_hint_rejected() {
        let err = ChainSpec::new(vec![1.0, -1.0], 0.5, (Sign::Plus, Sign::Plus)).unwrap_err();
        assert_eq!(err, ChainError::SignHintMismatch { index: 1 });
    }

    #[test]
    fn second_hint_ignored_for_two_sites() {
        // (+, +) accepted even though there is no second coupling
        assert!(ChainSpec::new(vec![1.0], 0.0, (Sign::Plus, Sign::Minus)).is_ok());
    }

    #[test]
    fn total_coupling_sums_and_cancels() {
        let spec = ChainSpec::with_true_hints(vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(spec.total_coupling(), 2.0);
        let spec = ChainSpec::with_true_hints(vec![1.0, -1.0], 0.0).unwrap();
        assert_eq!(spec.total_coupling(), 0.0);
    }

    #[test]
    fn total_coupling_matches_compensated_sum() {
        // independent oracle: Kahan summation
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let couplings: Vec<f64> = (0..19).map(|_| rng.random_range(0.95..=1.05)).collect();
        let mut sum = 0.0f64;
        let mut carry = 0.0f64;
        for &c in &couplings {
            let y = c - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        let spec = ChainSpec::with_true_hints(couplings, 0.3).unwrap();
        assert!((spec.total_coupling() - sum).abs() <= 1e-13 * sum.abs());
    }

    #[test]
    fn diagonal_difference_identity() {
        // D1 - D2 = DIAG_DIFF_COEFF * Δ * δ2 for any spec
        let spec = ChainSpec::with_true_hints(vec![0.7, -1.3, 0.4, 2.0], 0.9).unwrap();
        let op = spec.single_excitation_hamiltonian();
        let lhs = op.diagonal()[0] - op.diagonal()[1];
        let rhs = DIAG_DIFF_COEFF * spec.anisotropy() * spec.couplings()[1];
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn shifted_operator_records_offset() {
        let spec = ChainSpec::with_true_hints(vec![1.0, 2.0], 0.5).unwrap();
        let op = spec.single_excitation_hamiltonian();
        let moved = op.shifted(-3.0);
        assert_eq!(moved.shift(), -3.0);
        for (a, b) in op.diagonal().iter().zip(moved.diagonal()) {
            assert!((a - 3.0 - b).abs() == 0.0);
        }
        assert_eq!(op.off_diagonal(), moved.off_diagonal());
    }

    #[test]
    fn json_round_trip() {
        let spec = ChainSpec::new(vec![1.0, -0.5, 0.25], 0.8, (Sign::Plus, Sign::Minus)).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"n_sites\":4"));
        assert!(json.contains("\"sign_hints\":[1,-1]"));
        let back: ChainSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn json_rejects_bad_site_count() {
        let json = r#"{"n_sites":5,"couplings":[1.0,1.0],"anisotropy":0.0,"sign_hints":[1,1]}"#;
        assert!(serde_json::from_str::<ChainSpec>(&json).is_err());
    }

    #[test]
    fn random_spec_respects_interval_and_hints() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec =
            random_chain_spec(20, (0.95, 1.05), SignPolicy::Positive, 0.0, &mut rng).unwrap();
        assert_eq!(spec.couplings().len(), 19);
        assert!(spec
            .couplings()
            .iter()
            .all(|c| (0.95..=1.05).contains(c)));
        let spec =
            random_chain_spec(10, (0.5, 1.5), SignPolicy::Random, 0.7, &mut rng).unwrap();
        assert_eq!(spec.sign_hints().0, Sign::of(spec.couplings()[0]));
        assert_eq!(spec.sign_hints().1, Sign::of(spec.couplings()[1]));
    }
}
