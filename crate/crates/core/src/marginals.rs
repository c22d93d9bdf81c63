//! Prior cluster-size distributions and the optimal cluster-to-marginal
//! permutation by double sorting, with a factorial brute-force oracle.
//!
//! The energy minimized over permutations is
//! `E(R) = sum_y -counts[y] * log r[R(y)]` (a constant term dropped).
//! Pairing the ascending order of `counts` with the ascending order of
//! `log r` is optimal: any permutation leaving a discordant pair can be
//! improved by swapping it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to Gaussian draws before normalization; N(1, 0.1)
/// puts ~1e-23 mass below it but the generator must stay defined.
const GAUSSIAN_DRAW_FLOOR: f64 = 0.01;

/// Shape of a prior cluster-size distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    Uniform,
    GaussianPerturbed { mu: f64, sigma: f64 },
    Zipf { exponent: f64 },
    Explicit { weights: Vec<f64> },
}

impl MarginalKind {
    pub fn gaussian_default() -> Self {
        MarginalKind::GaussianPerturbed { mu: 1.0, sigma: 0.1 }
    }
}

/// Generator spec for a prior cluster-size distribution over `k` clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub kind: MarginalKind,
    pub k: usize,
    pub seed: u64,
}

impl MarginalSpec {
    pub fn uniform(k: usize) -> Self {
        MarginalSpec {
            kind: MarginalKind::Uniform,
            k,
            seed: 0,
        }
    }
}

/// A strictly positive distribution over clusters, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalVector {
    r: Vec<f64>,
}

impl MarginalVector {
    /// Normalize positive weights into a marginal.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMarginal("empty weight vector".into()));
        }
        if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(Error::InvalidMarginal(
                "weights must be finite and strictly positive".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        Ok(MarginalVector {
            r: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidMarginal("k must be at least 1".into()));
        }
        Ok(MarginalVector {
            r: vec![1.0 / k as f64; k],
        })
    }

    pub fn k(&self) -> usize {
        self.r.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.r
    }

    /// Row-marginal permuted so cluster `y` receives mass `r[R(y)]`.
    pub fn permuted(&self, p: &Permutation) -> Result<Self> {
        if p.len() != self.r.len() {
            return Err(Error::shape(format!(
                "permutation of size {} applied to marginal of size {}",
                p.len(),
                self.r.len()
            )));
        }
        Ok(MarginalVector {
            r: (0..self.r.len()).map(|y| self.r[p.apply(y)]).collect(),
        })
    }
}

/// Bijection on `{0..k-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        let mut seen = vec![false; k];
        for &m in &map {
            if m >= k || seen[m] {
                return Err(Error::invalid(format!("not a bijection on 0..{k}")));
            }
            seen[m] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(k: usize) -> Self {
        Permutation {
            map: (0..k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn indices(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { map: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }
}

/// Materialize the prior distribution described by `spec`.
///
/// Deterministic per `spec.seed`. Gaussian draws are clamped at 0.01 before
/// normalization; the paper's `* N/K` count scale cancels when normalizing.
pub fn realize_marginal(spec: &MarginalSpec) -> Result<MarginalVector> {
    if spec.k == 0 {
        return Err(Error::InvalidMarginal("k must be at least 1".into()));
    }
    match &spec.kind {
        MarginalKind::Uniform => MarginalVector::uniform(spec.k),
        MarginalKind::GaussianPerturbed { mu, sigma } => {
            if !sigma.is_finite() || *sigma < 0.0 || !mu.is_finite() {
                return Err(Error::InvalidMarginal(format!(
                    "gaussian_perturbed requires finite mu and sigma >= 0, got mu={mu} sigma={sigma}"
                )));
            }
            let normal = Normal::new(*mu, *sigma)
                .map_err(|e| Error::InvalidMarginal(format!("gaussian_perturbed: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let weights: Vec<f64> = (0..spec.k)
                .map(|_| normal.sample(&mut rng).max(GAUSSIAN_DRAW_FLOOR))
                .collect();
            MarginalVector::from_weights(&weights)
        }
        MarginalKind::Zipf { exponent } => {
            if !(*exponent > 0.0) {
                return Err(Error::InvalidMarginal(format!(
                    "zipf exponent must be positive, got {exponent}"
                )));
            }
            let weights: Vec<f64> = (1..=spec.k)
                .map(|rank| (rank as f64).powf(-exponent))
                .collect();
            MarginalVector::from_weights(&weights)
        }
        MarginalKind::Explicit { weights } => {
            if weights.len() != spec.k {
                return Err(Error::InvalidMarginal(format!(
                    "explicit weights have length {}, expected k={}",
                    weights.len(),
                    spec.k
                )));
            }
            MarginalVector::from_weights(weights)
        }
    }
}

/// Variable part of the permutation energy: `sum_y -counts[y] * ln r[R(y)]`.
pub fn permutation_energy(r_perm: &Permutation, counts: &[f64], r: &MarginalVector) -> Result<f64> {
    if counts.len() != r.k() || r_perm.len() != r.k() {
        return Err(Error::shape(format!(
            "counts ({}), marginal ({}) and permutation ({}) must agree",
            counts.len(),
            r.k(),
            r_perm.len()
        )));
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(y, &q)| -q * r.values()[r_perm.apply(y)].ln())
        .sum())
}

/// Minimize the permutation energy by double sorting: clusters in ascending
/// `counts` order are paired with marginal slots in ascending `r` order.
/// Ties are broken by original index so uniform marginals map to identity.
pub fn optimal_marginal_permutation(counts: &[f64], r: &MarginalVector) -> Result<Permutation> {
    let k = r.k();
    if counts.len() != k {
        return Err(Error::shape(format!(
            "counts length {} does not match marginal length {k}",
            counts.len()
        )));
    }
    if !counts.iter().all(|c| c.is_finite() && *c >= 0.0) {
        return Err(Error::invalid("counts must be finite and non-negative".into()));
    }
    let mut by_count: Vec<usize> = (0..k).collect();
    by_count.sort_by(|&a, &b| counts[a].total_cmp(&counts[b]).then(a.cmp(&b)));
    let mut by_mass: Vec<usize> = (0..k).collect();
    by_mass.sort_by(|&a, &b| r.values()[a].total_cmp(&r.values()[b]).then(a.cmp(&b)));

    let mut map = vec![0usize; k];
    // Within a run of equal marginal mass the pairing is energy-neutral;
    // re-pair each run by ascending cluster index so that fully uniform
    // marginals yield the identity.
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && r.values()[by_mass[end]] == r.values()[by_mass[start]] {
            end += 1;
        }
        let mut clusters: Vec<usize> = by_count[start..end].to_vec();
        clusters.sort_unstable();
        let mut slots: Vec<usize> = by_mass[start..end].to_vec();
        slots.sort_unstable();
        for (cluster, slot) in clusters.into_iter().zip(slots) {
            map[cluster] = slot;
        }
        start = end;
    }
    Permutation::new(map)
}

/// Exhaustive minimizer of the permutation energy, guarded to `k <= 8`.
/// Ties resolve to the lexicographically smallest map.
pub fn brute_force_marginal_permutation(
    counts: &[f64],
    r: &MarginalVector,
) -> Result<Permutation> {
    let k = r.k();
    if k > 8 {
        return Err(Error::TooLarge(format!(
            "brute-force permutation search is limited to k <= 8, got {k}"
        )));
    }
    if counts.len() != k {
        return Err(Error::shape(format!(
            "counts length {} does not match marginal length {k}",
            counts.len()
        )));
    }
    let log_r: Vec<f64> = r.values().iter().map(|v| v.ln()).collect();
    let mut current: Vec<usize> = (0..k).collect();
    let mut best = current.clone();
    let mut best_energy = f64::INFINITY;
    loop {
        let energy: f64 = current
            .iter()
            .enumerate()
            .map(|(y, &slot)| -counts[y] * log_r[slot])
            .sum();
        if energy < best_energy {
            best_energy = energy;
            best.copy_from_slice(&current);
        }
        if !next_permutation(&mut current) {
            break;
        }
    }
    Permutation::new(best)
}

/// Advance to the next permutation in lexicographic order; false at the last.
pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Draw seeded random counts/marginal test instances.
pub fn random_instance(k: usize, rng: &mut impl Rng) -> (Vec<f64>, MarginalVector) {
    let counts: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    (counts, MarginalVector::from_weights(&weights).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_marginal() {
        let spec = MarginalSpec::uniform(4);
        let r = realize_marginal(&spec).unwrap();
        assert_eq!(r.values(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn zipf_closed_form() {
        let spec = MarginalSpec {
            kind: MarginalKind::Zipf { exponent: 1.0 },
            k: 3,
            seed: 0,
        };
        let r = realize_marginal(&spec).unwrap();
        let expect = [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0];
        for (got, want) in r.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_draws_have_expected_spread() {
        // sd/mean of the unnormalized draws should sit near sigma/mu = 0.1
        let spec = MarginalSpec {
            kind: MarginalKind::gaussian_default(),
            k: 309,
            seed: 41,
        };
        let r = realize_marginal(&spec).unwrap();
        let k = r.k() as f64;
        let mean = r.values().iter().sum::<f64>() / k;
        let var = r.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        let ratio = var.sqrt() / mean;
        assert!((ratio - 0.1).abs() < 0.02, "sd/mean ratio {ratio}");
        assert!(r.values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        let spec = MarginalSpec {
            kind: MarginalKind::gaussian_default(),
            k: 32,
            seed: 7,
        };
        assert_eq!(realize_marginal(&spec).unwrap(), realize_marginal(&spec).unwrap());
    }

    #[test]
    fn explicit_rejects_non_positive_weights() {
        let spec = MarginalSpec {
            kind: MarginalKind::Explicit {
                weights: vec![1.0, 0.0],
            },
            k: 2,
            seed: 0,
        };
        assert!(matches!(realize_marginal(&spec), Err(Error::InvalidMarginal(_))));
    }

    #[test]
    fn uniform_marginal_gives_identity_permutation() {
        let r = MarginalVector::uniform(4).unwrap();
        let p = optimal_marginal_permutation(&[0.4, 0.1, 0.3, 0.2], &r).unwrap();
        assert!(p.is_identity());
    }

    #[test]
    fn ascending_instance_gives_identity() {
        let r = MarginalVector::from_weights(&[0.2, 0.3, 0.5]).unwrap();
        let p = optimal_marginal_permutation(&[0.1, 0.2, 0.7], &r).unwrap();
        assert!(p.is_identity());
    }

    #[test]
    fn two_cluster_brute_force() {
        let r = MarginalVector::from_weights(&[0.3, 0.7]).unwrap();
        let p = brute_force_marginal_permutation(&[0.9, 0.1], &r).unwrap();
        // the heavy cluster takes the heavy marginal slot
        assert_eq!(p.indices(), &[1, 0]);
    }

    #[test]
    fn brute_force_identity_for_k1() {
        let r = MarginalVector::uniform(1).unwrap();
        let p = brute_force_marginal_permutation(&[1.0], &r).unwrap();
        assert!(p.is_identity());
    }

    #[test]
    fn brute_force_guards_large_k() {
        let r = MarginalVector::uniform(9).unwrap();
        let counts = vec![1.0; 9];
        assert!(matches!(
            brute_force_marginal_permutation(&counts, &r),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn energy_simple_value() {
        let r = MarginalVector::from_weights(&[0.5, 0.5]).unwrap();
        let e = permutation_energy(&Permutation::identity(2), &[1.0, 0.0], &r).unwrap();
        assert!((e - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn energy_invariant_under_swapping_equal_counts() {
        let r = MarginalVector::from_weights(&[0.1, 0.2, 0.7]).unwrap();
        let counts = [0.4, 0.4, 0.2];
        let id = Permutation::identity(3);
        let swapped = Permutation::new(vec![1, 0, 2]).unwrap();
        let e1 = permutation_energy(&id, &counts, &r).unwrap();
        let e2 = permutation_energy(&swapped, &counts, &r).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn sorting_matches_brute_force_on_seeded_instances() {
        use rand_chacha::rand_core::SeedableRng;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (counts, r) = random_instance(5, &mut rng);
            let fast = optimal_marginal_permutation(&counts, &r).unwrap();
            let brute = brute_force_marginal_permutation(&counts, &r).unwrap();
            let ef = permutation_energy(&fast, &counts, &r).unwrap();
            let eb = permutation_energy(&brute, &counts, &r).unwrap();
            assert!((ef - eb).abs() <= 1e-12, "seed {seed}: {ef} vs {eb}");
        }
    }

    #[test]
    fn sorted_pairing_property_holds() {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (counts, r) = random_instance(7, &mut rng);
        let p = optimal_marginal_permutation(&counts, &r).unwrap();
        for y in 0..7 {
            for y2 in 0..7 {
                if counts[y] > counts[y2] {
                    let lr_y = r.values()[p.apply(y)].ln();
                    let lr_y2 = r.values()[p.apply(y2)].ln();
                    assert!(lr_y >= lr_y2);
                }
            }
        }
    }

    #[test]
    fn permutation_inverse_round_trip() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let inv = p.inverse();
        for i in 0..4 {
            assert_eq!(inv.apply(p.apply(i)), i);
        }
    }

    proptest! {
        #[test]
        fn realized_marginals_are_valid(seed in 0u64..500, k in 1usize..40) {
            for kind in [
                MarginalKind::Uniform,
                MarginalKind::gaussian_default(),
                MarginalKind::Zipf { exponent: 1.3 },
            ] {
                let r = realize_marginal(&MarginalSpec { kind, k, seed }).unwrap();
                let total: f64 = r.values().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(r.values().iter().all(|v| *v > 0.0));
            }
        }
    }
}
