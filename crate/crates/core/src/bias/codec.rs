//! Integer codes for subsets of semantic indices.
//!
//! Subsets are ranked in graded lexicographic order: first by cardinality,
//! then lexicographically among subsets of equal size. Semantic indices are
//! 1-based throughout this module, matching how settings are written in
//! configs and reports.

use serde::{Deserialize, Serialize};

use super::BiasError;

/// Largest universe for which [`enumerate_graded_lex`] materializes the full list.
pub const MAX_ENUMERATION: usize = 20;
/// Largest universe the rank/unrank codec accepts (codes must fit in `u64`).
pub const MAX_UNIVERSE: usize = 62;

/// A subset together with its position in graded lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCode {
    /// 1-based position in the ordering.
    pub index: u64,
    /// Sorted, 1-based semantic indices.
    pub subset: Vec<usize>,
    /// Size of the universe the code ranges over.
    pub universe_size: usize,
}

impl SubsetCode {
    /// Selection code `theta` over semantic indices `1..=n_s`.
    pub fn selection(theta: u64, n_s: usize) -> Result<Self, BiasError> {
        Ok(Self {
            index: theta,
            subset: decode_selection(theta, n_s)?,
            universe_size: n_s,
        })
    }

    /// Perturbation code `rho` over the proper subsets of `i_theta`.
    pub fn perturbation(rho: u64, i_theta: &[usize]) -> Result<Self, BiasError> {
        Ok(Self {
            index: rho,
            subset: decode_perturbation(rho, i_theta)?,
            universe_size: i_theta.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.subset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subset.is_empty()
    }
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// 1-based position of the first size-`k` subset among the non-empty subsets
/// of an `n`-element universe: `1 + Σ_{1≤j<k} C(n, j)`.
pub fn first_position_of_size(n: usize, k: usize) -> u64 {
    1 + (1..k).map(|j| binomial(n, j)).sum::<u64>()
}

/// All non-empty subsets of `{1..n}` in graded lexicographic order.
pub fn enumerate_graded_lex(n: usize) -> Result<Vec<Vec<usize>>, BiasError> {
    if n == 0 {
        return Err(BiasError::EmptyUniverse);
    }
    if n > MAX_ENUMERATION {
        return Err(BiasError::UniverseTooLarge {
            n,
            max: MAX_ENUMERATION,
        });
    }
    let mut out = Vec::with_capacity((1usize << n) - 1);
    for k in 1..=n {
        let mut comb: Vec<usize> = (1..=k).collect();
        loop {
            out.push(comb.clone());
            // advance to the next k-combination in lexicographic order
            let mut i = k;
            while i > 0 && comb[i - 1] == n - k + i {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..k {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Lexicographic rank (0-based) of a sorted `k`-subset of `{1..n}`.
fn rank_combination(n: usize, subset: &[usize]) -> u64 {
    let k = subset.len();
    let mut rank = 0u64;
    let mut prev = 0usize;
    for (i, &c) in subset.iter().enumerate() {
        // count combinations that agree on the prefix but use a smaller element here
        for smaller in prev + 1..c {
            rank += binomial(n - smaller, k - i - 1);
        }
        prev = c;
    }
    rank
}

/// Inverse of [`rank_combination`].
fn unrank_combination(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 1usize;
    for i in 0..k {
        loop {
            let block = binomial(n - next, k - i - 1);
            if rank < block {
                break;
            }
            rank -= block;
            next += 1;
        }
        out.push(next);
        next += 1;
    }
    out
}

fn unrank_nonempty(n: usize, position: u64) -> Vec<usize> {
    let mut k = 1;
    while k < n && position >= first_position_of_size(n, k + 1) {
        k += 1;
    }
    unrank_combination(n, k, position - first_position_of_size(n, k))
}

fn rank_nonempty(n: usize, subset: &[usize]) -> u64 {
    first_position_of_size(n, subset.len()) + rank_combination(n, subset)
}

fn check_universe(n: usize) -> Result<(), BiasError> {
    if n == 0 {
        return Err(BiasError::EmptyUniverse);
    }
    if n > MAX_UNIVERSE {
        return Err(BiasError::UniverseTooLarge {
            n,
            max: MAX_UNIVERSE,
        });
    }
    Ok(())
}

fn validate_subset(subset: &[usize], n: usize) -> Result<(), BiasError> {
    let sorted = subset.windows(2).all(|w| w[0] < w[1]);
    if !sorted || subset.iter().any(|&i| i == 0 || i > n) {
        return Err(BiasError::InvalidSubset {
            subset: subset.to_vec(),
            universe: n,
        });
    }
    Ok(())
}

/// Selected semantic indices `I_θ` for selection code `theta ∈ [1, 2^n_s − 1]`.
pub fn decode_selection(theta: u64, n_s: usize) -> Result<Vec<usize>, BiasError> {
    check_universe(n_s)?;
    let max = (1u64 << n_s) - 1;
    if theta == 0 || theta > max {
        return Err(BiasError::CodeOutOfRange {
            code: theta,
            max,
            what: "theta",
        });
    }
    Ok(unrank_nonempty(n_s, theta))
}

/// The omitted indices `{1..n_s} \ I_θ`.
pub fn complement(subset: &[usize], n: usize) -> Vec<usize> {
    (1..=n).filter(|i| !subset.contains(i)).collect()
}

pub fn encode_selection(subset: &[usize], n_s: usize) -> Result<u64, BiasError> {
    check_universe(n_s)?;
    validate_subset(subset, n_s)?;
    if subset.is_empty() {
        return Err(BiasError::InvalidSubset {
            subset: vec![],
            universe: n_s,
        });
    }
    Ok(rank_nonempty(n_s, subset))
}

/// Perturbable indices `I_ρ` for code `rho ∈ [1, 2^|I_θ| − 1]`, ranging over the
/// proper subsets of `i_theta` with the empty set first.
pub fn decode_perturbation(rho: u64, i_theta: &[usize]) -> Result<Vec<usize>, BiasError> {
    let m = i_theta.len();
    check_universe(m)?;
    let max = (1u64 << m) - 1;
    if rho == 0 || rho > max {
        return Err(BiasError::CodeOutOfRange {
            code: rho,
            max,
            what: "rho",
        });
    }
    if rho == 1 {
        return Ok(Vec::new());
    }
    // rho - 1 is a position among the non-empty subsets of positions in I_θ;
    // its maximum 2^m - 2 stops short of the full set.
    Ok(unrank_nonempty(m, rho - 1)
        .into_iter()
        .map(|p| i_theta[p - 1])
        .collect())
}

pub fn encode_perturbation(subset: &[usize], i_theta: &[usize]) -> Result<u64, BiasError> {
    let m = i_theta.len();
    check_universe(m)?;
    if subset.is_empty() {
        return Ok(1);
    }
    let positions: Option<Vec<usize>> = subset
        .iter()
        .map(|s| i_theta.iter().position(|t| t == s).map(|p| p + 1))
        .collect();
    let positions = positions.ok_or_else(|| BiasError::InvalidSubset {
        subset: subset.to_vec(),
        universe: m,
    })?;
    validate_subset(&positions, m)?;
    if positions.len() == m {
        return Err(BiasError::NotProperSubset);
    }
    Ok(rank_nonempty(m, &positions) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_element_enumeration() {
        let e = enumerate_graded_lex(3).unwrap();
        let expected: Vec<Vec<usize>> = vec![
            vec![1],
            vec![2],
            vec![3],
            vec![1, 2],
            vec![1, 3],
            vec![2, 3],
            vec![1, 2, 3],
        ];
        assert_eq!(e, expected);
        assert_eq!(enumerate_graded_lex(1).unwrap(), vec![vec![1]]);
    }

    #[test]
    fn ten_element_enumeration() {
        let e = enumerate_graded_lex(10).unwrap();
        assert_eq!(e.len(), 1023);
        assert_eq!(e[55], vec![1, 2, 3]);
    }

    #[test]
    fn enumeration_guard() {
        assert!(matches!(
            enumerate_graded_lex(21),
            Err(BiasError::UniverseTooLarge { .. })
        ));
        assert!(enumerate_graded_lex(0).is_err());
    }

    #[test]
    fn example_with_three_semantics() {
        // shape = 1, size = 2, color = 3
        let i_theta = decode_selection(5, 3).unwrap();
        assert_eq!(i_theta, vec![1, 3]);
        assert_eq!(decode_perturbation(3, &i_theta).unwrap(), vec![3]);
        assert_eq!(complement(&i_theta, 3), vec![2]);
    }

    #[test]
    fn out_of_range_codes() {
        assert!(decode_selection(0, 10).is_err());
        assert!(decode_selection(1024, 10).is_err());
        assert!(decode_perturbation(4, &[1, 3]).is_err());
        assert!(encode_perturbation(&[1, 3], &[1, 3]).is_err());
        assert!(encode_selection(&[11], 10).is_err());
        assert!(encode_perturbation(&[2], &[1, 3]).is_err());
    }

    #[test]
    fn size_prefix_positions() {
        assert_eq!(first_position_of_size(10, 1), 1);
        assert_eq!(first_position_of_size(10, 2), 11);
        assert_eq!(first_position_of_size(10, 3), 56);
        assert_eq!(first_position_of_size(10, 10), 1023);
    }

    #[test]
    fn codec_beyond_enumeration_limit() {
        let n = 40;
        let subset = vec![2, 17, 39];
        let code = encode_selection(&subset, n).unwrap();
        assert_eq!(decode_selection(code, n).unwrap(), subset);
        assert_eq!(decode_selection((1u64 << n) - 1, n).unwrap(), (1..=n).collect::<Vec<_>>());
    }
}
