//! Graded-lexicographic subset codes against the standard settings axes and a
//! brute-force ordering.

use misalign_core::bias::{
    decode_perturbation, decode_selection, encode_perturbation, encode_selection, BiasConfig,
};

/// Independent ordering: all non-empty subsets, sorted by size then lexicographically.
fn brute_force_order(n: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (1u32..1 << n)
        .map(|mask| (1..=n).filter(|i| mask >> (i - 1) & 1 == 1).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

#[test]
fn selection_table() {
    let thetas = [1, 11, 56, 176, 386, 638, 848, 968, 1013, 1023];
    for (k, &theta) in thetas.iter().enumerate() {
        let expected: Vec<usize> = (1..=k + 1).collect();
        assert_eq!(decode_selection(theta, 10).unwrap(), expected, "θ = {theta}");
        assert_eq!(encode_selection(&expected, 10).unwrap(), theta);
    }
}

#[test]
fn perturbation_table() {
    let rhos = [1, 2, 12, 57, 177, 387, 639, 849, 969, 1014];
    let i_theta: Vec<usize> = (1..=10).collect();
    for (k, &rho) in rhos.iter().enumerate() {
        let expected: Vec<usize> = (1..=k).collect();
        assert_eq!(decode_perturbation(rho, &i_theta).unwrap(), expected, "ρ = {rho}");
        assert_eq!(encode_perturbation(&expected, &i_theta).unwrap(), rho);
    }
}

#[test]
fn three_named_semantics() {
    let names = ["shape", "size", "color"];
    let i_theta = decode_selection(5, 3).unwrap();
    let selected: Vec<&str> = i_theta.iter().map(|&i| names[i - 1]).collect();
    assert_eq!(selected, ["shape", "color"]);
    let i_rho = decode_perturbation(3, &i_theta).unwrap();
    let perturbed: Vec<&str> = i_rho.iter().map(|&i| names[i - 1]).collect();
    assert_eq!(perturbed, ["color"]);
    let s = BiasConfig::from_codes(5, 3).resolve(3).unwrap();
    assert_eq!(s.unbiased(), vec![1]);
}

#[test]
fn exhaustive_round_trip_up_to_twelve() {
    for n in 1..=12 {
        let order = brute_force_order(n);
        for (pos, subset) in order.iter().enumerate() {
            let code = pos as u64 + 1;
            assert_eq!(&decode_selection(code, n).unwrap(), subset);
            assert_eq!(encode_selection(subset, n).unwrap(), code);
        }
        assert!(decode_selection(order.len() as u64 + 1, n).is_err());
    }
}

#[test]
fn perturbation_codes_cover_proper_subsets() {
    // ∅ first, then the non-empty proper subsets of I_θ in graded order
    for i_theta in [vec![1, 3], vec![2, 4, 5, 9], (1..=8).collect::<Vec<_>>()] {
        let m = i_theta.len();
        let mut expected = vec![vec![]];
        expected.extend(
            brute_force_order(m)
                .into_iter()
                .filter(|s| s.len() < m)
                .map(|s| s.iter().map(|&p| i_theta[p - 1]).collect::<Vec<_>>()),
        );
        for (pos, subset) in expected.iter().enumerate() {
            let code = pos as u64 + 1;
            assert_eq!(&decode_perturbation(code, &i_theta).unwrap(), subset);
            assert_eq!(encode_perturbation(subset, &i_theta).unwrap(), code);
        }
        assert!(decode_perturbation(expected.len() as u64 + 1, &i_theta).is_err());
    }
}
