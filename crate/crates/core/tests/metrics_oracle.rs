mod common;

use proptest::prelude::*;
use tcmix_core::metrics::{adjusted_rand, error_rate, rand_index, Partition};

use common::{adjusted_rand_by_table, error_rate_by_permutation, rand_by_pairs, set_partitions};

#[test]
fn exhaustive_small_partitions() {
    for n in 2..=7 {
        let all = set_partitions(n, 3);
        for a in &all {
            let pa = Partition::new(a);
            for b in &all {
                let pb = Partition::new(b);
                assert_eq!(rand_index(&pa, &pb).unwrap(), rand_by_pairs(a, b));
                let ari = adjusted_rand(&pa, &pb).unwrap();
                assert!((ari - adjusted_rand_by_table(a, b)).abs() < 1e-12);
                let err = error_rate(&pa, &pb).unwrap();
                assert!((err - error_rate_by_permutation(a, b)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn partition_counts_are_stirling_sums() {
    // S(7,1) + S(7,2) + S(7,3)
    assert_eq!(set_partitions(7, 3).len(), 1 + 63 + 301);
}

#[test]
fn many_clusters_use_assignment_solver() {
    // 10 blocks, a cyclic relabeling plus one moved item.
    let truth: Vec<usize> = (0..50).map(|i| i % 10).collect();
    let mut pred: Vec<usize> = truth.iter().map(|&l| (l + 3) % 10).collect();
    pred[0] = pred[1];
    let e = error_rate(&Partition::new(&pred), &Partition::new(&truth)).unwrap();
    assert!((e - 1.0 / 50.0).abs() < 1e-12);
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0..k, n)
}

proptest! {
    #[test]
    fn invariant_to_relabeling(
        (a, b) in (2usize..40).prop_flat_map(|n| (labels(n, 5), labels(n, 4))),
        shift in 1usize..5,
    ) {
        let a2: Vec<usize> = a.iter().map(|&l| (l + shift) % 5 + 10).collect();
        let (pa, pb, pa2) = (Partition::new(&a), Partition::new(&b), Partition::new(&a2));
        prop_assert_eq!(rand_index(&pa, &pb).unwrap(), rand_index(&pa2, &pb).unwrap());
        prop_assert!((adjusted_rand(&pa, &pb).unwrap() - adjusted_rand(&pa2, &pb).unwrap()).abs() < 1e-12);
        prop_assert!((error_rate(&pa, &pb).unwrap() - error_rate(&pa2, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pair_indices_are_symmetric((a, b) in (2usize..40).prop_flat_map(|n| (labels(n, 4), labels(n, 4)))) {
        let (pa, pb) = (Partition::new(&a), Partition::new(&b));
        prop_assert_eq!(rand_index(&pa, &pb).unwrap(), rand_index(&pb, &pa).unwrap());
        prop_assert!((adjusted_rand(&pa, &pb).unwrap() - adjusted_rand(&pb, &pa).unwrap()).abs() < 1e-12);
        let r = rand_index(&pa, &pb).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let e = error_rate(&pa, &pb).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn adjusted_rand_is_one_only_for_equal_partitions((a, b) in (3usize..20).prop_flat_map(|n| (labels(n, 3), labels(n, 3)))) {
        let (pa, pb) = (Partition::new(&a), Partition::new(&b));
        let same = pa.labels() == pb.labels();
        let ari = adjusted_rand(&pa, &pb).unwrap();
        prop_assert_eq!(same, (ari - 1.0).abs() < 1e-12, "ari {}", ari);
    }
}
