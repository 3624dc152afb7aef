mod common;

use std::collections::BTreeSet;

use calibrefine::association::{greedy_match, MatchGate};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn matches_reference_greedy() {
    let mut r = rng(41);
    for instance in 0..1000 {
        let (nl, nc) = (r.random_range(0..=6), r.random_range(0..=6));
        let (a, b) = if instance % 2 == 0 {
            (scattered(&mut r, nl, 120.0), scattered(&mut r, nc, 120.0))
        } else {
            (lattice(&mut r, nl), lattice(&mut r, nc))
        };
        let gate = r.random_range(5.0..80.0);
        check_greedy_instance(&a, &b, gate);
    }
}

proptest! {
    #[test]
    fn permuting_inputs_permutes_matches(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = scattered(&mut r, 6, 100.0);
        let b = scattered(&mut r, 6, 100.0);
        let gate = MatchGate::new(50.0);
        let mut pa: Vec<usize> = (0..a.len()).collect();
        let mut pb: Vec<usize> = (0..b.len()).collect();
        use rand::seq::SliceRandom;
        pa.shuffle(&mut r);
        pb.shuffle(&mut r);
        let a2: Vec<_> = pa.iter().map(|&i| a[i]).collect();
        let b2: Vec<_> = pb.iter().map(|&i| b[i]).collect();

        let base: BTreeSet<_> = greedy_match(&a, &b, &gate).matches.iter().map(|m| (m.lidar, m.camera)).collect();
        let perm: BTreeSet<_> = greedy_match(&a2, &b2, &gate)
            .matches
            .iter()
            .map(|m| (pa[m.lidar], pb[m.camera]))
            .collect();
        // Continuous random costs are distinct, so tie-breaking plays no role.
        prop_assert_eq!(base, perm);
    }
}
