mod common;

use calibrefine::geometry::{Correspondence, PixelPoint};
use calibrefine::sampling::{block_sample, BlockGrid};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn thousand_random_instances() {
    let mut r = rng(31);
    for _ in 0..1000 {
        let grid = random_grid(&mut r);
        let n = r.random_range(0..80);
        let pairs = random_pixel_pairs(&mut r, &grid, n);
        check_sampling_instance(&pairs, &grid);
    }
}

#[test]
fn points_on_block_boundaries() {
    let grid = BlockGrid::new(1000, 500);
    // Block width 200, height 100: these points sit exactly on edges.
    let pairs: Vec<_> = [(200.0, 100.0), (0.0, 0.0), (999.999, 499.999), (1000.0, 10.0), (400.0, 200.0)]
        .iter()
        .map(|&(u, v)| pair(0.0, 0.0, u, v))
        .collect();
    check_sampling_instance(&pairs, &grid);
    assert_eq!(grid.block_of(&PixelPoint::new(200.0, 100.0)).map(|b| (b.ix, b.iy)), Some((1, 1)));
    assert!(grid.block_of(&PixelPoint::new(1000.0, 10.0)).is_none());
}

proptest! {
    #[test]
    fn order_of_distinct_inputs_does_not_matter(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let grid = random_grid(&mut r);
        let pairs = random_pixel_pairs(&mut r, &grid, 40);
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut r);
        let key = |v: Vec<Correspondence>| {
            let mut k: Vec<_> = v.iter().map(|p| (p.pixel.u.to_bits(), p.pixel.v.to_bits())).collect();
            k.sort_unstable();
            k
        };
        prop_assert_eq!(key(block_sample(&pairs, &grid)), key(block_sample(&shuffled, &grid)));
    }

    #[test]
    fn never_more_than_retained_blocks(seed in 0u64..10_000, n in 0usize..200) {
        let mut r = rng(seed);
        let grid = random_grid(&mut r);
        let pairs = random_pixel_pairs(&mut r, &grid, n);
        prop_assert!(block_sample(&pairs, &grid).len() <= grid.retained_blocks());
    }
}
