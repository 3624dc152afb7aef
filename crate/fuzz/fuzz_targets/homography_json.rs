#![no_main]

use calibrefine::io::{homography_json, parse_homography};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(h) = parse_homography(data) else {
        return;
    };
    let norm = h.matrix().norm();
    assert!((norm - 1.0).abs() < 1e-12, "not canonical: norm {norm}");
    let again = parse_homography(&homography_json(&h)).expect("written matrix reparses");
    assert_eq!(h, again);
});
