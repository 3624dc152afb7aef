#![no_main]

use calibrefine::io::{parse_ground_truth, to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(gt) = parse_ground_truth(data) else {
        return;
    };
    let text = to_json(&gt);
    let again = parse_ground_truth(&text).expect("written ground truth reparses");
    assert_eq!(text, to_json(&again));
});
