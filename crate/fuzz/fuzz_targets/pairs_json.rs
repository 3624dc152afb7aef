#![no_main]

use calibrefine::io::{pairs_json, parse_pairs};
use calibrefine::Source;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(pairs) = parse_pairs(data, Source::Oracle) else {
        return;
    };
    let again = parse_pairs(&pairs_json(&pairs), Source::Oracle).expect("written pairs reparse");
    assert_eq!(pairs, again);
});
