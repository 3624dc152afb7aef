//! Frame streams: parse, write, reparse.
//!
//! ```bash
//! cargo fuzz run frames_jsonl corpus/frames_jsonl
//! ```

#![no_main]

use calibrefine::io::{read_frames, write_frames};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(frames) = read_frames(data) else {
        return;
    };
    let mut out = Vec::new();
    write_frames(&mut out, &frames).unwrap();
    let again = read_frames(out.as_slice()).expect("written frames reparse");
    assert_eq!(frames, again);
});
