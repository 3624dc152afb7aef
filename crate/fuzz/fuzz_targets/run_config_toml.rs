#![no_main]

use calibrefine::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(cfg) = RunConfig::parse(data) else {
        return;
    };
    let _ = cfg.validate();
    // Text comparison, since NaN fields are legal TOML.
    let text = cfg.to_toml();
    let again = RunConfig::parse(&text).expect("written config reparses");
    assert_eq!(text, again.to_toml());
});
