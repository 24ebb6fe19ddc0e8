#![no_main]

use divkern_core::debranges::BlaschkeSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = BlaschkeSpec::from_json(text);
    }
});
