#![no_main]

use divkern_cli::config::{apply_override, parse_override};
use libfuzzer_sys::fuzz_target;

const BASE: &str = r#"{"kernel":{"kind":"sine","bandwidth":1.0},"grid":{"domain":{"kind":"interval","a":-1.0,"b":1.0},"n":8}}"#;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((path, value)) = parse_override(text) {
            let mut root: serde_json::Value = serde_json::from_str(BASE).unwrap();
            let _ = apply_override(&mut root, &path, value);
        }
    }
});
