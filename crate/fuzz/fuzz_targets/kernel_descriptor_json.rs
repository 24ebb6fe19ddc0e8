#![no_main]

use divkern_core::kernel::{eval_kernel, KernelDescriptor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = KernelDescriptor::from_json(text) {
            let _ = eval_kernel(&spec, 0.25, -0.5);
        }
    }
});
