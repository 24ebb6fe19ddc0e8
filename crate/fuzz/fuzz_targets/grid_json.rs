#![no_main]

use divkern_core::grid::Grid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = Grid::from_json(text) {
            let again = Grid::from_json(&g.to_json().unwrap()).unwrap();
            assert_eq!(g.nodes(), again.nodes());
        }
    }
});
