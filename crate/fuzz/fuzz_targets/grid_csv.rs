#![no_main]

use divkern_core::grid::{Domain, Grid, Rule};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Grid::from_csv(text, Domain::interval(-1e3, 1e3), Rule::UniformTrapezoid);
        let _ = Grid::from_csv(text, Domain::Lattice { lo: -50, hi: 50 }, Rule::Lattice);
    }
});
