#![no_main]

use libfuzzer_sys::fuzz_target;
use netfl::graph::EmpGraph;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = EmpGraph::parse_edge_list(text) {
        let again = EmpGraph::parse_edge_list(&g.to_edge_list()).expect("own output parses");
        assert_eq!(g, again);
    }
});
