//! Shared setup for the benchmarks in `benches/`.

use algebroid_flow::Scenario;

/// Load a bundled scenario by name.
pub fn scenario(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}
