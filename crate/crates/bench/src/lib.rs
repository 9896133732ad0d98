//! Shared fixtures for the criterion benchmarks.

use gewdiff_core::synthetic::{generate_scene, SceneConfig};
use gewdiff_core::HsiCube;

/// A seeded smooth-spectra scene of the given size.
pub fn scene(height: usize, width: usize, bands: usize, seed: u64) -> HsiCube {
    let cfg = SceneConfig {
        height,
        width,
        bands,
        seed,
        ..SceneConfig::default()
    };
    generate_scene(&cfg).expect("valid scene config").cube
}
