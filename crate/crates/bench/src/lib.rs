//! Benchmark fixtures shared by the criterion benches.

use riskset::graph::{generate_synthetic, Graph, SynthConfig};

/// Synthetic graph of `n` nodes with the default generator settings.
pub fn fixture_graph(n: usize, seed: u64) -> Graph {
    let cfg = SynthConfig {
        n,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).expect("valid fixture config")
}

/// Deterministic pseudo-uniform scores in `[0, 1)`.
pub fn fixture_scores(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.618_033_988_749_895).fract()).collect()
}
