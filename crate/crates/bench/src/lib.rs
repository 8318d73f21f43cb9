//! Shared inputs for the kernel benchmarks in `benches/`.

use kslayers_core::ansatz::{build_ansatz, lambda_of_eps, Ansatz, AnsatzOptions};

/// ε of the benchmark problems; the single-bubble construction exists here.
pub const BENCH_EPS: f64 = 0.02;

pub fn bench_lambda() -> f64 {
    lambda_of_eps(BENCH_EPS)
}

pub fn bench_ansatz(nodes: usize) -> Ansatz {
    build_ansatz(bench_lambda(), AnsatzOptions { nodes, ..AnsatzOptions::default() }).expect("ansatz exists at the bench ε")
}
