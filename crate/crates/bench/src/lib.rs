//! Shared fixtures for the benchmarks.

use histmark::desk::desk_table;
use histmark::{fit_owner, Owner, PipelineConfig, RobustnessParams, SecretKey, Table};

/// A small fitted owner and the table it was fitted on.
pub fn small_owner(rows: usize) -> (Owner, Table) {
    let table = desk_table(rows, 7);
    let config = PipelineConfig {
        m: 64,
        l: 32,
        n: 100,
        robustness: RobustnessParams {
            t: Some(2000),
            deletion_sims: 50,
            ..Default::default()
        },
        seed: 11,
        ..Default::default()
    };
    let owner = fit_owner(&table, &SecretKey::from_bytes([3; 32]), &config).expect("bench fixture fits");
    (owner, table)
}
