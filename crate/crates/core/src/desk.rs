//! Seeded Gaussian-mixture table used for experiments and tests.

use rand::Rng as _;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};

use crate::rng;
use crate::table::{Column, Table, TableSchema, Value};

pub const DESK_ROWS: usize = 20_000;
const COMPONENTS: usize = 6;
const WEIGHTS: [f64; COMPONENTS] = [0.24, 0.2, 0.18, 0.15, 0.13, 0.1];
const NUMERICAL: usize = 5;
const DOMAINS: [(&str, usize); 3] = [("region", 3), ("segment", 5), ("channel", 8)];

pub fn desk_schema() -> TableSchema {
    let mut cols: Vec<Column> = (1..=NUMERICAL).map(|i| Column::numerical(format!("x{i}"))).collect();
    for (name, size) in DOMAINS {
        cols.push(Column::categorical(name, (0..size).map(|v| format!("{name}_{v}"))));
    }
    TableSchema::new(cols).expect("static schema")
}

/// `n` rows from a six-component mixture; every categorical column prefers one
/// value per component.
pub fn desk_table(n: usize, seed: u64) -> Table {
    let mut layout = rng::stream(seed, "desk-layout", 0);
    let means: Vec<Vec<f64>> = (0..COMPONENTS)
        .map(|_| (0..NUMERICAL).map(|_| layout.random_range(-20.0..20.0)).collect())
        .collect();
    let sds: Vec<Vec<f64>> = (0..COMPONENTS)
        .map(|_| (0..NUMERICAL).map(|_| layout.random_range(0.8..3.0)).collect())
        .collect();
    let preferred: Vec<Vec<u32>> = (0..COMPONENTS)
        .map(|_| DOMAINS.iter().map(|&(_, s)| layout.random_range(0..s as u32)).collect())
        .collect();

    let pick = WeightedIndex::new(WEIGHTS).expect("positive weights");
    let mut r = rng::stream(seed, "desk-rows", 0);
    let rows = (0..n)
        .map(|_| {
            let c = pick.sample(&mut r);
            let mut row: Vec<Value> = (0..NUMERICAL)
                .map(|d| {
                    let v = Normal::new(means[c][d], sds[c][d]).expect("finite").sample(&mut r);
                    Value::Num((v * 1000.0).round() / 1000.0)
                })
                .collect();
            for (k, &(_, size)) in DOMAINS.iter().enumerate() {
                let v = if r.random::<f64>() < 0.75 {
                    preferred[c][k]
                } else {
                    r.random_range(0..size as u32)
                };
                row.push(Value::Cat(v));
            }
            row
        })
        .collect();
    Table::new(desk_schema(), rows).expect("rows follow the schema")
}
