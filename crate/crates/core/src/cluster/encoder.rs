use serde::{Deserialize, Serialize};

use crate::table::{ColumnKind, Row, Table, TableSchema, Value};

/// One-hot blocks are scaled so that flipping one categorical value moves a row by the
/// same Euclidean distance as a one-standard-deviation shift of a numerical cell.
pub const ONE_HOT_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncodedColumn {
    Numeric { mean: f64, sd: f64 },
    OneHot { size: usize },
}

impl EncodedColumn {
    fn width(&self) -> usize {
        match self {
            EncodedColumn::Numeric { .. } => 1,
            EncodedColumn::OneHot { size } => *size,
        }
    }
}

/// Deterministic tuple encoder: z-scored numerics followed by scaled one-hot blocks,
/// in schema column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub columns: Vec<EncodedColumn>,
    pub dim: usize,
}

impl FeatureEncoder {
    pub fn fit(table: &Table) -> Self {
        let schema = table.schema();
        let n = table.len().max(1) as f64;
        let columns: Vec<EncodedColumn> = schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| match col.kind {
                ColumnKind::Numerical => {
                    let values = table.numeric_column(c);
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    let sd = if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 };
                    EncodedColumn::Numeric { mean, sd }
                }
                ColumnKind::Categorical => EncodedColumn::OneHot {
                    size: col.domain().len(),
                },
            })
            .collect();
        let dim = columns.iter().map(EncodedColumn::width).sum();
        FeatureEncoder { columns, dim }
    }

    pub fn matches(&self, schema: &TableSchema) -> bool {
        self.columns.len() == schema.len()
            && self.columns.iter().zip(&schema.columns).all(|(e, c)| match (e, c.kind) {
                (EncodedColumn::Numeric { .. }, ColumnKind::Numerical) => true,
                (EncodedColumn::OneHot { size }, ColumnKind::Categorical) => *size == c.domain().len(),
                _ => false,
            })
    }

    /// Writes the encoding of `row` into `out` (length `dim`).
    pub fn encode_into(&self, row: &Row, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut at = 0;
        for (col, cell) in self.columns.iter().zip(row) {
            match *col {
                EncodedColumn::Numeric { mean, sd } => {
                    out[at] = (cell.as_num() - mean) / sd;
                    at += 1;
                }
                EncodedColumn::OneHot { size } => {
                    out[at..at + size].fill(0.0);
                    out[at + cell.as_cat() as usize] = ONE_HOT_SCALE;
                    at += size;
                }
            }
        }
    }

    /// Row-major `n x dim` encoding of a whole table.
    pub fn encode_table(&self, table: &Table) -> Vec<f64> {
        let mut out = vec![0.0; table.len() * self.dim];
        for (row, chunk) in table.rows().iter().zip(out.chunks_mut(self.dim.max(1))) {
            self.encode_into(row, chunk);
        }
        out
    }

    /// Inverse map: numerics by inverse z-score, categoricals by block argmax
    /// (lowest index on ties).
    pub fn decode(&self, features: &[f64]) -> Row {
        let mut at = 0;
        self.columns
            .iter()
            .map(|col| match *col {
                EncodedColumn::Numeric { mean, sd } => {
                    let v = features[at] * sd + mean;
                    at += 1;
                    Value::Num(v)
                }
                EncodedColumn::OneHot { size } => {
                    let block = &features[at..at + size];
                    at += size;
                    let mut best = 0;
                    for (i, v) in block.iter().enumerate() {
                        if *v > block[best] {
                            best = i;
                        }
                    }
                    Value::Cat(best as u32)
                }
            })
            .collect()
    }

    /// Column standard deviations used for scaling (1 for categorical columns).
    pub fn column_sds(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Numeric { sd, .. } => *sd,
                EncodedColumn::OneHot { .. } => 1.0,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;

    fn table() -> Table {
        let schema = TableSchema::new(vec![
            Column::numerical("x"),
            Column::categorical("c", ["a", "b", "c"]),
            Column::numerical("k"),
        ])
        .unwrap();
        Table::new(
            schema,
            vec![
                vec![Value::Num(1.0), Value::Cat(0), Value::Num(5.0)],
                vec![Value::Num(3.0), Value::Cat(2), Value::Num(5.0)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn z_scores_and_one_hot() {
        let t = table();
        let enc = FeatureEncoder::fit(&t);
        assert_eq!(enc.dim, 5);
        // Constant column gets sd 1.
        assert_eq!(enc.columns[2], EncodedColumn::Numeric { mean: 5.0, sd: 1.0 });
        let f = enc.encode_table(&t);
        assert_eq!(&f[..5], &[-1.0, ONE_HOT_SCALE, 0.0, 0.0, 0.0]);
        assert_eq!(&f[5..], &[1.0, 0.0, 0.0, ONE_HOT_SCALE, 0.0]);
    }

    #[test]
    fn decode_inverts_encode() {
        let t = table();
        let enc = FeatureEncoder::fit(&t);
        let f = enc.encode_table(&t);
        for (row, chunk) in t.rows().iter().zip(f.chunks(enc.dim)) {
            assert_eq!(&enc.decode(chunk), row);
        }
    }

    #[test]
    fn categorical_flip_matches_one_sd() {
        let t = table();
        let enc = FeatureEncoder::fit(&t);
        let mut a = vec![0.0; enc.dim];
        let mut b = vec![0.0; enc.dim];
        enc.encode_into(&vec![Value::Num(2.0), Value::Cat(0), Value::Num(5.0)], &mut a);
        enc.encode_into(&vec![Value::Num(2.0), Value::Cat(1), Value::Num(5.0)], &mut b);
        let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((d2 - 1.0).abs() < 1e-12);
    }
}
