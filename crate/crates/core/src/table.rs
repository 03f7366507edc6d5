//! Typed tables, their schemas, and CSV / JSON-sidecar persistence.
//!
//! Tables are read and written as RFC 4180 CSV with a header row. The schema
//! lives in a separate JSON file so that categorical domains are fixed before
//! any table derived from the original is produced.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Column {
    pub fn numerical(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numerical,
            domain: None,
            min: None,
            max: None,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, domain: impl IntoIterator<Item = S>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            domain: Some(domain.into_iter().map(Into::into).collect()),
            min: None,
            max: None,
        }
    }

    /// Categorical domain; empty for numerical columns.
    pub fn domain(&self) -> &[String] {
        self.domain.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<Column>,
}

impl TableSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let schema = TableSchema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for col in &self.columns {
            if col.name.is_empty() {
                return Err(Error::validation("column name must be non-empty"));
            }
            if !names.insert(col.name.as_str()) {
                return Err(Error::validation(format!("duplicate column name {:?}", col.name)));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    let domain = col.domain();
                    if domain.is_empty() {
                        return Err(Error::validation(format!(
                            "categorical column {:?} has an empty domain",
                            col.name
                        )));
                    }
                    let distinct: HashSet<&String> = domain.iter().collect();
                    if distinct.len() != domain.len() {
                        return Err(Error::validation(format!(
                            "categorical column {:?} has duplicate domain values",
                            col.name
                        )));
                    }
                }
                ColumnKind::Numerical => {
                    if col.domain.is_some() {
                        return Err(Error::validation(format!(
                            "numerical column {:?} must not carry a domain",
                            col.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn numerical_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Numerical)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.indices_of(ColumnKind::Categorical)
    }

    fn indices_of(&self, kind: ColumnKind) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let schema: TableSchema = serde_json::from_reader(BufReader::new(file))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// A single cell. Categorical values are stored as indices into the column domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(u32),
}

impl Value {
    pub fn as_num(&self) -> f64 {
        match *self {
            Value::Num(v) => v,
            Value::Cat(c) => c as f64,
        }
    }

    pub fn as_cat(&self) -> u32 {
        match *self {
            Value::Cat(c) => c,
            Value::Num(v) => v as u32,
        }
    }
}

pub type Row = Vec<Value>;

/// A validated table. Immutable once constructed; attacks and synthesis build new tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: TableSchema,
    rows: Vec<Row>,
}

impl Table {
    pub fn new(schema: TableSchema, rows: Vec<Row>) -> Result<Self> {
        schema.validate()?;
        for (i, row) in rows.iter().enumerate() {
            check_row(&schema, row).map_err(|msg| Error::validation(format!("row {i}: {msg}")))?;
        }
        Ok(Table { schema, rows })
    }

    /// Builds a table from rows already known to satisfy the schema (e.g. produced by
    /// transforming a validated table).
    pub(crate) fn from_trusted(schema: TableSchema, rows: Vec<Row>) -> Self {
        debug_assert!(rows.iter().all(|r| check_row(&schema, r).is_ok()));
        Table { schema, rows }
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Row> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn numeric_column(&self, col: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[col].as_num()).collect()
    }

    pub fn categorical_column(&self, col: usize) -> Vec<u32> {
        self.rows.iter().map(|r| r[col].as_cat()).collect()
    }

    /// Text form of a cell as it is written to CSV.
    pub fn cell_text(&self, row: usize, col: usize) -> String {
        format_cell(&self.schema.columns[col], &self.rows[row][col])
    }
}

fn check_row(schema: &TableSchema, row: &Row) -> std::result::Result<(), String> {
    if row.len() != schema.len() {
        return Err(format!("expected {} cells, found {}", schema.len(), row.len()));
    }
    for (col, cell) in schema.columns.iter().zip(row) {
        match (col.kind, cell) {
            (ColumnKind::Numerical, Value::Num(v)) if v.is_finite() => {}
            (ColumnKind::Numerical, Value::Num(v)) => {
                return Err(format!("non-finite value {v} in column {:?}", col.name))
            }
            (ColumnKind::Categorical, Value::Cat(c)) if (*c as usize) < col.domain().len() => {}
            (ColumnKind::Categorical, Value::Cat(c)) => {
                return Err(format!("category index {c} out of domain in column {:?}", col.name))
            }
            _ => return Err(format!("cell kind does not match column {:?}", col.name)),
        }
    }
    Ok(())
}

fn format_cell(col: &Column, cell: &Value) -> String {
    match *cell {
        // `Display` for f64 emits the shortest string that parses back to the same bits.
        Value::Num(v) => format!("{v}"),
        Value::Cat(c) => col.domain()[c as usize].clone(),
    }
}

/// Reads a CSV file whose header must list exactly the schema's columns, in order.
///
/// A header-only file yields a table with zero rows; a file without a header is an error.
pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Table> {
    let path = path.as_ref();
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));

    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header.get(0) == Some("")) {
        return Err(Error::validation(format!("{}: empty table (no header row)", path.display())));
    }
    let header: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = schema.names().collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "header {header:?} does not match schema columns {expected:?}"
        )));
    }

    let lookups: Vec<HashMap<&str, u32>> = schema
        .columns
        .iter()
        .map(|c| {
            c.domain()
                .iter()
                .enumerate()
                .map(|(i, v)| (v.as_str(), i as u32))
                .collect()
        })
        .collect();

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let line = line + 2;
        if record.len() != schema.len() {
            return Err(Error::validation(format!(
                "line {line}: expected {} cells, found {}",
                schema.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(schema.len());
        for ((col, lookup), text) in schema.columns.iter().zip(&lookups).zip(record.iter()) {
            match col.kind {
                ColumnKind::Numerical => {
                    let v: f64 = text.trim().parse().map_err(|_| {
                        Error::validation(format!(
                            "line {line}: non-numeric value {text:?} in numerical column {:?}",
                            col.name
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::validation(format!(
                            "line {line}: non-finite value {text:?} in column {:?}",
                            col.name
                        )));
                    }
                    row.push(Value::Num(v));
                }
                ColumnKind::Categorical => {
                    let idx = lookup.get(text).copied().ok_or_else(|| {
                        Error::validation(format!(
                            "line {line}: value {text:?} not in domain of column {:?}",
                            col.name
                        ))
                    })?;
                    row.push(Value::Cat(idx));
                }
            }
        }
        rows.push(row);
    }
    Ok(Table::from_trusted(schema.clone(), rows))
}

pub fn save_table(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(table.schema.names())?;
    let mut record = Vec::with_capacity(table.schema.len());
    for row in &table.rows {
        record.clear();
        record.extend(table.schema.columns.iter().zip(row).map(|(c, v)| format_cell(c, v)));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Infers a schema from a CSV file. A column is categorical when any value fails to
/// parse as a finite number or when it has at most `categorical_threshold` distinct
/// values. Categorical domains are sorted lexicographically.
pub fn infer_schema(path: impl AsRef<Path>, categorical_threshold: usize) -> Result<TableSchema> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::validation(format!("{}: no header row", path.display())));
    }

    let mut distinct: Vec<BTreeSet<String>> = vec![BTreeSet::new(); names.len()];
    let mut numeric = vec![true; names.len()];
    for record in reader.records() {
        let record = record?;
        if record.len() != names.len() {
            return Err(Error::validation("ragged CSV row during schema inference"));
        }
        for (i, text) in record.iter().enumerate() {
            if numeric[i] && !text.trim().parse::<f64>().is_ok_and(f64::is_finite) {
                numeric[i] = false;
            }
            // Only the count up to the threshold matters for numeric columns.
            if !numeric[i] || distinct[i].len() <= categorical_threshold {
                if !distinct[i].contains(text) {
                    distinct[i].insert(text.to_string());
                }
            }
        }
    }

    let columns = names
        .into_iter()
        .zip(distinct)
        .zip(numeric)
        .map(|((name, values), numeric)| {
            if numeric && values.len() > categorical_threshold {
                Column::numerical(name)
            } else {
                Column::categorical(name, values)
            }
        })
        .collect();
    TableSchema::new(columns)
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema_ab() -> TableSchema {
        TableSchema::new(vec![Column::numerical("x"), Column::categorical("c", ["A", "B"])]).unwrap()
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn loads_matching_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "x,c\n1.5,A\n-2,B\n3e2,A\n");
        let table = load_table(&path, &schema_ab()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.rows()[1], vec![Value::Num(-2.0), Value::Cat(1)]);
        assert_eq!(table.rows()[2][0], Value::Num(300.0));
    }

    #[test]
    fn rejects_out_of_domain_category() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "x,c\n1,A\n2,Z\n");
        let err = load_table(&path, &schema_ab()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("\"Z\"")), "{err}");
    }

    #[test]
    fn rejects_reordered_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "c,x\nA,1\n");
        assert!(matches!(load_table(&path, &schema_ab()), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn rejects_non_numeric_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "x,c\nabc,A\n");
        assert!(matches!(load_table(&path, &schema_ab()), Err(Error::Validation(_))));
        let path = write_file(&dir, "u.csv", "x,c\n,A\n");
        assert!(matches!(load_table(&path, &schema_ab()), Err(Error::Validation(_))));
        let path = write_file(&dir, "v.csv", "x,c\nNaN,A\n");
        assert!(matches!(load_table(&path, &schema_ab()), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_file_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "t.csv", "");
        assert!(load_table(&path, &schema_ab()).is_err());
    }

    #[test]
    fn zero_row_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let table = Table::new(schema_ab(), vec![]).unwrap();
        let path = dir.path().join("empty.csv");
        save_table(&table, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x,c\n");
        assert_eq!(load_table(&path, &schema_ab()).unwrap().len(), 0);
    }

    #[test]
    fn float_text_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v = 0.1 + 0.2;
        let table = Table::new(schema_ab(), vec![vec![Value::Num(v), Value::Cat(0)]]).unwrap();
        let path = dir.path().join("f.csv");
        save_table(&table, &path).unwrap();
        let back = load_table(&path, &schema_ab()).unwrap();
        assert_eq!(back.rows()[0][0].as_num().to_bits(), v.to_bits());
    }

    #[test]
    fn schema_validation() {
        assert!(TableSchema::new(vec![Column::numerical("")]).is_err());
        assert!(TableSchema::new(vec![Column::numerical("a"), Column::numerical("a")]).is_err());
        assert!(TableSchema::new(vec![Column::categorical("c", Vec::<String>::new())]).is_err());
        assert!(TableSchema::new(vec![Column::categorical("c", ["x", "x"])]).is_err());
    }

    #[test]
    fn schema_json_sidecar_shape() {
        let json = serde_json::to_value(schema_ab()).unwrap();
        assert_eq!(json["columns"][0]["kind"], "numerical");
        assert_eq!(json["columns"][1]["domain"][1], "B");
        assert!(json["columns"][0].get("domain").is_none());
    }

    #[test]
    fn infers_threshold_and_parse_failure_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("bin,f,mixed\n");
        for i in 0..1000 {
            let mixed = if i == 0 { "abc".to_string() } else { "1.5".to_string() };
            body.push_str(&format!("{},{},{}\n", i % 2, i as f64 * 0.37 + 0.001, mixed));
        }
        let path = write_file(&dir, "i.csv", &body);
        let schema = infer_schema(&path, 20).unwrap();
        assert_eq!(schema.columns[0].kind, ColumnKind::Categorical);
        assert_eq!(schema.columns[0].domain(), &["0".to_string(), "1".to_string()]);
        assert_eq!(schema.columns[1].kind, ColumnKind::Numerical);
        assert_eq!(schema.columns[2].kind, ColumnKind::Categorical);
        assert_eq!(schema.columns[2].domain(), &["1.5".to_string(), "abc".to_string()]);
    }

    fn arb_table() -> impl Strategy<Value = Table> {
        let col = prop_oneof![
            Just(None),
            (1usize..5).prop_map(Some),
        ];
        prop::collection::vec(col, 1..5)
            .prop_flat_map(|kinds| {
                let schema = TableSchema::new(
                    kinds
                        .iter()
                        .enumerate()
                        .map(|(i, k)| match k {
                            None => Column::numerical(format!("n{i}")),
                            Some(n) => Column::categorical(
                                format!("c{i}"),
                                (0..*n).map(|v| format!("v,{v}\"q")),
                            ),
                        })
                        .collect(),
                )
                .unwrap();
                let cell_strats: Vec<BoxedStrategy<Value>> = kinds
                    .iter()
                    .map(|k| match k {
                        None => prop::num::f64::NORMAL.prop_map(Value::Num).boxed(),
                        Some(n) => (0..*n as u32).prop_map(Value::Cat).boxed(),
                    })
                    .collect();
                (Just(schema), prop::collection::vec(cell_strats, 0..20))
            })
            .prop_map(|(schema, rows)| Table::new(schema, rows).unwrap())
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(table in arb_table()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            save_table(&table, &path).unwrap();
            let back = load_table(&path, table.schema()).unwrap();
            prop_assert_eq!(back.len(), table.len());
            for (a, b) in back.rows().iter().zip(table.rows()) {
                for (x, y) in a.iter().zip(b) {
                    match (x, y) {
                        (Value::Num(p), Value::Num(q)) => prop_assert_eq!(p.to_bits(), q.to_bits()),
                        _ => prop_assert_eq!(x, y),
                    }
                }
            }
        }
    }
}
