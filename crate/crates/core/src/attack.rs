//! Attacks on released tables.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::{fit_cluster_model, FeatureEncoder, PcaBasis, DEFAULT_VARIANCE_TARGET};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::synth::column_sds;
use crate::table::{ColumnKind, Row, Table, Value};
use crate::template::select_template_clusters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    PerturbGaussian,
    PerturbUniform,
    PerturbLaplace,
    Alter,
    Delete,
    Insert,
    AdaptiveDelete,
    Regenerate,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::PerturbGaussian,
        AttackKind::PerturbUniform,
        AttackKind::PerturbLaplace,
        AttackKind::Alter,
        AttackKind::Delete,
        AttackKind::Insert,
        AttackKind::AdaptiveDelete,
        AttackKind::Regenerate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::PerturbGaussian => "perturb_gaussian",
            AttackKind::PerturbUniform => "perturb_uniform",
            AttackKind::PerturbLaplace => "perturb_laplace",
            AttackKind::Alter => "alter",
            AttackKind::Delete => "delete",
            AttackKind::Insert => "insert",
            AttackKind::AdaptiveDelete => "adaptive_delete",
            AttackKind::Regenerate => "regenerate",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::validation(format!("unknown attack kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub intensity: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, intensity: f64, seed: u64) -> Result<Self> {
        let spec = AttackSpec { kind, intensity, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.intensity) {
            return Err(Error::validation("attack intensity must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn fraction(intensity: f64, n: usize) -> usize {
    (intensity * n as f64 + 1e-9).floor() as usize
}

/// Applies `spec` to `table`. `m` and `l` configure the adaptive attacker's own
/// clustering and are ignored by the other kinds.
pub fn apply_attack(table: &Table, spec: &AttackSpec, m: usize, l: usize) -> Result<Table> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "attack", 0);
    let schema = table.schema().clone();
    let rows = match spec.kind {
        AttackKind::PerturbGaussian | AttackKind::PerturbUniform | AttackKind::PerturbLaplace => {
            if schema.numerical_indices().is_empty() {
                return Err(Error::validation("perturbation needs at least one numerical column"));
            }
            perturb(table, spec.kind, spec.intensity, &mut rng)
        }
        AttackKind::Alter => {
            if schema.categorical_indices().is_empty() {
                return Err(Error::validation("alteration needs at least one categorical column"));
            }
            alter(table, spec.intensity, &mut rng)
        }
        AttackKind::Delete => {
            let n = table.len();
            let drop = fraction(spec.intensity, n);
            let mut gone = vec![false; n];
            for i in index::sample(&mut rng, n, drop) {
                gone[i] = true;
            }
            keep(table, &gone)
        }
        AttackKind::Insert => {
            let n = table.len();
            let mut rows = table.rows().to_vec();
            let extra = fraction(spec.intensity, n);
            for i in index::sample(&mut rng, n, extra) {
                rows.push(table.rows()[i].clone());
            }
            rows
        }
        AttackKind::AdaptiveDelete => adaptive_delete(table, spec, m, l, &mut rng)?,
        AttackKind::Regenerate => regenerate(table, spec.intensity, &mut rng),
    };
    Ok(Table::from_trusted(schema, rows))
}

fn keep(table: &Table, gone: &[bool]) -> Vec<Row> {
    table
        .rows()
        .iter()
        .zip(gone)
        .filter(|(_, &g)| !g)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Zero-mean noise with standard deviation `sd`.
fn noise(kind: AttackKind, sd: f64, rng: &mut Rng) -> f64 {
    match kind {
        AttackKind::PerturbGaussian => sd * Distribution::<f64>::sample(&StandardNormal, rng),
        AttackKind::PerturbUniform => {
            let half = sd * 3f64.sqrt();
            rng.random_range(-half..half)
        }
        _ => {
            let b = sd / std::f64::consts::SQRT_2;
            let (e1, e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            b * (e1 - e2)
        }
    }
}

fn perturb(table: &Table, kind: AttackKind, intensity: f64, rng: &mut Rng) -> Vec<Row> {
    let sds = column_sds(table);
    let mut rows = table.rows().to_vec();
    if intensity == 0.0 {
        return rows;
    }
    for row in &mut rows {
        for (cell, &sd) in row.iter_mut().zip(&sds) {
            if let Value::Num(v) = cell {
                let s = intensity * v.abs().min(sd);
                if s > 0.0 {
                    *v += noise(kind, s, rng);
                }
            }
        }
    }
    rows
}

fn alter(table: &Table, intensity: f64, rng: &mut Rng) -> Vec<Row> {
    let schema = table.schema();
    let mut rows = table.rows().to_vec();
    if intensity == 0.0 {
        return rows;
    }
    for row in &mut rows {
        for (cell, col) in row.iter_mut().zip(&schema.columns) {
            if let (ColumnKind::Categorical, Value::Cat(c)) = (col.kind, cell) {
                let size = col.domain().len() as u32;
                if size > 1 && rng.random::<f64>() < intensity {
                    let pick = rng.random_range(0..size - 1);
                    *c = if pick >= *c { pick + 1 } else { pick };
                }
            }
        }
    }
    rows
}

fn adaptive_delete(table: &Table, spec: &AttackSpec, m: usize, l: usize, rng: &mut Rng) -> Result<Vec<Row>> {
    let n = table.len();
    let drop = fraction(spec.intensity, n);
    if drop == 0 {
        return Ok(table.rows().to_vec());
    }
    let attacker_seed = rng::child_seed(spec.seed, "attacker-cluster", 0);
    let model = fit_cluster_model(table, m, DEFAULT_VARIANCE_TARGET, attacker_seed)?;
    let mut chosen = select_template_clusters(&model.h, l)?;
    chosen.shuffle(rng);
    chosen.truncate(l);
    let labels = model.assign_latent(&model.embed(table)?);
    let mut targeted = vec![false; m];
    for c in chosen {
        targeted[c] = true;
    }
    let candidates: Vec<usize> = (0..n).filter(|&i| targeted[labels[i] as usize]).collect();
    let take = drop.min(candidates.len());
    let mut gone = vec![false; n];
    for i in index::sample(rng, candidates.len(), take) {
        gone[candidates[i]] = true;
    }
    Ok(keep(table, &gone))
}

fn regenerate(table: &Table, intensity: f64, rng: &mut Rng) -> Vec<Row> {
    if table.is_empty() {
        return Vec::new();
    }
    let encoder = FeatureEncoder::fit(table);
    let data = encoder.encode_table(table);
    let basis = PcaBasis::fit(&data, encoder.dim, 1.0);
    let latent = basis.project(&data);
    let k = basis.output_dim().max(1);
    latent
        .chunks(k)
        .take(table.len())
        .map(|z| {
            let noisy: Vec<f64> = z
                .iter()
                .map(|&v| v + intensity * v.abs() * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            let mut features = basis.reconstruct(if basis.output_dim() == 0 { &[] } else { &noisy });
            features.truncate(encoder.dim);
            encoder.decode(&features)
        })
        .collect()
}
