//! Error-rate model: transition matrix, deletion probabilities, per-bit error
//! coefficients, and the robustness constraints they induce.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::bits::BitString;
use crate::cluster::{histogram_of, kmeans, ClusterModel, Points};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::synth::TupleGenerator;
use crate::table::{read_json, write_json, ColumnKind, Row, Table, TableSchema, Value};
use crate::template::{select_template_clusters, WatermarkTemplate};

pub const BER_FLOOR: f64 = 1e-12;
pub const BER_CAP: f64 = 0.5 - 1e-12;

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn phi_inv(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessParams {
    pub delta_fpr: f64,
    pub delta_fnr: f64,
    pub i_per: f64,
    pub i_alt: f64,
    pub i_del: f64,
    /// Tuples drawn per cluster for the transition estimate; `None` uses the
    /// Hoeffding requirement for `eta` and `xi`.
    pub t: Option<usize>,
    pub eta: f64,
    pub xi: f64,
    pub deletion_sims: usize,
}

impl Default for RobustnessParams {
    fn default() -> Self {
        RobustnessParams {
            delta_fpr: 1e-3,
            delta_fnr: 1e-3,
            i_per: 0.01,
            i_alt: 0.01,
            i_del: 0.1,
            t: None,
            eta: 0.01,
            xi: 0.05,
            deletion_sims: 1000,
        }
    }
}

impl RobustnessParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| v > 0.0 && v < 1.0;
        let intensity = |v: f64| (0.0..1.0).contains(&v);
        if !(prob(self.delta_fpr) && prob(self.delta_fnr) && prob(self.eta) && prob(self.xi)) {
            return Err(Error::validation("error-rate targets, eta and xi must lie in (0, 1)"));
        }
        if !(intensity(self.i_per) && intensity(self.i_alt) && intensity(self.i_del)) {
            return Err(Error::validation("attack intensities must lie in [0, 1)"));
        }
        if self.t == Some(0) {
            return Err(Error::validation("transition sample count must be positive"));
        }
        Ok(())
    }

    pub fn samples_per_cluster(&self, m: usize) -> usize {
        self.t.unwrap_or_else(|| required_samples(self.eta, self.xi, m))
    }
}

/// Smallest `T` with `T >= ln(2M / xi) / (2 eta^2)`.
pub fn required_samples(eta: f64, xi: f64, m: usize) -> usize {
    let bound = (2.0 * m as f64 / xi).ln() / (2.0 * eta * eta);
    let nearest = bound.round();
    if (bound - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest.max(1.0) as usize
    } else {
        bound.ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub p: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn identity(m: usize) -> Self {
        TransitionMatrix {
            p: (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        for row in &self.p {
            if row.len() != m || row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation("transition matrix entries must be probabilities"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::validation("transition matrix rows must sum to 1"));
            }
        }
        Ok(())
    }
}

/// Applies the modeled cell-level attack: Gaussian noise with standard deviation
/// `i_per * min(|cell|, sd)` on numerics, and with probability `i_alt` a uniformly
/// drawn domain value (possibly the current one) on categoricals.
pub fn modeled_cell_noise(row: &mut Row, schema: &TableSchema, sds: &[f64], i_per: f64, i_alt: f64, rng: &mut Rng) {
    for ((cell, col), &sd) in row.iter_mut().zip(&schema.columns).zip(sds) {
        match (col.kind, cell) {
            (ColumnKind::Numerical, Value::Num(v)) => {
                let s = i_per * v.abs().min(sd);
                if s > 0.0 {
                    *v += Normal::new(0.0, s).expect("finite sd").sample(rng);
                }
            }
            (ColumnKind::Categorical, Value::Cat(c)) => {
                if i_alt > 0.0 && rng.random::<f64>() < i_alt {
                    *c = rng.random_range(0..col.domain().len() as u32);
                }
            }
            _ => {}
        }
    }
}

/// Row-normalized confusion matrix between the cluster a tuple was generated for and
/// the cluster it is assigned to after the modeled cell-level attack.
pub fn estimate_transition_matrix(
    model: &ClusterModel,
    generator: &dyn TupleGenerator,
    t: usize,
    i_per: f64,
    i_alt: f64,
    seed: u64,
) -> Result<TransitionMatrix> {
    if t == 0 {
        return Err(Error::validation("transition sample count must be positive"));
    }
    if generator.clusters() != model.m {
        return Err(Error::validation("generator and cluster model disagree on cluster count"));
    }
    model.check_schema(generator.schema())?;
    let sds = model.encoder.column_sds();
    let schema = generator.schema();
    let p = (0..model.m)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, "transition", k as u64);
            let mut counts = vec![0u64; model.m];
            // Chunked so memory stays bounded for large T.
            let mut left = t;
            while left > 0 {
                let take = left.min(4096);
                left -= take;
                let mut rows = generator.sample_cluster(k, take, &mut rng);
                for row in &mut rows {
                    modeled_cell_noise(row, schema, &sds, i_per, i_alt, &mut rng);
                }
                let table = Table::from_trusted(schema.clone(), rows);
                let latent = model.embed(&table).expect("schema checked");
                for l in model.assign_latent(&latent) {
                    counts[l as usize] += 1;
                }
            }
            counts.iter().map(|&c| c as f64 / t as f64).collect()
        })
        .collect();
    Ok(TransitionMatrix { p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeletionProbs {
    pub q_in: f64,
    pub q_out: f64,
}

impl DeletionProbs {
    pub fn none() -> Self {
        DeletionProbs { q_in: 0.0, q_out: 0.0 }
    }

    pub fn per_cluster(&self, template: &WatermarkTemplate, m: usize) -> Vec<f64> {
        template
            .is_template_cluster(m)
            .into_iter()
            .map(|t| if t { self.q_in } else { self.q_out })
            .collect()
    }
}

/// Deletion counts from adaptive attacks that recluster the original table.
///
/// Each simulation reclusters with its own seed, picks the attacker's `2L` template
/// clusters, deletes `floor(i_del * n)` of their rows uniformly, and counts the
/// deletions that land in the owner's template clusters. The maximum over
/// simulations gives `q_in`; the remainder spread over the other clusters gives
/// `q_out`.
pub fn estimate_deletion_probs(
    table_o: &Table,
    model: &ClusterModel,
    template: &WatermarkTemplate,
    i_del: f64,
    sims: usize,
    seed: u64,
) -> Result<DeletionProbs> {
    if !(0.0..1.0).contains(&i_del) {
        return Err(Error::validation("deletion intensity must lie in [0, 1)"));
    }
    let n = model.total();
    let deletions = (i_del * n as f64 + 1e-9).floor() as u64;
    if deletions == 0 || sims == 0 {
        return Ok(DeletionProbs::none());
    }
    let mask = template.is_template_cluster(model.m);
    let template_size: u64 = model.h.iter().zip(&mask).filter(|(_, &t)| t).map(|(h, _)| h).sum();
    let other_size = n - template_size;
    let l = template.bits();

    let worst = if 2 * l == model.m {
        // Every cluster is a template cluster on both sides.
        deletions
    } else {
        let latent = model.embed(table_o)?;
        let owner_labels = model.assign_latent(&latent);
        let points = Points::new(&latent, model.dim());
        let results: Vec<Result<u64>> = (0..sims)
            .into_par_iter()
            .map(|s| {
                let sim_seed = rng::child_seed(seed, "deletion-sim", s as u64);
                let fit = kmeans::kmeans(points, model.m, sim_seed)?;
                let chosen = select_template_clusters(&fit.counts, l)?;
                let mut in_chosen = vec![false; model.m];
                for c in chosen {
                    in_chosen[c] = true;
                }
                let candidates: Vec<usize> = (0..fit.labels.len()).filter(|&i| in_chosen[fit.labels[i] as usize]).collect();
                let take = (deletions as usize).min(candidates.len());
                let mut rng = rng::stream(seed, "deletion-pick", s as u64);
                let hits = sample(&mut rng, candidates.len(), take)
                    .into_iter()
                    .filter(|&i| mask[owner_labels[candidates[i]] as usize])
                    .count() as u64;
                Ok(hits)
            })
            .collect();
        let mut worst = 0;
        for r in results {
            worst = worst.max(r?);
        }
        worst
    };
    let ratio = |num: f64, den: u64| if den == 0 { 0.0 } else { (num / den as f64).clamp(0.0, 1.0) };
    Ok(DeletionProbs {
        q_in: ratio(worst as f64, template_size),
        q_out: ratio(deletions as f64 - worst as f64, other_size),
    })
}

/// Probability that more than `delta_be` of `l` independent bits flip at rate `p`.
pub fn fnr_bound(p: f64, delta_be: usize, l: usize) -> f64 {
    if delta_be >= l {
        return 0.0;
    }
    let mut total = 0.0;
    let mut c = 1.0f64;
    for j in 0..=l {
        if j > 0 {
            c = c * (l - j + 1) as f64 / j as f64;
        }
        if j > delta_be {
            total += c * p.powi(j as i32) * (1.0 - p).powi((l - j) as i32);
        }
    }
    total
}

/// Largest per-bit error rate keeping the false-negative bound within `delta_fnr`.
pub fn derive_delta_ber(delta_fnr: f64, delta_be: usize, l: usize) -> Result<f64> {
    if !(delta_fnr > 0.0 && delta_fnr < 1.0) {
        return Err(Error::validation("false-negative target must lie in (0, 1)"));
    }
    if delta_be >= l || fnr_bound(BER_CAP, delta_be, l) <= delta_fnr {
        return Ok(BER_CAP);
    }
    let (mut lo, mut hi) = (0.0, BER_CAP);
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if fnr_bound(mid, delta_be, l) <= delta_fnr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.clamp(BER_FLOOR, BER_CAP))
}

/// Per-bit coefficients of the mean and variance of `y_l - y_r` as linear
/// functions of the watermarked histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitCoefficients {
    pub pairs: Vec<(usize, usize)>,
    /// `alpha[i][k]` and `beta[i][k]` for bit `i`, cluster `k`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub watermark: BitString,
    pub delta_ber: f64,
    pub z: f64,
}

impl BitCoefficients {
    pub fn m(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn bits(&self) -> usize {
        self.pairs.len()
    }

    pub fn mean(&self, x: &[u64], bit: usize) -> f64 {
        self.alpha[bit].iter().zip(x).map(|(a, &v)| a * v as f64).sum()
    }

    pub fn variance(&self, x: &[u64], bit: usize) -> f64 {
        self.beta[bit].iter().zip(x).map(|(b, &v)| b * v as f64).sum()
    }
}

pub fn bit_coefficients(
    p: &TransitionMatrix,
    q: &[f64],
    template: &WatermarkTemplate,
    watermark: &BitString,
    delta_ber: f64,
) -> Result<BitCoefficients> {
    let m = p.m();
    if q.len() != m {
        return Err(Error::validation("deletion vector length must equal cluster count"));
    }
    if watermark.len() != template.bits() {
        return Err(Error::validation("watermark length must equal template length"));
    }
    template.validate(m)?;
    let delta_ber = delta_ber.clamp(BER_FLOOR, BER_CAP);
    let mut alpha = Vec::with_capacity(template.bits());
    let mut beta = Vec::with_capacity(template.bits());
    for &(l, r) in &template.pairs {
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
        for k in 0..m {
            let keep = 1.0 - q[k];
            let (pl, pr) = (p.p[k][l], p.p[k][r]);
            a[k] = keep * (pl - pr);
            b[k] = keep * (pl * (1.0 - keep * pl) + pr * (1.0 - keep * pr) + 2.0 * keep * pl * pr);
        }
        alpha.push(a);
        beta.push(b);
    }
    Ok(BitCoefficients {
        pairs: template.pairs.clone(),
        alpha,
        beta,
        watermark: *watermark,
        delta_ber,
        z: phi_inv(delta_ber),
    })
}

/// Normal-approximation probability that bit `bit` decodes wrongly from `x`.
pub fn analytic_ber(x: &[u64], coeffs: &BitCoefficients, bit: usize) -> f64 {
    let e = coeffs.mean(x, bit);
    let v = coeffs.variance(x, bit);
    let one = coeffs.watermark.get(bit);
    if v > 0.0 {
        let s = e / v.sqrt();
        if one {
            phi(s)
        } else {
            phi(-s)
        }
    } else {
        let holds = if one { e < 0.0 } else { e >= 0.0 };
        if holds {
            0.0
        } else {
            1.0
        }
    }
}

/// The full constraint set for one watermark: a sign and a robustness constraint per
/// bit, plus equal cardinality.
#[derive(Debug, Clone)]
pub struct ConstraintSet<'a> {
    pub coeffs: &'a BitCoefficients,
    pub total: u64,
}

pub fn emit_constraints(coeffs: &BitCoefficients, total: u64) -> ConstraintSet<'_> {
    ConstraintSet { coeffs, total }
}

impl ConstraintSet<'_> {
    pub fn sign_holds(&self, x: &[u64], bit: usize) -> bool {
        let e = self.coeffs.mean(x, bit);
        if self.coeffs.watermark.get(bit) {
            e < 0.0
        } else {
            e >= 0.0
        }
    }

    pub fn robust_holds(&self, x: &[u64], bit: usize) -> bool {
        let e = self.coeffs.mean(x, bit);
        let v = self.coeffs.variance(x, bit);
        let lhs = e * e;
        let rhs = self.coeffs.z * self.coeffs.z * v;
        lhs - rhs >= -1e-9 * (lhs + rhs).max(1.0)
    }

    pub fn cardinality_holds(&self, x: &[u64]) -> bool {
        x.iter().sum::<u64>() == self.total
    }

    /// Bits whose sign or robustness constraint fails at `x`.
    pub fn violations(&self, x: &[u64]) -> Vec<usize> {
        (0..self.coeffs.bits())
            .filter(|&i| !(self.sign_holds(x, i) && self.robust_holds(x, i)))
            .collect()
    }
}

/// Everything the owner needs to generate constraints for any buyer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessModel {
    pub params: RobustnessParams,
    pub samples_per_cluster: usize,
    pub transition: TransitionMatrix,
    pub deletion: DeletionProbs,
    pub delta_be: usize,
    pub delta_ber: f64,
    pub seed: u64,
}

impl RobustnessModel {
    pub fn coefficients(&self, template: &WatermarkTemplate, watermark: &BitString) -> Result<BitCoefficients> {
        let q = self.deletion.per_cluster(template, self.transition.m());
        bit_coefficients(&self.transition, &q, template, watermark, self.delta_ber)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: RobustnessModel = read_json(path)?;
        r.transition.validate()?;
        Ok(r)
    }
}

/// Estimates the transition matrix and deletion probabilities and derives the
/// error-rate thresholds.
pub fn fit_robustness(
    table_o: &Table,
    model: &ClusterModel,
    generator: &dyn TupleGenerator,
    template: &WatermarkTemplate,
    params: &RobustnessParams,
    delta_be: usize,
    seed: u64,
) -> Result<RobustnessModel> {
    params.validate()?;
    let t = params.samples_per_cluster(model.m);
    let transition = estimate_transition_matrix(
        model,
        generator,
        t,
        params.i_per,
        params.i_alt,
        rng::child_seed(seed, "transition", 0),
    )?;
    let deletion = estimate_deletion_probs(
        table_o,
        model,
        template,
        params.i_del,
        params.deletion_sims,
        rng::child_seed(seed, "deletion", 0),
    )?;
    let delta_ber = derive_delta_ber(params.delta_fnr, delta_be, template.bits())?;
    Ok(RobustnessModel {
        params: params.clone(),
        samples_per_cluster: t,
        transition,
        deletion,
        delta_be,
        delta_ber,
        seed,
    })
}

/// One draw of `y_l - y_r` under the binomial deletion-and-transition model.
pub fn sample_pair_difference(p: &TransitionMatrix, q: &[f64], x: &[u64], pair: (usize, usize), rng: &mut Rng) -> i64 {
    use rand_distr::Binomial;
    let (l, r) = pair;
    let mut z = 0i64;
    for k in 0..x.len() {
        if x[k] == 0 {
            continue;
        }
        let keep = 1.0 - q[k];
        let a = keep * p.p[k][l];
        let b = keep * p.p[k][r];
        let ul = if a > 0.0 {
            Binomial::new(x[k], a.min(1.0)).expect("valid").sample(rng)
        } else {
            0
        };
        let rest = 1.0 - a;
        let ur = if b > 0.0 && rest > 0.0 {
            Binomial::new(x[k] - ul, (b / rest).min(1.0)).expect("valid").sample(rng)
        } else {
            0
        };
        z += ul as i64 - ur as i64;
    }
    z
}

/// Cluster histogram of a deterministic cell-level attack result; used by tests and
/// experiments that replay the model's attack on concrete tables.
pub fn attacked_histogram(
    model: &ClusterModel,
    table: &Table,
    i_per: f64,
    i_alt: f64,
    seed: u64,
) -> Result<Vec<u64>> {
    model.check_schema(table.schema())?;
    let sds = model.encoder.column_sds();
    let mut rng = rng::stream(seed, "modeled-attack", 0);
    let rows = table
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            modeled_cell_noise(&mut r, table.schema(), &sds, i_per, i_alt, &mut rng);
            r
        })
        .collect();
    let t = Table::from_trusted(table.schema().clone(), rows);
    histogram_of(&model.assign_latent(&model.embed(&t)?), model.m)
}
