//! Distribution-gap metrics between a synthetic and an original table.

use crate::error::{Error, Result};
use crate::table::{ColumnKind, Table};

pub(crate) fn check_pair(syn: &Table, orig: &Table) -> Result<()> {
    if syn.schema() != orig.schema() {
        return Err(Error::SchemaMismatch("tables have different schemas".into()));
    }
    if syn.is_empty() || orig.is_empty() {
        return Err(Error::validation("both tables must be non-empty"));
    }
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Total variation distance between the empirical distributions of two label lists.
pub fn tvd(a: &[usize], b: &[usize], size: usize) -> f64 {
    let mut pa = vec![0.0; size];
    let mut pb = vec![0.0; size];
    for &v in a {
        pa[v] += 1.0;
    }
    for &v in b {
        pb[v] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    0.5 * pa.iter().zip(&pb).map(|(x, y)| (x / na - y / nb).abs()).sum::<f64>()
}

/// Mean over columns of the KS statistic (numerical) or TVD (categorical).
pub fn marginal_gap(syn: &Table, orig: &Table) -> Result<f64> {
    check_pair(syn, orig)?;
    let cols = &orig.schema().columns;
    let total: f64 = cols
        .iter()
        .enumerate()
        .map(|(c, col)| match col.kind {
            ColumnKind::Numerical => ks_statistic(&syn.numeric_column(c), &orig.numeric_column(c)),
            ColumnKind::Categorical => tvd(&labels(syn, c), &labels(orig, c), col.domain().len()),
        })
        .sum();
    Ok(total / cols.len() as f64)
}

fn labels(t: &Table, c: usize) -> Vec<usize> {
    t.categorical_column(c).into_iter().map(|v| v as usize).collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Nearest-rank quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Discrete codes per column: categorical values as is, numerics by the original
/// table's quartiles.
struct Discretized {
    codes: Vec<Vec<usize>>,
    sizes: Vec<usize>,
}

fn discretize(t: &Table, edges: &[Option<[f64; 3]>]) -> Discretized {
    let schema = t.schema();
    let mut codes = Vec::with_capacity(schema.len());
    let mut sizes = Vec::with_capacity(schema.len());
    for (c, col) in schema.columns.iter().enumerate() {
        match (col.kind, edges[c]) {
            (ColumnKind::Numerical, Some(e)) => {
                codes.push(t.numeric_column(c).iter().map(|&v| e.iter().filter(|&&q| v > q).count()).collect());
                sizes.push(4);
            }
            _ => {
                codes.push(labels(t, c));
                sizes.push(col.domain().len());
            }
        }
    }
    Discretized { codes, sizes }
}

/// Mean over column pairs of `|r_syn - r_orig| / 2` for numerical pairs and the
/// joint TVD for pairs involving a categorical column.
pub fn correlation_gap(syn: &Table, orig: &Table) -> Result<f64> {
    check_pair(syn, orig)?;
    let schema = orig.schema();
    let k = schema.len();
    if k < 2 {
        return Err(Error::validation("correlation gap needs at least two columns"));
    }
    let edges: Vec<Option<[f64; 3]>> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(c, col)| {
            (col.kind == ColumnKind::Numerical).then(|| {
                let v = orig.numeric_column(c);
                [quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)]
            })
        })
        .collect();
    let ds = discretize(syn, &edges);
    let dorig = discretize(orig, &edges);
    let nums_s: Vec<Option<Vec<f64>>> = (0..k)
        .map(|c| (schema.columns[c].kind == ColumnKind::Numerical).then(|| syn.numeric_column(c)))
        .collect();
    let nums_o: Vec<Option<Vec<f64>>> = (0..k)
        .map(|c| (schema.columns[c].kind == ColumnKind::Numerical).then(|| orig.numeric_column(c)))
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            let gap = match (&nums_s[i], &nums_s[j], &nums_o[i], &nums_o[j]) {
                (Some(si), Some(sj), Some(oi), Some(oj)) => (pearson(si, sj) - pearson(oi, oj)).abs() / 2.0,
                _ => {
                    let width = ds.sizes[j];
                    let join = |d: &Discretized| -> Vec<usize> {
                        d.codes[i].iter().zip(&d.codes[j]).map(|(&a, &b)| a * width + b).collect()
                    };
                    tvd(&join(&ds), &join(&dorig), ds.sizes[i] * width)
                }
            };
            total += gap;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
