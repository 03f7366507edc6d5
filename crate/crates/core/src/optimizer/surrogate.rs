//! Surrogate bounds: extrema of each constraint's remainder over the relaxed box.

use crate::error::{Error, Result};
use crate::robustness::BitCoefficients;

/// Integer box `|x_k - h_k| <= R` clipped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub radius: i64,
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl SearchBox {
    pub fn new(h: &[u64], tau: f64) -> Self {
        let total: u64 = h.iter().sum();
        let radius = (tau * total as f64 + 1e-9).floor().max(0.0) as i64;
        SearchBox {
            radius,
            lo: h.iter().map(|&v| (v as i64 - radius).max(0)).collect(),
            hi: h.iter().map(|&v| v as i64 + radius).collect(),
        }
    }
}

/// Per-bit remainder bounds: `e[i]` bounds the mean remainder on the unfavourable
/// side, `f[i]` bounds the variance remainder from above.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateBounds {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
}

/// Range of `x_a + x_b` compatible with the box and the pair's simple order
/// (`x_a >= x_b` for a 0 bit, `x_a <= x_b - 1` for a 1 bit).
pub(crate) fn pair_sum_range(lo_a: i64, hi_a: i64, lo_b: i64, hi_b: i64, one: bool) -> Option<(i64, i64)> {
    let (min, max) = if one {
        ((lo_a + lo_b).max(2 * lo_a + 1), (hi_a + hi_b).min(2 * hi_b - 1))
    } else {
        ((lo_a + lo_b).max(2 * lo_b), (hi_a + hi_b).min(2 * hi_a))
    };
    (min <= max).then_some((min, max))
}

struct Pair {
    a: usize,
    b: usize,
    one: bool,
}

/// Linear program `min c.x` over the box, the simple orders and `sum x = total`,
/// solved exactly: every pair contributes a convex piecewise-linear value function of
/// its sum, singletons contribute linear pieces, and the cardinality deficit is
/// filled greedily by ascending slope.
struct RelaxedSet<'a> {
    lo: &'a [i64],
    hi: &'a [i64],
    pairs: Vec<Pair>,
    singles: Vec<usize>,
    total: i64,
}

impl RelaxedSet<'_> {
    fn pair_value(&self, p: &Pair, c: &[f64], s: f64) -> f64 {
        let (lo_a, hi_a) = (self.lo[p.a] as f64, self.hi[p.a] as f64);
        let (lo_b, hi_b) = (self.lo[p.b] as f64, self.hi[p.b] as f64);
        let mut t_lo = lo_a.max(s - hi_b);
        let mut t_hi = hi_a.min(s - lo_b);
        if p.one {
            t_hi = t_hi.min((s - 1.0) / 2.0);
        } else {
            t_lo = t_lo.max(s / 2.0);
        }
        let t = if c[p.a] - c[p.b] >= 0.0 { t_lo } else { t_hi.max(t_lo) };
        c[p.a] * t + c[p.b] * (s - t)
    }

    fn minimize(&self, c: &[f64]) -> Result<f64> {
        // (slope, component, segment, length)
        let mut segments: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mut value = 0.0;
        let mut deficit = self.total as f64;
        let mut room = 0.0;
        for (pi, p) in self.pairs.iter().enumerate() {
            let (smin, smax) = pair_sum_range(self.lo[p.a], self.hi[p.a], self.lo[p.b], self.hi[p.b], p.one)
                .ok_or_else(|| infeasible(pi))?;
            let (la, ha, lb, hb) = (self.lo[p.a], self.hi[p.a], self.lo[p.b], self.hi[p.b]);
            let mut points: Vec<i64> = vec![smin, smax, la + hb, ha + lb, 2 * la, 2 * hb, 2 * ha + 1, 2 * lb - 1]
                .into_iter()
                .filter(|&s| s >= smin && s <= smax)
                .collect();
            points.sort_unstable();
            points.dedup();
            let values: Vec<f64> = points.iter().map(|&s| self.pair_value(p, c, s as f64)).collect();
            value += values[0];
            deficit -= smin as f64;
            room += (smax - smin) as f64;
            for (si, w) in points.windows(2).enumerate() {
                let len = (w[1] - w[0]) as f64;
                segments.push(((values[si + 1] - values[si]) / len, pi, si, len));
            }
        }
        for (k, &i) in self.singles.iter().enumerate() {
            value += c[i] * self.lo[i] as f64;
            deficit -= self.lo[i] as f64;
            let len = (self.hi[i] - self.lo[i]) as f64;
            room += len;
            if len > 0.0 {
                segments.push((c[i], self.pairs.len() + k, 0, len));
            }
        }
        if deficit < 0.0 || deficit > room {
            return Err(Error::Infeasible {
                reason: "the box cannot meet the cardinality constraint".into(),
                bits: Vec::new(),
            });
        }
        segments.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        for (slope, _, _, len) in segments {
            if deficit <= 0.0 {
                break;
            }
            let take = len.min(deficit);
            value += slope * take;
            deficit -= take;
        }
        Ok(value)
    }
}

fn infeasible(bit: usize) -> Error {
    Error::Infeasible {
        reason: "the box cannot satisfy this pair's partial order".into(),
        bits: vec![bit],
    }
}

fn relaxed_set<'a>(coeffs: &BitCoefficients, bx: &'a SearchBox, total: i64) -> RelaxedSet<'a> {
    let m = bx.lo.len();
    let mut in_pair = vec![false; m];
    let pairs = coeffs
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            in_pair[a] = true;
            in_pair[b] = true;
            Pair {
                a,
                b,
                one: coeffs.watermark.get(i),
            }
        })
        .collect();
    RelaxedSet {
        lo: &bx.lo,
        hi: &bx.hi,
        pairs,
        singles: (0..m).filter(|&k| !in_pair[k]).collect(),
        total,
    }
}

fn widen(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Bounds for every bit over `bx`, all simple orders and equal cardinality.
pub fn surrogate_bounds(coeffs: &BitCoefficients, h: &[u64], tau: f64) -> Result<SurrogateBounds> {
    let bx = SearchBox::new(h, tau);
    surrogate_bounds_in(coeffs, &bx, h.iter().sum::<u64>() as i64)
}

pub(crate) fn surrogate_bounds_in(coeffs: &BitCoefficients, bx: &SearchBox, total: i64) -> Result<SurrogateBounds> {
    let set = relaxed_set(coeffs, bx, total);
    let mut e = Vec::with_capacity(coeffs.bits());
    let mut f = Vec::with_capacity(coeffs.bits());
    for (i, &(l, r)) in coeffs.pairs.iter().enumerate() {
        let mut ca = coeffs.alpha[i].clone();
        ca[l] = 0.0;
        ca[r] = 0.0;
        let mut cb = coeffs.beta[i].clone();
        cb[l] = 0.0;
        cb[r] = 0.0;
        let ev = if coeffs.watermark.get(i) {
            let neg: Vec<f64> = ca.iter().map(|v| -v).collect();
            let v = -set.minimize(&neg)?;
            v + widen(v)
        } else {
            let v = set.minimize(&ca)?;
            v - widen(v)
        };
        let neg: Vec<f64> = cb.iter().map(|v| -v).collect();
        let fv = -set.minimize(&neg)?;
        e.push(ev);
        f.push(fv + widen(fv));
    }
    Ok(SurrogateBounds { e, f })
}
