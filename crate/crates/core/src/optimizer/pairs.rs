//! Exact solver for the simplified problem.
//!
//! After simplification each bit constrains only its own pair, so the problem
//! separates into independent 2-D pair problems and a set of singleton clusters
//! joined by the cardinality equation. Pair candidates are enumerated within a cost
//! budget above each pair's own optimum, combined by a min-plus dynamic program over
//! the total pair shift, and completed by water-filling the singletons. The result is
//! optimal once its cost is within the budget; otherwise the budget doubles.

use std::collections::BTreeMap;

use super::surrogate::{SearchBox, SurrogateBounds};
use crate::error::{Error, Result};
use crate::robustness::BitCoefficients;

/// Strictness margin for 1 bits in the continuous relaxation.
pub const STRICT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplifiedSolution {
    pub x: Vec<u64>,
    pub cost: u128,
    /// Whether the budget certificate proved optimality.
    pub certified: bool,
}

pub(crate) struct PairProblem {
    pub l: usize,
    pub r: usize,
    pub one: bool,
    al: f64,
    ar: f64,
    e: f64,
    bl: f64,
    br: f64,
    f: f64,
    z: f64,
    lo_l: i64,
    hi_l: i64,
    lo_r: i64,
    hi_r: i64,
    h_l: i64,
    h_r: i64,
}

impl PairProblem {
    pub(crate) fn new(coeffs: &BitCoefficients, bounds: &SurrogateBounds, bx: &SearchBox, h: &[u64], bit: usize) -> Self {
        let (l, r) = coeffs.pairs[bit];
        PairProblem {
            l,
            r,
            one: coeffs.watermark.get(bit),
            al: coeffs.alpha[bit][l],
            ar: coeffs.alpha[bit][r],
            e: bounds.e[bit],
            bl: coeffs.beta[bit][l],
            br: coeffs.beta[bit][r],
            f: bounds.f[bit],
            z: coeffs.z.abs(),
            lo_l: bx.lo[l],
            hi_l: bx.hi[l],
            lo_r: bx.lo[r],
            hi_r: bx.hi[r],
            h_l: h[l] as i64,
            h_r: h[r] as i64,
        }
    }

    fn mean(&self, a: i64, b: i64) -> f64 {
        self.al * a as f64 + self.ar * b as f64 + self.e
    }

    /// `E^2 - z^2 V`, a convex quadratic along any line.
    fn quad(&self, a: i64, b: i64) -> f64 {
        let mean = self.mean(a, b);
        let var = self.bl * a as f64 + self.br * b as f64 + self.f;
        mean * mean - self.z * self.z * var
    }

    fn sign_ok(&self, a: i64, b: i64) -> bool {
        let mean = self.mean(a, b);
        if self.one {
            mean <= -STRICT_EPS
        } else {
            mean >= 0.0
        }
    }

    /// Feasible `x_r` values for `x_l = a`: at most two intervals.
    fn intervals(&self, a: i64) -> Vec<(i64, i64)> {
        let (mut lo, mut hi) = (self.lo_r, self.hi_r);
        if self.one {
            lo = lo.max(a + 1);
        } else {
            hi = hi.min(a);
        }
        if lo > hi {
            return Vec::new();
        }
        // The sign constraint is linear in b, so it keeps a prefix or a suffix.
        let (sl, sh) = (self.sign_ok(a, lo), self.sign_ok(a, hi));
        match (sl, sh) {
            (false, false) => return Vec::new(),
            (true, false) => hi = last_true(lo, hi, |b| self.sign_ok(a, b)),
            (false, true) => lo = first_true(lo, hi, |b| self.sign_ok(a, b)),
            (true, true) => {}
        }
        let q = |b: i64| self.quad(a, b);
        let (mut x, mut y) = (lo, hi);
        while x < y {
            let mid = x + (y - x) / 2;
            if q(mid) > q(mid + 1) {
                x = mid + 1;
            } else {
                y = mid;
            }
        }
        let valley = x;
        if q(valley) >= 0.0 {
            return vec![(lo, hi)];
        }
        let mut out = Vec::with_capacity(2);
        if q(lo) >= 0.0 {
            out.push((lo, last_true(lo, valley, |b| q(b) >= 0.0)));
        }
        if q(hi) >= 0.0 {
            out.push((first_true(valley, hi, |b| q(b) >= 0.0), hi));
        }
        out
    }
}

/// Largest `b` in `[lo, hi]` with `f(b)`, given `f(lo)` and a true prefix.
fn last_true(lo: i64, hi: i64, f: impl Fn(i64) -> bool) -> i64 {
    let (mut x, mut y) = (lo, hi);
    while x < y {
        let mid = x + (y - x + 1) / 2;
        if f(mid) {
            x = mid;
        } else {
            y = mid - 1;
        }
    }
    x
}

/// Smallest `b` in `[lo, hi]` with `f(b)`, given `f(hi)` and a true suffix.
fn first_true(lo: i64, hi: i64, f: impl Fn(i64) -> bool) -> i64 {
    let (mut x, mut y) = (lo, hi);
    while x < y {
        let mid = x + (y - x) / 2;
        if f(mid) {
            y = mid;
        } else {
            x = mid + 1;
        }
    }
    x
}

/// Pair feasible region as row intervals and the pair's own optimum.
struct PairRegion {
    rows: Vec<(i64, i64, i64)>,
    best: u128,
}

fn sq(v: i64) -> u128 {
    (v as i128 * v as i128) as u128
}

fn region(p: &PairProblem) -> Option<PairRegion> {
    let mut rows = Vec::new();
    let mut best = u128::MAX;
    for a in p.lo_l..=p.hi_l {
        for (lo, hi) in p.intervals(a) {
            let b = p.h_r.clamp(lo, hi);
            best = best.min(sq(a - p.h_l) + sq(b - p.h_r));
            rows.push((a, lo, hi));
        }
    }
    (!rows.is_empty()).then_some(PairRegion { rows, best })
}

/// Candidates with cost at most `limit`, keyed by sum shift; the first point in scan
/// order wins ties.
fn candidates(p: &PairProblem, reg: &PairRegion, limit: u128) -> BTreeMap<i64, (u128, i64, i64)> {
    let mut out: BTreeMap<i64, (u128, i64, i64)> = BTreeMap::new();
    for &(a, lo, hi) in &reg.rows {
        let ca = sq(a - p.h_l);
        if ca > limit {
            continue;
        }
        let rem = limit - ca;
        let reach = (rem as f64).sqrt().floor() as i64 + 1;
        let from = lo.max(p.h_r - reach);
        let to = hi.min(p.h_r + reach);
        for b in from..=to {
            let cost = ca + sq(b - p.h_r);
            if cost > limit {
                continue;
            }
            let d = a + b - p.h_l - p.h_r;
            match out.get(&d) {
                Some(&(c, _, _)) if c <= cost => {}
                _ => {
                    out.insert(d, (cost, a, b));
                }
            }
        }
    }
    out
}

/// Water-filling of `units` unit moves over singletons with the given capacities:
/// minimal sum of squares and the per-singleton moves.
pub(crate) fn water_fill(caps: &[i64], units: i64) -> Option<(u128, Vec<i64>)> {
    if units == 0 {
        return Some((0, vec![0; caps.len()]));
    }
    if caps.iter().sum::<i64>() < units {
        return None;
    }
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by_key(|&i| (caps[i], i));
    let mut moves = vec![0i64; caps.len()];
    let mut left = units;
    let mut cost = 0u128;
    let mut open = caps.len() as i64;
    let mut idx = 0;
    // Saturate every singleton whose capacity is below the current level.
    while idx < order.len() && caps[order[idx]] * open <= left {
        let k = order[idx];
        moves[k] = caps[k];
        cost += sq(caps[k]);
        left -= caps[k];
        open -= 1;
        idx += 1;
    }
    if open == 0 {
        return (left == 0).then_some((cost, moves));
    }
    let q = left / open;
    let extra = left % open;
    let mut rest: Vec<usize> = order[idx..].to_vec();
    rest.sort_unstable();
    for (j, &k) in rest.iter().enumerate() {
        let v = q + i64::from((j as i64) < extra);
        moves[k] = v;
        cost += sq(v);
    }
    Some((cost, moves))
}

struct Singles {
    idx: Vec<usize>,
    up: Vec<i64>,
    down: Vec<i64>,
    total_up: i64,
    total_down: i64,
}

impl Singles {
    fn cost(&self, shift: i64) -> Option<u128> {
        if shift > self.total_up || -shift > self.total_down {
            return None;
        }
        if self.idx.is_empty() {
            return (shift == 0).then_some(0);
        }
        let caps = if shift >= 0 { &self.up } else { &self.down };
        water_fill(caps, shift.abs()).map(|(c, _)| c)
    }
}

/// Minimizes the squared deviation from `h` under the simplified per-bit constraints,
/// the box, the simple orders and equal cardinality.
pub fn solve_simplified(
    h: &[u64],
    coeffs: &BitCoefficients,
    bounds: &SurrogateBounds,
    tau: f64,
    max_rounds: usize,
) -> Result<SimplifiedSolution> {
    let bx = SearchBox::new(h, tau);
    solve_in(h, coeffs, bounds, &bx, max_rounds)
}

pub(crate) fn solve_in(
    h: &[u64],
    coeffs: &BitCoefficients,
    bounds: &SurrogateBounds,
    bx: &SearchBox,
    max_rounds: usize,
) -> Result<SimplifiedSolution> {
    let m = h.len();
    let problems: Vec<PairProblem> = (0..coeffs.bits()).map(|i| PairProblem::new(coeffs, bounds, bx, h, i)).collect();
    let mut regions = Vec::with_capacity(problems.len());
    let mut empty = Vec::new();
    for (i, p) in problems.iter().enumerate() {
        match region(p) {
            Some(r) => regions.push(r),
            None => empty.push(i),
        }
    }
    if !empty.is_empty() {
        return Err(Error::Infeasible {
            reason: "no integer point satisfies these bits' simplified constraints in the box".into(),
            bits: empty,
        });
    }

    let mut in_pair = vec![false; m];
    for p in &problems {
        in_pair[p.l] = true;
        in_pair[p.r] = true;
    }
    let idx: Vec<usize> = (0..m).filter(|&k| !in_pair[k]).collect();
    let up: Vec<i64> = idx.iter().map(|&k| bx.hi[k] - h[k] as i64).collect();
    let down: Vec<i64> = idx.iter().map(|&k| h[k] as i64 - bx.lo[k]).collect();
    let singles = Singles {
        total_up: up.iter().sum(),
        total_down: down.iter().sum(),
        idx,
        up,
        down,
    };

    let floor: u128 = regions.iter().map(|r| r.best).sum();
    let mut budget: u128 = 1;
    // Start from the budget that already admits every pair's own optimum.
    let own_shift: i64 = problems
        .iter()
        .zip(&regions)
        .map(|(p, r)| {
            let c = candidates(p, r, r.best);
            *c.iter().min_by_key(|(d, v)| (v.0, d.abs(), **d)).expect("optimum present").0
        })
        .sum();
    if let Some(c) = singles.cost(-own_shift) {
        budget = budget.max(c);
    }

    let mut incumbent: Option<(u128, i64, Vec<(i64, i64)>)> = None;
    for _round in 0..max_rounds.max(1) {
        let cands: Vec<BTreeMap<i64, (u128, i64, i64)>> = problems
            .iter()
            .zip(&regions)
            .map(|(p, r)| candidates(p, r, r.best + budget))
            .collect();
        if let Some(found) = combine(&cands, &singles) {
            let better = incumbent
                .as_ref()
                .is_none_or(|inc| (found.0, found.1.abs()) < (inc.0, inc.1.abs()));
            if better {
                incumbent = Some(found);
            }
        }
        if let Some(inc) = &incumbent {
            if inc.0 <= floor + budget {
                return Ok(finish(h, &problems, &singles, inc, true));
            }
        }
        budget = budget.saturating_mul(2);
    }
    match &incumbent {
        Some(inc) => Ok(finish(h, &problems, &singles, inc, false)),
        None => Err(Error::Infeasible {
            reason: "pair shifts cannot be balanced by the remaining clusters".into(),
            bits: Vec::new(),
        }),
    }
}

/// Min-plus combination over the pairs' shift tables; returns total cost, total pair
/// shift and the point chosen for each pair.
fn combine(cands: &[BTreeMap<i64, (u128, i64, i64)>], singles: &Singles) -> Option<(u128, i64, Vec<(i64, i64)>)> {
    let lo: i64 = cands.iter().map(|c| (*c.keys().next().unwrap_or(&0)).min(0)).sum();
    let hi: i64 = cands.iter().map(|c| (*c.keys().next_back().unwrap_or(&0)).max(0)).sum();
    let width = (hi - lo + 1) as usize;
    let offset = -lo;
    const NONE: u128 = u128::MAX;
    // dp[D + offset] after j pairs, with back-pointers per layer.
    let mut dp = vec![NONE; width];
    let mut run_lo = 0i64;
    let mut run_hi = 0i64;
    dp[offset as usize] = 0;
    let mut choices: Vec<Vec<i64>> = Vec::with_capacity(cands.len());
    for c in cands {
        let mut next = vec![NONE; width];
        let mut pick = vec![i64::MIN; width];
        for base in run_lo..=run_hi {
            let cur = dp[(base + offset) as usize];
            if cur == NONE {
                continue;
            }
            for (&d, &(cost, _, _)) in c {
                let slot = (base + d + offset) as usize;
                let v = cur + cost;
                if v < next[slot] {
                    next[slot] = v;
                    pick[slot] = d;
                }
            }
        }
        run_lo += *c.keys().next()?;
        run_hi += *c.keys().next_back()?;
        dp = next;
        choices.push(pick);
    }
    let mut best: Option<(u128, i64)> = None;
    for total in run_lo..=run_hi {
        let pc = dp[(total + offset) as usize];
        if pc == NONE {
            continue;
        }
        let Some(sc) = singles.cost(-total) else { continue };
        let v = pc + sc;
        if best.is_none_or(|(bv, bd)| (v, total.abs(), total) < (bv, bd.abs(), bd)) {
            best = Some((v, total));
        }
    }
    let (cost, total) = best?;
    let mut points = vec![(0, 0); cands.len()];
    let mut at = total;
    for j in (0..cands.len()).rev() {
        let d = choices[j][(at + offset) as usize];
        let (_, a, b) = cands[j][&d];
        points[j] = (a, b);
        at -= d;
    }
    Some((cost, total, points))
}

fn finish(
    h: &[u64],
    problems: &[PairProblem],
    singles: &Singles,
    inc: &(u128, i64, Vec<(i64, i64)>),
    certified: bool,
) -> SimplifiedSolution {
    let mut x: Vec<i64> = h.iter().map(|&v| v as i64).collect();
    for (p, &(a, b)) in problems.iter().zip(&inc.2) {
        x[p.l] = a;
        x[p.r] = b;
    }
    let shift = -inc.1;
    if shift != 0 {
        let caps = if shift > 0 { &singles.up } else { &singles.down };
        let (_, moves) = water_fill(caps, shift.abs()).expect("shift checked feasible");
        for (&k, mv) in singles.idx.iter().zip(moves) {
            x[k] += mv * shift.signum();
        }
    }
    SimplifiedSolution {
        x: x.into_iter().map(|v| v as u64).collect(),
        cost: inc.0,
        certified,
    }
}
