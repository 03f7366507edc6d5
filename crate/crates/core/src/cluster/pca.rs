use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Principal-component basis retaining at least `target` of the total variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Retained components, each a unit vector of length `mean.len()`.
    pub components: Vec<Vec<f64>>,
    /// Explained-variance fraction of each retained component, descending.
    pub explained: Vec<f64>,
    pub target: f64,
}

impl PcaBasis {
    /// Fits on row-major `n x dim` data.
    pub fn fit(data: &[f64], dim: usize, target: f64) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        let n = data.len() / dim;
        let mut mean = vec![0.0; dim];
        for row in data.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n.max(1) as f64;
        }

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for row in data.chunks(dim) {
            for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = v - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                for j in i..dim {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] / n.max(1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = values.iter().sum();

        let mut keep = 0;
        let mut cumulative = 0.0;
        let mut explained = Vec::new();
        if total <= 0.0 {
            keep = 1;
            explained.push(1.0);
        } else {
            for v in &values {
                let frac = v / total;
                cumulative += frac;
                explained.push(frac);
                keep += 1;
                if cumulative >= target - 1e-12 {
                    break;
                }
            }
        }

        let components = order[..keep]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                // Sign convention: largest-magnitude entry positive (lowest index on ties).
                let mut pivot = 0;
                for (j, x) in v.iter().enumerate() {
                    if x.abs() > v[pivot].abs() + 1e-12 {
                        pivot = j;
                    }
                }
                if v[pivot] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();

        PcaBasis {
            mean,
            components,
            explained,
            target,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.components) {
            *o = comp
                .iter()
                .zip(x)
                .zip(&self.mean)
                .map(|((c, v), m)| c * (v - m))
                .sum();
        }
    }

    /// Row-major projection of row-major input.
    pub fn project(&self, data: &[f64]) -> Vec<f64> {
        let din = self.input_dim();
        let dout = self.output_dim();
        let n = data.len() / din;
        let mut out = vec![0.0; n * dout];
        for (row, o) in data.chunks(din).zip(out.chunks_mut(dout)) {
            self.project_into(row, o);
        }
        out
    }

    pub fn reconstruct(&self, latent: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (z, comp) in latent.iter().zip(&self.components) {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += z * c;
            }
        }
        out
    }
}
