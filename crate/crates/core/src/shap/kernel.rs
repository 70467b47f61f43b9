//! Model-agnostic Kernel SHAP with an interventional background.
//!
//! A coalition `z ⊆ {0..p}` is valued as
//! `v(z) = mean_b f(x_z, b_{z̄})` over background rows `b`. The SHAP values
//! solve the weighted least-squares problem
//!
//! ```text
//! min_φ Σ_z π(z) (v(z) − base − Σ_{j∈z} φ_j)²   s.t.  Σ_j φ_j = f(x) − base
//! π(z) = (p − 1) / (C(p, |z|) · |z| · (p − |z|))
//! ```
//!
//! The constraint is eliminated by substituting out the last feature. When
//! all `2^p − 2` proper coalitions fit the budget they are enumerated and the
//! result is exact; otherwise whole subset sizes are enumerated from the
//! outside in while the budget allows and the remaining sizes are sampled
//! in complementary pairs.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Provenance, ShapTensor};
use crate::error::{Error, Result};
use crate::models::MarginModel;
use crate::rng;

/// Reference rows that stand in for "absent" features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    rows: Array2<f64>,
}

impl Background {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidInput("background must be non-empty".into()));
        }
        Ok(Self { rows })
    }

    /// At most `size` rows of `x`, drawn without replacement from the seed
    /// and kept in their original order.
    pub fn sample(x: ArrayView2<f64>, size: usize, seed: u64) -> Result<Self> {
        if x.nrows() <= size {
            return Self::new(x.to_owned());
        }
        let mut rng = rng::stream(seed, "kernel-shap/background");
        let mut picked = sample_indices(&mut rng, x.nrows(), size).into_vec();
        picked.sort_unstable();
        Self::new(x.select(Axis(0), &picked))
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelShapConfig {
    /// Coalitions per sample when not enumerating exhaustively.
    pub n_coalitions: usize,
    pub seed: u64,
    /// Upper bound on model evaluations per explained sample
    /// (`coalitions × background rows`).
    pub max_evaluations: usize,
    /// Diagonal loading used only when the normal equations are not
    /// numerically positive definite.
    pub fallback_ridge: f64,
}

impl Default for KernelShapConfig {
    fn default() -> Self {
        Self {
            n_coalitions: 2048,
            seed: 0,
            max_evaluations: 4_000_000,
            fallback_ridge: 1e-6,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coalition masks with their regression weights.
#[derive(Debug, Clone)]
struct Design {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
}

fn subsets_of_size(p: usize, s: usize, mut visit: impl FnMut(Vec<bool>)) {
    // Lexicographic walk over index combinations.
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        let mut mask = vec![false; p];
        for &i in &idx {
            mask[i] = true;
        }
        visit(mask);
        let mut i = s;
        while i > 0 && idx[i - 1] == i - 1 + p - s {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..s {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn exhaustive_design(p: usize) -> Design {
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    for s in 1..p {
        let w = (p - 1) as f64 / (binomial(p, s) * s as f64 * (p - s) as f64);
        subsets_of_size(p, s, |m| {
            masks.push(m);
            weights.push(w);
        });
    }
    Design { masks, weights }
}

fn sampled_design(p: usize, budget: usize, seed: u64) -> Design {
    // Sizes 1..=⌈(p−1)/2⌉; size s stands for itself and p − s.
    let n_sizes = (p - 1).div_ceil(2);
    let paired = |s: usize| s != p - s;
    // Kernel mass per size, pairing s with p − s.
    let mut mass: Vec<f64> = (1..=n_sizes)
        .map(|s| {
            let w = (p - 1) as f64 / (s as f64 * (p - s) as f64);
            if paired(s) {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);

    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut left = budget;
    let mut remaining_mass = 1.0;
    let mut first_sampled = n_sizes + 1;
    for s in 1..=n_sizes {
        let count = binomial(p, s) * if paired(s) { 2.0 } else { 1.0 };
        let share = mass[s - 1] / remaining_mass;
        if left as f64 * share + 1e-8 >= count {
            let w = mass[s - 1] / count;
            subsets_of_size(p, s, |m| {
                if paired(s) {
                    let complement: Vec<bool> = m.iter().map(|b| !b).collect();
                    masks.push(m);
                    weights.push(w);
                    masks.push(complement);
                } else {
                    masks.push(m);
                }
                weights.push(w);
            });
            left -= count as usize;
            remaining_mass -= mass[s - 1];
        } else {
            first_sampled = s;
            break;
        }
    }

    if first_sampled <= n_sizes && left >= 2 {
        let mut rng = rng::stream(seed, "kernel-shap/coalitions");
        let sizes: Vec<usize> = (first_sampled..=n_sizes).collect();
        let size_mass: Vec<f64> = sizes.iter().map(|&s| mass[s - 1]).collect();
        let size_total: f64 = size_mass.iter().sum();
        let mut counts: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
        let mut drawn = 0usize;
        while drawn + 2 <= left {
            let mut u = rng.random::<f64>() * size_total;
            let mut s = *sizes.last().expect("non-empty");
            for (&size, &m) in sizes.iter().zip(&size_mass) {
                if u < m {
                    s = size;
                    break;
                }
                u -= m;
            }
            let chosen = sample_indices(&mut rng, p, s).into_vec();
            let mut mask = vec![false; p];
            for i in chosen {
                mask[i] = true;
            }
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            *counts.entry(mask).or_default() += 1;
            *counts.entry(complement).or_default() += 1;
            drawn += 2;
        }
        for (mask, c) in counts {
            weights.push(remaining_mass * c as f64 / drawn as f64);
            masks.push(mask);
        }
    }
    Design { masks, weights }
}

fn design(p: usize, config: &KernelShapConfig) -> Design {
    let exhaustive = p < usize::BITS as usize - 1 && (1usize << p) - 2 <= config.n_coalitions;
    if exhaustive {
        exhaustive_design(p)
    } else {
        sampled_design(p, config.n_coalitions, config.seed)
    }
}

/// Cholesky factor of the reduced normal matrix, shared by every sample.
struct Solver {
    /// `A` with the last feature eliminated: `a[z][j] = z_j − z_{p−1}`.
    reduced: DMatrix<f64>,
    weights: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ridge_used: bool,
}

impl Solver {
    fn new(design: &Design, p: usize, fallback_ridge: f64) -> Result<Self> {
        let m = design.masks.len();
        let q = p - 1;
        let reduced = DMatrix::from_fn(m, q, |z, j| {
            let last = f64::from(u8::from(design.masks[z][p - 1]));
            f64::from(u8::from(design.masks[z][j])) - last
        });
        let weights = DVector::from_vec(design.weights.clone());
        let mut normal = DMatrix::zeros(q, q);
        for z in 0..m {
            let w = weights[z];
            for a in 0..q {
                let ra = reduced[(z, a)];
                if ra == 0.0 {
                    continue;
                }
                for b in 0..q {
                    normal[(a, b)] += w * ra * reduced[(z, b)];
                }
            }
        }
        if let Some(chol) = normal.clone().cholesky() {
            let min_pivot = chol.l_dirty().diagonal().min();
            if min_pivot > 1e-10 {
                return Ok(Self {
                    reduced,
                    weights,
                    chol,
                    ridge_used: false,
                });
            }
        }
        let loaded = normal + DMatrix::identity(q, q) * fallback_ridge;
        let chol = loaded
            .cholesky()
            .ok_or_else(|| Error::Numerical("Kernel SHAP normal equations are singular".into()))?;
        Ok(Self {
            reduced,
            weights,
            chol,
            ridge_used: true,
        })
    }

    /// φ for one class given coalition values `v` (minus base) and the total
    /// `delta = f(x) − base`.
    fn solve(&self, design: &Design, v: &[f64], delta: f64, p: usize) -> Vec<f64> {
        let q = p - 1;
        let mut rhs = DVector::zeros(q);
        for (z, mask) in design.masks.iter().enumerate() {
            let last = if mask[p - 1] { 1.0 } else { 0.0 };
            let target = self.weights[z] * (v[z] - last * delta);
            for j in 0..q {
                rhs[j] += self.reduced[(z, j)] * target;
            }
        }
        let head = self.chol.solve(&rhs);
        let mut phi: Vec<f64> = head.iter().copied().collect();
        phi.push(delta - phi.iter().sum::<f64>());
        phi
    }
}

/// Coalition values `v(z)` (rows) per class (columns) for one sample.
fn coalition_values(
    model: &dyn MarginModel,
    x: &[f64],
    background: &Array2<f64>,
    masks: &[Vec<bool>],
) -> Array2<f64> {
    let m = background.nrows();
    let k = model.n_classes();
    let chunk = (65_536 / m).max(1);
    let mut out = Array2::zeros((masks.len(), k));
    for (c, block) in masks.chunks(chunk).enumerate() {
        let mut hybrid = Array2::zeros((block.len() * m, x.len()));
        for (z, mask) in block.iter().enumerate() {
            for b in 0..m {
                let mut row = hybrid.row_mut(z * m + b);
                for j in 0..x.len() {
                    row[j] = if mask[j] { x[j] } else { background[[b, j]] };
                }
            }
        }
        let margins = model.margins(hybrid.view());
        for z in 0..block.len() {
            let mean = margins
                .slice(ndarray::s![z * m..(z + 1) * m, ..])
                .mean_axis(Axis(0))
                .expect("non-empty");
            out.row_mut(c * chunk + z).assign(&mean);
        }
    }
    out
}

/// Kernel SHAP values for every row of `x`.
///
/// The base defaults to the mean background margin, which makes the
/// explanation exactly the interventional Shapley value when coalitions are
/// enumerated. A different `base` (e.g. the mean margin over the whole
/// training set) is honoured through the efficiency constraint, so rows still
/// sum to `f(x) − base`.
pub fn kernel_shap(
    model: &dyn MarginModel,
    x: ArrayView2<f64>,
    background: &Background,
    base: Option<&[f64]>,
    config: &KernelShapConfig,
) -> Result<ShapTensor> {
    let p = model.n_features();
    let k = model.n_classes();
    if x.ncols() != p || background.rows.ncols() != p {
        return Err(Error::shape(
            format!("{p} features"),
            format!("x: {}, background: {}", x.ncols(), background.rows.ncols()),
        ));
    }
    let base = match base {
        Some(b) if b.len() != k => return Err(Error::shape(k, b.len())),
        Some(b) => b.to_vec(),
        None => model
            .margins(background.rows.view())
            .mean_axis(Axis(0))
            .expect("non-empty")
            .to_vec(),
    };

    let margins = model.margins(x);
    if p == 1 {
        let values = Array3::from_shape_fn((x.nrows(), 1, k), |(i, _, c)| margins[[i, c]] - base[c]);
        return finish(values, base, background);
    }

    let design = design(p, config);
    let evaluations = design.masks.len().saturating_mul(background.len());
    if evaluations > config.max_evaluations {
        return Err(Error::InvalidSpec(format!(
            "{} coalitions × {} background rows exceeds the budget of {} evaluations per sample",
            design.masks.len(),
            background.len(),
            config.max_evaluations
        )));
    }
    let solver = Solver::new(&design, p, config.fallback_ridge)?;

    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let per_sample: Vec<Result<Vec<f64>>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let v = coalition_values(model, row, &background.rows, &design.masks);
            let mut phi = vec![0.0; p * k];
            for c in 0..k {
                let target: Vec<f64> = v.column(c).iter().map(|vz| vz - base[c]).collect();
                let delta = margins[[i, c]] - base[c];
                let class_phi = solver.solve(&design, &target, delta, p);
                if class_phi.iter().any(|f| !f.is_finite()) {
                    return Err(Error::Diverged {
                        stage: "kernel-shap",
                        index: i,
                    });
                }
                for (j, f) in class_phi.into_iter().enumerate() {
                    phi[j * k + c] = f;
                }
            }
            Ok(phi)
        })
        .collect();
    let mut flat = Vec::with_capacity(x.nrows() * p * k);
    for r in per_sample {
        flat.extend(r?);
    }
    let values = Array3::from_shape_vec((x.nrows(), p, k), flat).expect("sized");
    let mut t = finish(values, base, background)?;
    if solver.ridge_used {
        t.provenance.method.push_str(" (ridge-loaded)");
    }
    Ok(t)
}

fn finish(values: Array3<f64>, base: Vec<f64>, background: &Background) -> Result<ShapTensor> {
    Ok(ShapTensor::new(values, base)?.with_provenance(Provenance {
        model: String::new(),
        method: "kernel".into(),
        background: Some(format!("{} rows", background.len())),
    }))
}
