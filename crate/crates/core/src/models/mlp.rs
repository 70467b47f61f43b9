//! Fully connected feed-forward classifier trained by mini-batch gradient
//! descent with backpropagation.
//!
//! Hidden layers use the rectifier; the output layer is linear, so the
//! network's outputs are the softmax logits (margins).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::MarginModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Standardize inputs with training-set mean and standard deviation
    /// (stored in the model and applied at prediction time).
    pub standardize: bool,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            standardize: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub params: MlpParams,
    pub layers: Vec<Layer>,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Mean mini-batch cross-entropy per epoch.
    pub training_loss: Vec<f64>,
}

/// Gradient of the mean loss with respect to one layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Mlp {
    /// Randomly initialized network with He-style uniform weights
    /// `U(−√(6/fan_in), √(6/fan_in))` and zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        let mut rng = rng::stream(seed, "mlp/init");
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let p = layer_sizes[0];
        Ok(Self {
            params: MlpParams {
                hidden: layer_sizes[1..layer_sizes.len() - 1].to_vec(),
                seed,
                ..MlpParams::default()
            },
            layers,
            input_shift: vec![0.0; p],
            input_scale: vec![1.0; p],
            training_loss: Vec::new(),
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for (j, mut col) in z.axis_iter_mut(Axis(1)).enumerate() {
            let (s, c) = (self.input_shift[j], self.input_scale[j]);
            col.mapv_inplace(|v| (v - s) / c);
        }
        z
    }

    /// Activations of every layer, input first; the last entry is the logits.
    fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![self.normalize(x)];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights) + &layer.bias;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean softmax cross-entropy over the rows of `x` and its gradient.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: &[usize]) -> (f64, Vec<LayerGradient>) {
        let acts = self.forward(x);
        let n = x.nrows() as f64;
        let logits = acts.last().unwrap();
        let mut delta = logits.clone();
        let mut loss = 0.0;
        for (i, mut row) in delta.axis_iter_mut(Axis(0)).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let z = row.sum();
            loss += z.ln() + m - logits[[i, y[i]]];
            row.mapv_inplace(|v| v / z);
            row[y[i]] -= 1.0;
        }
        delta /= n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let weights = acts[l].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                back.zip_mut_with(&acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(LayerGradient { weights, bias });
        }
        grads.reverse();
        (loss / n, grads)
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *it.next().expect("parameter count");
            }
        }
    }

    pub fn flatten_gradient(grads: &[LayerGradient]) -> Vec<f64> {
        grads
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
            .collect()
    }
}

impl MarginModel for Mlp {
    fn n_features(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    fn margin_into(&self, x: &[f64], out: &mut [f64]) {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let logits = self.forward(row).pop().unwrap();
        out.copy_from_slice(logits.as_slice().unwrap());
    }

    fn margins(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).pop().unwrap()
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains a network with layer sizes `[p, hidden…, k]`.
pub fn train_mlp(train: &Dataset, params: &MlpParams) -> Result<Mlp> {
    if params.batch_size == 0 || params.learning_rate <= 0.0 {
        return Err(Error::InvalidSpec(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let mut sizes = vec![train.n_features()];
    sizes.extend(&params.hidden);
    sizes.push(train.n_classes());
    let mut mlp = Mlp::init(&sizes, params.seed)?;
    mlp.params = params.clone();
    let x = train.features();
    if params.standardize {
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let mean = col.mean().unwrap_or(0.0);
            let sd = col.std(0.0);
            mlp.input_shift[j] = mean;
            mlp.input_scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
    }

    let n = train.n_samples();
    let mut rng = rng::stream(params.seed, "mlp/batches");
    let n_params = mlp.flat_params().len();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    for epoch in 0..params.epochs {
        let order = rng::permutation(n, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let (loss, grads) = mlp.loss_and_gradient(xb.view(), &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "epoch",
                    index: epoch,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            step(&mut mlp, &grads, params, &mut adam);
        }
        mlp.training_loss.push(epoch_loss / n as f64);
    }
    Ok(mlp)
}

fn step(mlp: &mut Mlp, grads: &[LayerGradient], params: &MlpParams, adam: &mut AdamState) {
    let lr = params.learning_rate;
    match params.optimizer {
        Optimizer::Sgd => {
            for (layer, g) in mlp.layers.iter_mut().zip(grads) {
                layer.weights.scaled_add(-lr, &g.weights);
                layer.bias.scaled_add(-lr, &g.bias);
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            let flat_grad = Mlp::flatten_gradient(grads);
            let mut i = 0;
            for layer in &mut mlp.layers {
                for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    let g = flat_grad[i];
                    adam.m[i] = B1 * adam.m[i] + (1.0 - B1) * g;
                    adam.v[i] = B2 * adam.v[i] + (1.0 - B2) * g * g;
                    *w -= lr * (adam.m[i] / c1) / ((adam.v[i] / c2).sqrt() + EPS);
                    i += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_sizes_chain() {
        let m = Mlp::init(&[4, 8, 3], 1).unwrap();
        assert_eq!(m.layer_sizes(), vec![4, 8, 3]);
        assert_eq!(m.flat_params().len(), 4 * 8 + 8 + 8 * 3 + 3);
        assert!(Mlp::init(&[4], 1).is_err());
    }

    #[test]
    fn batch_and_single_margins_agree() {
        let m = Mlp::init(&[3, 5, 2], 9).unwrap();
        let x = array![[0.1, -0.2, 0.3], [1.0, 2.0, -1.0]];
        let batch = m.margins(x.view());
        for i in 0..2 {
            let single = m.margin(x.row(i).as_slice().unwrap());
            for c in 0..2 {
                assert!((single[c] - batch[[i, c]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = Mlp::init(&[3, 4, 2], 2).unwrap();
        let mut p = m.flat_params();
        p[0] = 42.0;
        m.set_flat_params(&p);
        assert_eq!(m.layers[0].weights[[0, 0]], 42.0);
        assert_eq!(m.flat_params(), p);
    }

    #[test]
    fn deterministic_in_seed() {
        let d = crate::data::simulate(&crate::data::SimulationSpec {
            n_samples: 100,
            ..Default::default()
        })
        .unwrap();
        let params = MlpParams {
            hidden: vec![8],
            epochs: 3,
            ..Default::default()
        };
        assert_eq!(train_mlp(&d, &params).unwrap(), train_mlp(&d, &params).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let x = array![[1e200, 1.0], [-1e200, 2.0], [1e200, 0.5], [-1e200, 0.0]];
        let d = Dataset::new(x, vec![0, 1, 0, 1], vec!["a".into(), "b".into()], vec!["p".into(), "q".into()]).unwrap();
        let params = MlpParams {
            hidden: vec![],
            epochs: 5,
            standardize: false,
            optimizer: Optimizer::Sgd,
            learning_rate: 1e200,
            ..Default::default()
        };
        assert!(matches!(train_mlp(&d, &params), Err(Error::Diverged { stage: "epoch", .. })));
    }
}
