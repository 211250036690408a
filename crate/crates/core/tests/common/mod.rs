#![allow(dead_code)]

use fgan_autodiff::gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
use fgan_autodiff::{AutodiffError, Binding, Graph, Tensor};
use fgan_core::models::{Activation, Network, NetDesc};
use fgan_core::training::bias_loss_graph;
use fgan_core::dataset::{gen_gaussian_mixture, LabeledDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Small MLP with weights drawn from U(-scale, scale) so that outputs are far
/// from the uniform regime of the default init.
pub fn spread_mlp(input: usize, hidden: &[usize], output: usize, head: Activation, scale: f32, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(NetDesc::mlp(input, hidden, output, head), &mut rng).unwrap();
    for p in net.params_mut().iter_mut() {
        for v in p.value.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    net
}

pub struct BiasLossCase {
    pub g: Network,
    pub c: Network,
    pub z: Tensor,
    pub lambdas: Vec<f64>,
}

impl BiasLossCase {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            g: spread_mlp(3, &[5], 2, Activation::Tanh, 1.0, seed + 1),
            c: spread_mlp(2, &[6], 3, Activation::Identity, 2.5, seed + 2),
            z: uniform(&mut rng, &[6, 3]),
            lambdas: vec![0.2, 0.5, 0.3],
        }
    }

    /// Soft expectations of the classifier over the generated batch.
    pub fn expectations(&self) -> Vec<f64> {
        let x = self.g.output(&self.z).unwrap();
        let probs = fgan_core::models::softmax_rows(&self.c.output(&x).unwrap());
        let k = probs.shape()[1];
        let b = probs.shape()[0];
        (0..k).map(|d| (0..b).map(|i| probs.row(i)[d]).sum::<f64>() / b as f64).collect()
    }

    /// Gradient check of the soft bias loss with respect to every generator
    /// parameter, with the classifier frozen inside the graph.
    pub fn check(&self) -> GradCheckReport {
        let params: Vec<Tensor> = self.g.params().iter().map(|p| p.tensor()).collect();
        let wrap = |e: fgan_core::FganError| AutodiffError::Usage(e.to_string());
        check_gradients(&params, DEFAULT_STEP, |gr: &mut Graph, vars| {
            let z = gr.constant(self.z.clone());
            let x = self.g.forward(gr, vars, z).map_err(wrap)?;
            let cv = self.c.bind(gr, Binding::Frozen);
            let logits = self.c.forward(gr, &cv, x).map_err(wrap)?;
            let probs = gr.softmax(logits)?;
            bias_loss_graph(gr, probs, &self.lambdas).map_err(wrap)
        })
        .unwrap()
    }
}

/// The imbalanced 5-class benchmark and its balanced reference.
pub fn benchmark(seed: u64) -> (LabeledDataset, LabeledDataset) {
    (
        gen_gaussian_mixture(5, &[3000, 1000, 500, 350, 150], 0.7, 0.05, seed).unwrap(),
        gen_gaussian_mixture(5, &[1000; 5], 0.7, 0.05, seed + 100).unwrap(),
    )
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
