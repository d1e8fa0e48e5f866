#![allow(dead_code)]

use pgd_multitarget::{Layer, Mat, Model};
use rand::Rng;

pub fn uniform_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect(),
    )
    .unwrap()
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
}

/// `depth` linear layers with the given activation between them.
pub fn random_mlp(
    rng: &mut impl Rng,
    input_dim: usize,
    width: usize,
    depth: usize,
    classes: usize,
    activation: &Layer,
) -> Model {
    let mut layers = Vec::new();
    let mut fan_in = input_dim;
    for i in 0..depth {
        let out = if i + 1 == depth { classes } else { width };
        let scale = (3.0 / fan_in as f64).sqrt();
        layers.push(Layer::Linear {
            weights: uniform_mat(rng, out, fan_in, scale),
            bias: uniform_vec(rng, out, 0.5),
        });
        if i + 1 != depth {
            layers.push(activation.clone());
        }
        fan_in = out;
    }
    Model::new(input_dim, layers).unwrap()
}

pub fn activations() -> [Layer; 3] {
    [Layer::Relu, Layer::Sigmoid, Layer::Tanh]
}

/// A random affine model and a nominal input, labelled by its own
/// prediction at that input.
pub fn random_linear_problem(
    rng: &mut impl Rng,
    classes: usize,
    dim: usize,
) -> (Model, Vec<f64>, usize) {
    let model = Model::linear(
        uniform_mat(rng, classes, dim, 1.0),
        uniform_vec(rng, classes, 1.0),
    )
    .unwrap();
    let x = uniform_vec(rng, dim, 1.0);
    let y = pgd_multitarget::losses::argmax(&model.forward(&x).unwrap());
    (model, x, y)
}

/// Relative error with a floor on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central finite-difference gradient of `cot · f(x)`.
pub fn fd_gradient(model: &Model, x: &[f64], cot: &[f64], h: f64) -> Vec<f64> {
    let f = |p: &[f64]| -> f64 {
        model
            .forward(p)
            .unwrap()
            .iter()
            .zip(cot)
            .map(|(z, c)| z * c)
            .sum()
    };
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}
