//! Helpers shared by the integration test targets.

use gaze_core::models::SequenceModel;
use gaze_tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_EPS: f64 = 1e-5;

pub fn random_batch(n: usize, m: usize, l: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * m * l).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn loss(model: &SequenceModel<f64>, batch: &[f64], labels: &[usize]) -> f64 {
    let g = Graph::new();
    let probs = model.forward(&g, batch).unwrap();
    let l = g.cross_entropy(probs, labels).unwrap();
    let v = g.value(l).data()[0];
    v
}

/// Largest relative error between backprop and central differences over
/// every scalar parameter.
pub fn max_relative_error(mut model: SequenceModel<f64>, batch: &[f64], labels: &[usize]) -> f64 {
    let g = Graph::new();
    let probs = model.forward(&g, batch).unwrap();
    let l = g.cross_entropy(probs, labels).unwrap();
    let grads = g.backward(l).unwrap();
    model.params.accumulate_grads(&g, &grads).unwrap();
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = model.params.get(id).grad.clone().unwrap();
        for j in 0..analytic.len() {
            let orig = model.params.get(id).value.data()[j];
            model.params.get_mut(id).value.data_mut()[j] = orig + GRAD_EPS;
            let up = loss(&model, batch, labels);
            model.params.get_mut(id).value.data_mut()[j] = orig - GRAD_EPS;
            let down = loss(&model, batch, labels);
            model.params.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * GRAD_EPS);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
