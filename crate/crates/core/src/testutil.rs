//! Helpers shared by the unit tests.

use crate::autograd::{Graph, Gradients, ParamId, ParamStore, Tensor};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Every parameter of `store` flattened in id order.
pub fn flat_params(store: &ParamStore) -> Vec<f64> {
    store.iter().flat_map(|(_, p)| p.value.iter().copied().collect::<Vec<_>>()).collect()
}

pub fn set_flat(store: &mut ParamStore, flat: &[f64]) {
    let mut off = 0;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).iter_mut() {
            *x = flat[off];
            off += 1;
        }
    }
    assert_eq!(off, flat.len());
}

/// Gradients laid out like [`flat_params`], zeros for untouched parameters.
pub fn flat_grads(graph: &Graph, grads: &Gradients, store: &ParamStore) -> Vec<f64> {
    let by_id: HashMap<_, _> = grads.params(graph).into_iter().collect();
    store
        .ids()
        .flat_map(|id| match by_id.get(&id) {
            Some(g) => g.iter().copied().collect::<Vec<_>>(),
            None => vec![0.0; store.value(id).len()],
        })
        .collect()
}
