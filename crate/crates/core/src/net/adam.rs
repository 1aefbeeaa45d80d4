use super::Network;
use crate::tensor::Tensor;

/// Adam moments for every parameterized layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> Self {
        let zeros: Vec<Tensor> =
            net.layers.iter().filter_map(|l| l.weight()).map(|w| Tensor::zeros(w.shape())).collect();
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    /// True when the moment tensors line up with the network's parameters.
    pub fn matches(&self, net: &Network) -> bool {
        let weights: Vec<&Tensor> = net.layers.iter().filter_map(|l| l.weight()).collect();
        weights.len() == self.first.len()
            && weights.len() == self.second.len()
            && weights.iter().zip(&self.first).all(|(w, m)| w.shape() == m.shape())
            && weights.iter().zip(&self.second).all(|(w, v)| w.shape() == v.shape())
    }
}

/// One bias-corrected Adam update over every parameter; gradients are zeroed afterwards.
pub fn adam_step(net: &mut Network, state: &mut AdamState) {
    assert!(state.matches(net), "Adam state does not match network parameters");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let params = net.layers.iter_mut().filter_map(|l| l.weight_and_grad_mut());
    for ((w, g), (m, v)) in params.zip(state.first.iter_mut().zip(state.second.iter_mut())) {
        let iter = w.data_mut().iter_mut().zip(g.data_mut().iter_mut());
        for ((wi, gi), (mi, vi)) in iter.zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut())) {
            *mi = b1 * *mi + (1.0 - b1) * *gi;
            *vi = b2 * *vi + (1.0 - b2) * *gi * *gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *wi -= lr * m_hat / (v_hat.sqrt() + eps);
            *gi = 0.0;
        }
    }
}
