//! Parameter update rules: SGD, Adam, RMSProp.

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Sgd,
    Adam { beta1: f64, beta2: f64 },
    RmsProp { decay: f64 },
}

impl OptimKind {
    pub fn adam() -> Self {
        OptimKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
        }
    }

    pub fn rmsprop() -> Self {
        OptimKind::RmsProp { decay: 0.9 }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Option<(Tensor, Tensor)>, // first moment (weight, bias), Adam only
    v: Option<(Tensor, Tensor)>, // second moment / squared-average
}

/// Optimizer state for one network; accumulators mirror parameter shapes.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    step: u64,
    slots: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimKind, learning_rate: f64, net: &Network) -> Self {
        let slots = net
            .layers()
            .iter()
            .map(|l| match l.parameters() {
                Some((w, b)) => {
                    let pair = || (Tensor::zeros(w.shape()), Tensor::zeros(b.shape()));
                    Moments {
                        m: matches!(kind, OptimKind::Adam { .. }).then(pair),
                        v: (!matches!(kind, OptimKind::Sgd)).then(pair),
                    }
                }
                None => Moments { m: None, v: None },
            })
            .collect();
        Optimizer {
            kind,
            learning_rate,
            epsilon: 1e-8,
            step: 0,
            slots,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one descent step of `grads` to `net`'s parameters.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Divergence(
                "NaN/Inf in gradients at optimizer step".into(),
            ));
        }
        self.step += 1;
        let t = self.step;
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            let Some((w, b)) = layer.parameters_mut() else {
                continue;
            };
            let lg = &grads.layers[li];
            let (gw, gb) = match (&lg.weight, &lg.bias) {
                (Some(gw), Some(gb)) => (gw, gb),
                _ => {
                    return Err(Error::Config(format!(
                        "missing gradients for parameterized layer {li}"
                    )))
                }
            };
            let slot = &mut self.slots[li];
            match self.kind {
                OptimKind::Sgd => {
                    sgd_update(w, gw, self.learning_rate);
                    sgd_update(b, gb, self.learning_rate);
                }
                OptimKind::Adam { beta1, beta2 } => {
                    let (mw, mb) = slot.m.as_mut().unwrap();
                    let (vw, vb) = slot.v.as_mut().unwrap();
                    adam_update(w, gw, mw, vw, self.learning_rate, beta1, beta2, self.epsilon, t);
                    adam_update(b, gb, mb, vb, self.learning_rate, beta1, beta2, self.epsilon, t);
                }
                OptimKind::RmsProp { decay } => {
                    let (vw, vb) = slot.v.as_mut().unwrap();
                    rmsprop_update(w, gw, vw, self.learning_rate, decay, self.epsilon);
                    rmsprop_update(b, gb, vb, self.learning_rate, decay, self.epsilon);
                }
            }
        }
        Ok(())
    }
}

fn sgd_update(p: &mut Tensor, g: &Tensor, lr: f64) {
    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
        *pv -= lr * gv;
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut Tensor,
    g: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for ((pv, gv), (mv, vv)) in p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
    {
        *mv = beta1 * *mv + (1.0 - beta1) * gv;
        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
        let mhat = *mv / bc1;
        let vhat = *vv / bc2;
        *pv -= lr * mhat / (vhat.sqrt() + eps);
    }
}

fn rmsprop_update(p: &mut Tensor, g: &Tensor, v: &mut Tensor, lr: f64, decay: f64, eps: f64) {
    for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        *vv = decay * *vv + (1.0 - decay) * gv * gv;
        *pv -= lr * gv / (vv.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn one_param_net(value: f64) -> Network {
        Network::new(vec![Layer::Dense {
            weight: Tensor::from_vec(&[1, 1], vec![value]).unwrap(),
            bias: Tensor::zeros(&[1]),
            inputs: 1,
            outputs: 1,
        }])
    }

    fn grads_for(net: &Network, w: f64, b: f64) -> Gradients {
        let mut g = net.zero_grads();
        g.layers[0].weight.as_mut().unwrap().data_mut()[0] = w;
        g.layers[0].bias.as_mut().unwrap().data_mut()[0] = b;
        g
    }

    fn weight(net: &Network) -> f64 {
        net.layers()[0].parameters().unwrap().0.data()[0]
    }

    #[test]
    fn sgd_definition() {
        let mut net = one_param_net(1.0);
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1, &net);
        let g = grads_for(&net, 2.0, 0.0);
        opt.step(&mut net, &g).unwrap();
        assert!((weight(&net) - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        // bias-corrected first step reduces to lr * g/(|g| + eps')
        for &g in &[3.0, -0.7, 1e-3] {
            let mut net = one_param_net(1.0);
            let mut opt = Optimizer::new(OptimKind::adam(), 0.001, &net);
            let grads = grads_for(&net, g, 0.0);
            opt.step(&mut net, &grads).unwrap();
            let delta = weight(&net) - 1.0;
            assert!((delta + 0.001 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        for kind in [OptimKind::Sgd, OptimKind::adam(), OptimKind::rmsprop()] {
            let mut net = one_param_net(0.37);
            let mut opt = Optimizer::new(kind, 0.01, &net);
            let g = grads_for(&net, 0.0, 0.0);
            for _ in 0..5 {
                opt.step(&mut net, &g).unwrap();
            }
            assert_eq!(weight(&net), 0.37);
        }
    }

    #[test]
    fn zero_learning_rate_never_changes_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for kind in [OptimKind::Sgd, OptimKind::adam(), OptimKind::rmsprop()] {
            let mut net = Network::new(vec![Layer::dense(4, 3, &mut rng)]);
            let before = net.clone();
            let mut opt = Optimizer::new(kind, 0.0, &net);
            let mut g = net.zero_grads();
            g.layers[0]
                .weight
                .as_mut()
                .unwrap()
                .fill_with(|| rng.gen_range(-1.0..1.0));
            opt.step(&mut net, &g).unwrap();
            assert_eq!(net, before);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut net = one_param_net(1.0);
        let mut opt = Optimizer::new(OptimKind::Sgd, 0.1, &net);
        let g = grads_for(&net, f64::NAN, 0.0);
        let err = opt.step(&mut net, &g).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }
}
