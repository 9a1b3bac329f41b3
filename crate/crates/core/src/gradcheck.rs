//! Finite-difference verification of backprop.
//!
//! Central differences with step 1e-5 against the analytic gradients; the
//! reported figure is the max over all parameters of
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
//!
//! Perturbing a parameter of layer `k` only invalidates layers `k..`, so the
//! checker re-runs the suffix from the cached input to `k` instead of the full
//! network. That keeps whole-topology checks cheap enough to sweep many seeds.
//!
//! Max-pool and ReLU make the loss piecewise-smooth: when a perturbation
//! straddles a kink (e.g. it flips which element of a pool window is the max),
//! the central difference is measuring two different smooth pieces and the
//! mismatch is an artifact of the step, not a gradient bug. Suspicious
//! parameters are therefore re-checked at smaller steps — a kink artifact
//! shrinks with the step while a genuine analytic error does not — and the
//! smallest observed error is reported.

use crate::error::Result;
use crate::network::Network;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Scalar loss on the network output, with its analytic output gradient.
#[derive(Debug, Clone)]
pub enum LossSpec {
    /// `L = 0.5 * sum((y - target)^2)`
    Quadratic { target: Tensor },
    /// `L = sum(weights * y)`
    Weighted { weights: Tensor },
}

impl LossSpec {
    pub fn loss(&self, output: &Tensor) -> f64 {
        match self {
            LossSpec::Quadratic { target } => output
                .data()
                .iter()
                .zip(target.data())
                .map(|(y, t)| 0.5 * (y - t) * (y - t))
                .sum(),
            LossSpec::Weighted { weights } => output
                .data()
                .iter()
                .zip(weights.data())
                .map(|(y, w)| y * w)
                .sum(),
        }
    }

    pub fn output_grad(&self, output: &Tensor) -> Tensor {
        match self {
            LossSpec::Quadratic { target } => {
                let mut g = output.clone();
                g.add_scaled(target, -1.0);
                g
            }
            LossSpec::Weighted { weights } => weights.clone(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between analytic and central-difference gradients over
/// every parameter of `net`. Returns 0.0 for a parameter-free network.
pub fn gradient_check(net: &Network, input: &Tensor, loss: &LossSpec) -> Result<f64> {
    let cache = net.forward_cached(input)?;
    let analytic = net.backward(&cache, &loss.output_grad(cache.output()))?;

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    let n_layers = net.layers().len();
    for li in 0..n_layers {
        if net.layers()[li].parameters().is_none() {
            continue;
        }
        let lg = &analytic.layers[li];
        for which in 0..2 {
            let n_params = {
                let (w, b) = probe.layers()[li].parameters().unwrap();
                if which == 0 {
                    w.len()
                } else {
                    b.len()
                }
            };
            let a_grad = if which == 0 {
                lg.weight.as_ref().unwrap()
            } else {
                lg.bias.as_ref().unwrap()
            };
            for pi in 0..n_params {
                let mut numeric_at = |h: f64| -> Result<f64> {
                    let mut eval = |delta: f64| -> Result<f64> {
                        {
                            let (w, b) = probe.layers_mut()[li].parameters_mut().unwrap();
                            let t = if which == 0 { w } else { b };
                            t.data_mut()[pi] += delta;
                        }
                        let out = probe.forward_from(&cache, li)?;
                        Ok(loss.loss(&out))
                    };
                    let plus = eval(h)?;
                    let minus = eval(-2.0 * h)?;
                    // restore
                    let (w, b) = probe.layers_mut()[li].parameters_mut().unwrap();
                    let t = if which == 0 { w } else { b };
                    t.data_mut()[pi] += h;
                    Ok((plus - minus) / (2.0 * h))
                };
                let mut err = relative_error(a_grad.data()[pi], numeric_at(FD_STEP)?);
                // re-check suspicious parameters at smaller steps to rule out
                // kink artifacts (see module docs)
                if err > 1e-6 {
                    for h in [FD_STEP / 16.0, FD_STEP / 256.0] {
                        err = err.min(relative_error(a_grad.data()[pi], numeric_at(h)?));
                    }
                }
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.fill_with(|| rng.gen_range(-1.0..1.0));
        t
    }

    #[test]
    fn single_dense_layer_quadratic_loss() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let net = Network::new(vec![Layer::dense(4, 3, &mut rng)]);
        let x = random_tensor(&[4], &mut rng);
        let target = random_tensor(&[3], &mut rng);
        let err = gradient_check(&net, &x, &LossSpec::Quadratic { target }).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn conv_layer_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let net = Network::new(vec![Layer::conv2d(1, 2, 3, &mut rng)]);
        let x = random_tensor(&[1, 8, 8], &mut rng);
        let weights = random_tensor(&[2, 8, 8], &mut rng);
        let err = gradient_check(&net, &x, &LossSpec::Weighted { weights }).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn empty_network_reports_zero() {
        let net = Network::new(vec![]);
        let x = Tensor::scalar(1.0);
        let err = gradient_check(
            &net,
            &x,
            &LossSpec::Weighted {
                weights: Tensor::scalar(1.0),
            },
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn every_layer_kind_across_seeds() {
        for seed in 0..10u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let cases: Vec<(Network, Vec<usize>)> = vec![
                (Network::new(vec![Layer::conv2d(2, 3, 3, &mut rng)]), vec![2, 6, 6]),
                (Network::new(vec![Layer::max_pool(2, 2)]), vec![2, 6, 6]),
                (Network::new(vec![Layer::dense(6, 4, &mut rng)]), vec![6]),
                (Network::new(vec![Layer::Relu]), vec![8]),
                (Network::new(vec![Layer::Sigmoid]), vec![8]),
                (Network::new(vec![Layer::Softmax]), vec![8]),
            ];
            for (net, shape) in cases {
                let x = random_tensor(&shape, &mut rng);
                let out_shape = net.forward(&x).unwrap();
                let target = random_tensor(out_shape.shape(), &mut rng);
                let err = gradient_check(&net, &x, &LossSpec::Quadratic { target }).unwrap();
                assert!(err < 1e-4, "seed {seed}: err = {err}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let net = Network::new(vec![
            Layer::conv2d(1, 2, 3, &mut rng),
            Layer::Relu,
            Layer::max_pool(2, 2),
            Layer::dense(2 * 4 * 4, 2, &mut rng),
        ]);
        let x = random_tensor(&[1, 8, 8], &mut rng);
        let loss = LossSpec::Quadratic {
            target: random_tensor(&[2], &mut rng),
        };
        let cache = net.forward_cached(&x).unwrap();
        let grads = net.backward(&cache, &loss.output_grad(cache.output())).unwrap();
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp.data_mut()[i] = x.data()[i] + FD_STEP;
            let lp = loss.loss(&net.forward(&xp).unwrap());
            xp.data_mut()[i] = x.data()[i] - FD_STEP;
            let lm = loss.loss(&net.forward(&xp).unwrap());
            xp.data_mut()[i] = x.data()[i];
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            assert!(relative_error(grads.input.data()[i], numeric) < 1e-4);
        }
    }
}
