//! Sequential network: ordered layers, cached activations, backprop.

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerGrads};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations from one forward pass: `acts[i]` is the input to layer `i`,
/// `acts[len]` is the network output. Owned by the caller so independent
/// forward passes (e.g. one per sensor through a shared net) can coexist.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input_to(&self, layer: usize) -> &Tensor {
        &self.acts[layer]
    }
}

/// Gradients for every parameter tensor plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Tensor,
}

impl Gradients {
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(b, scale);
        }
        // `zero_grads` leaves an empty input placeholder; adopt the first
        // real input gradient instead of adding shape-mismatched tensors.
        if other.input.len() == 0 {
            // nothing to accumulate
        } else if self.input.len() == 0 {
            let mut inp = other.input.clone();
            inp.scale(scale);
            self.input = inp;
        } else {
            self.input.add_scaled(&other.input, scale);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            if let Some(w) = g.weight.as_mut() {
                w.scale(s);
            }
            if let Some(b) = g.bias.as_mut() {
                b.scale(s);
            }
        }
        self.input.scale(s);
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|g| {
            g.weight.as_ref().map_or(true, Tensor::all_finite)
                && g.bias.as_ref().map_or(true, Tensor::all_finite)
        }) && self.input.all_finite()
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.parameters())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x).map_err(|e| annotate(e, i))?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(acts.last().unwrap()).map_err(|e| annotate(e, i))?;
            acts.push(next);
        }
        Ok(ForwardCache { acts })
    }

    /// Re-run layers `from..` on the cached input to layer `from`.
    /// Used by the finite-difference checker to avoid recomputing the prefix
    /// when only layer `from`'s parameters changed.
    pub fn forward_from(&self, cache: &ForwardCache, from: usize) -> Result<Tensor> {
        let mut x = cache.acts[from].clone();
        for (i, layer) in self.layers.iter().enumerate().skip(from) {
            x = layer.forward(&x).map_err(|e| annotate(e, i))?;
        }
        Ok(x)
    }

    /// Backpropagate `output_grad` through the cached pass. Parameters are not
    /// mutated; apply the result through an optimizer.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Gradients> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Config(
                "forward cache does not match network depth".into(),
            ));
        }
        let mut grads = vec![LayerGrads::empty(); self.layers.len()];
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (lg, gin) = layer
                .backward(&cache.acts[i], &cache.acts[i + 1], &g)
                .map_err(|e| annotate(e, i))?;
            grads[i] = lg;
            g = gin;
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(Layer::zero_grads).collect(),
            input: Tensor::zeros(&[0]),
        }
    }
}

fn annotate(e: Error, layer_idx: usize) -> Error {
    match e {
        Error::ShapeMismatch {
            context,
            expected,
            got,
        } => Error::ShapeMismatch {
            context: format!("layer {layer_idx} ({context})"),
            expected,
            got,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn small_net(seed: u64) -> Network {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Network::new(vec![
            Layer::conv2d(1, 2, 3, &mut rng),
            Layer::max_pool(2, 2),
            Layer::Relu,
            Layer::dense(2 * 4 * 4, 3, &mut rng),
            Layer::Softmax,
        ])
    }

    #[test]
    fn forward_is_deterministic() {
        let net = small_net(11);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut x = Tensor::zeros(&[1, 8, 8]);
        x.fill_with(|| rng.gen_range(0.0..1.0));
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn activations_stay_finite() {
        let net = small_net(12);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut x = Tensor::zeros(&[1, 8, 8]);
        x.fill_with(|| rng.gen_range(-10.0..10.0));
        let cache = net.forward_cached(&x).unwrap();
        for act in &cache.acts {
            assert!(act.all_finite());
        }
    }

    #[test]
    fn forward_from_matches_full_forward() {
        let net = small_net(13);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut x = Tensor::zeros(&[1, 8, 8]);
        x.fill_with(|| rng.gen_range(0.0..1.0));
        let cache = net.forward_cached(&x).unwrap();
        for from in 0..=4 {
            let y = net.forward_from(&cache, from).unwrap();
            assert_eq!(&y, cache.output());
        }
    }
}
