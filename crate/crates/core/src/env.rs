//! The RL environment: per-sensor feature extraction and summaries, masked
//! average fusion at the cloud node, the cloud classifier, and the supervised
//! pretraining stage that must complete before any agent training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Scene, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::{ForwardCache, Network};
use crate::optim::{OptimKind, Optimizer};
use crate::tensor::Tensor;

/// Widths for every network in the pipeline. The exact channel counts are
/// config defaults, not load-bearing; spatial sizes are derived from the
/// image size (each pool halves it).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ArchConfig {
    pub sensor_channels: usize,
    pub cn_channels: [usize; 2],
    pub agent_channels: [usize; 2],
    /// One feature net for all sensors (default) or one per sensor.
    pub shared_sensor_weights: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            sensor_channels: 8,
            cn_channels: [16, 16],
            agent_channels: [8, 16],
            shared_sensor_weights: true,
        }
    }
}

/// Per-sensor feature extractor: a single ConvP block (conv then max pool).
#[derive(Debug, Clone)]
pub struct SensorModel {
    nets: Vec<Network>,
    n_sensors: usize,
}

impl SensorModel {
    pub fn new(n_sensors: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let count = if arch.shared_sensor_weights { 1 } else { n_sensors };
        let nets = (0..count)
            .map(|_| {
                Network::new(vec![
                    Layer::conv2d(1, arch.sensor_channels, 3, rng),
                    Layer::max_pool(2, 2),
                ])
            })
            .collect();
        SensorModel { nets, n_sensors }
    }

    pub fn from_nets(nets: Vec<Network>, n_sensors: usize) -> Self {
        SensorModel { nets, n_sensors }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn shared(&self) -> bool {
        self.nets.len() == 1
    }

    pub fn net_for(&self, sensor: usize) -> &Network {
        if self.shared() {
            &self.nets[0]
        } else {
            &self.nets[sensor]
        }
    }

    pub fn nets(&self) -> &[Network] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Network] {
        &mut self.nets
    }
}

/// What one sensor produces: the feature map bound for the cloud and the
/// channel-average summary bound for the aggregator.
#[derive(Debug, Clone)]
pub struct SensorOutput {
    pub feature: Tensor,
    pub summary: Tensor,
}

/// Elementwise mean over the channel axis of a `[C, H, W]` map.
pub fn channel_mean(feature: &Tensor) -> Tensor {
    let (c, h, w) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    let mut out = Tensor::zeros(&[1, h, w]);
    for ch in 0..c {
        let plane = &feature.data()[ch * h * w..(ch + 1) * h * w];
        for (o, v) in out.data_mut().iter_mut().zip(plane) {
            *o += v;
        }
    }
    out.scale(1.0 / c as f64);
    out
}

pub fn sense(scene: &Scene, sensors: &SensorModel) -> Result<Vec<SensorOutput>> {
    if scene.views.len() != sensors.n_sensors {
        return Err(Error::shape(
            "sense",
            &[sensors.n_sensors],
            &[scene.views.len()],
        ));
    }
    scene
        .views
        .iter()
        .enumerate()
        .map(|(i, view)| {
            let feature = sensors.net_for(i).forward(view)?;
            let summary = channel_mean(&feature);
            Ok(SensorOutput { feature, summary })
        })
        .collect()
}

/// Stack the N summaries into the agent's state tensor `[N, H, W]`.
pub fn assemble_state(outputs: &[SensorOutput]) -> Tensor {
    let (h, w) = (outputs[0].summary.shape()[1], outputs[0].summary.shape()[2]);
    let mut data = Vec::with_capacity(outputs.len() * h * w);
    for out in outputs {
        data.extend_from_slice(out.summary.data());
    }
    Tensor::from_vec(&[outputs.len(), h, w], data).expect("summary shapes agree")
}

/// Binary transmit/drop decision per sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        ActionMask { bits }
    }

    pub fn all_on(n: usize) -> Self {
        ActionMask {
            bits: vec![true; n],
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn d_active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Masked mean of the selected feature maps. Output shape equals one feature
/// map regardless of how many sensors are selected, so the cloud net never
/// sees a variable-size input.
pub fn fuse(features: &[Tensor], mask: &ActionMask) -> Result<Tensor> {
    let d = mask.d_active();
    if d == 0 {
        return Err(Error::DegenerateAction);
    }
    let mut out = Tensor::zeros(features[0].shape());
    for (f, &on) in features.iter().zip(mask.bits()) {
        if on {
            out.add_scaled(f, 1.0);
        }
    }
    out.scale(1.0 / d as f64);
    Ok(out)
}

/// The cloud-side classifier head over fused features.
#[derive(Debug, Clone)]
pub struct CloudModel {
    pub net: Network,
}

impl CloudModel {
    pub fn new(n_sensors: usize, image_size: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let _ = n_sensors;
        let side = image_size / 2; // after the sensor ConvP
        let [c1, c2] = arch.cn_channels;
        let pooled = side / 2;
        CloudModel {
            net: Network::new(vec![
                Layer::conv2d(arch.sensor_channels, c1, 3, rng),
                Layer::Relu,
                Layer::conv2d(c1, c2, 3, rng),
                Layer::Relu,
                Layer::max_pool(2, 2),
                Layer::dense(c2 * pooled * pooled, NUM_CLASSES, rng),
                Layer::Softmax,
            ]),
        }
    }
}

/// Predicted label and class probabilities; argmax ties break toward the
/// smallest class index.
pub fn classify(cloud: &CloudModel, fused: &Tensor) -> Result<(usize, Tensor)> {
    let probs = cloud.net.forward(fused)?;
    Ok((probs.argmax(), probs))
}

// ---------------------------------------------------------------------------
// Supervised pretraining (all sensors transmitting)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop when test accuracy has not improved for this many epochs.
    pub patience: usize,
    /// Stop early once test accuracy reaches this level.
    pub stop_accuracy: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 50,
            learning_rate: 1e-3,
            patience: 5,
            stop_accuracy: 0.97,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainHistory {
    pub epochs: Vec<PretrainEpoch>,
}

impl PretrainHistory {
    pub fn final_test_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }
}

struct SampleGrads {
    cloud: crate::network::Gradients,
    sensors: Vec<crate::network::Gradients>,
    loss: f64,
    correct: bool,
}

fn forward_backward_sample(
    sensors: &SensorModel,
    cloud: &CloudModel,
    scene: &Scene,
) -> Result<SampleGrads> {
    let n = sensors.n_sensors();
    let caches: Vec<ForwardCache> = scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| sensors.net_for(i).forward_cached(v))
        .collect::<Result<_>>()?;
    let features: Vec<Tensor> = caches.iter().map(|c| c.output().clone()).collect();
    let fused = fuse(&features, &ActionMask::all_on(n))?;
    let cloud_cache = cloud.net.forward_cached(&fused)?;
    let probs = cloud_cache.output();
    let label = scene.label as usize;
    let p_label = probs.data()[label].max(1e-12);
    let loss = -p_label.ln();
    let correct = probs.argmax() == label;

    // cross-entropy gradient w.r.t. the softmax output
    let mut gout = Tensor::zeros(&[NUM_CLASSES]);
    gout.data_mut()[label] = -1.0 / p_label;
    let cloud_grads = cloud.net.backward(&cloud_cache, &gout)?;

    // all-ones fusion spreads the fused gradient evenly over the sensors
    let mut dfused = cloud_grads.input.clone();
    dfused.scale(1.0 / n as f64);
    let mut sensor_grads: Vec<crate::network::Gradients> =
        sensors.nets().iter().map(Network::zero_grads).collect();
    for (i, cache) in caches.iter().enumerate() {
        let g = sensors.net_for(i).backward(cache, &dfused)?;
        let slot = if sensors.shared() { 0 } else { i };
        sensor_grads[slot].add_scaled(&g, 1.0);
    }
    Ok(SampleGrads {
        cloud: cloud_grads,
        sensors: sensor_grads,
        loss,
        correct,
    })
}

/// Accuracy of the all-sensors pipeline over a scene list.
pub fn evaluate_all_on(sensors: &SensorModel, cloud: &CloudModel, scenes: &[Scene]) -> Result<f64> {
    let mut correct = 0usize;
    for scene in scenes {
        let outputs = sense(scene, sensors)?;
        let features: Vec<Tensor> = outputs.into_iter().map(|o| o.feature).collect();
        let fused = fuse(&features, &ActionMask::all_on(sensors.n_sensors()))?;
        let (label, _) = classify(cloud, &fused)?;
        if label == scene.label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / scenes.len() as f64)
}

/// Jointly train the sensor feature nets and the cloud classifier with
/// cross-entropy on all-sensors fusion (Adam, mini-batches).
pub fn pretrain(
    sensors: &mut SensorModel,
    cloud: &mut CloudModel,
    split: &DatasetSplit,
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainHistory> {
    let mut cloud_opt = Optimizer::new(OptimKind::adam(), config.learning_rate, &cloud.net);
    let mut sensor_opts: Vec<Optimizer> = sensors
        .nets()
        .iter()
        .map(|n| Optimizer::new(OptimKind::adam(), config.learning_rate, n))
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x70726574);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut history = PretrainHistory::default();
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut cloud_acc = cloud.net.zero_grads();
            let mut sensor_acc: Vec<_> = sensors.nets().iter().map(Network::zero_grads).collect();
            for &idx in batch {
                let sg = forward_backward_sample(sensors, cloud, &split.train[idx])?;
                if !sg.loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "NaN loss during pretraining (seed {seed}, epoch {epoch}, sample {idx})"
                    )));
                }
                loss_sum += sg.loss;
                if sg.correct {
                    correct += 1;
                }
                cloud_acc.add_scaled(&sg.cloud, 1.0);
                for (acc, g) in sensor_acc.iter_mut().zip(&sg.sensors) {
                    acc.add_scaled(g, 1.0);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            cloud_acc.scale(scale);
            cloud_opt.step(&mut cloud.net, &cloud_acc)?;
            for ((net, opt), mut g) in sensors
                .nets_mut()
                .iter_mut()
                .zip(&mut sensor_opts)
                .zip(sensor_acc)
            {
                g.scale(scale);
                opt.step(net, &g)?;
            }
        }
        let test_accuracy = evaluate_all_on(sensors, cloud, &split.test)?;
        history.epochs.push(PretrainEpoch {
            epoch,
            train_loss: loss_sum / split.train.len() as f64,
            train_accuracy: correct as f64 / split.train.len() as f64,
            test_accuracy,
        });
        if test_accuracy > best_acc + 1e-12 {
            best_acc = test_accuracy;
            stale = 0;
        } else {
            stale += 1;
        }
        if test_accuracy >= config.stop_accuracy || stale >= config.patience {
            break;
        }
    }
    Ok(history)
}
