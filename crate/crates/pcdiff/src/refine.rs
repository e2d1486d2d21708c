//! Offset-based refinement and upsampling.
//!
//! A per-point MLP predicts kappa 3-vector offsets, each squashed by tanh and
//! scaled to a fixed radius. Training minimizes the symmetric squared chamfer
//! loss between the upsampled prediction and a clean target, with
//! nearest-neighbor assignments recomputed each forward pass and held fixed
//! through the backward pass.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geometry::{self, Point3, PointCloud};
use crate::model::tensor::{visit_linear, visit_linear_mut, Activation, Linear, Param, ParamSet};
use crate::model::train::Adam;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Offsets predicted per input point.
    pub kappa: usize,
    /// Offset component bound in meters; tanh output is scaled by this.
    pub max_offset: f64,
    /// Training augmentation noise, meters.
    pub jitter_sigma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            kappa: 6,
            max_offset: 0.10,
            jitter_sigma: 0.05,
            hidden: vec![64, 64],
            activation: Activation::Silu,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 {
            return Err(Error::InvalidParameter("kappa must be >= 1".into()));
        }
        if !(self.max_offset > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_offset must be positive, got {}",
                self.max_offset
            )));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jitter_sigma must be non-negative, got {}",
                self.jitter_sigma
            )));
        }
        // A zero learning rate is a legal degenerate config.
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(
                "learning_rate and weight_decay must be non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-point offset network: 3 -> hidden -> 3*kappa, final tanh scaled by
/// max_offset so every offset component stays inside (-max_offset, max_offset).
#[derive(Debug)]
pub struct RefineNet {
    kappa: usize,
    max_offset: f64,
    activation: Activation,
    layers: Vec<Linear>,
}

/// Per-point forward cache: each layer's input and pre-activation, enough to
/// replay the chain rule without recomputing the forward pass.
struct PointCache {
    layer_inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
}

impl RefineNet {
    pub fn new(config: &RefineConfig, rng: &mut ChaCha12Rng) -> Result<RefineNet> {
        config.validate()?;
        let mut dims = vec![3];
        dims.extend_from_slice(&config.hidden);
        dims.push(3 * config.kappa);
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Ok(RefineNet {
            kappa: config.kappa,
            max_offset: config.max_offset,
            activation: config.activation,
            layers,
        })
    }

    /// All-zero weights, used by deserialization before filling parameters.
    pub(crate) fn zeroed(
        kappa: usize,
        max_offset: f64,
        hidden: &[usize],
        activation: Activation,
    ) -> RefineNet {
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(3 * kappa);
        let mut rng = rng::seeded(0);
        let mut layers: Vec<Linear> = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], &mut rng))
            .collect();
        for l in &mut layers {
            l.weight.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
        RefineNet {
            kappa,
            max_offset,
            activation,
            layers,
        }
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn max_offset(&self) -> f64 {
        self.max_offset
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Hidden layer widths, excluding the fixed 3 and 3*kappa endpoints.
    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect()
    }

    fn forward_cached(&self, p: Point3) -> (Vec<Point3>, PointCache) {
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers);
        let mut x = vec![p.x, p.y, p.z];
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            layer_inputs.push(x);
            if l + 1 < n_layers {
                x = z.iter().map(|&v| self.activation.apply(v)).collect();
            } else {
                x = Vec::new();
            }
            pre_acts.push(z);
        }
        let z_last = &pre_acts[n_layers - 1];
        let offsets = (0..self.kappa)
            .map(|j| {
                Point3::new(
                    self.max_offset * z_last[3 * j].tanh(),
                    self.max_offset * z_last[3 * j + 1].tanh(),
                    self.max_offset * z_last[3 * j + 2].tanh(),
                )
            })
            .collect();
        (
            offsets,
            PointCache {
                layer_inputs,
                pre_acts,
            },
        )
    }

    /// The kappa offsets for one input point.
    pub fn offsets(&self, p: Point3) -> Vec<Point3> {
        self.forward_cached(p).0
    }

    /// Accumulate parameter gradients for one point given dL/d(offset).
    fn backward(&mut self, cache: &PointCache, d_offsets: &[Point3]) {
        let n_layers = self.layers.len();
        let z_last = &cache.pre_acts[n_layers - 1];
        let mut dz: Vec<f64> = vec![0.0; 3 * self.kappa];
        for (j, d) in d_offsets.iter().enumerate() {
            for (c, dv) in [d.x, d.y, d.z].into_iter().enumerate() {
                let th = z_last[3 * j + c].tanh();
                dz[3 * j + c] = dv * self.max_offset * (1.0 - th * th);
            }
        }
        let mut dx = self.layers[n_layers - 1].backward(&cache.layer_inputs[n_layers - 1], &dz);
        for l in (0..n_layers - 1).rev() {
            let dz: Vec<f64> = dx
                .iter()
                .zip(&cache.pre_acts[l])
                .map(|(&d, &z)| d * self.activation.derivative(z))
                .collect();
            dx = self.layers[l].backward(&cache.layer_inputs[l], &dz);
        }
    }
}

impl ParamSet for RefineNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (l, layer) in self.layers.iter().enumerate() {
            visit_linear(layer, &format!("layer{l}"), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            visit_linear_mut(layer, &format!("layer{l}"), f);
        }
    }
}

/// One-directional mean squared nearest-neighbor distance A -> B.
pub fn chamfer_sq(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer_sq operand"));
    }
    let total: f64 = geometry::nearest_neighbor(a, b)?
        .iter()
        .map(|&(_, d2)| d2)
        .sum();
    Ok(total / a.len() as f64)
}

/// Symmetric squared-chamfer training objective: both directions summed, no
/// halving.
pub fn refine_loss(gt: &PointCloud, pred: &PointCloud) -> Result<f64> {
    Ok(chamfer_sq(gt, pred)? + chamfer_sq(pred, gt)?)
}

/// Upsample by the network: output point i*kappa + j is p_i + offset_j(p_i).
pub fn refine_upsample(cloud: &PointCloud, net: &RefineNet) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("refine input"));
    }
    let mut points = Vec::with_capacity(cloud.len() * net.kappa);
    for &p in &cloud.points {
        for o in net.offsets(p) {
            points.push(p + o);
        }
    }
    Ok(PointCloud::new(points))
}

/// Add i.i.d. N(0, sigma^2) noise per coordinate. sigma = 0 is the identity.
pub fn jitter(cloud: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jitter sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let mut rng = rng::seeded(seed);
    let noise = rng::normal_vectors(&mut rng, cloud.len());
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(noise)
            .map(|(&p, n)| p + n * sigma)
            .collect(),
        labels: cloud.labels.clone(),
    })
}

/// Forward one (input, gt) pair, accumulate `scale`-weighted parameter
/// gradients under fixed nearest-neighbor assignments, return the raw loss.
/// Building block for custom training loops and gradient checks.
pub fn accumulate_refine_grad(
    net: &mut RefineNet,
    input: &PointCloud,
    gt: &PointCloud,
    scale: f64,
) -> Result<f64> {
    if input.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput("refinement pair"));
    }
    let mut pred_points = Vec::with_capacity(input.len() * net.kappa);
    let mut caches = Vec::with_capacity(input.len());
    for &p in &input.points {
        let (offsets, cache) = net.forward_cached(p);
        for o in offsets {
            pred_points.push(p + o);
        }
        caches.push(cache);
    }
    let pred = PointCloud::new(pred_points);

    let gt_to_pred = geometry::nearest_neighbor(gt, &pred)?;
    let pred_to_gt = geometry::nearest_neighbor(&pred, gt)?;
    let n_gt = gt.len() as f64;
    let n_pred = pred.len() as f64;
    let loss = gt_to_pred.iter().map(|&(_, d2)| d2).sum::<f64>() / n_gt
        + pred_to_gt.iter().map(|&(_, d2)| d2).sum::<f64>() / n_pred;

    // dL/dp_k at fixed assignments: the gt->pred direction charges each pred
    // point for the gt points that chose it, the pred->gt direction charges
    // every pred point once.
    let mut d_pred = vec![Point3::zero(); pred.len()];
    for (g, &(k, _)) in gt.points.iter().zip(&gt_to_pred) {
        d_pred[k] = d_pred[k] + (pred.points[k] - *g) * (2.0 / n_gt);
    }
    for (k, (&(gi, _), p)) in pred_to_gt.iter().zip(&pred.points).enumerate() {
        d_pred[k] = d_pred[k] + (*p - gt.points[gi]) * (2.0 / n_pred);
    }

    let kappa = net.kappa;
    for (i, cache) in caches.iter().enumerate() {
        let d_offsets: Vec<Point3> = (0..kappa).map(|j| d_pred[i * kappa + j] * scale).collect();
        net.backward(cache, &d_offsets);
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineHistory {
    /// Mean refine_loss per epoch, in epoch order.
    pub epoch_mean: Vec<f64>,
}

/// Train on (input, gt) pairs with Adam and decoupled weight decay. Inputs
/// are typically jittered copies of the targets; building them is the
/// caller's job so the pairing stays explicit.
pub fn train_refine(
    net: &mut RefineNet,
    dataset: &[(PointCloud, PointCloud)],
    config: &RefineConfig,
) -> Result<RefineHistory> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("refinement dataset"));
    }
    let mut optimizer = Adam::new(config.weight_decay);
    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_mean = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            net.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (input, gt) = &dataset[i];
                epoch_loss += accumulate_refine_grad(net, input, gt, scale)?;
            }
            optimizer.step(net, config.learning_rate);
        }
        epoch_mean.push(epoch_loss / dataset.len() as f64);
    }
    Ok(RefineHistory { epoch_mean })
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha12Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}
