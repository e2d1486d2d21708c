//! The noise-prediction network.
//!
//! A per-point MLP backbone maps each noisy point's coordinates to a
//! predicted noise vector. Before every backbone layer a conditioning block
//! gates the features: the nearest encoded condition point (or a learned
//! null-token embedding when sampling unconditionally) and a sinusoidal
//! temporal embedding are mapped into per-layer gate vectors that multiply
//! the features elementwise. All gradients are hand-derived; `train` checks
//! them against finite differences.

pub mod tensor;
pub mod train;

use rand::Rng;

pub use tensor::{Activation, Linear, Param, ParamSet, Tensor};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3, PointCloud};
use crate::rng;

/// Behavioral contract of a denoiser: one predicted noise vector per noisy
/// point, deterministic given (inputs, weights). `None` is the null token.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<Vec<Point3>>;
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Temporal embedding width; must be even.
    pub d_t: usize,
    /// Condition feature width (also the null-token embedding width).
    pub d_c: usize,
    /// Hidden widths of the backbone MLP (input and output are always 3).
    pub layer_dims: Vec<usize>,
    /// Condition cloud is farthest-point downsampled to this many points.
    pub n_condition_points: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_t: 96,
            d_c: 32,
            layer_dims: vec![64, 64, 64, 64],
            n_condition_points: 128,
            activation: Activation::Silu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_t == 0 || self.d_t % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "d_t must be even and positive, got {}",
                self.d_t
            )));
        }
        if self.d_c == 0 {
            return Err(Error::InvalidParameter("d_c must be >= 1".into()));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("layer dims must be >= 1".into()));
        }
        if self.n_condition_points == 0 {
            return Err(Error::InvalidParameter(
                "n_condition_points must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Feature widths entering each backbone layer, ending with the 3-vector
    /// noise output: `[3, hidden..., 3]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layer_dims.len() + 2);
        d.push(3);
        d.extend_from_slice(&self.layer_dims);
        d.push(3);
        d
    }
}

/// Sinusoidal step encoding: component 2i = sin(t / 10000^(2i/d_t)),
/// component 2i+1 = cos of the same argument.
pub fn temporal_embedding(t: usize, d_t: usize) -> Result<Vec<f64>> {
    if d_t == 0 || d_t % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "temporal embedding size must be even and positive, got {d_t}"
        )));
    }
    let mut v = Vec::with_capacity(d_t);
    let t = t as f64;
    for i in 0..d_t / 2 {
        let arg = t / 10000f64.powf(2.0 * i as f64 / d_t as f64);
        v.push(arg.sin());
        v.push(arg.cos());
    }
    Ok(v)
}

/// Downsampled condition cloud: retained positions for nearest-neighbor
/// lookup and one feature vector per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub positions: Vec<Point3>,
    pub features: Vec<Vec<f64>>,
}

/// Per-layer conditioning: gate = proj(concat(cond(c), temp(tau))), applied
/// multiplicatively to the layer's input features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBlock {
    pub cond: Linear,
    pub temp: Linear,
    pub proj: Linear,
}

impl ConditioningBlock {
    fn new(d_c: usize, d_t: usize, d_l: usize, rng: &mut impl Rng) -> ConditioningBlock {
        let cond = Linear::new(d_c, d_l, rng);
        let temp = Linear::new(d_t, d_l, rng);
        let mut proj = Linear::new(2 * d_l, d_l, rng);
        // Gate starts near one so each block begins as an identity and the
        // backbone trains before the conditioning sharpens.
        proj.bias.value.data.fill(1.0);
        ConditioningBlock { cond, temp, proj }
    }

    fn cond_feature(&self, c: &[f64], act: Activation) -> (Vec<f64>, Vec<f64>) {
        let z = self.cond.forward(c);
        let a = z.iter().map(|&v| act.apply(v)).collect();
        (z, a)
    }

    fn temp_feature(&self, tau: &[f64], act: Activation) -> (Vec<f64>, Vec<f64>) {
        let z = self.temp.forward(tau);
        let a = z.iter().map(|&v| act.apply(v)).collect();
        (z, a)
    }

    fn gate(&self, cond_a: &[f64], tau_a: &[f64]) -> Vec<f64> {
        let mut joint = Vec::with_capacity(cond_a.len() + tau_a.len());
        joint.extend_from_slice(cond_a);
        joint.extend_from_slice(tau_a);
        self.proj.forward(&joint)
    }

    /// Standalone application of the block: for every feature vector, look up
    /// the nearest condition point by position, build the gate from its
    /// feature and the temporal embedding, and multiply.
    pub fn apply(
        &self,
        features: &[Vec<f64>],
        positions: &[Point3],
        condition: &Condition,
        tau: &[f64],
        act: Activation,
    ) -> Result<Vec<Vec<f64>>> {
        if features.len() != positions.len() {
            return Err(Error::SizeMismatch {
                what: "conditioning features vs positions",
                expected: positions.len(),
                got: features.len(),
            });
        }
        if condition.positions.is_empty() {
            return Err(Error::EmptyInput("condition set"));
        }
        let d_l = self.proj.out_dim();
        let (_, tau_a) = self.temp_feature(tau, act);
        features
            .iter()
            .zip(positions)
            .map(|(f, &p)| {
                if f.len() != d_l {
                    return Err(Error::SizeMismatch {
                        what: "conditioning feature width",
                        expected: d_l,
                        got: f.len(),
                    });
                }
                let (idx, _) = geometry::nearest_brute(p, &condition.positions);
                let (_, cond_a) = self.cond_feature(&condition.features[idx], act);
                let gate = self.gate(&cond_a, &tau_a);
                Ok(gate.iter().zip(f).map(|(w, x)| w * x).collect())
            })
            .collect()
    }
}

/// The denoiser: condition encoder, per-layer conditioning blocks, and the
/// per-point backbone MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNoisePredictor {
    pub config: ModelConfig,
    pub enc1: Linear,
    pub enc2: Linear,
    pub null_embedding: Param,
    pub blocks: Vec<ConditioningBlock>,
    pub backbone: Vec<Linear>,
}

// Cached encoder intermediates for one condition cloud.
struct EncCache {
    positions: Vec<Point3>,
    z1: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
}

/// All intermediates of one forward evaluation, kept for the backward pass.
pub struct ForwardPass {
    null_mode: bool,
    tau: Vec<f64>,
    enc: Option<EncCache>,
    /// Distinct condition inputs (encoded features, or the null embedding).
    cond_inputs: Vec<Vec<f64>>,
    /// Condition slot index per noisy point.
    assign: Vec<usize>,
    tau_z: Vec<Vec<f64>>,
    tau_a: Vec<Vec<f64>>,
    cond_z: Vec<Vec<Vec<f64>>>,
    cond_a: Vec<Vec<Vec<f64>>>,
    wprime: Vec<Vec<Vec<f64>>>,
    feat_in: Vec<Vec<Vec<f64>>>,
    gated: Vec<Vec<Vec<f64>>>,
    lin_z: Vec<Vec<Vec<f64>>>,
    pub out: Vec<Point3>,
}

impl ToyNoisePredictor {
    pub fn new(config: ModelConfig, seed: u64) -> Result<ToyNoisePredictor> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let enc1 = Linear::new(3, config.d_c, &mut rng);
        let enc2 = Linear::new(config.d_c, config.d_c, &mut rng);
        let mut null_embedding = Param::zeros(&[config.d_c]);
        for v in &mut null_embedding.value.data {
            *v = 0.1 * rng::standard_normal(&mut rng);
        }
        let dims = config.dims();
        let mut blocks = Vec::new();
        let mut backbone = Vec::new();
        for l in 0..dims.len() - 1 {
            blocks.push(ConditioningBlock::new(
                config.d_c, config.d_t, dims[l], &mut rng,
            ));
            backbone.push(Linear::new(dims[l], dims[l + 1], &mut rng));
        }
        Ok(ToyNoisePredictor {
            config,
            enc1,
            enc2,
            null_embedding,
            blocks,
            backbone,
        })
    }

    /// Farthest-point downsample the scan, then encode each kept point into a
    /// d_c feature. The downsample uses a fixed start rule so encoding is a
    /// pure function of (scan, weights).
    pub fn encode_condition(&self, scan: &PointCloud) -> Result<Condition> {
        let cache = self.encode_with_cache(scan)?;
        let features = cache.a1.iter().map(|a1| self.enc2.forward(a1)).collect();
        Ok(Condition {
            positions: cache.positions,
            features,
        })
    }

    fn encode_with_cache(&self, scan: &PointCloud) -> Result<EncCache> {
        let n_cond = self.config.n_condition_points;
        if scan.len() < n_cond {
            return Err(Error::SizeMismatch {
                what: "condition scan (must hold at least n_condition_points)",
                expected: n_cond,
                got: scan.len(),
            });
        }
        let act = self.config.activation;
        let selected = geometry::fps(scan, n_cond, 0)?;
        let mut z1 = Vec::with_capacity(n_cond);
        let mut a1 = Vec::with_capacity(n_cond);
        for p in &selected.points {
            let z = self.enc1.forward(&[p.x, p.y, p.z]);
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            z1.push(z);
            a1.push(a);
        }
        Ok(EncCache {
            positions: selected.points,
            z1,
            a1,
        })
    }

    /// Full forward evaluation with every intermediate cached for backward.
    pub fn forward(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<ForwardPass> {
        let act = self.config.activation;
        let tau = temporal_embedding(t, self.config.d_t)?;
        let n = noisy.len();

        let (enc, cond_inputs, assign) = match condition {
            Some(scan) => {
                let cache = self.encode_with_cache(scan)?;
                let features: Vec<Vec<f64>> =
                    cache.a1.iter().map(|a| self.enc2.forward(a)).collect();
                let positions = PointCloud::new(cache.positions.clone());
                let assign = geometry::nearest_neighbor(noisy, &positions)?
                    .into_iter()
                    .map(|(idx, _)| idx)
                    .collect();
                (Some(cache), features, assign)
            }
            None => (
                None,
                vec![self.null_embedding.value.data.clone()],
                vec![0usize; n],
            ),
        };

        let n_layers = self.backbone.len();
        let mut tau_z = Vec::with_capacity(n_layers);
        let mut tau_a = Vec::with_capacity(n_layers);
        let mut cond_z = Vec::with_capacity(n_layers);
        let mut cond_a = Vec::with_capacity(n_layers);
        let mut wprime = Vec::with_capacity(n_layers);
        for block in &self.blocks {
            let (tz, ta) = block.temp_feature(&tau, act);
            let mut layer_cz = Vec::with_capacity(cond_inputs.len());
            let mut layer_ca = Vec::with_capacity(cond_inputs.len());
            let mut layer_w = Vec::with_capacity(cond_inputs.len());
            for c in &cond_inputs {
                let (cz, ca) = block.cond_feature(c, act);
                let w = block.gate(&ca, &ta);
                layer_cz.push(cz);
                layer_ca.push(ca);
                layer_w.push(w);
            }
            tau_z.push(tz);
            tau_a.push(ta);
            cond_z.push(layer_cz);
            cond_a.push(layer_ca);
            wprime.push(layer_w);
        }

        let mut feat_in = Vec::with_capacity(n);
        let mut gated = Vec::with_capacity(n);
        let mut lin_z = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for (i, p) in noisy.points.iter().enumerate() {
            let slot = assign[i];
            let mut f = vec![p.x, p.y, p.z];
            let mut fi = Vec::with_capacity(n_layers);
            let mut gi = Vec::with_capacity(n_layers);
            let mut zi = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let g: Vec<f64> = wprime[l][slot].iter().zip(&f).map(|(w, x)| w * x).collect();
                let z = self.backbone[l].forward(&g);
                fi.push(std::mem::take(&mut f));
                f = if l < n_layers - 1 {
                    z.iter().map(|&v| act.apply(v)).collect()
                } else {
                    z.clone()
                };
                gi.push(g);
                zi.push(z);
            }
            out.push(Point3::new(f[0], f[1], f[2]));
            feat_in.push(fi);
            gated.push(gi);
            lin_z.push(zi);
        }

        Ok(ForwardPass {
            null_mode: condition.is_none(),
            tau,
            enc,
            cond_inputs,
            assign,
            tau_z,
            tau_a,
            cond_z,
            cond_a,
            wprime,
            feat_in,
            gated,
            lin_z,
            out,
        })
    }

    /// Accumulate parameter gradients for upstream gradient `d_out` (one
    /// 3-vector per predicted point). Nearest-neighbor and downsample
    /// selections are treated as constants.
    pub fn backward(&mut self, pass: &ForwardPass, d_out: &[Point3]) -> Result<()> {
        let n = pass.out.len();
        if d_out.len() != n {
            return Err(Error::SizeMismatch {
                what: "output gradients",
                expected: n,
                got: d_out.len(),
            });
        }
        let act = self.config.activation;
        let n_layers = self.backbone.len();
        let n_slots = pass.cond_inputs.len();

        // Gate gradients accumulate per (layer, condition slot) because each
        // gate vector is shared by every point assigned to that slot.
        let mut d_wprime: Vec<Vec<Vec<f64>>> = (0..n_layers)
            .map(|l| vec![vec![0.0; self.blocks[l].proj.out_dim()]; n_slots])
            .collect();

        for i in 0..n {
            let slot = pass.assign[i];
            let mut df = vec![d_out[i].x, d_out[i].y, d_out[i].z];
            for l in (0..n_layers).rev() {
                if l < n_layers - 1 {
                    for (k, g) in df.iter_mut().enumerate() {
                        *g *= act.derivative(pass.lin_z[i][l][k]);
                    }
                }
                let d_gated = self.backbone[l].backward(&pass.gated[i][l], &df);
                let w = &pass.wprime[l][slot];
                let f = &pass.feat_in[i][l];
                let acc = &mut d_wprime[l][slot];
                df = d_gated
                    .iter()
                    .enumerate()
                    .map(|(k, &dg)| {
                        acc[k] += dg * f[k];
                        dg * w[k]
                    })
                    .collect();
            }
        }

        // Condition-input gradients accumulate per slot across layers.
        let mut d_cond_in: Vec<Vec<f64>> = pass
            .cond_inputs
            .iter()
            .map(|c| vec![0.0; c.len()])
            .collect();
        for l in 0..n_layers {
            let d_l = self.blocks[l].proj.out_dim();
            let mut d_tau_a = vec![0.0; d_l];
            for s in 0..n_slots {
                let mut joint = Vec::with_capacity(2 * d_l);
                joint.extend_from_slice(&pass.cond_a[l][s]);
                joint.extend_from_slice(&pass.tau_a[l]);
                let du = self.blocks[l].proj.backward(&joint, &d_wprime[l][s]);
                for k in 0..d_l {
                    d_tau_a[k] += du[d_l + k];
                }
                let dc_z: Vec<f64> = (0..d_l)
                    .map(|k| du[k] * act.derivative(pass.cond_z[l][s][k]))
                    .collect();
                let d_in = self.blocks[l].cond.backward(&pass.cond_inputs[s], &dc_z);
                for (acc, d) in d_cond_in[s].iter_mut().zip(d_in) {
                    *acc += d;
                }
            }
            let d_tau_z: Vec<f64> = (0..d_l)
                .map(|k| d_tau_a[k] * act.derivative(pass.tau_z[l][k]))
                .collect();
            self.blocks[l].temp.backward(&pass.tau, &d_tau_z);
        }

        if pass.null_mode {
            for (g, d) in self.null_embedding.grad.iter_mut().zip(&d_cond_in[0]) {
                *g += d;
            }
        } else {
            let enc = pass
                .enc
                .as_ref()
                .expect("conditioned pass keeps encoder cache");
            for s in 0..n_slots {
                let d_a1 = self.enc2.backward(&enc.a1[s], &d_cond_in[s]);
                let d_z1: Vec<f64> = d_a1
                    .iter()
                    .zip(&enc.z1[s])
                    .map(|(&d, &z)| d * act.derivative(z))
                    .collect();
                let p = enc.positions[s];
                self.enc1.backward(&[p.x, p.y, p.z], &d_z1);
            }
        }
        Ok(())
    }
}

impl NoisePredictor for ToyNoisePredictor {
    fn predict_noise(
        &self,
        noisy: &PointCloud,
        condition: Option<&PointCloud>,
        t: usize,
    ) -> Result<Vec<Point3>> {
        let out = self.forward(noisy, condition, t)?.out;
        if out.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(
                "noise prediction produced non-finite values".into(),
            ));
        }
        Ok(out)
    }
}

impl ParamSet for ToyNoisePredictor {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        tensor::visit_linear(&self.enc1, "enc1", f);
        tensor::visit_linear(&self.enc2, "enc2", f);
        f("null", &self.null_embedding);
        for (l, block) in self.blocks.iter().enumerate() {
            tensor::visit_linear(&block.cond, &format!("block{l}.cond"), f);
            tensor::visit_linear(&block.temp, &format!("block{l}.temp"), f);
            tensor::visit_linear(&block.proj, &format!("block{l}.proj"), f);
        }
        for (l, lin) in self.backbone.iter().enumerate() {
            tensor::visit_linear(lin, &format!("backbone{l}"), f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        tensor::visit_linear_mut(&mut self.enc1, "enc1", f);
        tensor::visit_linear_mut(&mut self.enc2, "enc2", f);
        f("null", &mut self.null_embedding);
        for (l, block) in self.blocks.iter_mut().enumerate() {
            tensor::visit_linear_mut(&mut block.cond, &format!("block{l}.cond"), f);
            tensor::visit_linear_mut(&mut block.temp, &format!("block{l}.temp"), f);
            tensor::visit_linear_mut(&mut block.proj, &format!("block{l}.proj"), f);
        }
        for (l, lin) in self.backbone.iter_mut().enumerate() {
            tensor::visit_linear_mut(lin, &format!("backbone{l}"), f);
        }
    }
}
