//! The generative network: a strided convolutional encoder, an optional
//! self-expressive layer between encoder and decoder, and the mirrored
//! transpose-convolutional decoder, together with full-batch training.
//!
//! Fine-tuning minimizes a four-part objective: reconstruction
//! `0.5 ||X - Xhat||^2`, self-expressive fidelity `alpha ||Z - ZW||^2`,
//! coefficient smoothness `beta ||W||^2`, and the locality-preserving term
//! `gamma * sum_ij ||z_i - z_j||^2 a_ij` against the frozen prior graph.
//! All gradients are hand-derived and checked against finite differences.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use crate::error::UdllError;
use crate::graph::PriorGraph;
use crate::tensor::{
    adam_step, conv2d_backward, conv2d_forward, conv2d_transpose_backward,
    conv2d_transpose_forward, frobenius_sq, matmul, matmul_nt, matmul_tn, relu, relu_backward,
    AdamState, Parameter, Tensor,
};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One encoder layer: `channels` output maps with square `kernel_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub channels: usize,
    pub kernel_size: usize,
}

/// Architecture description; the decoder is always the encoder's mirror
/// image and every layer uses stride 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
    pub input_h: usize,
    pub input_w: usize,
}

impl NetworkConfig {
    pub const STRIDE: usize = 2;

    pub fn new(layers: Vec<LayerSpec>, input_h: usize, input_w: usize) -> Result<Self> {
        let cfg = NetworkConfig {
            layers,
            input_h,
            input_w,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(UdllError::Config("network needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.channels < 1 {
                return Err(UdllError::Config(format!(
                    "layer {i}: channels must be >= 1"
                )));
            }
            if l.kernel_size < 1 || l.kernel_size % 2 == 0 {
                return Err(UdllError::Config(format!(
                    "layer {i}: kernel size must be odd and >= 1, got {}",
                    l.kernel_size
                )));
            }
        }
        if self.input_h == 0 || self.input_w == 0 {
            return Err(UdllError::Config(
                "input dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial size seen at the input of each encoder layer, plus the final
    /// latent size: `dims[0]` is the image, `dims[l]` the latent map.
    pub fn spatial_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_h, self.input_w)];
        for _ in &self.layers {
            let (h, w) = *dims.last().expect("non-empty");
            dims.push((h.div_ceil(Self::STRIDE), w.div_ceil(Self::STRIDE)));
        }
        dims
    }

    /// Flattened latent length per sample.
    pub fn latent_len(&self) -> usize {
        let (h, w) = *self.spatial_dims().last().expect("non-empty");
        h * w * self.layers.last().expect("non-empty").channels
    }

    /// Compact text form, e.g. `layers=15:3;input=32x32`.
    pub fn echo(&self) -> String {
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("{}:{}", l.channels, l.kernel_size))
            .collect();
        format!(
            "layers={};input={}x{}",
            layers.join(","),
            self.input_h,
            self.input_w
        )
    }

    pub fn parse_echo(text: &str) -> Result<Self> {
        let mut layers = None;
        let mut input = None;
        for field in text.split(';') {
            match field.split_once('=') {
                Some(("layers", v)) => {
                    let parsed: Result<Vec<LayerSpec>> = v
                        .split(',')
                        .map(|tok| {
                            let (c, s) = tok.split_once(':').ok_or_else(|| {
                                UdllError::Config(format!("bad layer token `{tok}`"))
                            })?;
                            Ok(LayerSpec {
                                channels: c.parse().map_err(|_| {
                                    UdllError::Config(format!("bad channel count `{c}`"))
                                })?,
                                kernel_size: s.parse().map_err(|_| {
                                    UdllError::Config(format!("bad kernel size `{s}`"))
                                })?,
                            })
                        })
                        .collect();
                    layers = Some(parsed?);
                }
                Some(("input", v)) => {
                    let (h, w) = v
                        .split_once('x')
                        .ok_or_else(|| UdllError::Config(format!("bad input size `{v}`")))?;
                    input = Some((
                        h.parse()
                            .map_err(|_| UdllError::Config(format!("bad input height `{h}`")))?,
                        w.parse()
                            .map_err(|_| UdllError::Config(format!("bad input width `{w}`")))?,
                    ));
                }
                _ => {
                    return Err(UdllError::Config(format!(
                        "unrecognized config field `{field}`"
                    )))
                }
            }
        }
        let (input_h, input_w) =
            input.ok_or_else(|| UdllError::Config("config echo missing input size".into()))?;
        NetworkConfig::new(
            layers.ok_or_else(|| UdllError::Config("config echo missing layers".into()))?,
            input_h,
            input_w,
        )
    }
}

/// Loss weights and training schedule.
#[derive(Clone, Copy, Debug)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Prior-graph neighbors per column.
    pub k: usize,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k: 3,
            epochs_pretrain: 200,
            epochs_finetune: 100,
            learning_rate: 0.001,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(UdllError::Config("loss weights must be nonnegative".into()));
        }
        if self.epochs_pretrain < 1 || self.epochs_finetune < 1 {
            return Err(UdllError::Config("epoch counts must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(UdllError::Config("learning rate must be positive".into()));
        }
        if self.k < 1 {
            return Err(UdllError::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// One convolutional layer's trainables.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub kernels: Parameter,
    pub bias: Parameter,
}

/// Weighted loss terms of one epoch; `total` is their plain sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub affinity: f64,
    pub regularizer: f64,
    pub locality: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.affinity + self.regularizer + self.locality
    }

    fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("reconstruction", self.reconstruction),
            ("affinity", self.affinity),
            ("regularizer", self.regularizer),
            ("locality", self.locality),
        ] {
            if !v.is_finite() {
                return Err(UdllError::NonFinite(format!("loss term {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ModelOptimizer {
    encoder: Vec<(AdamState, AdamState)>,
    decoder: Vec<(AdamState, AdamState)>,
    selfexpr: Option<AdamState>,
}

/// Trainable network plus training bookkeeping. Single-writer by design.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: NetworkConfig,
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    /// Self-expressive coefficients, `n x n`; absent during pretraining.
    pub selfexpr: Option<Parameter>,
    pub seed: u64,
    pub epoch: usize,
    pub loss_history: Vec<LossBreakdown>,
    optimizer: Option<ModelOptimizer>,
}

impl ModelState {
    /// Fresh network with Glorot-style uniform kernel init and zero biases,
    /// drawn from a generator seeded with `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(config.layers.len());
        let mut decoder = Vec::with_capacity(config.layers.len());
        // biases start slightly positive so rectified units are alive at
        // epoch 0; a zero init lets tiny nets collapse onto the bias-only
        // constant reconstruction with every latent unit dead
        const BIAS_INIT: f64 = 0.01;
        let mut cin = 1usize;
        for spec in &config.layers {
            let s = spec.kernel_size;
            let cout = spec.channels;
            let fan = (s * s * cin + s * s * cout) as f64;
            let r = (6.0 / fan).sqrt();
            encoder.push(ConvLayer {
                kernels: Parameter::new(Tensor::random_uniform(
                    &[s, s, cin, cout],
                    -r,
                    r,
                    &mut rng,
                )),
                bias: Parameter::new(Tensor::filled(&[cout], BIAS_INIT)),
            });
            cin = cout;
        }
        let mut cin = 1usize;
        for spec in &config.layers {
            let s = spec.kernel_size;
            let cout = spec.channels;
            let fan = (s * s * cin + s * s * cout) as f64;
            let r = (6.0 / fan).sqrt();
            decoder.push(ConvLayer {
                kernels: Parameter::new(Tensor::random_uniform(
                    &[s, s, cin, cout],
                    -r,
                    r,
                    &mut rng,
                )),
                bias: Parameter::new(Tensor::filled(&[cin], BIAS_INIT)),
            });
            cin = cout;
        }
        Ok(ModelState {
            config,
            encoder,
            decoder,
            selfexpr: None,
            seed,
            epoch: 0,
            loss_history: Vec::new(),
            optimizer: None,
        })
    }

    /// Adds the `n x n` self-expressive layer, initialized to small uniform
    /// noise so the smoothness term does not start at a stationary shape.
    pub fn attach_selfexpr(&mut self, n: usize) {
        if self.selfexpr.is_some() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x5E1F_E21A));
        self.selfexpr = Some(Parameter::new(Tensor::random_uniform(
            &[n, n],
            -1e-4,
            1e-4,
            &mut rng,
        )));
    }

    /// Total number of trainable scalars currently allocated.
    pub fn scalar_count(&self) -> usize {
        let conv: usize = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.kernels.len() + l.bias.len())
            .sum();
        conv + self.selfexpr.as_ref().map_or(0, |w| w.len())
    }

    /// Latent matrix `[latent_len, n]`, one column per sample.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (feat, _) = self.encode_forward(x)?;
        Ok(flatten_featmap(&feat))
    }

    fn encode_forward(&self, x: &Tensor) -> Result<(Tensor, LayerCaches)> {
        self.check_input(x)?;
        let mut caches = LayerCaches::default();
        let mut cur = x.clone();
        for layer in &self.encoder {
            let pre = conv2d_forward(
                &cur,
                &layer.kernels.value,
                &layer.bias.value,
                NetworkConfig::STRIDE,
            )?;
            let out = relu(&pre);
            caches.inputs.push(cur);
            caches.pre_activations.push(pre);
            cur = out;
        }
        Ok((cur, caches))
    }

    /// Reconstruction from a latent matrix `[latent_len, n]`.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let (out, _) = self.decode_forward(&self.unflatten(latent)?)?;
        Ok(out)
    }

    fn decode_forward(&self, featmap: &Tensor) -> Result<(Tensor, LayerCaches)> {
        let dims = self.config.spatial_dims();
        let mut caches = LayerCaches::default();
        let mut cur = featmap.clone();
        for j in (0..self.decoder.len()).rev() {
            let layer = &self.decoder[j];
            let (out_h, out_w) = dims[j];
            let pre = conv2d_transpose_forward(
                &cur,
                &layer.kernels.value,
                &layer.bias.value,
                NetworkConfig::STRIDE,
                out_h,
                out_w,
            )?;
            // final layer stays linear; all earlier layers are rectified
            let out = if j == 0 { pre.clone() } else { relu(&pre) };
            caches.inputs.push(cur);
            caches.pre_activations.push(pre);
            cur = out;
        }
        Ok((cur, caches))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 4
            || shape[1] != self.config.input_h
            || shape[2] != self.config.input_w
            || shape[3] != 1
        {
            return Err(UdllError::Shape {
                op: "encode",
                detail: format!(
                    "expected [n, {}, {}, 1], got {shape:?}",
                    self.config.input_h, self.config.input_w
                ),
            });
        }
        Ok(())
    }

    fn unflatten(&self, latent: &Tensor) -> Result<Tensor> {
        let dims = self.config.spatial_dims();
        let (h, w) = *dims.last().expect("non-empty");
        let c = self.config.layers.last().expect("non-empty").channels;
        if latent.shape().len() != 2 || latent.rows() != h * w * c {
            return Err(UdllError::Shape {
                op: "decode",
                detail: format!(
                    "latent must be [{}, n], got {:?}",
                    h * w * c,
                    latent.shape()
                ),
            });
        }
        Ok(unflatten_featmap(latent, h, w, c))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.kernels);
            out.push(&mut l.bias);
        }
        for l in &mut self.decoder {
            out.push(&mut l.kernels);
            out.push(&mut l.bias);
        }
        if let Some(w) = &mut self.selfexpr {
            out.push(w);
        }
        out
    }

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

#[derive(Default)]
struct LayerCaches {
    inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

/// Column-per-sample flattening of a `[n, h, w, c]` feature map into
/// `[h*w*c, n]`; per sample the layout stays row-major (rows, columns,
/// channels with channels fastest).
pub fn flatten_featmap(feat: &Tensor) -> Tensor {
    let n = feat.shape()[0];
    let per = feat.len() / n.max(1);
    let mut z = Tensor::zeros(&[per, n]);
    for b in 0..n {
        for d in 0..per {
            z.data_mut()[d * n + b] = feat.data()[b * per + d];
        }
    }
    z
}

fn unflatten_featmap(z: &Tensor, h: usize, w: usize, c: usize) -> Tensor {
    let per = z.rows();
    let n = z.cols();
    let mut feat = Tensor::zeros(&[n, h, w, c]);
    for b in 0..n {
        for d in 0..per {
            feat.data_mut()[b * per + d] = z.data()[d * n + b];
        }
    }
    feat
}

/// `Zhat = Z W`: every output column mixes all latent columns. No bias, no
/// activation.
pub fn self_express(z: &Tensor, w: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || w.rows() != w.cols() || w.rows() != z.cols() {
        return Err(UdllError::Shape {
            op: "self_express",
            detail: format!(
                "coefficients must be [n, n] with n = {} latent columns, got {:?}",
                z.cols(),
                w.shape()
            ),
        });
    }
    matmul(z, w)
}

/// Locality-preserving loss over the frozen prior graph and its gradient
/// with respect to the latent columns:
/// `sum_ij ||z_i - z_j||^2 a_ij`, gradient `2 sum_j (a_ij + a_ji)(z_i - z_j)`.
pub fn locality_loss(z: &Tensor, graph: &PriorGraph) -> Result<(f64, Tensor)> {
    if z.shape().len() != 2 || z.cols() != graph.n {
        return Err(UdllError::Shape {
            op: "locality_loss",
            detail: format!(
                "latent has {:?} but the graph covers {} samples",
                z.shape(),
                graph.n
            ),
        });
    }
    let dim = z.rows();
    let n = graph.n;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[dim, n]);
    let zd = z.data();
    let gd = grad.data_mut();
    for (j, col) in graph.columns.iter().enumerate() {
        for &(i, a) in col {
            let mut sq = 0.0;
            for d in 0..dim {
                let diff = zd[d * n + i] - zd[d * n + j];
                sq += diff * diff;
                let push = 2.0 * a * diff;
                gd[d * n + i] += push;
                gd[d * n + j] -= push;
            }
            loss += a * sq;
        }
    }
    Ok((loss, grad))
}

/// One full forward/backward pass: returns the weighted loss terms and
/// leaves every parameter gradient in the model's accumulators. The prior
/// graph participates only when `gamma` is nonzero; without an attached
/// self-expressive layer the objective is plain reconstruction.
pub fn compute_gradients(
    x: &Tensor,
    state: &mut ModelState,
    graph: Option<&PriorGraph>,
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    state.zero_grads();
    let (feat, enc_caches) = state.encode_forward(x)?;
    let z = flatten_featmap(&feat);

    let (zhat, residual) = match &state.selfexpr {
        Some(w) => {
            let zhat = self_express(&z, &w.value)?;
            let residual = z.sub(&zhat)?;
            (zhat, Some(residual))
        }
        None => (z.clone(), None),
    };

    let dims = state.config.spatial_dims();
    let (lh, lw) = *dims.last().expect("non-empty");
    let lc = state.config.layers.last().expect("non-empty").channels;
    let zhat_feat = unflatten_featmap(&zhat, lh, lw, lc);
    let (xhat, dec_caches) = state.decode_forward(&zhat_feat)?;

    // loss terms (weighted)
    let diff = xhat.sub(x)?;
    let mut breakdown = LossBreakdown {
        reconstruction: 0.5 * frobenius_sq(&diff),
        ..Default::default()
    };
    if let Some(r) = &residual {
        breakdown.affinity = hyper.alpha * frobenius_sq(r);
    }
    if let Some(w) = &state.selfexpr {
        breakdown.regularizer = hyper.beta * frobenius_sq(&w.value);
    }
    let mut locality_grad = None;
    if let Some(graph) = graph {
        if hyper.gamma != 0.0 {
            let (loss, grad) = locality_loss(&z, graph)?;
            breakdown.locality = hyper.gamma * loss;
            locality_grad = Some(grad);
        }
    }
    breakdown.check_finite()?;

    // backward through the decoder; layers were applied j = l-1 .. 0 and the
    // caches sit in apply order, so walk positions in reverse
    let l = state.decoder.len();
    let mut g_cur = diff; // d(0.5 ||xhat - x||^2) / d xhat
    for pos in (0..l).rev() {
        let j = l - 1 - pos; // layer applied at cache position pos
        if j != 0 {
            // every layer except the linear output one was rectified
            g_cur = relu_backward(&g_cur, &dec_caches.pre_activations[pos])?;
        }
        let layer = &mut state.decoder[j];
        let (gi, gk, gb) = conv2d_transpose_backward(
            &g_cur,
            &dec_caches.inputs[pos],
            &layer.kernels.value,
            NetworkConfig::STRIDE,
        )?;
        layer.kernels.gradient = gk;
        layer.bias.gradient = gb;
        g_cur = gi;
    }
    let g_zhat = flatten_featmap(&g_cur);

    // self-expressive layer and direct latent terms
    let mut g_z = match &state.selfexpr {
        Some(w) => matmul_nt(&g_zhat, &w.value)?,
        None => g_zhat.clone(),
    };
    if let (Some(w), Some(r)) = (&mut state.selfexpr, &residual) {
        // dW: decoder path Z^T g_zhat, fidelity -2 alpha Z^T R, smoothness 2 beta W
        let mut gw = matmul_tn(&z, &g_zhat)?;
        gw.add_scaled(&matmul_tn(&z, r)?, -2.0 * hyper.alpha)?;
        gw.add_scaled(&w.value, 2.0 * hyper.beta)?;
        w.gradient = gw;
        // dZ of the fidelity term: 2 alpha (R - R W^T)
        g_z.add_scaled(r, 2.0 * hyper.alpha)?;
        g_z.add_scaled(&matmul_nt(r, &w.value)?, -2.0 * hyper.alpha)?;
    }
    if let Some(lg) = &locality_grad {
        g_z.add_scaled(lg, hyper.gamma)?;
    }

    // encoder backward
    let mut g_feat = unflatten_featmap(&g_z, lh, lw, lc);
    for j in (0..state.encoder.len()).rev() {
        g_feat = relu_backward(&g_feat, &enc_caches.pre_activations[j])?;
        let layer = &mut state.encoder[j];
        let (gi, gk, gb) = conv2d_backward(
            &g_feat,
            &enc_caches.inputs[j],
            &layer.kernels.value,
            NetworkConfig::STRIDE,
        )?;
        layer.kernels.gradient = gk;
        layer.bias.gradient = gb;
        g_feat = gi;
    }

    Ok(breakdown)
}

/// Weighted loss terms of the full objective at the current parameters.
/// Requires the self-expressive layer to be attached.
pub fn total_loss(
    x: &Tensor,
    state: &ModelState,
    graph: &PriorGraph,
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    let w = state
        .selfexpr
        .as_ref()
        .ok_or_else(|| UdllError::Param("total_loss: self-expressive layer not attached".into()))?;
    let z = state.encode(x)?;
    let zhat = self_express(&z, &w.value)?;
    let residual = z.sub(&zhat)?;
    let xhat = state.decode(&zhat)?;
    let breakdown = LossBreakdown {
        reconstruction: 0.5 * frobenius_sq(&xhat.sub(x)?),
        affinity: hyper.alpha * frobenius_sq(&residual),
        regularizer: hyper.beta * frobenius_sq(&w.value),
        locality: hyper.gamma * locality_loss(&z, graph)?.0,
    };
    breakdown.check_finite()?;
    Ok(breakdown)
}

fn ensure_optimizer(state: &mut ModelState, lr: f64) {
    if state.optimizer.is_none() {
        state.optimizer = Some(ModelOptimizer {
            encoder: state
                .encoder
                .iter()
                .map(|l| {
                    (
                        AdamState::new(l.kernels.value.shape(), lr),
                        AdamState::new(l.bias.value.shape(), lr),
                    )
                })
                .collect(),
            decoder: state
                .decoder
                .iter()
                .map(|l| {
                    (
                        AdamState::new(l.kernels.value.shape(), lr),
                        AdamState::new(l.bias.value.shape(), lr),
                    )
                })
                .collect(),
            selfexpr: None,
        });
    }
    let has_w = state.selfexpr.is_some();
    if let Some(opt) = &mut state.optimizer {
        if has_w && opt.selfexpr.is_none() {
            let shape = state.selfexpr.as_ref().expect("present").value.shape();
            opt.selfexpr = Some(AdamState::new(shape, lr));
        }
        for (k, b) in opt.encoder.iter_mut().chain(opt.decoder.iter_mut()) {
            k.learning_rate = lr;
            b.learning_rate = lr;
        }
        if let Some(w) = &mut opt.selfexpr {
            w.learning_rate = lr;
        }
    }
}

fn apply_adam(state: &mut ModelState) -> Result<()> {
    let mut opt = state.optimizer.take().expect("optimizer initialized");
    for (i, layer) in state.encoder.iter_mut().enumerate() {
        adam_step(
            &format!("encoder.{i}.kernel"),
            &mut layer.kernels,
            &mut opt.encoder[i].0,
        )?;
        adam_step(
            &format!("encoder.{i}.bias"),
            &mut layer.bias,
            &mut opt.encoder[i].1,
        )?;
    }
    for (i, layer) in state.decoder.iter_mut().enumerate() {
        adam_step(
            &format!("decoder.{i}.kernel"),
            &mut layer.kernels,
            &mut opt.decoder[i].0,
        )?;
        adam_step(
            &format!("decoder.{i}.bias"),
            &mut layer.bias,
            &mut opt.decoder[i].1,
        )?;
    }
    if let (Some(w), Some(ws)) = (&mut state.selfexpr, &mut opt.selfexpr) {
        adam_step("selfexpr", w, ws)?;
    }
    state.optimizer = Some(opt);
    Ok(())
}

/// Full-batch reconstruction-only training of encoder and decoder.
pub fn pretrain(x: &Tensor, config: NetworkConfig, hyper: &HyperParams) -> Result<ModelState> {
    let mut state = ModelState::new(config, hyper.seed)?;
    train_reconstruction(x, &mut state, hyper, hyper.epochs_pretrain)?;
    Ok(state)
}

fn train_reconstruction(
    x: &Tensor,
    state: &mut ModelState,
    hyper: &HyperParams,
    epochs: usize,
) -> Result<()> {
    ensure_optimizer(state, hyper.learning_rate);
    for e in 0..epochs {
        let breakdown = match compute_gradients(x, state, None, &zeroed_weights(hyper)) {
            Ok(b) => b,
            Err(UdllError::NonFinite(what)) => {
                return Err(UdllError::Diverged {
                    epoch: state.epoch + e,
                    detail: format!("{what} became non-finite"),
                })
            }
            Err(other) => return Err(other),
        };
        state.loss_history.push(breakdown);
        apply_adam(state)?;
    }
    state.epoch += epochs;
    Ok(())
}

fn zeroed_weights(hyper: &HyperParams) -> HyperParams {
    HyperParams {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..*hyper
    }
}

/// Full-batch fine-tuning of the whole network against the frozen prior
/// graph. Attaches the self-expressive layer on entry (unless all three
/// extra loss weights are zero, in which case this is exactly continued
/// pretraining and the coefficients stay untouched).
pub fn finetune(
    x: &Tensor,
    graph: &PriorGraph,
    state: &mut ModelState,
    hyper: &HyperParams,
) -> Result<()> {
    let n = x.shape()[0];
    if graph.n != n {
        return Err(UdllError::Shape {
            op: "finetune",
            detail: format!("graph covers {} samples but the batch has {n}", graph.n),
        });
    }
    if hyper.alpha == 0.0 && hyper.beta == 0.0 && hyper.gamma == 0.0 {
        return train_reconstruction(x, state, hyper, hyper.epochs_finetune);
    }
    state.attach_selfexpr(n);
    ensure_optimizer(state, hyper.learning_rate);
    for e in 0..hyper.epochs_finetune {
        let breakdown = match compute_gradients(x, state, Some(graph), hyper) {
            Ok(b) => b,
            Err(UdllError::NonFinite(what)) => {
                let last = state.loss_history.last().copied().unwrap_or_default();
                return Err(UdllError::Diverged {
                    epoch: state.epoch + e,
                    detail: format!(
                        "{what}; last finite terms: reconstruction {:.6e}, affinity {:.6e}, regularizer {:.6e}, locality {:.6e}",
                        last.reconstruction, last.affinity, last.regularizer, last.locality
                    ),
                });
            }
            Err(other) => return Err(other),
        };
        state.loss_history.push(breakdown);
        apply_adam(state)?;
    }
    state.epoch += hyper.epochs_finetune;
    Ok(())
}

/// Closed-form size of the whole network: mirrored conv weights, the bias
/// count, and the `n^2` self-expressive coefficients.
pub fn parameter_count(config: &NetworkConfig, n: usize) -> usize {
    let mut total: i64 = 0;
    let mut cin = 1i64;
    for spec in &config.layers {
        let c = spec.channels as i64;
        let s = spec.kernel_size as i64;
        total += 2 * c * (s * s * cin + 1);
        cin = c;
    }
    total -= config.layers[0].channels as i64;
    total += 1;
    total += (n * n) as i64;
    total as usize
}
