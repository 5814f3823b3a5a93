//! Conditional GAN mapping a stacked placement/connectivity image to a
//! routing heat map: U-Net style generator with configurable skip
//! connections, a six-layer global discriminator, and the adversarial plus
//! L1 training loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    self, activation, activation_backward, bce_loss, dropout, dropout_backward, l1_loss, Activation, AdamConfig,
    AdamState, BatchNorm, BnCache, Mode, NnError, Param, Tensor,
};
use crate::raster::{self, ImagePlane, RasterError};

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, GanError> {
    Err(GanError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    All,
    Single,
    None,
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::All => "all",
            SkipMode::Single => "single",
            SkipMode::None => "none",
        })
    }
}

impl FromStr for SkipMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(SkipMode::All),
            "single" => Ok(SkipMode::Single),
            "none" => Ok(SkipMode::None),
            other => Err(format!("unknown skip mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub skip_mode: SkipMode,
    pub dropout_rate: f64,
}

/// Decoder levels that get dropout, counted from the innermost.
const DROPOUT_LEVELS: usize = 3;

impl GeneratorConfig {
    /// Defaults for a `w x w` image.
    pub fn for_image(w: usize) -> Self {
        Self {
            in_channels: 4,
            base_width: if w >= 256 { 64 } else { 32 },
            depth: (w.max(16).ilog2() as usize).saturating_sub(2),
            skip_mode: SkipMode::All,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self, w: usize) -> Result<(), GanError> {
        if self.depth < 2 {
            return config_err("depth must be at least 2");
        }
        if self.base_width < 8 {
            return config_err("base_width must be at least 8");
        }
        if self.in_channels == 0 {
            return config_err("in_channels must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return config_err("dropout_rate must be in [0, 1)");
        }
        if self.depth >= usize::BITS as usize || !w.is_multiple_of(1 << self.depth) || w >> self.depth == 0 {
            return config_err(format!("image size {w} is not divisible by 2^{}", self.depth));
        }
        Ok(())
    }

    /// Output width of each encoder level.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|i| (self.base_width << i).min(8 * self.base_width)).collect()
    }

    /// Whether decoder level `j` (0 = innermost, `depth - 1` = output)
    /// receives encoder features.
    pub fn has_skip(&self, j: usize) -> bool {
        match self.skip_mode {
            SkipMode::All => j >= 1,
            SkipMode::Single => j == 1,
            SkipMode::None => false,
        }
    }

    /// Input channels of each decoder level, innermost first.
    pub fn decoder_in_widths(&self) -> Vec<usize> {
        let c = self.widths();
        let d = self.depth;
        (0..d)
            .map(|j| {
                if j == 0 {
                    c[d - 1]
                } else {
                    c[d - 1 - j] * if self.has_skip(j) { 2 } else { 1 }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub n_layers: usize,
    pub base_width: usize,
}

impl DiscriminatorConfig {
    pub fn for_generator(g: &GeneratorConfig) -> Self {
        Self {
            in_channels: g.in_channels + 3,
            n_layers: 6,
            base_width: g.base_width,
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        (0..self.n_layers).map(|l| if l < 4 { 2 } else { 1 }).collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.n_layers)
            .map(|l| if l + 1 == self.n_layers { 1 } else { (self.base_width << l.min(3)).min(8 * self.base_width) })
            .collect()
    }

    pub fn validate(&self, w: usize) -> Result<(), GanError> {
        if self.n_layers < 2 {
            return config_err("discriminator needs at least 2 layers");
        }
        if self.base_width < 8 {
            return config_err("base_width must be at least 8");
        }
        let mut h = w;
        for s in self.strides() {
            h = nn::conv_out_dim(h, 4, s, 1)
                .filter(|&v| v > 0)
                .ok_or_else(|| GanError::Config(format!("image size {w} too small for the discriminator")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l1_weight: f64,
    pub connect_scale: f64,
    pub use_l1: bool,
    pub grayscale: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch: 1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            l1_weight: 50.0,
            connect_scale: 0.1,
            use_l1: true,
            grayscale: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        if self.batch != 1 {
            return config_err("only batch size 1 is supported");
        }
        for (name, v) in [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("l1_weight", self.l1_weight),
            ("connect_scale", self.connect_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return config_err("betas must be below 1");
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), GanError> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, GanError> {
            value
                .parse()
                .map_err(|_| GanError::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "l1_weight" => self.l1_weight = parse(key, value)?,
            "connect_scale" => self.connect_scale = parse(key, value)?,
            "use_l1" => self.use_l1 = parse(key, value)?,
            "grayscale" => self.grayscale = parse(key, value)?,
            other => return config_err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Applies a line-based `key=value` file; `#` starts a comment.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), GanError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GanError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv<T> {
    w: Param<T>,
    b: Option<Param<T>>,
    stride: usize,
    transpose: bool,
}

const KERNEL: usize = 4;
const PAD: usize = 1;

impl<T: nn::Scalar> Conv<T> {
    fn new(cin: usize, cout: usize, stride: usize, transpose: bool, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let shape = if transpose {
            [cin, cout, KERNEL, KERNEL]
        } else {
            [cout, cin, KERNEL, KERNEL]
        };
        let normal = Normal::new(0.0, 0.02).unwrap();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::lit(normal.sample(rng)))
            .collect();
        Self {
            w: Param::new(Tensor::from_vec(&shape, data).unwrap()),
            b: bias.then(|| Param::new(Tensor::zeros(&[cout]))),
            stride,
            transpose,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let b = self.b.as_ref().map(|b| b.value.data());
        if self.transpose {
            nn::conv_transpose2d(x, &self.w.value, b, self.stride, PAD)
        } else {
            nn::conv2d(x, &self.w.value, b, self.stride, PAD)
        }
    }

    fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool, need_dw: bool) -> Result<Option<Tensor<T>>, NnError> {
        let (_, _, h, w) = x.dims4()?;
        if !need_dw {
            if !need_dx {
                return Ok(None);
            }
            // input gradient only: the adjoint op
            return Ok(Some(if self.transpose {
                let dx = nn::conv2d(dy, &self.w.value, None, self.stride, PAD)?;
                if dx.shape() != x.shape() {
                    return Err(NnError::Shape("transposed conv input gradient".into()));
                }
                dx
            } else {
                nn::conv_transpose2d_sized(dy, &self.w.value, None, self.stride, PAD, (h, w))?
            }));
        }
        let g = if self.transpose {
            nn::conv_transpose2d_backward(x, &self.w.value, dy, self.stride, PAD, need_dx)?
        } else {
            nn::conv2d_backward(x, &self.w.value, dy, self.stride, PAD, need_dx)?
        };
        self.w.accumulate(g.dw.data());
        if let Some(b) = &mut self.b {
            b.accumulate(&g.db);
        }
        Ok(g.dx)
    }
}

/// Named trainable parameters and named running-statistic buffers.
pub type Parts<'a, T> = (Vec<(String, &'a mut Param<T>)>, Vec<(String, &'a mut Vec<T>)>);

#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    conv: Conv<T>,
    bn: BatchNorm<T>,
}

impl<T: nn::Scalar> Block<T> {
    fn new(cin: usize, cout: usize, stride: usize, transpose: bool, rng: &mut ChaCha8Rng) -> Self {
        let conv = Conv::new(cin, cout, stride, transpose, false, rng);
        let normal = Normal::new(1.0, 0.02).unwrap();
        let gamma = (0..cout).map(|_| T::lit(normal.sample(rng))).collect();
        Self {
            conv,
            bn: BatchNorm::new(gamma),
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, parts: &mut Parts<'a, T>) {
        parts.0.push((format!("{prefix}.conv.w"), &mut self.conv.w));
        parts.0.push((format!("{prefix}.bn.gamma"), &mut self.bn.gamma));
        parts.0.push((format!("{prefix}.bn.beta"), &mut self.bn.beta));
        parts.1.push((format!("{prefix}.bn.running_mean"), &mut self.bn.running_mean));
        parts.1.push((format!("{prefix}.bn.running_var"), &mut self.bn.running_var));
    }
}

/// Per-level intermediates of a block forward pass.
#[derive(Debug, Clone)]
struct BlockTrace<T> {
    input: Tensor<T>,
    normed: Tensor<T>,
    bn: BnCache<T>,
    act: Tensor<T>,
    mask: Option<Vec<T>>,
    out: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    cfg: GeneratorConfig,
    enc: Vec<Block<T>>,
    dec: Vec<Block<T>>,
    out: Conv<T>,
}

/// Everything the generator backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct GenCache<T> {
    enc: Vec<BlockTrace<T>>,
    dec: Vec<BlockTrace<T>>,
    out_in: Tensor<T>,
    tanh: Tensor<T>,
}

impl<T: nn::Scalar> Generator<T> {
    pub fn new(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.widths();
        let d = cfg.depth;
        let enc = (0..d)
            .map(|i| Block::new(if i == 0 { cfg.in_channels } else { c[i - 1] }, c[i], 2, false, rng))
            .collect();
        let ins = cfg.decoder_in_widths();
        let dec = (0..d - 1).map(|j| Block::new(ins[j], c[d - 2 - j], 2, true, rng)).collect();
        let out = Conv::new(ins[d - 1], 3, 2, true, true, rng);
        Self {
            cfg: cfg.clone(),
            enc,
            dec,
            out,
        }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Image in `[0, 1]` plus the cache for [`Generator::backward`].
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor<T>, GenCache<T>), NnError> {
        let d = self.cfg.depth;
        let mut enc: Vec<BlockTrace<T>> = Vec::with_capacity(d);
        let mut h = x.clone();
        for blk in &self.enc {
            let a = blk.conv.forward(&h)?;
            let (normed, bn) = blk.bn.forward(&a, mode)?;
            let act = activation(&normed, Activation::LeakyRelu);
            enc.push(BlockTrace {
                input: h,
                normed,
                bn,
                out: act.clone(),
                act,
                mask: None,
            });
            h = enc.last().unwrap().out.clone();
        }
        let mut dec: Vec<BlockTrace<T>> = Vec::with_capacity(d - 1);
        for (j, blk) in self.dec.iter().enumerate() {
            let input = self.level_input(j, &enc, &dec)?;
            let a = blk.conv.forward(&input)?;
            let (normed, bn) = blk.bn.forward(&a, mode)?;
            let act = activation(&normed, Activation::Relu);
            let (out, mask) = if j < DROPOUT_LEVELS {
                dropout(&act, self.cfg.dropout_rate, rng, mode)
            } else {
                (act.clone(), None)
            };
            dec.push(BlockTrace {
                input,
                normed,
                bn,
                act,
                mask,
                out,
            });
        }
        let out_in = self.level_input(d - 1, &enc, &dec)?;
        let pre = self.out.forward(&out_in)?;
        let tanh = activation(&pre, Activation::Tanh);
        let half = T::lit(0.5);
        let y = tanh.map(|v| (v + T::one()) * half);
        Ok((y, GenCache { enc, dec, out_in, tanh }))
    }

    fn level_input(&self, j: usize, enc: &[BlockTrace<T>], dec: &[BlockTrace<T>]) -> Result<Tensor<T>, NnError> {
        let d = self.cfg.depth;
        if j == 0 {
            return Ok(enc[d - 1].out.clone());
        }
        let prev = &dec[j - 1].out;
        if self.cfg.has_skip(j) {
            Tensor::concat_channels(prev, &enc[d - 1 - j].out)
        } else {
            Ok(prev.clone())
        }
    }

    /// Accumulates parameter gradients for output gradient `dy`.
    pub fn backward(&mut self, cache: &GenCache<T>, dy: &Tensor<T>) -> Result<(), NnError> {
        let d = self.cfg.depth;
        let half = T::lit(0.5);
        let dt = dy.map(|g| g * half);
        let dpre = activation_backward(&cache.tanh, &cache.tanh, &dt, Activation::Tanh)?;
        let mut enc_grad: Vec<Option<Tensor<T>>> = vec![None; d];
        let add = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| -> Result<(), NnError> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        let mut g_in = self.out.backward(&cache.out_in, &dpre, true, true)?.unwrap();
        for j in (0..d).rev() {
            // g_in is the gradient of decoder level j's input
            if j == 0 {
                add(&mut enc_grad[d - 1], g_in)?;
                break;
            }
            let g_prev = if self.cfg.has_skip(j) {
                let prev_c = cache.dec[j - 1].out.shape()[1];
                let (gp, gs) = g_in.split_channels(prev_c)?;
                add(&mut enc_grad[d - 1 - j], gs)?;
                gp
            } else {
                g_in
            };
            let t = &cache.dec[j - 1];
            let blk = &mut self.dec[j - 1];
            let g_act = dropout_backward(t.mask.as_deref(), &g_prev);
            let g_norm = activation_backward(&t.normed, &t.act, &g_act, Activation::Relu)?;
            let g_conv = blk.bn.backward(&t.bn, &g_norm)?;
            g_in = blk.conv.backward(&t.input, &g_conv, true, true)?.unwrap();
        }
        for i in (0..d).rev() {
            let Some(g) = enc_grad[i].take() else { continue };
            let t = &cache.enc[i];
            let blk = &mut self.enc[i];
            let g_norm = activation_backward(&t.normed, &t.act, &g, Activation::LeakyRelu)?;
            let g_conv = blk.bn.backward(&t.bn, &g_norm)?;
            if let Some(gx) = blk.conv.backward(&t.input, &g_conv, i > 0, true)? {
                add(&mut enc_grad[i - 1], gx)?;
            }
        }
        Ok(())
    }

    /// Folds a train-mode pass's batch statistics into the running ones.
    pub fn commit(&mut self, cache: &GenCache<T>) {
        for (blk, t) in self.enc.iter_mut().zip(&cache.enc) {
            blk.bn.commit(&t.bn);
        }
        for (blk, t) in self.dec.iter_mut().zip(&cache.dec) {
            blk.bn.commit(&t.bn);
        }
    }

    pub fn parts_mut(&mut self) -> Parts<'_, T> {
        let mut parts = (Vec::new(), Vec::new());
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.collect(&format!("enc{i}"), &mut parts);
        }
        for (j, b) in self.dec.iter_mut().enumerate() {
            b.collect(&format!("dec{j}"), &mut parts);
        }
        parts.0.push(("out.w".into(), &mut self.out.w));
        parts.0.push(("out.b".into(), self.out.b.as_mut().unwrap()));
        parts
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.parts_mut().0
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    cfg: DiscriminatorConfig,
    blocks: Vec<Block<T>>,
    last: Conv<T>,
}

#[derive(Debug, Clone)]
pub struct DiscCache<T> {
    blocks: Vec<BlockTrace<T>>,
    last_in: Tensor<T>,
    map_shape: Vec<usize>,
    prob: T,
}

impl<T: nn::Scalar> Discriminator<T> {
    pub fn new(cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        let widths = cfg.widths();
        let strides = cfg.strides();
        let n = cfg.n_layers;
        let blocks = (0..n - 1)
            .map(|l| Block::new(if l == 0 { cfg.in_channels } else { widths[l - 1] }, widths[l], strides[l], false, rng))
            .collect();
        let last = Conv::new(widths[n - 2], 1, strides[n - 1], false, true, rng);
        Self {
            cfg: cfg.clone(),
            blocks,
            last,
        }
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Probability that `(x, candidate)` stacked along channels is real.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(T, DiscCache<T>), NnError> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut h = input.clone();
        for blk in &self.blocks {
            let a = blk.conv.forward(&h)?;
            let (normed, bn) = blk.bn.forward(&a, mode)?;
            let act = activation(&normed, Activation::LeakyRelu);
            let next = act.clone();
            blocks.push(BlockTrace {
                input: std::mem::replace(&mut h, next),
                normed,
                bn,
                out: act.clone(),
                act,
                mask: None,
            });
        }
        let map = self.last.forward(&h)?;
        let logit = map.mean();
        let prob = T::one() / (T::one() + (-logit).exp());
        Ok((
            prob,
            DiscCache {
                blocks,
                last_in: h,
                map_shape: map.shape().to_vec(),
                prob,
            },
        ))
    }

    /// Back-propagates `d loss / d prob`; returns the input gradient.
    /// Parameter gradients are accumulated only when `need_param_grads`.
    pub fn backward(&mut self, cache: &DiscCache<T>, dprob: T, need_param_grads: bool) -> Result<Tensor<T>, NnError> {
        let p = cache.prob;
        let n = T::from_usize(cache.map_shape.iter().product()).unwrap();
        let dmap = Tensor::full(&cache.map_shape, dprob * p * (T::one() - p) / n);
        let mut g = self.last.backward(&cache.last_in, &dmap, true, need_param_grads)?.unwrap();
        for (blk, t) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let g_norm = activation_backward(&t.normed, &t.act, &g, Activation::LeakyRelu)?;
            let g_conv = blk.bn.backward(&t.bn, &g_norm)?;
            g = blk.conv.backward(&t.input, &g_conv, true, need_param_grads)?.unwrap();
        }
        Ok(g)
    }

    pub fn commit(&mut self, cache: &DiscCache<T>) {
        for (blk, t) in self.blocks.iter_mut().zip(&cache.blocks) {
            blk.bn.commit(&t.bn);
        }
    }

    pub fn parts_mut(&mut self) -> Parts<'_, T> {
        let l = self.blocks.len();
        let mut parts = (Vec::new(), Vec::new());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect(&format!("layer{i}"), &mut parts);
        }
        parts.0.push((format!("layer{l}.conv.w"), &mut self.last.w));
        parts.0.push((format!("layer{l}.conv.b"), self.last.b.as_mut().unwrap()));
        parts
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.parts_mut().0
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|(_, p)| p.zero_grad());
    }
}

/// Losses and discriminator outputs of one alternating update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    /// D(x, truth) during the discriminator update.
    pub p_real: f64,
    /// D(x, G(x)) during the discriminator update.
    pub p_fake: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

/// Complete training state: configurations, both networks, optimizer
/// moments and the training RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub g_cfg: GeneratorConfig,
    pub d_cfg: DiscriminatorConfig,
    pub t_cfg: TrainConfig,
    pub image_size: usize,
    pub epoch: u64,
    pub step: u64,
    pub manifest_hash: String,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    g_opt: Vec<AdamState<f32>>,
    d_opt: Vec<AdamState<f32>>,
    rng: ChaCha8Rng,
}

/// One training example: model input `[1, c, w, w]` and target `[1, 3, w, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub x: Tensor<f32>,
    pub truth: Tensor<f32>,
}

/// Progress notifications from [`train`] and [`fine_tune`].
pub enum TrainEvent<'a> {
    Step { step: u64, losses: &'a StepLosses },
    Epoch { epoch: u64, model: &'a ModelCheckpoint },
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    g_cfg: GeneratorConfig,
    d_cfg: DiscriminatorConfig,
    t_cfg: TrainConfig,
    image_size: usize,
    epoch: u64,
    step: u64,
    manifest_hash: String,
    g_adam_t: u64,
    d_adam_t: u64,
    rng: RngState,
}

impl ModelCheckpoint {
    /// Freshly initialized model. Weights come from `t_cfg.seed`.
    pub fn new(
        g_cfg: &GeneratorConfig,
        d_cfg: &DiscriminatorConfig,
        t_cfg: &TrainConfig,
        image_size: usize,
    ) -> Result<Self, GanError> {
        g_cfg.validate(image_size)?;
        d_cfg.validate(image_size)?;
        t_cfg.validate()?;
        if d_cfg.in_channels != g_cfg.in_channels + 3 {
            return config_err("discriminator input must be generator input plus 3 channels");
        }
        let mut init = ChaCha8Rng::seed_from_u64(t_cfg.seed);
        let mut generator = Generator::new(g_cfg, &mut init);
        let mut discriminator = Discriminator::new(d_cfg, &mut init);
        let g_opt = generator.params_mut().iter().map(|(_, p)| AdamState::new(p.value.len())).collect();
        let d_opt = discriminator.params_mut().iter().map(|(_, p)| AdamState::new(p.value.len())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(t_cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            g_cfg: g_cfg.clone(),
            d_cfg: d_cfg.clone(),
            t_cfg: t_cfg.clone(),
            image_size,
            epoch: 0,
            step: 0,
            manifest_hash: String::new(),
            generator,
            discriminator,
            g_opt,
            d_opt,
            rng,
        })
    }

    fn check_pair(&self, pair: &Pair) -> Result<(), GanError> {
        let w = self.image_size;
        if pair.x.shape() != [1, self.g_cfg.in_channels, w, w] || pair.truth.shape() != [1, 3, w, w] {
            return Err(GanError::Shape(format!(
                "pair {:?} -> {:?} does not fit a {w}x{w} model with {} input channels",
                pair.x.shape(),
                pair.truth.shape(),
                self.g_cfg.in_channels
            )));
        }
        Ok(())
    }

    /// One alternating update: discriminator first, then generator.
    pub fn gan_step(&mut self, x: &Tensor<f32>, truth: &Tensor<f32>, t_cfg: &TrainConfig) -> Result<StepLosses, GanError> {
        self.check_pair(&Pair {
            x: x.clone(),
            truth: truth.clone(),
        })?;
        let adam = t_cfg.adam();
        let (fake, g_cache) = self.generator.forward(x, Mode::Train, &mut self.rng)?;
        self.generator.commit(&g_cache);

        let real_in = Tensor::concat_channels(x, truth)?;
        let fake_in = Tensor::concat_channels(x, &fake)?;
        let d = &mut self.discriminator;
        d.zero_grad();
        let (p_real, c_real) = d.forward(&real_in, Mode::Train)?;
        d.commit(&c_real);
        let (l_real, g_real) = bce_loss(&[p_real], &[1.0])?;
        d.backward(&c_real, g_real[0], true)?;
        let (p_fake, c_fake) = d.forward(&fake_in, Mode::Train)?;
        d.commit(&c_fake);
        let (l_fake, g_fake) = bce_loss(&[p_fake], &[0.0])?;
        d.backward(&c_fake, g_fake[0], true)?;
        for ((_, p), st) in d.params_mut().into_iter().zip(&mut self.d_opt) {
            st.step(&adam, p.value.data_mut(), p.grad.data())?;
        }

        let (p_gen, c_gen) = self.discriminator.forward(&fake_in, Mode::Train)?;
        self.discriminator.commit(&c_gen);
        let (g_adv, g_p) = bce_loss(&[p_gen], &[1.0])?;
        let d_in = self.discriminator.backward(&c_gen, g_p[0], false)?;
        let (_, mut d_fake) = d_in.split_channels(self.g_cfg.in_channels)?;
        let mut g_l1 = 0.0;
        if t_cfg.use_l1 {
            let (l, g) = l1_loss(fake.data(), truth.data())?;
            g_l1 = l as f64;
            let lam = t_cfg.l1_weight as f32;
            for (a, b) in d_fake.data_mut().iter_mut().zip(g) {
                *a += lam * b;
            }
        }
        self.generator.zero_grad();
        self.generator.backward(&g_cache, &d_fake)?;
        for ((_, p), st) in self.generator.params_mut().into_iter().zip(&mut self.g_opt) {
            st.step(&adam, p.value.data_mut(), p.grad.data())?;
        }
        self.step += 1;
        Ok(StepLosses {
            d_loss: (l_real + l_fake) as f64,
            g_adv: g_adv as f64,
            g_l1,
            p_real: p_real as f64,
            p_fake: p_fake as f64,
        })
    }

    fn run_epochs(
        &mut self,
        pairs: &[Pair],
        t_cfg: &TrainConfig,
        callbacks: &mut dyn FnMut(TrainEvent<'_>),
    ) -> Result<(), GanError> {
        for p in pairs {
            self.check_pair(p)?;
        }
        for _ in 0..t_cfg.epochs {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut self.rng);
            for i in order {
                let losses = self.gan_step(&pairs[i].x, &pairs[i].truth, t_cfg)?;
                callbacks(TrainEvent::Step {
                    step: self.step,
                    losses: &losses,
                });
            }
            self.epoch += 1;
            callbacks(TrainEvent::Epoch {
                epoch: self.epoch,
                model: self,
            });
        }
        Ok(())
    }

    /// Deterministic prediction in `[0, 1]`: dropout off, running statistics.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, GanError> {
        let w = self.image_size;
        if x.shape() != [1, self.g_cfg.in_channels, w, w] {
            return Err(GanError::Shape(format!("input {:?} for a {w}x{w} model", x.shape())));
        }
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.generator.forward(x, Mode::Infer, &mut unused)?.0)
    }

    pub fn infer_image(&self, x: &Tensor<f32>) -> Result<ImagePlane, GanError> {
        tensor_to_image(&self.infer(x)?)
    }

    /// Every persisted array in a fixed order, with its shape.
    fn tensors(&mut self) -> Vec<(String, &mut [f32], Vec<usize>)> {
        let mut out: Vec<(String, &mut [f32], Vec<usize>)> = Vec::new();
        for (prefix, (params, buffers), opt) in [
            ("g", self.generator.parts_mut(), &mut self.g_opt),
            ("d", self.discriminator.parts_mut(), &mut self.d_opt),
        ] {
            for ((name, p), st) in params.into_iter().zip(opt.iter_mut()) {
                let shape = p.value.shape().to_vec();
                out.push((format!("{prefix}.{name}"), p.value.data_mut(), shape.clone()));
                out.push((format!("{prefix}.{name}.adam_m"), &mut st.m, shape.clone()));
                out.push((format!("{prefix}.{name}.adam_v"), &mut st.v, shape));
            }
            for (name, b) in buffers {
                let len = b.len();
                out.push((format!("{prefix}.{name}"), b, vec![len]));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut me = self.clone();
        let header = Header {
            g_cfg: me.g_cfg.clone(),
            d_cfg: me.d_cfg.clone(),
            t_cfg: me.t_cfg.clone(),
            image_size: me.image_size,
            epoch: me.epoch,
            step: me.step,
            manifest_hash: me.manifest_hash.clone(),
            g_adam_t: me.g_opt.first().map_or(0, |s| s.t),
            d_adam_t: me.d_opt.first().map_or(0, |s| s.t),
            rng: RngState {
                seed: hex::encode(me.rng.get_seed()),
                stream: me.rng.get_stream(),
                word_pos: me.rng.get_word_pos().to_string(),
            },
        };
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let tensors = me.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, data, shape) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(0); // dtype: f32
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in &shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GanError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(GanError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(GanError::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| GanError::Checkpoint(format!("header: {e}")))?;
        let mut m = Self::new(&header.g_cfg, &header.d_cfg, &header.t_cfg, header.image_size)?;
        m.epoch = header.epoch;
        m.step = header.step;
        m.manifest_hash = header.manifest_hash;
        m.g_opt.iter_mut().for_each(|s| s.t = header.g_adam_t);
        m.d_opt.iter_mut().for_each(|s| s.t = header.d_adam_t);
        let seed: [u8; 32] = hex::decode(&header.rng.seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| GanError::Checkpoint("bad rng seed".into()))?;
        m.rng = ChaCha8Rng::from_seed(seed);
        m.rng.set_stream(header.rng.stream);
        m.rng.set_word_pos(
            header
                .rng
                .word_pos
                .parse()
                .map_err(|_| GanError::Checkpoint("bad rng position".into()))?,
        );
        let count = r.u32()? as usize;
        let mut slots = m.tensors();
        if count != slots.len() {
            return Err(GanError::Checkpoint(format!("{count} tensors, expected {}", slots.len())));
        }
        for (name, data, shape) in slots.iter_mut() {
            let nlen = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(nlen)?).map_err(|_| GanError::Checkpoint("tensor name".into()))?;
            if got != name {
                return Err(GanError::Checkpoint(format!("expected tensor {name}, found {got}")));
            }
            if r.take(1)?[0] != 0 {
                return Err(GanError::Checkpoint(format!("{name}: unsupported dtype")));
            }
            let nd = r.u32()? as usize;
            let dims = (0..nd).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
            if &dims != shape {
                return Err(GanError::Checkpoint(format!("{name}: shape {dims:?}, expected {shape:?}")));
            }
            for v in data.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            }
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(GanError::Checkpoint("trailing bytes".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GanError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GanError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GanError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GanError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GanError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Trains a fresh model for `t_cfg.epochs` passes over `pairs` in a seeded
/// shuffled order.
pub fn train(
    pairs: &[Pair],
    g_cfg: &GeneratorConfig,
    d_cfg: &DiscriminatorConfig,
    t_cfg: &TrainConfig,
    callbacks: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<ModelCheckpoint, GanError> {
    let first = pairs.first().ok_or_else(|| GanError::Config("empty dataset".into()))?;
    let w = first.truth.shape().last().copied().unwrap_or(0);
    let mut m = ModelCheckpoint::new(g_cfg, d_cfg, t_cfg, w)?;
    m.run_epochs(pairs, t_cfg, callbacks)?;
    Ok(m)
}

/// Continues training `checkpoint` on only `pairs` for `t_cfg.epochs`.
pub fn fine_tune(
    checkpoint: &ModelCheckpoint,
    pairs: &[Pair],
    t_cfg: &TrainConfig,
    callbacks: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<ModelCheckpoint, GanError> {
    if pairs.is_empty() {
        return config_err("fine-tuning needs at least one pair");
    }
    t_cfg.validate()?;
    let mut m = checkpoint.clone();
    for p in pairs {
        m.check_pair(p)?;
    }
    m.run_epochs(pairs, t_cfg, callbacks)?;
    Ok(m)
}

/// Network input for a placement and connectivity image: RGB (or luma when
/// `grayscale`) plus the scaled connectivity channel.
pub fn model_input(
    place: &ImagePlane,
    connect: &ImagePlane,
    connect_scale: f64,
    grayscale: bool,
) -> Result<Tensor<f32>, GanError> {
    let stacked = image_tensor(&raster::stack_input(place, connect, connect_scale as f32)?)?;
    if !grayscale {
        return Ok(stacked);
    }
    let luma = image_tensor(&raster::to_grayscale(place)?)?;
    let (_, conn) = stacked.split_channels(3)?;
    Ok(Tensor::concat_channels(&luma, &conn)?)
}

/// `[1, c, h, w]` tensor of an image.
pub fn image_tensor(img: &ImagePlane) -> Result<Tensor<f32>, GanError> {
    Ok(Tensor::from_vec(&[1, img.channels(), img.height(), img.width()], img.to_chw())?)
}

pub fn tensor_to_image(t: &Tensor<f32>) -> Result<ImagePlane, GanError> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 {
        return Err(GanError::Shape(format!("expected a single image, got batch {n}")));
    }
    Ok(ImagePlane::from_chw(h, w, c, t.data())?)
}

/// Loss log in CSV form.
pub fn loss_csv(rows: &[(u64, StepLosses)]) -> String {
    let mut s = String::from("step,d_loss,g_adv,g_l1\n");
    for (step, l) in rows {
        s.push_str(&format!("{step},{:.6},{:.6},{:.6}\n", l.d_loss, l.g_adv, l.g_l1));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(w: usize, base: usize) -> (GeneratorConfig, DiscriminatorConfig) {
        let mut g = GeneratorConfig::for_image(w);
        g.base_width = base;
        let d = DiscriminatorConfig::for_generator(&g);
        (g, d)
    }

    fn random_pair(w: usize, c: usize, seed: u64) -> Pair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |ch: usize| {
            let data = (0..ch * w * w).map(|_| rng.gen::<f32>()).collect();
            Tensor::from_vec(&[1, ch, w, w], data).unwrap()
        };
        Pair { x: t(c), truth: t(3) }
    }

    /// A rendered placement and its routed heat map.
    fn routed_pair(w: usize) -> Pair {
        use crate::{arch, netlist, placer, router};
        let fp = arch::build_floorplan(&Default::default()).unwrap();
        let n = netlist::generate_synthetic(&Default::default(), 2).unwrap();
        let p = placer::anneal(&n, &fp, &Default::default(), 0).unwrap().placement;
        let r = router::route(&n, &p, &fp, &Default::default()).unwrap();
        let layout = raster::RasterLayout::fit(&fp, w).unwrap();
        let scheme = raster::ColorScheme::default();
        let place = raster::render_placement(&fp, &p, &layout, &scheme).unwrap();
        let connect = raster::render_connectivity(&n, &p, &layout).unwrap();
        let heat = raster::render_heatmap(&router::utilization(&r, &fp), &place, &layout, &scheme).unwrap();
        Pair {
            x: model_input(&place, &connect, 0.1, false).unwrap(),
            truth: image_tensor(&heat).unwrap(),
        }
    }

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_widths() {
        let g = GeneratorConfig::for_image(256);
        assert_eq!(g.depth, 6);
        assert_eq!(g.widths(), vec![64, 128, 256, 512, 512, 512]);
        assert_eq!(g.decoder_in_widths(), vec![512, 1024, 1024, 512, 256, 128]);
        let d = DiscriminatorConfig::for_generator(&g);
        assert_eq!(d.in_channels, 7);
        assert_eq!(d.widths(), vec![64, 128, 256, 512, 512, 1]);
        assert_eq!(d.strides(), vec![2, 2, 2, 2, 1, 1]);
    }

    #[test]
    fn skip_modes_change_decoder_inputs() {
        let mut g = GeneratorConfig::for_image(256);
        g.skip_mode = SkipMode::None;
        assert_eq!(g.decoder_in_widths(), vec![512, 512, 512, 256, 128, 64]);
        g.skip_mode = SkipMode::Single;
        assert_eq!(g.decoder_in_widths(), vec![512, 1024, 512, 256, 128, 64]);
    }

    #[test]
    fn rejects_bad_sizes() {
        let g = GeneratorConfig::for_image(64);
        assert!(g.validate(64).is_ok());
        assert!(g.validate(40).is_err());
        let d = DiscriminatorConfig::for_generator(&g);
        assert!(d.validate(64).is_ok());
        assert!(d.validate(16).is_err());
        let mut bad = g.clone();
        bad.depth = 1;
        assert!(bad.validate(64).is_err());
    }

    #[test]
    fn output_shapes_and_range() {
        for mode in [SkipMode::All, SkipMode::Single, SkipMode::None] {
            let (mut g, d) = small(64, 8);
            g.skip_mode = mode;
            let m = ModelCheckpoint::new(&g, &d, &quick_cfg(1), 64).unwrap();
            let p = random_pair(64, 4, 2);
            let y = m.infer(&p.x).unwrap();
            assert_eq!(y.shape(), &[1, 3, 64, 64]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (prob, _) = m
                .discriminator
                .forward(&Tensor::concat_channels(&p.x, &y).unwrap(), Mode::Infer)
                .unwrap();
            assert!(prob > 0.0 && prob < 1.0);
        }
    }

    #[test]
    fn init_is_seeded() {
        let (g, d) = small(64, 8);
        let a = ModelCheckpoint::new(&g, &d, &quick_cfg(5), 64).unwrap();
        let b = ModelCheckpoint::new(&g, &d, &quick_cfg(5), 64).unwrap();
        let c = ModelCheckpoint::new(&g, &d, &quick_cfg(6), 64).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.generator, c.generator);
    }

    #[test]
    fn zero_discriminator_says_half() {
        let (g, d) = small(64, 8);
        let mut m = ModelCheckpoint::new(&g, &d, &quick_cfg(0), 64).unwrap();
        for (_, p) in m.discriminator.params_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let p = random_pair(64, 7, 3);
        let (prob, _) = m.discriminator.forward(&p.x, Mode::Infer).unwrap();
        assert_eq!(prob, 0.5);
    }

    #[test]
    fn step_bookkeeping() {
        let (g, d) = small(64, 8);
        let mut m = ModelCheckpoint::new(&g, &d, &quick_cfg(0), 64).unwrap();
        let p = random_pair(64, 4, 9);
        let l = m.gan_step(&p.x, &p.truth, &quick_cfg(0)).unwrap();
        let expect = -(l.p_real.ln()) - (1.0 - l.p_fake).ln();
        assert!((l.d_loss - expect).abs() < 1e-4, "{l:?}");
        assert!(l.g_l1 > 0.0 && l.g_adv > 0.0);
        assert_eq!(m.step, 1);

        let no_l1 = TrainConfig {
            use_l1: false,
            ..quick_cfg(0)
        };
        let l = m.gan_step(&p.x, &p.truth, &no_l1).unwrap();
        assert_eq!(l.g_l1, 0.0);
    }

    #[test]
    fn untrained_discriminator_is_near_chance() {
        let (g, d) = small(64, 8);
        for seed in 0..10 {
            let mut m = ModelCheckpoint::new(&g, &d, &quick_cfg(seed), 64).unwrap();
            let p = random_pair(64, 4, 100 + seed);
            let l = m.gan_step(&p.x, &p.truth, &quick_cfg(seed)).unwrap();
            assert!((l.d_loss - 2.0 * std::f64::consts::LN_2).abs() <= 0.3, "seed {seed}: {l:?}");
        }
    }

    #[test]
    fn single_pair_is_memorized() {
        let g = GeneratorConfig::for_image(64);
        let d = DiscriminatorConfig::for_generator(&g);
        let t = TrainConfig {
            epochs: 200,
            ..quick_cfg(3)
        };
        let mut l1 = Vec::new();
        let mut cb = |e: TrainEvent<'_>| {
            if let TrainEvent::Step { losses, .. } = e {
                l1.push(losses.g_l1);
            }
        };
        train(&[routed_pair(64)], &g, &d, &t, &mut cb).unwrap();
        assert_eq!(l1.len(), 200);
        let (first, last) = (l1[0], l1[199]);
        assert!(last < 0.25 * first, "{first} -> {last}");
    }

    #[test]
    fn l1_of_exact_prediction_is_zero() {
        let (g, d) = small(64, 8);
        let mut m = ModelCheckpoint::new(&g, &d, &quick_cfg(0), 64).unwrap();
        let p = random_pair(64, 4, 1);
        // truth equal to the generator's train-mode output for the same rng state
        let mut probe = m.clone();
        let (y, _) = probe.generator.forward(&p.x, Mode::Train, &mut probe.rng).unwrap();
        let l = m.gan_step(&p.x, &y, &quick_cfg(0)).unwrap();
        assert_eq!(l.g_l1, 0.0);
    }

    #[test]
    fn zero_epochs_keep_initial_state() {
        let (g, d) = small(64, 8);
        let t = TrainConfig {
            epochs: 0,
            ..quick_cfg(4)
        };
        let pairs = vec![random_pair(64, 4, 0)];
        let m = train(&pairs, &g, &d, &t, &mut |_| {}).unwrap();
        assert_eq!(m, ModelCheckpoint::new(&g, &d, &t, 64).unwrap());
        let f = fine_tune(&m, &pairs, &t, &mut |_| {}).unwrap();
        assert_eq!(f, m);
    }

    #[test]
    fn training_is_reproducible() {
        let (g, d) = small(64, 8);
        let pairs: Vec<_> = (0..2).map(|i| random_pair(64, 4, i)).collect();
        let t = TrainConfig {
            epochs: 2,
            ..quick_cfg(11)
        };
        let mut log = Vec::new();
        let a = train(&pairs, &g, &d, &t, &mut |e| {
            if let TrainEvent::Step { step, losses } = e {
                log.push((step, *losses));
            }
        })
        .unwrap();
        let b = train(&pairs, &g, &d, &t, &mut |_| {}).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(log.len(), 4);
        assert_eq!(a.epoch, 2);
        let csv = loss_csv(&log);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("step,d_loss,g_adv,g_l1\n1,"));
    }

    #[test]
    fn checkpoint_roundtrip_resumes_identically() {
        let (g, d) = small(64, 8);
        let pairs = vec![random_pair(64, 4, 0)];
        let t = quick_cfg(2);
        let mut m = train(&pairs, &g, &d, &t, &mut |_| {}).unwrap();
        m.manifest_hash = "abc".into();
        let bytes = m.to_bytes();
        let mut back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let la = m.gan_step(&pairs[0].x, &pairs[0].truth, &t).unwrap();
        let lb = back.gan_step(&pairs[0].x, &pairs[0].truth, &t).unwrap();
        assert_eq!(la, lb);
        assert_eq!(m.to_bytes(), back.to_bytes());

        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn fine_tune_checks_inputs() {
        let (g, d) = small(64, 8);
        let t = quick_cfg(0);
        let m = ModelCheckpoint::new(&g, &d, &t, 64).unwrap();
        assert!(fine_tune(&m, &[], &t, &mut |_| {}).is_err());
        assert!(matches!(
            fine_tune(&m, &[random_pair(64, 2, 0)], &t, &mut |_| {}),
            Err(GanError::Shape(_))
        ));
        let tuned = fine_tune(&m, &[random_pair(64, 4, 0)], &t, &mut |_| {}).unwrap();
        assert_eq!(tuned.epoch, 1);
        assert_ne!(tuned.generator, m.generator);
    }

    #[test]
    fn inference_is_deterministic() {
        let (g, d) = small(64, 8);
        let m = train(&[random_pair(64, 4, 0)], &g, &d, &quick_cfg(3), &mut |_| {}).unwrap();
        let x = random_pair(64, 4, 7).x;
        assert_eq!(m.infer(&x).unwrap(), m.infer(&x).unwrap());
    }

    #[test]
    fn config_overrides() {
        let mut t = TrainConfig::default();
        t.apply_overrides("# comment\nepochs = 3\nlr=0.001\nuse_l1=false\n\n").unwrap();
        assert_eq!((t.epochs, t.lr, t.use_l1), (3, 0.001, false));
        assert!(t.apply_overrides("nope=1").is_err());
        assert!(t.apply_overrides("epochs=x").is_err());
        assert!(t.apply_overrides("epochs").is_err());
    }

    #[test]
    fn grayscale_input_has_two_channels() {
        let place = ImagePlane::filled(8, 8, 3, 0.5).unwrap();
        let conn = ImagePlane::filled(8, 8, 1, 1.0).unwrap();
        let x = model_input(&place, &conn, 0.1, true).unwrap();
        assert_eq!(x.shape(), &[1, 2, 8, 8]);
        assert!((x.data()[64] - 0.1).abs() < 1e-6);
        let x = model_input(&place, &conn, 0.1, false).unwrap();
        assert_eq!(x.shape(), &[1, 4, 8, 8]);
    }
}
