//! Concatenation-residual CNN: each block applies two 3×3 convolutions with
//! ReLU, concatenates the result with the block input along channels, then
//! max-pools 2×2 and instance-normalises. The last block's features are
//! pooled (see [`HeadPool`]) into a dense ReLU layer and a dense output
//! layer with softmax.

use std::collections::BTreeSet;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::tensor::Tensor;
use super::{ModelError, Result};
use crate::metrics::{self, softmax_unchecked};
use crate::rng;

/// Channel widths of the five baseline blocks.
pub const BASELINE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
/// Width of the hidden dense layer.
pub const BASELINE_HIDDEN: usize = 128;

/// How the last block's `(C, H, W)` output becomes the dense-head input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPool {
    /// Every feature value, length `C·H·W`.
    Flatten,
    /// Per-channel spatial maximum, length `C`. Averaging is not an option
    /// because instance normalisation makes every channel mean zero.
    #[default]
    GlobalMax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    /// Convolution width of each residual block.
    pub block_widths: Vec<usize>,
    pub hidden: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub head_pool: HeadPool,
}

/// Geometry of one residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub conv_channels: usize,
    pub height: usize,
    pub width: usize,
    /// `conv_channels + in_channels`.
    pub out_channels: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl NetworkSpec {
    /// Five blocks of widths 16..256, a 128-unit hidden layer, three input channels.
    pub fn baseline(num_classes: usize, height: usize, width: usize) -> Result<Self> {
        let spec = Self {
            input: [3, height, width],
            block_widths: BASELINE_WIDTHS.to_vec(),
            hidden: BASELINE_HIDDEN,
            num_classes,
            head_pool: HeadPool::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(2..=4).contains(&self.num_classes) {
            return bad(format!("num_classes {} not in 2..=4", self.num_classes));
        }
        if self.block_widths.is_empty() || self.block_widths.contains(&0) {
            return bad("block widths must be non-empty and positive".into());
        }
        if self.input.contains(&0) || self.hidden == 0 {
            return bad("input dimensions and hidden width must be positive".into());
        }
        let shrink = 1usize << self.block_widths.len().min(63);
        if self.input[1] < shrink || self.input[2] < shrink {
            return bad(format!(
                "input {}x{} too small for {} pooling stages",
                self.input[1],
                self.input[2],
                self.block_widths.len()
            ));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn blocks(&self) -> Vec<BlockShape> {
        let [mut c, mut h, mut w] = self.input;
        self.block_widths
            .iter()
            .map(|&conv| {
                let shape = BlockShape {
                    in_channels: c,
                    conv_channels: conv,
                    height: h,
                    width: w,
                    out_channels: conv + c,
                    out_height: h / 2,
                    out_width: w / 2,
                };
                (c, h, w) = (shape.out_channels, shape.out_height, shape.out_width);
                shape
            })
            .collect()
    }

    /// Length of the pooled feature vector entering the dense head.
    pub fn feature_len(&self) -> usize {
        let last = *self.blocks().last().expect("validated: at least one block");
        match self.head_pool {
            HeadPool::Flatten => last.out_channels * last.out_height * last.out_width,
            HeadPool::GlobalMax => last.out_channels,
        }
    }

    /// Trainable layer ids in forward order: `block<i>.conv1`, `block<i>.conv2`
    /// (1-based), `dense1`, `dense2`.
    pub fn layer_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for b in 1..=self.block_widths.len() {
            ids.push(format!("block{b}.conv1"));
            ids.push(format!("block{b}.conv2"));
        }
        ids.push("dense1".into());
        ids.push("dense2".into());
        ids
    }

    /// `(name, shape)` of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        for (b, blk) in self.blocks().iter().enumerate() {
            let n = b + 1;
            let c = blk.conv_channels;
            shapes.push((format!("block{n}.conv1.weight"), vec![c, blk.in_channels, 3, 3]));
            shapes.push((format!("block{n}.conv1.bias"), vec![c]));
            shapes.push((format!("block{n}.conv2.weight"), vec![c, c, 3, 3]));
            shapes.push((format!("block{n}.conv2.bias"), vec![c]));
        }
        let f = self.feature_len();
        shapes.push(("dense1.weight".into(), vec![self.hidden, f]));
        shapes.push(("dense1.bias".into(), vec![self.hidden]));
        shapes.push(("dense2.weight".into(), vec![self.num_classes, self.hidden]));
        shapes.push(("dense2.bias".into(), vec![self.num_classes]));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    /// Layer id this parameter belongs to (name without `.weight`/`.bias`).
    pub fn layer(&self) -> &str {
        self.name.rsplit_once('.').map_or(&self.name, |(l, _)| l)
    }
}

/// Per-parameter gradients; `None` for frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub params: Vec<Param>,
    frozen: BTreeSet<String>,
}

struct BlockCache {
    cols1: Vec<f64>,
    a1: Vec<f64>,
    cols2: Vec<f64>,
    a2: Vec<f64>,
    pool_idx: Vec<usize>,
    y: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Where inside a block a backward hook captures the gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// ReLU output of the second convolution, `(conv_channels, H, W)`.
    #[default]
    Activation,
    /// Block output after concatenation, pooling and normalisation,
    /// `(out_channels, H/2, W/2)`.
    Output,
}

/// Intermediate values of one sample's forward pass.
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    flat: Vec<f64>,
    /// Spatial argmax per channel under [`HeadPool::GlobalMax`].
    head_idx: Vec<usize>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    /// ReLU output of the second convolution of `block` (0-based), `(C, H, W)`.
    pub fn block_activation(&self, block: usize) -> &[f64] {
        &self.blocks[block].a2
    }

    /// Output of `block` after pooling and normalisation.
    pub fn block_output(&self, block: usize) -> &[f64] {
        &self.blocks[block].y
    }

    pub fn tapped(&self, block: usize, tap: Tap) -> &[f64] {
        match tap {
            Tap::Activation => self.block_activation(block),
            Tap::Output => self.block_output(block),
        }
    }
}

impl Network {
    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(seed);
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; len]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self {
            spec,
            params,
            frozen: BTreeSet::new(),
        })
    }

    /// Baseline network for `num_classes` on `height × width` inputs.
    pub fn baseline(num_classes: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        Self::new(NetworkSpec::baseline(num_classes, height, width)?, seed)
    }

    /// Rebuilds a network from explicit parameters, checking names and shapes.
    pub fn from_params(spec: NetworkSpec, params: Vec<Param>, frozen: BTreeSet<String>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if *name != p.name || *shape != p.shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::ShapeMismatch(format!(
                    "parameter {} does not match {name}{shape:?}",
                    p.name
                )));
            }
        }
        let ids = spec.layer_ids();
        if let Some(bad) = frozen.iter().find(|f| !ids.contains(f)) {
            return Err(ModelError::UnknownLayer(bad.clone()));
        }
        Ok(Self { spec, params, frozen })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn frozen_layers(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, layer: &str) -> bool {
        self.frozen.contains(layer)
    }

    /// Freezes layers by id or group. A selector is a layer id, a block
    /// prefix such as `block2`, `features` (all convolutions), `head` (the
    /// dense layers) or `all`. Returns the newly frozen set.
    pub fn freeze(&mut self, selectors: &[&str]) -> Result<&BTreeSet<String>> {
        let ids = self.spec.layer_ids();
        let mut chosen = Vec::new();
        for sel in selectors {
            let matched: Vec<&String> = ids
                .iter()
                .filter(|id| match *sel {
                    "all" => true,
                    "features" => id.starts_with("block"),
                    "head" => id.starts_with("dense"),
                    s => id.as_str() == s || id.starts_with(&format!("{s}.")),
                })
                .collect();
            if matched.is_empty() {
                return Err(ModelError::UnknownLayer(sel.to_string()));
            }
            chosen.extend(matched.into_iter().cloned());
        }
        self.frozen.extend(chosen);
        Ok(&self.frozen)
    }

    /// Freezes every layer except those matched by `selectors`.
    pub fn freeze_all_but(&mut self, selectors: &[&str]) -> Result<&BTreeSet<String>> {
        let mut probe = self.clone();
        probe.frozen.clear();
        probe.freeze(selectors)?;
        let keep = probe.frozen;
        self.frozen = self
            .spec
            .layer_ids()
            .into_iter()
            .filter(|id| !keep.contains(id))
            .collect();
        Ok(&self.frozen)
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    /// Whether each parameter tensor receives gradients.
    pub fn trainable(&self) -> Vec<bool> {
        self.params.iter().map(|p| !self.frozen.contains(p.layer())).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_len() {
            return Err(ModelError::ShapeMismatch(format!(
                "sample of length {} for input {:?}",
                x.len(),
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Forward pass of one `(C, H, W)` sample, keeping intermediates.
    pub fn forward_sample(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let blocks = self.spec.blocks();
        let mut caches: Vec<BlockCache> = Vec::with_capacity(blocks.len());
        for (b, shape) in blocks.iter().enumerate() {
            let input: &[f64] = if b == 0 { x } else { &caches[b - 1].y };
            let hw = shape.height * shape.width;
            let (w1, b1, w2, b2) = (
                &self.params[4 * b].data,
                &self.params[4 * b + 1].data,
                &self.params[4 * b + 2].data,
                &self.params[4 * b + 3].data,
            );
            let cols1 = im2col(input, shape.in_channels, shape.height, shape.width);
            let mut a1 = conv_forward(&cols1, w1, b1, hw);
            relu_inplace(&mut a1);
            let cols2 = im2col(&a1, shape.conv_channels, shape.height, shape.width);
            let mut a2 = conv_forward(&cols2, w2, b2, hw);
            relu_inplace(&mut a2);
            let mut cat = Vec::with_capacity(shape.out_channels * hw);
            cat.extend_from_slice(&a2);
            cat.extend_from_slice(input);
            debug_assert_eq!(cat.len(), shape.out_channels * hw);
            let (pooled, pool_idx) = maxpool_forward(&cat, shape.out_channels, shape.height, shape.width);
            let (y, inv_std) = instance_norm_forward(&pooled, shape.out_channels, shape.out_height * shape.out_width);
            caches.push(BlockCache {
                cols1,
                a1,
                cols2,
                a2,
                pool_idx,
                y,
                inv_std,
            });
        }
        let nb = blocks.len();
        let last = &blocks[nb - 1];
        let (flat, head_idx) = match self.spec.head_pool {
            HeadPool::Flatten => (caches[nb - 1].y.clone(), Vec::new()),
            HeadPool::GlobalMax => global_max(&caches[nb - 1].y, last.out_height * last.out_width),
        };
        let mut hidden = dense_forward(&flat, &self.params[4 * nb].data, &self.params[4 * nb + 1].data);
        relu_inplace(&mut hidden);
        let logits = dense_forward(&hidden, &self.params[4 * nb + 2].data, &self.params[4 * nb + 3].data);
        Ok(ForwardCache {
            blocks: caches,
            flat,
            head_idx,
            hidden,
            logits,
        })
    }

    /// Logits of one sample.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_sample(x)?.logits)
    }

    /// Class probabilities of one sample.
    pub fn predict_sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_unchecked(&self.logits(x)?))
    }

    /// Softmax probabilities for a `(batch, C, H, W)` tensor, shape `(batch, classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let [c, h, w] = self.spec.input;
        if batch.shape() != [batch.batch(), c, h, w] {
            return Err(ModelError::ShapeMismatch(format!(
                "batch shape {:?} for input {:?}",
                batch.shape(),
                self.spec.input
            )));
        }
        let mut out = Vec::with_capacity(batch.batch() * self.spec.num_classes);
        for i in 0..batch.batch() {
            out.extend(self.predict_sample(batch.item(i))?);
        }
        Tensor::new(vec![batch.batch(), self.spec.num_classes], out)
    }

    /// Zero gradient buffers for trainable parameters.
    pub fn zero_grads(&self) -> Gradients {
        Gradients(
            self.params
                .iter()
                .zip(self.trainable())
                .map(|(p, t)| t.then(|| vec![0.0; p.data.len()]))
                .collect(),
        )
    }

    /// Reverse pass for one sample given `∂L/∂logits`. Accumulates into
    /// `grads` and, when `hook` names a block, returns the gradient with
    /// respect to that block's tapped tensor.
    pub fn backward_sample(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        grads: &mut Gradients,
        hook: Option<(usize, Tap)>,
    ) -> Option<Vec<f64>> {
        let blocks = self.spec.blocks();
        let nb = blocks.len();
        let trainable = self.trainable();
        // Lowest block that still needs a gradient signal.
        let stop = (0..nb)
            .find(|&b| trainable[4 * b] || trainable[4 * b + 2])
            .into_iter()
            .chain(hook.map(|(b, _)| b))
            .min();
        let (_, head) = grads.0.split_at_mut(4 * nb);
        let [gw1, gb1, gw2, gb2] = head else {
            unreachable!("head has four parameter tensors")
        };
        let mut dz = dense_backward(
            &cache.hidden,
            &self.params[4 * nb + 2].data,
            dlogits,
            zip_mut(gw2, gb2),
            true,
        )
        .expect("requested");
        relu_backward(&cache.hidden, &mut dz);
        let w_dense1 = &self.params[4 * nb].data;
        let Some(stop) = stop else {
            dense_backward(&cache.flat, w_dense1, &dz, zip_mut(gw1, gb1), false);
            return None;
        };
        let dflat = dense_backward(&cache.flat, w_dense1, &dz, zip_mut(gw1, gb1), true).expect("requested");
        let mut dy = match self.spec.head_pool {
            HeadPool::Flatten => dflat,
            HeadPool::GlobalMax => {
                let last = &blocks[nb - 1];
                let ohw = last.out_height * last.out_width;
                let mut dy = vec![0.0; last.out_channels * ohw];
                for (c, (&g, &i)) in dflat.iter().zip(&cache.head_idx).enumerate() {
                    dy[c * ohw + i] = g;
                }
                dy
            }
        };
        let mut hooked = None;
        for b in (stop..nb).rev() {
            let shape = &blocks[b];
            let bc = &cache.blocks[b];
            let hw = shape.height * shape.width;
            let ohw = shape.out_height * shape.out_width;
            if hook == Some((b, Tap::Output)) {
                hooked = Some(dy.clone());
                if b == stop {
                    break;
                }
            }
            let dpooled = instance_norm_backward(&bc.y, &bc.inv_std, &dy, ohw);
            let dcat = maxpool_backward(&dpooled, &bc.pool_idx, shape.out_channels * hw);
            let (da2, dx_direct) = dcat.split_at(shape.conv_channels * hw);
            if hook == Some((b, Tap::Activation)) {
                hooked = Some(da2.to_vec());
            }
            let mut dz2 = da2.to_vec();
            relu_backward(&bc.a2, &mut dz2);
            let (lo, hi) = grads.0.split_at_mut(4 * b + 2);
            let (g2w, g2b) = hi.split_at_mut(1);
            let dcols2 = conv_backward(
                &bc.cols2,
                &self.params[4 * b + 2].data,
                &dz2,
                hw,
                zip_mut(&mut g2w[0], &mut g2b[0]),
                true,
            )
            .expect("requested");
            let mut da1 = col2im(&dcols2, shape.conv_channels, shape.height, shape.width);
            relu_backward(&bc.a1, &mut da1);
            let (g1w, g1b) = lo[4 * b..].split_at_mut(1);
            let need_input = b > stop;
            let dcols1 = conv_backward(
                &bc.cols1,
                &self.params[4 * b].data,
                &da1,
                hw,
                zip_mut(&mut g1w[0], &mut g1b[0]),
                need_input,
            );
            if let Some(dcols1) = dcols1 {
                let mut dx = col2im(&dcols1, shape.in_channels, shape.height, shape.width);
                dx.iter_mut().zip(dx_direct).for_each(|(a, b)| *a += b);
                dy = dx;
            }
        }
        hooked
    }

    /// Batch-mean weighted cross-entropy over `samples` (each of input length),
    /// its gradient, and the per-sample probabilities (row-major).
    pub fn loss_and_grad(
        &self,
        samples: &[&[f64]],
        targets: &[usize],
        weights: &[f64],
    ) -> Result<(f64, Gradients, Vec<f64>)> {
        if samples.len() != targets.len() || samples.is_empty() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} samples for {} targets",
                samples.len(),
                targets.len()
            )));
        }
        let batch = samples.len() as f64;
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(samples.len() * self.spec.num_classes);
        for (x, &t) in samples.iter().zip(targets) {
            let cache = self.forward_sample(x)?;
            let out = metrics::wce_loss(&cache.logits, &[t], weights)?;
            loss += out.loss / batch;
            let dlogits: Vec<f64> = out.grad.iter().map(|g| g / batch).collect();
            self.backward_sample(&cache, &dlogits, &mut grads, None);
            probs.extend(out.probs);
        }
        Ok((loss, grads, probs))
    }
}

/// Per-channel maximum over `hw` positions and its first argmax.
fn global_max(x: &[f64], hw: usize) -> (Vec<f64>, Vec<usize>) {
    x.chunks_exact(hw)
        .map(|ch| {
            ch.iter().enumerate().fold(
                (f64::NEG_INFINITY, 0),
                |(m, mi), (i, &v)| if v > m { (v, i) } else { (m, mi) },
            )
        })
        .unzip()
}

fn zip_mut<'a>(w: &'a mut Option<Vec<f64>>, b: &'a mut Option<Vec<f64>>) -> Option<(&'a mut [f64], &'a mut [f64])> {
    match (w.as_mut(), b.as_mut()) {
        (Some(w), Some(b)) => Some((w.as_mut_slice(), b.as_mut_slice())),
        _ => None,
    }
}
