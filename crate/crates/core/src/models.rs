//! The three classifier families, their training loop, and checkpoints.
//!
//! All families share the same head: a 1×1 convolution produces one spatial
//! map per class, global average pooling turns the maps into logits, and a
//! softmax turns logits into the clip posterior. Keeping the class maps
//! first-class (rather than folding the pooling into the graph) is what
//! makes class-activation saliency a pure read of the forward pass.
//!
//! Family shapes, at base width `c`:
//! - `resnet`: the frequency axis is split in half and each half runs its
//!   own conv stem plus `depth` residual blocks; every pooling step is
//!   2×1 (time only), so frequency is never downsampled.
//! - `fcnn`: 9 convolutions (widths c,c,2c,2c,4c,4c,4c,4c,4c) with 2×2
//!   pooling and dropout after layers 2, 4 and 7, and a channel-attention
//!   gate on the final conv output.
//! - `fsfcnn`: the fcnn layout with 11 convolutions and the first two
//!   poolings reduced to 2×1, keeping four times the frequency resolution
//!   at the attention layer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{mixup, random_crop, spec_augment};
use crate::error::Error;
use crate::features::FeatureTensor;
use crate::nn::layers::{
    BatchNorm, ChannelAttention, Conv2d, Dropout, GlobalAvgPool, Layer, MaxPool, Relu, Softmax,
};
use crate::nn::{softmax_cross_entropy, Graph, SgdMomentum, Tensor, TrainConfig};
use crate::rng::DetRng;
use crate::Result;

/// Feature tensors carry static + two delta channels.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Resnet,
    Fcnn,
    FsFcnn,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Resnet, Family::Fcnn, Family::FsFcnn];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Resnet => "resnet",
            Family::Fcnn => "fcnn",
            Family::FsFcnn => "fsfcnn",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        match s {
            "resnet" => Ok(Family::Resnet),
            "fcnn" => Ok(Family::Fcnn),
            "fsfcnn" => Ok(Family::FsFcnn),
            other => Err(Error::config(format!(
                "unknown model family {other:?}; expected resnet, fcnn or fsfcnn"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub family: Family,
    /// 10 for the scene classifier, 3 for the coarse-group classifier.
    pub n_classes: usize,
    /// Channel width of the first convolutions; later stages scale from it.
    pub base_channels: usize,
    /// Residual blocks per branch. Only the resnet family reads this; the
    /// convolutional families have fixed layer counts (9 and 11).
    pub depth: usize,
    pub dropout_rate: f64,
}

impl ArchitectureConfig {
    /// Desk-scale defaults per family.
    pub fn for_family(family: Family, n_classes: usize) -> Self {
        let (base_channels, depth, dropout_rate) = match family {
            Family::Resnet => (24, 2, 0.0),
            Family::Fcnn | Family::FsFcnn => (16, 1, 0.3),
        };
        ArchitectureConfig {
            family,
            n_classes,
            base_channels,
            depth,
            dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 3 && self.n_classes != 10 {
            return Err(Error::config(format!(
                "n_classes must be 3 or 10, got {}",
                self.n_classes
            )));
        }
        if self.base_channels < 4 {
            return Err(Error::config(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        if self.depth < 1 {
            return Err(Error::config("depth must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A classifier: a layer graph ending at the 1×1 class-map convolution.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ArchitectureConfig,
    pub graph: Graph,
}

fn conv_bn_relu(in_ch: usize, out_ch: usize, rng: &mut DetRng) -> Vec<Graph> {
    vec![
        Graph::layer(Layer::Conv2d(Conv2d::new(in_ch, out_ch, 3, 3, rng))),
        Graph::layer(Layer::BatchNorm(BatchNorm::new(out_ch))),
        Graph::layer(Layer::Relu(Relu::new())),
    ]
}

fn residual_block(ch: usize, rng: &mut DetRng) -> Graph {
    Graph::Residual(Box::new(Graph::seq(vec![
        Graph::layer(Layer::Conv2d(Conv2d::new(ch, ch, 3, 3, rng))),
        Graph::layer(Layer::BatchNorm(BatchNorm::new(ch))),
        Graph::layer(Layer::Relu(Relu::new())),
        Graph::layer(Layer::Conv2d(Conv2d::new(ch, ch, 3, 3, rng))),
        Graph::layer(Layer::BatchNorm(BatchNorm::new(ch))),
    ])))
}

fn resnet_branch(cb: usize, depth: usize, rng: &mut DetRng) -> Graph {
    let mut items = conv_bn_relu(INPUT_CHANNELS, cb, rng);
    items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 1))));
    for _ in 0..depth {
        items.push(residual_block(cb, rng));
        items.push(Graph::layer(Layer::Relu(Relu::new())));
        items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 1))));
    }
    Graph::seq(items)
}

fn head(in_ch: usize, n_classes: usize, rng: &mut DetRng) -> Graph {
    Graph::layer(Layer::Conv2d(Conv2d::new(in_ch, n_classes, 1, 1, rng)))
}

impl Model {
    /// Builds a freshly initialized model; weights are a pure function of
    /// the configuration and `seed`.
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = DetRng::derive_str(seed, &["init", &config.family.to_string()]);
        let cb = config.base_channels;
        let graph = match config.family {
            Family::Resnet => Graph::seq(vec![
                Graph::SplitFreq {
                    lo: Box::new(resnet_branch(cb, config.depth, &mut rng)),
                    hi: Box::new(resnet_branch(cb, config.depth, &mut rng)),
                },
                head(cb, config.n_classes, &mut rng),
            ]),
            Family::Fcnn => {
                let p = config.dropout_rate;
                let mut items = Vec::new();
                items.extend(conv_bn_relu(INPUT_CHANNELS, cb, &mut rng));
                items.extend(conv_bn_relu(cb, cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 2))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(cb, 2 * cb, &mut rng));
                items.extend(conv_bn_relu(2 * cb, 2 * cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 2))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(2 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 2))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.push(Graph::layer(Layer::ChannelAttention(ChannelAttention::new(
                    4 * cb,
                    &mut rng,
                ))));
                items.push(head(4 * cb, config.n_classes, &mut rng));
                Graph::seq(items)
            }
            Family::FsFcnn => {
                let p = config.dropout_rate;
                let mut items = Vec::new();
                items.extend(conv_bn_relu(INPUT_CHANNELS, cb, &mut rng));
                items.extend(conv_bn_relu(cb, cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 1))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(cb, 2 * cb, &mut rng));
                items.extend(conv_bn_relu(2 * cb, 2 * cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 1))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(2 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.push(Graph::layer(Layer::MaxPool(MaxPool::new(2, 2))));
                items.push(Graph::layer(Layer::Dropout(Dropout::new(p))));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.extend(conv_bn_relu(4 * cb, 4 * cb, &mut rng));
                items.push(Graph::layer(Layer::ChannelAttention(ChannelAttention::new(
                    4 * cb,
                    &mut rng,
                ))));
                items.push(head(4 * cb, config.n_classes, &mut rng));
                Graph::seq(items)
            }
        };
        Ok(Model {
            config: config.clone(),
            graph,
        })
    }

    /// Convolutional layers excluding the 1×1 classifier head.
    pub fn body_conv_count(&self) -> usize {
        self.graph.conv_count() - 1
    }

    /// Smallest (time, frequency) input the pooling schedule admits.
    pub fn min_input(&self) -> (usize, usize) {
        let mut h = 1;
        let mut w = 1;
        // Resnet pools sit inside parallel branches; multiplying over all of
        // them would double-count, so take the per-branch maximum instead.
        match &self.graph {
            Graph::Seq(items) => {
                for g in items {
                    if let Graph::SplitFreq { lo, .. } = g {
                        for (ph, pw) in lo.pool_windows() {
                            h *= ph;
                            w *= pw;
                        }
                    } else {
                        for (ph, pw) in g.pool_windows() {
                            h *= ph;
                            w *= pw;
                        }
                    }
                }
            }
            g => {
                for (ph, pw) in g.pool_windows() {
                    h *= ph;
                    w *= pw;
                }
            }
        }
        (h, w)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, _, h, w) = x.dims4();
        if self.config.family == Family::Resnet && w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                context: "resnet requires an even frequency dimension".into(),
                expected: vec![w + 1],
                got: vec![w],
            });
        }
        let (min_h, min_w) = self.min_input();
        if h < min_h {
            return Err(Error::TooShort {
                context: "model input time axis".into(),
                len: h,
                need: min_h,
            });
        }
        if w < min_w {
            return Err(Error::TooShort {
                context: "model input frequency axis".into(),
                len: w,
                need: min_w,
            });
        }
        Ok(())
    }

    /// Eval-mode forward to the per-class spatial maps (N, classes, H', W').
    pub fn class_maps(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.graph.forward_eval(x)
    }

    /// Eval-mode forward through everything before the classifier head: the
    /// feature maps the head weighs into class maps.
    pub fn body_maps(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let Graph::Seq(nodes) = &self.graph else {
            return Err(Error::config("model graph is not a layer sequence"));
        };
        let mut cur = x.clone();
        for node in &nodes[..nodes.len() - 1] {
            cur = node.forward_eval(&cur)?;
        }
        Ok(cur)
    }

    /// The 1×1 convolution that maps body features to class maps.
    pub fn head(&self) -> Result<&Conv2d> {
        let head = match &self.graph {
            Graph::Seq(nodes) => nodes.last(),
            _ => None,
        };
        match head {
            Some(Graph::Layer(Layer::Conv2d(c))) if c.kh == 1 && c.kw == 1 => Ok(c),
            _ => Err(Error::config(
                "model head is not a 1×1 class-map convolution",
            )),
        }
    }

    /// Posterior for one clip.
    pub fn predict(&self, features: &FeatureTensor) -> Result<Vec<f64>> {
        let x = to_input_tensor(&[features])?;
        let probs = self.predict_batch(&x)?;
        Ok(probs.data)
    }

    /// Posteriors for a batch already in network layout; rows sum to 1.
    pub fn predict_batch(&self, x: &Tensor) -> Result<Tensor> {
        let maps = self.class_maps(x)?;
        let logits = spatial_mean(&maps);
        Softmax::new().forward_eval(&logits)
    }
}

/// Mean over the spatial axes: (N, C, H, W) → (N, C). The head's logit for
/// a class is exactly the mean of that class's activation map.
pub fn spatial_mean(maps: &Tensor) -> Tensor {
    let (n, c, h, w) = maps.dims4();
    let hw = (h * w) as f64;
    let mut out = Tensor::zeros(&[n, c]);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            out.data[ni * c + ci] = maps.data[base..base + h * w].iter().sum::<f64>() / hw;
        }
    }
    out
}

/// Packs feature tensors (time, mel, channel) into network layout
/// (batch, channel, time, mel). All tensors must share one shape.
pub fn to_input_tensor(batch: &[&FeatureTensor]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::config("empty feature batch"));
    }
    let (t, m, c) = (batch[0].time(), batch[0].mels(), batch[0].channels());
    let mut out = Tensor::zeros(&[batch.len(), c, t, m]);
    for (ni, tensor) in batch.iter().enumerate() {
        if (tensor.time(), tensor.mels(), tensor.channels()) != (t, m, c) {
            return Err(Error::ShapeMismatch {
                context: format!("feature batch element {ni}"),
                expected: vec![t, m, c],
                got: vec![tensor.time(), tensor.mels(), tensor.channels()],
            });
        }
        for ((ti, mi, ci), &v) in tensor.values.indexed_iter() {
            out.data[((ni * c + ci) * t + ti) * m + mi] = v;
        }
    }
    Ok(out)
}

/// Feature-domain augmentation applied inside the training loop; `None`
/// disables a transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAugment {
    pub crop_frames: Option<usize>,
    pub mixup_alpha: Option<f64>,
    pub specaug_fraction: Option<f64>,
}

impl FeatureAugment {
    pub fn none() -> Self {
        FeatureAugment {
            crop_frames: None,
            mixup_alpha: None,
            specaug_fraction: None,
        }
    }
}

/// What a finished training run reports.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains in place: shuffled mini-batches, per batch random crop → mixup →
/// SpecAugment (each only when enabled), SGD with momentum under the
/// cosine-restart schedule. Deterministic for a given seed.
pub fn train(
    model: &mut Model,
    dataset: &[(FeatureTensor, usize)],
    tc: &TrainConfig,
    aug: &FeatureAugment,
) -> Result<TrainingOutcome> {
    tc.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let k = model.config.n_classes;
    for (i, (tensor, label)) in dataset.iter().enumerate() {
        if *label >= k {
            return Err(Error::config(format!(
                "clip {i} has label {label}, but the model has {k} classes"
            )));
        }
        if let Some(crop) = aug.crop_frames {
            if tensor.time() < crop {
                return Err(Error::TooShort {
                    context: format!("clip {i} for random crop"),
                    len: tensor.time(),
                    need: crop,
                });
            }
        }
    }

    let mut rng = DetRng::derive_str(tc.seed, &["train", &model.config.family.to_string()]);
    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(tc.batch_size);
    let mut opt = SgdMomentum::new();
    let mut loss_curve = Vec::with_capacity(tc.epochs);
    let mut global_step = 0usize;

    for _ in 0..tc.epochs {
        let order = rng.permutation(n);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let mut batch: Vec<(FeatureTensor, Vec<f64>)> = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (tensor, label) = &dataset[idx];
                let tensor = match aug.crop_frames {
                    Some(crop) => random_crop(tensor, crop, &mut rng)?,
                    None => tensor.clone(),
                };
                let mut one_hot = vec![0.0; k];
                one_hot[*label] = 1.0;
                batch.push((tensor, one_hot));
            }
            if let Some(alpha) = aug.mixup_alpha {
                batch = mixup(&batch, alpha, &mut rng)?;
            }
            if let Some(fraction) = aug.specaug_fraction {
                for (tensor, _) in batch.iter_mut() {
                    *tensor = spec_augment(tensor, fraction, &mut rng)?;
                }
            }

            let refs: Vec<&FeatureTensor> = batch.iter().map(|(t, _)| t).collect();
            let x = to_input_tensor(&refs)?;
            model.check_input(&x)?;
            let mut labels = Tensor::zeros(&[batch.len(), k]);
            for (ni, (_, row)) in batch.iter().enumerate() {
                labels.data[ni * k..(ni + 1) * k].copy_from_slice(row);
            }

            let lr = tc.lr_at(global_step, steps_per_epoch);
            model.graph.zero_grads();
            let maps = model.graph.forward_train(&x, &mut rng)?;
            let mut pool = GlobalAvgPool::new();
            let logits = pool.forward_train(&maps)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss".into(),
                    step: global_step,
                    lr,
                });
            }
            let dmaps = pool.backward(&dlogits)?;
            model.graph.backward(&dmaps)?;
            opt.step(&mut model.graph, lr, tc.momentum, global_step)?;

            epoch_loss += loss;
            global_step += 1;
        }
        loss_curve.push(epoch_loss / steps_per_epoch as f64);
    }

    Ok(TrainingOutcome {
        final_loss: loss_curve.last().copied().unwrap_or(f64::NAN),
        loss_curve,
        steps: global_step,
    })
}

/// Spec-shaped convenience constructors (initialization seed 0).
pub fn build_resnet(config: &ArchitectureConfig) -> Result<Model> {
    expect_family(config, Family::Resnet)?;
    Model::build(config, 0)
}

pub fn build_fcnn(config: &ArchitectureConfig) -> Result<Model> {
    expect_family(config, Family::Fcnn)?;
    Model::build(config, 0)
}

pub fn build_fsfcnn(config: &ArchitectureConfig) -> Result<Model> {
    expect_family(config, Family::FsFcnn)?;
    Model::build(config, 0)
}

fn expect_family(config: &ArchitectureConfig, family: Family) -> Result<()> {
    if config.family != family {
        return Err(Error::config(format!(
            "builder for {family} called with family {}",
            config.family
        )));
    }
    Ok(())
}

// ------------------------------------------------------------ checkpoints

const CHECKPOINT_MAGIC: &str = "ASCKPT";
const CHECKPOINT_VERSION: u32 = 1;

fn checkpoint_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Writes a model: text header (magic, version, architecture, graph
/// description, caller metadata) then every parameter and batch-norm
/// statistic as little-endian 64-bit floats in graph traversal order.
pub fn save_checkpoint(path: &Path, model: &Model, meta: &[(String, String)]) -> Result<()> {
    let mut values: Vec<f64> = Vec::new();
    model.graph.visit_layers(&mut |l| {
        for v in l.state() {
            values.extend_from_slice(v);
        }
    });

    let mut out = String::new();
    out.push_str(&format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n"));
    let c = &model.config;
    out.push_str(&format!("family={}\n", c.family));
    out.push_str(&format!("n_classes={}\n", c.n_classes));
    out.push_str(&format!("base_channels={}\n", c.base_channels));
    out.push_str(&format!("depth={}\n", c.depth));
    out.push_str(&format!("dropout_rate={}\n", c.dropout_rate));
    out.push_str(&format!("graph={}\n", model.graph.describe()));
    for (key, value) in meta {
        if key.contains('=') || key.contains('\n') || value.contains('\n') {
            return Err(checkpoint_err(path, format!("metadata key {key:?} invalid")));
        }
        out.push_str(&format!("meta.{key}={value}\n"));
    }
    out.push_str(&format!("params={}\n", values.len()));
    out.push_str("---\n");

    let mut bytes = out.into_bytes();
    bytes.reserve(values.len() * 8);
    for v in &values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a checkpoint back into a model plus the caller metadata saved with
/// it. The graph is rebuilt from the recorded architecture and must match
/// the recorded structural description exactly.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Vec<(String, String)>)> {
    let bytes = std::fs::read(path)?;
    let sep = b"\n---\n";
    let header_end = bytes
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| checkpoint_err(path, "missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| checkpoint_err(path, "header is not UTF-8"))?;
    let payload = &bytes[header_end + sep.len()..];

    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    match first.strip_prefix(CHECKPOINT_MAGIC).map(str::trim) {
        Some(v) if v == CHECKPOINT_VERSION.to_string() => {}
        Some(v) => return Err(checkpoint_err(path, format!("unsupported version {v:?}"))),
        None => return Err(checkpoint_err(path, "bad magic")),
    }

    let mut fields = std::collections::HashMap::new();
    let mut meta = Vec::new();
    for line in lines {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| checkpoint_err(path, format!("malformed header line {line:?}")))?;
        match key.strip_prefix("meta.") {
            Some(name) => meta.push((name.to_string(), value.to_string())),
            None => {
                fields.insert(key.to_string(), value.to_string());
            }
        }
    }
    let get = |name: &str| {
        fields
            .get(name)
            .ok_or_else(|| checkpoint_err(path, format!("missing header field {name}")))
    };
    let parse = |name: &str| -> Result<usize> {
        get(name)?
            .parse()
            .map_err(|_| checkpoint_err(path, format!("field {name} is not a count")))
    };

    let config = ArchitectureConfig {
        family: get("family")?.parse()?,
        n_classes: parse("n_classes")?,
        base_channels: parse("base_channels")?,
        depth: parse("depth")?,
        dropout_rate: get("dropout_rate")?
            .parse()
            .map_err(|_| checkpoint_err(path, "field dropout_rate is not a number"))?,
    };
    let mut model = Model::build(&config, 0)?;
    let described = model.graph.describe();
    if get("graph")? != &described {
        return Err(checkpoint_err(
            path,
            format!("graph mismatch: stored {:?}, rebuilt {described:?}", get("graph")?),
        ));
    }

    let expected: usize = parse("params")?;
    if payload.len() != expected * 8 {
        return Err(checkpoint_err(
            path,
            format!(
                "payload holds {} bytes, expected {} for {expected} parameters",
                payload.len(),
                expected * 8
            ),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect();

    let mut offset = 0usize;
    let mut overflow = false;
    model.graph.visit_layers_mut(&mut |l| {
        for v in l.state_mut() {
            let len = v.len();
            if offset + len > values.len() {
                overflow = true;
                return;
            }
            v.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
    });
    if overflow || offset != values.len() {
        return Err(checkpoint_err(
            path,
            format!("graph expects {offset} parameters, file holds {}", values.len()),
        ));
    }
    Ok((model, meta))
}

/// Key=value run description for the metadata file written next to each
/// checkpoint: everything needed to reproduce the run.
pub fn run_metadata(
    model: &Model,
    tc: &TrainConfig,
    aug: &FeatureAugment,
    outcome: &TrainingOutcome,
) -> String {
    let c = &model.config;
    let opt_str = |v: &dyn fmt::Display| v.to_string();
    let mut s = String::new();
    s.push_str(&format!("family={}\n", c.family));
    s.push_str(&format!("n_classes={}\n", c.n_classes));
    s.push_str(&format!("base_channels={}\n", c.base_channels));
    s.push_str(&format!("depth={}\n", c.depth));
    s.push_str(&format!("dropout_rate={}\n", c.dropout_rate));
    s.push_str(&format!("lr_max={}\n", tc.lr_max));
    s.push_str(&format!("lr_min={}\n", tc.lr_min));
    s.push_str(&format!("restart_period_epochs={}\n", tc.restart_period_epochs));
    s.push_str(&format!("period_multiplier={}\n", tc.period_multiplier));
    s.push_str(&format!("momentum={}\n", tc.momentum));
    s.push_str(&format!("batch_size={}\n", tc.batch_size));
    s.push_str(&format!("epochs={}\n", tc.epochs));
    s.push_str(&format!("seed={}\n", tc.seed));
    let fmt_opt = |o: Option<&dyn fmt::Display>| match o {
        Some(v) => opt_str(v),
        None => "off".to_string(),
    };
    s.push_str(&format!(
        "crop_frames={}\n",
        fmt_opt(aug.crop_frames.as_ref().map(|v| v as &dyn fmt::Display))
    ));
    s.push_str(&format!(
        "mixup_alpha={}\n",
        fmt_opt(aug.mixup_alpha.as_ref().map(|v| v as &dyn fmt::Display))
    ));
    s.push_str(&format!(
        "specaug_fraction={}\n",
        fmt_opt(aug.specaug_fraction.as_ref().map(|v| v as &dyn fmt::Display))
    ));
    s.push_str(&format!("steps={}\n", outcome.steps));
    s.push_str(&format!("final_loss={}\n", outcome.final_loss));
    s
}
