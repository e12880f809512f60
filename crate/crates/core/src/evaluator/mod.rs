//! Policy-value evaluator: maps an image to a distribution over the catalog
//! and a scalar value estimate in (0, 1).
//!
//! The reference network is a small CNN: stride-2 3x3 conv blocks with a
//! bounded rectifier, global average pooling, then two feed-forward heads
//! (softmax policy, sigmoid value) with dropout on the first layer of each
//! head. Internals run in f64; the on-disk format stores f32 tensors.

mod nn;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mcts::{PolicyValue, PolicyValueOutput};
use crate::ops::Catalog;
use crate::pipeline::Triplet;

pub use nn::NamedTensor;

const MAGIC: &[u8; 4] = b"TRNH";
const FORMAT_VERSION: u32 = 1;
const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub conv_channels: Vec<usize>,
    pub head_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            conv_channels: vec![16, 32, 64, 64],
            head_hidden: 128,
        }
    }
}

/// Everything needed to reconstruct tensor shapes exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub architecture: Architecture,
    pub catalog: String,
    pub actions: usize,
    pub input_resolution: usize,
    pub dropout_p: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluatorOutput {
    /// Probability over catalog operations; sums to 1.
    pub policy: Vec<f64>,
    /// Expected-return estimate in (0, 1).
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            steps_per_round: 160,
            batch_size: 16,
            seed: 0,
        }
    }
}

pub struct Evaluator {
    desc: ModelDescriptor,
    tensors: Vec<NamedTensor>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let params: usize = self.tensors.iter().map(NamedTensor::len).sum();
        f.debug_struct("Evaluator")
            .field("descriptor", &self.desc)
            .field("parameters", &params)
            .finish()
    }
}

fn tensor_specs(desc: &ModelDescriptor) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    let mut in_c = 3usize;
    for (i, &out_c) in desc.architecture.conv_channels.iter().enumerate() {
        specs.push((format!("conv{i}.weight"), vec![out_c, in_c, 3, 3]));
        specs.push((format!("conv{i}.bias"), vec![out_c]));
        in_c = out_c;
    }
    let feat = in_c;
    let hidden = desc.architecture.head_hidden;
    for head in ["policy", "value"] {
        let out = if head == "policy" { desc.actions } else { 1 };
        specs.push((format!("{head}.fc1.weight"), vec![hidden, feat]));
        specs.push((format!("{head}.fc1.bias"), vec![hidden]));
        specs.push((format!("{head}.fc2.weight"), vec![out, hidden]));
        specs.push((format!("{head}.fc2.bias"), vec![out]));
    }
    specs
}

struct HeadTrace {
    h_pre: Vec<f64>,
    h_post: Vec<f64>,
    /// Per-unit dropout multiplier (1/(1-p) kept, 0 dropped); empty when
    /// dropout was not applied.
    drop: Vec<f64>,
}

struct ConvStage {
    input: Vec<f64>,
    in_dims: (usize, usize, usize),
    pre: Vec<f64>,
    out_dims: (usize, usize, usize),
}

struct Trace {
    stages: Vec<ConvStage>,
    feat: Vec<f64>,
    policy_head: HeadTrace,
    value_head: HeadTrace,
    policy: Vec<f64>,
    value: f64,
}

impl Evaluator {
    /// Fresh network with fan-in-scaled uniform weights and zero biases.
    pub fn new(desc: ModelDescriptor, seed: u64) -> Result<Evaluator> {
        if desc.architecture.conv_channels.is_empty() {
            return Err(Error::Config("at least one conv block required".into()));
        }
        if desc.actions == 0 || desc.input_resolution == 0 || desc.architecture.head_hidden == 0 {
            return Err(Error::Config(
                "actions, input resolution and head width must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&desc.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {}",
                desc.dropout_p
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = tensor_specs(&desc)
            .into_iter()
            .map(|(name, dims)| {
                let mut t = NamedTensor::zeros(&name, dims);
                if name.ends_with(".weight") {
                    let fan_in: usize = t.dims[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    for v in &mut t.data {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                t
            })
            .collect();
        Ok(Evaluator { desc, tensors })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    pub fn actions(&self) -> usize {
        self.desc.actions
    }

    pub fn input_resolution(&self) -> usize {
        self.desc.input_resolution
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    /// Add `delta` to one parameter element (finite-difference probes).
    pub fn nudge_param(&mut self, tensor: usize, index: usize, delta: f64) {
        self.tensors[tensor].data[index] += delta;
    }

    pub fn validate_catalog(&self, catalog: &Catalog) -> Result<()> {
        if catalog.len() != self.desc.actions {
            return Err(Error::ModelCatalogMismatch {
                model_actions: self.desc.actions,
                catalog: catalog.name.clone(),
                catalog_actions: catalog.len(),
            });
        }
        Ok(())
    }

    fn input_from_image(&self, img: &Image) -> Result<Vec<f64>> {
        let r = self.desc.input_resolution;
        let resized;
        let src = if img.dims() == (r, r) {
            img
        } else {
            resized = img.resize(r, r)?;
            &resized
        };
        let mut chw = vec![0.0f64; 3 * r * r];
        for (i, px) in src.data().chunks(3).enumerate() {
            chw[i] = px[0] as f64;
            chw[r * r + i] = px[1] as f64;
            chw[2 * r * r + i] = px[2] as f64;
        }
        Ok(chw)
    }

    fn tensor(&self, name: &str) -> &NamedTensor {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .expect("tensor name from canonical spec")
    }

    fn head_forward(
        &self,
        head: &str,
        feat: &[f64],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (HeadTrace, Vec<f64>) {
        let w1 = self.tensor(&format!("{head}.fc1.weight"));
        let b1 = self.tensor(&format!("{head}.fc1.bias"));
        let w2 = self.tensor(&format!("{head}.fc2.weight"));
        let b2 = self.tensor(&format!("{head}.fc2.bias"));
        let h_pre = nn::fc_forward(feat, &w1.data, &b1.data);
        let mut h_post = nn::relu_forward(&h_pre);
        let p = self.desc.dropout_p;
        let mut drop = Vec::new();
        if p > 0.0 {
            if let Some(rng) = rng.as_deref_mut() {
                let keep = 1.0 - p;
                drop = h_post
                    .iter()
                    .map(|_| {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                for (v, &m) in h_post.iter_mut().zip(&drop) {
                    *v *= m;
                }
            }
        }
        let out = nn::fc_forward(&h_post, &w2.data, &b2.data);
        (
            HeadTrace {
                h_pre,
                h_post,
                drop,
            },
            out,
        )
    }

    fn forward_traced(
        &self,
        img: &Image,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Trace, EvaluatorOutput)> {
        let input = self.input_from_image(img)?;
        let r = self.desc.input_resolution;
        let mut stages = Vec::with_capacity(self.desc.architecture.conv_channels.len());
        let mut current = input;
        let mut dims = (3usize, r, r);
        for (i, &out_c) in self.desc.architecture.conv_channels.iter().enumerate() {
            let w = self.tensor(&format!("conv{i}.weight"));
            let b = self.tensor(&format!("conv{i}.bias"));
            let (pre, oh, ow) = nn::conv_forward(&current, dims, &w.data, &b.data, out_c);
            let post = nn::clamp01_forward(&pre);
            stages.push(ConvStage {
                input: current,
                in_dims: dims,
                pre,
                out_dims: (out_c, oh, ow),
            });
            current = post;
            dims = (out_c, oh, ow);
        }
        let feat = nn::gap_forward(&current, dims);

        let (policy_head, logits) = self.head_forward("policy", &feat, dropout_rng.as_deref_mut());
        let policy = nn::softmax(&logits);
        let (value_head, u) = self.head_forward("value", &feat, dropout_rng.as_deref_mut());
        let value = nn::sigmoid(u[0]);

        Ok((
            Trace {
                stages,
                feat,
                policy_head,
                value_head,
                policy: policy.clone(),
                value,
            },
            EvaluatorOutput { policy, value },
        ))
    }

    /// Deterministic inference forward pass (no dropout).
    pub fn forward(&self, img: &Image) -> Result<EvaluatorOutput> {
        Ok(self.forward_traced(img, None)?.1)
    }

    /// Eq.-style loss of an output against a (return, policy) target.
    pub fn loss(out: &EvaluatorOutput, target_r: f64, target_rho: &[f32], lambda: f64) -> Result<f64> {
        if out.policy.len() != target_rho.len() {
            return Err(Error::ShapeMismatch(format!(
                "policy length {} vs target length {}",
                out.policy.len(),
                target_rho.len()
            )));
        }
        let value_term = lambda * (target_r - out.value) * (target_r - out.value);
        let ce: f64 = out
            .policy
            .iter()
            .zip(target_rho)
            .map(|(&p, &q)| -(q as f64) * (p + LOG_EPS).ln())
            .sum();
        Ok(value_term + ce)
    }

    /// Loss of this network on one example, using the inference path.
    pub fn loss_for(&self, img: &Image, target_r: f64, target_rho: &[f32], lambda: f64) -> Result<f64> {
        let out = self.forward(img)?;
        Self::loss(&out, target_r, target_rho, lambda)
    }

    /// Loss and parameter gradients on one example (inference path).
    pub fn loss_and_gradients(
        &self,
        img: &Image,
        target_r: f64,
        target_rho: &[f32],
        lambda: f64,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let (trace, out) = self.forward_traced(img, None)?;
        let loss = Self::loss(&out, target_r, target_rho, lambda)?;
        let grads = self.backward(&trace, target_r, target_rho, lambda);
        Ok((loss, grads))
    }

    /// Gradients of the loss wrt every tensor, aligned with `tensors()`.
    fn backward(&self, trace: &Trace, target_r: f64, target_rho: &[f32], lambda: f64) -> Vec<Vec<f64>> {
        let mut grads: Vec<Vec<f64>> =
            self.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let index: std::collections::HashMap<&str, usize> = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.as_str(), i))
            .collect();

        // policy head: gradient of -sum rho_a ln(pi_a + eps) wrt logits
        let q: Vec<f64> = trace
            .policy
            .iter()
            .zip(target_rho)
            .map(|(&p, &r)| (r as f64) * p / (p + LOG_EPS))
            .collect();
        let q_sum: f64 = q.iter().sum();
        let d_logits: Vec<f64> = trace
            .policy
            .iter()
            .zip(&q)
            .map(|(&p, &qa)| p * q_sum - qa)
            .collect();

        // value head: gradient of lambda (r - v)^2 wrt the pre-sigmoid unit
        let v = trace.value;
        let d_u = vec![-2.0 * lambda * (target_r - v) * v * (1.0 - v)];

        let mut d_feat = vec![0.0f64; trace.feat.len()];
        for (head, head_trace, d_out) in [
            ("policy", &trace.policy_head, &d_logits),
            ("value", &trace.value_head, &d_u),
        ] {
            let w1 = self.tensor(&format!("{head}.fc1.weight"));
            let w2 = self.tensor(&format!("{head}.fc2.weight"));
            let (mut d_h, d_w2, d_b2) = nn::fc_backward(d_out, &head_trace.h_post, &w2.data);
            if !head_trace.drop.is_empty() {
                for (g, &m) in d_h.iter_mut().zip(&head_trace.drop) {
                    *g *= m;
                }
            }
            let d_h_pre = nn::relu_backward(&d_h, &head_trace.h_pre);
            let (d_f, d_w1, d_b1) = nn::fc_backward(&d_h_pre, &trace.feat, &w1.data);
            for (acc, g) in d_feat.iter_mut().zip(&d_f) {
                *acc += g;
            }
            grads[index[format!("{head}.fc2.weight").as_str()]] = d_w2;
            grads[index[format!("{head}.fc2.bias").as_str()]] = d_b2;
            grads[index[format!("{head}.fc1.weight").as_str()]] = d_w1;
            grads[index[format!("{head}.fc1.bias").as_str()]] = d_b1;
        }

        let last = trace.stages.last().expect("at least one conv block");
        let mut d_act = nn::gap_backward(&d_feat, last.out_dims);
        for (i, stage) in trace.stages.iter().enumerate().rev() {
            let d_pre = nn::clamp01_backward(&d_act, &stage.pre);
            let w = self.tensor(&format!("conv{i}.weight"));
            let (d_in, d_w, d_b) = nn::conv_backward(
                &d_pre,
                &stage.input,
                stage.in_dims,
                &w.data,
                stage.out_dims.0,
            );
            grads[index[format!("conv{i}.weight").as_str()]] = d_w;
            grads[index[format!("conv{i}.bias").as_str()]] = d_b;
            d_act = d_in;
        }
        grads
    }

    /// Serialize: magic, version, length-prefixed JSON descriptor, then the
    /// canonical tensor sequence as f32 little-endian payloads.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let desc = serde_json::to_vec(&self.desc).expect("descriptor serializes");
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(&desc);
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Evaluator> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fail = |detail: String| Error::ModelFormat {
            path: path.to_path_buf(),
            detail,
        };
        let mut r = ByteReader { bytes: &bytes, pos: 0 };

        let magic = r.take(4).ok_or_else(|| fail("missing magic".into()))?;
        if magic != MAGIC {
            return Err(fail(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = r.u32().ok_or_else(|| fail("missing version".into()))?;
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "format version {version} unsupported, expected {FORMAT_VERSION}"
            )));
        }
        let desc_len = r.u32().ok_or_else(|| fail("missing descriptor length".into()))? as usize;
        let desc_bytes = r
            .take(desc_len)
            .ok_or_else(|| fail("truncated descriptor".into()))?;
        let desc: ModelDescriptor = serde_json::from_slice(desc_bytes)
            .map_err(|e| fail(format!("descriptor: {e}")))?;
        if let Ok(catalog) = Catalog::named(&desc.catalog) {
            if catalog.len() != desc.actions {
                return Err(fail(format!(
                    "descriptor says {} actions but catalog `{}` has {}",
                    desc.actions,
                    desc.catalog,
                    catalog.len()
                )));
            }
        }

        let mut tensors = Vec::new();
        for (name, dims) in tensor_specs(&desc) {
            let name_len = r
                .u32()
                .ok_or_else(|| fail(format!("truncated header of tensor `{name}`")))?
                as usize;
            let got_name = r
                .take(name_len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| fail(format!("truncated name of tensor `{name}`")))?
                .to_string();
            if got_name != name {
                return Err(fail(format!(
                    "tensor order mismatch: expected `{name}`, found `{got_name}`"
                )));
            }
            let rank = r
                .u32()
                .ok_or_else(|| fail(format!("truncated rank of tensor `{name}`")))?
                as usize;
            let mut got_dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                got_dims.push(
                    r.u32()
                        .ok_or_else(|| fail(format!("truncated dims of tensor `{name}`")))?
                        as usize,
                );
            }
            if got_dims != dims {
                return Err(fail(format!(
                    "tensor `{name}` has dims {got_dims:?}, descriptor requires {dims:?}"
                )));
            }
            let len: usize = dims.iter().product();
            let payload = r
                .take(len * 4)
                .ok_or_else(|| fail(format!("truncated data of tensor `{name}`")))?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(fail(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Evaluator { desc, tensors })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        let b = self.take(4)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl PolicyValue for Evaluator {
    fn evaluate(&self, image: &Image) -> Result<PolicyValueOutput> {
        let out = self.forward(image)?;
        Ok(PolicyValueOutput {
            priors: out.policy.iter().map(|&p| p as f32).collect(),
            value: out.value as f32,
        })
    }
}

/// AdamW trainer (decoupled weight decay, beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8). The decay term `wd * theta` is applied independently of the
/// learning rate, so a zero learning rate still shrinks the weights.
pub struct Trainer {
    cfg: TrainConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    rng: ChaCha8Rng,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Trainer {
    pub fn new(cfg: TrainConfig, eval: &Evaluator) -> Trainer {
        let m = eval.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let v = eval.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Trainer {
            cfg,
            m,
            v,
            step: 0,
            rng,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step on the mean batch loss; returns the pre-step loss.
    pub fn train_step(&mut self, eval: &mut Evaluator, batch: &[Triplet]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty training batch".into()));
        }
        let n = batch.len() as f64;
        let mut grads: Vec<Vec<f64>> = eval.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut total_loss = 0.0f64;
        for (i, trip) in batch.iter().enumerate() {
            let dropout = if eval.desc.dropout_p > 0.0 {
                Some(&mut self.rng)
            } else {
                None
            };
            let (trace, out) = eval.forward_traced(trip.image.as_ref(), dropout)?;
            let loss = Evaluator::loss(&out, trip.ret, &trip.rho, self.cfg.lambda)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch_index: i });
            }
            total_loss += loss;
            let sample_grads = eval.backward(&trace, trip.ret, &trip.rho, self.cfg.lambda);
            for (acc, g) in grads.iter_mut().zip(sample_grads) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        for g in &mut grads {
            for v in g.iter_mut() {
                *v /= n;
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - BETA1.powi(t);
        let bias2 = 1.0 - BETA2.powi(t);
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        for ((tensor, m), (v, g)) in eval
            .tensors
            .iter_mut()
            .zip(&mut self.m)
            .zip(self.v.iter_mut().zip(&grads))
        {
            for i in 0..tensor.data.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * tensor.data[i];
            }
        }
        Ok(total_loss / n)
    }
}

/// Mean loss of the network over a set of triplets (inference path).
pub fn mean_loss(eval: &Evaluator, triplets: &[Triplet], lambda: f64) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::InvalidParameter("empty triplet set".into()));
    }
    let mut total = 0.0;
    for t in triplets {
        total += eval.loss_for(t.image.as_ref(), t.ret, &t.rho, lambda)?;
    }
    Ok(total / triplets.len() as f64)
}

/// Training forward pass with an explicit RNG, exposed for the dropout
/// equality check.
pub fn forward_with_dropout(
    eval: &Evaluator,
    img: &Image,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluatorOutput> {
    Ok(eval.forward_traced(img, Some(rng))?.1)
}

#[cfg(test)]
mod tests;
