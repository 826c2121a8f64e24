//! The localization network: frozen embedding, a stack of 1D convolutions
//! with ReLU, and two per-token heads scoring the prior lattice.
//!
//! The box head maps the final features to A sigmoid confidences per token;
//! the class head maps them to A softmax distributions over the C assertable
//! classes. Both heads share weights across token positions.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::embed::EmbeddingTable;
use crate::data::DataError;
use crate::nn::checkpoint::{load_checkpoint, restore_params, save_checkpoint};
use crate::nn::init::{init_conv_weight, init_dense_weight, rng_from_seed};
use crate::nn::layers::{
    relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, softmax_backward,
    softmax_rows, Conv1d, Dense,
};
use crate::nn::tensor::{NnError, Parameter, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the configured maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("embedding table has dimension {table}, config expects {config}")]
    EmbeddingDimMismatch { table: usize, config: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel_size: usize,
    pub filter_count: usize,
}

/// Six kernel-1 layers then six kernel-3 layers, filter counts doubling
/// every two layers: F0, F0, 2F0, 2F0, ..., 32F0.
pub fn default_stack(base_filters: usize) -> Vec<LayerSpec> {
    (0..12)
        .map(|i| LayerSpec {
            kernel_size: if i < 6 { 1 } else { 3 },
            filter_count: base_filters << (i / 2),
        })
        .collect()
}

/// The default stack plus as many kernel-3 layers at the final width as it
/// takes to push the receptive field to at least `min_receptive_field`.
pub fn extended_stack(base_filters: usize, min_receptive_field: usize) -> Vec<LayerSpec> {
    let mut stack = default_stack(base_filters);
    let last = stack.last().unwrap().filter_count;
    while receptive_field(&stack) < min_receptive_field {
        stack.push(LayerSpec {
            kernel_size: 3,
            filter_count: last,
        });
    }
    stack
}

/// Token span visible to one output position: 1 + sum of (K - 1) over the
/// stride-1 stack.
pub fn receptive_field(stack: &[LayerSpec]) -> usize {
    1 + stack.iter().map(|l| l.kernel_size - 1).sum::<usize>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Prior lengths 1..=prior_count anchored at every token.
    pub prior_count: usize,
    /// Assertable classes (background excluded).
    pub class_count: usize,
    pub base_filters: usize,
    pub conv_stack: Vec<LayerSpec>,
    /// Minimum IoU for a prior to count as positive during training.
    pub match_threshold: f64,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            prior_count: 24,
            class_count: 6,
            base_filters: 8,
            conv_stack: default_stack(8),
            match_threshold: 0.5,
            max_seq_len: 1024,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.conv_stack)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.embed_dim == 0 {
            return fail("embed_dim must be at least 1".into());
        }
        if self.prior_count == 0 {
            return fail("prior_count must be at least 1".into());
        }
        if self.class_count == 0 {
            return fail("class_count must be at least 1".into());
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return fail(format!(
                "match_threshold must lie in [0,1], got {}",
                self.match_threshold
            ));
        }
        for (i, l) in self.conv_stack.iter().enumerate() {
            if l.kernel_size % 2 == 0 {
                return fail(format!(
                    "conv layer {i}: kernel size {} must be odd",
                    l.kernel_size
                ));
            }
            if l.filter_count == 0 {
                return fail(format!("conv layer {i}: filter count must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Dense model outputs over the prior lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrids {
    /// `[T, A]`, each value in [0,1].
    pub box_conf: Tensor,
    /// `[T, A, C]`, each `(t, a, ·)` row a distribution.
    pub class_prob: Tensor,
}

/// Cached activations from one forward call; required by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    seq_len: usize,
    prior_count: usize,
    class_count: usize,
    embedded: Tensor,
    /// Pre-ReLU output of each conv layer.
    pre: Vec<Tensor>,
    /// Post-ReLU output of each conv layer.
    act: Vec<Tensor>,
    pub box_conf: Tensor,
    /// `[T, A*C]`, softmax over each C-block.
    class_prob_flat: Tensor,
}

impl ForwardPass {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn features(&self) -> &Tensor {
        self.act.last().unwrap_or(&self.embedded)
    }

    pub fn grids(&self) -> PredictionGrids {
        let class_prob = self
            .class_prob_flat
            .reshaped(&[self.seq_len, self.prior_count, self.class_count])
            .expect("same element count");
        PredictionGrids {
            box_conf: self.box_conf.clone(),
            class_prob,
        }
    }

    /// Smallest |pre-activation| across the conv stack: the distance from
    /// the nearest rectifier kink. Finite-difference probes need this to be
    /// comfortably larger than the probe step, otherwise a probe flips a
    /// unit and the two-sided difference straddles the kink.
    pub fn min_kink_gap(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(f64::INFINITY, |gap, &v| gap.min(v.abs()))
    }
}

#[derive(Debug)]
pub struct ScopeModel {
    config: ModelConfig,
    embedding: EmbeddingTable,
    convs: Vec<Conv1d>,
    box_head: Dense,
    class_head: Dense,
}

impl ScopeModel {
    pub fn new(config: ModelConfig, embedding: EmbeddingTable) -> Result<Self, ModelError> {
        config.validate()?;
        if embedding.dim() != config.embed_dim {
            return Err(ModelError::EmbeddingDimMismatch {
                table: embedding.dim(),
                config: config.embed_dim,
            });
        }
        let mut rng = rng_from_seed(config.seed);
        let mut convs = Vec::with_capacity(config.conv_stack.len());
        let mut in_channels = config.embed_dim;
        for (i, spec) in config.conv_stack.iter().enumerate() {
            let mut conv = Conv1d::new(
                &format!("conv{i:02}"),
                spec.kernel_size,
                in_channels,
                spec.filter_count,
            );
            init_conv_weight(&mut conv.weight.value, &mut rng);
            in_channels = spec.filter_count;
            convs.push(conv);
        }
        let mut box_head = Dense::new("box_head", in_channels, config.prior_count);
        init_dense_weight(&mut box_head.weight.value, &mut rng);
        let mut class_head = Dense::new(
            "class_head",
            in_channels,
            config.prior_count * config.class_count,
        );
        init_dense_weight(&mut class_head.weight.value, &mut rng);
        Ok(Self {
            config,
            embedding,
            convs,
            box_head,
            class_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.embedding
    }

    pub fn forward<S: AsRef<str>>(&self, tokens: &[S]) -> Result<ForwardPass, ModelError> {
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        let embedded = self.embedding.embed(tokens)?;
        let t = tokens.len();
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut act: Vec<Tensor> = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if i == 0 { &embedded } else { &act[i - 1] };
            let p = conv.forward(input)?;
            act.push(relu_forward(&p));
            pre.push(p);
        }
        let features = act.last().unwrap_or(&embedded);
        let box_conf = sigmoid_forward(&self.box_head.forward(features)?);
        let class_logits = self.class_head.forward(features)?;
        let a = self.config.prior_count;
        let c = self.config.class_count;
        // Row-major [T, A*C] and [T*A, C] share a layout, so the per-(t,a)
        // softmax is a plain row softmax after reshaping.
        let class_prob_flat = softmax_rows(&class_logits.reshaped(&[t * a, c])?)
            .reshaped(&[t, a * c])?;
        Ok(ForwardPass {
            seq_len: t,
            prior_count: a,
            class_count: c,
            embedded,
            pre,
            act,
            box_conf,
            class_prob_flat,
        })
    }

    /// Accumulate parameter gradients for upstream gradients on the output
    /// grids. `grad_box` is `[T, A]`, `grad_class` is `[T, A, C]`. The
    /// embedding is frozen, so the chain stops after the first conv layer.
    pub fn backward(
        &mut self,
        pass: &ForwardPass,
        grad_box: &Tensor,
        grad_class: &Tensor,
    ) -> Result<(), ModelError> {
        let t = pass.seq_len;
        let a = self.config.prior_count;
        let c = self.config.class_count;
        if grad_box.shape() != [t, a] {
            return Err(NnError::ShapeMismatch {
                expected: vec![t, a],
                got: grad_box.shape().to_vec(),
            }
            .into());
        }
        if grad_class.shape() != [t, a, c] {
            return Err(NnError::ShapeMismatch {
                expected: vec![t, a, c],
                got: grad_class.shape().to_vec(),
            }
            .into());
        }
        let d_box_pre = sigmoid_backward(&pass.box_conf, grad_box);
        let prob_rows = pass.class_prob_flat.reshaped(&[t * a, c])?;
        let grad_rows = grad_class.reshaped(&[t * a, c])?;
        let d_class_pre = softmax_backward(&prob_rows, &grad_rows).reshaped(&[t, a * c])?;

        let features = pass.features();
        let mut d = self.box_head.backward(features, &d_box_pre)?;
        d.add_assign(&self.class_head.backward(features, &d_class_pre)?);
        for i in (0..self.convs.len()).rev() {
            let d_pre = relu_backward(&pass.pre[i], &d);
            let input = if i == 0 { &pass.embedded } else { &pass.act[i - 1] };
            d = self.convs[i].backward(input, &d_pre)?;
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut params = Vec::with_capacity(self.convs.len() * 2 + 4);
        for conv in &self.convs {
            params.push(&conv.weight);
            params.push(&conv.bias);
        }
        params.push(&self.box_head.weight);
        params.push(&self.box_head.bias);
        params.push(&self.class_head.weight);
        params.push(&self.class_head.bias);
        params
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut params = Vec::with_capacity(self.convs.len() * 2 + 4);
        for conv in &mut self.convs {
            params.push(&mut conv.weight);
            params.push(&mut conv.bias);
        }
        params.push(&mut self.box_head.weight);
        params.push(&mut self.box_head.bias);
        params.push(&mut self.class_head.weight);
        params.push(&mut self.class_head.bias);
        params
    }

    pub fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), ModelError> {
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| ModelError::Config(e.to_string()))?;
        save_checkpoint(w, &config_json, self.config.seed, &self.parameters())?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint. The embedding table travels
    /// separately (it is frozen data, not a parameter).
    pub fn load<R: Read>(r: R, embedding: EmbeddingTable) -> Result<Self, ModelError> {
        let ckpt = load_checkpoint(r)?;
        let config: ModelConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| ModelError::Config(format!("checkpoint config: {e}")))?;
        let mut model = Self::new(config, embedding)?;
        restore_params(&ckpt, &mut model.parameters_mut())?;
        Ok(model)
    }
}
