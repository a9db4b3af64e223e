//! Three small classifiers that differ only in architecture: an MLP, a
//! two-layer CNN and a single-head attention model over image patches. Every
//! nonlinearity is the configured activation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::{ActivationSpec, AdaptiveParams};
use crate::autodiff::{ActivationRef, Graph, GraphError, NodeId, ParamId, ParamStore, ParamStoreError, Pool};
use crate::rng;
use crate::tensor::Tensor;

/// Positional embeddings start small so patch content dominates early on.
const POSITION_INIT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Params(#[from] ParamStoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    Mlp,
    SmallCnn,
    MiniAttention,
}

impl Arch {
    pub fn cli_name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::SmallCnn => "cnn",
            Arch::MiniAttention => "attn",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(Arch::Mlp),
            "cnn" => Ok(Arch::SmallCnn),
            "attn" => Ok(Arch::MiniAttention),
            other => Err(ModelError::Config(format!(
                "unknown model `{other}` (expected mlp, cnn or attn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub activation: ActivationSpec,
    /// MLP hidden layer widths.
    pub hidden_sizes: Vec<usize>,
    /// CNN output channels per 3x3 conv layer.
    pub channel_widths: Vec<usize>,
    /// CNN mean-pool window applied before the linear head.
    pub pool_window: usize,
    /// Attention embedding width.
    pub embed_dim: usize,
    /// Attention patch side length.
    pub patch_size: usize,
    pub num_classes: usize,
    /// `(height, width)`
    pub input_shape: (usize, usize),
    /// One beta pair for the whole model instead of one per activation site.
    pub share_betas: bool,
    /// Keep betas at their initial values during training.
    pub freeze_betas: bool,
    pub init_betas: (f64, f64),
}

impl ModelConfig {
    /// Defaults for 28x28 inputs and 10 classes.
    pub fn new(arch: Arch, activation: ActivationSpec) -> Self {
        let init = AdaptiveParams::default();
        ModelConfig {
            arch,
            activation,
            hidden_sizes: vec![32],
            channel_widths: vec![8, 16],
            pool_window: 4,
            embed_dim: 16,
            patch_size: 4,
            num_classes: 10,
            input_shape: (28, 28),
            share_betas: false,
            freeze_betas: false,
            init_betas: (init.beta1, init.beta2),
        }
    }

    pub fn with_input(mut self, height: usize, width: usize, num_classes: usize) -> Self {
        self.input_shape = (height, width);
        self.num_classes = num_classes;
        self
    }

    pub fn with_activation(&self, activation: ActivationSpec) -> Self {
        ModelConfig {
            activation,
            ..self.clone()
        }
    }

    /// Number of places the activation is applied.
    pub fn activation_sites(&self) -> usize {
        match self.arch {
            Arch::Mlp => self.hidden_sizes.len(),
            Arch::SmallCnn => self.channel_widths.len(),
            Arch::MiniAttention => 1,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        let (h, w) = self.input_shape;
        if h == 0 || w == 0 || self.num_classes == 0 {
            return bad("input shape and class count must be positive".into());
        }
        if self.activation_sites() == 0 {
            return bad("model needs at least one activation site".into());
        }
        match self.arch {
            Arch::Mlp => {
                if self.hidden_sizes.contains(&0) {
                    return bad("hidden sizes must be positive".into());
                }
            }
            Arch::SmallCnn => {
                if self.channel_widths.contains(&0) || self.pool_window == 0 {
                    return bad("channel widths and pool window must be positive".into());
                }
                if h % self.pool_window != 0 || w % self.pool_window != 0 {
                    return bad(format!(
                        "pool window {} does not divide input {h}x{w}",
                        self.pool_window
                    ));
                }
            }
            Arch::MiniAttention => {
                if self.embed_dim == 0 || self.patch_size == 0 {
                    return bad("embed dim and patch size must be positive".into());
                }
                if h % self.patch_size != 0 || w % self.patch_size != 0 {
                    return bad(format!(
                        "patch size {} does not divide input {h}x{w}",
                        self.patch_size
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
enum Layers {
    Mlp {
        hidden: Vec<Dense>,
        head: Dense,
    },
    Cnn {
        convs: Vec<Dense>,
        head: Dense,
    },
    Attention {
        embed: Dense,
        position: ParamId,
        query: ParamId,
        key: ParamId,
        value: ParamId,
        feedforward: Dense,
        head: Dense,
    },
}

/// Structure of a built model. Weights live in the accompanying [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layers: Layers,
}

/// Forward pass output: the graph plus the ids of the logits and loss nodes.
pub struct ForwardPass {
    pub graph: Graph,
    pub logits: NodeId,
    pub loss: NodeId,
}

struct Init<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    /// Kaiming-uniform on fan-in: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    fn kaiming(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId, ModelError> {
        self.uniform(name, shape, (6.0 / fan_in as f64).sqrt())
    }

    fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId, ModelError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Ok(self.store.add(name, Tensor::from_vec(shape, data).expect("init shape"))?)
    }

    fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, ModelError> {
        Ok(self.store.add(name, Tensor::zeros(shape))?)
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Dense, ModelError> {
        Ok(Dense {
            weight: self.kaiming(&format!("{name}.weight"), vec![fan_in, fan_out], fan_in)?,
            bias: self.zeros(&format!("{name}.bias"), vec![fan_out])?,
        })
    }
}

impl Model {
    /// Deterministic in `(config, seed)`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Model, ParamStore), ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng::seeded(seed, rng::STREAM_INIT);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let (h, w) = config.input_shape;
        let classes = config.num_classes;
        let layers = match config.arch {
            Arch::Mlp => {
                let mut fan_in = h * w;
                let mut hidden = Vec::new();
                for (i, &width) in config.hidden_sizes.iter().enumerate() {
                    hidden.push(init.dense(&format!("fc{i}"), fan_in, width)?);
                    fan_in = width;
                }
                let head = init.dense("head", fan_in, classes)?;
                Layers::Mlp { hidden, head }
            }
            Arch::SmallCnn => {
                let mut c_in = 1;
                let mut convs = Vec::new();
                for (i, &c_out) in config.channel_widths.iter().enumerate() {
                    let fan_in = c_in * 9;
                    convs.push(Dense {
                        weight: init.kaiming(&format!("conv{i}.weight"), vec![c_out, c_in, 3, 3], fan_in)?,
                        bias: init.zeros(&format!("conv{i}.bias"), vec![c_out])?,
                    });
                    c_in = c_out;
                }
                let p = config.pool_window;
                let features = c_in * (h / p) * (w / p);
                let head = init.dense("head", features, classes)?;
                Layers::Cnn { convs, head }
            }
            Arch::MiniAttention => {
                let d = config.embed_dim;
                let ps = config.patch_size;
                let patches = (h / ps) * (w / ps);
                let embed = init.dense("embed", ps * ps, d)?;
                let position = init.uniform("position", vec![patches, d], POSITION_INIT)?;
                let query = init.kaiming("attn.query", vec![d, d], d)?;
                let key = init.kaiming("attn.key", vec![d, d], d)?;
                let value = init.kaiming("attn.value", vec![d, d], d)?;
                let feedforward = init.dense("ff", d, d)?;
                let head = init.dense("head", d, classes)?;
                Layers::Attention {
                    embed,
                    position,
                    query,
                    key,
                    value,
                    feedforward,
                    head,
                }
            }
        };
        if config.activation.is_adaptive() {
            let sites = if config.share_betas { 1 } else { config.activation_sites() };
            for _ in 0..sites {
                store.add_adaptive(AdaptiveParams::new(config.init_betas.0, config.init_betas.1));
            }
        }
        store.freeze_adaptive = config.freeze_betas;
        Ok((
            Model {
                config: config.clone(),
                layers,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn activate(&self, g: &mut Graph, store: &ParamStore, x: NodeId, site: usize) -> Result<NodeId, GraphError> {
        if self.config.activation.is_adaptive() {
            let site = if self.config.share_betas { 0 } else { site };
            g.adaptive_activation(x, store, site)
        } else {
            g.activation(x, ActivationRef::Fixed(self.config.activation.clone()))
        }
    }

    fn dense(&self, g: &mut Graph, store: &ParamStore, x: NodeId, layer: Dense) -> Result<NodeId, GraphError> {
        let w = g.param(store, layer.weight);
        let b = g.param(store, layer.bias);
        let z = g.matmul(x, w)?;
        g.bias_add(z, b)
    }

    /// Records the forward pass for `images: [B, H, W]` into `g`; returns the logits node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, images: &Tensor) -> Result<NodeId, GraphError> {
        let (h, w) = self.config.input_shape;
        let s = images.shape();
        if s.len() != 3 || s[1] != h || s[2] != w {
            return Err(GraphError::Shape {
                node: g.nodes().len(),
                op: "input",
                detail: format!("expected [B, {h}, {w}], got {s:?}"),
            });
        }
        let batch = s[0];
        match &self.layers {
            Layers::Mlp { hidden, head } => {
                let x = images.clone().reshape(vec![batch, h * w]).expect("flatten input");
                let mut x = g.input(x);
                for (i, layer) in hidden.iter().enumerate() {
                    let z = self.dense(g, store, x, *layer)?;
                    x = self.activate(g, store, z, i)?;
                }
                self.dense(g, store, x, *head)
            }
            Layers::Cnn { convs, head } => {
                let x = images.clone().reshape(vec![batch, 1, h, w]).expect("channel axis");
                let mut x = g.input(x);
                for (i, layer) in convs.iter().enumerate() {
                    let k = g.param(store, layer.weight);
                    let b = g.param(store, layer.bias);
                    let z = g.conv2d(x, k)?;
                    let z = g.bias_add(z, b)?;
                    x = self.activate(g, store, z, i)?;
                }
                let pooled = g.mean_pool(x, Pool::Window(self.config.pool_window))?;
                let flat = g.flatten(pooled)?;
                self.dense(g, store, flat, *head)
            }
            Layers::Attention {
                embed,
                position,
                query,
                key,
                value,
                feedforward,
                head,
            } => {
                let patches = g.input(extract_patches(images, self.config.patch_size));
                self.attention_forward(
                    g,
                    store,
                    patches,
                    AttentionParams {
                        embed: *embed,
                        position: *position,
                        query: *query,
                        key: *key,
                        value: *value,
                        feedforward: *feedforward,
                        head: *head,
                    },
                )
            }
        }
    }

    fn attention_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        patches: NodeId,
        p: AttentionParams,
    ) -> Result<NodeId, GraphError> {
        let d = self.config.embed_dim;
        let x = self.dense(g, store, patches, p.embed)?;
        let pos = g.param(store, p.position);
        let x = g.bias_add(x, pos)?;
        let wq = g.param(store, p.query);
        let wk = g.param(store, p.key);
        let wv = g.param(store, p.value);
        let q = g.matmul(x, wq)?;
        let q = g.scale(q, 1.0 / (d as f64).sqrt())?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let weights = g.attention_scores(q, k)?;
        let attended = g.attention_apply(weights, v)?;
        let z = g.add(x, attended)?;
        let f = self.dense(g, store, z, p.feedforward)?;
        let f = self.activate(g, store, f, 0)?;
        let pooled = g.mean_pool(f, Pool::Tokens)?;
        self.dense(g, store, pooled, p.head)
    }

    /// Logits for already-extracted patches `[B, P, patch_size^2]`.
    pub fn mini_attention_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        patches: &Tensor,
    ) -> Result<NodeId, GraphError> {
        let Layers::Attention {
            embed,
            position,
            query,
            key,
            value,
            feedforward,
            head,
        } = &self.layers
        else {
            return Err(GraphError::Shape {
                node: g.nodes().len(),
                op: "input",
                detail: format!("{} model has no patch input", self.config.arch),
            });
        };
        let x = g.input(patches.clone());
        self.attention_forward(
            g,
            store,
            x,
            AttentionParams {
                embed: *embed,
                position: *position,
                query: *query,
                key: *key,
                value: *value,
                feedforward: *feedforward,
                head: *head,
            },
        )
    }

    /// Forward pass plus mean cross-entropy against `labels`.
    pub fn forward_loss(&self, store: &ParamStore, images: &Tensor, labels: &[usize]) -> Result<ForwardPass, GraphError> {
        let mut graph = Graph::new();
        let logits = self.forward(&mut graph, store, images)?;
        let loss = graph.softmax_cross_entropy(logits, labels)?;
        Ok(ForwardPass { graph, logits, loss })
    }
}

#[derive(Clone, Copy)]
struct AttentionParams {
    embed: Dense,
    position: ParamId,
    query: ParamId,
    key: ParamId,
    value: ParamId,
    feedforward: Dense,
    head: Dense,
}

/// `[B, H, W] -> [B, (H/ps)*(W/ps), ps*ps]`, patches in row-major grid order.
pub fn extract_patches(images: &Tensor, patch_size: usize) -> Tensor {
    let s = images.shape();
    let (b, h, w) = (s[0], s[1], s[2]);
    let (gh, gw) = (h / patch_size, w / patch_size);
    let mut out = Vec::with_capacity(b * h * w);
    for bi in 0..b {
        let img = &images.data()[bi * h * w..(bi + 1) * h * w];
        for py in 0..gh {
            for px in 0..gw {
                for y in 0..patch_size {
                    let row = (py * patch_size + y) * w + px * patch_size;
                    out.extend_from_slice(&img[row..row + patch_size]);
                }
            }
        }
    }
    Tensor::from_vec(vec![b, gh * gw, patch_size * patch_size], out).expect("patch shape")
}
