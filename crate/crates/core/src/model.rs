//! The two classifier variants: DCNN-CapsNet (n-gram convolutions beside a
//! capsule branch, for long statements) and MLP-CapsNet (indirect-feature
//! MLP beside a capsule branch, for short statements).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::capsules::{capsule_branch, CapsuleConfig, CapsuleParams, MarginLossConfig};
use crate::config::{parse_list, parse_value};
use crate::data::{DatasetKind, NewsExample};
use crate::embeddings::{embed_rows, token_rows, EmbeddedSequence, EmbeddingTable, PrecomputedStore, Vocab};
use crate::error::{Error, Result};
use crate::features::{
    tokenize, ContentHash, FeatureExtractor, IndirectFeatureVector, NormalizationStats, FEATURE_COUNT,
};
use crate::params::{glorot, Binder, ParamId, ParamSet};
use crate::tensor::Tensor;

pub const EMBEDDING_PARAM: &str = "embedding.table";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    DcnnCapsNet,
    MlpCapsNet,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DcnnCapsNet => "dcnn-capsnet",
            Variant::MlpCapsNet => "mlp-capsnet",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcnn-capsnet" | "dcnn" => Ok(Variant::DcnnCapsNet),
            "mlp-capsnet" | "mlp" => Ok(Variant::MlpCapsNet),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Word table owned by the model and updated during training.
    StaticTrainable,
    /// Per-example matrices read from a precomputed store, never updated.
    FrozenStore,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingMode::StaticTrainable => "static-trainable",
            EmbeddingMode::FrozenStore => "frozen-store",
        }
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-trainable" | "static" => Ok(EmbeddingMode::StaticTrainable),
            "frozen-store" | "store" => Ok(EmbeddingMode::FrozenStore),
            _ => Err(Error::Config(format!("unknown embedding mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Margin,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Margin => "margin",
            LossKind::CrossEntropy => "cross-entropy",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(LossKind::Margin),
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_classes: usize,
    pub embedding_mode: EmbeddingMode,
    pub embedding_dim: usize,
    pub max_len: usize,
    pub filter_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub capsules: CapsuleConfig,
    /// Layer sizes of the indirect-feature MLP, input first.
    pub mlp_sizes: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f64,
    pub leaky_alpha: f64,
    pub loss: LossKind,
    pub margin: MarginLossConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DcnnCapsNet,
            num_classes: 2,
            embedding_mode: EmbeddingMode::StaticTrainable,
            embedding_dim: 100,
            max_len: 64,
            filter_widths: vec![2, 3, 4],
            filters_per_width: 128,
            capsules: CapsuleConfig::default(),
            mlp_sizes: vec![FEATURE_COUNT, 64, 32, 32],
            head_hidden: 32,
            dropout: 0.5,
            leaky_alpha: 0.01,
            loss: LossKind::Margin,
            margin: MarginLossConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Defaults for a dataset: DCNN-CapsNet with `L = 64` and one routing
    /// iteration for long binary statements, MLP-CapsNet with `L = 32` and
    /// two iterations for short six-way statements.
    pub fn for_dataset(kind: DatasetKind) -> Self {
        let mut cfg = ModelConfig {
            num_classes: kind.num_classes(),
            ..ModelConfig::default()
        };
        match kind {
            DatasetKind::BinaryLong => {
                cfg.variant = Variant::DcnnCapsNet;
                cfg.max_len = 64;
                cfg.capsules.routing_iterations = 1;
            }
            DatasetKind::MulticlassShort => {
                cfg.variant = Variant::MlpCapsNet;
                cfg.max_len = 32;
                cfg.capsules.routing_iterations = 2;
            }
        }
        cfg
    }

    /// Width of the vector fed to the dense head.
    pub fn concat_width(&self) -> usize {
        let caps = self.capsules.output_len();
        match self.variant {
            Variant::DcnnCapsNet => self.filter_widths.len() * self.filters_per_width + caps,
            Variant::MlpCapsNet => self.mlp_sizes.last().copied().unwrap_or(0) + caps,
        }
    }

    /// Shortest sequence the variant accepts.
    pub fn min_len(&self) -> usize {
        let caps = self.capsules.conv_width;
        match self.variant {
            Variant::DcnnCapsNet => self.filter_widths.iter().copied().max().unwrap_or(0).max(caps),
            Variant::MlpCapsNet => caps,
        }
    }

    /// Checks the whole configuration and lists every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes < 2 {
            problems.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.embedding_dim == 0 {
            problems.push("embedding_dim must be positive".to_string());
        }
        if self.max_len == 0 {
            problems.push("max_len must be positive".to_string());
        }
        if self.head_hidden == 0 {
            problems.push("head_hidden must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.leaky_alpha) {
            problems.push(format!("leaky_alpha must be in [0, 1), got {}", self.leaky_alpha));
        }
        if let Err(e) = self.capsules.validate() {
            problems.push(e.to_string());
        }
        if self.loss == LossKind::Margin {
            if let Err(e) = self.margin.validate() {
                problems.push(e.to_string());
            }
        }
        match self.variant {
            Variant::DcnnCapsNet => {
                if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
                    problems.push(format!("filter widths must be positive and non-empty, got {:?}", self.filter_widths));
                }
                if self.filters_per_width == 0 {
                    problems.push("filters_per_width must be positive".to_string());
                }
                if let Some(&w) = self.filter_widths.iter().find(|&&w| w > self.max_len) {
                    problems.push(format!("filter width {w} exceeds max_len {}", self.max_len));
                }
            }
            Variant::MlpCapsNet => {
                if self.mlp_sizes.len() < 2 || self.mlp_sizes.contains(&0) {
                    problems.push(format!("mlp sizes need at least two positive layers, got {:?}", self.mlp_sizes));
                } else if self.mlp_sizes[0] != FEATURE_COUNT {
                    problems.push(format!(
                        "mlp input size must equal the {FEATURE_COUNT} indirect features, got {}",
                        self.mlp_sizes[0]
                    ));
                }
            }
        }
        if self.max_len < self.capsules.conv_width {
            problems.push(format!(
                "max_len {} is shorter than the capsule convolution width {}",
                self.max_len, self.capsules.conv_width
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// All settings as `key → value` text, keys sorted.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let c = &self.capsules;
        let pairs: Vec<(&str, String)> = vec![
            ("variant", self.variant.as_str().into()),
            ("num_classes", self.num_classes.to_string()),
            ("embedding_mode", self.embedding_mode.as_str().into()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("max_len", self.max_len.to_string()),
            ("filter_widths", list(&self.filter_widths)),
            ("filters", self.filters_per_width.to_string()),
            ("mlp_sizes", list(&self.mlp_sizes)),
            ("head_hidden", self.head_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("leaky_alpha", self.leaky_alpha.to_string()),
            ("loss", self.loss.as_str().into()),
            ("margin.m_plus", self.margin.m_plus.to_string()),
            ("margin.m_minus", self.margin.m_minus.to_string()),
            ("margin.lambda", self.margin.lambda_down.to_string()),
            ("seed", self.seed.to_string()),
            ("caps.conv_filters", c.conv_filters.to_string()),
            ("caps.conv_width", c.conv_width.to_string()),
            ("caps.primary_channels", c.primary_channels.to_string()),
            ("caps.primary_dim", c.primary_dim.to_string()),
            ("caps.conv_caps_channels", c.conv_caps_channels.to_string()),
            ("caps.conv_caps_dim", c.conv_caps_dim.to_string()),
            ("caps.window", c.conv_caps_window.to_string()),
            ("caps.class_caps", c.class_caps.to_string()),
            ("caps.class_caps_dim", c.class_caps_dim.to_string()),
            ("caps.routing_iterations", c.routing_iterations.to_string()),
            ("caps.leaky_alpha", c.leaky_alpha.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Sets one key from [`entries`](Self::entries); unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.capsules;
        match key {
            "variant" => self.variant = value.parse()?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "embedding_mode" => self.embedding_mode = value.parse()?,
            "embedding_dim" => self.embedding_dim = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "filter_widths" => self.filter_widths = parse_list(key, value)?,
            "filters" => self.filters_per_width = parse_value(key, value)?,
            "mlp_sizes" => self.mlp_sizes = parse_list(key, value)?,
            "head_hidden" => self.head_hidden = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "leaky_alpha" => self.leaky_alpha = parse_value(key, value)?,
            "loss" => self.loss = value.parse()?,
            "margin.m_plus" => self.margin.m_plus = parse_value(key, value)?,
            "margin.m_minus" => self.margin.m_minus = parse_value(key, value)?,
            "margin.lambda" => self.margin.lambda_down = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "caps.conv_filters" => c.conv_filters = parse_value(key, value)?,
            "caps.conv_width" => c.conv_width = parse_value(key, value)?,
            "caps.primary_channels" => c.primary_channels = parse_value(key, value)?,
            "caps.primary_dim" => c.primary_dim = parse_value(key, value)?,
            "caps.conv_caps_channels" => c.conv_caps_channels = parse_value(key, value)?,
            "caps.conv_caps_dim" => c.conv_caps_dim = parse_value(key, value)?,
            "caps.window" => c.conv_caps_window = parse_value(key, value)?,
            "caps.class_caps" => c.class_caps = parse_value(key, value)?,
            "caps.class_caps_dim" => c.class_caps_dim = parse_value(key, value)?,
            "caps.routing_iterations" => c.routing_iterations = parse_value(key, value)?,
            "caps.leaky_alpha" => c.leaky_alpha = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown model setting {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `key = value` lines, sorted by key.
    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DenseParams {
    w: ParamId,
    b: ParamId,
}

impl DenseParams {
    fn register(params: &mut ParamSet, name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseParams {
            w: params.add(format!("{name}.weight"), glorot(&[n_out, n_in], n_in, n_out, rng)),
            b: params.add(format!("{name}.bias"), Tensor::zeros(&[n_out])),
        }
    }

    fn apply<'p>(&self, graph: &mut Graph<'p>, binder: &mut Binder<'p>, x: Var) -> Result<Var> {
        let w = binder.bind(graph, self.w);
        let b = binder.bind(graph, self.b);
        graph.dense(x, w, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Branch {
    Dcnn { convs: Vec<(ParamId, ParamId)> },
    Mlp { layers: Vec<DenseParams> },
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    branch: Branch,
    capsules: CapsuleParams,
    head_hidden: DenseParams,
    head_out: DenseParams,
    embedding: Option<ParamId>,
}

/// Feature statistics and the lexicon/stopword versions they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureState {
    pub stats: NormalizationStats,
    pub lexicon: ContentHash,
    pub stopwords: ContentHash,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Word vocabulary of the static table; `None` for store-backed models.
    pub vocab: Option<Vocab>,
    pub features: Option<FeatureState>,
    layout: Layout,
}

/// Token part of a model input, prepared once and embedded per forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum SequenceInput {
    /// Table rows of the (truncated) token sequence.
    Rows(Vec<usize>),
    /// Precomputed `len×D` values.
    Stored { data: Vec<f32>, len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub label: usize,
    pub sequence: SequenceInput,
    /// Normalized indirect features (MLP-CapsNet only).
    pub features: Option<[f64; FEATURE_COUNT]>,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub embedded: Var,
    pub features: Option<Var>,
    /// Pre-sigmoid class scores.
    pub scores: Var,
    /// Sigmoid class activations.
    pub activations: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub activations: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Builds a model; static-trainable configs need the initial `table`.
    pub fn build(config: ModelConfig, table: Option<EmbeddingTable>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let d = config.embedding_dim;

        let (vocab, embedding) = match (config.embedding_mode, table) {
            (EmbeddingMode::StaticTrainable, Some(table)) => {
                if table.dim() != d {
                    return Err(Error::Config(format!(
                        "embedding table has D={} but the model expects D={d}",
                        table.dim()
                    )));
                }
                let mut matrix = table.matrix;
                for v in matrix.data_mut() {
                    *v = *v as f32 as f64;
                }
                (Some(table.vocab), Some(params.add(EMBEDDING_PARAM, matrix)))
            }
            (EmbeddingMode::StaticTrainable, None) => {
                return Err(Error::Config("static-trainable embeddings need an initial table".into()))
            }
            (EmbeddingMode::FrozenStore, Some(_)) => {
                return Err(Error::Config("store-backed models take no embedding table".into()))
            }
            (EmbeddingMode::FrozenStore, None) => (None, None),
        };

        let branch = match config.variant {
            Variant::DcnnCapsNet => Branch::Dcnn {
                convs: config
                    .filter_widths
                    .iter()
                    .map(|&w| {
                        let f = config.filters_per_width;
                        let weight = params.add(format!("dcnn.conv{w}.weight"), glorot(&[f, w, d], w * d, w * f, &mut rng));
                        let bias = params.add(format!("dcnn.conv{w}.bias"), Tensor::zeros(&[f]));
                        (weight, bias)
                    })
                    .collect(),
            },
            Variant::MlpCapsNet => Branch::Mlp {
                layers: config
                    .mlp_sizes
                    .windows(2)
                    .enumerate()
                    .map(|(i, s)| DenseParams::register(&mut params, &format!("mlp.fc{i}"), s[0], s[1], &mut rng))
                    .collect(),
            },
        };
        let capsules = CapsuleParams::register(&mut params, &config.capsules, d, &mut rng);
        let head_hidden = DenseParams::register(&mut params, "head.fc1", config.concat_width(), config.head_hidden, &mut rng);
        let head_out = DenseParams::register(&mut params, "head.fc2", config.head_hidden, config.num_classes, &mut rng);

        Ok(Model {
            config,
            params,
            vocab,
            features: None,
            layout: Layout {
                branch,
                capsules,
                head_hidden,
                head_out,
                embedding,
            },
        })
    }

    /// Builds a static-trainable model whose table is drawn uniformly from
    /// `±0.25` (pad and unk rows zero), seeded from the config.
    pub fn build_with_vocab(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e4b0);
        let table = EmbeddingTable::random(vocab, config.embedding_dim, 0.25, true, &mut rng);
        Model::build(config, Some(table))
    }

    pub fn embedding_param(&self) -> Option<ParamId> {
        self.layout.embedding
    }

    pub fn embedding_table(&self) -> Option<&Tensor> {
        self.layout.embedding.map(|id| self.params.get(id))
    }

    pub fn vocab_hash(&self) -> Option<ContentHash> {
        self.vocab.as_ref().map(Vocab::hash)
    }

    /// Fits normalization statistics on `train` and records the extractor's
    /// lexicon and stopword versions.
    pub fn fit_features(&mut self, train: &[NewsExample], extractor: &FeatureExtractor) -> Result<()> {
        let rows: Vec<[f64; FEATURE_COUNT]> = train.iter().map(|ex| extractor.raw(ex)).collect();
        self.features = Some(FeatureState {
            stats: NormalizationStats::fit(&rows)?,
            lexicon: extractor.lexicon_hash(),
            stopwords: extractor.stopword_hash(),
        });
        Ok(())
    }

    fn check_extractor(&self, extractor: &FeatureExtractor) -> Result<&FeatureState> {
        let state = self
            .features
            .as_ref()
            .ok_or_else(|| Error::Config("model has no feature normalization statistics".into()))?;
        check_hash("lexicon", state.lexicon, extractor.lexicon_hash())?;
        check_hash("stopword list", state.stopwords, extractor.stopword_hash())?;
        Ok(state)
    }

    /// Prepares one example for repeated forward passes.
    pub fn encode(
        &self,
        example: &NewsExample,
        extractor: &FeatureExtractor,
        store: Option<&PrecomputedStore>,
    ) -> Result<EncodedExample> {
        let with_id = |e: Error| match e {
            Error::Lookup(_) | Error::HashMismatch { .. } | Error::Config(_) => e,
            other => Error::Contract(format!("example {}: {other}", example.id)),
        };
        let sequence = match self.config.embedding_mode {
            EmbeddingMode::StaticTrainable => {
                let vocab = self.vocab.as_ref().expect("static model carries a vocabulary");
                SequenceInput::Rows(token_rows(&tokenize(&example.text), vocab, self.config.max_len))
            }
            EmbeddingMode::FrozenStore => {
                let store = store.ok_or_else(|| Error::Config("store-backed model needs an embedding store".into()))?;
                if store.dim() != self.config.embedding_dim {
                    return Err(Error::Config(format!(
                        "embedding store has D={} but the model expects D={}",
                        store.dim(),
                        self.config.embedding_dim
                    )));
                }
                let (mut data, len) = store.read_raw(&example.id).map_err(with_id)?;
                let len = len.min(self.config.max_len);
                data.truncate(len * store.dim());
                SequenceInput::Stored { data, len }
            }
        };
        let features = match self.config.variant {
            Variant::MlpCapsNet => {
                let state = self.check_extractor(extractor)?;
                Some(state.stats.apply(&extractor.raw(example)))
            }
            Variant::DcnnCapsNet => {
                if self.features.is_some() {
                    self.check_extractor(extractor)?;
                }
                None
            }
        };
        Ok(EncodedExample {
            id: example.id.clone(),
            label: example.label,
            sequence,
            features,
        })
    }

    /// Embeds a prepared sequence against the current table, padded to `max_len`.
    pub fn embed(&self, input: &EncodedExample) -> EmbeddedSequence {
        let max_len = self.config.max_len;
        match &input.sequence {
            SequenceInput::Rows(rows) => {
                let table = self.embedding_table().expect("static model carries a table");
                embed_rows(rows, table, max_len, &input.id)
            }
            SequenceInput::Stored { data, len } => {
                EmbeddedSequence::from_matrix(input.id.clone(), data, *len, self.config.embedding_dim, max_len)
            }
        }
    }

    /// Records one forward pass. The embedded input takes gradients when the
    /// binder tracks parameters and the table is trainable. `dropout_seed`
    /// switches dropout on.
    pub fn forward_graph<'p>(
        &'p self,
        graph: &mut Graph<'p>,
        binder: &mut Binder<'p>,
        embedded: Tensor,
        features: Option<&[f64; FEATURE_COUNT]>,
        track_inputs: bool,
        dropout_seed: Option<u64>,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let d = cfg.embedding_dim;
        if embedded.rank() != 2 || embedded.shape()[1] != d {
            return Err(Error::dim(
                "model input",
                format!("expected L×{d} embeddings, got {:?}", embedded.shape()),
            ));
        }
        if embedded.shape()[0] < cfg.min_len() {
            return Err(Error::SequenceTooShort {
                len: embedded.shape()[0],
                required: cfg.min_len(),
            });
        }
        let embed_grad = track_inputs && cfg.embedding_mode == EmbeddingMode::StaticTrainable;
        let x = graph.input(embedded, embed_grad);

        let mut feature_var = None;
        let mut parts = Vec::new();
        match &self.layout.branch {
            Branch::Dcnn { convs } => {
                for &(w, b) in convs {
                    let (w, b) = (binder.bind(graph, w), binder.bind(graph, b));
                    let conv = graph.conv1d(x, w, b)?;
                    let pooled = graph.global_max_pool(conv)?;
                    parts.push(graph.leaky_relu(pooled, cfg.leaky_alpha));
                }
            }
            Branch::Mlp { layers } => {
                let values = features.ok_or_else(|| {
                    Error::Config("mlp-capsnet needs the indirect feature vector".into())
                })?;
                let f = graph.input(Tensor::vector(values.to_vec()), track_inputs);
                feature_var = Some(f);
                let mut h = f;
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.apply(graph, binder, h)?;
                    if i + 1 < layers.len() {
                        h = graph.relu(h);
                    }
                }
                parts.push(h);
            }
        }
        parts.push(capsule_branch(graph, binder, &self.layout.capsules, &cfg.capsules, x)?);
        let joined = graph.concat(&parts)?;

        let dropped = match dropout_seed {
            Some(seed) => graph.dropout(joined, cfg.dropout, true, seed)?,
            None => joined,
        };
        let hidden = self.layout.head_hidden.apply(graph, binder, dropped)?;
        let hidden = graph.leaky_relu(hidden, cfg.leaky_alpha);
        let scores = self.layout.head_out.apply(graph, binder, hidden)?;
        let activations = graph.sigmoid(scores);
        Ok(ForwardVars {
            embedded: x,
            features: feature_var,
            scores,
            activations,
        })
    }

    /// Scalar training loss for one forward pass.
    pub fn loss(&self, graph: &mut Graph<'_>, out: &ForwardVars, target: usize) -> Result<Var> {
        match self.config.loss {
            LossKind::Margin => {
                let m = &self.config.margin;
                graph.margin_loss(out.activations, target, m.m_plus, m.m_minus, m.lambda_down)
            }
            LossKind::CrossEntropy => graph.cross_entropy(out.scores, target),
        }
    }

    fn infer(&self, embedded: Tensor, features: Option<&[f64; FEATURE_COUNT]>) -> Result<Tensor> {
        let mut graph = Graph::new();
        let mut binder = Binder::new(&self.params, false);
        let out = self.forward_graph(&mut graph, &mut binder, embedded, features, false, None)?;
        Ok(graph.value(out.activations).clone())
    }

    /// Class activations of DCNN-CapsNet in inference mode.
    pub fn forward_dcnn(&self, embedded: &EmbeddedSequence) -> Result<Tensor> {
        if self.config.variant != Variant::DcnnCapsNet {
            return Err(Error::Config("forward_dcnn called on an mlp-capsnet model".into()));
        }
        self.infer(embedded.matrix.clone(), None)
    }

    /// Class activations of MLP-CapsNet in inference mode.
    pub fn forward_mlp(&self, embedded: &EmbeddedSequence, features: &IndirectFeatureVector) -> Result<Tensor> {
        if self.config.variant != Variant::MlpCapsNet {
            return Err(Error::Config("forward_mlp called on a dcnn-capsnet model".into()));
        }
        let state = self
            .features
            .as_ref()
            .ok_or_else(|| Error::Config("model has no feature normalization statistics".into()))?;
        check_hash("lexicon", state.lexicon, features.lexicon)?;
        check_hash("stopword list", state.stopwords, features.stopwords)?;
        self.infer(embedded.matrix.clone(), Some(&features.values))
    }

    /// Inference-mode prediction of a prepared example.
    pub fn predict_encoded(&self, input: &EncodedExample) -> Result<Prediction> {
        let embedded = self.embed(input);
        let activations = self.infer(embedded.matrix, input.features.as_ref())?.into_data();
        Ok(Prediction {
            label: argmax(&activations),
            activations,
        })
    }

    pub fn predict(
        &self,
        example: &NewsExample,
        extractor: &FeatureExtractor,
        store: Option<&PrecomputedStore>,
    ) -> Result<Prediction> {
        self.predict_encoded(&self.encode(example, extractor, store)?)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        params: ParamSet,
        vocab: Option<Vocab>,
        features: Option<FeatureState>,
    ) -> Result<Self> {
        // Rebuild the layout from a skeleton and check every tensor against it.
        let skeleton = match config.embedding_mode {
            EmbeddingMode::StaticTrainable => {
                let vocab = vocab
                    .clone()
                    .ok_or_else(|| Error::Config("static-trainable checkpoint lacks a vocabulary".into()))?;
                let v = vocab.len();
                let table = EmbeddingTable {
                    vocab,
                    matrix: Tensor::zeros(&[v, config.embedding_dim]),
                    trainable: true,
                };
                Model::build(config, Some(table))?
            }
            EmbeddingMode::FrozenStore => Model::build(config, None)?,
        };
        if skeleton.params.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors but the configuration needs {}",
                params.len(),
                skeleton.params.len()
            )));
        }
        for ((_, want_name, want), (_, name, got)) in skeleton.params.iter().zip(params.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} {:?} does not match expected {want_name} {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Model {
            params,
            vocab,
            features,
            ..skeleton
        })
    }
}

fn check_hash(what: &'static str, expected: ContentHash, found: ContentHash) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::HashMismatch {
            what,
            expected: expected.to_hex(),
            found: found.to_hex(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            embedding_dim: 5,
            max_len: 8,
            filters_per_width: 3,
            head_hidden: 4,
            ..ModelConfig::default()
        }
    }

    fn vocab() -> Vocab {
        Vocab::new(["a", "b", "c"].iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn shapes_follow_the_config() {
        let m = Model::build_with_vocab(ModelConfig::default(), vocab()).unwrap();
        assert_eq!(m.config.concat_width(), 416);
        let head = m.params.find("head.fc1.weight").unwrap();
        assert_eq!(m.params.get(head).shape(), &[32, 416]);

        let cfg = ModelConfig::for_dataset(DatasetKind::MulticlassShort);
        let m = Model::build_with_vocab(cfg, vocab()).unwrap();
        assert_eq!(m.config.concat_width(), 64);
        let fc0 = m.params.find("mlp.fc0.weight").unwrap();
        assert_eq!(m.params.get(fc0).shape(), &[64, 12]);
        let fc1 = m.params.find("mlp.fc1.weight").unwrap();
        assert_eq!(m.params.get(fc1).shape(), &[32, 64]);
        let out = m.params.find("head.fc2.weight").unwrap();
        assert_eq!(m.params.get(out).shape(), &[6, 32]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build_with_vocab(tiny(Variant::DcnnCapsNet), vocab()).unwrap();
        let b = Model::build_with_vocab(tiny(Variant::DcnnCapsNet), vocab()).unwrap();
        assert_eq!(a.params, b.params);
        let mut cfg = tiny(Variant::DcnnCapsNet);
        cfg.seed = 1;
        let c = Model::build_with_vocab(cfg, vocab()).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn invalid_config_lists_violations() {
        let cfg = ModelConfig {
            num_classes: 1,
            max_len: 3,
            dropout: 1.0,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("num_classes") && err.contains("exceeds max_len") && err.contains("dropout"), "{err}");
    }

    #[test]
    fn zero_inputs_give_half_activations() {
        let m = Model::build_with_vocab(tiny(Variant::DcnnCapsNet), vocab()).unwrap();
        let seq = EmbeddedSequence::from_matrix("z", &[], 0, 5, 8);
        let a = m.forward_dcnn(&seq).unwrap();
        assert_eq!(a.data(), &[0.5, 0.5]);

        let mut m = Model::build_with_vocab(tiny(Variant::MlpCapsNet), vocab()).unwrap();
        let extractor = FeatureExtractor::default();
        m.fit_features(&[NewsExample::new("1", "x", 0)], &extractor).unwrap();
        let features = IndirectFeatureVector {
            values: [0.0; FEATURE_COUNT],
            lexicon: extractor.lexicon_hash(),
            stopwords: extractor.stopword_hash(),
        };
        assert_eq!(m.forward_mlp(&seq, &features).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn short_sequence_rejected() {
        let m = Model::build_with_vocab(tiny(Variant::DcnnCapsNet), vocab()).unwrap();
        let seq = EmbeddedSequence::from_matrix("z", &[], 0, 5, 3);
        assert!(matches!(
            m.forward_dcnn(&seq),
            Err(Error::SequenceTooShort { len: 3, required: 4 })
        ));
    }

    #[test]
    fn feature_hash_mismatch_rejected() {
        let mut m = Model::build_with_vocab(tiny(Variant::MlpCapsNet), vocab()).unwrap();
        m.fit_features(&[NewsExample::new("1", "x", 0)], &FeatureExtractor::default()).unwrap();
        let other = FeatureExtractor {
            stopwords: crate::features::Stopwords::from_words(["zzz"]),
            ..FeatureExtractor::default()
        };
        let r = m.predict(&NewsExample::new("2", "a b", 0), &other, None);
        assert!(matches!(r, Err(Error::HashMismatch { .. })), "{r:?}");
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.9, 0.1]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn predict_is_deterministic() {
        let m = Model::build_with_vocab(tiny(Variant::DcnnCapsNet), vocab()).unwrap();
        let ex = NewsExample::new("1", "a b c a b", 0);
        let x = FeatureExtractor::default();
        assert_eq!(m.predict(&ex, &x, None).unwrap(), m.predict(&ex, &x, None).unwrap());
    }

    #[test]
    fn config_entries_round_trip() {
        let mut cfg = ModelConfig::for_dataset(DatasetKind::MulticlassShort);
        cfg.dropout = 0.3;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.entries() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("nope", "1").is_err());
    }
}
