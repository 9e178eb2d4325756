//! The MagNet network: stacked Chebyshev convolutions over the scaled
//! magnetic Laplacian, complex ReLU, unwind, dropout, linear, softmax.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, softmax_rows, Checkpoint, NodeId, ParamId, ParamStore, Parameter, Tape};
use crate::dense::ComplexFeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::{Charge, DirectedGraph};
use crate::rng::{stream_rng, Stream};
use crate::sparse::ComplexSparseMatrix;
use crate::spectral::{self, IsolatedPolicy, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    NodeClassification,
    LinkPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinkScheme {
    #[default]
    Direction,
    Existence,
    ThreeClass,
}

impl LinkScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LinkScheme::Direction | LinkScheme::Existence => 2,
            LinkScheme::ThreeClass => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkScheme::Direction => "direction",
            LinkScheme::Existence => "existence",
            LinkScheme::ThreeClass => "three_class",
        }
    }
}

impl FromStr for LinkScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direction" => Ok(LinkScheme::Direction),
            "existence" => Ok(LinkScheme::Existence),
            "three_class" => Ok(LinkScheme::ThreeClass),
            other => Err(Error::InvalidConfig(format!("unknown link scheme {other:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagNetConfig {
    pub q: f64,
    /// Chebyshev order `K`.
    pub k: usize,
    /// Number of convolutional layers `L`.
    pub num_layers: usize,
    pub hidden_channels: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub task: Task,
    pub link_scheme: LinkScheme,
    pub normalization: Normalization,
    pub bias: bool,
    /// One `theta_k` per layer shared by every channel pair.
    pub share_theta: bool,
    /// Accept `q > 0.25`.
    pub unrestricted_q: bool,
}

impl Default for MagNetConfig {
    fn default() -> Self {
        Self {
            q: 0.25,
            k: 1,
            num_layers: 2,
            hidden_channels: 16,
            num_classes: 5,
            dropout: 0.5,
            task: Task::NodeClassification,
            link_scheme: LinkScheme::Direction,
            normalization: Normalization::Normalized,
            bias: true,
            share_theta: false,
            unrestricted_q: false,
        }
    }
}

impl MagNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.charge()?;
        if !(2..=3).contains(&self.num_layers) {
            return Err(Error::InvalidConfig(format!(
                "num_layers must be 2 or 3, got {}",
                self.num_layers
            )));
        }
        if self.hidden_channels == 0 {
            return Err(Error::InvalidConfig("hidden_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.task == Task::LinkPrediction && self.num_classes != self.link_scheme.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "link scheme {} needs num_classes = {}, got {}",
                self.link_scheme.as_str(),
                self.link_scheme.num_classes(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn charge(&self) -> Result<Charge> {
        if self.unrestricted_q {
            Charge::unrestricted(self.q)
        } else {
            Charge::new(self.q)
        }
    }

    /// Trainable scalar count for `in_features` input channels, complex
    /// entries counted once.
    pub fn parameter_count(&self, in_features: usize) -> usize {
        let f = self.hidden_channels;
        let mut n = 0;
        let mut fin = in_features;
        for _ in 0..self.num_layers {
            n += if self.share_theta {
                self.k + 1
            } else {
                fin * f * (self.k + 1)
            };
            if self.bias {
                n += f;
            }
            fin = f;
        }
        let head_in = match self.task {
            Task::NodeClassification => 2 * f,
            Task::LinkPrediction => 4 * f,
        };
        n += head_in * self.num_classes;
        if self.bias {
            n += self.num_classes;
        }
        n
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    theta: Vec<ParamId>,
    bias: Option<ParamId>,
}

/// A MagNet instance bound to one propagation operator.
#[derive(Debug, Clone)]
pub struct MagNet {
    cfg: MagNetConfig,
    in_features: usize,
    operator: Arc<ComplexSparseMatrix>,
    pub params: ParamStore,
    layers: Vec<ConvLayer>,
    head_w: ParamId,
    head_b: Option<ParamId>,
}

/// Scaled operator `2 L / lambda_max - I` used inside every layer.
pub fn model_operator(g: &DirectedGraph, cfg: &MagNetConfig) -> Result<ComplexSparseMatrix> {
    let l = spectral::build_laplacian_with(g, cfg.charge()?, cfg.normalization, IsolatedPolicy::UnitDiagonal)?;
    let lambda_max = match cfg.normalization {
        Normalization::Normalized => 2.0,
        Normalization::Unnormalized => spectral::lambda_max_estimate(&l, 1e-6)?,
    };
    spectral::scaled_laplacian(&l, lambda_max)
}

pub fn build_model(g: &DirectedGraph, cfg: &MagNetConfig, in_features: usize, seed: u64) -> Result<MagNet> {
    cfg.validate()?;
    let op = model_operator(g, cfg)?;
    build_model_with_operator(op, cfg, in_features, seed)
}

/// Same as [`build_model`] around a caller-supplied (already scaled) operator.
pub fn build_model_with_operator(
    operator: ComplexSparseMatrix,
    cfg: &MagNetConfig,
    in_features: usize,
    seed: u64,
) -> Result<MagNet> {
    cfg.validate()?;
    if operator.rows() != operator.cols() {
        return Err(Error::dims(
            "square operator",
            format!("{}x{}", operator.rows(), operator.cols()),
        ));
    }
    if in_features == 0 {
        return Err(Error::InvalidConfig("at least one input feature is required".into()));
    }
    let mut rng = stream_rng(seed, Stream::INIT);
    let mut params = ParamStore::new();
    let f = cfg.hidden_channels;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut fin = in_features;
    for l in 0..cfg.num_layers {
        let theta = (0..=cfg.k)
            .map(|k| {
                let value = if cfg.share_theta {
                    glorot_uniform(1, 1, &mut rng)
                } else {
                    glorot_uniform(fin, f, &mut rng)
                };
                params.add(Parameter::real(format!("conv{l}.theta{k}"), value))
            })
            .collect();
        let bias = cfg.bias.then(|| {
            params.add(Parameter::complex(
                format!("conv{l}.bias"),
                Array2::zeros((1, f)),
                Array2::zeros((1, f)),
            ))
        });
        layers.push(ConvLayer { theta, bias });
        fin = f;
    }
    let head_in = match cfg.task {
        Task::NodeClassification => 2 * f,
        Task::LinkPrediction => 4 * f,
    };
    let head_w = params.add(Parameter::real(
        "head.weight",
        glorot_uniform(head_in, cfg.num_classes, &mut rng),
    ));
    let head_b = cfg
        .bias
        .then(|| params.add(Parameter::real("head.bias", Array2::zeros((1, cfg.num_classes)))));
    Ok(MagNet {
        cfg: cfg.clone(),
        in_features,
        operator: Arc::new(operator),
        params,
        layers,
        head_w,
        head_b,
    })
}

impl MagNet {
    pub fn config(&self) -> &MagNetConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &ComplexSparseMatrix {
        &self.operator
    }

    pub fn num_vertices(&self) -> usize {
        self.operator.rows()
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_entries()
    }

    fn check_input(&self, x0: &ComplexFeatureMatrix) -> Result<()> {
        if x0.dim() != (self.num_vertices(), self.in_features) {
            return Err(Error::dims(
                format!("{}x{} features", self.num_vertices(), self.in_features),
                format!("{}x{}", x0.rows(), x0.cols()),
            ));
        }
        Ok(())
    }

    /// Convolution stack followed by unwind; returns the real `N x 2F` node.
    pub fn record_embedding(&self, tape: &mut Tape, x0: &ComplexFeatureMatrix) -> Result<NodeId> {
        self.check_input(x0)?;
        let mut h = tape.input_complex(x0.clone());
        for layer in &self.layers {
            let mut basis = Vec::with_capacity(self.cfg.k + 1);
            basis.push(h);
            if self.cfg.k >= 1 {
                basis.push(tape.operator_apply(&self.operator, h)?);
            }
            for k in 2..=self.cfg.k {
                let lt = tape.operator_apply(&self.operator, basis[k - 1])?;
                basis.push(tape.lincomb(2.0, lt, basis[k - 2]));
            }
            let terms: Vec<(NodeId, ParamId)> = basis.into_iter().zip(layer.theta.iter().copied()).collect();
            let z = if self.cfg.share_theta {
                let mixed = tape.shared_mix(&self.params, &terms, self.cfg.hidden_channels)?;
                match layer.bias {
                    Some(b) => tape.mix_bias(&self.params, mixed, b)?,
                    None => mixed,
                }
            } else {
                tape.mix(&self.params, &terms, layer.bias)?
            };
            h = tape.complex_relu(z);
        }
        Ok(tape.unwind(h))
    }

    /// Node-classification logits. Dropout is active iff `dropout_rng` is given.
    pub fn record_node_logits(
        &self,
        tape: &mut Tape,
        x0: &ComplexFeatureMatrix,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<NodeId> {
        if self.cfg.task != Task::NodeClassification {
            return Err(Error::InvalidConfig("model was built for link prediction".into()));
        }
        let u = self.record_embedding(tape, x0)?;
        let d = tape.dropout(u, self.cfg.dropout, dropout_rng)?;
        tape.linear(&self.params, d, self.head_w, self.head_b)
    }

    /// Link logits, one row per `(u, v)` pair: `[row u | row v]` of the
    /// unwound embedding.
    pub fn record_link_logits(
        &self,
        tape: &mut Tape,
        x0: &ComplexFeatureMatrix,
        pairs: &[(usize, usize)],
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<NodeId> {
        if self.cfg.task != Task::LinkPrediction {
            return Err(Error::InvalidConfig("model was built for node classification".into()));
        }
        let u = self.record_embedding(tape, x0)?;
        let p = tape.gather_pairs(u, pairs)?;
        let d = tape.dropout(p, self.cfg.dropout, dropout_rng)?;
        tape.linear(&self.params, d, self.head_w, self.head_b)
    }

    /// Evaluation-mode class probabilities per node.
    pub fn forward_node(&self, x0: &ComplexFeatureMatrix) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let logits = self.record_node_logits(&mut tape, x0, None)?;
        Ok(softmax_rows(tape.value(logits).as_real()))
    }

    /// Evaluation-mode class probabilities per pair.
    pub fn forward_link(&self, x0: &ComplexFeatureMatrix, pairs: &[(usize, usize)]) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let logits = self.record_link_logits(&mut tape, x0, pairs, None)?;
        Ok(softmax_rows(tape.value(logits).as_real()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint()
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        self.params.load_checkpoint(ck)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.checkpoint().to_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.load_checkpoint(&Checkpoint::from_json(&text)?)
    }
}

/// Real features lifted to complex with zero imaginary part.
pub fn lift_features(x: &Array2<f64>) -> ComplexFeatureMatrix {
    ComplexFeatureMatrix::from_real(x.clone())
}
