//! Capsule machinery: squash, routing-by-agreement, the four-stage capsule
//! feature branch and the margin loss.
//!
//! Routing runs on batched prediction tensors of shape `B×I×J×D` (B routing
//! problems, I input capsules, J output capsules, pose dimension D). Every
//! iteration is recorded on the tape, so gradients flow through all of them.
//!
//! The agreement update is the scalar product `b_ij += v_j · û_{j|i}`.

use rand::Rng;

use crate::autodiff::{Graph, Var, SQUASH_EPS};
use crate::error::{Error, Result};
use crate::params::{glorot, Binder, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Squashes one pose vector: same direction, length `‖s‖²/(1+‖s‖²) < 1`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < SQUASH_EPS {
        return vec![0.0; s.len()];
    }
    let factor = norm / (1.0 + norm * norm);
    s.iter().map(|v| v * factor).collect()
}

/// `N×D` capsule poses.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsulePoseSet {
    pub poses: Tensor,
}

impl CapsulePoseSet {
    pub fn count(&self) -> usize {
        self.poses.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.poses.shape()[1]
    }

    pub fn pose(&self, i: usize) -> &[f64] {
        self.poses.row(i)
    }

    pub fn lengths(&self) -> Vec<f64> {
        (0..self.count())
            .map(|i| self.pose(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Result of a standalone routing run.
#[derive(Clone, Debug)]
pub struct RoutingState {
    /// Logits after the last agreement update, `N_in×N_out`.
    pub logits: Tensor,
    /// Couplings used in the final iteration, `N_in×N_out`.
    pub couplings: Tensor,
    /// Couplings of every iteration, in order.
    pub coupling_history: Vec<Tensor>,
    pub iterations: usize,
    pub predictions: Tensor,
    pub output: CapsulePoseSet,
}

/// Tape handles produced by [`route`].
#[derive(Clone, Debug)]
pub struct RoutingTrace {
    /// Output poses `B×J×D`.
    pub poses: Var,
    /// Couplings `B×I×J` for each iteration.
    pub couplings: Vec<Var>,
    /// Logits `B×I×J` entering each iteration.
    pub logits: Vec<Var>,
}

/// Records `iterations` rounds of routing-by-agreement over `predictions`
/// (`B×I×J×D`).
pub fn route(graph: &mut Graph<'_>, predictions: Var, iterations: usize) -> Result<RoutingTrace> {
    if iterations < 1 {
        return Err(Error::Config("routing iterations must be at least 1".into()));
    }
    let shape = graph.value(predictions).shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::dim("route", format!("predictions must be B×I×J×D, got {shape:?}")));
    }
    let mut logits = graph.constant(Tensor::zeros(&shape[..3]));
    let mut trace = RoutingTrace {
        poses: predictions,
        couplings: Vec::with_capacity(iterations),
        logits: Vec::with_capacity(iterations),
    };
    for it in 0..iterations {
        trace.logits.push(logits);
        let c = graph.softmax(logits);
        trace.couplings.push(c);
        let s = graph.route_sum(c, predictions)?;
        let v = graph.squash(s);
        trace.poses = v;
        if it + 1 < iterations {
            let agreement = graph.route_agree(predictions, v)?;
            logits = graph.add(logits, agreement)?;
        }
    }
    Ok(trace)
}

/// Routes predictions `N_in×N_out×D_out` for `r` iterations without
/// gradient tracking and returns the full routing state.
pub fn dynamic_routing(predictions: &Tensor, r: usize) -> Result<RoutingState> {
    if predictions.rank() != 3 {
        return Err(Error::dim(
            "dynamic_routing",
            format!("predictions must be N_in×N_out×D_out, got {:?}", predictions.shape()),
        ));
    }
    let (n_in, n_out, d) = (predictions.shape()[0], predictions.shape()[1], predictions.shape()[2]);
    let mut g = Graph::new();
    let u = g.constant(predictions.clone().reshape(&[1, n_in, n_out, d])?);
    let trace = route(&mut g, u, r)?;
    let agreement = g.route_agree(u, trace.poses)?;
    let last_logits = *trace.logits.last().expect("r ≥ 1");
    let final_logits = g.add(last_logits, agreement)?;
    let as_matrix = |t: &Tensor| t.clone().reshape(&[n_in, n_out]);
    Ok(RoutingState {
        logits: as_matrix(g.value(final_logits))?,
        couplings: as_matrix(g.value(*trace.couplings.last().unwrap()))?,
        coupling_history: trace
            .couplings
            .iter()
            .map(|&c| as_matrix(g.value(c)))
            .collect::<Result<_>>()?,
        iterations: r,
        predictions: predictions.clone(),
        output: CapsulePoseSet {
            poses: g.value(trace.poses).clone().reshape(&[n_out, d])?,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginLossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda_down: f64,
}

impl Default for MarginLossConfig {
    fn default() -> Self {
        MarginLossConfig {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda_down: 0.5,
        }
    }
}

impl MarginLossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.m_plus > 0.0
            && self.m_plus < 1.0
            && self.m_minus > 0.0
            && self.m_minus < self.m_plus
            && self.lambda_down >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "margin loss needs 0 < m⁻ < m⁺ < 1 and λ ≥ 0, got {self:?}"
            )))
        }
    }
}

/// Margin loss value for activations in `[0, 1]` and a target class.
pub fn margin_loss(activations: &[f64], target: usize, cfg: &MarginLossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(&[activations.len()], activations.to_vec())?);
    let l = g.margin_loss(a, target, cfg.m_plus, cfg.m_minus, cfg.lambda_down)?;
    Ok(g.value(l).item())
}

/// Sizes of the capsule feature branch.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleConfig {
    pub conv_filters: usize,
    pub conv_width: usize,
    pub primary_channels: usize,
    pub primary_dim: usize,
    pub conv_caps_channels: usize,
    pub conv_caps_dim: usize,
    pub conv_caps_window: usize,
    pub class_caps: usize,
    pub class_caps_dim: usize,
    pub routing_iterations: usize,
    pub leaky_alpha: f64,
}

impl Default for CapsuleConfig {
    fn default() -> Self {
        CapsuleConfig {
            conv_filters: 32,
            conv_width: 3,
            primary_channels: 4,
            primary_dim: 8,
            conv_caps_channels: 8,
            conv_caps_dim: 8,
            conv_caps_window: 3,
            class_caps: 2,
            class_caps_dim: 16,
            routing_iterations: 1,
            leaky_alpha: 0.01,
        }
    }
}

impl CapsuleConfig {
    pub fn output_len(&self) -> usize {
        self.class_caps * self.class_caps_dim
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
            ("primary_channels", self.primary_channels),
            ("primary_dim", self.primary_dim),
            ("conv_caps_channels", self.conv_caps_channels),
            ("conv_caps_dim", self.conv_caps_dim),
            ("conv_caps_window", self.conv_caps_window),
            ("class_caps", self.class_caps),
            ("class_caps_dim", self.class_caps_dim),
            ("routing_iterations", self.routing_iterations),
        ];
        let zero: Vec<_> = sizes.iter().filter(|(_, v)| *v == 0).map(|(n, _)| *n).collect();
        if !zero.is_empty() {
            return Err(Error::Config(format!("capsule sizes must be positive: {}", zero.join(", "))));
        }
        if !(0.0..1.0).contains(&self.leaky_alpha) {
            return Err(Error::Config(format!("leaky-ReLU slope must be in [0, 1), got {}", self.leaky_alpha)));
        }
        Ok(())
    }
}

/// Parameter handles of the capsule branch.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub primary_w: ParamId,
    pub primary_b: ParamId,
    pub conv_caps_w: ParamId,
    pub class_caps_w: ParamId,
}

impl CapsuleParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        cfg: &CapsuleConfig,
        input_dim: usize,
        rng: &mut R,
    ) -> Self {
        let primary_out = cfg.primary_channels * cfg.primary_dim;
        let window_types = cfg.conv_caps_window * cfg.primary_channels;
        CapsuleParams {
            conv_w: params.add(
                "caps.conv.weight",
                glorot(
                    &[cfg.conv_filters, cfg.conv_width, input_dim],
                    cfg.conv_width * input_dim,
                    cfg.conv_width * cfg.conv_filters,
                    rng,
                ),
            ),
            conv_b: params.add("caps.conv.bias", Tensor::zeros(&[cfg.conv_filters])),
            primary_w: params.add(
                "caps.primary.weight",
                glorot(&[primary_out, 1, cfg.conv_filters], cfg.conv_filters, primary_out, rng),
            ),
            primary_b: params.add("caps.primary.bias", Tensor::zeros(&[primary_out])),
            conv_caps_w: params.add(
                "caps.conv_caps.weight",
                glorot(
                    &[window_types, cfg.conv_caps_channels, cfg.conv_caps_dim, cfg.primary_dim],
                    cfg.primary_dim,
                    cfg.conv_caps_dim,
                    rng,
                ),
            ),
            class_caps_w: params.add(
                "caps.class_caps.weight",
                glorot(
                    &[cfg.conv_caps_channels, cfg.class_caps, cfg.class_caps_dim, cfg.conv_caps_dim],
                    cfg.conv_caps_dim,
                    cfg.class_caps_dim,
                    rng,
                ),
            ),
        }
    }
}

/// The capsule feature branch over an `L×D` embedded sequence:
///
/// 1. n-gram convolution + ReLU,
/// 2. primary capsules: width-1 convolution, grouped into poses, squashed,
/// 3. convolutional capsules: each position routes from a local window of
///    primary capsules (matrices shared across positions),
/// 4. feed-forward capsules: all convolutional capsules route to
///    `class_caps` output capsules (matrices shared per capsule channel).
///
/// The flattened output poses go through a leaky-ReLU; the result has length
/// `class_caps · class_caps_dim` for every valid `L`.
pub fn capsule_branch<'p>(
    graph: &mut Graph<'p>,
    binder: &mut Binder<'p>,
    params: &CapsuleParams,
    cfg: &CapsuleConfig,
    embedded: Var,
) -> Result<Var> {
    let conv_w = binder.bind(graph, params.conv_w);
    let conv_b = binder.bind(graph, params.conv_b);
    let conv = graph.conv1d(embedded, conv_w, conv_b)?;
    let features = graph.relu(conv);

    let primary_w = binder.bind(graph, params.primary_w);
    let primary_b = binder.bind(graph, params.primary_b);
    let primary = graph.conv1d(features, primary_w, primary_b)?;
    let positions = graph.value(primary).shape()[0];
    let pc = cfg.primary_channels;
    let primary = graph.reshape(primary, &[positions * pc, cfg.primary_dim])?;
    let primary = graph.squash(primary);

    // Short inputs are padded with zero capsules so at least one window exists.
    let window = cfg.conv_caps_window;
    let out_positions = positions.saturating_sub(window - 1).max(1);
    let mut rows = Vec::with_capacity(out_positions * window * pc);
    let mut types = Vec::with_capacity(rows.capacity());
    for p in 0..out_positions {
        for k in 0..window {
            for a in 0..pc {
                rows.push((p + k < positions).then_some((p + k) * pc + a));
                types.push(k * pc + a);
            }
        }
    }
    let windows = graph.gather_rows(primary, rows)?;
    let conv_caps_w = binder.bind(graph, params.conv_caps_w);
    let predictions = graph.capsule_transform(windows, conv_caps_w, types)?;
    let predictions = graph.reshape(
        predictions,
        &[out_positions, window * pc, cfg.conv_caps_channels, cfg.conv_caps_dim],
    )?;
    let conv_caps = route(graph, predictions, cfg.routing_iterations)?.poses;

    let n_caps = out_positions * cfg.conv_caps_channels;
    let flat = graph.reshape(conv_caps, &[n_caps, cfg.conv_caps_dim])?;
    let types = (0..n_caps).map(|n| n % cfg.conv_caps_channels).collect();
    let class_caps_w = binder.bind(graph, params.class_caps_w);
    let predictions = graph.capsule_transform(flat, class_caps_w, types)?;
    let predictions = graph.reshape(predictions, &[1, n_caps, cfg.class_caps, cfg.class_caps_dim])?;
    let class_caps = route(graph, predictions, cfg.routing_iterations)?.poses;
    let flat = graph.reshape(class_caps, &[cfg.output_len()])?;
    Ok(graph.leaky_relu(flat, cfg.leaky_alpha))
}
