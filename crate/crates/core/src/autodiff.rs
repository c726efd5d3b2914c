//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and enough context to run its vector-Jacobian product later. Node ids
//! are handed out in creation order, so the tape is topologically sorted by
//! construction and [`Graph::backward`] is a single reverse sweep.
//!
//! Parameters are borrowed into the tape (`Graph::param`) rather than copied,
//! which lets many graphs evaluate the same model concurrently.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d { input: Var, filters: Var, bias: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    LeakyRelu { input: Var, alpha: f64 },
    Dense { x: Var, w: Var, b: Var },
    Sigmoid { input: Var },
    Softmax { input: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Concat { inputs: Vec<Var> },
    Sum { input: Var },
    WeightedSum { input: Var, weights: Vec<f64> },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: f64 },
    Reshape { input: Var },
    Squash { input: Var },
    GatherRows { input: Var, rows: Vec<Option<usize>> },
    CapsuleTransform { input: Var, weights: Var, types: Vec<usize> },
    RouteSum { couplings: Var, predictions: Var },
    RouteAgree { predictions: Var, poses: Var },
    MarginLoss { input: Var, target: Vec<f64>, m_plus: f64, m_minus: f64, lambda: f64 },
    CrossEntropy { input: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Below this norm a capsule pose is treated as the zero vector by squash.
pub const SQUASH_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require gradients or was not reached from the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }

    /// Like [`get`](Self::get) but materializes zeros for unreached nodes.
    pub fn dense(&self, var: Var) -> Vec<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[var.0]],
        }
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads[var.0].take()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn squash_factor(norm: f64) -> f64 {
    // ‖s‖²/(1+‖s‖²) · 1/‖s‖
    norm / (1.0 + norm * norm)
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Borrowed trainable tensor.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, true)
    }

    /// Borrowed tensor that never receives a gradient.
    pub fn frozen(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, false)
    }

    pub fn input(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.input(tensor, false)
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Valid, stride-1 1-D convolution: `L×D` input, `K×w×D` filters, `K`
    /// bias, producing `(L−w+1)×K`.
    pub fn conv1d(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var> {
        let (x, f, b) = (self.value(input), self.value(filters), self.value(bias));
        if x.rank() != 2 {
            return Err(Error::dim("conv1d", format!("input must be L×D, got {:?}", x.shape())));
        }
        if f.rank() != 3 {
            return Err(Error::dim("conv1d", format!("filters must be K×w×D, got {:?}", f.shape())));
        }
        let (l, d) = (x.shape()[0], x.shape()[1]);
        let (k, w, fd) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        if fd != d {
            return Err(Error::dim(
                "conv1d",
                format!("filter depth (filters axis 2) = {fd} but input depth (input axis 1) = {d}"),
            ));
        }
        if b.shape() != [k] {
            return Err(Error::dim(
                "conv1d",
                format!("bias axis 0 = {:?} but filter count (filters axis 0) = {k}", b.shape()),
            ));
        }
        if l < w {
            return Err(Error::SequenceTooShort { len: l, required: w });
        }
        let t_out = l - w + 1;
        let span = w * d;
        let (xd, fdata, bd) = (x.data(), f.data(), b.data());
        let mut out = vec![0.0; t_out * k];
        for t in 0..t_out {
            let window = &xd[t * d..t * d + span];
            let row = &mut out[t * k..(t + 1) * k];
            for (kk, o) in row.iter_mut().enumerate() {
                *o = bd[kk] + dot(window, &fdata[kk * span..(kk + 1) * span]);
            }
        }
        let value = Tensor::from_parts(vec![t_out, k], out);
        Ok(self.derived(value, Op::Conv1d { input, filters, bias }, &[input, filters, bias]))
    }

    /// Column-wise max over the first axis of an `L×K` matrix.
    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 2 {
            return Err(Error::dim("global_max_pool", format!("expected L×K, got {:?}", x.shape())));
        }
        let (l, k) = (x.shape()[0], x.shape()[1]);
        if l == 0 {
            return Err(Error::Empty("global_max_pool"));
        }
        let xd = x.data();
        let mut argmax = vec![0usize; k];
        let mut out = xd[..k].to_vec();
        for t in 1..l {
            for kk in 0..k {
                let v = xd[t * k + kk];
                if v > out[kk] {
                    out[kk] = v;
                    argmax[kk] = t;
                }
            }
        }
        let value = Tensor::vector(out);
        Ok(self.derived(value, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { alpha * v })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.derived(value, Op::LeakyRelu { input, alpha }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.leaky_relu(input, 0.0)
    }

    /// `W·x + b` with `W: m×n`, `x: n`, `b: m`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 {
            return Err(Error::dim("dense", format!("weights must be m×n, got {:?}", wv.shape())));
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.len() != n {
            return Err(Error::dim("dense", format!("input length {} but weight columns {n}", xv.len())));
        }
        if bv.shape() != [m] {
            return Err(Error::dim("dense", format!("bias shape {:?} but weight rows {m}", bv.shape())));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let out = (0..m).map(|i| bd[i] + dot(&wd[i * n..(i + 1) * n], xd)).collect();
        Ok(self.derived(Tensor::vector(out), Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.derived(value, Op::Sigmoid { input }, &[input])
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = *x.shape().last().expect("tensor has rank ≥ 1");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.derived(value, Op::Softmax { input }, &[input])
    }

    /// Inverted dropout. Outside training, or with `p == 0`, returns `input`
    /// itself.
    pub fn dropout(&mut self, input: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.derived(value, Op::Dropout { input, mask }, &[input]))
    }

    /// Flattens and joins the inputs into one vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut out = Vec::new();
        for v in inputs {
            out.extend_from_slice(self.value(*v).data());
        }
        let value = Tensor::vector(out);
        Ok(self.derived(value, Op::Concat { inputs: inputs.to_vec() }, inputs))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().sum();
        self.derived(Tensor::scalar(total), Op::Sum { input }, &[input])
    }

    /// `Σ weights[i]·x[i]` against constant weights; handy as a probe loss.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::dim(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), x.len()),
            ));
        }
        let total = dot(x.data(), &weights);
        Ok(self.derived(Tensor::scalar(total), Op::WeightedSum { input, weights }, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.derived(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        self.derived(value, Op::Scale { input, factor }, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.derived(value, Op::Reshape { input }, &[input]))
    }

    /// Capsule squash along the last axis: `v = ‖s‖²/(1+‖s‖²) · s/‖s‖`,
    /// with `v = 0` when `‖s‖ < SQUASH_EPS`.
    pub fn squash(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let d = *x.shape().last().expect("tensor has rank ≥ 1");
        let mut out = x.data().to_vec();
        for pose in out.chunks_mut(d) {
            let norm = pose.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = if norm < SQUASH_EPS { 0.0 } else { squash_factor(norm) };
            for v in pose.iter_mut() {
                *v *= factor;
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), out);
        self.derived(value, Op::Squash { input }, &[input])
    }

    /// Selects rows of an `R×C` matrix; `None` yields a zero row.
    pub fn gather_rows(&mut self, input: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 2 {
            return Err(Error::dim("gather_rows", format!("expected R×C, got {:?}", x.shape())));
        }
        if rows.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; rows.len() * c];
        for (dst, src) in out.chunks_mut(c).zip(&rows) {
            if let Some(i) = *src {
                if i >= r {
                    return Err(Error::dim("gather_rows", format!("row {i} out of range for {r} rows")));
                }
                dst.copy_from_slice(x.row(i));
            }
        }
        let value = Tensor::from_parts(vec![rows.len(), c], out);
        Ok(self.derived(value, Op::GatherRows { input, rows }, &[input]))
    }

    /// Capsule predictions `û[n,j] = W[types[n], j] · u[n]`.
    ///
    /// `input` is `N×Din`, `weights` is `T×J×Dout×Din`, and `types[n] < T`
    /// selects which transformation matrix set input capsule `n` uses. The
    /// output is `N×J×Dout`.
    pub fn capsule_transform(&mut self, input: Var, weights: Var, types: Vec<usize>) -> Result<Var> {
        let (u, w) = (self.value(input), self.value(weights));
        if u.rank() != 2 || w.rank() != 4 {
            return Err(Error::dim(
                "capsule_transform",
                format!("expected N×Din and T×J×Dout×Din, got {:?} and {:?}", u.shape(), w.shape()),
            ));
        }
        let (n, din) = (u.shape()[0], u.shape()[1]);
        let (t, j, dout, wdin) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wdin != din {
            return Err(Error::dim(
                "capsule_transform",
                format!("weights axis 3 = {wdin} but input pose axis 1 = {din}"),
            ));
        }
        if types.len() != n || types.iter().any(|&ty| ty >= t) {
            return Err(Error::dim(
                "capsule_transform",
                format!("need {n} capsule types below {t}"),
            ));
        }
        let (ud, wd) = (u.data(), w.data());
        let block = dout * din;
        let mut out = vec![0.0; n * j * dout];
        for (cap, &ty) in types.iter().enumerate() {
            let pose = &ud[cap * din..(cap + 1) * din];
            for jj in 0..j {
                let mat = &wd[(ty * j + jj) * block..(ty * j + jj + 1) * block];
                let dst = &mut out[(cap * j + jj) * dout..(cap * j + jj + 1) * dout];
                for (o, row) in dst.iter_mut().zip(mat.chunks(din)) {
                    *o = dot(row, pose);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, j, dout], out);
        Ok(self.derived(
            value,
            Op::CapsuleTransform { input, weights, types },
            &[input, weights],
        ))
    }

    /// `s[b,j,:] = Σ_i c[b,i,j] · û[b,i,j,:]` for couplings `B×I×J` and
    /// predictions `B×I×J×D`.
    pub fn route_sum(&mut self, couplings: Var, predictions: Var) -> Result<Var> {
        let (c, u) = (self.value(couplings), self.value(predictions));
        if u.rank() != 4 || c.shape() != &u.shape()[..3] {
            return Err(Error::dim(
                "route_sum",
                format!("couplings {:?} do not match predictions {:?}", c.shape(), u.shape()),
            ));
        }
        let (b, i, j, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
        let (cd, ud) = (c.data(), u.data());
        let mut out = vec![0.0; b * j * d];
        for bb in 0..b {
            for ii in 0..i {
                for jj in 0..j {
                    let coeff = cd[(bb * i + ii) * j + jj];
                    let pred = &ud[((bb * i + ii) * j + jj) * d..][..d];
                    axpy(&mut out[(bb * j + jj) * d..][..d], coeff, pred);
                }
            }
        }
        let value = Tensor::from_parts(vec![b, j, d], out);
        Ok(self.derived(
            value,
            Op::RouteSum { couplings, predictions },
            &[couplings, predictions],
        ))
    }

    /// Agreement `a[b,i,j] = û[b,i,j,:] · v[b,j,:]`.
    pub fn route_agree(&mut self, predictions: Var, poses: Var) -> Result<Var> {
        let (u, v) = (self.value(predictions), self.value(poses));
        if u.rank() != 4 || v.rank() != 3 || v.shape()[0] != u.shape()[0] || v.shape()[1..] != u.shape()[2..] {
            return Err(Error::dim(
                "route_agree",
                format!("poses {:?} do not match predictions {:?}", v.shape(), u.shape()),
            ));
        }
        let (b, i, j, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
        let (ud, vd) = (u.data(), v.data());
        let mut out = vec![0.0; b * i * j];
        for bb in 0..b {
            for ii in 0..i {
                for jj in 0..j {
                    out[(bb * i + ii) * j + jj] =
                        dot(&ud[((bb * i + ii) * j + jj) * d..][..d], &vd[(bb * j + jj) * d..][..d]);
                }
            }
        }
        let value = Tensor::from_parts(vec![b, i, j], out);
        Ok(self.derived(value, Op::RouteAgree { predictions, poses }, &[predictions, poses]))
    }

    /// Capsule margin loss over class activations in `[0, 1]`.
    pub fn margin_loss(
        &mut self,
        input: Var,
        target: usize,
        m_plus: f64,
        m_minus: f64,
        lambda: f64,
    ) -> Result<Var> {
        let a = self.value(input);
        let c = a.len();
        if target >= c {
            return Err(Error::Contract(format!("target class {target} out of range for {c} classes")));
        }
        const SLACK: f64 = 1e-9;
        if let Some(bad) = a.data().iter().find(|&&v| !(-SLACK..=1.0 + SLACK).contains(&v)) {
            return Err(Error::Contract(format!("margin loss activation {bad} outside [0, 1]")));
        }
        let target_vec: Vec<f64> = (0..c).map(|k| if k == target { 1.0 } else { 0.0 }).collect();
        let loss = margin_loss_value(a.data(), &target_vec, m_plus, m_minus, lambda);
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::MarginLoss {
                input,
                target: target_vec,
                m_plus,
                m_minus,
                lambda,
            },
            &[input],
        ))
    }

    /// Softmax cross-entropy on raw class scores.
    pub fn cross_entropy(&mut self, input: Var, target: usize) -> Result<Var> {
        let x = self.value(input);
        if target >= x.len() {
            return Err(Error::Contract(format!(
                "target class {target} out of range for {} classes",
                x.len()
            )));
        }
        let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let loss = -(x.data()[target] - max - total.ln());
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy { input, target, probs },
            &[input],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let lens: Vec<usize> = self.nodes.iter().map(|nd| nd.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }

    /// Returns the accumulation buffer for `var`, or `None` when it does not
    /// take gradients.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], var: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[var.0].requires_grad {
            return None;
        }
        let len = self.nodes[var.0].value.len();
        Some(grads[var.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { input, filters, bias } => {
                let x = self.value(*input);
                let f = self.value(*filters);
                let d = x.shape()[1];
                let (k, w) = (f.shape()[0], f.shape()[1]);
                let span = w * d;
                let t_out = node.value.shape()[0];
                if let Some(gb) = self.slot(grads, *bias) {
                    for t in 0..t_out {
                        for kk in 0..k {
                            gb[kk] += g[t * k + kk];
                        }
                    }
                }
                if let Some(gf) = self.slot(grads, *filters) {
                    for t in 0..t_out {
                        let window = &x.data()[t * d..t * d + span];
                        for kk in 0..k {
                            let gv = g[t * k + kk];
                            if gv != 0.0 {
                                axpy(&mut gf[kk * span..(kk + 1) * span], gv, window);
                            }
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *input) {
                    for t in 0..t_out {
                        let dst = &mut gx[t * d..t * d + span];
                        for kk in 0..k {
                            let gv = g[t * k + kk];
                            if gv != 0.0 {
                                axpy(dst, gv, &f.data()[kk * span..(kk + 1) * span]);
                            }
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                let k = argmax.len();
                if let Some(gx) = self.slot(grads, *input) {
                    for (kk, &t) in argmax.iter().enumerate() {
                        gx[t * k + kk] += g[kk];
                    }
                }
            }
            Op::LeakyRelu { input, alpha } => {
                let x = self.value(*input).data();
                if let Some(gx) = self.slot(grads, *input) {
                    for ((dst, &xv), &gv) in gx.iter_mut().zip(x).zip(g) {
                        *dst += if xv > 0.0 { gv } else { alpha * gv };
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let n = xv.len();
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(gb, 1.0, g);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(&mut gw[i * n..(i + 1) * n], gi, xv);
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            axpy(gx, gi, &wv[i * n..(i + 1) * n]);
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *input) {
                    for ((dst, &yv), &gv) in gx.iter_mut().zip(y).zip(g) {
                        *dst += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Softmax { input } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                if let Some(gx) = self.slot(grads, *input) {
                    for ((dst, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let inner = dot(yr, gr);
                        for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - inner);
                        }
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(gx) = self.slot(grads, *input) {
                    for ((dst, &m), &gv) in gx.iter_mut().zip(mask).zip(g) {
                        *dst += m * gv;
                    }
                }
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for v in inputs {
                    let len = self.value(*v).len();
                    if let Some(gx) = self.slot(grads, *v) {
                        axpy(gx, 1.0, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Sum { input } => {
                if let Some(gx) = self.slot(grads, *input) {
                    for dst in gx.iter_mut() {
                        *dst += g[0];
                    }
                }
            }
            Op::WeightedSum { input, weights } => {
                if let Some(gx) = self.slot(grads, *input) {
                    axpy(gx, g[0], weights);
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Scale { input, factor } => {
                if let Some(gx) = self.slot(grads, *input) {
                    axpy(gx, *factor, g);
                }
            }
            Op::Reshape { input } => {
                if let Some(gx) = self.slot(grads, *input) {
                    axpy(gx, 1.0, g);
                }
            }
            Op::Squash { input } => {
                let s = self.value(*input);
                let d = *s.shape().last().unwrap();
                if let Some(gx) = self.slot(grads, *input) {
                    for ((dst, sp), gp) in gx.chunks_mut(d).zip(s.data().chunks(d)).zip(g.chunks(d)) {
                        let sq = dot(sp, sp);
                        let norm = sq.sqrt();
                        if norm < SQUASH_EPS {
                            continue;
                        }
                        // v = f(n)·s with f(n) = n/(1+n²); f'(n) = (1−n²)/(1+n²)²
                        let f = squash_factor(norm);
                        let fprime_over_n = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq) * norm);
                        let sg = dot(sp, gp);
                        for ((dv, &sv), &gv) in dst.iter_mut().zip(sp).zip(gp) {
                            *dv += f * gv + fprime_over_n * sg * sv;
                        }
                    }
                }
            }
            Op::GatherRows { input, rows } => {
                let c = self.value(*input).shape()[1];
                if let Some(gx) = self.slot(grads, *input) {
                    for (src, gr) in rows.iter().zip(g.chunks(c)) {
                        if let Some(i) = *src {
                            axpy(&mut gx[i * c..(i + 1) * c], 1.0, gr);
                        }
                    }
                }
            }
            Op::CapsuleTransform { input, weights, types } => {
                let u = self.value(*input);
                let w = self.value(*weights);
                let din = u.shape()[1];
                let (j, dout) = (w.shape()[1], w.shape()[2]);
                let block = dout * din;
                if let Some(gw) = self.slot(grads, *weights) {
                    for (cap, &ty) in types.iter().enumerate() {
                        let pose = &u.data()[cap * din..(cap + 1) * din];
                        for jj in 0..j {
                            let gout = &g[(cap * j + jj) * dout..][..dout];
                            let mat = &mut gw[(ty * j + jj) * block..][..block];
                            for (row, &go) in mat.chunks_mut(din).zip(gout) {
                                if go != 0.0 {
                                    axpy(row, go, pose);
                                }
                            }
                        }
                    }
                }
                if let Some(gu) = self.slot(grads, *input) {
                    for (cap, &ty) in types.iter().enumerate() {
                        let dst = &mut gu[cap * din..(cap + 1) * din];
                        for jj in 0..j {
                            let gout = &g[(cap * j + jj) * dout..][..dout];
                            let mat = &w.data()[(ty * j + jj) * block..][..block];
                            for (row, &go) in mat.chunks(din).zip(gout) {
                                if go != 0.0 {
                                    axpy(dst, go, row);
                                }
                            }
                        }
                    }
                }
            }
            Op::RouteSum { couplings, predictions } => {
                let c = self.value(*couplings).data();
                let u = self.value(*predictions);
                let (b, i, j, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
                if let Some(gc) = self.slot(grads, *couplings) {
                    for bb in 0..b {
                        for ii in 0..i {
                            for jj in 0..j {
                                let pred = &u.data()[((bb * i + ii) * j + jj) * d..][..d];
                                gc[(bb * i + ii) * j + jj] += dot(&g[(bb * j + jj) * d..][..d], pred);
                            }
                        }
                    }
                }
                if let Some(gu) = self.slot(grads, *predictions) {
                    for bb in 0..b {
                        for ii in 0..i {
                            for jj in 0..j {
                                let coeff = c[(bb * i + ii) * j + jj];
                                axpy(
                                    &mut gu[((bb * i + ii) * j + jj) * d..][..d],
                                    coeff,
                                    &g[(bb * j + jj) * d..][..d],
                                );
                            }
                        }
                    }
                }
            }
            Op::RouteAgree { predictions, poses } => {
                let u = self.value(*predictions);
                let v = self.value(*poses).data();
                let (b, i, j, d) = (u.shape()[0], u.shape()[1], u.shape()[2], u.shape()[3]);
                if let Some(gu) = self.slot(grads, *predictions) {
                    for bb in 0..b {
                        for ii in 0..i {
                            for jj in 0..j {
                                let gv = g[(bb * i + ii) * j + jj];
                                axpy(
                                    &mut gu[((bb * i + ii) * j + jj) * d..][..d],
                                    gv,
                                    &v[(bb * j + jj) * d..][..d],
                                );
                            }
                        }
                    }
                }
                if let Some(gp) = self.slot(grads, *poses) {
                    for bb in 0..b {
                        for ii in 0..i {
                            for jj in 0..j {
                                let gv = g[(bb * i + ii) * j + jj];
                                axpy(
                                    &mut gp[(bb * j + jj) * d..][..d],
                                    gv,
                                    &u.data()[((bb * i + ii) * j + jj) * d..][..d],
                                );
                            }
                        }
                    }
                }
            }
            Op::MarginLoss {
                input,
                target,
                m_plus,
                m_minus,
                lambda,
            } => {
                let a = self.value(*input).data();
                if let Some(ga) = self.slot(grads, *input) {
                    for ((dst, &av), &t) in ga.iter_mut().zip(a).zip(target) {
                        let up = (m_plus - av).max(0.0);
                        let down = (av - m_minus).max(0.0);
                        *dst += g[0] * (-2.0 * t * up + 2.0 * lambda * (1.0 - t) * down);
                    }
                }
            }
            Op::CrossEntropy { input, target, probs } => {
                if let Some(gx) = self.slot(grads, *input) {
                    for (k, (dst, &p)) in gx.iter_mut().zip(probs).enumerate() {
                        let t = if k == *target { 1.0 } else { 0.0 };
                        *dst += g[0] * (p - t);
                    }
                }
            }
        }
    }
}

/// `Σ_k T_k·max(0, m⁺−a_k)² + λ·(1−T_k)·max(0, a_k−m⁻)²`.
pub fn margin_loss_value(activations: &[f64], target: &[f64], m_plus: f64, m_minus: f64, lambda: f64) -> f64 {
    activations
        .iter()
        .zip(target)
        .map(|(&a, &t)| {
            let up = (m_plus - a).max(0.0);
            let down = (a - m_minus).max(0.0);
            t * up * up + lambda * (1.0 - t) * down * down
        })
        .sum()
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, step: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, gi) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        *gi = (plus - minus) / (2.0 * step);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// Largest coordinate-wise `|a−b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
