//! Double-precision neural kernel: dense layers, multi-head graph attention,
//! an LSTM cell, the Q-value head, and hand-written reverse-mode gradients
//! for all of them.
//!
//! A [`QNetwork`] maps one decision input to `num_actions` values. The
//! spatial-temporal encoder runs graph attention on every frame of an
//! observation window and feeds the per-frame spatial features through the
//! LSTM; the dense encoder is a two-layer tanh MLP over the flattened latest
//! observation. Both end in the same [`QHead`].

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Glorot-uniform: U(±sqrt(6 / (fan_in + fan_out))).
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-limit..=limit)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Uniform access to every learnable tensor, in declaration order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
    }

    fn grad_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }

    /// `self += other`, tensor by tensor.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.data_mut().copy_from_slice(b.data());
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// `out += W x` for row-major `W` with `cols` columns.
fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ dy`.
fn matvec_t_acc(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (&d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if d != 0.0 {
            axpy(d, row, dx);
        }
    }
}

/// `g += dy xᵀ`.
fn outer_acc(g: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (&d, row) in dy.iter().zip(g.chunks_exact_mut(cols)) {
        if d != 0.0 {
            axpy(d, x, row);
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::glorot(&[output, input], input, output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.data().to_vec();
        matvec_acc(self.weight.data(), self.input_dim(), x, &mut out);
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let cols = self.input_dim();
        outer_acc(grad.weight.data_mut(), cols, dy, x);
        axpy(1.0, dy, grad.bias.data_mut());
        let mut dx = vec![0.0; cols];
        matvec_t_acc(self.weight.data(), cols, dy, &mut dx);
        dx
    }
}

impl Parameters for Dense {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// What the attention-weighted sum runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Σ α_ij W x_j per head, plus a learned self-loop projection of x_i.
    Projected,
    /// Σ α_ij x_j per head on raw features, no self term.
    Raw,
}

/// One graph-attention input: the ego node's features and up to
/// `mask.len()` neighbor feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFrame {
    pub self_feat: Vec<f64>,
    /// Row-major, `mask.len()` rows of the ego feature width; masked rows are ignored.
    pub neighbor_feats: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GraphFrame {
    pub fn neighbor(&self, k: usize) -> &[f64] {
        let f = self.self_feat.len();
        &self.neighbor_feats[k * f..(k + 1) * f]
    }

    pub fn any_valid(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub num_heads: usize,
    pub head_dim: usize,
    pub input_dim: usize,
    pub leak: f64,
    pub aggregation: Aggregation,
    /// Stacked per-head projections, `[heads * head_dim, input_dim]`.
    pub projection: Tensor,
    /// Per-head attention vectors, `[heads, 2 * head_dim]`.
    pub attention: Tensor,
    /// Self-loop projection `[heads * head_dim, input_dim]`; empty in raw mode.
    pub self_projection: Tensor,
}

impl GatParams {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        num_heads: usize,
        leak: f64,
        aggregation: Aggregation,
        rng: &mut R,
    ) -> Result<Self> {
        if num_heads == 0 || !hidden_dim.is_multiple_of(num_heads) {
            return Err(Error::Shape(format!(
                "hidden dim {hidden_dim} not divisible by {num_heads} heads"
            )));
        }
        let head_dim = hidden_dim / num_heads;
        let projection = Tensor::glorot(&[hidden_dim, input_dim], input_dim, head_dim, rng);
        let attention = Tensor::glorot(&[num_heads, 2 * head_dim], 2 * head_dim, 1, rng);
        let self_projection = match aggregation {
            Aggregation::Projected => Tensor::glorot(&[hidden_dim, input_dim], input_dim, hidden_dim, rng),
            Aggregation::Raw => Tensor::zeros(&[0, input_dim]),
        };
        Ok(Self {
            num_heads,
            head_dim,
            input_dim,
            leak,
            aggregation,
            projection,
            attention,
            self_projection,
        })
    }

    pub fn output_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Projected => self.num_heads * self.head_dim,
            Aggregation::Raw => self.num_heads * self.input_dim,
        }
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_heads * self.head_dim];
        matvec_acc(self.projection.data(), self.input_dim, x, &mut out);
        out
    }
}

impl Parameters for GatParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.projection, &self.attention, &self.self_projection]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.projection, &mut self.attention, &mut self.self_projection]
    }
}

/// Per-head attention coefficients, `[heads][mask.len()]`; masked entries are exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GatCache {
    proj_self: Vec<f64>,
    /// Projected neighbor rows; empty for masked slots.
    proj_nb: Vec<Vec<f64>>,
    /// Pre-activation attention scores `[heads][slot]`.
    scores: Vec<Vec<f64>>,
    attention: Attention,
}

/// Softmax over unmasked neighbors of LeakyReLU(aᵀ[W x_i ‖ W x_j]), per head.
pub fn gat_attention(frame: &GraphFrame, params: &GatParams) -> Result<Attention> {
    Ok(gat_attention_cached(frame, params)?.attention)
}

fn gat_attention_cached(frame: &GraphFrame, params: &GatParams) -> Result<GatCache> {
    if !frame.any_valid() {
        return Err(Error::NoValidAction);
    }
    let d = params.head_dim;
    let slots = frame.mask.len();
    let proj_self = params.project(&frame.self_feat);
    let proj_nb: Vec<Vec<f64>> = (0..slots)
        .map(|k| {
            if frame.mask[k] {
                params.project(frame.neighbor(k))
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut scores = vec![vec![0.0; slots]; params.num_heads];
    let mut coefficients = vec![vec![0.0; slots]; params.num_heads];
    for h in 0..params.num_heads {
        let a = &params.attention.data()[h * 2 * d..(h + 1) * 2 * d];
        let self_term = dot(&a[..d], &proj_self[h * d..(h + 1) * d]);
        let mut max = f64::NEG_INFINITY;
        for k in (0..slots).filter(|&k| frame.mask[k]) {
            let s = self_term + dot(&a[d..], &proj_nb[k][h * d..(h + 1) * d]);
            scores[h][k] = s;
            max = max.max(leaky_relu(s, params.leak));
        }
        let mut total = 0.0;
        for k in (0..slots).filter(|&k| frame.mask[k]) {
            let e = (leaky_relu(scores[h][k], params.leak) - max).exp();
            coefficients[h][k] = e;
            total += e;
        }
        coefficients[h].iter_mut().for_each(|c| *c /= total);
    }
    Ok(GatCache {
        proj_self,
        proj_nb,
        scores,
        attention: Attention { coefficients },
    })
}

/// Attention-weighted neighbor sum, heads concatenated, plus the self-loop
/// term in projected mode.
pub fn gat_aggregate(attention: &Attention, frame: &GraphFrame, params: &GatParams) -> Vec<f64> {
    let proj: Vec<Vec<f64>> = (0..frame.mask.len())
        .map(|k| match (frame.mask[k], params.aggregation) {
            (true, Aggregation::Projected) => params.project(frame.neighbor(k)),
            _ => Vec::new(),
        })
        .collect();
    aggregate(attention, frame, &proj, params)
}

fn aggregate(attention: &Attention, frame: &GraphFrame, proj_nb: &[Vec<f64>], params: &GatParams) -> Vec<f64> {
    let mut z = vec![0.0; params.output_dim()];
    match params.aggregation {
        Aggregation::Projected => {
            let d = params.head_dim;
            for h in 0..params.num_heads {
                for k in (0..frame.mask.len()).filter(|&k| frame.mask[k]) {
                    let a = attention.coefficients[h][k];
                    axpy(a, &proj_nb[k][h * d..(h + 1) * d], &mut z[h * d..(h + 1) * d]);
                }
            }
            matvec_acc(
                params.self_projection.data(),
                params.input_dim,
                &frame.self_feat,
                &mut z,
            );
        }
        Aggregation::Raw => {
            let f = params.input_dim;
            for h in 0..params.num_heads {
                for k in (0..frame.mask.len()).filter(|&k| frame.mask[k]) {
                    let a = attention.coefficients[h][k];
                    axpy(a, frame.neighbor(k), &mut z[h * f..(h + 1) * f]);
                }
            }
        }
    }
    z
}

fn gat_backward(frame: &GraphFrame, cache: &GatCache, dz: &[f64], params: &GatParams, grad: &mut GatParams) {
    let d = params.head_dim;
    let f = params.input_dim;
    let slots = frame.mask.len();
    let valid: Vec<usize> = (0..slots).filter(|&k| frame.mask[k]).collect();
    let mut d_proj_self = vec![0.0; params.num_heads * d];
    let mut d_proj_nb: Vec<Vec<f64>> = (0..slots)
        .map(|k| {
            if frame.mask[k] {
                vec![0.0; params.num_heads * d]
            } else {
                Vec::new()
            }
        })
        .collect();

    if params.aggregation == Aggregation::Projected {
        outer_acc(grad.self_projection.data_mut(), f, dz, &frame.self_feat);
    }
    for h in 0..params.num_heads {
        let alpha = &cache.attention.coefficients[h];
        // dL/dα_k for this head.
        let mut d_alpha = vec![0.0; slots];
        for &k in &valid {
            match params.aggregation {
                Aggregation::Projected => {
                    let dzh = &dz[h * d..(h + 1) * d];
                    d_alpha[k] = dot(dzh, &cache.proj_nb[k][h * d..(h + 1) * d]);
                    axpy(alpha[k], dzh, &mut d_proj_nb[k][h * d..(h + 1) * d]);
                }
                Aggregation::Raw => {
                    d_alpha[k] = dot(&dz[h * f..(h + 1) * f], frame.neighbor(k));
                }
            }
        }
        let weighted: f64 = valid.iter().map(|&k| alpha[k] * d_alpha[k]).sum();
        let a = &params.attention.data()[h * 2 * d..(h + 1) * 2 * d];
        let mut da = vec![0.0; 2 * d];
        for &k in &valid {
            let de = alpha[k] * (d_alpha[k] - weighted);
            let slope = if cache.scores[h][k] > 0.0 { 1.0 } else { params.leak };
            let ds = de * slope;
            if ds == 0.0 {
                continue;
            }
            axpy(ds, &cache.proj_self[h * d..(h + 1) * d], &mut da[..d]);
            axpy(ds, &cache.proj_nb[k][h * d..(h + 1) * d], &mut da[d..]);
            axpy(ds, &a[..d], &mut d_proj_self[h * d..(h + 1) * d]);
            axpy(ds, &a[d..], &mut d_proj_nb[k][h * d..(h + 1) * d]);
        }
        axpy(1.0, &da, &mut grad.attention.data_mut()[h * 2 * d..(h + 1) * 2 * d]);
    }
    outer_acc(grad.projection.data_mut(), f, &d_proj_self, &frame.self_feat);
    for &k in &valid {
        outer_acc(grad.projection.data_mut(), f, &d_proj_nb[k], frame.neighbor(k));
    }
}

/// Standard LSTM cell. Gate rows are stacked input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden_dim]);
        bias.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        Self {
            input_dim,
            hidden_dim,
            w_input: Tensor::glorot(&[4 * hidden_dim, input_dim], input_dim, hidden_dim, rng),
            w_hidden: Tensor::glorot(&[4 * hidden_dim, hidden_dim], hidden_dim, hidden_dim, rng),
            bias,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_input: Tensor::zeros(&[4 * hidden_dim, input_dim]),
            w_hidden: Tensor::zeros(&[4 * hidden_dim, hidden_dim]),
            bias: Tensor::zeros(&[4 * hidden_dim]),
        }
    }
}

impl Parameters for LstmParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    z: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates: i, f, g, o stacked.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn lstm_step(z: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> LstmState {
    let (state, _) = lstm_step_cached(z, h_prev, c_prev, params);
    state
}

fn lstm_step_cached(z: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> (LstmState, LstmCache) {
    let hd = params.hidden_dim;
    let mut gates = params.bias.data().to_vec();
    matvec_acc(params.w_input.data(), params.input_dim, z, &mut gates);
    matvec_acc(params.w_hidden.data(), hd, h_prev, &mut gates);
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if (2 * hd..3 * hd).contains(&k) {
            g.tanh()
        } else {
            logistic(*g)
        };
    }
    let mut c = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = c[j].tanh();
        h[j] = o * tanh_c[j];
    }
    let cache = LstmCache {
        z: z.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        tanh_c,
    };
    (LstmState { h, c }, cache)
}

/// Returns `(dz, dh_prev, dc_prev)`.
fn lstm_backward(
    cache: &LstmCache,
    dh: &[f64],
    dc_next: &[f64],
    params: &LstmParams,
    grad: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = params.hidden_dim;
    let g = &cache.gates;
    let mut da = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for j in 0..hd {
        let (i, f, cand, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
        let tc = cache.tanh_c[j];
        let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
        da[j] = dc * cand * i * (1.0 - i);
        da[hd + j] = dc * cache.c_prev[j] * f * (1.0 - f);
        da[2 * hd + j] = dc * i * (1.0 - cand * cand);
        da[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
        dc_prev[j] = dc * f;
    }
    outer_acc(grad.w_input.data_mut(), params.input_dim, &da, &cache.z);
    outer_acc(grad.w_hidden.data_mut(), hd, &da, &cache.h_prev);
    axpy(1.0, &da, grad.bias.data_mut());
    let mut dz = vec![0.0; params.input_dim];
    matvec_t_acc(params.w_input.data(), params.input_dim, &da, &mut dz);
    let mut dh_prev = vec![0.0; hd];
    matvec_t_acc(params.w_hidden.data(), hd, &da, &mut dh_prev);
    (dz, dh_prev, dc_prev)
}

/// Dense ReLU layer followed by a linear layer to one value per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QHead {
    pub hidden: Dense,
    pub output: Dense,
}

impl QHead {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, actions: usize, rng: &mut R) -> Self {
        Self {
            hidden: Dense::new(input, hidden, rng),
            output: Dense::new(hidden, actions, rng),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.output.output_dim()
    }
}

impl Parameters for QHead {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.hidden.tensors();
        v.extend(self.output.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        v
    }
}

/// Sentinel stored in masked action slots.
pub const MASKED_Q: f64 = f64::NEG_INFINITY;

struct HeadCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

fn q_head_forward(head: &QHead, h: &[f64], mask: &[bool]) -> (Vec<f64>, HeadCache) {
    let pre = head.hidden.forward(h);
    let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let mut q = head.output.forward(&act);
    for (v, &m) in q.iter_mut().zip(mask) {
        if !m {
            *v = MASKED_Q;
        }
    }
    (
        q,
        HeadCache {
            input: h.to_vec(),
            pre,
            act,
        },
    )
}

/// Q-values for hidden state `h`; masked actions hold [`MASKED_Q`].
pub fn q_forward(h: &[f64], mask: &[bool], head: &QHead) -> Result<Vec<f64>> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoValidAction);
    }
    Ok(q_head_forward(head, h, mask).0)
}

/// Index of the largest valid value; ties go to the lowest index.
pub fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, (&v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| v > values[b]) {
            best = Some(k);
        }
    }
    best
}

fn q_head_backward(head: &QHead, cache: &HeadCache, dq: &[f64], mask: &[bool], grad: &mut QHead) -> Vec<f64> {
    // Masked slots carry no gradient.
    let dq: Vec<f64> = dq.iter().zip(mask).map(|(&d, &m)| if m { d } else { 0.0 }).collect();
    let d_act = head.output.backward(&cache.act, &dq, &mut grad.output);
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&cache.pre)
        .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
        .collect();
    head.hidden.backward(&cache.input, &d_pre, &mut grad.hidden)
}

/// Two tanh layers over a flat observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub first: Dense,
    pub second: Dense,
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            first: Dense::new(input, hidden, rng),
            second: Dense::new(hidden, hidden, rng),
        }
    }
}

impl Parameters for MlpEncoder {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.first.tensors();
        v.extend(self.second.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.first.tensors_mut();
        v.extend(self.second.tensors_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    SpatialTemporal,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub encoder: EncoderKind,
    pub gat_heads: usize,
    pub gat_hidden: usize,
    pub gat_leak: f64,
    pub aggregation: Aggregation,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub dense_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::SpatialTemporal,
            gat_heads: 4,
            gat_hidden: 64,
            gat_leak: 0.2,
            aggregation: Aggregation::Projected,
            lstm_hidden: 128,
            head_hidden: 64,
            dense_hidden: 128,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gat_heads == 0 || !self.gat_hidden.is_multiple_of(self.gat_heads) {
            return Err(Error::config(
                "agent.arch.gat_hidden",
                "must be a positive multiple of gat_heads",
            ));
        }
        for (name, v) in [
            ("agent.arch.lstm_hidden", self.lstm_hidden),
            ("agent.arch.head_hidden", self.head_hidden),
            ("agent.arch.dense_hidden", self.dense_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be > 0"));
            }
        }
        if !(self.gat_leak >= 0.0) {
            return Err(Error::config("agent.arch.gat_leak", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    SpatialTemporal { gat: GatParams, lstm: LstmParams },
    Dense(MlpEncoder),
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Encoder::SpatialTemporal { gat, lstm } => {
                let mut v = gat.tensors();
                v.extend(lstm.tensors());
                v
            }
            Encoder::Dense(m) => m.tensors(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::SpatialTemporal { gat, lstm } => {
                let mut v = gat.tensors_mut();
                v.extend(lstm.tensors_mut());
                v
            }
            Encoder::Dense(m) => m.tensors_mut(),
        }
    }
}

/// Everything one decision feeds the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    /// Oldest first; `None` frames (padding or isolated node) contribute a zero spatial feature.
    pub frames: Vec<Option<GraphFrame>>,
    /// Flattened latest observation for the dense encoder.
    pub flat: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub encoder: Encoder,
    pub head: QHead,
}

enum EncoderCache {
    SpatialTemporal {
        frames: Vec<Option<GatCache>>,
        steps: Vec<LstmCache>,
    },
    Dense {
        act1: Vec<f64>,
        act2: Vec<f64>,
    },
}

pub struct ForwardCache {
    encoder: EncoderCache,
    head: HeadCache,
}

impl QNetwork {
    /// `frame_dim` is the graph feature width, `flat_dim` the dense-encoder input width.
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchConfig,
        frame_dim: usize,
        flat_dim: usize,
        num_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        let (encoder, hidden) = match arch.encoder {
            EncoderKind::SpatialTemporal => {
                let gat = GatParams::new(
                    frame_dim,
                    arch.gat_hidden,
                    arch.gat_heads,
                    arch.gat_leak,
                    arch.aggregation,
                    rng,
                )?;
                let lstm = LstmParams::new(gat.output_dim(), arch.lstm_hidden, rng);
                (Encoder::SpatialTemporal { gat, lstm }, arch.lstm_hidden)
            }
            EncoderKind::Dense => (
                Encoder::Dense(MlpEncoder::new(flat_dim, arch.dense_hidden, rng)),
                arch.dense_hidden,
            ),
        };
        Ok(Self {
            encoder,
            head: QHead::new(hidden, arch.head_hidden, num_actions, rng),
        })
    }

    pub fn num_actions(&self) -> usize {
        self.head.num_actions()
    }

    /// Encoder output (final hidden state) without caching.
    pub fn encode(&self, input: &NetInput) -> Result<Vec<f64>> {
        Ok(self.encode_cached(input)?.0)
    }

    fn encode_cached(&self, input: &NetInput) -> Result<(Vec<f64>, EncoderCache)> {
        match &self.encoder {
            Encoder::SpatialTemporal { gat, lstm } => {
                let hd = lstm.hidden_dim;
                let mut h = vec![0.0; hd];
                let mut c = vec![0.0; hd];
                let mut frames = Vec::with_capacity(input.frames.len());
                let mut steps = Vec::with_capacity(input.frames.len());
                for frame in &input.frames {
                    let (z, cache) = match frame {
                        Some(f) if f.any_valid() => {
                            if f.self_feat.len() != gat.input_dim
                                || f.neighbor_feats.len() != f.mask.len() * gat.input_dim
                            {
                                return Err(Error::Shape("graph frame width does not match the GAT input".into()));
                            }
                            let cache = gat_attention_cached(f, gat)?;
                            let z = aggregate(&cache.attention, f, &cache.proj_nb, gat);
                            (z, Some(cache))
                        }
                        _ => (vec![0.0; gat.output_dim()], None),
                    };
                    let (state, step) = lstm_step_cached(&z, &h, &c, lstm);
                    h = state.h;
                    c = state.c;
                    frames.push(cache);
                    steps.push(step);
                }
                Ok((h, EncoderCache::SpatialTemporal { frames, steps }))
            }
            Encoder::Dense(m) => {
                if input.flat.len() != m.first.input_dim() {
                    return Err(Error::Shape("flat observation width does not match the encoder".into()));
                }
                let act1: Vec<f64> = m.first.forward(&input.flat).iter().map(|x| x.tanh()).collect();
                let act2: Vec<f64> = m.second.forward(&act1).iter().map(|x| x.tanh()).collect();
                Ok((act2.clone(), EncoderCache::Dense { act1, act2 }))
            }
        }
    }

    /// Masked Q-values.
    pub fn q_values(&self, input: &NetInput) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    pub fn forward(&self, input: &NetInput) -> Result<(Vec<f64>, ForwardCache)> {
        if input.mask.len() != self.num_actions() {
            return Err(Error::Shape(format!(
                "mask has {} entries, head has {}",
                input.mask.len(),
                self.num_actions()
            )));
        }
        if !input.mask.iter().any(|&m| m) {
            return Err(Error::NoValidAction);
        }
        let (h, encoder) = self.encode_cached(input)?;
        let (q, head) = q_head_forward(&self.head, &h, &input.mask);
        Ok((q, ForwardCache { encoder, head }))
    }

    /// Accumulates `dL/dθ` into `grad` given `dq = dL/dQ` (masked entries ignored).
    pub fn backward(&self, input: &NetInput, cache: &ForwardCache, dq: &[f64], grad: &mut QNetwork) {
        let dh = q_head_backward(&self.head, &cache.head, dq, &input.mask, &mut grad.head);
        match (&self.encoder, &cache.encoder, &mut grad.encoder) {
            (
                Encoder::SpatialTemporal { gat, lstm },
                EncoderCache::SpatialTemporal { frames, steps },
                Encoder::SpatialTemporal {
                    gat: g_gat,
                    lstm: g_lstm,
                },
            ) => {
                let mut dh = dh;
                let mut dc = vec![0.0; lstm.hidden_dim];
                for t in (0..steps.len()).rev() {
                    let (dz, dh_prev, dc_prev) = lstm_backward(&steps[t], &dh, &dc, lstm, g_lstm);
                    if let (Some(fc), Some(frame)) = (&frames[t], &input.frames[t]) {
                        gat_backward(frame, fc, &dz, gat, g_gat);
                    }
                    dh = dh_prev;
                    dc = dc_prev;
                }
            }
            (Encoder::Dense(m), EncoderCache::Dense { act1, act2 }, Encoder::Dense(g)) => {
                let d2: Vec<f64> = dh.iter().zip(act2).map(|(d, a)| d * (1.0 - a * a)).collect();
                let d_act1 = m.second.backward(act1, &d2, &mut g.second);
                let d1: Vec<f64> = d_act1.iter().zip(act1).map(|(d, a)| d * (1.0 - a * a)).collect();
                m.first.backward(&input.flat, &d1, &mut g.first);
            }
            _ => unreachable!("gradient buffer must mirror the network"),
        }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    /// A zeroed copy used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero_grad();
        g
    }
}

impl Parameters for QNetwork {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

// Checkpoint layout (all integers and floats little-endian):
//   magic   8 bytes  "LEOQNET\0"
//   version u32      CHECKPOINT_VERSION
//   encoder u32      0 = spatial-temporal, 1 = dense
//   dims    9 x u64  frame_dim, flat_dim, gat_heads, gat_head_dim, aggregation (0 projected, 1 raw),
//                    lstm_hidden, dense_hidden, head_hidden, num_actions
//   leak    f64
//   count   u64      number of tensors
//   tensors          per tensor: rank u32, rank x u64 dims, then the values as f64,
//                    in declaration order (GAT projection, attention, self projection,
//                    LSTM input weights, hidden weights, bias | dense layers; then the head)
const CHECKPOINT_MAGIC: &[u8; 8] = b"LEOQNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl QNetwork {
    fn header_dims(&self) -> ([u64; 9], u32, f64) {
        let head_hidden = self.head.hidden.output_dim() as u64;
        let actions = self.num_actions() as u64;
        match &self.encoder {
            Encoder::SpatialTemporal { gat, lstm } => (
                [
                    gat.input_dim as u64,
                    0,
                    gat.num_heads as u64,
                    gat.head_dim as u64,
                    (gat.aggregation == Aggregation::Raw) as u64,
                    lstm.hidden_dim as u64,
                    0,
                    head_hidden,
                    actions,
                ],
                0,
                gat.leak,
            ),
            Encoder::Dense(m) => (
                [
                    0,
                    m.first.input_dim() as u64,
                    0,
                    0,
                    0,
                    0,
                    m.first.output_dim() as u64,
                    head_hidden,
                    actions,
                ],
                1,
                0.0,
            ),
        }
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let (dims, kind, leak) = self.header_dims();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&kind.to_le_bytes())?;
        for d in dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&leak.to_le_bytes())?;
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u64).to_le_bytes())?;
        for t in tensors {
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = read_u32(&mut r)?;
        let mut dims = [0usize; 9];
        for d in dims.iter_mut() {
            *d = read_u64(&mut r)? as usize;
        }
        let leak = f64::from_le_bytes(read_bytes::<8, _>(&mut r)?);
        let [frame_dim, flat_dim, heads, head_dim, raw, lstm_hidden, dense_hidden, head_hidden, actions] = dims;
        let arch = ArchConfig {
            encoder: match kind {
                0 => EncoderKind::SpatialTemporal,
                1 => EncoderKind::Dense,
                k => return Err(Error::Checkpoint(format!("unknown encoder kind {k}"))),
            },
            gat_heads: heads.max(1),
            gat_hidden: (heads * head_dim).max(1),
            gat_leak: leak,
            aggregation: if raw == 1 {
                Aggregation::Raw
            } else {
                Aggregation::Projected
            },
            lstm_hidden: lstm_hidden.max(1),
            head_hidden,
            dense_hidden: dense_hidden.max(1),
        };
        let mut rng = crate::rng_stream(0, 0);
        let mut net = QNetwork::new(&arch, frame_dim, flat_dim, actions, &mut rng)
            .map_err(|e| Error::Checkpoint(format!("inconsistent header: {e}")))?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = net.tensors_mut();
        if count != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                tensors.len()
            )));
        }
        for t in tensors.iter_mut() {
            let rank = read_u32(&mut r)? as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<_>>()?;
            if shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor shape {shape:?} != expected {:?}",
                    t.shape()
                )));
            }
            for v in t.data_mut() {
                *v = f64::from_le_bytes(read_bytes::<8, _>(&mut r)?);
            }
        }
        Ok(net)
    }
}

fn read_bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes::<4, _>(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes::<8, _>(r)?))
}
