//! ESIM sentence-pair classifier with hand-written reverse-mode gradients.
//!
//! Forward graph for one premise/hypothesis pair:
//!
//! ```text
//! a = BiLSTM_enc(P)            b = BiLSTM_enc(H)          (shared encoder)
//! a, b  <- dropout
//! e_ij = a_i · b_j
//! ã_i = Σ_j softmax_j(e_i·) b_j      b̃_j = Σ_i softmax_i(e_·j) a_i
//! m_a = tanh(W [a; ã; a−ã; a⊙ã] + c)  (same for b)
//! v_a = BiLSTM_comp(m_a)       v_b = BiLSTM_comp(m_b)
//! v_a, v_b <- dropout
//! f = [max(v_a); mean(v_a); max(v_b); mean(v_b)]
//! p = softmax(U tanh(V f + d) + u)
//! ```
//!
//! Every stage honours a per-position mask. Masked positions produce zero
//! states, do not advance the recurrences, get zero attention weight and are
//! excluded from pooling, so padding never changes an example's output.
//!
//! All arithmetic is `f64`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum EsimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The three NLI classes, in their fixed index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment = 0,
    Contradiction = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            _ => Err(format!("unknown label {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsimConfig {
    /// Width of the fused token rows.
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub max_premise_len: usize,
    pub max_hypothesis_len: usize,
}

impl Default for EsimConfig {
    fn default() -> Self {
        EsimConfig {
            input_dim: 1,
            hidden: 500,
            dropout: 0.5,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 64,
            patience: 5,
            seed: 0,
            clip_norm: 5.0,
            max_premise_len: 202,
            max_hypothesis_len: 20,
        }
    }
}

impl EsimConfig {
    pub fn validate(&self) -> Result<(), EsimError> {
        let bad = |m: &str| Err(EsimError::InvalidConfig(m.to_string()));
        if self.input_dim == 0 || self.hidden == 0 {
            return bad("input_dim and hidden must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.patience == 0 {
            return bad("batch_size and patience must be >= 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.max_premise_len == 0 || self.max_hypothesis_len == 0 {
            return bad("sequence caps must be >= 1");
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Linear { weight: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    fn random(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Linear { weight: uniform(out, inp, bound, rng), bias: Array1::zeros(out) }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }
}

/// Standard LSTM cell; gate blocks are stacked in the order i, f, g, o.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    /// `4H × D`
    pub w_ih: Array2<f64>,
    /// `4H × H`
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        LstmCell {
            w_ih: uniform(4 * hidden, input, 1.0 / (input as f64).sqrt(), rng),
            w_hh: uniform(4 * hidden, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstm { fwd: LstmCell::zeros(input, hidden), bwd: LstmCell::zeros(input, hidden) }
    }

    fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let fwd = LstmCell::random(input, hidden, rng);
        let bwd = LstmCell::random(input, hidden, rng);
        BiLstm { fwd, bwd }
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct EsimParams {
    pub encoder: BiLstm,
    /// `H × 8H`
    pub projection: Linear,
    pub composition: BiLstm,
    /// `H × 8H`
    pub hidden: Linear,
    /// `3 × H`
    pub output: Linear,
}

impl EsimParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        EsimParams {
            encoder: BiLstm::zeros(input, hidden),
            projection: Linear::zeros(hidden, 8 * hidden),
            composition: BiLstm::zeros(hidden, hidden),
            hidden: Linear::zeros(hidden, 8 * hidden),
            output: Linear::zeros(3, hidden),
        }
    }

    /// Uniform in `±1/√fan_in`, zero biases.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        EsimParams {
            encoder: BiLstm::random(input, hidden, &mut rng),
            projection: Linear::random(hidden, 8 * hidden, &mut rng),
            composition: BiLstm::random(hidden, hidden, &mut rng),
            hidden: Linear::random(hidden, 8 * hidden, &mut rng),
            output: Linear::random(3, hidden, &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.fwd.input()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.fwd.hidden()
    }

    /// Named tensors in a fixed order: name, shape, row-major values.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(18);
        fn cell<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: &str, c: &'a LstmCell) {
            out.push((format!("{prefix}.w_ih"), c.w_ih.shape().to_vec(), c.w_ih.as_slice().expect("standard layout")));
            out.push((format!("{prefix}.w_hh"), c.w_hh.shape().to_vec(), c.w_hh.as_slice().expect("standard layout")));
            out.push((format!("{prefix}.bias"), c.bias.shape().to_vec(), c.bias.as_slice().expect("standard layout")));
        }
        fn linear<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, prefix: &str, l: &'a Linear) {
            out.push((format!("{prefix}.weight"), l.weight.shape().to_vec(), l.weight.as_slice().expect("standard layout")));
            out.push((format!("{prefix}.bias"), l.bias.shape().to_vec(), l.bias.as_slice().expect("standard layout")));
        }
        cell(&mut out, "encoder.fwd", &self.encoder.fwd);
        cell(&mut out, "encoder.bwd", &self.encoder.bwd);
        linear(&mut out, "projection", &self.projection);
        cell(&mut out, "composition.fwd", &self.composition.fwd);
        cell(&mut out, "composition.bwd", &self.composition.bwd);
        linear(&mut out, "hidden", &self.hidden);
        linear(&mut out, "output", &self.output);
        out
    }

    /// Mutable views in the same order as [`EsimParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn sl<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let EsimParams { encoder, projection, composition, hidden, output } = self;
        vec![
            sl(&mut encoder.fwd.w_ih),
            sl(&mut encoder.fwd.w_hh),
            sl(&mut encoder.fwd.bias),
            sl(&mut encoder.bwd.w_ih),
            sl(&mut encoder.bwd.w_hh),
            sl(&mut encoder.bwd.bias),
            sl(&mut projection.weight),
            sl(&mut projection.bias),
            sl(&mut composition.fwd.w_ih),
            sl(&mut composition.fwd.w_hh),
            sl(&mut composition.fwd.bias),
            sl(&mut composition.bwd.w_ih),
            sl(&mut composition.bwd.w_hh),
            sl(&mut composition.bwd.bias),
            sl(&mut hidden.weight),
            sl(&mut hidden.bias),
            sl(&mut output.weight),
            sl(&mut output.bias),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, _, v)| v.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// `self -= lr · grad`
    fn sgd_step(&mut self, grad: &mut EsimParams, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grad.tensors_mut()) {
            p.iter_mut().zip(g.iter()).for_each(|(p, g)| *p -= lr * g);
        }
    }
}

// ---------------------------------------------------------------------------
// LSTM

struct DirTape {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates i, f, g, o per position.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn lstm_forward(cell: &LstmCell, x: ArrayView2<f64>, mask: &[bool], reverse: bool) -> (Array2<f64>, DirTape) {
    let t_len = x.nrows();
    let h = cell.hidden();
    let zx = x.dot(&cell.w_ih.t());
    let mut out = Array2::zeros((t_len, h));
    let mut tape = DirTape {
        h_prev: Array2::zeros((t_len, h)),
        c_prev: Array2::zeros((t_len, h)),
        gates: Array2::zeros((t_len, 4 * h)),
        tanh_c: Array2::zeros((t_len, h)),
    };
    let mut hs = Array1::<f64>::zeros(h);
    let mut cs = Array1::<f64>::zeros(h);
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..t_len).rev()) } else { Box::new(0..t_len) };
    for t in order {
        if !mask[t] {
            continue;
        }
        let z = cell.w_hh.dot(&hs) + &zx.row(t) + &cell.bias;
        tape.h_prev.row_mut(t).assign(&hs);
        tape.c_prev.row_mut(t).assign(&cs);
        let mut gates = tape.gates.row_mut(t);
        let mut tanh_c = tape.tanh_c.row_mut(t);
        let mut o_row = out.row_mut(t);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            gates[k] = i;
            gates[h + k] = f;
            gates[2 * h + k] = g;
            gates[3 * h + k] = o;
            cs[k] = f * cs[k] + i * g;
            tanh_c[k] = cs[k].tanh();
            hs[k] = o * tanh_c[k];
            o_row[k] = hs[k];
        }
    }
    (out, tape)
}

/// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
fn lstm_backward(
    cell: &LstmCell,
    x: ArrayView2<f64>,
    mask: &[bool],
    reverse: bool,
    tape: &DirTape,
    d_out: ArrayView2<f64>,
    grad: &mut LstmCell,
) -> Array2<f64> {
    let t_len = x.nrows();
    let h = cell.hidden();
    let mut dz_all = Array2::<f64>::zeros((t_len, 4 * h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    // Walk positions in the opposite order of the forward recurrence.
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new(0..t_len) } else { Box::new((0..t_len).rev()) };
    for t in order {
        if !mask[t] {
            continue;
        }
        let gates = tape.gates.row(t);
        let tanh_c = tape.tanh_c.row(t);
        let c_prev = tape.c_prev.row(t);
        let mut dz = dz_all.row_mut(t);
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let dh = d_out[[t, k]] + dh_next[k];
            let d_o = dh * tanh_c[k];
            let dc = dc_next[k] + dh * o * (1.0 - tanh_c[k] * tanh_c[k]);
            dz[k] = dc * g * i * (1.0 - i);
            dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * h + k] = dc * i * (1.0 - g * g);
            dz[3 * h + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next = cell.w_hh.t().dot(&dz);
    }
    grad.w_ih += &dz_all.t().dot(&x);
    grad.w_hh += &dz_all.t().dot(&tape.h_prev);
    grad.bias += &dz_all.sum_axis(Axis(0));
    dz_all.dot(&cell.w_ih)
}

struct BiTape {
    input: Array2<f64>,
    fwd: DirTape,
    bwd: DirTape,
}

fn bilstm_tape(params: &BiLstm, x: ArrayView2<f64>, mask: &[bool]) -> (Array2<f64>, BiTape) {
    let (hf, fwd) = lstm_forward(&params.fwd, x, mask, false);
    let (hb, bwd) = lstm_forward(&params.bwd, x, mask, true);
    let out = concatenate(Axis(1), &[hf.view(), hb.view()]).expect("equal row counts");
    (out, BiTape { input: x.to_owned(), fwd, bwd })
}

fn bilstm_backward(params: &BiLstm, mask: &[bool], tape: &BiTape, d_out: ArrayView2<f64>, grad: &mut BiLstm) -> Array2<f64> {
    let h = params.fwd.hidden();
    let x = tape.input.view();
    let dxf = lstm_backward(&params.fwd, x, mask, false, &tape.fwd, d_out.slice(s![.., ..h]), &mut grad.fwd);
    let dxb = lstm_backward(&params.bwd, x, mask, true, &tape.bwd, d_out.slice(s![.., h..]), &mut grad.bwd);
    dxf + dxb
}

fn check_mask(rows: usize, mask: &[bool]) -> Result<(), EsimError> {
    if rows != mask.len() {
        return Err(EsimError::Shape(format!("{rows} rows but mask of length {}", mask.len())));
    }
    Ok(())
}

/// `T × 2H` forward and backward hidden states, concatenated per position.
pub fn bilstm_forward(seq: ArrayView2<f64>, params: &BiLstm, mask: &[bool]) -> Result<Array2<f64>, EsimError> {
    check_mask(seq.nrows(), mask)?;
    if seq.ncols() != params.fwd.input() || params.bwd.input() != params.fwd.input() {
        return Err(EsimError::Shape(format!("input width {} vs cell input {}", seq.ncols(), params.fwd.input())));
    }
    Ok(bilstm_tape(params, seq, mask).0)
}

// ---------------------------------------------------------------------------
// Attention

/// Soft alignment between two encoded sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub p_aligned: Array2<f64>,
    pub h_aligned: Array2<f64>,
    /// `Tp × Th` raw scores.
    pub scores: Array2<f64>,
    /// `Tp × Th`, rows softmaxed over unmasked hypothesis positions.
    pub p_weights: Array2<f64>,
    /// `Th × Tp`, rows softmaxed over unmasked premise positions.
    pub h_weights: Array2<f64>,
}

fn masked_softmax_rows(scores: ArrayView2<f64>, row_mask: &[bool], col_mask: &[bool]) -> Array2<f64> {
    let mut w = Array2::zeros(scores.dim());
    for (i, row) in scores.rows().into_iter().enumerate() {
        if !row_mask[i] {
            continue;
        }
        let max = row
            .iter()
            .zip(col_mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if col_mask[j] {
                let e = (v - max).exp();
                w[[i, j]] = e;
                total += e;
            }
        }
        w.row_mut(i).mapv_inplace(|v| v / total);
    }
    w
}

pub fn attend(
    p: ArrayView2<f64>,
    h: ArrayView2<f64>,
    p_mask: &[bool],
    h_mask: &[bool],
) -> Result<Attention, EsimError> {
    check_mask(p.nrows(), p_mask)?;
    check_mask(h.nrows(), h_mask)?;
    if p.ncols() != h.ncols() {
        return Err(EsimError::Shape(format!("state widths {} and {}", p.ncols(), h.ncols())));
    }
    let scores = p.dot(&h.t());
    let p_weights = masked_softmax_rows(scores.view(), p_mask, h_mask);
    let h_weights = masked_softmax_rows(scores.t(), h_mask, p_mask);
    Ok(Attention { p_aligned: p_weights.dot(&h), h_aligned: h_weights.dot(&p), scores, p_weights, h_weights })
}

/// Returns `(∂L/∂p, ∂L/∂h)`.
fn attend_backward(
    p: ArrayView2<f64>,
    h: ArrayView2<f64>,
    att: &Attention,
    d_p_aligned: ArrayView2<f64>,
    d_h_aligned: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let wp = &att.p_weights;
    let wh = &att.h_weights;
    let d_wp = d_p_aligned.dot(&h.t());
    let d_wh = d_h_aligned.dot(&p.t());
    let mut dp = wh.t().dot(&d_h_aligned);
    let mut dh = wp.t().dot(&d_p_aligned);
    let mut de = Array2::<f64>::zeros(att.scores.dim());
    for i in 0..wp.nrows() {
        let dot: f64 = wp.row(i).dot(&d_wp.row(i));
        for j in 0..wp.ncols() {
            de[[i, j]] += wp[[i, j]] * (d_wp[[i, j]] - dot);
        }
    }
    for j in 0..wh.nrows() {
        let dot: f64 = wh.row(j).dot(&d_wh.row(j));
        for i in 0..wh.ncols() {
            de[[i, j]] += wh[[j, i]] * (d_wh[[j, i]] - dot);
        }
    }
    dp += &de.dot(&h);
    dh += &de.t().dot(&p);
    (dp, dh)
}

// ---------------------------------------------------------------------------
// Enhancement

struct EnhanceTape {
    features: Array2<f64>,
    out: Array2<f64>,
}

fn enhance_tape(a: ArrayView2<f64>, aligned: ArrayView2<f64>, projection: &Linear, mask: &[bool]) -> EnhanceTape {
    let diff = &a - &aligned;
    let prod = &a * &aligned;
    let features = concatenate(Axis(1), &[a, aligned, diff.view(), prod.view()]).expect("equal row counts");
    let mut out = features.dot(&projection.weight.t()) + &projection.bias;
    out.mapv_inplace(f64::tanh);
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            out.row_mut(t).fill(0.0);
        }
    }
    EnhanceTape { features, out }
}

/// `tanh(W [a; ã; a−ã; a⊙ã] + c)` per unmasked position; masked rows are zero.
pub fn enhance(
    a: ArrayView2<f64>,
    aligned: ArrayView2<f64>,
    projection: &Linear,
    mask: &[bool],
) -> Result<Array2<f64>, EsimError> {
    check_mask(a.nrows(), mask)?;
    if a.dim() != aligned.dim() || projection.weight.ncols() != 4 * a.ncols() {
        return Err(EsimError::Shape("enhancement inputs do not match the projection".into()));
    }
    Ok(enhance_tape(a, aligned, projection, mask).out)
}

/// Returns `(∂L/∂a, ∂L/∂ã)`.
fn enhance_backward(
    a: ArrayView2<f64>,
    aligned: ArrayView2<f64>,
    projection: &Linear,
    mask: &[bool],
    tape: &EnhanceTape,
    d_out: ArrayView2<f64>,
    grad: &mut Linear,
) -> (Array2<f64>, Array2<f64>) {
    let mut d_pre = &d_out * &tape.out.mapv(|y| 1.0 - y * y);
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            d_pre.row_mut(t).fill(0.0);
        }
    }
    grad.weight += &d_pre.t().dot(&tape.features);
    grad.bias += &d_pre.sum_axis(Axis(0));
    let dm = d_pre.dot(&projection.weight);
    let w = a.ncols();
    let (d0, d1, d2, d3) = (
        dm.slice(s![.., ..w]),
        dm.slice(s![.., w..2 * w]),
        dm.slice(s![.., 2 * w..3 * w]),
        dm.slice(s![.., 3 * w..]),
    );
    let da = &d0 + &d2 + &(&d3 * &aligned);
    let d_aligned = &d1 - &d2 + &(&d3 * &a);
    (da, d_aligned)
}

// ---------------------------------------------------------------------------
// Pooling

struct PoolTape {
    argmax: Vec<usize>,
    count: usize,
}

fn pool_tape(v: ArrayView2<f64>, mask: &[bool]) -> Result<(Array1<f64>, PoolTape), EsimError> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(EsimError::EmptySequence);
    }
    let width = v.ncols();
    let mut out = Array1::zeros(2 * width);
    let mut argmax = vec![0; width];
    for k in 0..width {
        let mut best = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (t, &m) in mask.iter().enumerate() {
            if m {
                let x = v[[t, k]];
                if x > best {
                    best = x;
                    argmax[k] = t;
                }
                sum += x;
            }
        }
        out[k] = best;
        out[width + k] = sum / count as f64;
    }
    Ok((out, PoolTape { argmax, count }))
}

fn pool_backward(mask: &[bool], tape: &PoolTape, d_pooled: ArrayView1<f64>, rows: usize) -> Array2<f64> {
    let width = tape.argmax.len();
    let mut dv = Array2::zeros((rows, width));
    for k in 0..width {
        dv[[tape.argmax[k], k]] += d_pooled[k];
        let share = d_pooled[width + k] / tape.count as f64;
        for (t, &m) in mask.iter().enumerate() {
            if m {
                dv[[t, k]] += share;
            }
        }
    }
    dv
}

/// Runs the composition BiLSTM over both enhanced sequences and returns
/// `[max(v_p); mean(v_p); max(v_h); mean(v_h)]` over unmasked positions.
pub fn compose_and_pool(
    enhanced_p: ArrayView2<f64>,
    enhanced_h: ArrayView2<f64>,
    composition: &BiLstm,
    p_mask: &[bool],
    h_mask: &[bool],
) -> Result<Array1<f64>, EsimError> {
    let vp = bilstm_forward(enhanced_p, composition, p_mask)?;
    let vh = bilstm_forward(enhanced_h, composition, h_mask)?;
    let (fp, _) = pool_tape(vp.view(), p_mask)?;
    let (fh, _) = pool_tape(vh.view(), h_mask)?;
    Ok(concatenate(Axis(0), &[fp.view(), fh.view()]).expect("1-d"))
}

// ---------------------------------------------------------------------------
// Classifier

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - max).exp());
    let total: f64 = e.iter().sum();
    e.map(|v| v / total)
}

fn classifier_forward(features: ArrayView1<f64>, hidden: &Linear, output: &Linear) -> (Array1<f64>, [f64; 3]) {
    let hid = hidden.apply(features).mapv(f64::tanh);
    let logits = output.apply(hid.view());
    (hid, softmax3([logits[0], logits[1], logits[2]]))
}

/// Hidden tanh layer, then a 3-way softmax.
pub fn classify(features: ArrayView1<f64>, hidden: &Linear, output: &Linear) -> Result<[f64; 3], EsimError> {
    if features.len() != hidden.weight.ncols() || output.weight.dim() != (3, hidden.weight.nrows()) {
        return Err(EsimError::Shape("classifier input does not match its weights".into()));
    }
    Ok(classifier_forward(features, hidden, output).1)
}

/// Index of the largest probability; ties go to the lower class index.
pub fn argmax_label(probs: &[f64; 3]) -> Label {
    let mut best = 0;
    for k in 1..3 {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    Label::from_index(best).expect("index < 3")
}

// ---------------------------------------------------------------------------
// Batches

/// One fused premise/hypothesis pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub premise: Array2<f64>,
    pub hypothesis: Array2<f64>,
    pub label: Label,
}

/// Zero-padded `B × T × D` tensors with true lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub premises: Array3<f64>,
    pub premise_lens: Vec<usize>,
    pub hypotheses: Array3<f64>,
    pub hypothesis_lens: Vec<usize>,
    pub labels: Vec<Label>,
}

fn cap<'a>(m: &'a Array2<f64>, limit: usize, what: &str) -> ArrayView2<'a, f64> {
    if m.nrows() > limit {
        log::warn!("truncating {what} from {} to {limit} tokens", m.nrows());
    }
    m.slice(s![..m.nrows().min(limit), ..])
}

fn pad(seqs: &[ArrayView2<f64>], width: usize, min_len: usize) -> (Array3<f64>, Vec<usize>) {
    let t_max = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0).max(min_len);
    let mut out = Array3::zeros((seqs.len(), t_max, width));
    for (b, s) in seqs.iter().enumerate() {
        out.slice_mut(s![b, ..s.nrows(), ..]).assign(s);
    }
    (out, seqs.iter().map(|s| s.nrows()).collect())
}

impl PaddedBatch {
    /// Sequences longer than the configured caps are truncated.
    pub fn from_pairs(pairs: &[&EncodedPair], config: &EsimConfig) -> Result<Self, EsimError> {
        Self::from_pairs_padded(pairs, config, 0, 0)
    }

    /// Like [`PaddedBatch::from_pairs`] but pads to at least the given lengths.
    pub fn from_pairs_padded(
        pairs: &[&EncodedPair],
        config: &EsimConfig,
        min_premise: usize,
        min_hypothesis: usize,
    ) -> Result<Self, EsimError> {
        let width = config.input_dim;
        for p in pairs {
            if p.premise.ncols() != width || p.hypothesis.ncols() != width {
                return Err(EsimError::Shape(format!(
                    "token width {}/{} but model expects {width}",
                    p.premise.ncols(),
                    p.hypothesis.ncols()
                )));
            }
        }
        let prem: Vec<_> = pairs.iter().map(|p| cap(&p.premise, config.max_premise_len, "premise")).collect();
        let hyp: Vec<_> = pairs.iter().map(|p| cap(&p.hypothesis, config.max_hypothesis_len, "hypothesis")).collect();
        let (premises, premise_lens) = pad(&prem, width, min_premise);
        let (hypotheses, hypothesis_lens) = pad(&hyp, width, min_hypothesis);
        Ok(PaddedBatch { premises, premise_lens, hypotheses, hypothesis_lens, labels: pairs.iter().map(|p| p.label).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn masks(&self, b: usize) -> (Vec<bool>, Vec<bool>) {
        let pm = (0..self.premises.dim().1).map(|t| t < self.premise_lens[b]).collect();
        let hm = (0..self.hypotheses.dim().1).map(|t| t < self.hypothesis_lens[b]).collect();
        (pm, hm)
    }
}

// ---------------------------------------------------------------------------
// Whole model

struct Dropout<'a> {
    rate: f64,
    rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    /// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1−rate)`.
    fn mask(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        Array2::from_shape_simple_fn((rows, cols), || if self.rng.gen_bool(keep) { scale } else { 0.0 })
    }
}

struct ExampleTape {
    p_mask: Vec<bool>,
    h_mask: Vec<bool>,
    p_enc: BiTape,
    h_enc: BiTape,
    a: Array2<f64>,
    b: Array2<f64>,
    drop_a: Option<Array2<f64>>,
    drop_b: Option<Array2<f64>>,
    att: Attention,
    enh_p: EnhanceTape,
    enh_h: EnhanceTape,
    p_comp: BiTape,
    h_comp: BiTape,
    drop_vp: Option<Array2<f64>>,
    drop_vh: Option<Array2<f64>>,
    pool_p: PoolTape,
    pool_h: PoolTape,
    features: Array1<f64>,
    hid: Array1<f64>,
    probs: [f64; 3],
}

fn apply_dropout(x: &mut Array2<f64>, dropout: &mut Option<Dropout<'_>>) -> Option<Array2<f64>> {
    let d = dropout.as_mut()?;
    let m = d.mask(x.nrows(), x.ncols());
    *x *= &m;
    Some(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Esim {
    pub config: EsimConfig,
    pub params: EsimParams,
}

impl Esim {
    pub fn new(config: EsimConfig) -> Result<Self, EsimError> {
        config.validate()?;
        let params = EsimParams::init(config.input_dim, config.hidden, seed::substream(config.seed, "esim-init"));
        Ok(Esim { config, params })
    }

    pub fn with_params(config: EsimConfig, params: EsimParams) -> Result<Self, EsimError> {
        config.validate()?;
        if params.input_dim() != config.input_dim || params.hidden_dim() != config.hidden {
            return Err(EsimError::Shape("parameters do not match config".into()));
        }
        Ok(Esim { config, params })
    }

    fn forward_example(
        &self,
        premise: ArrayView2<f64>,
        hypothesis: ArrayView2<f64>,
        p_mask: Vec<bool>,
        h_mask: Vec<bool>,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<ExampleTape, EsimError> {
        let prm = &self.params;
        if !p_mask.iter().any(|&m| m) || !h_mask.iter().any(|&m| m) {
            return Err(EsimError::EmptySequence);
        }
        let (mut a, p_enc) = bilstm_tape(&prm.encoder, premise, &p_mask);
        let (mut b, h_enc) = bilstm_tape(&prm.encoder, hypothesis, &h_mask);
        let drop_a = apply_dropout(&mut a, dropout);
        let drop_b = apply_dropout(&mut b, dropout);
        let att = attend(a.view(), b.view(), &p_mask, &h_mask)?;
        let enh_p = enhance_tape(a.view(), att.p_aligned.view(), &prm.projection, &p_mask);
        let enh_h = enhance_tape(b.view(), att.h_aligned.view(), &prm.projection, &h_mask);
        let (mut vp, p_comp) = bilstm_tape(&prm.composition, enh_p.out.view(), &p_mask);
        let (mut vh, h_comp) = bilstm_tape(&prm.composition, enh_h.out.view(), &h_mask);
        let drop_vp = apply_dropout(&mut vp, dropout);
        let drop_vh = apply_dropout(&mut vh, dropout);
        let (fp, pool_p) = pool_tape(vp.view(), &p_mask)?;
        let (fh, pool_h) = pool_tape(vh.view(), &h_mask)?;
        let features = concatenate(Axis(0), &[fp.view(), fh.view()]).expect("1-d");
        let (hid, probs) = classifier_forward(features.view(), &prm.hidden, &prm.output);
        Ok(ExampleTape {
            p_mask,
            h_mask,
            p_enc,
            h_enc,
            a,
            b,
            drop_a,
            drop_b,
            att,
            enh_p,
            enh_h,
            p_comp,
            h_comp,
            drop_vp,
            drop_vh,
            pool_p,
            pool_h,
            features,
            hid,
            probs,
        })
    }

    /// Backpropagates `scale · (−log p[label])` into `grad`.
    fn backward_example(&self, tape: &ExampleTape, label: Label, scale: f64, grad: &mut EsimParams) {
        let prm = &self.params;
        let h = self.config.hidden;

        let mut d_logits = Array1::from(tape.probs.to_vec());
        d_logits[label.index()] -= 1.0;
        d_logits *= scale;
        grad.output.weight += &outer(d_logits.view(), tape.hid.view());
        grad.output.bias += &d_logits;
        let d_hid = prm.output.weight.t().dot(&d_logits);
        let d_pre = &d_hid * &tape.hid.mapv(|y| 1.0 - y * y);
        grad.hidden.weight += &outer(d_pre.view(), tape.features.view());
        grad.hidden.bias += &d_pre;
        let d_feat = prm.hidden.weight.t().dot(&d_pre);

        let tp = tape.p_mask.len();
        let th = tape.h_mask.len();
        let mut d_vp = pool_backward(&tape.p_mask, &tape.pool_p, d_feat.slice(s![..4 * h]), tp);
        let mut d_vh = pool_backward(&tape.h_mask, &tape.pool_h, d_feat.slice(s![4 * h..]), th);
        if let Some(m) = &tape.drop_vp {
            d_vp *= m;
        }
        if let Some(m) = &tape.drop_vh {
            d_vh *= m;
        }
        let d_mp = bilstm_backward(&prm.composition, &tape.p_mask, &tape.p_comp, d_vp.view(), &mut grad.composition);
        let d_mh = bilstm_backward(&prm.composition, &tape.h_mask, &tape.h_comp, d_vh.view(), &mut grad.composition);

        let (mut d_a, d_pal) = enhance_backward(
            tape.a.view(),
            tape.att.p_aligned.view(),
            &prm.projection,
            &tape.p_mask,
            &tape.enh_p,
            d_mp.view(),
            &mut grad.projection,
        );
        let (mut d_b, d_hal) = enhance_backward(
            tape.b.view(),
            tape.att.h_aligned.view(),
            &prm.projection,
            &tape.h_mask,
            &tape.enh_h,
            d_mh.view(),
            &mut grad.projection,
        );
        let (da2, db2) = attend_backward(tape.a.view(), tape.b.view(), &tape.att, d_pal.view(), d_hal.view());
        d_a += &da2;
        d_b += &db2;
        if let Some(m) = &tape.drop_a {
            d_a *= m;
        }
        if let Some(m) = &tape.drop_b {
            d_b *= m;
        }
        bilstm_backward(&prm.encoder, &tape.p_mask, &tape.p_enc, d_a.view(), &mut grad.encoder);
        bilstm_backward(&prm.encoder, &tape.h_mask, &tape.h_enc, d_b.view(), &mut grad.encoder);
    }

    fn batch_example(&self, batch: &PaddedBatch, b: usize, dropout: &mut Option<Dropout<'_>>) -> Result<ExampleTape, EsimError> {
        let (pm, hm) = batch.masks(b);
        self.forward_example(batch.premises.slice(s![b, .., ..]), batch.hypotheses.slice(s![b, .., ..]), pm, hm, dropout)
    }

    fn check_batch(&self, batch: &PaddedBatch) -> Result<(), EsimError> {
        if batch.is_empty() {
            return Err(EsimError::EmptySplit("batch"));
        }
        let d = self.config.input_dim;
        if batch.premises.dim().2 != d || batch.hypotheses.dim().2 != d {
            return Err(EsimError::Shape(format!("batch width does not match input_dim {d}")));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and its gradient for every parameter.
    /// Dropout is active only when an rng is supplied and the rate is positive.
    pub fn loss_and_backward(
        &self,
        batch: &PaddedBatch,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, EsimParams), EsimError> {
        self.check_batch(batch)?;
        let mut dropout = dropout_rng
            .filter(|_| self.config.dropout > 0.0)
            .map(|rng| Dropout { rate: self.config.dropout, rng });
        let mut grad = EsimParams::zeros(self.config.input_dim, self.config.hidden);
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for b in 0..batch.len() {
            let tape = self.batch_example(batch, b, &mut dropout)?;
            let label = batch.labels[b];
            loss -= tape.probs[label.index()].ln();
            self.backward_example(&tape, label, scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// Class probabilities per example, dropout off.
    pub fn batch_probabilities(&self, batch: &PaddedBatch) -> Result<Vec<[f64; 3]>, EsimError> {
        self.check_batch(batch)?;
        (0..batch.len()).map(|b| Ok(self.batch_example(batch, b, &mut None)?.probs)).collect()
    }

    /// Mean cross-entropy, dropout off.
    pub fn batch_loss(&self, batch: &PaddedBatch) -> Result<f64, EsimError> {
        let probs = self.batch_probabilities(batch)?;
        Ok(-probs.iter().zip(&batch.labels).map(|(p, l)| p[l.index()].ln()).sum::<f64>() / batch.len() as f64)
    }

    pub fn predict(&self, premise: ArrayView2<f64>, hypothesis: ArrayView2<f64>) -> Result<(Label, [f64; 3]), EsimError> {
        let d = self.config.input_dim;
        if premise.ncols() != d || hypothesis.ncols() != d {
            return Err(EsimError::Shape(format!(
                "input widths {}/{} but model expects {d}",
                premise.ncols(),
                hypothesis.ncols()
            )));
        }
        let p = premise.slice(s![..premise.nrows().min(self.config.max_premise_len), ..]);
        let h = hypothesis.slice(s![..hypothesis.nrows().min(self.config.max_hypothesis_len), ..]);
        let tape = self.forward_example(p, h, vec![true; p.nrows()], vec![true; h.nrows()], &mut None)?;
        Ok((argmax_label(&tape.probs), tape.probs))
    }

    /// Mean loss and accuracy over `pairs`, dropout off.
    pub fn evaluate(&self, pairs: &[EncodedPair]) -> Result<(f64, f64), EsimError> {
        if pairs.is_empty() {
            return Err(EsimError::EmptySplit("evaluation"));
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        let refs: Vec<&EncodedPair> = pairs.iter().collect();
        for chunk in refs.chunks(self.config.batch_size.max(1)) {
            let batch = PaddedBatch::from_pairs(chunk, &self.config)?;
            for (p, l) in self.batch_probabilities(&batch)?.iter().zip(&batch.labels) {
                loss -= p[l.index()].ln();
                correct += usize::from(argmax_label(p) == *l);
            }
        }
        Ok((loss / pairs.len() as f64, correct as f64 / pairs.len() as f64))
    }

    pub fn predict_all(&self, pairs: &[EncodedPair]) -> Result<Vec<Label>, EsimError> {
        pairs.iter().map(|p| Ok(self.predict(p.premise.view(), p.hypothesis.view())?.0)).collect()
    }

    /// One SGD step with global-norm clipping. Returns the batch loss.
    pub fn sgd_step(&mut self, batch: &PaddedBatch, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<f64, EsimError> {
        let (loss, mut grad) = self.loss_and_backward(batch, dropout_rng)?;
        clip_gradient(&mut grad, self.config.clip_norm);
        self.params.sgd_step(&mut grad, self.config.learning_rate);
        Ok(loss)
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Rescale so the global L2 norm is at most `max_norm`. Returns the
/// pre-clipping norm.
pub fn clip_gradient(grad: &mut EsimParams, max_norm: f64) -> f64 {
    let norm = grad.l2_norm();
    if norm > max_norm {
        grad.scale(max_norm / norm);
    }
    norm
}

// ---------------------------------------------------------------------------
// Training

/// Tracks the best dev loss and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best_loss: f64::INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Only a strict decrease counts as improvement.
    pub fn observe(&mut self, epoch: usize, dev_loss: f64) -> StopDecision {
        if dev_loss < self.best_loss {
            self.best_loss = dev_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision { improved: true, stop: false }
        } else {
            self.stale += 1;
            StopDecision { improved: false, stop: self.stale >= self.patience }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopped_at: usize,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,dev_loss,dev_accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, e.dev_loss, e.dev_accuracy)?;
        }
        Ok(())
    }
}

/// Mini-batch SGD with early stopping on dev loss. The returned model holds
/// the parameters of the best dev-loss epoch.
pub fn train_nli(
    train: &[EncodedPair],
    dev: &[EncodedPair],
    config: &EsimConfig,
) -> Result<(Esim, TrainReport), EsimError> {
    train_nli_with(train, dev, config, |_| {})
}

/// [`train_nli`] with a per-epoch callback.
pub fn train_nli_with(
    train: &[EncodedPair],
    dev: &[EncodedPair],
    config: &EsimConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Esim, TrainReport), EsimError> {
    if train.is_empty() {
        return Err(EsimError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(EsimError::EmptySplit("dev"));
    }
    let mut model = Esim::new(config.clone())?;
    let mut shuffle_rng = seed::rng(seed::substream(config.seed, "esim-shuffle"));
    let mut dropout_rng = seed::rng(seed::substream(config.seed, "dropout"));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let pairs: Vec<&EncodedPair> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = PaddedBatch::from_pairs(&pairs, config)?;
            total += model.sgd_step(&batch, Some(&mut dropout_rng))? * pairs.len() as f64;
        }
        let (dev_loss, dev_accuracy) = model.evaluate(dev)?;
        let record = EpochRecord { epoch, train_loss: total / train.len() as f64, dev_loss, dev_accuracy };
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev loss {:.4}, dev acc {:.4}",
            record.train_loss,
            dev_loss,
            dev_accuracy
        );
        on_epoch(&record);
        epochs.push(record);
        let decision = stopper.observe(epoch, dev_loss);
        if decision.improved {
            best = model.params.clone();
        }
        if decision.stop {
            break;
        }
    }
    model.params = best;
    let stopped_at = epochs.len();
    Ok((model, TrainReport { epochs, stopped_at, best_epoch: stopper.best_epoch() }))
}

// ---------------------------------------------------------------------------
// Checkpoints

const CHECKPOINT_MAGIC: &str = "esim-checkpoint 1";

impl Esim {
    /// Text checkpoint: a config echo, then every tensor as
    /// `param <name> <dims...>` followed by its rows. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), EsimError> {
        let c = &self.config;
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "config input_dim {}", c.input_dim)?;
        writeln!(w, "config hidden {}", c.hidden)?;
        writeln!(w, "config dropout {:e}", c.dropout)?;
        writeln!(w, "config learning_rate {:e}", c.learning_rate)?;
        writeln!(w, "config batch_size {}", c.batch_size)?;
        writeln!(w, "config max_epochs {}", c.max_epochs)?;
        writeln!(w, "config patience {}", c.patience)?;
        writeln!(w, "config seed {}", c.seed)?;
        writeln!(w, "config clip_norm {:e}", c.clip_norm)?;
        writeln!(w, "config max_premise_len {}", c.max_premise_len)?;
        writeln!(w, "config max_hypothesis_len {}", c.max_hypothesis_len)?;
        for (name, shape, values) in self.params.tensors() {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            writeln!(w, "param {name} {}", dims.join(" "))?;
            let row_len = *shape.last().expect("tensors have rank >= 1");
            for row in values.chunks(row_len.max(1)) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", vals.join(" "))?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Esim, EsimError> {
        let bad = |line: usize, reason: String| EsimError::Checkpoint { line, reason };
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str()));
        match it.next() {
            Some((_, CHECKPOINT_MAGIC)) => {}
            _ => return Err(bad(1, "missing checkpoint header".into())),
        }
        let mut config = EsimConfig::default();
        let mut pending = None;
        for (n, line) in it.by_ref() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.first() != Some(&"config") {
                pending = Some((n, line));
                break;
            }
            if fields.len() != 3 {
                return Err(bad(n, "expected `config <key> <value>`".into()));
            }
            let us = || fields[2].parse::<usize>().map_err(|_| bad(n, format!("bad value for {}", fields[1])));
            let fl = || fields[2].parse::<f64>().map_err(|_| bad(n, format!("bad value for {}", fields[1])));
            match fields[1] {
                "input_dim" => config.input_dim = us()?,
                "hidden" => config.hidden = us()?,
                "dropout" => config.dropout = fl()?,
                "learning_rate" => config.learning_rate = fl()?,
                "batch_size" => config.batch_size = us()?,
                "max_epochs" => config.max_epochs = us()?,
                "patience" => config.patience = us()?,
                "seed" => config.seed = fields[2].parse().map_err(|_| bad(n, "bad seed".into()))?,
                "clip_norm" => config.clip_norm = fl()?,
                "max_premise_len" => config.max_premise_len = us()?,
                "max_hypothesis_len" => config.max_hypothesis_len = us()?,
                other => return Err(bad(n, format!("unknown config key {other}"))),
            }
        }
        config.validate().map_err(|e| bad(1, e.to_string()))?;
        let mut params = EsimParams::zeros(config.input_dim, config.hidden);
        let expected: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        let mut slots = params.tensors_mut();
        let mut next = pending;
        for ((name, shape), slot) in expected.iter().zip(slots.iter_mut()) {
            let (n, header) = next.ok_or_else(|| bad(lines.len(), format!("missing tensor {name}")))?;
            let want = format!("param {name} {}", shape.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
            if header.trim_end() != want {
                return Err(bad(n, format!("expected `{want}`, found `{header}`")));
            }
            let row_len = *shape.last().expect("rank >= 1");
            let rows = slot.len() / row_len;
            for r in 0..rows {
                let (n, line) = it.next().ok_or_else(|| bad(lines.len(), format!("truncated tensor {name}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad(n, "unparsable value".into()))?;
                if vals.len() != row_len {
                    return Err(bad(n, format!("row has {} values, expected {row_len}", vals.len())));
                }
                slot[r * row_len..(r + 1) * row_len].copy_from_slice(&vals);
            }
            next = it.next();
        }
        match next {
            Some((_, "end")) => {}
            Some((n, other)) => return Err(bad(n, format!("expected `end`, found `{other}`"))),
            None => return Err(bad(lines.len(), "missing `end`".into())),
        }
        drop(slots);
        Esim::with_params(config, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
    }

    fn tiny_config(input: usize, hidden: usize) -> EsimConfig {
        EsimConfig { input_dim: input, hidden, dropout: 0.0, batch_size: 4, ..Default::default() }
    }

    fn random_pairs(n: usize, input: usize, rng: &mut ChaCha8Rng) -> Vec<EncodedPair> {
        (0..n)
            .map(|i| EncodedPair {
                premise: rand_matrix(rng.gen_range(1..5), input, rng),
                hypothesis: rand_matrix(rng.gen_range(1..4), input, rng),
                label: Label::from_index(i % 3).unwrap(),
            })
            .collect()
    }

    /// Straight-line LSTM recurrence on plain vectors, one direction.
    fn reference_lstm(cell: &LstmCell, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
        let h = cell.hidden();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = vec![vec![0.0; h]; xs.len()];
        let idx: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in idx {
            let mut z = vec![0.0; 4 * h];
            for r in 0..4 * h {
                z[r] = cell.bias[r];
                for (j, x) in xs[t].iter().enumerate() {
                    z[r] += cell.w_ih[[r, j]] * x;
                }
                for (j, hv) in hs.iter().enumerate() {
                    z[r] += cell.w_hh[[r, j]] * hv;
                }
            }
            let mut new_h = vec![0.0; h];
            for k in 0..h {
                let c = sig(z[h + k]) * cs[k] + sig(z[k]) * z[2 * h + k].tanh();
                cs[k] = c;
                new_h[k] = sig(z[3 * h + k]) * c.tanh();
            }
            hs = new_h.clone();
            out[t] = new_h;
        }
        out
    }

    #[test]
    fn bilstm_empty_and_zero_cases() {
        let params = BiLstm::zeros(2, 3);
        let out = bilstm_forward(Array2::zeros((0, 2)).view(), &params, &[]).unwrap();
        assert_eq!(out.dim(), (0, 6));
        let out = bilstm_forward(Array2::zeros((4, 2)).view(), &params, &[true; 4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(bilstm_forward(Array2::zeros((4, 3)).view(), &params, &[true; 4]).is_err());
        assert!(bilstm_forward(Array2::zeros((4, 2)).view(), &params, &[true; 3]).is_err());
    }

    #[test]
    fn bilstm_matches_reference_recurrence() {
        let mut rng = seed::rng(21);
        let params = BiLstm::random(2, 2, &mut rng);
        let mut params = params;
        params.fwd.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        params.bwd.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x = rand_matrix(3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let out = bilstm_forward(x.view(), &params, &[true; 3]).unwrap();
        let f = reference_lstm(&params.fwd, &xs, false);
        let b = reference_lstm(&params.bwd, &xs, true);
        for t in 0..3 {
            for k in 0..2 {
                assert!((out[[t, k]] - f[t][k]).abs() < 1e-12);
                assert!((out[[t, 2 + k]] - b[t][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_mask_skips_positions() {
        let mut rng = seed::rng(3);
        let params = BiLstm::random(2, 3, &mut rng);
        let x = rand_matrix(4, 2, &mut rng);
        let masked = bilstm_forward(x.view(), &params, &[true, false, true, true]).unwrap();
        let mut compact = Array2::zeros((3, 2));
        for (dst, src) in [(0, 0), (1, 2), (2, 3)] {
            compact.row_mut(dst).assign(&x.row(src));
        }
        let direct = bilstm_forward(compact.view(), &params, &[true; 3]).unwrap();
        assert!(masked.row(1).iter().all(|&v| v == 0.0));
        for (dst, src) in [(0, 0), (1, 2), (2, 3)] {
            for k in 0..6 {
                assert!((masked[[src, k]] - direct[[dst, k]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn attention_single_token_and_convexity() {
        let p = Array2::from_shape_vec((1, 2), vec![0.3, -0.1]).unwrap();
        let h = Array2::from_shape_vec((1, 2), vec![2.0, 5.0]).unwrap();
        let att = attend(p.view(), h.view(), &[true], &[true]).unwrap();
        assert_eq!(att.p_weights[[0, 0]], 1.0);
        assert_eq!(att.h_weights[[0, 0]], 1.0);
        assert_eq!(att.p_aligned, h);
        assert_eq!(att.h_aligned, p);

        let mut rng = seed::rng(8);
        let p = rand_matrix(3, 4, &mut rng);
        let row = [0.5, -0.25, 1.5, 2.0];
        let h = Array2::from_shape_fn((5, 4), |(_, k)| row[k]);
        let att = attend(p.view(), h.view(), &[true; 3], &[true; 5]).unwrap();
        for i in 0..3 {
            for k in 0..4 {
                assert!((att.p_aligned[[i, k]] - row[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_double_loop() {
        let mut rng = seed::rng(12);
        let p = rand_matrix(3, 2, &mut rng);
        let h = rand_matrix(2, 2, &mut rng);
        let att = attend(p.view(), h.view(), &[true; 3], &[true; 2]).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..2).map(|j| p[[i, 0]] * h[[j, 0]] + p[[i, 1]] * h[[j, 1]]).collect();
            let z: f64 = e.iter().map(|v| v.exp()).sum();
            for k in 0..2 {
                let v: f64 = (0..2).map(|j| e[j].exp() / z * h[[j, k]]).sum();
                assert!((att.p_aligned[[i, k]] - v).abs() < 1e-12);
            }
        }
        for j in 0..2 {
            let e: Vec<f64> = (0..3).map(|i| p[[i, 0]] * h[[j, 0]] + p[[i, 1]] * h[[j, 1]]).collect();
            let z: f64 = e.iter().map(|v| v.exp()).sum();
            for k in 0..2 {
                let v: f64 = (0..3).map(|i| e[i].exp() / z * p[[i, k]]).sum();
                assert!((att.h_aligned[[j, k]] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_masks() {
        let mut rng = seed::rng(4);
        let p = rand_matrix(3, 2, &mut rng);
        let h = rand_matrix(4, 2, &mut rng);
        let pm = [true, true, false];
        let hm = [true, false, true, false];
        let att = attend(p.view(), h.view(), &pm, &hm).unwrap();
        for i in 0..2 {
            assert!((att.p_weights.row(i).sum() - 1.0).abs() < 1e-12);
            assert_eq!(att.p_weights[[i, 1]], 0.0);
            assert_eq!(att.p_weights[[i, 3]], 0.0);
        }
        assert!(att.p_weights.row(2).iter().all(|&w| w == 0.0));
        for j in [0, 2] {
            assert!((att.h_weights.row(j).sum() - 1.0).abs() < 1e-12);
            assert_eq!(att.h_weights[[j, 2]], 0.0);
        }
    }

    #[test]
    fn enhance_cases() {
        let mut rng = seed::rng(5);
        let a = rand_matrix(2, 3, &mut rng);
        // Identity-like projection that copies the feature block out.
        let mut proj = Linear::zeros(12, 12);
        for k in 0..12 {
            proj.weight[[k, k]] = 1.0;
        }
        let out = enhance(a.view(), a.view(), &proj, &[true; 2]).unwrap();
        for t in 0..2 {
            for k in 0..3 {
                assert!((out[[t, 6 + k]] - 0.0).abs() < 1e-15);
                assert!((out[[t, 9 + k]] - (a[[t, k]] * a[[t, k]]).tanh()).abs() < 1e-15);
            }
        }
        let mut zero = Linear::zeros(2, 12);
        zero.bias = Array1::from(vec![0.3, -0.7]);
        let out = enhance(a.view(), a.view(), &zero, &[true; 2]).unwrap();
        for t in 0..2 {
            assert_eq!(out[[t, 0]], 0.3f64.tanh());
            assert_eq!(out[[t, 1]], (-0.7f64).tanh());
        }
        let b = rand_matrix(2, 3, &mut rng);
        let proj = Linear { weight: rand_matrix(2, 12, &mut rng), bias: Array1::from(vec![0.1, 0.2]) };
        let out = enhance(a.view(), b.view(), &proj, &[true, true]).unwrap();
        for t in 0..2 {
            let mut m = Vec::new();
            m.extend((0..3).map(|k| a[[t, k]]));
            m.extend((0..3).map(|k| b[[t, k]]));
            m.extend((0..3).map(|k| a[[t, k]] - b[[t, k]]));
            m.extend((0..3).map(|k| a[[t, k]] * b[[t, k]]));
            for o in 0..2 {
                let pre: f64 = proj.bias[o] + (0..12).map(|j| proj.weight[[o, j]] * m[j]).sum::<f64>();
                assert!((out[[t, o]] - pre.tanh()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pooling_cases() {
        let mut rng = seed::rng(6);
        let comp = BiLstm::random(2, 2, &mut rng);
        let ep = rand_matrix(1, 2, &mut rng);
        let eh = rand_matrix(3, 2, &mut rng);
        let f = compose_and_pool(ep.view(), eh.view(), &comp, &[true], &[true, true, false]).unwrap();
        assert_eq!(f.len(), 16);
        for k in 0..4 {
            assert_eq!(f[k], f[4 + k]);
            assert!(f[8 + k] >= f[12 + k]);
        }
        let vh = bilstm_forward(eh.view(), &comp, &[true, true, false]).unwrap();
        for k in 0..4 {
            let mx = vh[[0, k]].max(vh[[1, k]]);
            let mean = (vh[[0, k]] + vh[[1, k]]) / 2.0;
            assert!((f[8 + k] - mx).abs() < 1e-15);
            assert!((f[12 + k] - mean).abs() < 1e-15);
        }
        assert!(matches!(
            compose_and_pool(ep.view(), eh.view(), &comp, &[false], &[true; 3]),
            Err(EsimError::EmptySequence)
        ));
    }

    #[test]
    fn softmax_and_argmax() {
        let hidden = Linear::zeros(2, 4);
        let output = Linear::zeros(3, 2);
        let p = classify(Array1::from(vec![1.0, 2.0, 3.0, 4.0]).view(), &hidden, &output).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(argmax_label(&p), Label::Entailment);
        assert_eq!(argmax_label(&softmax3([10.0, 0.0, 0.0])), Label::Entailment);
        assert_eq!(argmax_label(&softmax3([0.0, 0.0, 0.1])), Label::Neutral);
        let logits = [1.5, -2.0, 0.25];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let s = softmax3(logits);
        for k in 0..3 {
            assert!((s[k] - logits[k].exp() / z).abs() < 1e-15);
        }
        let big = softmax3([1000.0, 999.0, -1000.0]);
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_and_perfect_losses() {
        let config = tiny_config(2, 3);
        let mut model = Esim::new(config.clone()).unwrap();
        model.params.output = Linear::zeros(3, 3);
        let mut rng = seed::rng(1);
        let pairs = random_pairs(3, 2, &mut rng);
        let refs: Vec<_> = pairs.iter().collect();
        let batch = PaddedBatch::from_pairs(&refs, &config).unwrap();
        let loss = model.batch_loss(&batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        let (label, probs) = model.predict(pairs[0].premise.view(), pairs[0].hypothesis.view()).unwrap();
        assert_eq!(label, Label::Entailment);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // Huge bias on the gold class drives the loss to zero.
        model.params.output.bias = Array1::from(vec![800.0, 0.0, 0.0]);
        let batch = PaddedBatch::from_pairs(&[&pairs[0]], &config).unwrap();
        assert_eq!(model.batch_loss(&batch).unwrap(), 0.0);
    }

    #[test]
    fn predict_rejects_width_mismatch() {
        let model = Esim::new(tiny_config(3, 2)).unwrap();
        assert!(matches!(
            model.predict(Array2::zeros((2, 4)).view(), Array2::zeros((2, 3)).view()),
            Err(EsimError::Shape(_))
        ));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::rng(77);
        let config = tiny_config(3, 3);
        let mut model = Esim::new(config.clone()).unwrap();
        for t in model.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        let pairs = random_pairs(3, 3, &mut rng);
        let refs: Vec<_> = pairs.iter().collect();
        let batch = PaddedBatch::from_pairs(&refs, &config).unwrap();
        let (_, grad) = model.loss_and_backward(&batch, None).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect();
        let eps = 1e-5;
        for (ti, g) in analytic.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = model.clone();
                plus.params.tensors_mut()[ti][j] += eps;
                let mut minus = model.clone();
                minus.params.tensors_mut()[ti][j] -= eps;
                let fd = (plus.batch_loss(&batch).unwrap() - minus.batch_loss(&batch).unwrap()) / (2.0 * eps);
                assert!(rel_err(g[j], fd) < 1e-4, "tensor {ti} entry {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn dropout_gradients_match_with_fixed_masks() {
        // The same dropout stream on every evaluation fixes the masks, so the
        // dropped-out network is an ordinary differentiable function.
        let mut rng = seed::rng(5);
        let config = EsimConfig { dropout: 0.3, ..tiny_config(2, 2) };
        let model = Esim::new(config.clone()).unwrap();
        let pairs = random_pairs(2, 2, &mut rng);
        let refs: Vec<_> = pairs.iter().collect();
        let batch = PaddedBatch::from_pairs(&refs, &config).unwrap();
        let loss_with = |m: &Esim| m.loss_and_backward(&batch, Some(&mut seed::rng(9))).unwrap();
        let (_, grad) = loss_with(&model);
        let g = grad.tensors()[0].2.to_vec();
        for j in 0..g.len() {
            let mut plus = model.clone();
            plus.params.tensors_mut()[0][j] += 1e-5;
            let mut minus = model.clone();
            minus.params.tensors_mut()[0][j] -= 1e-5;
            let fd = (loss_with(&plus).0 - loss_with(&minus).0) / 2e-5;
            assert!(rel_err(g[j], fd) < 1e-4);
        }
    }

    #[test]
    fn padding_does_not_change_outputs() {
        let mut rng = seed::rng(31);
        let config = tiny_config(3, 4);
        let model = Esim::new(config.clone()).unwrap();
        let pairs = random_pairs(4, 3, &mut rng);
        let refs: Vec<_> = pairs.iter().collect();
        let tight = PaddedBatch::from_pairs(&refs, &config).unwrap();
        let loose = PaddedBatch::from_pairs_padded(&refs, &config, 9, 7).unwrap();
        let a = model.batch_probabilities(&tight).unwrap();
        let b = model.batch_probabilities(&loose).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-12);
            }
        }
        let (la, ga) = model.loss_and_backward(&tight, None).unwrap();
        let (lb, gb) = model.loss_and_backward(&loose, None).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for ((_, _, x), (_, _, y)) in ga.tensors().iter().zip(gb.tensors().iter()) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 1.0), StopDecision { improved: true, stop: false });
        assert_eq!(s.observe(2, 1.1), StopDecision { improved: false, stop: true });
        assert_eq!(s.best_epoch(), 1);

        let mut s = EarlyStopping::new(3);
        let losses = [1.0, 0.9, 0.95, 0.9, 0.85, 0.86, 0.87, 0.88];
        let stops: Vec<bool> = losses.iter().enumerate().map(|(i, &l)| s.observe(i + 1, l).stop).collect();
        assert_eq!(stops, [false, false, false, false, false, false, false, true]);
        assert_eq!(s.best_epoch(), 5);
    }

    #[test]
    fn one_epoch_and_determinism() {
        let mut rng = seed::rng(2);
        let train = random_pairs(6, 2, &mut rng);
        let dev = random_pairs(3, 2, &mut rng);
        let config = EsimConfig { max_epochs: 1, dropout: 0.5, learning_rate: 0.1, ..tiny_config(2, 3) };
        let (m1, r1) = train_nli(&train, &dev, &config).unwrap();
        assert_eq!(r1.epochs.len(), 1);
        assert_eq!(r1.stopped_at, 1);
        let (m2, r2) = train_nli(&train, &dev, &config).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert!(train_nli(&[], &dev, &config).is_err());
        assert!(train_nli(&train, &[], &config).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seed::rng(2);
        let model = Esim::new(EsimConfig { seed: 4, ..tiny_config(3, 2) }).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = Esim::load(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let pairs = random_pairs(1, 3, &mut rng);
        assert_eq!(
            back.predict(pairs[0].premise.view(), pairs[0].hypothesis.view()).unwrap(),
            model.predict(pairs[0].premise.view(), pairs[0].hypothesis.view()).unwrap()
        );
        let text = String::from_utf8(buf).unwrap();
        let broken = text.replace("param hidden.weight 2 16", "param hidden.weight 2 15");
        assert!(Esim::load(broken.as_bytes()).is_err());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(Esim::load(truncated.as_bytes()).is_err());
    }

    #[test]
    fn truncation_caps_sequences() {
        let config = EsimConfig { max_premise_len: 2, max_hypothesis_len: 1, ..tiny_config(2, 2) };
        let pair = EncodedPair { premise: Array2::ones((5, 2)), hypothesis: Array2::ones((3, 2)), label: Label::Neutral };
        let batch = PaddedBatch::from_pairs(&[&pair], &config).unwrap();
        assert_eq!((batch.premise_lens[0], batch.hypothesis_lens[0]), (2, 1));
        assert_eq!(batch.premises.dim(), (1, 2, 2));
    }
}
