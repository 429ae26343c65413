//! The TAR network (column convolutions, row convolutions, two fully
//! connected layers) and the two-lane TAR-2 variant, with analytic
//! backpropagation and the shared momentum training loop.
//!
//! With identity activation the network computes exactly the low-Tucker-rank
//! linear map `U1 G_(1) vec(U2^T X U3)`; training then routes through the
//! same sufficient-statistics loop as the LTR estimator.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimators::{
    mse_loss, mse_loss_with_bias, train_tucker_linear, weights_from_unfolded, DesignPair,
    DivergenceGuard, FitReport, FittedFactors, MomentumState, StopRule, TrainConfig,
};
use crate::matrix::Matrix;
use crate::rng;
use crate::tensor::{self, Tensor3, TuckerFactors};
use crate::var::VarWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative as a function of the pre-activation; the relu subgradient
    /// at zero is 0.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?} (expected identity, relu or sigmoid)"
            ))),
        }
    }
}

/// Order in which the two convolution layers are applied to the lag matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvOrder {
    /// Column (`N x 1`) kernels first, then row (`1 x P`) kernels.
    ColumnThenRow,
    /// Row kernels first, then column kernels (the exchanged lane).
    RowThenColumn,
}

/// Per-layer bias terms for the hidden layers of a nonlinear lane: one per
/// first-layer channel (broadcast along its spatial axis), one per second
/// convolution unit, one per inner full-connection unit. Linear lanes carry
/// none (a linear network absorbs them into the output bias).
#[derive(Debug, Clone)]
pub struct HiddenBiases {
    /// First convolution layer, one value per output channel.
    pub b1: Vec<f64>,
    /// Second convolution layer, `r2 x r3`.
    pub b2: Matrix,
    /// Inner full connection, length `r1`.
    pub b3: Vec<f64>,
}

impl HiddenBiases {
    fn zeros(ranks: (usize, usize, usize), order: ConvOrder) -> Self {
        let (r1, r2, r3) = ranks;
        let c1 = match order {
            ConvOrder::ColumnThenRow => r2,
            ConvOrder::RowThenColumn => r3,
        };
        HiddenBiases {
            b1: vec![0.0; c1],
            b2: Matrix::zeros(r2, r3),
            b3: vec![0.0; r1],
        }
    }
}

/// Parameters of one TAR lane: `u2` holds the column-convolution kernels,
/// `u3` the row-convolution kernels, `g1` the inner full connection (the
/// mode-1 core unfolding) and `u1` the linear output layer.
#[derive(Debug, Clone)]
pub struct TarParams {
    pub u1: Matrix,
    pub u2: Matrix,
    pub u3: Matrix,
    pub g1: Matrix,
    pub bias: Option<Vec<f64>>,
    /// Per-layer bias terms; required for trainability of the nonlinear
    /// activations (a bias-free relu channel that goes silent can never
    /// recover) and absent in linear lanes.
    pub hidden_biases: Option<HiddenBiases>,
    pub activation: Activation,
    /// Whether the inner full connection (F1) is also activated; the
    /// convolution layers always are.
    pub activate_f1: bool,
    pub order: ConvOrder,
}

impl TarParams {
    pub fn new(
        u1: Matrix,
        u2: Matrix,
        u3: Matrix,
        g1: Matrix,
        bias: Option<Vec<f64>>,
        activation: Activation,
        order: ConvOrder,
    ) -> Result<Self> {
        let n = u1.rows();
        if u2.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "u1 and u2 disagree on N: {} vs {}",
                n,
                u2.rows()
            )));
        }
        let (r1, r2, r3) = (u1.cols(), u2.cols(), u3.cols());
        if g1.shape() != (r1, r2 * r3) {
            return Err(Error::ShapeMismatch(format!(
                "g1 is {:?}, expected ({r1}, {})",
                g1.shape(),
                r2 * r3
            )));
        }
        if let Some(b) = &bias {
            if b.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for N = {n}",
                    b.len()
                )));
            }
        }
        Ok(Self {
            u1,
            u2,
            u3,
            g1,
            bias,
            hidden_biases: if activation == Activation::Identity {
                None
            } else {
                Some(HiddenBiases::zeros((r1, r2, r3), order))
            },
            activation,
            activate_f1: true,
            order,
        })
    }

    pub fn n(&self) -> usize {
        self.u1.rows()
    }

    pub fn p(&self) -> usize {
        self.u3.rows()
    }

    pub fn ranks(&self) -> (usize, usize, usize) {
        (self.u1.cols(), self.u2.cols(), self.u3.cols())
    }

    /// Refolds `g1` into the core tensor.
    pub fn to_tucker(&self) -> Result<TuckerFactors> {
        let core = tensor::fold(&self.g1, 1, self.ranks())?;
        TuckerFactors::new(core, self.u1.clone(), self.u2.clone(), self.u3.clone())
    }

    pub fn from_tucker(
        f: &TuckerFactors,
        bias: Option<Vec<f64>>,
        activation: Activation,
        order: ConvOrder,
    ) -> Result<Self> {
        Self::new(
            f.u1.clone(),
            f.u2.clone(),
            f.u3.clone(),
            tensor::unfold(&f.core, 1)?,
            bias,
            activation,
            order,
        )
    }

    /// The equivalent linear weight tensor (exact when the activation is the
    /// identity).
    pub fn linearized(&self) -> Result<VarWeights> {
        VarWeights::new(tensor::tucker_reconstruct(&self.to_tucker()?)?)
    }
}

/// Two parallel lanes with exchanged convolution order, merged by averaging,
/// plus one shared output bias.
#[derive(Debug, Clone)]
pub struct Tar2Params {
    pub lane_a: TarParams,
    pub lane_b: TarParams,
    pub bias: Option<Vec<f64>>,
}

impl Tar2Params {
    pub fn new(lane_a: TarParams, lane_b: TarParams, bias: Option<Vec<f64>>) -> Result<Self> {
        if lane_a.n() != lane_b.n() || lane_a.p() != lane_b.p() {
            return Err(Error::ShapeMismatch(
                "TAR-2 lanes must share input and output dimensions".into(),
            ));
        }
        if lane_a.order != ConvOrder::ColumnThenRow || lane_b.order != ConvOrder::RowThenColumn {
            return Err(Error::InvalidArgument(
                "lane_a must be column-then-row and lane_b row-then-column".into(),
            ));
        }
        if lane_a.bias.is_some() || lane_b.bias.is_some() {
            return Err(Error::InvalidArgument(
                "TAR-2 lanes share one bias; per-lane biases must be None".into(),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != lane_a.n() {
                return Err(Error::ShapeMismatch("shared bias length mismatch".into()));
            }
        }
        Ok(Self {
            lane_a,
            lane_b,
            bias,
        })
    }

    pub fn n(&self) -> usize {
        self.lane_a.n()
    }

    pub fn p(&self) -> usize {
        self.lane_a.p()
    }

    /// Mean of the two lane linearizations.
    pub fn linearized(&self) -> Result<VarWeights> {
        let a = self.lane_a.linearized()?;
        let b = self.lane_b.linearized()?;
        let sum = a.tensor().sub(&b.tensor().scale(-1.0))?;
        VarWeights::new(sum.scale(0.5))
    }
}

/// Gradients for one lane's parameter blocks.
#[derive(Debug, Clone)]
pub struct TarGrads {
    pub u1: Matrix,
    pub u2: Matrix,
    pub u3: Matrix,
    pub g1: Matrix,
    pub bias: Option<Vec<f64>>,
    pub hidden: Option<HiddenBiases>,
}

impl TarGrads {
    fn zeros_like(p: &TarParams) -> Self {
        TarGrads {
            u1: Matrix::zeros(p.u1.rows(), p.u1.cols()),
            u2: Matrix::zeros(p.u2.rows(), p.u2.cols()),
            u3: Matrix::zeros(p.u3.rows(), p.u3.cols()),
            g1: Matrix::zeros(p.g1.rows(), p.g1.cols()),
            bias: p.bias.as_ref().map(|b| vec![0.0; b.len()]),
            hidden: p
                .hidden_biases
                .as_ref()
                .map(|_| HiddenBiases::zeros(p.ranks(), p.order)),
        }
    }

    fn reset(&mut self) {
        self.u1.fill(0.0);
        self.u2.fill(0.0);
        self.u3.fill(0.0);
        self.g1.fill(0.0);
        if let Some(b) = &mut self.bias {
            b.fill(0.0);
        }
        if let Some(h) = &mut self.hidden {
            h.b1.fill(0.0);
            h.b2.fill(0.0);
            h.b3.fill(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tar2Grads {
    pub lane_a: TarGrads,
    pub lane_b: TarGrads,
    pub bias: Option<Vec<f64>>,
}

/// Scratch buffers for one lane's forward/backward pass.
struct LaneWork {
    a1: Matrix,
    h1: Matrix,
    a2: Matrix,
    v: Vec<f64>,
    a3: Vec<f64>,
    h3: Vec<f64>,
    d_a2: Matrix,
    d_h1: Matrix,
    d_a3: Vec<f64>,
    d_v: Vec<f64>,
}

impl LaneWork {
    fn for_params(p: &TarParams) -> Self {
        let (_, r2, r3) = p.ranks();
        let (h1_rows, h1_cols) = match p.order {
            ConvOrder::ColumnThenRow => (r2, p.p()),
            ConvOrder::RowThenColumn => (p.n(), r3),
        };
        LaneWork {
            a1: Matrix::zeros(h1_rows, h1_cols),
            h1: Matrix::zeros(h1_rows, h1_cols),
            a2: Matrix::zeros(r2, r3),
            v: vec![0.0; r2 * r3],
            a3: vec![0.0; p.ranks().0],
            h3: vec![0.0; p.ranks().0],
            d_a2: Matrix::zeros(r2, r3),
            d_h1: Matrix::zeros(h1_rows, h1_cols),
            d_a3: vec![0.0; p.ranks().0],
            d_v: vec![0.0; r2 * r3],
        }
    }
}

fn check_input(p: &TarParams, x: &Matrix) -> Result<()> {
    if x.shape() != (p.n(), p.p()) {
        return Err(Error::ShapeMismatch(format!(
            "lag matrix is {:?}, network expects ({}, {})",
            x.shape(),
            p.n(),
            p.p()
        )));
    }
    Ok(())
}

/// Forward pass writing intermediate pre-activations into `w`; `out` gets
/// `u1 h3` plus the lane bias when present. The output layer stays linear.
fn lane_forward(p: &TarParams, x: &Matrix, w: &mut LaneWork, out: &mut [f64]) {
    let act = p.activation;
    let (r1, r2, r3) = p.ranks();
    let hb = p.hidden_biases.as_ref();
    match p.order {
        ConvOrder::ColumnThenRow => {
            // a1 = u2^T X + b1 (r2 x P)
            for a in 0..r2 {
                let b1 = hb.map_or(0.0, |h| h.b1[a]);
                for j in 0..p.p() {
                    let mut acc = b1;
                    for i in 0..p.n() {
                        acc += p.u2.get(i, a) * x.get(i, j);
                    }
                    w.a1.set(a, j, acc);
                }
            }
            for (h, &a) in w.h1.data_mut().iter_mut().zip(w.a1.data()) {
                *h = act.apply(a);
            }
            // a2 = h1 u3 + b2 (r2 x r3)
            for a in 0..r2 {
                for c in 0..r3 {
                    let mut acc = hb.map_or(0.0, |h| h.b2.get(a, c));
                    for j in 0..p.p() {
                        acc += w.h1.get(a, j) * p.u3.get(j, c);
                    }
                    w.a2.set(a, c, acc);
                }
            }
        }
        ConvOrder::RowThenColumn => {
            // a1 = X u3 + b1 (N x r3)
            for c in 0..r3 {
                let b1 = hb.map_or(0.0, |h| h.b1[c]);
                for i in 0..p.n() {
                    let mut acc = b1;
                    for j in 0..p.p() {
                        acc += x.get(i, j) * p.u3.get(j, c);
                    }
                    w.a1.set(i, c, acc);
                }
            }
            for (h, &a) in w.h1.data_mut().iter_mut().zip(w.a1.data()) {
                *h = act.apply(a);
            }
            // a2 = u2^T h1 + b2 (r2 x r3)
            for a in 0..r2 {
                for c in 0..r3 {
                    let mut acc = hb.map_or(0.0, |h| h.b2.get(a, c));
                    for i in 0..p.n() {
                        acc += p.u2.get(i, a) * w.h1.get(i, c);
                    }
                    w.a2.set(a, c, acc);
                }
            }
        }
    }
    // v = vec(sigma(a2)), column-major (first index fastest).
    for c in 0..r3 {
        for a in 0..r2 {
            w.v[a + r2 * c] = act.apply(w.a2.get(a, c));
        }
    }
    // a3 = g1 v + b3; h3 = sigma(a3) unless F1 stays linear
    for i in 0..r1 {
        let mut acc = hb.map_or(0.0, |h| h.b3[i]);
        for (g, &vv) in p.g1.row(i).iter().zip(&w.v) {
            acc += g * vv;
        }
        w.a3[i] = acc;
        w.h3[i] = if p.activate_f1 { act.apply(acc) } else { acc };
    }
    // out = u1 h3 (+ bias)
    for i in 0..p.n() {
        let mut acc = 0.0;
        for (u, &h) in p.u1.row(i).iter().zip(&w.h3) {
            acc += u * h;
        }
        out[i] = acc;
    }
    if let Some(b) = &p.bias {
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += bi;
        }
    }
}

/// Reverse pass for one sample; accumulates parameter gradients into `g`.
/// `w` must hold the forward state for the same `(p, x)`.
fn lane_backward(p: &TarParams, x: &Matrix, w: &mut LaneWork, upstream: &[f64], g: &mut TarGrads) {
    let act = p.activation;
    let (r1, r2, r3) = p.ranks();

    if let Some(b) = &mut g.bias {
        for (bi, &u) in b.iter_mut().zip(upstream) {
            *bi += u;
        }
    }
    // d_u1 += upstream h3^T; d_h3 = u1^T upstream; d_a3 = d_h3 * act'(a3)
    for i in 0..p.n() {
        let gu = upstream[i];
        if gu != 0.0 {
            for (o, &h) in g.u1.row_mut(i).iter_mut().zip(&w.h3) {
                *o += gu * h;
            }
        }
    }
    for j in 0..r1 {
        let mut acc = 0.0;
        for i in 0..p.n() {
            acc += p.u1.get(i, j) * upstream[i];
        }
        let da = if p.activate_f1 {
            act.derivative(w.a3[j])
        } else {
            1.0
        };
        w.d_a3[j] = acc * da;
    }
    // d_g1 += d_a3 v^T; d_v = g1^T d_a3
    for i in 0..r1 {
        let da = w.d_a3[i];
        if da != 0.0 {
            for (o, &vv) in g.g1.row_mut(i).iter_mut().zip(&w.v) {
                *o += da * vv;
            }
        }
    }
    if let Some(h) = &mut g.hidden {
        for (b, &da) in h.b3.iter_mut().zip(&w.d_a3) {
            *b += da;
        }
    }
    for k in 0..r2 * r3 {
        let mut acc = 0.0;
        for i in 0..r1 {
            acc += p.g1.get(i, k) * w.d_a3[i];
        }
        w.d_v[k] = acc;
    }
    // d_a2 = reshape(d_v) * act'(a2)
    for c in 0..r3 {
        for a in 0..r2 {
            w.d_a2.set(a, c, w.d_v[a + r2 * c] * act.derivative(w.a2.get(a, c)));
        }
    }
    if let Some(h) = &mut g.hidden {
        for (b, &da) in h.b2.data_mut().iter_mut().zip(w.d_a2.data()) {
            *b += da;
        }
    }
    match p.order {
        ConvOrder::ColumnThenRow => {
            // a2 = h1 u3: d_u3 += h1^T d_a2; d_h1 = d_a2 u3^T
            for j in 0..p.p() {
                for c in 0..r3 {
                    let mut acc = 0.0;
                    for a in 0..r2 {
                        acc += w.h1.get(a, j) * w.d_a2.get(a, c);
                    }
                    let o = g.u3.get(j, c) + acc;
                    g.u3.set(j, c, o);
                }
            }
            for a in 0..r2 {
                for j in 0..p.p() {
                    let mut acc = 0.0;
                    for c in 0..r3 {
                        acc += w.d_a2.get(a, c) * p.u3.get(j, c);
                    }
                    w.d_h1.set(a, j, acc);
                }
            }
            // a1 = u2^T X: d_a1 = d_h1 * act'(a1); d_u2 += X d_a1^T
            for a in 0..r2 {
                for j in 0..p.p() {
                    let da = w.d_h1.get(a, j) * act.derivative(w.a1.get(a, j));
                    w.d_h1.set(a, j, da);
                }
            }
            if let Some(h) = &mut g.hidden {
                for a in 0..r2 {
                    let mut acc = 0.0;
                    for j in 0..p.p() {
                        acc += w.d_h1.get(a, j);
                    }
                    h.b1[a] += acc;
                }
            }
            for i in 0..p.n() {
                for a in 0..r2 {
                    let mut acc = 0.0;
                    for j in 0..p.p() {
                        acc += x.get(i, j) * w.d_h1.get(a, j);
                    }
                    let o = g.u2.get(i, a) + acc;
                    g.u2.set(i, a, o);
                }
            }
        }
        ConvOrder::RowThenColumn => {
            // a2 = u2^T h1: d_u2 += h1 d_a2^T; d_h1 = u2 d_a2
            for i in 0..p.n() {
                for a in 0..r2 {
                    let mut acc = 0.0;
                    for c in 0..r3 {
                        acc += w.h1.get(i, c) * w.d_a2.get(a, c);
                    }
                    let o = g.u2.get(i, a) + acc;
                    g.u2.set(i, a, o);
                }
            }
            for i in 0..p.n() {
                for c in 0..r3 {
                    let mut acc = 0.0;
                    for a in 0..r2 {
                        acc += p.u2.get(i, a) * w.d_a2.get(a, c);
                    }
                    w.d_h1.set(i, c, acc);
                }
            }
            // a1 = X u3: d_a1 = d_h1 * act'(a1); d_u3 += X^T d_a1
            for i in 0..p.n() {
                for c in 0..r3 {
                    let da = w.d_h1.get(i, c) * act.derivative(w.a1.get(i, c));
                    w.d_h1.set(i, c, da);
                }
            }
            if let Some(h) = &mut g.hidden {
                for c in 0..r3 {
                    let mut acc = 0.0;
                    for i in 0..p.n() {
                        acc += w.d_h1.get(i, c);
                    }
                    h.b1[c] += acc;
                }
            }
            for j in 0..p.p() {
                for c in 0..r3 {
                    let mut acc = 0.0;
                    for i in 0..p.n() {
                        acc += x.get(i, j) * w.d_h1.get(i, c);
                    }
                    let o = g.u3.get(j, c) + acc;
                    g.u3.set(j, c, o);
                }
            }
        }
    }
}

/// Single-sample forward pass.
pub fn tar_forward(p: &TarParams, x: &Matrix) -> Result<Vec<f64>> {
    check_input(p, x)?;
    let mut w = LaneWork::for_params(p);
    let mut out = vec![0.0; p.n()];
    lane_forward(p, x, &mut w, &mut out);
    Ok(out)
}

/// Mean of the two lane outputs plus the shared bias.
pub fn tar2_forward(p: &Tar2Params, x: &Matrix) -> Result<Vec<f64>> {
    check_input(&p.lane_a, x)?;
    let mut wa = LaneWork::for_params(&p.lane_a);
    let mut wb = LaneWork::for_params(&p.lane_b);
    let mut oa = vec![0.0; p.n()];
    let mut ob = vec![0.0; p.n()];
    lane_forward(&p.lane_a, x, &mut wa, &mut oa);
    lane_forward(&p.lane_b, x, &mut wb, &mut ob);
    let mut out: Vec<f64> = oa
        .iter()
        .zip(&ob)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    if let Some(b) = &p.bias {
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += bi;
        }
    }
    Ok(out)
}

/// Parameter gradients for one sample given `dL/d out`.
pub fn tar_backward(p: &TarParams, x: &Matrix, upstream: &[f64]) -> Result<TarGrads> {
    check_input(p, x)?;
    if upstream.len() != p.n() {
        return Err(Error::ShapeMismatch("upstream gradient length mismatch".into()));
    }
    let mut w = LaneWork::for_params(p);
    let mut out = vec![0.0; p.n()];
    lane_forward(p, x, &mut w, &mut out);
    let mut g = TarGrads::zeros_like(p);
    lane_backward(p, x, &mut w, upstream, &mut g);
    Ok(g)
}

/// Parameter gradients of both lanes and the shared bias for one sample.
pub fn tar2_backward(p: &Tar2Params, x: &Matrix, upstream: &[f64]) -> Result<Tar2Grads> {
    check_input(&p.lane_a, x)?;
    if upstream.len() != p.n() {
        return Err(Error::ShapeMismatch("upstream gradient length mismatch".into()));
    }
    let half: Vec<f64> = upstream.iter().map(|u| 0.5 * u).collect();
    let mut ga = TarGrads::zeros_like(&p.lane_a);
    let mut gb = TarGrads::zeros_like(&p.lane_b);
    let mut wa = LaneWork::for_params(&p.lane_a);
    let mut wb = LaneWork::for_params(&p.lane_b);
    let mut out = vec![0.0; p.n()];
    lane_forward(&p.lane_a, x, &mut wa, &mut out);
    lane_backward(&p.lane_a, x, &mut wa, &half, &mut ga);
    lane_forward(&p.lane_b, x, &mut wb, &mut out);
    lane_backward(&p.lane_b, x, &mut wb, &half, &mut gb);
    Ok(Tar2Grads {
        lane_a: ga,
        lane_b: gb,
        bias: p.bias.as_ref().map(|_| upstream.to_vec()),
    })
}

/// Batched per-epoch state for one lane across all `T` samples. The first
/// convolution and its gradient run as single large matrix products; the
/// narrow inner layers run per sample on stored intermediates.
struct LaneState {
    t: usize,
    /// Column lane: `X_all` (`N x P*T`, column block `t` is the lag matrix).
    /// Row lane: `X_stack` (`N*T x P`, row block `t` is the lag matrix).
    input: Matrix,
    a1: Matrix,
    h1: Matrix,
    d_h1: Matrix,
    /// Pre-activations of the second convolution, `r2*r3` per sample,
    /// column-major within a sample.
    a2: Vec<f64>,
    v: Vec<f64>,
    a3: Vec<f64>,
    h3: Vec<f64>,
    /// Network outputs, `N x T`.
    out: Matrix,
}

impl LaneState {
    /// `xt` is the transposed design (`T x NP`, row `t` is the column-major
    /// lag stack of sample `t`).
    fn new(p: &TarParams, xt: &Matrix) -> LaneState {
        let t = xt.rows();
        let n = p.n();
        let lags = p.p();
        let (r1, r2, r3) = p.ranks();
        let input = match p.order {
            ConvOrder::ColumnThenRow => Matrix::from_fn(n, lags * t, |i, col| {
                let (s, k) = (col / lags, col % lags);
                xt.row(s)[k * n + i]
            }),
            ConvOrder::RowThenColumn => Matrix::from_fn(n * t, lags, |row, k| {
                let (s, i) = (row / n, row % n);
                xt.row(s)[k * n + i]
            }),
        };
        let (a1_rows, a1_cols) = match p.order {
            ConvOrder::ColumnThenRow => (r2, lags * t),
            ConvOrder::RowThenColumn => (n * t, r3),
        };
        LaneState {
            t,
            input,
            a1: Matrix::zeros(a1_rows, a1_cols),
            h1: Matrix::zeros(a1_rows, a1_cols),
            d_h1: Matrix::zeros(a1_rows, a1_cols),
            a2: vec![0.0; r2 * r3 * t],
            v: vec![0.0; r2 * r3 * t],
            a3: vec![0.0; r1 * t],
            h3: vec![0.0; r1 * t],
            out: Matrix::zeros(n, t),
        }
    }
}

/// Forward pass over every sample, filling the stored intermediates.
fn lane_epoch_forward(p: &TarParams, st: &mut LaneState) {
    let act = p.activation;
    let n = p.n();
    let lags = p.p();
    let (r1, r2, r3) = p.ranks();
    let hb = p.hidden_biases.as_ref();

    // First convolution as one large product, plus its channel bias.
    match p.order {
        ConvOrder::ColumnThenRow => {
            st.a1 = p.u2.transpose_matmul(&st.input);
            if let Some(h) = hb {
                for a in 0..r2 {
                    let b1 = h.b1[a];
                    for v in st.a1.row_mut(a) {
                        *v += b1;
                    }
                }
            }
        }
        ConvOrder::RowThenColumn => {
            st.a1 = st.input.matmul(&p.u3);
            if let Some(h) = hb {
                for row in 0..st.a1.rows() {
                    for (c, v) in st.a1.row_mut(row).iter_mut().enumerate() {
                        *v += h.b1[c];
                    }
                }
            }
        }
    }
    for (h, &a) in st.h1.data_mut().iter_mut().zip(st.a1.data()) {
        *h = act.apply(a);
    }

    // Narrow layers per sample.
    let rr = r2 * r3;
    for s in 0..st.t {
        let a2_s = &mut st.a2[s * rr..(s + 1) * rr];
        match p.order {
            ConvOrder::ColumnThenRow => {
                // a2 = h1_s u3 + b2, h1_s = r2 x P block at columns s*P..
                for a in 0..r2 {
                    let h1_row = &st.h1.row(a)[s * lags..(s + 1) * lags];
                    for c in 0..r3 {
                        let mut acc = hb.map_or(0.0, |h| h.b2.get(a, c));
                        for (j, &h1v) in h1_row.iter().enumerate() {
                            acc += h1v * p.u3.get(j, c);
                        }
                        a2_s[a + r2 * c] = acc;
                    }
                }
            }
            ConvOrder::RowThenColumn => {
                // a2 = u2^T h1_s + b2, h1_s = N x r3 block at rows s*N..
                for a in 0..r2 {
                    for c in 0..r3 {
                        let mut acc = hb.map_or(0.0, |h| h.b2.get(a, c));
                        for i in 0..n {
                            acc += p.u2.get(i, a) * st.h1.get(s * n + i, c);
                        }
                        a2_s[a + r2 * c] = acc;
                    }
                }
            }
        }
        let v_s = &mut st.v[s * rr..(s + 1) * rr];
        for (vv, &a2v) in v_s.iter_mut().zip(a2_s.iter()) {
            *vv = act.apply(a2v);
        }
        let a3_s = &mut st.a3[s * r1..(s + 1) * r1];
        let h3_s = &mut st.h3[s * r1..(s + 1) * r1];
        for i in 0..r1 {
            let mut acc = hb.map_or(0.0, |h| h.b3[i]);
            for (g, &vv) in p.g1.row(i).iter().zip(v_s.iter()) {
                acc += g * vv;
            }
            a3_s[i] = acc;
            h3_s[i] = if p.activate_f1 { act.apply(acc) } else { acc };
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (u, &h) in p.u1.row(i).iter().zip(h3_s.iter()) {
                acc += u * h;
            }
            if let Some(b) = &p.bias {
                acc += b[i];
            }
            st.out.set(i, s, acc);
        }
    }
}

/// Reverse pass over every sample; `upstream` is `dL/d out` (`N x T`).
/// Requires the forward state from [`lane_epoch_forward`] for the same
/// parameters.
fn lane_epoch_backward(p: &TarParams, st: &mut LaneState, upstream: &Matrix, g: &mut TarGrads) {
    let act = p.activation;
    let n = p.n();
    let lags = p.p();
    let (r1, r2, r3) = p.ranks();
    let rr = r2 * r3;
    let mut d_a3 = vec![0.0; r1];
    let mut d_v = vec![0.0; rr];
    let mut d_a2 = vec![0.0; rr];

    for s in 0..st.t {
        let v_s = &st.v[s * rr..(s + 1) * rr];
        let a2_s = &st.a2[s * rr..(s + 1) * rr];
        let a3_s = &st.a3[s * r1..(s + 1) * r1];
        let h3_s = &st.h3[s * r1..(s + 1) * r1];

        // Output layer and its bias.
        if let Some(b) = &mut g.bias {
            for (bi, i) in b.iter_mut().zip(0..n) {
                *bi += upstream.get(i, s);
            }
        }
        for i in 0..n {
            let up = upstream.get(i, s);
            if up != 0.0 {
                for (o, &h) in g.u1.row_mut(i).iter_mut().zip(h3_s.iter()) {
                    *o += up * h;
                }
            }
        }
        for j in 0..r1 {
            let mut acc = 0.0;
            for i in 0..n {
                acc += p.u1.get(i, j) * upstream.get(i, s);
            }
            let da = if p.activate_f1 { act.derivative(a3_s[j]) } else { 1.0 };
            d_a3[j] = acc * da;
        }
        if let Some(h) = &mut g.hidden {
            for (b, &da) in h.b3.iter_mut().zip(d_a3.iter()) {
                *b += da;
            }
        }
        for j in 0..r1 {
            let da = d_a3[j];
            if da != 0.0 {
                for (o, &vv) in g.g1.row_mut(j).iter_mut().zip(v_s.iter()) {
                    *o += da * vv;
                }
            }
        }
        for k in 0..rr {
            let mut acc = 0.0;
            for j in 0..r1 {
                acc += p.g1.get(j, k) * d_a3[j];
            }
            d_v[k] = acc;
        }
        for k in 0..rr {
            d_a2[k] = d_v[k] * act.derivative(a2_s[k]);
        }
        if let Some(h) = &mut g.hidden {
            for c in 0..r3 {
                for a in 0..r2 {
                    let x = h.b2.get(a, c) + d_a2[a + r2 * c];
                    h.b2.set(a, c, x);
                }
            }
        }
        match p.order {
            ConvOrder::ColumnThenRow => {
                // d_u3 += h1_s^T d_a2; d_h1_s = d_a2 u3^T.
                for j in 0..lags {
                    for c in 0..r3 {
                        let mut acc = 0.0;
                        for a in 0..r2 {
                            acc += st.h1.get(a, s * lags + j) * d_a2[a + r2 * c];
                        }
                        let x = g.u3.get(j, c) + acc;
                        g.u3.set(j, c, x);
                    }
                }
                for a in 0..r2 {
                    for j in 0..lags {
                        let mut acc = 0.0;
                        for c in 0..r3 {
                            acc += d_a2[a + r2 * c] * p.u3.get(j, c);
                        }
                        st.d_h1.set(a, s * lags + j, acc);
                    }
                }
            }
            ConvOrder::RowThenColumn => {
                // d_u2 += h1_s d_a2^T; d_h1_s = u2 d_a2.
                for i in 0..n {
                    for a in 0..r2 {
                        let mut acc = 0.0;
                        for c in 0..r3 {
                            acc += st.h1.get(s * n + i, c) * d_a2[a + r2 * c];
                        }
                        let x = g.u2.get(i, a) + acc;
                        g.u2.set(i, a, x);
                    }
                }
                for i in 0..n {
                    for c in 0..r3 {
                        let mut acc = 0.0;
                        for a in 0..r2 {
                            acc += p.u2.get(i, a) * d_a2[a + r2 * c];
                        }
                        st.d_h1.set(s * n + i, c, acc);
                    }
                }
            }
        }
    }

    // First convolution: activation mask, channel bias, one large product.
    for (d, &a) in st.d_h1.data_mut().iter_mut().zip(st.a1.data()) {
        *d *= act.derivative(a);
    }
    match p.order {
        ConvOrder::ColumnThenRow => {
            if let Some(h) = &mut g.hidden {
                for a in 0..r2 {
                    h.b1[a] += st.d_h1.row(a).iter().sum::<f64>();
                }
            }
            g.u2.scaled_add_assign(1.0, &st.input.matmul_transpose(&st.d_h1));
        }
        ConvOrder::RowThenColumn => {
            if let Some(h) = &mut g.hidden {
                for row in 0..st.d_h1.rows() {
                    for (c, &d) in st.d_h1.row(row).iter().enumerate() {
                        h.b1[c] += d;
                    }
                }
            }
            g.u3.scaled_add_assign(1.0, &st.input.transpose_matmul(&st.d_h1));
        }
    }
}

/// One full-batch epoch for a single lane: loss plus gradients.
fn tar_epoch(p: &TarParams, st: &mut LaneState, y: &Matrix, grads: &mut TarGrads) -> f64 {
    grads.reset();
    lane_epoch_forward(p, st);
    let t = st.t as f64;
    let scale = 2.0 / t;
    let mut loss = 0.0;
    let upstream = Matrix::from_fn(p.n(), st.t, |i, s| {
        let e = st.out.get(i, s) - y.get(i, s);
        loss += e * e;
        scale * e
    });
    lane_epoch_backward(p, st, &upstream, grads);
    loss / t
}

/// One full-batch epoch for both lanes of a TAR-2 network.
fn tar2_epoch(
    p: &Tar2Params,
    sta: &mut LaneState,
    stb: &mut LaneState,
    y: &Matrix,
    grads: &mut Tar2Grads,
) -> f64 {
    grads.lane_a.reset();
    grads.lane_b.reset();
    if let Some(b) = &mut grads.bias {
        b.fill(0.0);
    }
    lane_epoch_forward(&p.lane_a, sta);
    lane_epoch_forward(&p.lane_b, stb);
    let t = sta.t as f64;
    let scale = 2.0 / t;
    let n = p.n();
    let mut loss = 0.0;
    let mut upstream = Matrix::zeros(n, sta.t);
    for s in 0..sta.t {
        for i in 0..n {
            let mut o = 0.5 * (sta.out.get(i, s) + stb.out.get(i, s));
            if let Some(b) = &p.bias {
                o += b[i];
            }
            let e = o - y.get(i, s);
            loss += e * e;
            upstream.set(i, s, scale * e);
        }
    }
    if let Some(b) = &mut grads.bias {
        for (i, bi) in b.iter_mut().enumerate() {
            *bi += upstream.row(i).iter().sum::<f64>();
        }
    }
    let half = upstream.scale(0.5);
    lane_epoch_backward(&p.lane_a, sta, &half, &mut grads.lane_a);
    lane_epoch_backward(&p.lane_b, stb, &half, &mut grads.lane_b);
    loss / t
}

/// Full-batch training loss and analytic gradients at `p`.
pub fn tar_loss_gradients(p: &TarParams, d: &DesignPair) -> Result<(f64, TarGrads)> {
    if p.n() != d.n() || p.p() != d.p() {
        return Err(Error::ShapeMismatch("network and design disagree on (N, P)".into()));
    }
    let xt = d.x().transpose();
    let mut st = LaneState::new(p, &xt);
    let mut grads = TarGrads::zeros_like(p);
    let loss = tar_epoch(p, &mut st, d.y(), &mut grads);
    Ok((loss, grads))
}

/// Full-batch training loss and analytic gradients for both lanes.
pub fn tar2_loss_gradients(p: &Tar2Params, d: &DesignPair) -> Result<(f64, Tar2Grads)> {
    if p.n() != d.n() || p.p() != d.p() {
        return Err(Error::ShapeMismatch("network and design disagree on (N, P)".into()));
    }
    let xt = d.x().transpose();
    let mut sta = LaneState::new(&p.lane_a, &xt);
    let mut stb = LaneState::new(&p.lane_b, &xt);
    let mut grads = Tar2Grads {
        lane_a: TarGrads::zeros_like(&p.lane_a),
        lane_b: TarGrads::zeros_like(&p.lane_b),
        bias: p.bias.as_ref().map(|b| vec![0.0; b.len()]),
    };
    let loss = tar2_epoch(p, &mut sta, &mut stb, d.y(), &mut grads);
    Ok((loss, grads))
}

/// Architecture selector for [`train_tar`]. `Ltar` is the identity-activation
/// network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TarArch {
    Ltar,
    Tar(Activation),
    Tar2(Activation),
}

fn draw_lane<R: rand::Rng>(
    rng: &mut R,
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    scale: f64,
    bias: bool,
    activation: Activation,
    order: ConvOrder,
) -> Result<TarParams> {
    let (r1, r2, r3) = ranks;
    // Same draw order as the sufficient-statistics trainer: core, u1, u2, u3.
    // Nonlinear lanes scale each layer by the inverse root of its fan-in
    // (flat small scales stall the first thousands of epochs).
    let kaiming = activation != Activation::Identity;
    let lscale = |fan_in: usize| {
        if kaiming {
            scale * 10.0 * (2.0 / fan_in as f64).sqrt()
        } else {
            scale
        }
    };
    let core =
        Tensor3::from_vec(ranks, rng::standard_normal_vec(rng, r1 * r2 * r3)).scale(lscale(r2 * r3));
    // The output layer starts small so early training grows it along useful
    // feature directions instead of collapsing it onto the mean predictor.
    let u1 = rng::standard_normal_matrix(rng, n, r1).scale(scale);
    let u2 = rng::standard_normal_matrix(rng, n, r2).scale(lscale(n));
    let u3 = rng::standard_normal_matrix(rng, p, r3).scale(lscale(p));
    TarParams::new(
        u1,
        u2,
        u3,
        tensor::unfold(&core, 1)?,
        if bias { Some(vec![0.0; n]) } else { None },
        activation,
        order,
    )
}

fn check_arch_ranks(n: usize, p: usize, ranks: (usize, usize, usize)) -> Result<()> {
    let (r1, r2, r3) = ranks;
    if r1 == 0 || r1 > n || r2 == 0 || r2 > n || r3 == 0 || r3 > p {
        return Err(Error::InvalidArgument(format!(
            "ranks {ranks:?} are infeasible for (N, P) = ({n}, {p})"
        )));
    }
    Ok(())
}

/// Trains a TAR-family network with the shared momentum loop and stop rule.
///
/// `Ltar` and `Tar(Identity)` compute a map that is linear in the inputs, so
/// they run on the sufficient-statistics path (identical to [`crate::estimators::fit_ltr`]
/// up to the optional bias); nonlinear activations use per-sample
/// backpropagation.
pub fn train_tar(
    d: &DesignPair,
    arch: TarArch,
    ranks: (usize, usize, usize),
    cfg: &TrainConfig,
    with_bias: bool,
) -> Result<FitReport> {
    cfg.validate()?;
    check_arch_ranks(d.n(), d.p(), ranks)?;
    match arch {
        TarArch::Ltar | TarArch::Tar(Activation::Identity) => {
            train_linear_lane(d, ranks, cfg, with_bias)
        }
        TarArch::Tar(act) => train_tar_lane(d, ranks, act, cfg, with_bias),
        TarArch::Tar2(act) => train_tar2(d, ranks, act, cfg, with_bias),
    }
}

fn train_linear_lane(
    d: &DesignPair,
    ranks: (usize, usize, usize),
    cfg: &TrainConfig,
    with_bias: bool,
) -> Result<FitReport> {
    let started = Instant::now();
    let fit = train_tucker_linear(d, ranks, cfg, with_bias)?;
    let w = tensor::tucker_unfold1(&fit.factors)?;
    let final_loss = match &fit.bias {
        Some(b) => mse_loss_with_bias(&w, b, d)?,
        None => mse_loss(&w, d)?,
    };
    let params = TarParams::from_tucker(
        &fit.factors,
        fit.bias.clone(),
        Activation::Identity,
        ConvOrder::ColumnThenRow,
    )?;
    Ok(FitReport {
        weights: weights_from_unfolded(&w, d.n(), d.p())?,
        factors: FittedFactors::Tar(Box::new(params)),
        final_loss,
        epochs_run: fit.epochs,
        loss_trace: fit.trace,
        converged: fit.converged,
        non_unique: false,
        lr_halvings: fit.lr_halvings,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn train_tar_lane(
    d: &DesignPair,
    ranks: (usize, usize, usize),
    act: Activation,
    cfg: &TrainConfig,
    with_bias: bool,
) -> Result<FitReport> {
    let started = Instant::now();
    let xt = d.x().transpose();
    let mut lr = cfg.learning_rate;
    let mut halvings = 0usize;
    let (p, trace, epochs, converged) = 'attempt: loop {
        let mut rng = rng::rng_from_seed(cfg.seed);
        let mut p = draw_lane(
            &mut rng,
            d.n(),
            d.p(),
            ranks,
            cfg.init_scale,
            with_bias,
            act,
            ConvOrder::ColumnThenRow,
        )?;
        let mut st = LaneState::new(&p, &xt);
        let mut grads = TarGrads::zeros_like(&p);
        let bias_len = p.bias.as_ref().map_or(0, |b| b.len());
        let hb_sizes = p
            .hidden_biases
            .as_ref()
            .map(|h| (h.b1.len(), h.b2.data().len(), h.b3.len()))
            .expect("nonlinear lanes carry hidden biases");
        let mut momentum = MomentumState::new(&[
            p.g1.data().len(),
            p.u1.data().len(),
            p.u2.data().len(),
            p.u3.data().len(),
            bias_len,
            hb_sizes.0,
            hb_sizes.1,
            hb_sizes.2,
        ]);
        let mut stop = StopRule::new(cfg.loss_drop_tolerance);
        let mut guard: Option<DivergenceGuard> = None;
        let mut trace = Vec::new();
        let mut epochs = 0usize;
        let mut empty_a: Vec<f64> = Vec::new();
        let empty_b: Vec<f64> = Vec::new();
        loop {
            let loss = tar_epoch(&p, &mut st, d.y(), &mut grads);
            let guard = guard.get_or_insert_with(|| DivergenceGuard::new(loss));
            if guard.tripped(loss) {
                if halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                trace.push(loss);
                break 'attempt (p, trace, epochs, false);
            }
            trace.push(loss);
            if stop.converged(loss) {
                // Converging onto the trivial predictor means the relu units
                // died; smaller steps avoid the dead basin.
                let stalled = trace[0] - loss < 1e-3 * trace[0].abs();
                if stalled && halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                break 'attempt (p, trace, epochs, true);
            }
            if epochs >= cfg.max_epochs {
                break 'attempt (p, trace, epochs, false);
            }
            let ph = p.hidden_biases.as_mut().expect("nonlinear lane");
            let gh = grads.hidden.as_ref().expect("nonlinear lane");
            momentum.step(
                lr,
                cfg.momentum,
                &mut [
                    p.g1.data_mut(),
                    p.u1.data_mut(),
                    p.u2.data_mut(),
                    p.u3.data_mut(),
                    p.bias.as_mut().unwrap_or(&mut empty_a),
                    &mut ph.b1,
                    ph.b2.data_mut(),
                    &mut ph.b3,
                ],
                &[
                    grads.g1.data(),
                    grads.u1.data(),
                    grads.u2.data(),
                    grads.u3.data(),
                    grads.bias.as_ref().unwrap_or(&empty_b),
                    &gh.b1,
                    gh.b2.data(),
                    &gh.b3,
                ],
            );
            epochs += 1;
        }
    };
    let final_loss = *trace.last().expect("at least one epoch");
    Ok(FitReport {
        weights: p.linearized()?,
        factors: FittedFactors::Tar(Box::new(p)),
        final_loss,
        epochs_run: epochs,
        loss_trace: trace,
        converged,
        non_unique: false,
        lr_halvings: halvings,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn train_tar2(
    d: &DesignPair,
    ranks: (usize, usize, usize),
    act: Activation,
    cfg: &TrainConfig,
    with_bias: bool,
) -> Result<FitReport> {
    let started = Instant::now();
    let xt = d.x().transpose();
    let mut lr = cfg.learning_rate;
    let mut halvings = 0usize;
    let (p, trace, epochs, converged) = 'attempt: loop {
        let mut rng = rng::rng_from_seed(cfg.seed);
        let lane_a = draw_lane(
            &mut rng,
            d.n(),
            d.p(),
            ranks,
            cfg.init_scale,
            false,
            act,
            ConvOrder::ColumnThenRow,
        )?;
        let lane_b = draw_lane(
            &mut rng,
            d.n(),
            d.p(),
            ranks,
            cfg.init_scale,
            false,
            act,
            ConvOrder::RowThenColumn,
        )?;
        let bias = if with_bias {
            Some(vec![0.0; d.n()])
        } else {
            None
        };
        let mut p = Tar2Params::new(lane_a, lane_b, bias)?;

        let mut sta = LaneState::new(&p.lane_a, &xt);
        let mut stb = LaneState::new(&p.lane_b, &xt);
        let mut grads = Tar2Grads {
            lane_a: TarGrads::zeros_like(&p.lane_a),
            lane_b: TarGrads::zeros_like(&p.lane_b),
            bias: p.bias.as_ref().map(|b| vec![0.0; b.len()]),
        };
        let bias_len = p.bias.as_ref().map_or(0, |b| b.len());
        let ha_sizes = p
            .lane_a
            .hidden_biases
            .as_ref()
            .map(|h| (h.b1.len(), h.b2.data().len(), h.b3.len()))
            .expect("nonlinear lanes carry hidden biases");
        let hb_sizes = p
            .lane_b
            .hidden_biases
            .as_ref()
            .map(|h| (h.b1.len(), h.b2.data().len(), h.b3.len()))
            .expect("nonlinear lanes carry hidden biases");
        let mut momentum = MomentumState::new(&[
            p.lane_a.g1.data().len(),
            p.lane_a.u1.data().len(),
            p.lane_a.u2.data().len(),
            p.lane_a.u3.data().len(),
            ha_sizes.0,
            ha_sizes.1,
            ha_sizes.2,
            p.lane_b.g1.data().len(),
            p.lane_b.u1.data().len(),
            p.lane_b.u2.data().len(),
            p.lane_b.u3.data().len(),
            hb_sizes.0,
            hb_sizes.1,
            hb_sizes.2,
            bias_len,
        ]);
        let mut stop = StopRule::new(cfg.loss_drop_tolerance);
        let mut guard: Option<DivergenceGuard> = None;
        let mut trace = Vec::new();
        let mut epochs = 0usize;
        let mut empty_a: Vec<f64> = Vec::new();
        let empty_b: Vec<f64> = Vec::new();
        loop {
            let loss = tar2_epoch(&p, &mut sta, &mut stb, d.y(), &mut grads);
            let guard = guard.get_or_insert_with(|| DivergenceGuard::new(loss));
            if guard.tripped(loss) {
                if halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                trace.push(loss);
                break 'attempt (p, trace, epochs, false);
            }
            trace.push(loss);
            if stop.converged(loss) {
                let stalled = trace[0] - loss < 1e-3 * trace[0].abs();
                if stalled && halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                break 'attempt (p, trace, epochs, true);
            }
            if epochs >= cfg.max_epochs {
                break 'attempt (p, trace, epochs, false);
            }
            let pha = p.lane_a.hidden_biases.as_mut().expect("nonlinear lane");
            let phb = p.lane_b.hidden_biases.as_mut().expect("nonlinear lane");
            let gha = grads.lane_a.hidden.as_ref().expect("nonlinear lane");
            let ghb = grads.lane_b.hidden.as_ref().expect("nonlinear lane");
            momentum.step(
                lr,
                cfg.momentum,
                &mut [
                    p.lane_a.g1.data_mut(),
                    p.lane_a.u1.data_mut(),
                    p.lane_a.u2.data_mut(),
                    p.lane_a.u3.data_mut(),
                    &mut pha.b1,
                    pha.b2.data_mut(),
                    &mut pha.b3,
                    p.lane_b.g1.data_mut(),
                    p.lane_b.u1.data_mut(),
                    p.lane_b.u2.data_mut(),
                    p.lane_b.u3.data_mut(),
                    &mut phb.b1,
                    phb.b2.data_mut(),
                    &mut phb.b3,
                    p.bias.as_mut().unwrap_or(&mut empty_a),
                ],
                &[
                    grads.lane_a.g1.data(),
                    grads.lane_a.u1.data(),
                    grads.lane_a.u2.data(),
                    grads.lane_a.u3.data(),
                    &gha.b1,
                    gha.b2.data(),
                    &gha.b3,
                    grads.lane_b.g1.data(),
                    grads.lane_b.u1.data(),
                    grads.lane_b.u2.data(),
                    grads.lane_b.u3.data(),
                    &ghb.b1,
                    ghb.b2.data(),
                    &ghb.b3,
                    grads.bias.as_ref().unwrap_or(&empty_b),
                ],
            );
            epochs += 1;
        }
    };
    let final_loss = *trace.last().expect("at least one epoch");
    Ok(FitReport {
        weights: p.linearized()?,
        factors: FittedFactors::Tar2(Box::new(p)),
        final_loss,
        epochs_run: epochs,
        loss_trace: trace,
        converged,
        non_unique: false,
        lr_halvings: halvings,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
