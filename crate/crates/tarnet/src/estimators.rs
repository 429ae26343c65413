//! The three linear estimators of the stacked VAR weight tensor: closed-form
//! OLS, low-rank (LR) and low-Tucker-rank (LTR), the latter two trained by
//! full-batch gradient descent with momentum.
//!
//! The quadratic loss `(1/T) sum_t ||y_t - W x_t||^2` depends on the data only
//! through `X X^T`, `Y X^T` and `sum ||y_t||^2`, so training cost per epoch is
//! independent of `T`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;
use crate::pipeline::Series;
use crate::rng;
use crate::tar::{Tar2Params, TarParams};
use crate::tensor::{self, Tensor3, TuckerFactors};
use crate::var::VarWeights;

/// Stacked lag inputs and targets: `x` is `NP x T` (column `t` is
/// `(y_{t-1}^T, ..., y_{t-P}^T)^T`), `y` is `N x T`.
#[derive(Debug, Clone)]
pub struct DesignPair {
    x: Matrix,
    y: Matrix,
    n: usize,
    p: usize,
    means: Vec<f64>,
    centered: bool,
}

impl DesignPair {
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Effective sample size (number of pairs).
    pub fn t(&self) -> usize {
        self.x.cols()
    }

    /// Per-variable training means (zeros when centering was disabled).
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn centered(&self) -> bool {
        self.centered
    }
}

/// Builds the `T = len - p` design pairs of a series. With `center`, each
/// variable's training mean is removed from inputs and targets and recorded
/// for forecasting.
pub fn build_design(s: &Series, p: usize, center: bool) -> Result<DesignPair> {
    if p == 0 {
        return Err(Error::InvalidArgument("lag order must be positive".into()));
    }
    if s.len() <= p {
        return Err(Error::InvalidArgument(format!(
            "series length {} does not exceed the lag order {p}",
            s.len()
        )));
    }
    let n = s.n_vars();
    let t = s.len() - p;
    let means = if center {
        let mut m = vec![0.0; n];
        for i in 0..s.len() {
            for (j, mj) in m.iter_mut().enumerate() {
                *mj += s.values().get(i, j);
            }
        }
        for mj in m.iter_mut() {
            *mj /= s.len() as f64;
        }
        m
    } else {
        vec![0.0; n]
    };

    let mut x = Matrix::zeros(n * p, t);
    let mut y = Matrix::zeros(n, t);
    for col in 0..t {
        let target = p + col;
        for i in 0..n {
            y.set(i, col, s.values().get(target, i) - means[i]);
        }
        for k in 0..p {
            let row = target - 1 - k;
            for i in 0..n {
                x.set(k * n + i, col, s.values().get(row, i) - means[i]);
            }
        }
    }
    Ok(DesignPair {
        x,
        y,
        n,
        p,
        means,
        centered: center,
    })
}

/// `(1/T) sum_t ||y_t - W x_t||^2` for an `N x NP` weight matrix.
pub fn mse_loss(w_unfolded: &Matrix, d: &DesignPair) -> Result<f64> {
    if w_unfolded.shape() != (d.n, d.n * d.p) {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} do not match design ({}, {})",
            w_unfolded.shape(),
            d.n,
            d.n * d.p
        )));
    }
    let preds = w_unfolded.matmul(&d.x);
    let mut acc = 0.0;
    for (a, b) in preds.data().iter().zip(d.y.data()) {
        let e = a - b;
        acc += e * e;
    }
    Ok(acc / d.t() as f64)
}

/// [`mse_loss`] with an additive output bias.
pub fn mse_loss_with_bias(w_unfolded: &Matrix, bias: &[f64], d: &DesignPair) -> Result<f64> {
    if bias.len() != d.n {
        return Err(Error::ShapeMismatch(format!(
            "bias has {} entries for N = {}",
            bias.len(),
            d.n
        )));
    }
    let mut preds = w_unfolded.matmul(&d.x);
    for i in 0..d.n {
        for t in 0..d.t() {
            let v = preds.get(i, t) + bias[i];
            preds.set(i, t, v);
        }
    }
    let mut acc = 0.0;
    for (a, b) in preds.data().iter().zip(d.y.data()) {
        let e = a - b;
        acc += e * e;
    }
    Ok(acc / d.t() as f64)
}

/// Hyperparameters of the momentum gradient-descent loop.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Training stops once the loss drop between consecutive epochs falls
    /// below this.
    pub loss_drop_tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian parameter initialization.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            loss_drop_tolerance: 1e-8,
            max_epochs: 10_000,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must be in [0, 1)".into()));
        }
        if !(self.loss_drop_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Trained parameter blocks attached to a [`FitReport`].
#[derive(Debug, Clone)]
pub enum FittedFactors {
    /// Closed-form OLS: the full weight matrix carries everything.
    Full,
    LowRank {
        a: Matrix,
        b: Matrix,
    },
    Tucker(TuckerFactors),
    Tar(Box<TarParams>),
    Tar2(Box<Tar2Params>),
}

/// Outcome of a fit: the reconstructed full weight tensor plus the trained
/// factorization, loss accounting and run metadata.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub weights: VarWeights,
    pub factors: FittedFactors,
    /// For linear bias-free fits this equals `mse_loss` of `weights` on the
    /// training data; bias models evaluate their own forward map.
    pub final_loss: f64,
    pub epochs_run: usize,
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    /// Set when the closed-form solve hit a rank-deficient design.
    pub non_unique: bool,
    /// Number of learning-rate halvings the divergence guard applied.
    pub lr_halvings: usize,
    pub wall_seconds: f64,
}

pub(crate) fn weights_from_unfolded(w: &Matrix, n: usize, p: usize) -> Result<VarWeights> {
    VarWeights::new(tensor::fold(w, 1, (n, n, p))?)
}

// ---------------------------------------------------------------------------
// Sufficient statistics and the shared optimizer pieces
// ---------------------------------------------------------------------------

/// `X X^T`, `Y X^T` and `sum ||y_t||^2`, optionally with a constant-one row
/// appended to `x` so a bias column rides along in the same algebra.
pub(crate) struct SuffStats {
    pub s_xx: Matrix,
    pub s_yx: Matrix,
    pub yy: f64,
    pub t: f64,
}

impl SuffStats {
    pub fn new(d: &DesignPair, with_bias: bool) -> Self {
        let (x, y) = (&d.x, &d.y);
        if !with_bias {
            SuffStats {
                s_xx: x.matmul_transpose(x),
                s_yx: y.matmul_transpose(x),
                yy: y.data().iter().map(|v| v * v).sum(),
                t: d.t() as f64,
            }
        } else {
            let dim = x.rows() + 1;
            let t = d.t();
            let mut xa = Matrix::zeros(dim, t);
            for i in 0..x.rows() {
                for c in 0..t {
                    xa.set(i, c, x.get(i, c));
                }
            }
            for c in 0..t {
                xa.set(dim - 1, c, 1.0);
            }
            SuffStats {
                s_xx: xa.matmul_transpose(&xa),
                s_yx: y.matmul_transpose(&xa),
                yy: y.data().iter().map(|v| v * v).sum(),
                t: t as f64,
            }
        }
    }

    /// `(yy - 2 <w, s_yx> + <w s_xx, w>) / T`; cheap but subject to
    /// cancellation near zero loss, so reports recompute the final loss from
    /// residuals.
    pub fn loss(&self, w: &Matrix) -> f64 {
        let wsxx = w.matmul(&self.s_xx);
        (self.yy - 2.0 * w.inner(&self.s_yx) + wsxx.inner(w)) / self.t
    }

    /// `dL/dW = (2/T)(W s_xx - s_yx)`.
    pub fn grad(&self, w: &Matrix) -> Matrix {
        let mut g = w.matmul(&self.s_xx);
        g.scaled_add_assign(-1.0, &self.s_yx);
        g.scale(2.0 / self.t)
    }
}

/// Classic momentum: `v <- beta v - lr g; p <- p + v`, over parallel slices.
pub(crate) struct MomentumState {
    velocity: Vec<Vec<f64>>,
}

impl MomentumState {
    pub fn new(sizes: &[usize]) -> Self {
        MomentumState {
            velocity: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step(&mut self, lr: f64, beta: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.velocity.len());
        assert_eq!(grads.len(), self.velocity.len());
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = beta * *vi - lr * gi;
                *pi += *vi;
            }
        }
    }
}

/// Detects a training run that left the stable region: non-finite loss or a
/// loss far above its initial value. The loops recover by restarting from the
/// same initialization with the learning rate halved, which keeps the stated
/// hyperparameters whenever they are stable.
pub(crate) struct DivergenceGuard {
    ceiling: f64,
}

impl DivergenceGuard {
    /// Maximum number of learning-rate halvings before giving up.
    pub const MAX_HALVINGS: usize = 8;

    pub fn new(initial_loss: f64) -> Self {
        DivergenceGuard {
            ceiling: 10.0 * (initial_loss.abs() + 1.0),
        }
    }

    pub fn tripped(&self, loss: f64) -> bool {
        !loss.is_finite() || loss > self.ceiling
    }
}

/// Drop-based convergence test shared by every training loop.
pub(crate) struct StopRule {
    tol: f64,
    prev: Option<f64>,
}

impl StopRule {
    pub fn new(tol: f64) -> Self {
        StopRule { tol, prev: None }
    }

    /// True once the loss change since the previous epoch falls below the
    /// tolerance in magnitude. Momentum produces transient loss increases, so
    /// a signed drop must not count as convergence.
    pub fn converged(&mut self, loss: f64) -> bool {
        let done = match self.prev {
            Some(prev) => (prev - loss).abs() < self.tol,
            None => false,
        };
        self.prev = Some(loss);
        done
    }
}

// ---------------------------------------------------------------------------
// OLS
// ---------------------------------------------------------------------------

/// Closed-form least squares via a numerically stable SVD solve. A
/// rank-deficient design (always the case when `T < NP`) yields the
/// minimum-norm solution and sets `non_unique`.
pub fn fit_ols(d: &DesignPair) -> Result<FitReport> {
    let started = Instant::now();
    let ls = linalg::min_norm_least_squares(&d.x, &d.y)?;
    let final_loss = mse_loss(&ls.w, d)?;
    Ok(FitReport {
        weights: weights_from_unfolded(&ls.w, d.n, d.p)?,
        factors: FittedFactors::Full,
        final_loss,
        epochs_run: 0,
        loss_trace: vec![final_loss],
        converged: true,
        non_unique: ls.non_unique,
        lr_halvings: 0,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// LR
// ---------------------------------------------------------------------------

/// Analytic gradients of the LR objective at `(a, b)`.
pub fn lr_gradient(a: &Matrix, b: &Matrix, d: &DesignPair) -> Result<(Matrix, Matrix)> {
    if a.rows() != d.n || a.cols() != b.rows() || b.cols() != d.n * d.p {
        return Err(Error::ShapeMismatch(format!(
            "LR factors {:?} x {:?} do not match design ({}, {})",
            a.shape(),
            b.shape(),
            d.n,
            d.n * d.p
        )));
    }
    let stats = SuffStats::new(d, false);
    let g = stats.grad(&a.matmul(b));
    Ok((g.matmul_transpose(b), a.transpose_matmul(&g)))
}

/// Factorized low-rank estimator `W = A B`, trained jointly by momentum
/// gradient descent.
pub fn fit_lr(d: &DesignPair, r: usize, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let n = d.n;
    let np = d.n * d.p;
    if r == 0 || r > n.min(np) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} is outside 1..={}",
            n.min(np)
        )));
    }
    let started = Instant::now();
    let stats = SuffStats::new(d, false);
    let mut lr = cfg.learning_rate;
    let mut halvings = 0usize;
    let (a, b, trace, epochs, converged) = 'attempt: loop {
        let mut rng = rng::rng_from_seed(cfg.seed);
        let mut a = rng::standard_normal_matrix(&mut rng, n, r).scale(cfg.init_scale);
        let mut b = rng::standard_normal_matrix(&mut rng, r, np).scale(cfg.init_scale);
        let mut momentum = MomentumState::new(&[n * r, r * np]);
        let mut stop = StopRule::new(cfg.loss_drop_tolerance);
        let mut trace = Vec::new();
        let mut guard: Option<DivergenceGuard> = None;
        let mut epochs = 0usize;
        loop {
            let w = a.matmul(&b);
            let loss = stats.loss(&w);
            let guard = guard.get_or_insert_with(|| DivergenceGuard::new(loss));
            if guard.tripped(loss) {
                if halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                trace.push(loss);
                break 'attempt (a, b, trace, epochs, false);
            }
            trace.push(loss);
            if stop.converged(loss) {
                break 'attempt (a, b, trace, epochs, true);
            }
            if epochs >= cfg.max_epochs {
                break 'attempt (a, b, trace, epochs, false);
            }
            let g = stats.grad(&w);
            let ga = g.matmul_transpose(&b);
            let gb = a.transpose_matmul(&g);
            momentum.step(
                lr,
                cfg.momentum,
                &mut [a.data_mut(), b.data_mut()],
                &[ga.data(), gb.data()],
            );
            epochs += 1;
        }
    };

    let w = a.matmul(&b);
    let final_loss = mse_loss(&w, d)?;
    Ok(FitReport {
        weights: weights_from_unfolded(&w, n, d.p)?,
        factors: FittedFactors::LowRank { a, b },
        final_loss,
        epochs_run: epochs,
        loss_trace: trace,
        converged,
        non_unique: false,
        lr_halvings: halvings,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// LTR
// ---------------------------------------------------------------------------

/// Gradients of the LTR objective with respect to every Tucker block.
#[derive(Debug, Clone)]
pub struct TuckerGrads {
    pub core: Tensor3,
    pub u1: Matrix,
    pub u2: Matrix,
    pub u3: Matrix,
    pub bias: Option<Vec<f64>>,
}

fn tucker_grads_from_wgrad(
    f: &TuckerFactors,
    g: &Matrix,
    n: usize,
    p: usize,
) -> Result<TuckerGrads> {
    let g1 = tensor::unfold(&f.core, 1)?;
    let k1 = tensor::kronecker(&f.u3, &f.u2);
    let gu1 = g.matmul(&k1).matmul_transpose(&g1);

    let delta = tensor::fold(g, 1, (n, n, p))?;
    let g2 = tensor::unfold(&f.core, 2)?;
    let k2 = tensor::kronecker(&f.u3, &f.u1);
    let gu2 = tensor::unfold(&delta, 2)?.matmul(&k2).matmul_transpose(&g2);

    let g3 = tensor::unfold(&f.core, 3)?;
    let k3 = tensor::kronecker(&f.u2, &f.u1);
    let gu3 = tensor::unfold(&delta, 3)?.matmul(&k3).matmul_transpose(&g3);

    let gcore = tensor::mode_multiply(&delta, &f.u1.transpose(), 1)?;
    let gcore = tensor::mode_multiply(&gcore, &f.u2.transpose(), 2)?;
    let gcore = tensor::mode_multiply(&gcore, &f.u3.transpose(), 3)?;

    Ok(TuckerGrads {
        core: gcore,
        u1: gu1,
        u2: gu2,
        u3: gu3,
        bias: None,
    })
}

/// Analytic gradients of the LTR objective at the given factors.
pub fn ltr_gradient(f: &TuckerFactors, d: &DesignPair) -> Result<TuckerGrads> {
    let (n, p) = (d.n, d.p);
    if f.outer_dims() != (n, n, p) {
        return Err(Error::ShapeMismatch(format!(
            "factors reconstruct {:?}, design expects ({n}, {n}, {p})",
            f.outer_dims()
        )));
    }
    let stats = SuffStats::new(d, false);
    let w = tensor::tucker_unfold1(f)?;
    let g = stats.grad(&w);
    tucker_grads_from_wgrad(f, &g, n, p)
}

pub(crate) struct TuckerLinearFit {
    pub factors: TuckerFactors,
    pub bias: Option<Vec<f64>>,
    pub trace: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub lr_halvings: usize,
}

/// Shared trainer for every linear-in-inputs Tucker parameterization: the LTR
/// estimator and the identity-activation TAR network route through this one
/// loop, so their fits agree bit for bit.
pub(crate) fn train_tucker_linear(
    d: &DesignPair,
    ranks: (usize, usize, usize),
    cfg: &TrainConfig,
    with_bias: bool,
) -> Result<TuckerLinearFit> {
    cfg.validate()?;
    let (n, p) = (d.n, d.p);
    let np = n * p;
    let (r1, r2, r3) = ranks;
    if r1 == 0 || r1 > n || r2 == 0 || r2 > n || r3 == 0 || r3 > p {
        return Err(Error::InvalidArgument(format!(
            "ranks {ranks:?} are infeasible for (N, P) = ({n}, {p})"
        )));
    }
    let stats = SuffStats::new(d, with_bias);
    let dim = if with_bias { np + 1 } else { np };
    let mut lr = cfg.learning_rate;
    let mut halvings = 0usize;
    'attempt: loop {
        let mut rng = rng::rng_from_seed(cfg.seed);
        let mut core = Tensor3::from_vec(
            ranks,
            rng::standard_normal_vec(&mut rng, r1 * r2 * r3),
        )
        .scale(cfg.init_scale);
        let mut u1 = rng::standard_normal_matrix(&mut rng, n, r1).scale(cfg.init_scale);
        let mut u2 = rng::standard_normal_matrix(&mut rng, n, r2).scale(cfg.init_scale);
        let mut u3 = rng::standard_normal_matrix(&mut rng, p, r3).scale(cfg.init_scale);
        let mut bias = vec![0.0; if with_bias { n } else { 0 }];

        let mut momentum = MomentumState::new(&[
            r1 * r2 * r3,
            n * r1,
            n * r2,
            p * r3,
            bias.len(),
        ]);
        let mut stop = StopRule::new(cfg.loss_drop_tolerance);
        let mut guard: Option<DivergenceGuard> = None;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut epochs = 0usize;

        loop {
            let f = TuckerFactors::new(core.clone(), u1.clone(), u2.clone(), u3.clone())?;
            let w = tensor::tucker_unfold1(&f)?;
            // Augment with the bias column when present.
            let w_aug = if with_bias {
                let mut m = Matrix::zeros(n, dim);
                for i in 0..n {
                    for j in 0..np {
                        m.set(i, j, w.get(i, j));
                    }
                    m.set(i, np, bias[i]);
                }
                m
            } else {
                w
            };
            let loss = stats.loss(&w_aug);
            let guard = guard.get_or_insert_with(|| DivergenceGuard::new(loss));
            if guard.tripped(loss) {
                if halvings < DivergenceGuard::MAX_HALVINGS {
                    halvings += 1;
                    lr *= 0.5;
                    continue 'attempt;
                }
                trace.push(loss);
                break;
            }
            trace.push(loss);
            if stop.converged(loss) {
                converged = true;
                break;
            }
            if epochs >= cfg.max_epochs {
                break;
            }
            let g_aug = stats.grad(&w_aug);
            let (g, g_bias) = if with_bias {
                let mut gw = Matrix::zeros(n, np);
                let mut gb = vec![0.0; n];
                for i in 0..n {
                    for j in 0..np {
                        gw.set(i, j, g_aug.get(i, j));
                    }
                    gb[i] = g_aug.get(i, np);
                }
                (gw, gb)
            } else {
                (g_aug, Vec::new())
            };
            let grads = tucker_grads_from_wgrad(&f, &g, n, p)?;
            momentum.step(
                lr,
                cfg.momentum,
                &mut [
                    core.data_mut(),
                    u1.data_mut(),
                    u2.data_mut(),
                    u3.data_mut(),
                    &mut bias,
                ],
                &[
                    grads.core.data(),
                    grads.u1.data(),
                    grads.u2.data(),
                    grads.u3.data(),
                    &g_bias,
                ],
            );
            epochs += 1;
        }

        break Ok(TuckerLinearFit {
            factors: TuckerFactors::new(core, u1, u2, u3)?,
            bias: if with_bias { Some(bias) } else { None },
            trace,
            epochs,
            converged,
            lr_halvings: halvings,
        });
    }
}

/// Low-Tucker-rank estimator: all four blocks `(G, U1, U2, U3)` trained
/// jointly, with no orthogonality constraints.
pub fn fit_ltr(d: &DesignPair, ranks: (usize, usize, usize), cfg: &TrainConfig) -> Result<FitReport> {
    let started = Instant::now();
    let fit = train_tucker_linear(d, ranks, cfg, false)?;
    let w = tensor::tucker_unfold1(&fit.factors)?;
    let final_loss = mse_loss(&w, d)?;
    Ok(FitReport {
        weights: weights_from_unfolded(&w, d.n, d.p)?,
        factors: FittedFactors::Tucker(fit.factors),
        final_loss,
        epochs_run: fit.epochs,
        loss_trace: fit.trace,
        converged: fit.converged,
        non_unique: false,
        lr_halvings: fit.lr_halvings,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Reporting helpers
// ---------------------------------------------------------------------------

/// Frobenius distance between a fitted weight tensor and a known truth.
pub fn estimation_error(fit: &FitReport, truth: &VarWeights) -> Result<f64> {
    let diff = fit.weights.tensor().sub(truth.tensor())?;
    Ok(tensor::frobenius_norm(&diff))
}

/// Which estimator a parameter count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    Lr { r: usize },
    Ltr { ranks: (usize, usize, usize) },
    Tar { ranks: (usize, usize, usize), bias: bool },
    Tar2 { ranks: (usize, usize, usize), bias: bool },
}

/// Trainable parameter counts: `N^2 P` for OLS, `r(N + NP)` for LR and
/// `r1 r2 r3 + N r1 + N r2 + P r3` for LTR; TAR adds the optional `N` bias
/// terms, TAR-2 doubles the lanes sharing only the bias.
pub fn parameter_count(kind: &ModelKind, n: usize, p: usize) -> usize {
    let ltr = |(r1, r2, r3): (usize, usize, usize)| r1 * r2 * r3 + n * r1 + n * r2 + p * r3;
    match *kind {
        ModelKind::Ols => n * n * p,
        ModelKind::Lr { r } => r * (n + n * p),
        ModelKind::Ltr { ranks } => ltr(ranks),
        ModelKind::Tar { ranks, bias } => ltr(ranks) + if bias { n } else { 0 },
        ModelKind::Tar2 { ranks, bias } => 2 * ltr(ranks) + if bias { n } else { 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::var::{generate_low_tucker_weights, simulate_var, NoiseSpec};

    fn series_from_rows(rows: &[Vec<f64>]) -> Series {
        let n = rows[0].len();
        let mut m = Matrix::zeros(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from_slice(r);
        }
        Series::with_default_names(m)
    }

    #[test]
    fn build_design_counts_and_stacking() {
        let rows: Vec<Vec<f64>> = (1..=7).map(|i| vec![i as f64, 10.0 * i as f64]).collect();
        let s = series_from_rows(&rows);
        let d = build_design(&s, 3, false).unwrap();
        assert_eq!(d.t(), 4);
        assert_eq!(d.x().shape(), (6, 4));
        // First input column: (y_3; y_2; y_1), newest lag first.
        assert_eq!(d.x().col(0), vec![3.0, 30.0, 2.0, 20.0, 1.0, 10.0]);
        assert_eq!(d.y().col(0), vec![4.0, 40.0]);

        assert!(build_design(&s, 7, false).is_err());
        assert!(build_design(&s, 0, false).is_err());
    }

    #[test]
    fn build_design_centering_zeroes_constant_series() {
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![3.5, -1.0]).collect();
        let s = series_from_rows(&rows);
        let d = build_design(&s, 2, true).unwrap();
        assert!(d.x().data().iter().all(|&v| v == 0.0));
        assert!(d.y().data().iter().all(|&v| v == 0.0));
        assert_eq!(d.means(), &[3.5, -1.0]);
    }

    #[test]
    fn mse_loss_hand_cases() {
        let w = generate_low_tucker_weights(3, 2, (2, 2, 1), 0.9, 4).unwrap();
        let s = simulate_var(&w, &NoiseSpec::identity(3, 9), 40, 100).unwrap();
        let d = build_design(&s, 2, false).unwrap();

        // Zero weights: loss is the mean squared target norm.
        let zero = Matrix::zeros(3, 6);
        let expected: f64 =
            d.y().data().iter().map(|v| v * v).sum::<f64>() / d.t() as f64;
        assert!((mse_loss(&zero, &d).unwrap() - expected).abs() < 1e-12);

        // Naive loop oracle.
        let wm = w.unfolded();
        let mut acc = 0.0;
        for t in 0..d.t() {
            for i in 0..3 {
                let mut pred = 0.0;
                for j in 0..6 {
                    pred += wm.get(i, j) * d.x().get(j, t);
                }
                let e = d.y().get(i, t) - pred;
                acc += e * e;
            }
        }
        let naive = acc / d.t() as f64;
        let fast = mse_loss(&wm, &d).unwrap();
        assert!((naive - fast).abs() <= 1e-12 * naive.max(1.0));

        assert!(mse_loss(&Matrix::zeros(3, 5), &d).is_err());
    }

    #[test]
    fn mse_loss_zero_on_noiseless_data() {
        // y_t = W x_t exactly.
        let w = generate_low_tucker_weights(2, 2, (1, 1, 1), 0.9, 2).unwrap();
        let wm = w.unfolded();
        let mut rows = vec![vec![0.3, -0.2], vec![0.1, 0.4]];
        for t in 2..30 {
            let mut x = Vec::new();
            x.extend_from_slice(&rows[t - 1]);
            x.extend_from_slice(&rows[t - 2]);
            rows.push(wm.mul_vec(&x));
        }
        let s = series_from_rows(&rows);
        let d = build_design(&s, 2, false).unwrap();
        assert!(mse_loss(&wm, &d).unwrap() <= 1e-20);
    }

    #[test]
    fn ols_recovers_noiseless_weights() {
        let n = 3;
        let p = 2;
        let w = generate_low_tucker_weights(n, p, (2, 2, 1), 0.9, 12).unwrap();
        let wm = w.unfolded();
        // Drive with noise, then strip it: simulate then rebuild targets as
        // exact linear images of the lags.
        let s = simulate_var(&w, &NoiseSpec::identity(n, 30), 4 * n * p, 100).unwrap();
        let d0 = build_design(&s, p, false).unwrap();
        let y = wm.matmul(d0.x());
        let d = DesignPair {
            x: d0.x().clone(),
            y,
            n,
            p,
            means: vec![0.0; n],
            centered: false,
        };
        let fit = fit_ols(&d).unwrap();
        assert!(estimation_error(&fit, &w).unwrap() < 1e-8);
        assert!(!fit.non_unique);
        assert!(fit.final_loss < 1e-16);
    }

    #[test]
    fn ols_scalar_slope_formula() {
        let w = generate_low_tucker_weights(1, 1, (1, 1, 1), 0.9, 3).unwrap();
        let s = simulate_var(&w, &NoiseSpec::identity(1, 8), 60, 50).unwrap();
        let d = build_design(&s, 1, false).unwrap();
        let fit = fit_ols(&d).unwrap();
        let num: f64 = (0..d.t()).map(|t| d.y().get(0, t) * d.x().get(0, t)).sum();
        let den: f64 = (0..d.t()).map(|t| d.x().get(0, t).powi(2)).sum();
        assert!((fit.weights.tensor().get(0, 0, 0) - num / den).abs() < 1e-12);
    }

    #[test]
    fn ols_flags_rank_deficiency() {
        let n = 3;
        let p = 2;
        let w = generate_low_tucker_weights(n, p, (1, 1, 1), 0.9, 5).unwrap();
        // T = 4 < NP = 6.
        let s = simulate_var(&w, &NoiseSpec::identity(n, 2), 4, 100).unwrap();
        let d = build_design(&s, p, false).unwrap();
        let fit = fit_ols(&d).unwrap();
        assert!(fit.non_unique);
    }

    fn synthetic_design(n: usize, p: usize, t_eff: usize, seed: u64) -> (DesignPair, VarWeights) {
        // Mild dependence keeps the default learning rate stable without
        // preprocessing, which is what these tests are about.
        let w = generate_low_tucker_weights(n, p, (2, 2, p.min(2)), 0.9, seed).unwrap();
        let w = crate::var::rescale_to_stationary(&w, 0.6).unwrap();
        let s = simulate_var(&w, &NoiseSpec::identity(n, seed ^ 0xabcd), t_eff, 500).unwrap();
        (build_design(&s, p, false).unwrap(), w)
    }

    #[test]
    fn lr_gradient_matches_finite_differences() {
        let (d, _) = synthetic_design(3, 2, 25, 71);
        let mut rng = rng::rng_from_seed(99);
        let a = rng::standard_normal_matrix(&mut rng, 3, 2).scale(0.4);
        let b = rng::standard_normal_matrix(&mut rng, 2, 6).scale(0.4);
        let (ga, gb) = lr_gradient(&a, &b, &d).unwrap();

        let h = 1e-6;
        let loss = |a: &Matrix, b: &Matrix| mse_loss(&a.matmul(b), &d).unwrap();
        for (analytic, base, other, is_a) in [(&ga, &a, &b, true), (&gb, &b, &a, false)] {
            for idx in 0..analytic.data().len() {
                let mut plus = base.clone();
                plus.data_mut()[idx] += h;
                let mut minus = base.clone();
                minus.data_mut()[idx] -= h;
                let fd = if is_a {
                    (loss(&plus, other) - loss(&minus, other)) / (2.0 * h)
                } else {
                    (loss(other, &plus) - loss(other, &minus)) / (2.0 * h)
                };
                let g = analytic.data()[idx];
                assert!(
                    (g - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "idx {idx}: analytic {g} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn lr_recovers_rank_one_weights() {
        // Rank-1 truth, noiseless targets.
        let n = 3;
        let p = 2;
        let mut rng = rng::rng_from_seed(17);
        let u = rng::standard_normal_matrix(&mut rng, n, 1);
        let v = rng::standard_normal_matrix(&mut rng, 1, n * p);
        let wm = u.matmul(&v).scale(0.3);
        let truth = weights_from_unfolded(&wm, n, p).unwrap();
        let stationary = crate::var::rescale_to_stationary(&truth, 0.6).unwrap();
        let wm = stationary.unfolded();

        let s = simulate_var(&stationary, &NoiseSpec::identity(n, 77), 400, 500).unwrap();
        let d0 = build_design(&s, p, false).unwrap();
        let d = DesignPair {
            x: d0.x().clone(),
            y: wm.matmul(d0.x()),
            n,
            p,
            means: vec![0.0; n],
            centered: false,
        };
        let fit = fit_lr(&d, 1, &TrainConfig::default()).unwrap();
        let rel = estimation_error(&fit, &stationary).unwrap()
            / tensor::frobenius_norm(stationary.tensor());
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn lr_full_rank_reaches_ols_loss() {
        let (d, _) = synthetic_design(3, 2, 300, 41);
        let ols = fit_ols(&d).unwrap();
        let lr = fit_lr(&d, 3, &TrainConfig::default()).unwrap();
        assert!(
            lr.final_loss - ols.final_loss < 1e-6,
            "lr {} vs ols {}",
            lr.final_loss,
            ols.final_loss
        );
        assert!(lr.final_loss + 1e-12 >= ols.final_loss);
        assert!(fit_lr(&d, 0, &TrainConfig::default()).is_err());
        assert!(fit_lr(&d, 4, &TrainConfig::default()).is_err());
    }

    #[test]
    fn ltr_gradient_matches_finite_differences() {
        let (d, _) = synthetic_design(3, 2, 20, 55);
        let mut rng = rng::rng_from_seed(56);
        let ranks = (2, 2, 1);
        let core = Tensor3::from_vec(ranks, rng::standard_normal_vec(&mut rng, 4)).scale(0.5);
        let u1 = rng::standard_normal_matrix(&mut rng, 3, 2).scale(0.5);
        let u2 = rng::standard_normal_matrix(&mut rng, 3, 2).scale(0.5);
        let u3 = rng::standard_normal_matrix(&mut rng, 2, 1).scale(0.5);
        let f = TuckerFactors::new(core, u1, u2, u3).unwrap();
        let grads = ltr_gradient(&f, &d).unwrap();

        let loss = |f: &TuckerFactors| mse_loss(&tensor::tucker_unfold1(f).unwrap(), &d).unwrap();
        let h = 1e-6;
        let check = |analytic: &[f64], perturb: &dyn Fn(usize, f64) -> TuckerFactors| {
            for (idx, &g) in analytic.iter().enumerate() {
                let fd = (loss(&perturb(idx, h)) - loss(&perturb(idx, -h))) / (2.0 * h);
                assert!(
                    (g - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "idx {idx}: analytic {g} vs fd {fd}"
                );
            }
        };
        check(grads.core.data(), &|i, eps| {
            let mut c = f.core.clone();
            c.data_mut()[i] += eps;
            TuckerFactors::new(c, f.u1.clone(), f.u2.clone(), f.u3.clone()).unwrap()
        });
        check(grads.u1.data(), &|i, eps| {
            let mut u = f.u1.clone();
            u.data_mut()[i] += eps;
            TuckerFactors::new(f.core.clone(), u, f.u2.clone(), f.u3.clone()).unwrap()
        });
        check(grads.u2.data(), &|i, eps| {
            let mut u = f.u2.clone();
            u.data_mut()[i] += eps;
            TuckerFactors::new(f.core.clone(), f.u1.clone(), u, f.u3.clone()).unwrap()
        });
        check(grads.u3.data(), &|i, eps| {
            let mut u = f.u3.clone();
            u.data_mut()[i] += eps;
            TuckerFactors::new(f.core.clone(), f.u1.clone(), f.u2.clone(), u).unwrap()
        });
    }

    #[test]
    fn ltr_full_ranks_reach_ols_loss() {
        let (d, _) = synthetic_design(3, 2, 300, 61);
        let ols = fit_ols(&d).unwrap();
        let cfg = TrainConfig {
            loss_drop_tolerance: 1e-11,
            max_epochs: 40_000,
            ..TrainConfig::default()
        };
        let ltr = fit_ltr(&d, (3, 3, 2), &cfg).unwrap();
        assert!(
            ltr.final_loss - ols.final_loss < 1e-6,
            "ltr {} vs ols {}",
            ltr.final_loss,
            ols.final_loss
        );
        assert!(fit_ltr(&d, (4, 2, 2), &TrainConfig::default()).is_err());
    }

    #[test]
    fn ltr_recovers_low_tucker_weights() {
        let n = 4;
        let p = 2;
        let ranks = (2, 2, 2);
        let truth = crate::var::rescale_to_stationary(
            &generate_low_tucker_weights(n, p, ranks, 0.9, 91).unwrap(),
            0.6,
        )
        .unwrap();
        let t_eff = 20 * (8 + n * 2 + n * 2 + p * 2);
        let s = simulate_var(&truth, &NoiseSpec::identity(n, 92), t_eff, 500).unwrap();
        let d0 = build_design(&s, p, false).unwrap();
        let d = DesignPair {
            x: d0.x().clone(),
            y: truth.unfolded().matmul(d0.x()),
            n,
            p,
            means: vec![0.0; n],
            centered: false,
        };
        let fit = fit_ltr(&d, ranks, &TrainConfig::default()).unwrap();
        let rel =
            estimation_error(&fit, &truth).unwrap() / tensor::frobenius_norm(truth.tensor());
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn forward_equivalence_of_the_three_routes() {
        let mut rng = rng::rng_from_seed(13);
        let n = 4;
        let p = 3;
        let ranks = (2, 2, 2);
        let core = Tensor3::from_vec(ranks, rng::standard_normal_vec(&mut rng, 8));
        let u1 = rng::standard_normal_matrix(&mut rng, n, 2);
        let u2 = rng::standard_normal_matrix(&mut rng, n, 2);
        let u3 = rng::standard_normal_matrix(&mut rng, p, 2);
        let f = TuckerFactors::new(core, u1, u2, u3).unwrap();
        let x = rng::standard_normal_vec(&mut rng, n * p);

        // Route 1: reconstruct the tensor, unfold, multiply.
        let w_full = tensor::unfold(&tensor::tucker_reconstruct(&f).unwrap(), 1).unwrap();
        let y1 = w_full.mul_vec(&x);
        // Route 2: u1 g1 (u3 (x) u2)^T x.
        let y2 = tensor::tucker_unfold1(&f).unwrap().mul_vec(&x);
        // Route 3: u1 g1 vec(u2^T X u3).
        let xm = Matrix::from_fn(n, p, |i, k| x[k * n + i]);
        let inner = f.u2.transpose_matmul(&xm).matmul(&f.u3);
        let v: Vec<f64> = (0..inner.cols())
            .flat_map(|j| (0..inner.rows()).map(move |i| (i, j)))
            .map(|(i, j)| inner.get(i, j))
            .collect();
        let y3 = f
            .u1
            .matmul(&tensor::unfold(&f.core, 1).unwrap())
            .mul_vec(&v);

        for ((a, b), c) in y1.iter().zip(&y2).zip(&y3) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn plain_gd_trace_is_monotone() {
        let (d, _) = synthetic_design(2, 1, 50, 23);
        let cfg = TrainConfig {
            momentum: 0.0,
            learning_rate: 1e-4,
            max_epochs: 500,
            ..TrainConfig::default()
        };
        let fit = fit_lr(&d, 1, &cfg).unwrap();
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "trace increased: {} -> {}", w[0], w[1]);
        }

        let fit = fit_ltr(&d, (1, 1, 1), &cfg).unwrap();
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn trained_loss_never_exceeds_initial_loss() {
        let (d, _) = synthetic_design(3, 2, 80, 83);
        for fit in [
            fit_lr(&d, 2, &TrainConfig::default()).unwrap(),
            fit_ltr(&d, (2, 2, 1), &TrainConfig::default()).unwrap(),
        ] {
            assert!(fit.final_loss <= fit.loss_trace[0] + 1e-12);
        }
    }

    #[test]
    fn estimation_error_basics() {
        let truth = generate_low_tucker_weights(3, 2, (2, 2, 1), 0.9, 7).unwrap();
        let s = simulate_var(&truth, &NoiseSpec::identity(3, 8), 30, 100).unwrap();
        let d = build_design(&s, 2, false).unwrap();
        let fit = fit_ols(&d).unwrap();

        let mut exact = fit.clone();
        exact.weights = truth.clone();
        assert_eq!(estimation_error(&exact, &truth).unwrap(), 0.0);

        let zero = VarWeights::new(Tensor3::zeros((3, 3, 2))).unwrap();
        let err = estimation_error(&fit, &zero).unwrap();
        assert!((err - tensor::frobenius_norm(fit.weights.tensor())).abs() < 1e-15);

        let wrong = VarWeights::new(Tensor3::zeros((3, 3, 3))).unwrap();
        assert!(estimation_error(&fit, &wrong).is_err());
    }

    #[test]
    fn parameter_counts_match_formulas() {
        assert_eq!(
            parameter_count(&ModelKind::Ltr { ranks: (2, 2, 2) }, 25, 3),
            114
        );
        assert_eq!(parameter_count(&ModelKind::Lr { r: 2 }, 25, 3), 200);
        assert_eq!(parameter_count(&ModelKind::Ols, 25, 3), 1875);
        assert_eq!(
            parameter_count(&ModelKind::Tar { ranks: (2, 2, 2), bias: true }, 25, 3),
            114 + 25
        );
        assert_eq!(
            parameter_count(&ModelKind::Tar2 { ranks: (2, 2, 2), bias: true }, 25, 3),
            2 * 114 + 25
        );
    }
}
