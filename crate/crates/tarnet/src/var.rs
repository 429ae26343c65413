//! Stationarity diagnostics, spectral dependence measures and synthetic
//! sequence generation for VAR(P) processes, including the low-Tucker-rank
//! weight construction and the linear / nonlinear data generating processes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;
use crate::pipeline::Series;
use crate::rng;
use crate::tensor::{self, Tensor3, TuckerFactors};

/// Rescaling stops once the companion spectral radius is this close to the
/// target.
pub const RADIUS_TOL: f64 = 1e-6;

/// Default number of simulated points discarded before recording.
pub const DEFAULT_BURN_IN: usize = 500;

/// Default grid size for the unit-circle spectral measures.
pub const DEFAULT_MU_GRID: usize = 1024;

/// Entry magnitude beyond which recursive generation is aborted.
const DIVERGENCE_GUARD: f64 = 1e6;

/// Weight tensor of a VAR(P) process: dims `(N, N, P)`, slice `k` is the lag
/// matrix `A_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarWeights {
    n: usize,
    p: usize,
    w: Tensor3,
}

impl VarWeights {
    pub fn new(w: Tensor3) -> Result<Self> {
        let (d1, d2, p) = w.dims();
        if d1 != d2 {
            return Err(Error::ShapeMismatch(format!(
                "weight tensor must be (N, N, P), got {:?}",
                w.dims()
            )));
        }
        Ok(Self { n: d1, p, w })
    }

    pub fn from_lag_matrices(slices: &[Matrix]) -> Result<Self> {
        Self::new(Tensor3::from_slices(slices)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.w
    }

    /// Lag matrices `A_1..A_P`.
    pub fn lag_matrices(&self) -> Vec<Matrix> {
        (0..self.p).map(|k| self.w.slice(k)).collect()
    }

    /// The stacked `N x NP` weight matrix `(A_1, ..., A_P)`, i.e. the mode-1
    /// unfolding.
    pub fn unfolded(&self) -> Matrix {
        tensor::unfold(&self.w, 1).expect("mode 1 is valid")
    }

    pub fn scale(&self, c: f64) -> VarWeights {
        VarWeights {
            n: self.n,
            p: self.p,
            w: self.w.scale(c),
        }
    }
}

/// Noise specification for simulation: a symmetric positive definite
/// covariance and a stream seed.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    covariance: Matrix,
    chol: Matrix,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(covariance: Matrix, seed: u64) -> Result<Self> {
        if covariance.rows() != covariance.cols() {
            return Err(Error::ShapeMismatch("covariance must be square".into()));
        }
        let scale = covariance.max_abs().max(1.0);
        for i in 0..covariance.rows() {
            for j in 0..i {
                if (covariance.get(i, j) - covariance.get(j, i)).abs() > 1e-12 * scale {
                    return Err(Error::InvalidArgument(
                        "covariance is not symmetric to 1e-12".into(),
                    ));
                }
            }
        }
        let chol = linalg::cholesky_factor(&covariance)
            .map_err(|_| Error::InvalidArgument("covariance is not positive definite".into()))?;
        Ok(Self {
            covariance,
            chol,
            seed,
        })
    }

    pub fn identity(n: usize, seed: u64) -> Self {
        Self {
            covariance: Matrix::identity(n),
            chol: Matrix::identity(n),
            seed,
        }
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.rows()
    }

    fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let z = rng::standard_normal_vec(rng, out.len());
        // out = L z
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let row = self.chol.row(i);
            for (j, &l) in row.iter().enumerate().take(i + 1) {
                acc += l * z[j];
            }
            *o = acc;
        }
    }
}

/// Extreme eigenvalues of `A*(z) A(z)` over the unit circle, evaluated on a
/// uniform angle grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralMu {
    pub mu_min: f64,
    pub mu_max: f64,
    pub grid_points: usize,
    /// False signals that the weights failed the stationarity check; the
    /// values are still computed.
    pub stationary: bool,
}

/// Full dependence summary: spectral extremes plus the constant `M`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub mu_min: f64,
    pub mu_max: f64,
    pub m_constant: f64,
    pub grid_points: usize,
}

/// The `NP x NP` companion matrix: top block row `(A_1 ... A_P)`, identity
/// blocks on the subdiagonal.
pub fn companion_matrix(w: &VarWeights) -> Matrix {
    let n = w.n;
    let p = w.p;
    let np = n * p;
    let mut m = Matrix::zeros(np, np);
    for k in 0..p {
        for i in 0..n {
            for j in 0..n {
                m.set(i, k * n + j, w.w.get(i, j, k));
            }
        }
    }
    for b in 1..p {
        for i in 0..n {
            m.set(b * n + i, (b - 1) * n + i, 1.0);
        }
    }
    m
}

fn companion_radius_scaled(base: &Matrix, n: usize, c: f64) -> f64 {
    let mut m = base.clone();
    for i in 0..n {
        for v in m.row_mut(i) {
            *v *= c;
        }
    }
    linalg::spectral_radius(&m).expect("companion matrix is square")
}

/// Stationarity check: companion spectral radius strictly below `1 - margin`.
/// Equivalent to all roots of `det(I - A_1 z - ... - A_P z^P)` lying outside
/// the unit circle.
pub fn is_stationary(w: &VarWeights, margin: f64) -> bool {
    assert!((0.0..1.0).contains(&margin), "margin must be in [0, 1)");
    let radius = linalg::spectral_radius(&companion_matrix(w)).expect("square");
    radius < 1.0 - margin
}

/// Rescales all slices by one positive scalar so the companion spectral
/// radius lands within [`RADIUS_TOL`] of `target_radius`. The scalar is found
/// by bisection.
pub fn rescale_to_stationary(w: &VarWeights, target_radius: f64) -> Result<VarWeights> {
    let c = stationary_scale(w, target_radius)?;
    Ok(w.scale(c))
}

/// The scalar used by [`rescale_to_stationary`].
pub(crate) fn stationary_scale(w: &VarWeights, target_radius: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&target_radius) || target_radius == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "target radius must be in (0, 1), got {target_radius}"
        )));
    }
    if w.w.data().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument(
            "zero weight tensor cannot be rescaled to a positive radius".into(),
        ));
    }
    let base = companion_matrix(w);
    let radius = |c: f64| companion_radius_scaled(&base, w.n, c);

    let r1 = radius(1.0);
    if r1 <= 0.0 {
        return Err(Error::Numerical(
            "weights have zero spectral radius; no scaling reaches the target".into(),
        ));
    }
    // Radius scales linearly for P = 1; for P > 1 this is still a good start.
    let mut hi = target_radius / r1;
    let mut lo = 0.0;
    let mut r_hi = radius(hi);
    if (r_hi - target_radius).abs() <= RADIUS_TOL {
        return Ok(hi);
    }
    let mut guard = 0;
    while r_hi < target_radius {
        lo = hi;
        hi *= 2.0;
        r_hi = radius(hi);
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("bracketing the target radius failed".into()));
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let r = radius(mid);
        if (r - target_radius).abs() <= RADIUS_TOL {
            return Ok(mid);
        }
        if r < target_radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!(
        "bisection did not reach radius {target_radius} within tolerance"
    )))
}

/// Evaluates `A(z) = I - sum_k A_k z^k` on `grid_points` uniform angles of
/// the unit circle and returns the extreme eigenvalues of `A*(z) A(z)`.
pub fn spectral_mu(w: &VarWeights, grid_points: usize) -> Result<SpectralMu> {
    if grid_points < 64 {
        return Err(Error::InvalidArgument(format!(
            "grid must have at least 64 points, got {grid_points}"
        )));
    }
    let n = w.n;
    let slices = w.lag_matrices();
    let mut mu_min = f64::INFINITY;
    let mut mu_max = 0.0f64;
    for j in 0..grid_points {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / grid_points as f64;
        let mut re = Matrix::identity(n);
        let mut im = Matrix::zeros(n, n);
        for (k, a) in slices.iter().enumerate() {
            let ang = theta * (k + 1) as f64;
            let (s, c) = ang.sin_cos();
            re.scaled_add_assign(-c, a);
            im.scaled_add_assign(-s, a);
        }
        let (smin, smax) = linalg::complex_singular_extremes(&re, &im)?;
        mu_min = mu_min.min(smin * smin);
        mu_max = mu_max.max(smax * smax);
    }
    Ok(SpectralMu {
        mu_min,
        mu_max,
        grid_points,
        stationary: is_stationary(w, 0.0),
    })
}

/// Dependence measure constant
/// `M = lambda_max(Sigma_e) mu_max / (lambda_min(Sigma_e) sqrt(mu_min))`.
pub fn dependence_constant(mu: &SpectralMu, sigma_e: &Matrix) -> Result<f64> {
    let (lmin, lmax) = linalg::symmetric_eigen_extremes(sigma_e)?;
    if lmin <= 0.0 {
        return Err(Error::Numerical(format!(
            "noise covariance is singular (lambda_min = {lmin})"
        )));
    }
    Ok(lmax * mu.mu_max / (lmin * mu.mu_min.sqrt()))
}

/// [`spectral_mu`] plus [`dependence_constant`] in one record.
pub fn spectral_summary(
    w: &VarWeights,
    sigma_e: &Matrix,
    grid_points: usize,
) -> Result<SpectralSummary> {
    let mu = spectral_mu(w, grid_points)?;
    let m = dependence_constant(&mu, sigma_e)?;
    Ok(SpectralSummary {
        mu_min: mu.mu_min,
        mu_max: mu.mu_max,
        m_constant: m,
        grid_points,
    })
}

fn check_ranks(n: usize, p: usize, ranks: (usize, usize, usize)) -> Result<()> {
    let (r1, r2, r3) = ranks;
    for (name, r, cap) in [("r1", r1, n), ("r2", r2, n), ("r3", r3, p)] {
        if r == 0 || r > cap {
            return Err(Error::InvalidArgument(format!(
                "{name} = {r} is outside 1..={cap}"
            )));
        }
    }
    Ok(())
}

/// Draws the Tucker pieces of a random low-rank weight tensor: a Gaussian
/// core rescaled so the top singular value of its mode-1 unfolding equals
/// `core_gain`, and orthonormal factors taken from the leading left singular
/// vectors of Gaussian matrices.
fn draw_tucker_pieces<R: Rng>(
    rng: &mut R,
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    core_gain: f64,
) -> Result<TuckerFactors> {
    let (r1, r2, r3) = ranks;
    let raw = Tensor3::from_vec(ranks, rng::standard_normal_vec(rng, r1 * r2 * r3));
    let s1 = linalg::singular_values(&tensor::unfold(&raw, 1)?)?[0];
    if s1 <= 0.0 {
        return Err(Error::Numerical("degenerate random core".into()));
    }
    let core = raw.scale(core_gain / s1);
    let leading = |rng: &mut R, dim: usize, r: usize| -> Result<Matrix> {
        let g = rng::standard_normal_matrix(rng, dim, dim);
        Ok(linalg::thin_svd(&g)?.u.leading_columns(r))
    };
    let u1 = leading(rng, n, r1)?;
    let u2 = leading(rng, n, r2)?;
    let u3 = leading(rng, p, r3)?;
    TuckerFactors::new(core, u1, u2, u3)
}

/// Random VAR weights with exact Tucker ranks, rescaled to companion spectral
/// radius 0.9. Deterministic in `seed`.
pub fn generate_low_tucker_weights(
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    core_gain: f64,
    seed: u64,
) -> Result<VarWeights> {
    check_ranks(n, p, ranks)?;
    if core_gain <= 0.0 {
        return Err(Error::InvalidArgument("core gain must be positive".into()));
    }
    let mut rng = rng::rng_from_seed(rng::derive_seed(seed, &[0]));
    let factors = draw_tucker_pieces(&mut rng, n, p, ranks, core_gain)?;
    let w = VarWeights::new(tensor::tucker_reconstruct(&factors)?)?;
    rescale_to_stationary(&w, 0.9)
}

/// Simulates `y_t = sum_k A_k y_{t-k} + e_t` from zero initial values,
/// discards `burn_in` points, and returns `t_effective + P` rows so that
/// `t_effective` design pairs exist.
pub fn simulate_var(
    w: &VarWeights,
    noise: &NoiseSpec,
    t_effective: usize,
    burn_in: usize,
) -> Result<Series> {
    if noise.dim() != w.n {
        return Err(Error::ShapeMismatch(format!(
            "noise dimension {} does not match N = {}",
            noise.dim(),
            w.n
        )));
    }
    if t_effective == 0 {
        return Err(Error::InvalidArgument("t_effective must be positive".into()));
    }
    if !is_stationary(w, 0.0) {
        return Err(Error::InvalidArgument(
            "weights are not stationary; simulation would diverge".into(),
        ));
    }
    let n = w.n;
    let p = w.p;
    let slices = w.lag_matrices();
    let total = burn_in + t_effective + p;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut rng = rng::rng_from_seed(noise.seed);
    let mut e = vec![0.0; n];
    for t in 0..total {
        noise.sample(&mut rng, &mut e);
        let mut y = e.clone();
        for (k, a) in slices.iter().enumerate() {
            if t < k + 1 {
                break; // zero initial values
            }
            let prev = &rows[t - k - 1];
            for i in 0..n {
                let row = a.row(i);
                let mut acc = 0.0;
                for (j, &aij) in row.iter().enumerate() {
                    acc += aij * prev[j];
                }
                y[i] += acc;
            }
        }
        rows.push(y);
    }
    let kept = &rows[burn_in..];
    let mut values = Matrix::zeros(kept.len(), n);
    for (i, r) in kept.iter().enumerate() {
        values.row_mut(i).copy_from_slice(r);
    }
    Ok(Series::with_default_names(values))
}

/// Low-rank recursion with an elementwise cosine nonlinearity on the encoder.
/// Each step projects the lag matrix to `E = U2^T X U3`, scales it by
/// `cos(1 / ||E||_F)` (zero passes through unchanged), decodes with
/// `U1 G_(1)` and adds unit Gaussian noise.
pub fn generate_nl_dgp(
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    t_effective: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Series> {
    nl_dgp_core(n, p, ranks, t_effective, burn_in, seed, true).map(|(s, _)| s)
}

/// Like [`generate_nl_dgp`] but also returns the linear skeleton weights
/// (the recursion obtained by dropping the cosine factor), for error
/// reporting against a known tensor.
pub fn generate_nl_dgp_with_truth(
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    t_effective: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(Series, VarWeights)> {
    nl_dgp_core(n, p, ranks, t_effective, burn_in, seed, true)
}

fn nl_dgp_core(
    n: usize,
    p: usize,
    ranks: (usize, usize, usize),
    t_effective: usize,
    burn_in: usize,
    seed: u64,
    nonlinear: bool,
) -> Result<(Series, VarWeights)> {
    check_ranks(n, p, ranks)?;
    if t_effective == 0 {
        return Err(Error::InvalidArgument("t_effective must be positive".into()));
    }
    // Parameters and noise come from independent derived streams.
    let mut param_rng = rng::rng_from_seed(rng::derive_seed(seed, &[0]));
    let mut noise_rng = rng::rng_from_seed(rng::derive_seed(seed, &[1]));

    let factors = draw_tucker_pieces(&mut param_rng, n, p, ranks, 0.9)?;
    let raw = VarWeights::new(tensor::tucker_reconstruct(&factors)?)?;
    // One scalar on the core makes the linear skeleton stationary; the cosine
    // factor only shrinks the map further (|cos| <= 1).
    let c = stationary_scale(&raw, 0.9)?;
    let core = factors.core.scale(c);
    let truth = raw.scale(c);

    let (r2, r3) = (ranks.1, ranks.2);
    // Decoder N x (r2 r3): U1 G_(1).
    let decoder = factors.u1.matmul(&tensor::unfold(&core, 1)?);
    let u2 = &factors.u2;
    let u3 = &factors.u3;

    let total = burn_in + t_effective + p;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut e = vec![0.0; n];
    let noise = NoiseSpec::identity(n, 0);
    let mut enc = vec![0.0; r2 * r3];
    let mut xu3 = Matrix::zeros(n, r3);
    for t in 0..total {
        noise.sample(&mut noise_rng, &mut e);
        let mut y = e.clone();
        if t >= 1 {
            // X has column k = y_{t-1-k} (zeros before the start); first
            // compute X U3, then U2^T (X U3), then vec column-major.
            xu3.fill(0.0);
            for k in 0..p.min(t) {
                let prev = &rows[t - 1 - k];
                for c3 in 0..r3 {
                    let w3 = u3.get(k, c3);
                    if w3 == 0.0 {
                        continue;
                    }
                    for i in 0..n {
                        let v = xu3.get(i, c3) + prev[i] * w3;
                        xu3.set(i, c3, v);
                    }
                }
            }
            for c3 in 0..r3 {
                for c2 in 0..r2 {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += u2.get(i, c2) * xu3.get(i, c3);
                    }
                    enc[c2 + r2 * c3] = acc;
                }
            }
            if nonlinear {
                let nf = enc.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nf > 0.0 {
                    let factor = (1.0 / nf).cos();
                    for v in enc.iter_mut() {
                        *v *= factor;
                    }
                }
            }
            for (i, yi) in y.iter_mut().enumerate() {
                let row = decoder.row(i);
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(&enc) {
                    acc += a * b;
                }
                *yi += acc;
            }
        }
        if let Some(bad) = y.iter().find(|v| v.abs() > DIVERGENCE_GUARD) {
            return Err(Error::Diverged(format!(
                "entry magnitude {bad:.3e} exceeded {DIVERGENCE_GUARD:.0e} at step {t}"
            )));
        }
        rows.push(y);
    }
    let kept = &rows[burn_in..];
    let mut values = Matrix::zeros(kept.len(), n);
    for (i, r) in kept.iter().enumerate() {
        values.row_mut(i).copy_from_slice(r);
    }
    Ok((Series::with_default_names(values), truth))
}
