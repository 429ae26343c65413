//! Trained-model persistence and the unified one-step predictor.
//!
//! Models are stored as a single JSON document: `format_version`, `kind`
//! (`ols`, `lr`, `ltr`, `tar`, `tar2`), dimensions, the centering means, a
//! map of named arrays (each with `dims` and row-major `data`), and a
//! training summary. A reloaded model reproduces predictions bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{FitReport, FittedFactors, ModelKind};
use crate::matrix::Matrix;
use crate::pipeline::Forecaster;
use crate::tar::{self, Activation, ConvOrder, HiddenBiases, Tar2Params, TarParams};
use crate::tensor::{self, Tensor3, TuckerFactors};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum ModelPayload {
    Ols { w: Matrix },
    Lr { a: Matrix, b: Matrix },
    Ltr { factors: TuckerFactors },
    Tar { params: TarParams },
    Tar2 { params: Tar2Params },
}

/// A trained model plus everything needed to forecast raw data: the
/// centering means are subtracted from inputs and added back to outputs.
#[derive(Debug, Clone)]
pub struct Model {
    n: usize,
    p: usize,
    means: Vec<f64>,
    payload: ModelPayload,
    training: TrainingMeta,
    /// Unfolded `N x NP` weight matrix for the linear kinds.
    w_cache: Option<Matrix>,
}

impl Model {
    pub fn new(
        n: usize,
        p: usize,
        means: Vec<f64>,
        payload: ModelPayload,
        training: TrainingMeta,
    ) -> Result<Self> {
        if means.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} centering means for N = {n}",
                means.len()
            )));
        }
        let w_cache = match &payload {
            ModelPayload::Ols { w } => {
                if w.shape() != (n, n * p) {
                    return Err(Error::ShapeMismatch(format!(
                        "weight matrix {:?} does not match ({n}, {})",
                        w.shape(),
                        n * p
                    )));
                }
                Some(w.clone())
            }
            ModelPayload::Lr { a, b } => {
                if a.rows() != n || a.cols() != b.rows() || b.cols() != n * p {
                    return Err(Error::ShapeMismatch("LR factor shapes are inconsistent".into()));
                }
                Some(a.matmul(b))
            }
            ModelPayload::Ltr { factors } => {
                if factors.outer_dims() != (n, n, p) {
                    return Err(Error::ShapeMismatch(
                        "Tucker factors do not reconstruct (N, N, P)".into(),
                    ));
                }
                Some(tensor::tucker_unfold1(factors)?)
            }
            ModelPayload::Tar { params } => {
                if params.n() != n || params.p() != p {
                    return Err(Error::ShapeMismatch("network dims do not match".into()));
                }
                None
            }
            ModelPayload::Tar2 { params } => {
                if params.n() != n || params.p() != p {
                    return Err(Error::ShapeMismatch("network dims do not match".into()));
                }
                None
            }
        };
        Ok(Model {
            n,
            p,
            means,
            payload,
            training,
            w_cache,
        })
    }

    /// Wraps a fit into a predictor, taking the centering means of the
    /// training design and the seed the fit was run with.
    pub fn from_fit(report: &FitReport, means: Vec<f64>, seed: u64) -> Result<Self> {
        let n = report.weights.n();
        let p = report.weights.p();
        let payload = match &report.factors {
            FittedFactors::Full => ModelPayload::Ols {
                w: report.weights.unfolded(),
            },
            FittedFactors::LowRank { a, b } => ModelPayload::Lr {
                a: a.clone(),
                b: b.clone(),
            },
            FittedFactors::Tucker(f) => ModelPayload::Ltr { factors: f.clone() },
            FittedFactors::Tar(t) => ModelPayload::Tar {
                params: (**t).clone(),
            },
            FittedFactors::Tar2(t) => ModelPayload::Tar2 {
                params: (**t).clone(),
            },
        };
        Model::new(
            n,
            p,
            means,
            payload,
            TrainingMeta {
                epochs: report.epochs_run,
                final_loss: report.final_loss,
                seed,
            },
        )
    }

    pub fn kind(&self) -> &'static str {
        match &self.payload {
            ModelPayload::Ols { .. } => "ols",
            ModelPayload::Lr { .. } => "lr",
            ModelPayload::Ltr { .. } => "ltr",
            ModelPayload::Tar { .. } => "tar",
            ModelPayload::Tar2 { .. } => "tar2",
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn training(&self) -> &TrainingMeta {
        &self.training
    }

    pub fn payload(&self) -> &ModelPayload {
        &self.payload
    }

    pub fn model_kind(&self) -> ModelKind {
        match &self.payload {
            ModelPayload::Ols { .. } => ModelKind::Ols,
            ModelPayload::Lr { a, .. } => ModelKind::Lr { r: a.cols() },
            ModelPayload::Ltr { factors } => ModelKind::Ltr {
                ranks: factors.ranks(),
            },
            ModelPayload::Tar { params } => ModelKind::Tar {
                ranks: params.ranks(),
                bias: params.bias.is_some(),
            },
            ModelPayload::Tar2 { params } => ModelKind::Tar2 {
                ranks: params.lane_a.ranks(),
                bias: params.bias.is_some(),
            },
        }
    }

    /// Weight-count of the architecture per the shared count formulas.
    pub fn parameter_count(&self) -> usize {
        crate::estimators::parameter_count(&self.model_kind(), self.n, self.p)
    }

    pub fn activation(&self) -> Option<Activation> {
        match &self.payload {
            ModelPayload::Tar { params } => Some(params.activation),
            ModelPayload::Tar2 { params } => Some(params.lane_a.activation),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Model::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }

    fn to_file(&self) -> ModelFile {
        let mut arrays = BTreeMap::new();
        let mut r = None;
        let mut ranks = None;
        let mut activation = None;
        let mut f1_activated = None;
        match &self.payload {
            ModelPayload::Ols { w } => {
                arrays.insert("w".to_string(), matrix_to_field(w));
            }
            ModelPayload::Lr { a, b } => {
                r = Some(a.cols());
                arrays.insert("a".to_string(), matrix_to_field(a));
                arrays.insert("b".to_string(), matrix_to_field(b));
            }
            ModelPayload::Ltr { factors } => {
                ranks = Some(ranks_array(factors.ranks()));
                arrays.insert("core".to_string(), tensor_to_field(&factors.core));
                arrays.insert("u1".to_string(), matrix_to_field(&factors.u1));
                arrays.insert("u2".to_string(), matrix_to_field(&factors.u2));
                arrays.insert("u3".to_string(), matrix_to_field(&factors.u3));
            }
            ModelPayload::Tar { params } => {
                ranks = Some(ranks_array(params.ranks()));
                activation = Some(params.activation.name().to_string());
                f1_activated = Some(params.activate_f1);
                lane_arrays(&mut arrays, "", params);
                if let Some(b) = &params.bias {
                    arrays.insert("bias".to_string(), vec_to_field(b));
                }
            }
            ModelPayload::Tar2 { params } => {
                ranks = Some(ranks_array(params.lane_a.ranks()));
                activation = Some(params.lane_a.activation.name().to_string());
                f1_activated = Some(params.lane_a.activate_f1);
                lane_arrays(&mut arrays, "a_", &params.lane_a);
                lane_arrays(&mut arrays, "b_", &params.lane_b);
                if let Some(b) = &params.bias {
                    arrays.insert("bias".to_string(), vec_to_field(b));
                }
            }
        }
        ModelFile {
            format_version: FORMAT_VERSION,
            kind: self.kind().to_string(),
            n: self.n,
            p: self.p,
            r,
            ranks,
            activation,
            f1_activated,
            centered_means: self.means.clone(),
            arrays,
            training: self.training,
        }
    }

    fn from_file(file: ModelFile) -> Result<Self> {
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let n = file.n;
        let p = file.p;
        if n == 0 || p == 0 {
            return Err(Error::Schema("dimensions must be positive".into()));
        }
        let get = |name: &str| -> Result<&ArrayField> {
            file.arrays
                .get(name)
                .ok_or_else(|| Error::Schema(format!("missing array {name:?}")))
        };
        let payload = match file.kind.as_str() {
            "ols" => ModelPayload::Ols {
                w: field_to_matrix(get("w")?, "w")?,
            },
            "lr" => ModelPayload::Lr {
                a: field_to_matrix(get("a")?, "a")?,
                b: field_to_matrix(get("b")?, "b")?,
            },
            "ltr" => {
                let core = field_to_tensor(get("core")?, "core")?;
                ModelPayload::Ltr {
                    factors: TuckerFactors::new(
                        core,
                        field_to_matrix(get("u1")?, "u1")?,
                        field_to_matrix(get("u2")?, "u2")?,
                        field_to_matrix(get("u3")?, "u3")?,
                    )?,
                }
            }
            "tar" => ModelPayload::Tar {
                params: lane_from_arrays(&file, "", ConvOrder::ColumnThenRow, true)?,
            },
            "tar2" => {
                let lane_a = lane_from_arrays(&file, "a_", ConvOrder::ColumnThenRow, false)?;
                let lane_b = lane_from_arrays(&file, "b_", ConvOrder::RowThenColumn, false)?;
                let bias = match file.arrays.get("bias") {
                    Some(f) => Some(field_to_vec(f, "bias")?),
                    None => None,
                };
                ModelPayload::Tar2 {
                    params: Tar2Params::new(lane_a, lane_b, bias)?,
                }
            }
            other => {
                return Err(Error::Schema(format!("unknown model kind {other:?}")));
            }
        };
        Model::new(n, p, file.centered_means, payload, file.training)
    }
}

impl Forecaster for Model {
    fn n_vars(&self) -> usize {
        self.n
    }

    fn lag_order(&self) -> usize {
        self.p
    }

    fn predict(&self, lags: &Matrix) -> Result<Vec<f64>> {
        if lags.shape() != (self.n, self.p) {
            return Err(Error::ShapeMismatch(format!(
                "lag matrix is {:?}, model expects ({}, {})",
                lags.shape(),
                self.n,
                self.p
            )));
        }
        // Center the inputs per variable.
        let centered = Matrix::from_fn(self.n, self.p, |i, k| lags.get(i, k) - self.means[i]);
        let mut out = match (&self.w_cache, &self.payload) {
            (Some(w), _) => {
                // vec(X) column-major equals the stacked lag vector.
                let mut x = Vec::with_capacity(self.n * self.p);
                for k in 0..self.p {
                    for i in 0..self.n {
                        x.push(centered.get(i, k));
                    }
                }
                w.mul_vec(&x)
            }
            (None, ModelPayload::Tar { params }) => tar::tar_forward(params, &centered)?,
            (None, ModelPayload::Tar2 { params }) => tar::tar2_forward(params, &centered)?,
            _ => unreachable!("linear payloads always carry a cache"),
        };
        for (o, m) in out.iter_mut().zip(&self.means) {
            *o += m;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ArrayField {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    n: usize,
    p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranks: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f1_activated: Option<bool>,
    centered_means: Vec<f64>,
    arrays: BTreeMap<String, ArrayField>,
    training: TrainingMeta,
}

fn ranks_array(r: (usize, usize, usize)) -> [usize; 3] {
    [r.0, r.1, r.2]
}

fn matrix_to_field(m: &Matrix) -> ArrayField {
    ArrayField {
        dims: vec![m.rows(), m.cols()],
        data: m.data().to_vec(),
    }
}

fn vec_to_field(v: &[f64]) -> ArrayField {
    ArrayField {
        dims: vec![v.len()],
        data: v.to_vec(),
    }
}

/// Tensors are serialized row-major (last index fastest).
fn tensor_to_field(t: &Tensor3) -> ArrayField {
    let (d1, d2, d3) = t.dims();
    let mut data = Vec::with_capacity(d1 * d2 * d3);
    for i1 in 0..d1 {
        for i2 in 0..d2 {
            for i3 in 0..d3 {
                data.push(t.get(i1, i2, i3));
            }
        }
    }
    ArrayField {
        dims: vec![d1, d2, d3],
        data,
    }
}

fn field_to_matrix(f: &ArrayField, name: &str) -> Result<Matrix> {
    if f.dims.len() != 2 {
        return Err(Error::Schema(format!(
            "array {name:?} must have 2 dims, got {:?}",
            f.dims
        )));
    }
    Matrix::new(f.dims[0], f.dims[1], f.data.clone())
        .map_err(|e| Error::Schema(format!("array {name:?}: {e}")))
}

fn field_to_vec(f: &ArrayField, name: &str) -> Result<Vec<f64>> {
    if f.dims.len() != 1 || f.dims[0] != f.data.len() {
        return Err(Error::Schema(format!("array {name:?} must be a vector")));
    }
    if f.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("array {name:?} has non-finite entries")));
    }
    Ok(f.data.clone())
}

fn field_to_tensor(f: &ArrayField, name: &str) -> Result<Tensor3> {
    if f.dims.len() != 3 {
        return Err(Error::Schema(format!(
            "array {name:?} must have 3 dims, got {:?}",
            f.dims
        )));
    }
    let (d1, d2, d3) = (f.dims[0], f.dims[1], f.dims[2]);
    if d1 * d2 * d3 != f.data.len() {
        return Err(Error::Schema(format!("array {name:?} length mismatch")));
    }
    let mut t = Tensor3::zeros((d1, d2, d3));
    let mut idx = 0;
    for i1 in 0..d1 {
        for i2 in 0..d2 {
            for i3 in 0..d3 {
                let v = f.data[idx];
                if !v.is_finite() {
                    return Err(Error::Schema(format!("array {name:?} has non-finite entries")));
                }
                t.set(i1, i2, i3, v);
                idx += 1;
            }
        }
    }
    Ok(t)
}

fn lane_arrays(arrays: &mut BTreeMap<String, ArrayField>, prefix: &str, p: &TarParams) {
    arrays.insert(format!("{prefix}u1"), matrix_to_field(&p.u1));
    arrays.insert(format!("{prefix}u2"), matrix_to_field(&p.u2));
    arrays.insert(format!("{prefix}u3"), matrix_to_field(&p.u3));
    arrays.insert(format!("{prefix}g1"), matrix_to_field(&p.g1));
    if let Some(h) = &p.hidden_biases {
        arrays.insert(format!("{prefix}hb1"), vec_to_field(&h.b1));
        arrays.insert(format!("{prefix}hb2"), matrix_to_field(&h.b2));
        arrays.insert(format!("{prefix}hb3"), vec_to_field(&h.b3));
    }
}

fn lane_from_arrays(
    file: &ModelFile,
    prefix: &str,
    order: ConvOrder,
    with_shared_bias: bool,
) -> Result<TarParams> {
    let get = |name: String| -> Result<&ArrayField> {
        file.arrays
            .get(&name)
            .ok_or_else(|| Error::Schema(format!("missing array {name:?}")))
    };
    let activation = Activation::from_name(
        file.activation
            .as_deref()
            .ok_or_else(|| Error::Schema("missing activation".into()))?,
    )?;
    let bias = if with_shared_bias {
        match file.arrays.get("bias") {
            Some(f) => Some(field_to_vec(f, "bias")?),
            None => None,
        }
    } else {
        None
    };
    let mut params = TarParams::new(
        field_to_matrix(get(format!("{prefix}u1"))?, "u1")?,
        field_to_matrix(get(format!("{prefix}u2"))?, "u2")?,
        field_to_matrix(get(format!("{prefix}u3"))?, "u3")?,
        field_to_matrix(get(format!("{prefix}g1"))?, "g1")?,
        bias,
        activation,
        order,
    )?;
    params.activate_f1 = file.f1_activated.unwrap_or(true);
    if activation != Activation::Identity {
        if let (Some(b1), Some(b2), Some(b3)) = (
            file.arrays.get(&format!("{prefix}hb1")),
            file.arrays.get(&format!("{prefix}hb2")),
            file.arrays.get(&format!("{prefix}hb3")),
        ) {
            let hidden = HiddenBiases {
                b1: field_to_vec(b1, "hb1")?,
                b2: field_to_matrix(b2, "hb2")?,
                b3: field_to_vec(b3, "hb3")?,
            };
            let zeros = params.hidden_biases.as_ref().expect("nonlinear lane");
            if hidden.b1.len() != zeros.b1.len()
                || hidden.b2.shape() != zeros.b2.shape()
                || hidden.b3.len() != zeros.b3.len()
            {
                return Err(Error::Schema("hidden bias shapes are inconsistent".into()));
            }
            params.hidden_biases = Some(hidden);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{build_design, fit_lr, fit_ltr, fit_ols, TrainConfig};
    use crate::rng;
    use crate::tar::{train_tar, TarArch};
    use crate::var::{generate_low_tucker_weights, rescale_to_stationary, simulate_var, NoiseSpec};

    fn test_design() -> (crate::pipeline::Series, crate::estimators::DesignPair) {
        let w = generate_low_tucker_weights(3, 2, (2, 2, 1), 0.9, 5).unwrap();
        let w = rescale_to_stationary(&w, 0.6).unwrap();
        let s = simulate_var(&w, &NoiseSpec::identity(3, 6), 60, 200).unwrap();
        let d = build_design(&s, 2, true).unwrap();
        (s, d)
    }

    fn roundtrip_and_compare(model: &Model) {
        let mut rng = rng::rng_from_seed(99);
        let lags = rng::standard_normal_matrix(&mut rng, model.n(), model.p());
        let before = model.predict(&lags).unwrap();
        let json = model.to_json().unwrap();
        let loaded = Model::from_json(&json).unwrap();
        let after = loaded.predict(&lags).unwrap();
        assert_eq!(before, after, "round-trip must be bit-exact");
        // Second serialization is byte-identical.
        assert_eq!(json, loaded.to_json().unwrap());
    }

    #[test]
    fn roundtrip_every_kind() {
        let (_, d) = test_design();
        let cfg = TrainConfig {
            max_epochs: 60,
            ..TrainConfig::default()
        };
        let fits = vec![
            fit_ols(&d).unwrap(),
            fit_lr(&d, 2, &cfg).unwrap(),
            fit_ltr(&d, (2, 2, 1), &cfg).unwrap(),
            train_tar(&d, TarArch::Ltar, (2, 2, 1), &cfg, true).unwrap(),
            train_tar(&d, TarArch::Tar(crate::tar::Activation::Relu), (2, 2, 1), &cfg, true)
                .unwrap(),
            train_tar(&d, TarArch::Tar(crate::tar::Activation::Sigmoid), (2, 2, 1), &cfg, false)
                .unwrap(),
            train_tar(&d, TarArch::Tar2(crate::tar::Activation::Relu), (2, 2, 1), &cfg, true)
                .unwrap(),
        ];
        for fit in &fits {
            let model = Model::from_fit(fit, d.means().to_vec(), cfg.seed).unwrap();
            roundtrip_and_compare(&model);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let (_, d) = test_design();
        let fit = fit_ols(&d).unwrap();
        let model = Model::from_fit(&fit, d.means().to_vec(), 0).unwrap();
        let json = model.to_json().unwrap();

        let with_version = json.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(Model::from_json(&with_version).is_err());

        let missing = json.replace("\"w\"", "\"weights\"");
        assert!(Model::from_json(&missing).is_err());

        assert!(Model::from_json("{").is_err());
        assert!(Model::from_json("{}").is_err());
    }

    #[test]
    fn centered_prediction_restores_means() {
        // A zero-weight model predicts the training means exactly.
        let n = 2;
        let p = 1;
        let model = Model::new(
            n,
            p,
            vec![3.0, -1.5],
            ModelPayload::Ols {
                w: Matrix::zeros(n, n * p),
            },
            TrainingMeta {
                epochs: 0,
                final_loss: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let lags = Matrix::from_vec(2, 1, vec![10.0, 20.0]);
        let pred = model.predict(&lags).unwrap();
        assert_eq!(pred, vec![3.0, -1.5]);
    }
}
