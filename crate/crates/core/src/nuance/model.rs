use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::store::{DemoStore, NuanceTarget};
use crate::features::FeatureVector;
use crate::{Error, Result};

/// Ridge penalty used when an unpenalised fit is rank deficient.
pub const FALLBACK_LAMBDA: f64 = 1e-3;

/// Output dimension: tension, abruptness, relaxation.
const OUTPUTS: usize = 3;

/// Linear nuance regression in standardised feature space.
///
/// `predict(x) = weights · ((x - feature_means) / feature_scales) + intercept`,
/// clipped to [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuanceModel {
    /// `OUTPUTS` rows of `feature_dim` standardised weights.
    pub weights: Vec<Vec<f64>>,
    pub intercept: [f64; OUTPUTS],
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub trained_on: Vec<String>,
    pub ridge_lambda: f64,
    pub rows: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub clipped: NuanceTarget,
    pub raw: [f64; OUTPUTS],
}

impl NuanceModel {
    pub fn feature_dim(&self) -> usize {
        self.feature_means.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<Prediction> {
        if row.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: row.len(),
            });
        }
        let mut raw = self.intercept;
        for (out, w) in raw.iter_mut().zip(&self.weights) {
            for ((x, m), (s, wk)) in row
                .iter()
                .zip(&self.feature_means)
                .zip(self.feature_scales.iter().zip(w))
            {
                *out += wk * (x - m) / s;
            }
        }
        let clipped = raw.map(|v| v.clamp(0.0, 1.0));
        if clipped != raw {
            log::debug!("nuance prediction {raw:?} clipped to {clipped:?}");
        }
        Ok(Prediction {
            clipped: NuanceTarget::from_array(clipped),
            raw,
        })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<NuanceTarget> {
        Ok(self.predict_row(&fv.to_row())?.clipped)
    }

    /// Weights and intercept in the original (unstandardised) feature units.
    pub fn coefficients(&self) -> (Vec<Vec<f64>>, [f64; OUTPUTS]) {
        let mut intercept = self.intercept;
        let weights = self
            .weights
            .iter()
            .zip(intercept.iter_mut())
            .map(|(w, b)| {
                w.iter()
                    .zip(self.feature_scales.iter().zip(&self.feature_means))
                    .map(|(wk, (s, m))| {
                        let raw = wk / s;
                        *b -= raw * m;
                        raw
                    })
                    .collect()
            })
            .collect();
        (weights, intercept)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("nuance model", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: NuanceModel =
            serde_json::from_str(text).map_err(|e| Error::json("nuance model", e))?;
        let d = model.feature_dim();
        if model.feature_scales.len() != d
            || model.weights.len() != OUTPUTS
            || model.weights.iter().any(|w| w.len() != d)
            || model.feature_scales.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::InvalidArgument(
                "nuance model dimensions are inconsistent".into(),
            ));
        }
        Ok(model)
    }
}

/// Fit the regression to explicit rows and labels.
pub fn fit(
    rows: &[Vec<f64>],
    labels: &[[f64; OUTPUTS]],
    ridge_lambda: f64,
    trained_on: Vec<String>,
) -> Result<NuanceModel> {
    let n = rows.len();
    if n == 0 || labels.len() != n {
        return Err(Error::InvalidArgument(
            "training needs at least one row and one label per row".into(),
        ));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be non-negative, got {ridge_lambda}"
        )));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }

    let nf = n as f64;
    let means: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / nf)
        .collect();
    let stds: Vec<f64> = (0..d)
        .map(|k| (rows.iter().map(|r| (r[k] - means[k]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    // constant columns carry no information; they keep scale 1 and weight 0
    let active: Vec<usize> = (0..d)
        .filter(|&k| stds[k] > 1e-12 * (1.0 + means[k].abs()))
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateFeatures);
    }
    let scales: Vec<f64> = (0..d)
        .map(|k| if active.contains(&k) { stds[k] } else { 1.0 })
        .collect();

    let z = DMatrix::from_fn(n, active.len(), |i, j| {
        let k = active[j];
        (rows[i][k] - means[k]) / scales[k]
    });
    let label_means: [f64; OUTPUTS] =
        std::array::from_fn(|o| labels.iter().map(|l| l[o]).sum::<f64>() / nf);
    let y = DMatrix::from_fn(n, OUTPUTS, |i, o| labels[i][o] - label_means[o]);

    let gram = z.transpose() * &z;
    let rhs = z.transpose() * &y;
    let mut lambda = ridge_lambda;
    if lambda == 0.0 && (n <= active.len() || !well_conditioned(&gram)) {
        log::warn!(
            "rank-deficient training set ({n} rows, {} informative features); using ridge lambda {FALLBACK_LAMBDA}",
            active.len()
        );
        lambda = FALLBACK_LAMBDA;
    }
    let system = &gram + DMatrix::identity(active.len(), active.len()) * lambda;
    let solution = system
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::DegenerateFeatures)?;

    let mut weights = vec![vec![0.0; d]; OUTPUTS];
    for (j, &k) in active.iter().enumerate() {
        for (o, w) in weights.iter_mut().enumerate() {
            w[k] = solution[(j, o)];
        }
    }
    Ok(NuanceModel {
        weights,
        intercept: label_means,
        feature_means: means,
        feature_scales: scales,
        trained_on,
        ridge_lambda: lambda,
        rows: n,
    })
}

fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    max > 0.0 && min > 1e-10 * max
}

/// Train on every demonstration in the store; each row inherits its
/// demonstration's label.
pub fn train(store: &DemoStore, ridge_lambda: f64) -> Result<NuanceModel> {
    if store.is_empty() {
        return Err(Error::InvalidArgument(
            "no demonstrations recorded; add at least one before training".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for demo in store.list() {
        for fv in &demo.feature_rows {
            rows.push(fv.to_row());
            labels.push(demo.label.as_array());
        }
    }
    let ids = store.list().iter().map(|d| d.id.clone()).collect();
    fit(&rows, &labels, ridge_lambda, ids)
}
