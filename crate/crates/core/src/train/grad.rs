//! Analytic backpropagation: loss → similarity matrix → cosine → fusion head.

use serde::{Deserialize, Serialize};

use super::batch::{sim_from_parts, TrainingBatch};
use super::loss::{bce_loss_grad, infonce_loss_grad, LossWithGrad, SquareMatrix};
use crate::error::{Error, Result};
use crate::fusion::{fuse_grad, FusionParams};
use crate::scalar::{dot, norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Infonce,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Infonce => "infonce",
        })
    }
}

/// Objective settings needed by the forward and backward passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: LossKind,
    /// Diagonal weight for BCE; `None` means `max(B − 1, 1)`.
    pub pos_weight: Option<f64>,
    pub temperature: f64,
}

impl Objective {
    pub fn bce() -> Self {
        Self {
            kind: LossKind::Bce,
            pos_weight: None,
            temperature: 1.0,
        }
    }

    pub fn infonce(temperature: f64) -> Self {
        Self {
            kind: LossKind::Infonce,
            pos_weight: None,
            temperature,
        }
    }

    pub fn pos_weight_for(&self, batch: usize) -> f64 {
        self.pos_weight.unwrap_or_else(|| (batch.saturating_sub(1)).max(1) as f64)
    }

    fn apply<T: Scalar>(&self, s: &SquareMatrix<T>, params: &FusionParams<T>) -> Result<LossWithGrad<T>> {
        match self.kind {
            LossKind::Bce => bce_loss_grad(
                s,
                params.logit_scale(),
                params.logit_bias,
                T::of(self.pos_weight_for(s.n())),
            ),
            LossKind::Infonce => infonce_loss_grad(s, T::of(self.temperature)),
        }
    }

    /// Forward pass only.
    pub fn loss<T: Scalar>(&self, batch: &TrainingBatch<T>, params: &FusionParams<T>) -> Result<T> {
        let s = super::batch::similarity_matrix(batch, params)?;
        match self.kind {
            LossKind::Bce => super::loss::bce_loss(
                &s,
                params.logit_scale(),
                params.logit_bias,
                T::of(self.pos_weight_for(s.n())),
            ),
            LossKind::Infonce => super::loss::infonce_loss(&s, T::of(self.temperature)),
        }
    }
}

/// Loss and its gradient over the flat parameter layout of
/// [`FusionParams::to_flat`] (raw alpha, raw scale, bias, MLP weights).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

pub fn loss_grad<T: Scalar>(batch: &TrainingBatch<T>, params: &FusionParams<T>, objective: &Objective) -> Result<LossGrad<T>> {
    batch.validate()?;
    let docs = batch.fused(params)?;
    let s = sim_from_parts(&batch.query_vecs, &docs, &batch.doc_ids)?;
    let lg = objective.apply(&s, params)?;
    if !lg.loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }

    let n = batch.len();
    let d = docs[0].len();
    let qn: Vec<f64> = batch.query_vecs.iter().map(|q| norm(q)).collect();
    let mut grad = vec![T::zero(); params.num_params()];
    for j in 0..n {
        // d cos(q, x) / dx = q / (|q||x|) − cos · x / |x|²
        let doc = &docs[j];
        let dn = norm(doc);
        let mut upstream = vec![0f64; d];
        for i in 0..n {
            let g = lg.d_sim.get(i, j).as_f64();
            if g == 0.0 {
                continue;
            }
            let q = &batch.query_vecs[i];
            let cos = dot(q, doc) / (qn[i] * dn);
            for k in 0..d {
                upstream[k] += g * (q[k].as_f64() / (qn[i] * dn) - cos * doc[k].as_f64() / (dn * dn));
            }
        }
        let upstream: Vec<T> = upstream.into_iter().map(T::of).collect();
        let fg = fuse_grad(&batch.text_vecs[j], &batch.img_vecs[j], params, &upstream)?;
        for (a, b) in grad.iter_mut().zip(&fg.params) {
            *a += *b;
        }
    }
    // scale = exp(raw)
    grad[1] += lg.d_scale * params.logit_scale();
    grad[2] += lg.d_bias;
    Ok(LossGrad { loss: lg.loss, grad })
}
