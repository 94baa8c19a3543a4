//! Late fusion of a text vector and a pooled image vector into one document
//! vector, with exact gradients for training.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::Cursor;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    WeightedSum,
    Mlp,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::WeightedSum => "weighted_sum",
            FusionMode::Mlp => "mlp",
        })
    }
}

/// One-hidden-layer relu head: `w2 · relu(w1 · [text; img] + b1) + b2`.
/// Matrices are row-major; `w1` is `hidden × 2·dim`, `w2` is `dim × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T> {
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> MlpHead<T> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            w1: vec![T::zero(); hidden * 2 * dim],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); dim * hidden],
            b2: vec![T::zero(); dim],
        }
    }

    /// Symmetric uniform fan-in init, zero biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim, hidden);
        let a1 = 1.0 / ((2 * dim) as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        head.w1.iter_mut().for_each(|w| *w = T::of(rng.gen_range(-a1..a1)));
        head.w2.iter_mut().for_each(|w| *w = T::of(rng.gen_range(-a2..a2)));
        head
    }

    fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden * 2 * self.dim
            && self.b1.len() == self.hidden
            && self.w2.len() == self.dim * self.hidden
            && self.b2.len() == self.dim;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "mlp shapes inconsistent with dim {} hidden {}",
                self.dim, self.hidden
            )));
        }
        Ok(())
    }

    /// Pre-activations `w1 · x + b1` for `x = [text; img]`.
    fn pre(&self, text: &[T], img: &[T]) -> Vec<T> {
        let d2 = 2 * self.dim;
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * d2..(j + 1) * d2];
                let mut z = self.b1[j];
                for (w, x) in row.iter().zip(text.iter().chain(img)) {
                    z += *w * *x;
                }
                z
            })
            .collect()
    }
}

/// Learnable parameters of the document representation head.
///
/// `alpha = sigmoid(alpha_raw)` and `logit_scale = exp(logit_scale_raw)` keep
/// the constrained quantities in range. The logit scale and bias are consumed
/// by the BCE objective, not by [`fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub mode: FusionMode,
    pub alpha_raw: T,
    pub logit_scale_raw: T,
    pub logit_bias: T,
    pub mlp: Option<MlpHead<T>>,
}

pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;
pub const DEFAULT_LOGIT_BIAS: f64 = -5.0;

/// Number of scalar parameters ahead of the MLP weights in the flat layout.
pub const SCALAR_PARAMS: usize = 3;

impl<T: Scalar> FusionParams<T> {
    /// Weighted sum at alpha = 0.5 with the default logit scale and bias.
    pub fn weighted_sum() -> Self {
        Self {
            mode: FusionMode::WeightedSum,
            alpha_raw: T::zero(),
            logit_scale_raw: T::of(DEFAULT_LOGIT_SCALE.ln()),
            logit_bias: T::of(DEFAULT_LOGIT_BIAS),
            mlp: None,
        }
    }

    pub fn mlp(head: MlpHead<T>) -> Self {
        Self {
            mode: FusionMode::Mlp,
            mlp: Some(head),
            ..Self::weighted_sum()
        }
    }

    /// Sets alpha directly; 0 and 1 map to infinite raw values, which the
    /// sigmoid sends back exactly.
    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha_raw = (alpha / (T::one() - alpha)).ln();
        self
    }

    /// Freezes the logit transform at scale 1, bias 0.
    pub fn with_identity_logits(mut self) -> Self {
        self.logit_scale_raw = T::zero();
        self.logit_bias = T::zero();
        self
    }

    pub fn alpha(&self) -> T {
        sigmoid(self.alpha_raw)
    }

    pub fn logit_scale(&self) -> T {
        self.logit_scale_raw.exp()
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.mlp) {
            (FusionMode::WeightedSum, _) => Ok(()),
            (FusionMode::Mlp, Some(h)) => h.check(),
            (FusionMode::Mlp, None) => Err(Error::InvalidArgument("mlp mode without mlp weights".into())),
        }
    }

    pub fn num_params(&self) -> usize {
        SCALAR_PARAMS + self.mlp.as_ref().map_or(0, MlpHead::len)
    }

    /// Flat layout: `[alpha_raw, logit_scale_raw, logit_bias, w1, b1, w2, b2]`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = vec![self.alpha_raw, self.logit_scale_raw, self.logit_bias];
        if let Some(h) = &self.mlp {
            for part in [&h.w1, &h.b1, &h.w2, &h.b2] {
                v.extend_from_slice(part);
            }
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        self.alpha_raw = flat[0];
        self.logit_scale_raw = flat[1];
        self.logit_bias = flat[2];
        if let Some(h) = &mut self.mlp {
            let mut rest = &flat[SCALAR_PARAMS..];
            for part in [&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2] {
                let (head, tail) = rest.split_at(part.len());
                part.copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(())
    }

    /// True for entries of the flat layout that receive weight decay (the MLP
    /// weight matrices only).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut m = vec![false; SCALAR_PARAMS];
        if let Some(h) = &self.mlp {
            m.extend(std::iter::repeat(true).take(h.w1.len()));
            m.extend(std::iter::repeat(false).take(h.b1.len()));
            m.extend(std::iter::repeat(true).take(h.w2.len()));
            m.extend(std::iter::repeat(false).take(h.b2.len()));
        }
        m
    }

    pub fn cast<U: Scalar>(&self) -> FusionParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        FusionParams {
            mode: self.mode,
            alpha_raw: U::of(self.alpha_raw.as_f64()),
            logit_scale_raw: U::of(self.logit_scale_raw.as_f64()),
            logit_bias: U::of(self.logit_bias.as_f64()),
            mlp: self.mlp.as_ref().map(|h| MlpHead {
                dim: h.dim,
                hidden: h.hidden,
                w1: c(&h.w1),
                b1: c(&h.b1),
                w2: c(&h.w2),
                b2: c(&h.b2),
            }),
        }
    }
}

fn check_inputs<T>(text: &[T], img: &[T], params: &FusionParams<T>) -> Result<()> {
    if text.len() != img.len() {
        return Err(Error::DimMismatch {
            expected: text.len(),
            got: img.len(),
        });
    }
    match (&params.mode, &params.mlp) {
        (FusionMode::Mlp, Some(h)) if h.dim != text.len() => Err(Error::DimMismatch {
            expected: h.dim,
            got: text.len(),
        }),
        (FusionMode::Mlp, None) => Err(Error::InvalidArgument("mlp mode without mlp weights".into())),
        _ => Ok(()),
    }
}

/// Fused document vector.
pub fn fuse<T: Scalar>(text: &[T], img: &[T], params: &FusionParams<T>) -> Result<Vec<T>> {
    check_inputs(text, img, params)?;
    match params.mode {
        FusionMode::WeightedSum => {
            let a = params.alpha();
            let b = T::one() - a;
            Ok(text.iter().zip(img).map(|(t, i)| a * *t + b * *i).collect())
        }
        FusionMode::Mlp => {
            let h = params.mlp.as_ref().expect("checked");
            let act: Vec<T> = h.pre(text, img).into_iter().map(|z| z.max(T::zero())).collect();
            Ok((0..h.dim)
                .map(|i| {
                    let row = &h.w2[i * h.hidden..(i + 1) * h.hidden];
                    h.b2[i] + row.iter().zip(&act).map(|(w, a)| *w * *a).sum::<T>()
                })
                .collect())
        }
    }
}

/// Gradients of `<upstream, fuse(text, img, params)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrad<T> {
    /// Derivative with respect to alpha itself (weighted sum only).
    pub alpha: T,
    /// Gradient over the flat parameter layout of [`FusionParams::to_flat`].
    pub params: Vec<T>,
    pub text: Vec<T>,
    pub img: Vec<T>,
}

pub fn fuse_grad<T: Scalar>(
    text: &[T],
    img: &[T],
    params: &FusionParams<T>,
    upstream: &[T],
) -> Result<FusionGrad<T>> {
    check_inputs(text, img, params)?;
    if upstream.len() != text.len() {
        return Err(Error::DimMismatch {
            expected: text.len(),
            got: upstream.len(),
        });
    }
    let mut grad = vec![T::zero(); params.num_params()];
    match params.mode {
        FusionMode::WeightedSum => {
            let a = params.alpha();
            let d_alpha: T = upstream.iter().zip(text.iter().zip(img)).map(|(u, (t, i))| *u * (*t - *i)).sum();
            grad[0] = d_alpha * a * (T::one() - a);
            Ok(FusionGrad {
                alpha: d_alpha,
                params: grad,
                text: upstream.iter().map(|u| a * *u).collect(),
                img: upstream.iter().map(|u| (T::one() - a) * *u).collect(),
            })
        }
        FusionMode::Mlp => {
            let h = params.mlp.as_ref().expect("checked");
            let (d, hid) = (h.dim, h.hidden);
            let d2 = 2 * d;
            let z = h.pre(text, img);
            let act: Vec<T> = z.iter().map(|z| z.max(T::zero())).collect();
            // offsets into the flat layout
            let o_w1 = SCALAR_PARAMS;
            let o_b1 = o_w1 + h.w1.len();
            let o_w2 = o_b1 + h.b1.len();
            let o_b2 = o_w2 + h.w2.len();
            let mut d_act = vec![T::zero(); hid];
            for i in 0..d {
                let u = upstream[i];
                grad[o_b2 + i] = u;
                for j in 0..hid {
                    grad[o_w2 + i * hid + j] = u * act[j];
                    d_act[j] += h.w2[i * hid + j] * u;
                }
            }
            let mut dx = vec![T::zero(); d2];
            for j in 0..hid {
                let dz = if z[j] > T::zero() { d_act[j] } else { T::zero() };
                grad[o_b1 + j] = dz;
                if dz == T::zero() {
                    continue;
                }
                for (k, x) in text.iter().chain(img).enumerate() {
                    grad[o_w1 + j * d2 + k] = dz * *x;
                    dx[k] += h.w1[j * d2 + k] * dz;
                }
            }
            let img_grad = dx.split_off(d);
            Ok(FusionGrad {
                alpha: T::zero(),
                params: grad,
                text: dx,
                img: img_grad,
            })
        }
    }
}

/// Cosine similarity, computed in 64-bit.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (crate::scalar::norm(a), crate::scalar::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    let c = crate::scalar::dot(a, b) / (na * nb);
    Ok(T::of(c.clamp(-1.0, 1.0)))
}

// ---------------------------------------------------------------------------
// checkpoint: "DFUS" | version u8 | header_len u32 | JSON header | f64 payload

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFUS";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    mode: FusionMode,
    dim: Option<usize>,
    hidden: Option<usize>,
    alpha_raw: f64,
    logit_scale_raw: f64,
    logit_bias: f64,
    dtype: String,
    payload_len: usize,
}

pub fn write_checkpoint_to<T: Scalar, W: Write>(params: &FusionParams<T>, mut w: W) -> Result<()> {
    params.validate()?;
    let payload: Vec<f64> = params.to_flat()[SCALAR_PARAMS..].iter().map(|x| x.as_f64()).collect();
    let header = CheckpointHeader {
        mode: params.mode,
        dim: params.mlp.as_ref().map(|h| h.dim),
        hidden: params.mlp.as_ref().map(|h| h.hidden),
        alpha_raw: params.alpha_raw.as_f64(),
        logit_scale_raw: params.logit_scale_raw.as_f64(),
        logit_bias: params.logit_bias.as_f64(),
        dtype: "f64".into(),
        payload_len: payload.len(),
    };
    let header = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for x in payload {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_from_bytes<T: Scalar>(buf: &[u8]) -> Result<FusionParams<T>> {
    let mut c = Cursor::new(buf);
    c.magic(CHECKPOINT_MAGIC)?;
    let version = c.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let n = c.u32("header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(c.take(n, "header")?)?;
    if header.dtype != "f64" {
        return Err(Error::InvalidArgument(format!("unsupported dtype {}", header.dtype)));
    }
    let bytes = c.take(header.payload_len.checked_mul(8).unwrap_or(usize::MAX), "payload")?;
    c.finish()?;
    let payload: Vec<T> = bytes
        .chunks_exact(8)
        .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let mut params = match header.mode {
        FusionMode::WeightedSum => FusionParams::weighted_sum(),
        FusionMode::Mlp => {
            let (Some(d), Some(h)) = (header.dim, header.hidden) else {
                return Err(Error::InvalidArgument("mlp checkpoint without dim/hidden".into()));
            };
            FusionParams::mlp(MlpHead::zeros(d, h))
        }
    };
    let mut flat = vec![T::of(header.alpha_raw), T::of(header.logit_scale_raw), T::of(header.logit_bias)];
    flat.extend(payload);
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn write_checkpoint<T: Scalar>(params: &FusionParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint_to(params, std::io::BufWriter::new(f))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<FusionParams<T>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    read_checkpoint_from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_sum_examples() {
        let (t, i) = ([1.0f64, 0.0], [0.0f64, 1.0]);
        let p = |a: f64| FusionParams::weighted_sum().with_alpha(a);
        assert_eq!(fuse(&t, &i, &p(1.0)).unwrap(), vec![1.0, 0.0]);
        assert_eq!(fuse(&t, &i, &p(0.0)).unwrap(), vec![0.0, 1.0]);
        assert_eq!(fuse(&t, &i, &p(0.5)).unwrap(), vec![0.5, 0.5]);
        assert_eq!(FusionParams::<f64>::weighted_sum().alpha(), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let p = FusionParams::<f32>::weighted_sum();
        assert!(fuse(&[1.0, 2.0], &[1.0], &p).is_err());
        let m = FusionParams::mlp(MlpHead::<f32>::zeros(3, 3));
        assert!(fuse(&[1.0, 2.0], &[1.0, 0.0], &m).is_err());
    }

    #[test]
    fn alpha_gradient_closed_form() {
        let (t, i, u) = ([0.2f64, -0.4, 0.9], [0.5f64, 0.1, -0.3], [1.0f64, 2.0, -0.5]);
        let p = FusionParams::weighted_sum().with_alpha(0.3);
        let g = fuse_grad(&t, &i, &p, &u).unwrap();
        let expect: f64 = (0..3).map(|k| u[k] * (t[k] - i[k])).sum();
        assert!((g.alpha - expect).abs() < 1e-15);
        assert!((g.params[0] - expect * 0.3 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FusionParams::mlp(MlpHead::<f64>::init(4, 4, &mut rng));
        let t = [0.1, 0.2, 0.3, 0.4];
        let g = fuse_grad(&t, &t, &p, &[0.0; 4]).unwrap();
        assert!(g.params.iter().chain(&g.text).chain(&g.img).all(|x| *x == 0.0));
    }

    #[test]
    fn zero_mlp_returns_bias() {
        let mut h = MlpHead::<f64>::zeros(3, 3);
        h.b2 = vec![0.5, -1.0, 2.0];
        let p = FusionParams::mlp(h);
        assert_eq!(fuse(&[9.0, 8.0, 7.0], &[1.0, 2.0, 3.0], &p).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.3f64, 0.7], &[0.3, 0.7]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[3.0f32, 4.0], &[6.0, 8.0]).unwrap() - 1.0).abs() < 1e-7);
        assert!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn flat_round_trip_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = FusionParams::mlp(MlpHead::<f64>::init(2, 3, &mut rng));
        let mut q = FusionParams::mlp(MlpHead::zeros(2, 3));
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let mask = p.decay_mask();
        assert_eq!(mask.len(), p.num_params());
        assert_eq!(mask.iter().filter(|m| **m).count(), 3 * 4 + 2 * 3);
        assert!(!mask[0] && !mask[1] && !mask[2]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = FusionParams::mlp(MlpHead::<f64>::init(3, 5, &mut rng));
        p.alpha_raw = 0.123456789;
        let mut buf = Vec::new();
        write_checkpoint_to(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DFUS");
        let q: FusionParams<f64> = read_checkpoint_from_bytes(&buf).unwrap();
        assert_eq!(p, q);
        let ws = FusionParams::<f64>::weighted_sum().with_alpha(0.8);
        let mut buf = Vec::new();
        write_checkpoint_to(&ws, &mut buf).unwrap();
        assert_eq!(read_checkpoint_from_bytes::<f64>(&buf).unwrap(), ws);
        assert!(read_checkpoint_from_bytes::<f64>(&buf[..buf.len() - 1]).is_err());
    }
}
