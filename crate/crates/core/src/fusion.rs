//! Image-caption fusion: Top-K anchoring, the adaptive caption weight and
//! the fused prediction.
//!
//! Given image probabilities `S_I` and caption probabilities `S_c` over the
//! same `m` classes, the fused prediction is
//!
//! ```text
//! argmax_{w in TopK(S_I)}  S_I[w] + lambda * S_c[w]
//! ```
//!
//! where in adaptive mode
//! `lambda = xi * sd(S_c|K) / max(hypot(sd(S_I|K), sd(S_c|K)), epsilon)` and
//! `|K` restricts to the Top-K image classes (raw, not renormalized).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{centroid, stddev, EmbeddingVector, ScoreDistribution};
use crate::error::{IceError, Result};
use crate::prototypes::{score_image, ClassPrototypeSet};
use crate::scalar::Scalar;

/// How the caption weight is chosen per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LambdaMode {
    Adaptive,
    Fixed(f64),
    ImageOnly,
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Adaptive => f.write_str("adaptive"),
            LambdaMode::ImageOnly => f.write_str("image_only"),
            LambdaMode::Fixed(l) => write!(f, "fixed({l})"),
        }
    }
}

impl FromStr for LambdaMode {
    type Err = IceError;

    /// Accepts `adaptive`, `image_only`, `fixed(0.5)` and `fixed:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "adaptive" => return Ok(LambdaMode::Adaptive),
            "image_only" => return Ok(LambdaMode::ImageOnly),
            _ => {}
        }
        let value = s
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("fixed:"))
            .ok_or_else(|| IceError::InvalidConfig(format!("lambda_mode: unknown mode {s:?}")))?;
        value
            .trim()
            .parse::<f64>()
            .map(LambdaMode::Fixed)
            .map_err(|_| IceError::InvalidConfig(format!("lambda_mode: bad fixed lambda {value:?}")))
    }
}

impl TryFrom<String> for LambdaMode {
    type Error = IceError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LambdaMode> for String {
    fn from(m: LambdaMode) -> Self {
        m.to_string()
    }
}

/// Fusion hyperparameters. Field names match the run-config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IceConfig {
    /// Anchor size of the Top-K image classes.
    #[serde(rename = "K")]
    pub k: usize,
    /// Ceiling of the adaptive caption weight.
    pub xi: f64,
    /// Floor of the adaptive-weight denominator.
    pub epsilon: f64,
    pub lambda_mode: LambdaMode,
    /// Softmax temperature applied to cosine similarities.
    pub tau: f64,
    /// Number of stored captions to average; `None` uses all of them.
    #[serde(default)]
    pub upsilon: Option<usize>,
}

impl Default for IceConfig {
    fn default() -> Self {
        Self {
            k: 5,
            xi: 0.08,
            epsilon: 1e-12,
            lambda_mode: LambdaMode::Adaptive,
            tau: 1.0,
            upsilon: None,
        }
    }
}

impl IceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IceError::InvalidConfig(msg));
        if self.k < 1 {
            return bad(format!("K must be >= 1, got {}", self.k));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return bad(format!("xi must be finite and >= 0, got {}", self.xi));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be finite and > 0, got {}", self.epsilon));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be finite and > 0, got {}", self.tau));
        }
        if let LambdaMode::Fixed(l) = self.lambda_mode {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("lambda_mode: fixed lambda must be finite and >= 0, got {l}"));
            }
        }
        if self.upsilon == Some(0) {
            return bad("upsilon must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcePrediction<T> {
    pub predicted_class: usize,
    /// Top-K image classes, most probable first.
    pub top_k_indices: Vec<usize>,
    pub lambda_used: T,
    pub image_argmax: usize,
    /// `S_I + lambda * S_c`, aligned with `top_k_indices`.
    pub fused_scores_on_top_k: Vec<T>,
    /// The requested K exceeded the class count and was clamped.
    pub k_clamped: bool,
}

/// Indices of the `min(k, m)` largest probabilities in descending order,
/// lowest index first among ties.
pub fn top_k_indices<T: Scalar>(probs: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(probs.len()));
    order
}

/// Adaptive weight from the two spreads: `xi * sd_c / max(hypot(sd_i, sd_c), epsilon)`.
///
/// The ratio is formed before scaling by `xi`, so the result never exceeds `xi`.
pub fn lambda_from_spreads<T: Scalar>(sd_image: T, sd_caption: T, xi: T, epsilon: T) -> T {
    let denom = sd_image.hypot(sd_caption).max(epsilon);
    xi * (sd_caption / denom)
}

/// Adaptive caption weight from the Top-K restricted probabilities.
pub fn adaptive_lambda<T: Scalar>(image_top_k: &[T], caption_top_k: &[T], xi: T, epsilon: T) -> Result<T> {
    if image_top_k.len() != caption_top_k.len() {
        return Err(IceError::DimensionMismatch {
            expected: image_top_k.len(),
            found: caption_top_k.len(),
        });
    }
    Ok(lambda_from_spreads(stddev(image_top_k)?, stddev(caption_top_k)?, xi, epsilon))
}

/// Caption probabilities from the centroid of several caption embeddings.
pub fn caption_score<T: Scalar>(
    captions: &[EmbeddingVector<T>],
    protos: &ClassPrototypeSet<T>,
    tau: T,
) -> Result<ScoreDistribution<T>> {
    score_image(&centroid(captions)?, protos, tau)
}

/// Fused prediction anchored to the Top-K image classes.
///
/// Ties in the fused score go to the higher image probability, then to the
/// lower class index.
pub fn ice_predict<T: Scalar>(
    image: &ScoreDistribution<T>,
    caption: &ScoreDistribution<T>,
    cfg: &IceConfig,
) -> Result<IcePrediction<T>> {
    if image.len() != caption.len() {
        return Err(IceError::DimensionMismatch { expected: image.len(), found: caption.len() });
    }
    cfg.validate()?;
    let s_i = image.probs();
    let s_c = caption.probs();
    let top = top_k_indices(s_i, cfg.k);

    let lambda = match cfg.lambda_mode {
        LambdaMode::ImageOnly => T::zero(),
        LambdaMode::Fixed(l) => T::of(l),
        LambdaMode::Adaptive => {
            let ik: Vec<T> = top.iter().map(|&j| s_i[j]).collect();
            let ck: Vec<T> = top.iter().map(|&j| s_c[j]).collect();
            adaptive_lambda(&ik, &ck, T::of(cfg.xi), T::of(cfg.epsilon))?
        }
    };

    let fused: Vec<T> = top.iter().map(|&j| s_i[j] + lambda * s_c[j]).collect();
    // `top` is already ordered by (image prob desc, index asc), so the first
    // strict maximum implements the tie-break.
    let mut best = 0;
    for (pos, &f) in fused.iter().enumerate().skip(1) {
        if f > fused[best] {
            best = pos;
        }
    }

    Ok(IcePrediction {
        predicted_class: top[best],
        image_argmax: top[0],
        k_clamped: cfg.k > s_i.len(),
        top_k_indices: top,
        lambda_used: lambda,
        fused_scores_on_top_k: fused,
    })
}
