//! Vector math shared by all scoring paths: normalization, cosine
//! similarity, temperature softmax, population standard deviation and
//! centroids.
//!
//! Every function is pure. Non-finite input is rejected at the boundary
//! instead of being propagated into scores.

use crate::error::{IceError, Result};
use crate::scalar::Scalar;

/// Below this L2 norm a vector is treated as zero.
pub const ZERO_NORM_FLOOR: f64 = 1e-30;

/// A point in the shared image/text latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    /// Wraps `values`, rejecting empty or non-finite input.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(IceError::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IceError::NonFinite);
        }
        Ok(Self(values))
    }

    /// Widens (or narrows) an `f32` slice into this scalar type.
    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(f64::from(v))).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self(self.0.iter().map(|&v| v * factor).collect())
    }
}

impl<T> AsRef<[T]> for EmbeddingVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// A probability vector over `m` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution<T>(Vec<T>);

impl<T: Scalar> ScoreDistribution<T> {
    /// Validates nonnegativity and unit mass.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(IceError::EmptyInput);
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(IceError::NonFinite);
        }
        if probs.iter().any(|&p| p < T::zero()) {
            return Err(IceError::InvariantViolation(
                "negative probability".into(),
            ));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > mass_tolerance::<T>(probs.len()) {
            return Err(IceError::InvariantViolation(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

fn mass_tolerance<T: Scalar>(m: usize) -> T {
    let eps_scaled = T::epsilon() * T::from_usize_exact(8 * m.max(1));
    eps_scaled.max(T::of(1e-9))
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(IceError::DimensionMismatch { expected, found })
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Scales `v` to unit L2 norm.
pub fn normalize<T: Scalar>(v: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>> {
    if v.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(IceError::NonFinite);
    }
    let norm = v.norm();
    if norm < T::of(ZERO_NORM_FLOOR) {
        return Err(IceError::ZeroVector);
    }
    Ok(EmbeddingVector(v.as_slice().iter().map(|&x| x / norm).collect()))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(u: &EmbeddingVector<T>, w: &EmbeddingVector<T>) -> Result<T> {
    check_dim(u.dim(), w.dim())?;
    let nu = u.norm();
    let nw = w.norm();
    let floor = T::of(ZERO_NORM_FLOOR);
    if nu < floor || nw < floor {
        return Err(IceError::ZeroVector);
    }
    let c = u.dot(w)? / (nu * nw);
    Ok(c.max(-T::one()).min(T::one()))
}

/// `Softmax(tau * scores)`, stabilized by subtracting the maximum.
///
/// `tau = 1` is the plain softmax over raw cosine similarities.
pub fn softmax<T: Scalar>(scores: &[T], tau: T) -> Result<ScoreDistribution<T>> {
    if scores.is_empty() {
        return Err(IceError::EmptyInput);
    }
    if !(tau.is_finite() && tau > T::zero()) {
        return Err(IceError::InvalidConfig(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(IceError::NonFinite);
    }
    let scaled: Vec<T> = scores.iter().map(|&s| s * tau).collect();
    let peak = scaled[argmax(&scaled)];
    let exps: Vec<T> = scaled.iter().map(|&z| (z - peak).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(ScoreDistribution(exps.into_iter().map(|e| e / total).collect()))
}

/// Population standard deviation (divides by the element count).
///
/// Deviations are taken relative to the first element before averaging, so
/// constant input yields exactly zero.
pub fn stddev<T: Scalar>(x: &[T]) -> Result<T> {
    let first = *x.first().ok_or(IceError::EmptyInput)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IceError::NonFinite);
    }
    let n = T::from_usize_exact(x.len());
    let shifted: Vec<T> = x.iter().map(|&v| v - first).collect();
    let mean = shifted.iter().copied().sum::<T>() / n;
    let var = shifted
        .iter()
        .map(|&d| (d - mean) * (d - mean))
        .sum::<T>()
        / n;
    Ok(var.sqrt())
}

/// Elementwise arithmetic mean. The result is not renormalized.
pub fn centroid<T: Scalar>(vs: &[EmbeddingVector<T>]) -> Result<EmbeddingVector<T>> {
    let first = vs.first().ok_or(IceError::EmptyInput)?;
    let dim = first.dim();
    let mut acc = vec![T::zero(); dim];
    for v in vs {
        check_dim(dim, v.dim())?;
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a = *a + x;
        }
    }
    let n = T::from_usize_exact(vs.len());
    Ok(EmbeddingVector(acc.into_iter().map(|a| a / n).collect()))
}
