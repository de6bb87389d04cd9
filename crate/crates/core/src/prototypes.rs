//! Per-class text prototypes and query scoring.
//!
//! Three reductions cover the zero-shot baselines: a single prompt per
//! class, the centroid of several prompt or descriptor embeddings, and the
//! mean of per-descriptor cosine similarities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{centroid, cosine, softmax, EmbeddingVector, ScoreDistribution};
use crate::error::{IceError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Exactly one text embedding per class.
    Single,
    /// Cosine against the mean of the class members.
    Centroid,
    /// Mean of cosines against every class member.
    ScoreMean,
}

impl Reduction {
    pub const ALL: [Reduction; 3] = [Reduction::Single, Reduction::Centroid, Reduction::ScoreMean];

    /// On-disk tag byte.
    pub fn tag(self) -> u8 {
        match self {
            Reduction::Single => 0,
            Reduction::Centroid => 1,
            Reduction::ScoreMean => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.tag() == tag)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Single => "single",
            Reduction::Centroid => "centroid",
            Reduction::ScoreMean => "score_mean",
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reduction {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| IceError::InvalidConfig(format!("unknown reduction {s:?}")))
    }
}

/// Immutable per-class prototype members plus the rule that reduces them.
///
/// For [`Reduction::Centroid`] the members are collapsed to one centroid
/// per class when the set is built; [`Reduction::ScoreMean`] keeps every
/// member because its reduction depends on the query.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypeSet<T> {
    class_names: Vec<String>,
    members: Vec<Vec<EmbeddingVector<T>>>,
    reduction: Reduction,
}

impl<T: Scalar> ClassPrototypeSet<T> {
    pub fn build(
        class_names: Vec<String>,
        per_class: Vec<Vec<EmbeddingVector<T>>>,
        reduction: Reduction,
    ) -> Result<Self> {
        if per_class.len() < 2 {
            return Err(IceError::InvariantViolation(format!(
                "need at least 2 classes, got {}",
                per_class.len()
            )));
        }
        if class_names.len() != per_class.len() {
            return Err(IceError::InvariantViolation(format!(
                "{} class names for {} classes",
                class_names.len(),
                per_class.len()
            )));
        }
        let dim = per_class
            .iter()
            .flatten()
            .next()
            .map(EmbeddingVector::dim)
            .ok_or(IceError::EmptyClass(0))?;
        for (i, members) in per_class.iter().enumerate() {
            if members.is_empty() {
                return Err(IceError::EmptyClass(i));
            }
            if let Some(bad) = members.iter().find(|v| v.dim() != dim) {
                return Err(IceError::DimensionMismatch { expected: dim, found: bad.dim() });
            }
        }
        let members = match reduction {
            Reduction::Single => {
                if let Some(i) = per_class.iter().position(|m| m.len() != 1) {
                    return Err(IceError::InvariantViolation(format!(
                        "single reduction requires one member per class; class {i} has {}",
                        per_class[i].len()
                    )));
                }
                per_class
            }
            Reduction::Centroid => per_class
                .iter()
                .map(|m| centroid(m).map(|c| vec![c]))
                .collect::<Result<_>>()?,
            Reduction::ScoreMean => per_class,
        };
        Ok(Self { class_names, members, reduction })
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0][0].dim()
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Stored members of class `i` (one centroid after a centroid build).
    pub fn members(&self, i: usize) -> &[EmbeddingVector<T>] {
        &self.members[i]
    }

    /// Per-class similarity of `query` before the softmax.
    pub fn similarities(&self, query: &EmbeddingVector<T>) -> Result<Vec<T>> {
        if query.dim() != self.dim() {
            return Err(IceError::DimensionMismatch { expected: self.dim(), found: query.dim() });
        }
        self.members
            .iter()
            .map(|members| {
                let total = members
                    .iter()
                    .map(|m| cosine(query, m))
                    .sum::<Result<T>>()?;
                Ok(total / T::from_usize_exact(members.len()))
            })
            .collect()
    }
}

/// Builds a set with placeholder class names.
pub fn build_prototypes<T: Scalar>(
    per_class: Vec<Vec<EmbeddingVector<T>>>,
    reduction: Reduction,
) -> Result<ClassPrototypeSet<T>> {
    let names = (0..per_class.len()).map(|i| format!("class_{i}")).collect();
    ClassPrototypeSet::build(names, per_class, reduction)
}

/// Class probabilities for one query embedding.
pub fn score_image<T: Scalar>(
    query: &EmbeddingVector<T>,
    protos: &ClassPrototypeSet<T>,
    tau: T,
) -> Result<ScoreDistribution<T>> {
    softmax(&protos.similarities(query)?, tau)
}
