//! Dataset-level evaluation: Top-1 and Top-K accuracy, reclassification
//! quadrants relative to the image-only prediction, and ablation sweeps.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::EmbeddingBundle;
use crate::error::{IceError, Result};
use crate::fusion::{caption_score, ice_predict, top_k_indices, IceConfig, LambdaMode};
use crate::prototypes::{score_image, ClassPrototypeSet, Reduction};

/// Default sweep for the caption-weight axis.
pub const DEFAULT_XI_GRID: [f64; 6] = [0.0, 0.02, 0.04, 0.08, 0.16, 0.32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    ImageOnly,
    CaptionOnly,
    Ice,
}

impl MethodKind {
    fn as_str(self) -> &'static str {
        match self {
            MethodKind::ImageOnly => "image_only",
            MethodKind::CaptionOnly => "caption_only",
            MethodKind::Ice => "ice",
        }
    }
}

/// A scoring method, optionally pinned to a prototype reduction
/// (`ice@score_mean`). Without a pin the bundle's stored reduction is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub kind: MethodKind,
    pub reduction: Option<Reduction>,
}

impl Method {
    pub const fn new(kind: MethodKind) -> Self {
        Self { kind, reduction: None }
    }

    pub const fn ice() -> Self {
        Self::new(MethodKind::Ice)
    }

    pub const fn image_only() -> Self {
        Self::new(MethodKind::ImageOnly)
    }

    pub const fn caption_only() -> Self {
        Self::new(MethodKind::CaptionOnly)
    }

    pub fn with_reduction(mut self, r: Reduction) -> Self {
        self.reduction = Some(r);
        self
    }

    pub fn default_set() -> Vec<Method> {
        vec![Self::image_only(), Self::caption_only(), Self::ice()]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        if let Some(r) = self.reduction {
            write!(f, "@{r}")?;
        }
        Ok(())
    }
}

impl FromStr for Method {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, reduction) = match s.trim().split_once('@') {
            Some((k, r)) => (k, Some(r.parse::<Reduction>()?)),
            None => (s.trim(), None),
        };
        let kind = [MethodKind::ImageOnly, MethodKind::CaptionOnly, MethodKind::Ice]
            .into_iter()
            .find(|k| k.as_str() == kind)
            .ok_or_else(|| IceError::InvalidConfig(format!("methods: unknown method {kind:?}")))?;
        Ok(Self { kind, reduction })
    }
}

impl TryFrom<String> for Method {
    type Error = IceError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// K values reported for image Top-K accuracy.
    pub top_ks: Vec<usize>,
    /// Worker threads; `None` uses rayon's global pool.
    pub workers: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { top_ks: vec![1, 5], workers: None }
    }
}

/// Outcome for one sample under the primary reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub label: usize,
    pub image_argmax: usize,
    pub ice_prediction: usize,
    pub lambda_used: f64,
    /// Position of the label in the image ranking (0 = Top-1).
    pub label_rank: usize,
    pub top_k: Vec<usize>,
    /// The caption centroid was degenerate; the image prediction was kept.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Quadrants {
    /// Image wrong, ICE right.
    pub fixed: usize,
    /// Image right, ICE wrong.
    pub broken: usize,
    pub kept_right: usize,
    pub kept_wrong: usize,
}

impl Quadrants {
    pub fn total(&self) -> usize {
        self.fixed + self.broken + self.kept_right + self.kept_wrong
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub correct: usize,
    /// Percentage in `[0, 100]`.
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKAccuracy {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bundle: String,
    pub group: Option<String>,
    pub samples: usize,
    pub classes: usize,
    /// Resolved configuration, with `upsilon` set to the count actually used.
    pub config: IceConfig,
    pub primary_reduction: Reduction,
    pub methods: Vec<MethodResult>,
    pub top_k_accuracy: Vec<TopKAccuracy>,
    pub quadrants: Quadrants,
    pub fallback_count: usize,
    pub warnings: Vec<String>,
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Top-1 of the first method with this kind.
    pub fn top1(&self, kind: MethodKind) -> Option<f64> {
        self.methods.iter().find(|r| r.method.kind == kind).map(|r| r.top1)
    }
}

pub fn percentage(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 * 100.0 / total as f64
    }
}

/// Share of samples whose label is among the `k` most probable image classes.
pub fn top_k_accuracy(records: &[SampleRecord], k: usize) -> f64 {
    percentage(records.iter().filter(|r| r.label_rank < k).count(), records.len())
}

pub fn quadrant_counts(records: &[SampleRecord]) -> Quadrants {
    let mut q = Quadrants::default();
    for r in records {
        match (r.image_argmax == r.label, r.ice_prediction == r.label) {
            (false, true) => q.fixed += 1,
            (true, false) => q.broken += 1,
            (true, true) => q.kept_right += 1,
            (false, false) => q.kept_wrong += 1,
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    Fixed,
    Broken,
    KeptRight,
    KeptWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub quadrant: Quadrant,
    pub id: usize,
    pub label: usize,
    pub image_argmax: usize,
    pub ice_prediction: usize,
    pub lambda_used: f64,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantReport {
    pub counts: Quadrants,
    pub exemplars: Vec<Exemplar>,
}

/// Quadrant counts plus up to `per_quadrant` exemplars of each quadrant,
/// with caption texts when the bundle stores them.
pub fn quadrant_report(
    records: &[SampleRecord],
    bundle: Option<&EmbeddingBundle>,
    per_quadrant: usize,
) -> QuadrantReport {
    let mut exemplars = Vec::new();
    let mut taken = [0usize; 4];
    for r in records {
        let (quadrant, slot) = match (r.image_argmax == r.label, r.ice_prediction == r.label) {
            (false, true) => (Quadrant::Fixed, 0),
            (true, false) => (Quadrant::Broken, 1),
            (true, true) => (Quadrant::KeptRight, 2),
            (false, false) => (Quadrant::KeptWrong, 3),
        };
        if taken[slot] >= per_quadrant {
            continue;
        }
        taken[slot] += 1;
        let captions = bundle
            .filter(|b| b.caption_texts.is_some() && r.id < b.num_samples())
            .map(|b| (0..b.upsilon).filter_map(|j| b.caption_text(r.id, j).map(str::to_owned)).collect())
            .unwrap_or_default();
        exemplars.push(Exemplar {
            quadrant,
            id: r.id,
            label: r.label,
            image_argmax: r.image_argmax,
            ice_prediction: r.ice_prediction,
            lambda_used: r.lambda_used,
            captions,
        });
    }
    QuadrantReport { counts: quadrant_counts(records), exemplars }
}

struct ReductionOutcome {
    image_argmax: usize,
    caption_argmax: Option<usize>,
    ice_prediction: usize,
    lambda_used: f64,
    label_rank: usize,
    top_k: Vec<usize>,
    fallback: bool,
}

fn score_sample(
    bundle: &EmbeddingBundle,
    i: usize,
    protos: &[ClassPrototypeSet<f64>],
    cfg: &IceConfig,
    upsilon: usize,
) -> Result<Vec<ReductionOutcome>> {
    let image = bundle.image_vector::<f64>(i)?;
    let captions = bundle.caption_vectors::<f64>(i, upsilon)?;
    let label = bundle.labels[i] as usize;
    protos
        .iter()
        .map(|p| {
            let s_i = score_image(&image, p, cfg.tau)?;
            let ranking = top_k_indices(s_i.probs(), s_i.len());
            let label_rank = ranking.iter().position(|&c| c == label).unwrap_or(ranking.len());
            let s_c = match caption_score(&captions, p, cfg.tau) {
                Ok(s) => Some(s),
                Err(IceError::ZeroVector) => None,
                Err(e) => return Err(e),
            };
            let (ice_prediction, lambda_used, top_k) = match &s_c {
                Some(s_c) => {
                    let pred = ice_predict(&s_i, s_c, cfg)?;
                    (pred.predicted_class, pred.lambda_used, pred.top_k_indices)
                }
                None => {
                    let top = ranking[..cfg.k.min(ranking.len())].to_vec();
                    (ranking[0], 0.0, top)
                }
            };
            Ok(ReductionOutcome {
                image_argmax: ranking[0],
                caption_argmax: s_c.as_ref().map(|s| s.argmax()),
                ice_prediction,
                lambda_used,
                label_rank,
                top_k,
                fallback: s_c.is_none(),
            })
        })
        .collect()
}

pub fn evaluate(bundle: &EmbeddingBundle, cfg: &IceConfig, methods: &[Method]) -> Result<EvalReport> {
    evaluate_with(bundle, cfg, methods, &EvalOptions::default())
}

/// Scores every sample under each method.
///
/// Per-sample records, quadrants and Top-K accuracy use the primary
/// reduction: that of the first method, or the bundle's stored one.
pub fn evaluate_with(
    bundle: &EmbeddingBundle,
    cfg: &IceConfig,
    methods: &[Method],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    bundle.validate()?;
    if methods.is_empty() {
        return Err(IceError::InvalidConfig("methods: empty method list".into()));
    }
    let upsilon = cfg.upsilon.unwrap_or(bundle.upsilon);
    if upsilon > bundle.upsilon {
        return Err(IceError::InvalidValue(format!(
            "upsilon {upsilon} exceeds the {} captions stored per image",
            bundle.upsilon
        )));
    }
    let resolve = |m: &Method| m.reduction.unwrap_or(bundle.reduction);
    let primary = resolve(&methods[0]);
    let reductions: Vec<Reduction> = std::iter::once(primary)
        .chain(methods.iter().map(resolve))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let primary_slot = reductions.iter().position(|&r| r == primary).unwrap();
    let protos = reductions
        .iter()
        .map(|&r| bundle.prototypes::<f64>(r))
        .collect::<Result<Vec<_>>>()?;

    let n = bundle.num_samples();
    let run = || -> Result<Vec<Vec<ReductionOutcome>>> {
        (0..n)
            .into_par_iter()
            .map(|i| score_sample(bundle, i, &protos, cfg, upsilon))
            .collect()
    };
    let outcomes = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| IceError::InvalidConfig(format!("workers: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let method_results = methods
        .iter()
        .map(|m| {
            let slot = reductions.iter().position(|&r| r == resolve(m)).unwrap();
            let correct = outcomes
                .iter()
                .zip(&bundle.labels)
                .filter(|(o, &label)| {
                    let o = &o[slot];
                    let pred = match m.kind {
                        MethodKind::ImageOnly => Some(o.image_argmax),
                        MethodKind::CaptionOnly => o.caption_argmax,
                        MethodKind::Ice => Some(o.ice_prediction),
                    };
                    pred == Some(label as usize)
                })
                .count();
            MethodResult { method: *m, correct, top1: percentage(correct, n) }
        })
        .collect();

    let records: Vec<SampleRecord> = outcomes
        .into_iter()
        .enumerate()
        .map(|(id, mut per)| {
            let o = per.swap_remove(primary_slot);
            SampleRecord {
                id,
                label: bundle.labels[id] as usize,
                image_argmax: o.image_argmax,
                ice_prediction: o.ice_prediction,
                lambda_used: o.lambda_used,
                label_rank: o.label_rank,
                top_k: o.top_k,
                fallback: o.fallback,
            }
        })
        .collect();

    let m = bundle.num_classes();
    let mut warnings = Vec::new();
    if cfg.k > m {
        warnings.push(format!("K={} exceeds the {m} classes; clamped to {m}", cfg.k));
    }
    let fallback_count = records.iter().filter(|r| r.fallback).count();
    if fallback_count > 0 {
        warnings.push(format!("{fallback_count} samples had a degenerate caption centroid and kept the image prediction"));
    }

    let mut config = cfg.clone();
    config.upsilon = Some(upsilon);
    Ok(EvalReport {
        bundle: bundle.manifest.dataset.clone(),
        group: bundle.manifest.group.clone(),
        samples: n,
        classes: m,
        config,
        primary_reduction: primary,
        methods: method_results,
        top_k_accuracy: opts
            .top_ks
            .iter()
            .map(|&k| TopKAccuracy { k, accuracy: top_k_accuracy(&records, k) })
            .collect(),
        quadrants: quadrant_counts(&records),
        fallback_count,
        warnings,
        records,
    })
}

/// Per-sample records for selected ids, scored like [`evaluate`] does.
pub fn predict_samples(
    bundle: &EmbeddingBundle,
    cfg: &IceConfig,
    reduction: Option<Reduction>,
    ids: &[usize],
) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    bundle.validate()?;
    let upsilon = cfg.upsilon.unwrap_or(bundle.upsilon);
    if upsilon > bundle.upsilon {
        return Err(IceError::InvalidValue(format!(
            "upsilon {upsilon} exceeds the {} captions stored per image",
            bundle.upsilon
        )));
    }
    let n = bundle.num_samples();
    if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
        return Err(IceError::InvalidValue(format!("sample id {bad} out of range [0, {n})")));
    }
    let protos = [bundle.prototypes::<f64>(reduction.unwrap_or(bundle.reduction))?];
    ids.iter()
        .map(|&id| {
            let o = score_sample(bundle, id, &protos, cfg, upsilon)?.swap_remove(0);
            Ok(SampleRecord {
                id,
                label: bundle.labels[id] as usize,
                image_argmax: o.image_argmax,
                ice_prediction: o.ice_prediction,
                lambda_used: o.lambda_used,
                label_rank: o.label_rank,
                top_k: o.top_k,
                fallback: o.fallback,
            })
        })
        .collect()
}

/// CSV with one row per bundle and method; the full config is repeated on
/// every row.
pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("bundle,group,method,top1,correct,samples,K,xi,epsilon,lambda_mode,tau,upsilon\n");
    for r in reports {
        for m in &r.methods {
            let c = &r.config;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.bundle,
                r.group.as_deref().unwrap_or(""),
                m.method,
                m.top1,
                m.correct,
                r.samples,
                c.k,
                c.xi,
                c.epsilon,
                c.lambda_mode,
                c.tau,
                c.upsilon.map(|u| u.to_string()).unwrap_or_default(),
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAverage {
    pub group: String,
    pub method: Method,
    pub bundles: usize,
    pub mean_top1: f64,
}

/// Mean Top-1 per (group, method) over tagged reports, groups in first-seen
/// order. Untagged reports are ignored.
pub fn group_averages(reports: &[EvalReport]) -> Vec<GroupAverage> {
    let mut out: Vec<GroupAverage> = Vec::new();
    for r in reports {
        let Some(group) = &r.group else { continue };
        for m in &r.methods {
            match out.iter_mut().find(|g| &g.group == group && g.method == m.method) {
                Some(g) => {
                    g.mean_top1 += m.top1;
                    g.bundles += 1;
                }
                None => out.push(GroupAverage {
                    group: group.clone(),
                    method: m.method,
                    bundles: 1,
                    mean_top1: m.top1,
                }),
            }
        }
    }
    for g in &mut out {
        g.mean_top1 /= g.bundles as f64;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationAxis {
    #[serde(rename = "xi")]
    Xi,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "upsilon")]
    Upsilon,
    #[serde(rename = "lambda_fixed")]
    LambdaFixed,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Xi => "xi",
            AblationAxis::K => "K",
            AblationAxis::Upsilon => "upsilon",
            AblationAxis::LambdaFixed => "lambda_fixed",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xi" => Ok(AblationAxis::Xi),
            "K" | "k" => Ok(AblationAxis::K),
            "upsilon" => Ok(AblationAxis::Upsilon),
            "lambda_fixed" => Ok(AblationAxis::LambdaFixed),
            other => Err(IceError::InvalidAxis(other.to_string())),
        }
    }
}

/// One sweep point; `Max` means K = number of classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AxisValue {
    Value(f64),
    Max,
}

impl FromStr for AxisValue {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "max" {
            return Ok(AxisValue::Max);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(AxisValue::Value)
            .ok_or_else(|| IceError::InvalidValue(format!("{s:?} is not a number or \"max\"")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub top1: f64,
    /// Fixed-weight accuracy at the same value; only for the `xi` axis.
    pub top1_fixed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub base_config: IceConfig,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,top1,top1_fixed\n");
        for r in &self.rows {
            let fixed = r.top1_fixed.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", self.axis, r.value, r.top1, fixed);
        }
        out
    }
}

fn count_value(axis: AblationAxis, v: AxisValue, max: usize) -> Result<usize> {
    match v {
        AxisValue::Max if axis == AblationAxis::K => Ok(max),
        AxisValue::Max => Err(IceError::InvalidValue(format!("\"max\" is only valid for axis K, not {axis}"))),
        AxisValue::Value(x) if x >= 1.0 && x.fract() == 0.0 => Ok(x as usize),
        AxisValue::Value(x) => Err(IceError::InvalidValue(format!("{axis} needs a positive integer, got {x}"))),
    }
}

fn weight_value(axis: AblationAxis, v: AxisValue) -> Result<f64> {
    match v {
        AxisValue::Value(x) if x >= 0.0 => Ok(x),
        AxisValue::Value(x) => Err(IceError::InvalidValue(format!("{axis} must be >= 0, got {x}"))),
        AxisValue::Max => Err(IceError::InvalidValue(format!("\"max\" is only valid for axis K, not {axis}"))),
    }
}

/// Re-evaluates ICE at each value of one axis with everything else fixed.
///
/// The `xi` axis emits an adaptive series (`xi = value`) and a paired fixed
/// series (`lambda = value`). The `upsilon` axis uses the first `value`
/// stored captions of every image.
pub fn ablate(
    bundle: &EmbeddingBundle,
    base: &IceConfig,
    axis: AblationAxis,
    values: &[AxisValue],
    opts: &EvalOptions,
) -> Result<AblationGrid> {
    if values.is_empty() {
        return Err(IceError::InvalidValue("no sweep values".into()));
    }
    base.validate()?;
    let methods = [Method::ice()];
    let ice_top1 = |cfg: &IceConfig| -> Result<f64> {
        Ok(evaluate_with(bundle, cfg, &methods, opts)?.methods[0].top1)
    };
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let row = match axis {
            AblationAxis::K => {
                let k = count_value(axis, v, bundle.num_classes())?;
                let label = if v == AxisValue::Max { "max".to_string() } else { k.to_string() };
                AblationRow { value: label, top1: ice_top1(&IceConfig { k, ..base.clone() })?, top1_fixed: None }
            }
            AblationAxis::Upsilon => {
                let u = count_value(axis, v, bundle.upsilon)?;
                if u > bundle.upsilon {
                    return Err(IceError::InvalidValue(format!(
                        "upsilon {u} exceeds the {} captions stored per image",
                        bundle.upsilon
                    )));
                }
                let cfg = IceConfig { upsilon: Some(u), ..base.clone() };
                AblationRow { value: u.to_string(), top1: ice_top1(&cfg)?, top1_fixed: None }
            }
            AblationAxis::Xi => {
                let x = weight_value(axis, v)?;
                let adaptive = IceConfig { xi: x, lambda_mode: LambdaMode::Adaptive, ..base.clone() };
                let fixed = IceConfig { lambda_mode: LambdaMode::Fixed(x), ..base.clone() };
                AblationRow { value: x.to_string(), top1: ice_top1(&adaptive)?, top1_fixed: Some(ice_top1(&fixed)?) }
            }
            AblationAxis::LambdaFixed => {
                let x = weight_value(axis, v)?;
                let cfg = IceConfig { lambda_mode: LambdaMode::Fixed(x), ..base.clone() };
                AblationRow { value: x.to_string(), top1: ice_top1(&cfg)?, top1_fixed: None }
            }
        };
        rows.push(row);
    }
    Ok(AblationGrid { axis, base_config: base.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_bundle, SynthSpec};

    fn small(seed: u64) -> EmbeddingBundle {
        synth_bundle(&SynthSpec { samples: 300, classes: 8, dim: 16, seed, with_caption_texts: true, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn method_parsing() {
        assert_eq!("ice".parse::<Method>().unwrap(), Method::ice());
        assert_eq!(
            "caption_only@score_mean".parse::<Method>().unwrap(),
            Method::caption_only().with_reduction(Reduction::ScoreMean)
        );
        assert!("ensemble".parse::<Method>().is_err());
        assert!("ice@median".parse::<Method>().is_err());
        assert_eq!(Method::ice().with_reduction(Reduction::Centroid).to_string(), "ice@centroid");
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("K".parse::<AblationAxis>().unwrap(), AblationAxis::K);
        assert!(matches!("depth".parse::<AblationAxis>(), Err(IceError::InvalidAxis(_))));
        assert_eq!("max".parse::<AxisValue>().unwrap(), AxisValue::Max);
        assert!("nan".parse::<AxisValue>().is_err());
    }

    #[test]
    fn image_only_mode_has_no_reclassifications() {
        let b = small(1);
        let cfg = IceConfig { lambda_mode: LambdaMode::ImageOnly, ..IceConfig::default() };
        let r = evaluate(&b, &cfg, &Method::default_set()).unwrap();
        assert_eq!(r.quadrants.fixed, 0);
        assert_eq!(r.quadrants.broken, 0);
        assert_eq!(r.quadrants.total(), r.samples);
        assert_eq!(r.top1(MethodKind::Ice), r.top1(MethodKind::ImageOnly));
    }

    #[test]
    fn quadrant_exemplars_respect_limit_and_carry_captions() {
        let b = small(2);
        let r = evaluate(&b, &IceConfig::default(), &[Method::ice()]).unwrap();
        let q = quadrant_report(&r.records, Some(&b), 2);
        assert_eq!(q.counts, r.quadrants);
        for quad in [Quadrant::Fixed, Quadrant::Broken, Quadrant::KeptRight, Quadrant::KeptWrong] {
            assert!(q.exemplars.iter().filter(|e| e.quadrant == quad).count() <= 2);
        }
        assert!(q.exemplars.iter().all(|e| e.captions.len() == b.upsilon));
        let bare = quadrant_report(&r.records, None, 1);
        assert!(bare.exemplars.iter().all(|e| e.captions.is_empty()));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let b = small(3);
        let one = evaluate_with(&b, &IceConfig::default(), &Method::default_set(), &EvalOptions { workers: Some(1), ..Default::default() }).unwrap();
        let four = evaluate_with(&b, &IceConfig::default(), &Method::default_set(), &EvalOptions { workers: Some(4), ..Default::default() }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn k_clamp_is_warned() {
        let b = small(4);
        let r = evaluate(&b, &IceConfig { k: 50, ..IceConfig::default() }, &[Method::ice()]).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("clamped")));
    }

    #[test]
    fn upsilon_beyond_storage_is_rejected() {
        let b = small(5);
        let cfg = IceConfig { upsilon: Some(4), ..IceConfig::default() };
        assert!(matches!(evaluate(&b, &cfg, &[Method::ice()]), Err(IceError::InvalidValue(_))));
        assert!(matches!(
            ablate(&b, &IceConfig::default(), AblationAxis::Upsilon, &[AxisValue::Value(9.0)], &EvalOptions::default()),
            Err(IceError::InvalidValue(_))
        ));
        assert!(matches!(
            ablate(&b, &IceConfig::default(), AblationAxis::Xi, &[AxisValue::Max], &EvalOptions::default()),
            Err(IceError::InvalidValue(_))
        ));
    }

    #[test]
    fn group_averages_by_tag() {
        let mut a = small(6);
        a.manifest.group = Some("cross_dataset".into());
        let mut b = small(7);
        b.manifest.group = Some("cross_dataset".into());
        let ra = evaluate(&a, &IceConfig::default(), &[Method::ice()]).unwrap();
        let rb = evaluate(&b, &IceConfig::default(), &[Method::ice()]).unwrap();
        let g = group_averages(&[ra.clone(), rb.clone()]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].bundles, 2);
        assert!((g[0].mean_top1 - (ra.methods[0].top1 + rb.methods[0].top1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_csv_shape() {
        let b = small(8);
        let r = evaluate(&b, &IceConfig::default(), &Method::default_set()).unwrap();
        let csv = metrics_csv(&[r.clone(), r]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].contains(",adaptive,"));
    }

    #[test]
    fn predict_samples_agree_with_evaluate() {
        let b = small(4);
        let cfg = IceConfig { k: 3, ..IceConfig::default() };
        let full = evaluate(&b, &cfg, &[Method::ice()]).unwrap();
        let picked = predict_samples(&b, &cfg, None, &[5, 0, 17]).unwrap();
        assert_eq!(picked, vec![full.records[5].clone(), full.records[0].clone(), full.records[17].clone()]);
        assert!(matches!(predict_samples(&b, &cfg, None, &[300]), Err(IceError::InvalidValue(_))));
    }
}
