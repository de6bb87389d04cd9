//! The `ICEB` embedding bundle: reader, writer and validator.
//!
//! All integers and floats are little-endian. Layout, in order:
//!
//! | bytes            | content                                                |
//! |------------------|--------------------------------------------------------|
//! | 4                | magic `ICEB`                                           |
//! | 4                | `u32` version (= 1)                                    |
//! | 4                | `u32` reserved (= 0)                                   |
//! | 4                | `u32` flags (bit 0: caption texts present)             |
//! | 16               | `u32` dimension l, images N, captions per image, classes m |
//! | 4 m              | `u32` member count per class                           |
//! | 1                | reduction tag (0 single, 1 centroid, 2 score mean)     |
//! | 8                | `f64` temperature hint                                 |
//! | 4 N l            | `f32` image embeddings                                 |
//! | 4 N u l          | `f32` caption embeddings, image-major                  |
//! | 4 (sum n_i) l    | `f32` prototype members, class-major                   |
//! | 4 N              | `u32` labels                                           |
//! | ...              | m class names, then N u caption texts if flagged; each a `u32` byte length + UTF-8 |
//! | 4 + len          | manifest JSON, length-prefixed                         |
//! | 8                | `u64` CRC-64/XZ of every preceding byte                |
//!
//! The manifest's `payload_crc64` covers the float arrays and labels only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{IceError, Result};
use crate::prototypes::{ClassPrototypeSet, Reduction};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"ICEB";
pub const VERSION: u32 = 1;
pub const FLAG_CAPTION_TEXTS: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

/// Provenance record embedded in every bundle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: String,
    pub split: String,
    pub source_model: String,
    #[serde(default)]
    pub caption_prompts: Vec<String>,
    #[serde(default)]
    pub created: Option<String>,
    /// Benchmark group, e.g. `cross_dataset` or `domain_generalization`.
    #[serde(default)]
    pub group: Option<String>,
    /// Hex CRC-64/XZ of the numeric payload; filled in on write.
    #[serde(default)]
    pub payload_crc64: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Image, caption and class-prototype embeddings for one labelled split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub dim: usize,
    /// Captions stored per image.
    pub upsilon: usize,
    pub reduction: Reduction,
    pub temperature_hint: f64,
    pub members_per_class: Vec<usize>,
    /// `N x dim`, row-major.
    pub image_embeddings: Vec<f32>,
    /// `N x upsilon x dim`.
    pub caption_embeddings: Vec<f32>,
    /// `(sum of members_per_class) x dim`, class-major.
    pub prototype_members: Vec<f32>,
    pub labels: Vec<u32>,
    pub class_names: Vec<String>,
    /// `N x upsilon` caption strings, image-major.
    pub caption_texts: Option<Vec<String>>,
    pub manifest: DatasetManifest,
}

/// Header numbers printed by `validate-bundle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BundleSummary {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub upsilon: usize,
}

impl EmbeddingBundle {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.members_per_class.len()
    }

    pub fn summary(&self) -> BundleSummary {
        BundleSummary {
            samples: self.num_samples(),
            classes: self.num_classes(),
            dim: self.dim,
            upsilon: self.upsilon,
        }
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.image_embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn caption(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.upsilon + j) * self.dim;
        &self.caption_embeddings[start..start + self.dim]
    }

    pub fn caption_text(&self, i: usize, j: usize) -> Option<&str> {
        self.caption_texts
            .as_ref()
            .map(|t| t[i * self.upsilon + j].as_str())
    }

    /// Stored prototype members of `class`.
    pub fn class_members(&self, class: usize) -> impl Iterator<Item = &[f32]> {
        let offset: usize = self.members_per_class[..class].iter().sum();
        let count = self.members_per_class[class];
        self.prototype_members[offset * self.dim..(offset + count) * self.dim].chunks_exact(self.dim)
    }

    pub fn image_vector<T: Scalar>(&self, i: usize) -> Result<EmbeddingVector<T>> {
        EmbeddingVector::from_f32(self.image(i))
    }

    /// The first `count` caption embeddings of image `i`.
    pub fn caption_vectors<T: Scalar>(&self, i: usize, count: usize) -> Result<Vec<EmbeddingVector<T>>> {
        (0..count.min(self.upsilon))
            .map(|j| EmbeddingVector::from_f32(self.caption(i, j)))
            .collect()
    }

    /// Prototype set under `reduction` (which may differ from the stored tag).
    pub fn prototypes<T: Scalar>(&self, reduction: Reduction) -> Result<ClassPrototypeSet<T>> {
        let per_class = (0..self.num_classes())
            .map(|c| self.class_members(c).map(EmbeddingVector::from_f32).collect())
            .collect::<Result<Vec<_>>>()?;
        ClassPrototypeSet::build(self.class_names.clone(), per_class, reduction)
    }

    /// Every invariant violation, one message each.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.num_samples();
        let m = self.num_classes();
        let l = self.dim;
        if l == 0 {
            out.push("dimension must be >= 1".to_string());
        }
        if n == 0 {
            out.push("bundle has no samples".to_string());
        }
        if self.upsilon == 0 {
            out.push("captions per image must be >= 1".to_string());
        }
        if m < 2 {
            out.push(format!("need at least 2 classes, got {m}"));
        }
        if !(self.temperature_hint.is_finite() && self.temperature_hint > 0.0) {
            out.push(format!("temperature hint must be positive, got {}", self.temperature_hint));
        }
        for (c, &count) in self.members_per_class.iter().enumerate() {
            if count == 0 {
                out.push(format!("class {c} has no prototype members"));
            } else if self.reduction == Reduction::Single && count != 1 {
                out.push(format!("class {c} has {count} members under single reduction"));
            }
        }
        if self.class_names.len() != m {
            out.push(format!("{} class names for {m} classes", self.class_names.len()));
        }
        let total_members: usize = self.members_per_class.iter().sum();
        let arrays = [
            ("image embeddings", &self.image_embeddings, n * l),
            ("caption embeddings", &self.caption_embeddings, n * self.upsilon * l),
            ("prototype members", &self.prototype_members, total_members * l),
        ];
        let mut shapes_ok = true;
        for (name, data, expected) in arrays {
            if data.len() != expected {
                shapes_ok = false;
                out.push(format!("{name}: {} values, expected {expected}", data.len()));
            }
        }
        if let Some(texts) = &self.caption_texts {
            if texts.len() != n * self.upsilon {
                out.push(format!(
                    "{} caption texts, expected {} (captions must be uniform per image)",
                    texts.len(),
                    n * self.upsilon
                ));
            }
        }
        if shapes_ok && l > 0 {
            for i in 0..n {
                if self.image(i).iter().any(|v| !v.is_finite()) {
                    out.push(format!("sample {i}: image embedding has a non-finite value"));
                }
                for j in 0..self.upsilon {
                    if self.caption(i, j).iter().any(|v| !v.is_finite()) {
                        out.push(format!("sample {i}: caption {j} embedding has a non-finite value"));
                    }
                }
            }
            for c in 0..m {
                if self.class_members(c).any(|row| row.iter().any(|v| !v.is_finite())) {
                    out.push(format!("class {c}: prototype member has a non-finite value"));
                }
            }
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label as usize >= m {
                out.push(format!("sample {i}: label {label} out of range [0, {m})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.issues().into_iter().next() {
            None => Ok(()),
            Some(first) => Err(IceError::InvariantViolation(first)),
        }
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let floats = self.image_embeddings.len() + self.caption_embeddings.len() + self.prototype_members.len();
        let mut buf = Vec::with_capacity(4 * (floats + self.labels.len()));
        for v in self
            .image_embeddings
            .iter()
            .chain(&self.caption_embeddings)
            .chain(&self.prototype_members)
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf
    }

    pub fn payload_checksum(&self) -> String {
        format!("{:016x}", crc64(&self.payload_bytes()))
    }

    /// Stores the current payload checksum in the manifest.
    pub fn seal(&mut self) {
        self.manifest.payload_crc64 = self.payload_checksum();
    }

    /// Serializes to the `ICEB` layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        put_u32(&mut buf, VERSION);
        put_u32(&mut buf, 0);
        put_u32(&mut buf, if self.caption_texts.is_some() { FLAG_CAPTION_TEXTS } else { 0 });
        for v in [self.dim, self.num_samples(), self.upsilon, self.num_classes()] {
            put_len(&mut buf, v)?;
        }
        for &c in &self.members_per_class {
            put_len(&mut buf, c)?;
        }
        buf.push(self.reduction.tag());
        buf.extend_from_slice(&self.temperature_hint.to_le_bytes());
        buf.extend_from_slice(&self.payload_bytes());
        for name in &self.class_names {
            put_str(&mut buf, name)?;
        }
        for text in self.caption_texts.iter().flatten() {
            put_str(&mut buf, text)?;
        }
        let mut manifest = self.manifest.clone();
        manifest.payload_crc64 = self.payload_checksum();
        let json = serde_json::to_vec(&manifest)?;
        put_len(&mut buf, json.len())?;
        buf.extend_from_slice(&json);
        let sum = crc64(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        Ok(buf)
    }

    /// Parses and fully validates an `ICEB` image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        check_preamble(bytes)?;
        check_trailer(bytes)?;
        let bundle = decode_body(bytes)?;
        let computed = bundle.payload_checksum();
        if bundle.manifest.payload_crc64 != computed {
            return Err(IceError::ChecksumMismatch {
                stored: u64::from_str_radix(&bundle.manifest.payload_crc64, 16).unwrap_or(0),
                computed: u64::from_str_radix(&computed, 16).unwrap_or(0),
            });
        }
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn write_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    EmbeddingBundle::from_bytes(&fs::read(path)?)
}

/// Outcome of a best-effort validation pass that keeps going after the
/// first failure.
#[derive(Debug, Clone, Default)]
pub struct Inspection {
    pub issues: Vec<String>,
    pub summary: Option<BundleSummary>,
}

impl Inspection {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Collects every structural, checksum and invariant failure in `bytes`.
pub fn inspect_bytes(bytes: &[u8]) -> Inspection {
    let mut report = Inspection::default();
    if let Err(e) = check_preamble(bytes) {
        report.issues.push(e.to_string());
        return report;
    }
    if let Err(e) = check_trailer(bytes) {
        report.issues.push(e.to_string());
    }
    match decode_body(bytes) {
        Ok(bundle) => {
            let computed = bundle.payload_checksum();
            if bundle.manifest.payload_crc64 != computed {
                report.issues.push(format!(
                    "payload checksum mismatch: manifest {}, computed {computed}",
                    bundle.manifest.payload_crc64
                ));
            }
            report.issues.extend(bundle.issues());
            report.summary = Some(bundle.summary());
        }
        Err(e) => report.issues.push(e.to_string()),
    }
    report
}

pub fn inspect_file(path: impl AsRef<Path>) -> Inspection {
    match fs::read(path) {
        Ok(bytes) => inspect_bytes(&bytes),
        Err(e) => Inspection { issues: vec![e.to_string()], summary: None },
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_len(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| IceError::InvariantViolation(format!("{v} does not fit in u32")))?;
    put_u32(buf, v);
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len(buf, s.len())?;
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn check_preamble(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 8 {
        return Err(IceError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "file shorter than bundle header",
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(IceError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(IceError::VersionUnsupported(version));
    }
    Ok(())
}

fn check_trailer(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 16 {
        return Err(IceError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "file shorter than bundle header",
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = crc64(body);
    if stored != computed {
        return Err(IceError::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IceError::InvariantViolation(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes_needed = count
            .checked_mul(4)
            .ok_or_else(|| IceError::InvariantViolation(format!("{what}: size overflow")))?;
        Ok(self
            .take(bytes_needed, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.len(what)?;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| IceError::InvariantViolation(format!("{what}: invalid UTF-8")))
    }
}

/// Decodes everything between the version word and the trailing checksum.
fn decode_body(bytes: &[u8]) -> Result<EmbeddingBundle> {
    let body = &bytes[..bytes.len().saturating_sub(8)];
    let mut cur = Cursor { bytes: body, pos: 8 };
    let reserved = cur.u32("reserved word")?;
    if reserved != 0 {
        return Err(IceError::InvariantViolation(format!("reserved header word is {reserved}")));
    }
    let flags = cur.u32("flags")?;
    if flags & !FLAG_CAPTION_TEXTS != 0 {
        return Err(IceError::InvariantViolation(format!("unknown header flags {flags:#x}")));
    }
    let dim = cur.len("dimension")?;
    let n = cur.len("image count")?;
    let upsilon = cur.len("caption count")?;
    let m = cur.len("class count")?;
    let members_per_class = (0..m).map(|_| cur.len("member counts")).collect::<Result<Vec<_>>>()?;
    let tag = cur.take(1, "reduction tag")?[0];
    let reduction = Reduction::from_tag(tag)
        .ok_or_else(|| IceError::InvariantViolation(format!("unknown reduction tag {tag}")))?;
    let temperature_hint = f64::from_le_bytes(cur.take(8, "temperature")?.try_into().unwrap());

    let image_embeddings = cur.f32s(n.saturating_mul(dim), "image embeddings")?;
    let caption_embeddings = cur.f32s(n.saturating_mul(upsilon).saturating_mul(dim), "caption embeddings")?;
    let total_members = members_per_class.iter().fold(0usize, |a, &c| a.saturating_add(c));
    let prototype_members = cur.f32s(total_members.saturating_mul(dim), "prototype members")?;
    let labels = (0..n).map(|_| cur.u32("labels")).collect::<Result<Vec<_>>>()?;
    let class_names = (0..m).map(|_| cur.string("class names")).collect::<Result<Vec<_>>>()?;
    let caption_texts = if flags & FLAG_CAPTION_TEXTS != 0 {
        Some(
            (0..n.saturating_mul(upsilon))
                .map(|_| cur.string("caption texts"))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let manifest_len = cur.len("manifest length")?;
    let manifest: DatasetManifest = serde_json::from_slice(cur.take(manifest_len, "manifest")?)?;
    if cur.pos != body.len() {
        return Err(IceError::InvariantViolation(format!(
            "{} trailing bytes before checksum",
            body.len() - cur.pos
        )));
    }
    Ok(EmbeddingBundle {
        dim,
        upsilon,
        reduction,
        temperature_hint,
        members_per_class,
        image_embeddings,
        caption_embeddings,
        prototype_members,
        labels,
        class_names,
        caption_texts,
        manifest,
    })
}
