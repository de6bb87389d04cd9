//! Seeded synthetic bundles with a controllable caption signal.
//!
//! Class prototypes are Gaussian directions on the unit sphere. Each image
//! sits near its class prototype; each caption mixes the true prototype with
//! a per-image distractor prototype (drawn uniformly from all classes) in
//! proportion `caption_signal`, plus independent noise per caption. The
//! caption noise level can vary per image (`caption_noise_spread`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{DatasetManifest, EmbeddingBundle};
use crate::embed::{normalize, EmbeddingVector};
use crate::error::{IceError, Result};
use crate::prototypes::Reduction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub upsilon: usize,
    /// Weight of the true prototype in each caption, in `[0, 1]`.
    pub caption_signal: f64,
    /// Expected L2 norm of the noise added to each image embedding.
    pub image_noise: f64,
    /// Expected L2 norm of the noise added to each caption embedding.
    pub caption_noise: f64,
    /// Log-scale spread of a per-image multiplier on `caption_noise`; zero
    /// gives every image equally reliable captions.
    #[serde(default)]
    pub caption_noise_spread: f64,
    /// Text embeddings per class; more than one yields a centroid bundle.
    pub prompts_per_class: usize,
    /// Expected L2 norm of the noise on each extra prompt embedding.
    pub prompt_noise: f64,
    pub temperature_hint: f64,
    pub with_caption_texts: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            classes: 10,
            dim: 32,
            upsilon: 3,
            caption_signal: 0.8,
            image_noise: 0.5,
            caption_noise: 0.5,
            caption_noise_spread: 0.0,
            prompts_per_class: 1,
            prompt_noise: 0.1,
            temperature_hint: 1.0,
            with_caption_texts: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(IceError::InvalidSpec(msg.to_string()));
        if self.samples == 0 || self.dim == 0 || self.upsilon == 0 || self.prompts_per_class == 0 {
            return bad("samples, dim, upsilon and prompts_per_class must be positive");
        }
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.caption_signal) {
            return bad("caption_signal must lie in [0, 1]");
        }
        for (name, v) in [
            ("image_noise", self.image_noise),
            ("caption_noise", self.caption_noise),
            ("caption_noise_spread", self.caption_noise_spread),
            ("prompt_noise", self.prompt_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(IceError::InvalidSpec(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.temperature_hint.is_finite() && self.temperature_hint > 0.0) {
            return bad("temperature_hint must be positive");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    Ok(normalize(&EmbeddingVector::new(v)?)?.into_inner())
}

/// `base + scale * g / sqrt(dim)`, so the noise has expected norm near `scale`.
fn jitter(rng: &mut ChaCha8Rng, base: &[f64], scale: f64) -> Vec<f64> {
    let k = scale / (base.len() as f64).sqrt();
    let g = gaussian(rng, base.len());
    base.iter().zip(g).map(|(b, n)| b + k * n).collect()
}

fn push_f32(out: &mut Vec<f32>, v: &[f64]) {
    out.extend(v.iter().map(|&x| x as f32));
}

/// Deterministic bundle generator; a pure function of `spec`.
pub fn synth_bundle(spec: &SynthSpec) -> Result<EmbeddingBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (m, l) = (spec.classes, spec.dim);

    let protos = (0..m)
        .map(|_| unit(gaussian(&mut rng, l)))
        .collect::<Result<Vec<_>>>()?;

    let mut prototype_members = Vec::with_capacity(m * spec.prompts_per_class * l);
    for p in &protos {
        push_f32(&mut prototype_members, p);
        for _ in 1..spec.prompts_per_class {
            push_f32(&mut prototype_members, &unit(jitter(&mut rng, p, spec.prompt_noise))?);
        }
    }

    let s = spec.caption_signal;
    let mut labels = Vec::with_capacity(spec.samples);
    let mut image_embeddings = Vec::with_capacity(spec.samples * l);
    let mut caption_embeddings = Vec::with_capacity(spec.samples * spec.upsilon * l);
    let mut texts = Vec::new();
    for _ in 0..spec.samples {
        let label = rng.gen_range(0..m);
        labels.push(label as u32);
        push_f32(&mut image_embeddings, &unit(jitter(&mut rng, &protos[label], spec.image_noise))?);
        let distractor = rng.gen_range(0..m);
        let mix: Vec<f64> = protos[label]
            .iter()
            .zip(&protos[distractor])
            .map(|(t, d)| s * t + (1.0 - s) * d)
            .collect();
        let caption_noise = if spec.caption_noise_spread > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            spec.caption_noise * (spec.caption_noise_spread * z).exp()
        } else {
            spec.caption_noise
        };
        for j in 0..spec.upsilon {
            push_f32(&mut caption_embeddings, &unit(jitter(&mut rng, &mix, caption_noise))?);
            if spec.with_caption_texts {
                texts.push(format!("synthetic caption {j}: class_{label} mixed with class_{distractor}"));
            }
        }
    }

    let mut extra = std::collections::BTreeMap::new();
    extra.insert("generator".to_string(), serde_json::to_value(spec)?);
    let mut bundle = EmbeddingBundle {
        dim: l,
        upsilon: spec.upsilon,
        reduction: if spec.prompts_per_class == 1 { Reduction::Single } else { Reduction::Centroid },
        temperature_hint: spec.temperature_hint,
        members_per_class: vec![spec.prompts_per_class; m],
        image_embeddings,
        caption_embeddings,
        prototype_members,
        labels,
        class_names: (0..m).map(|c| format!("class_{c}")).collect(),
        caption_texts: spec.with_caption_texts.then_some(texts),
        manifest: DatasetManifest {
            dataset: "synthetic".into(),
            split: "test".into(),
            source_model: "synthetic-generator".into(),
            caption_prompts: (0..spec.upsilon).map(|j| format!("synthetic-prompt-{j}")).collect(),
            extra,
            ..Default::default()
        },
    };
    bundle.seal();
    Ok(bundle)
}
