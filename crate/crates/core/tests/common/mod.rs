//! Reference implementation written directly from the definitions, sharing
//! no code with the library: naive loops, no max-shift in the softmax,
//! two-pass standard deviation, Top-K by rank counting.
#![allow(dead_code)]

use ice_core::EmbeddingBundle;

pub fn cos(u: &[f64], w: &[f64]) -> f64 {
    let mut uw = 0.0;
    let mut uu = 0.0;
    let mut ww = 0.0;
    for i in 0..u.len() {
        uw += u[i] * w[i];
        uu += u[i] * u[i];
        ww += w[i] * w[i];
    }
    uw / (uu.sqrt() * ww.sqrt())
}

pub fn softmax(x: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| (tau * v).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn pop_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn mean_vec(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter().map(|o| o / vs.len() as f64).collect()
}

/// Class `j` is in the Top-K set when fewer than `k` classes beat it, where
/// a tie is won by the lower index.
pub fn in_top_k(p: &[f64], j: usize, k: usize) -> bool {
    let beaten_by = (0..p.len()).filter(|&i| p[i] > p[j] || (p[i] == p[j] && i < j)).count();
    beaten_by < k
}

pub fn top_k_set(p: &[f64], k: usize) -> Vec<usize> {
    (0..p.len()).filter(|&j| in_top_k(p, j, k)).collect()
}

/// Top-K as the k-subset with the largest total, found by enumerating every
/// subset. Only for small `C(m, k)`. Pass raw scores rather than peaked
/// probabilities, whose small terms vanish in the sum.
pub fn top_k_by_enumeration(p: &[f64], k: usize) -> Vec<usize> {
    fn walk(p: &[f64], start: usize, k: usize, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if cur.len() == k {
            let s: f64 = cur.iter().map(|&i| p[i]).sum();
            if s > best.0 {
                *best = (s, cur.clone());
            }
            return;
        }
        for i in start..p.len() {
            cur.push(i);
            walk(p, i + 1, k, cur, best);
            cur.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    walk(p, 0, k.min(p.len()), &mut Vec::new(), &mut best);
    best.1
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Adaptive { xi: f64, epsilon: f64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub image_scores: Vec<f64>,
    pub image_probs: Vec<f64>,
    pub caption_probs: Vec<f64>,
    pub omega: Vec<usize>,
    pub lambda: f64,
    pub predicted: usize,
}

/// Class scores: mean cosine to each member when `score_mean`, otherwise
/// cosine to the mean of the members.
pub fn class_scores(query: &[f64], members: &[Vec<Vec<f64>>], score_mean: bool) -> Vec<f64> {
    members
        .iter()
        .map(|ms| {
            if score_mean {
                ms.iter().map(|p| cos(query, p)).sum::<f64>() / ms.len() as f64
            } else {
                cos(query, &mean_vec(ms))
            }
        })
        .collect()
}

pub fn fuse(image_scores: Vec<f64>, image_probs: Vec<f64>, caption_probs: Vec<f64>, k: usize, weight: Weight) -> Reference {
    let omega = top_k_set(&image_probs, k);
    let lambda = match weight {
        Weight::Fixed(l) => l,
        Weight::Adaptive { xi, epsilon } => {
            let si: Vec<f64> = omega.iter().map(|&j| image_probs[j]).collect();
            let sc: Vec<f64> = omega.iter().map(|&j| caption_probs[j]).collect();
            let (a, b) = (pop_sd(&si), pop_sd(&sc));
            xi * b / (a * a + b * b).sqrt().max(epsilon)
        }
    };
    let mut predicted = omega[0];
    for &j in &omega {
        let fj = image_probs[j] + lambda * caption_probs[j];
        let fp = image_probs[predicted] + lambda * caption_probs[predicted];
        let better = fj > fp
            || (fj == fp && image_probs[j] > image_probs[predicted])
            || (fj == fp && image_probs[j] == image_probs[predicted] && j < predicted);
        if better {
            predicted = j;
        }
    }
    Reference { image_scores, image_probs, caption_probs, omega, lambda, predicted }
}

#[allow(clippy::too_many_arguments)]
pub fn reference_predict(
    image: &[f64],
    captions: &[Vec<f64>],
    members: &[Vec<Vec<f64>>],
    score_mean: bool,
    k: usize,
    weight: Weight,
    tau: f64,
) -> Reference {
    let scores = class_scores(image, members, score_mean);
    let si = softmax(&scores, tau);
    let sc = softmax(&class_scores(&mean_vec(captions), members, score_mean), tau);
    fuse(scores, si, sc, k, weight)
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn bundle_members(b: &EmbeddingBundle) -> Vec<Vec<Vec<f64>>> {
    (0..b.num_classes()).map(|c| b.class_members(c).map(to_f64).collect()).collect()
}

pub fn bundle_captions(b: &EmbeddingBundle, i: usize, upsilon: usize) -> Vec<Vec<f64>> {
    (0..upsilon).map(|j| to_f64(b.caption(i, j))).collect()
}

/// Arbitrary valid bundle with awkward but finite float values.
pub fn random_bundle(rng: &mut impl rand::Rng) -> EmbeddingBundle {
    use ice_core::{DatasetManifest, Reduction};

    fn value(rng: &mut impl rand::Rng) -> f32 {
        match rng.gen_range(0..10) {
            0 => -0.0,
            1 => f32::from_bits(rng.gen_range(1..0x0080_0000)),
            2 => f32::MAX,
            3 => -f32::MIN_POSITIVE,
            4 => loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            },
            _ => rng.gen_range(-1.0f32..1.0),
        }
    }

    let dim = rng.gen_range(1..=12);
    let n = rng.gen_range(1..=12);
    let upsilon = rng.gen_range(1..=4);
    let m = rng.gen_range(2..=6);
    let reduction = [Reduction::Single, Reduction::Centroid, Reduction::ScoreMean][rng.gen_range(0..3)];
    let members_per_class: Vec<usize> = (0..m)
        .map(|_| if reduction == Reduction::Single { 1 } else { rng.gen_range(1..=3) })
        .collect();
    let total: usize = members_per_class.iter().sum();
    let mut floats = |count: usize| (0..count).map(|_| value(rng)).collect::<Vec<f32>>();
    let image_embeddings = floats(n * dim);
    let caption_embeddings = floats(n * upsilon * dim);
    let prototype_members = floats(total * dim);
    let labels = (0..n).map(|_| rng.gen_range(0..m as u32)).collect();
    let class_names = (0..m).map(|c| ["", "cat", "chat noir", "\u{732b}"][c % 4].to_string() + &c.to_string()).collect();
    let caption_texts = rng
        .gen_bool(0.5)
        .then(|| (0..n * upsilon).map(|i| format!("a photo, caption {i} \u{2192} ok")).collect());
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("note".to_string(), serde_json::json!({ "seed": rng.gen::<u32>() }));
    let mut bundle = EmbeddingBundle {
        dim,
        upsilon,
        reduction,
        temperature_hint: rng.gen_range(0.5..200.0),
        members_per_class,
        image_embeddings,
        caption_embeddings,
        prototype_members,
        labels,
        class_names,
        caption_texts,
        manifest: DatasetManifest {
            dataset: "random".into(),
            split: "test".into(),
            source_model: "none".into(),
            caption_prompts: (0..upsilon).map(|j| format!("prompt {j}")).collect(),
            group: rng.gen_bool(0.5).then(|| "cross_dataset".to_string()),
            extra,
            ..Default::default()
        },
    };
    bundle.seal();
    bundle
}

pub fn float_bits(b: &EmbeddingBundle) -> Vec<u32> {
    b.image_embeddings
        .iter()
        .chain(&b.caption_embeddings)
        .chain(&b.prototype_members)
        .map(|v| v.to_bits())
        .collect()
}
