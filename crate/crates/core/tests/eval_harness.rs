use ice_core::eval::{group_averages, metrics_csv, quadrant_report, top_k_accuracy, Quadrant};
use ice_core::{
    ablate, evaluate, evaluate_with, synth_bundle, AblationAxis, AxisValue, EmbeddingBundle, EvalOptions, IceConfig,
    IceError, LambdaMode, Method, MethodKind, Reduction, SynthSpec,
};

fn bundle(spec: SynthSpec) -> EmbeddingBundle {
    synth_bundle(&spec).unwrap()
}

fn within_three_se(observed_pct: f64, p: f64, n: usize) {
    let se = (p * (1.0 - p) / n as f64).sqrt() * 100.0;
    assert!((observed_pct - 100.0 * p).abs() <= 3.0 * se, "{observed_pct} vs {} +- {}", 100.0 * p, 3.0 * se);
}

#[test]
fn clean_captions_are_perfect() {
    let b = bundle(SynthSpec { samples: 500, caption_signal: 1.0, caption_noise: 0.0, image_noise: 2.0, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &Method::default_set()).unwrap();
    assert_eq!(r.top1(MethodKind::CaptionOnly), Some(100.0));
}

#[test]
fn uninformative_captions_score_at_chance() {
    let b = bundle(SynthSpec { samples: 3000, classes: 10, caption_signal: 0.0, seed: 5, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &[Method::caption_only()]).unwrap();
    within_three_se(r.methods[0].top1, 0.1, 3000);
}

#[test]
fn clean_images_survive_misleading_captions() {
    let b = bundle(SynthSpec { samples: 1000, caption_signal: 0.0, image_noise: 0.0, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &Method::default_set()).unwrap();
    assert_eq!(r.top1(MethodKind::ImageOnly), Some(100.0));
    assert_eq!(r.top1(MethodKind::Ice), Some(100.0));
}

#[test]
fn top_k_accuracy_at_chance_and_at_m() {
    let b = bundle(SynthSpec { samples: 4000, classes: 10, image_noise: 1e4, seed: 8, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &[Method::image_only()]).unwrap();
    within_three_se(top_k_accuracy(&r.records, 5), 0.5, 4000);
    assert_eq!(top_k_accuracy(&r.records, 10), 100.0);
    assert_eq!(top_k_accuracy(&r.records, 0), 0.0);
    assert_eq!(r.top_k_accuracy.iter().map(|t| t.k).collect::<Vec<_>>(), [1, 5]);
}

#[test]
fn strong_captions_fix_more_than_they_break() {
    let b = bundle(SynthSpec { samples: 2000, caption_signal: 1.0, caption_noise: 0.2, image_noise: 3.0, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &Method::default_set()).unwrap();
    assert!(r.quadrants.fixed > r.quadrants.broken, "{:?}", r.quadrants);
    assert!(r.top1(MethodKind::Ice) > r.top1(MethodKind::ImageOnly));
}

#[test]
fn k_of_one_and_full_upsilon_match_plain_evaluation() {
    let b = bundle(SynthSpec { samples: 600, classes: 12, image_noise: 2.0, seed: 2, ..Default::default() });
    let cfg = IceConfig::default();
    let opts = EvalOptions::default();
    let full = evaluate(&b, &cfg, &Method::default_set()).unwrap();

    let k = ablate(&b, &cfg, AblationAxis::K, &[AxisValue::Value(1.0), AxisValue::Max], &opts).unwrap();
    assert_eq!(k.rows[0].top1, full.top1(MethodKind::ImageOnly).unwrap());
    assert_eq!(k.rows[1].value, "max");
    let at_m = evaluate(&b, &IceConfig { k: 12, ..cfg.clone() }, &[Method::ice()]).unwrap();
    assert_eq!(k.rows[1].top1, at_m.methods[0].top1);

    let u = ablate(&b, &cfg, AblationAxis::Upsilon, &[AxisValue::Value(3.0)], &opts).unwrap();
    assert_eq!(u.rows[0].top1, full.top1(MethodKind::Ice).unwrap());
}

#[test]
fn ablation_rejects_bad_requests() {
    let b = bundle(SynthSpec { samples: 50, ..Default::default() });
    let cfg = IceConfig::default();
    let opts = EvalOptions::default();
    assert!(matches!("temperature".parse::<AblationAxis>(), Err(IceError::InvalidAxis(_))));
    assert!(matches!(
        ablate(&b, &cfg, AblationAxis::Upsilon, &[AxisValue::Value(4.0)], &opts),
        Err(IceError::InvalidValue(_))
    ));
    assert!(matches!(ablate(&b, &cfg, AblationAxis::Xi, &[AxisValue::Max], &opts), Err(IceError::InvalidValue(_))));
    assert!(matches!(ablate(&b, &cfg, AblationAxis::K, &[AxisValue::Value(2.5)], &opts), Err(IceError::InvalidValue(_))));
    assert!(matches!(ablate(&b, &cfg, AblationAxis::K, &[], &opts), Err(IceError::InvalidValue(_))));
    assert!(matches!(
        evaluate(&b, &IceConfig { upsilon: Some(9), ..cfg.clone() }, &[Method::ice()]),
        Err(IceError::InvalidValue(_))
    ));
    assert!(matches!(
        evaluate(&b, &IceConfig { k: 0, ..cfg }, &[Method::ice()]),
        Err(IceError::InvalidConfig(_))
    ));
}

#[test]
fn xi_sweep_favours_some_caption_weight() {
    let b = bundle(SynthSpec { samples: 3000, classes: 20, image_noise: 3.0, caption_noise: 3.0, seed: 1, ..Default::default() });
    let values = [AxisValue::Value(0.0), AxisValue::Value(0.08)];
    let g = ablate(&b, &IceConfig::default(), AblationAxis::Xi, &values, &EvalOptions::default()).unwrap();
    assert!(g.rows[1].top1 >= g.rows[0].top1, "{:?}", g.rows);
    assert_eq!(g.rows[0].top1, g.rows[0].top1_fixed.unwrap());
    let csv = g.to_csv();
    assert!(csv.starts_with("axis,value,top1,top1_fixed\nxi,0,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn evaluation_is_deterministic_across_worker_counts() {
    let b = bundle(SynthSpec { samples: 700, image_noise: 2.0, seed: 6, ..Default::default() });
    let cfg = IceConfig::default();
    let one = evaluate_with(&b, &cfg, &Method::default_set(), &EvalOptions { workers: Some(1), ..Default::default() }).unwrap();
    let four = evaluate_with(&b, &cfg, &Method::default_set(), &EvalOptions { workers: Some(4), ..Default::default() }).unwrap();
    assert_eq!(one, four);
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
}

#[test]
fn reductions_coincide_for_identical_prompts() {
    let same = bundle(SynthSpec { samples: 300, prompts_per_class: 3, prompt_noise: 0.0, image_noise: 1.5, ..Default::default() });
    let spread = bundle(SynthSpec { samples: 300, prompts_per_class: 3, prompt_noise: 1.0, image_noise: 1.5, ..Default::default() });
    let methods = [
        Method::ice().with_reduction(Reduction::Centroid),
        Method::ice().with_reduction(Reduction::ScoreMean),
    ];
    let cfg = IceConfig::default();
    let r = evaluate(&same, &cfg, &methods).unwrap();
    assert_eq!(r.methods[0].correct, r.methods[1].correct);
    assert_eq!(r.primary_reduction, Reduction::Centroid);
    let r = evaluate(&spread, &cfg, &methods).unwrap();
    assert_eq!(r.methods.len(), 2);
    assert!(matches!(
        evaluate(&spread, &cfg, &[Method::ice().with_reduction(Reduction::Single)]),
        Err(IceError::InvariantViolation(_))
    ));
}

#[test]
fn oversized_k_is_clamped_with_a_warning() {
    let b = bundle(SynthSpec { samples: 100, classes: 4, ..Default::default() });
    let r = evaluate(&b, &IceConfig { k: 9, ..IceConfig::default() }, &[Method::ice()]).unwrap();
    assert!(r.warnings.iter().any(|w| w.contains("K=9")));
    assert!(r.records.iter().all(|rec| rec.top_k.len() == 4));
}

#[test]
fn degenerate_caption_centroid_falls_back() {
    let mut b = bundle(SynthSpec { samples: 20, upsilon: 2, dim: 8, ..Default::default() });
    let first: Vec<f32> = b.caption(0, 0).to_vec();
    for (d, v) in first.iter().enumerate() {
        b.caption_embeddings[8 + d] = -v;
    }
    b.seal();
    let r = evaluate(&b, &IceConfig::default(), &Method::default_set()).unwrap();
    assert_eq!(r.fallback_count, 1);
    assert!(r.records[0].fallback);
    assert_eq!(r.records[0].ice_prediction, r.records[0].image_argmax);
    assert_eq!(r.records[0].lambda_used, 0.0);
    assert!(!r.warnings.is_empty());
}

#[test]
fn reports_echo_config_and_group() {
    let mut a = bundle(SynthSpec { samples: 100, seed: 1, ..Default::default() });
    a.manifest.group = Some("cross_dataset".into());
    let mut b = bundle(SynthSpec { samples: 100, seed: 2, ..Default::default() });
    b.manifest.group = Some("cross_dataset".into());
    let cfg = IceConfig { k: 3, lambda_mode: LambdaMode::Fixed(0.2), ..IceConfig::default() };
    let reports: Vec<_> = [a, b].iter().map(|x| evaluate(x, &cfg, &Method::default_set()).unwrap()).collect();
    assert_eq!(reports[0].config.upsilon, Some(3));

    let csv = metrics_csv(&reports);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bundle,group,method,top1,correct,samples,K,xi,epsilon,lambda_mode,tau,upsilon"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("synthetic,cross_dataset,image_only,"), "{row}");
    assert!(row.ends_with(",3,0.08,0.000000000001,fixed(0.2),1,3"), "{row}");

    let avg = group_averages(&reports);
    assert_eq!(avg.len(), 3);
    let ice = avg.iter().find(|g| g.method == Method::ice()).unwrap();
    assert_eq!(ice.bundles, 2);
    let expected = (reports[0].top1(MethodKind::Ice).unwrap() + reports[1].top1(MethodKind::Ice).unwrap()) / 2.0;
    assert!((ice.mean_top1 - expected).abs() < 1e-12);
}

#[test]
fn quadrant_exemplars_carry_captions() {
    let b = bundle(SynthSpec { samples: 400, image_noise: 3.0, caption_signal: 1.0, caption_noise: 0.2, with_caption_texts: true, ..Default::default() });
    let r = evaluate(&b, &IceConfig::default(), &[Method::ice()]).unwrap();
    let q = quadrant_report(&r.records, Some(&b), 2);
    assert_eq!(q.counts, r.quadrants);
    let fixed: Vec<_> = q.exemplars.iter().filter(|e| e.quadrant == Quadrant::Fixed).collect();
    assert_eq!(fixed.len(), 2.min(r.quadrants.fixed));
    assert!(fixed.iter().all(|e| e.captions.len() == 3 && e.ice_prediction == e.label));
    assert!(quadrant_report(&r.records, None, 1).exemplars.iter().all(|e| e.captions.is_empty()));
}
