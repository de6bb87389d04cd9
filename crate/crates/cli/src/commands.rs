use std::fs;
use std::path::{Path, PathBuf};

use ice_core::bundle::{crc64, inspect_file};
use ice_core::eval::{group_averages, metrics_csv, predict_samples, DEFAULT_XI_GRID};
use ice_core::{
    ablate as run_ablation, evaluate_with, read_bundle, synth_bundle, AblationAxis, AxisValue, EmbeddingBundle,
    EvalOptions, EvalReport, IceError, Method, SynthSpec,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{AblateArgs, EvaluateArgs, Failure, PredictArgs, SynthArgs, ValidateArgs};

fn config_error(e: IceError) -> Failure {
    Failure::Config(e.to_string())
}

fn load(path: &Path) -> Result<EmbeddingBundle, Failure> {
    read_bundle(path).map_err(|e| Failure::Bundle(format!("{}: {e}", path.display())))
}

fn single_bundle(flag: Option<PathBuf>, rc: &RunConfig) -> Result<PathBuf, Failure> {
    flag.or_else(|| rc.bundles.first().cloned())
        .ok_or_else(|| Failure::Config("no bundle given (use --bundle or the bundles key)".into()))
}

fn eval_options(rc: &RunConfig) -> EvalOptions {
    EvalOptions { top_ks: rc.top_ks.clone(), workers: rc.workers }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Writes every file or none: all contents go to temporary siblings first.
fn write_all(files: &[(PathBuf, String)]) -> Result<(), Failure> {
    let tmp = |p: &Path| {
        let mut s = p.as_os_str().to_owned();
        s.push(".tmp");
        PathBuf::from(s)
    };
    for (path, text) in files {
        if let Err(e) = fs::write(tmp(path), text) {
            for (p, _) in files {
                let _ = fs::remove_file(tmp(p));
            }
            return Err(Failure::Io(format!("{}: {e}", path.display())));
        }
    }
    for (path, _) in files {
        fs::rename(tmp(path), path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

pub fn predict(args: PredictArgs) -> Result<(), Failure> {
    let rc = args.config.resolve(&[], None)?;
    let path = single_bundle(args.bundle, &rc)?;
    let bundle = load(&path)?;
    let n = bundle.num_samples();
    if let Some(bad) = args.ids.iter().find(|&&i| i >= n) {
        return Err(Failure::OutOfRange(format!("sample id {bad} out of range [0, {n})")));
    }
    let records = predict_samples(&bundle, &rc.ice, args.reduction, &args.ids).map_err(config_error)?;
    for r in records {
        let top: Vec<String> = r.top_k.iter().map(usize::to_string).collect();
        println!(
            "id={} image_argmax={} top_k={} lambda={} ice={} label={}{}",
            r.id,
            r.image_argmax,
            top.join(","),
            r.lambda_used,
            r.ice_prediction,
            r.label,
            if r.fallback { " fallback" } else { "" }
        );
    }
    Ok(())
}

fn print_table(reports: &[EvalReport]) {
    let methods: Vec<String> = reports[0].methods.iter().map(|m| m.method.to_string()).collect();
    let averages = group_averages(reports);
    let width = reports
        .iter()
        .map(|r| r.bundle.len())
        .chain(averages.iter().map(|g| g.group.len() + 4))
        .max()
        .unwrap_or(0)
        .max(6);
    print!("{:width$}", "bundle");
    for m in &methods {
        print!("  {m:>14}");
    }
    println!();
    for r in reports {
        print!("{:width$}", r.bundle);
        for m in &r.methods {
            print!("  {:>14.2}", m.top1);
        }
        println!();
    }
    if !averages.is_empty() {
        println!();
        let mut groups: Vec<&str> = averages.iter().map(|g| g.group.as_str()).collect();
        groups.dedup();
        for group in groups {
            print!("{:width$}", format!("avg {group}"));
            for g in averages.iter().filter(|g| g.group == group) {
                print!("  {:>14.2}", g.mean_top1);
            }
            println!();
        }
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let rc = args.config.resolve(&args.bundles, args.methods.as_deref())?;
    if rc.bundles.is_empty() {
        return Err(Failure::Config("no bundles given (use --bundle or the bundles key)".into()));
    }
    let bundles = rc.bundles.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let opts = eval_options(&rc);
    let mut reports = Vec::with_capacity(bundles.len());
    for (path, bundle) in rc.bundles.iter().zip(&bundles) {
        let mut r = evaluate_with(bundle, &rc.ice, &rc.methods, &opts).map_err(config_error)?;
        r.bundle = stem(path);
        for w in &r.warnings {
            eprintln!("warning: {}: {w}", r.bundle);
        }
        reports.push(r);
    }

    let json_path = args.json.or_else(|| rc.report_json.clone()).unwrap_or_else(|| "ice-report.json".into());
    let csv_path = args.csv.or_else(|| rc.report_csv.clone()).unwrap_or_else(|| "ice-report.csv".into());
    let full = json!({ "run_config": rc, "reports": reports });
    write_all(&[(json_path.clone(), to_json(&full)), (csv_path.clone(), metrics_csv(&reports))])?;

    print_table(&reports);
    println!();
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn default_values(axis: AblationAxis, bundle: &EmbeddingBundle) -> Vec<AxisValue> {
    match axis {
        AblationAxis::Xi | AblationAxis::LambdaFixed => DEFAULT_XI_GRID.iter().map(|&x| AxisValue::Value(x)).collect(),
        AblationAxis::K => (1..=8).map(|k| AxisValue::Value(k as f64)).collect(),
        AblationAxis::Upsilon => (1..=bundle.upsilon).map(|u| AxisValue::Value(u as f64)).collect(),
    }
}

pub fn ablate(args: AblateArgs) -> Result<(), Failure> {
    let axis: AblationAxis = args.axis.parse().map_err(config_error)?;
    let values = args
        .values
        .iter()
        .map(|v| v.parse::<AxisValue>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(config_error)?;
    let rc = args.config.resolve(&[], None)?;
    let path = single_bundle(args.bundle, &rc)?;
    let bundle = load(&path)?;
    let values = if values.is_empty() { default_values(axis, &bundle) } else { values };
    let grid = run_ablation(&bundle, &rc.ice, axis, &values, &eval_options(&rc)).map_err(config_error)?;

    let out = args.out.or_else(|| rc.report_csv.clone()).unwrap_or_else(|| "ablation.csv".into());
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".config.json");
    let labels: Vec<&str> = grid.rows.iter().map(|r| r.value.as_str()).collect();
    let echo = json!({ "run_config": rc, "bundle": path, "axis": axis, "values": labels });
    write_all(&[(out.clone(), grid.to_csv()), (PathBuf::from(sidecar), to_json(&echo))])?;

    let paired = grid.rows.iter().any(|r| r.top1_fixed.is_some());
    println!("{:>8}  {:>8}{}", axis.as_str(), "top1", if paired { "  top1_fixed" } else { "" });
    for r in &grid.rows {
        match r.top1_fixed {
            Some(f) => println!("{:>8}  {:>8.2}  {:>10.2}", r.value, r.top1, f),
            None => println!("{:>8}  {:>8.2}", r.value, r.top1),
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn validate_bundle(args: ValidateArgs) -> Result<(), Failure> {
    let report = inspect_file(&args.path);
    if report.is_clean() {
        let s = report.summary.expect("clean bundles decode");
        println!("OK {}: N={} m={} l={} upsilon={}", args.path.display(), s.samples, s.classes, s.dim, s.upsilon);
        return Ok(());
    }
    let mut msg = format!("{} failed validation:", args.path.display());
    for issue in &report.issues {
        msg.push_str("\n  - ");
        msg.push_str(issue);
    }
    Err(Failure::Bundle(msg))
}

pub fn synth(args: SynthArgs) -> Result<(), Failure> {
    let rc = args.config.resolve(&[], None)?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        samples: args.samples.unwrap_or(d.samples),
        classes: args.classes.unwrap_or(d.classes),
        dim: args.dim.unwrap_or(d.dim),
        upsilon: args.captions.unwrap_or(d.upsilon),
        caption_signal: args.caption_signal.unwrap_or(d.caption_signal),
        image_noise: args.image_noise.unwrap_or(d.image_noise),
        caption_noise: args.caption_noise.unwrap_or(d.caption_noise),
        caption_noise_spread: args.caption_noise_spread.unwrap_or(d.caption_noise_spread),
        prompts_per_class: args.prompts_per_class.unwrap_or(d.prompts_per_class),
        prompt_noise: args.prompt_noise.unwrap_or(d.prompt_noise),
        temperature_hint: args.temperature_hint.unwrap_or(d.temperature_hint),
        with_caption_texts: args.with_caption_texts,
        seed: rc.seed,
    };
    let mut bundle = synth_bundle(&spec).map_err(config_error)?;
    bundle.manifest.group = args.group;
    let report = evaluate_with(&bundle, &rc.ice, &Method::default_set(), &eval_options(&rc)).map_err(config_error)?;
    let bytes = bundle.to_bytes().map_err(config_error)?;
    let checksum = crc64(&bytes[..bytes.len() - 8]);
    fs::write(&args.out, &bytes).map_err(|e| Failure::Io(format!("{}: {e}", args.out.display())))?;

    println!(
        "wrote {}: N={} m={} l={} upsilon={} seed={} crc64={checksum:016x}",
        args.out.display(),
        spec.samples,
        spec.classes,
        spec.dim,
        spec.upsilon,
        spec.seed
    );
    println!(
        "caption_signal={} image_noise={} caption_noise={} prompts_per_class={}",
        spec.caption_signal, spec.image_noise, spec.caption_noise, spec.prompts_per_class
    );
    for m in &report.methods {
        println!("{:>14}  {:6.2}%", m.method.to_string(), m.top1);
    }
    for t in &report.top_k_accuracy {
        println!("{:>14}  {:6.2}%", format!("image top-{}", t.k), t.accuracy);
    }
    Ok(())
}
