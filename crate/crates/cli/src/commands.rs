use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use vqd::clustering::{kmeans_fit, ClusterModel, KMeansConfig};
use vqd::io::{
    build_features, load_annotations, load_aux_scores, load_predictions, load_vocabulary, Dataset,
    FeatureSet, Role, RunConfig,
};
use vqd::metrics::{partition_entropy_enumeration, AccuracyMetric};
use vqd::model::{AnswerVocabulary, Normalization};
use vqd::report::{self, ReportContext, RunManifest};
use vqd::synth::{self, SynthSpec};

use crate::args::{
    AssignArgs, BasePreds, EnumerateArgs, FitArgs, ReportArgs, SynthArgs, ValidateArgs,
};
use crate::exit::{parent_dir, OutputLock, Usage, ValidationFailed};

const BASE_ROLES: [(Role, &str); 3] = [(Role::I, "I"), (Role::Q, "Q"), (Role::QI, "QI")];

fn warn(dataset_warnings: &vqd::io::Warnings) {
    if dataset_warnings.total() > 0 {
        eprintln!("warning: {dataset_warnings}");
    }
}

fn vocabulary(path: Option<&Path>) -> Result<Option<AnswerVocabulary>> {
    Ok(path.map(load_vocabulary).transpose()?)
}

/// Loads the base-model files under the keys I, Q and QI.
fn add_base(
    dataset: &mut Dataset,
    roles: &mut RunConfig,
    files: [&Path; 3],
    strict: bool,
    manifest: &mut RunManifest,
) -> Result<()> {
    for ((role, key), path) in BASE_ROLES.iter().zip(files) {
        let loaded = load_predictions(path, None, dataset.vocab.as_ref(), strict)?;
        dataset.add_predictions(key, loaded)?;
        roles.set(*key, *role);
        manifest.add_input(&format!("pred_{}", key.to_lowercase()), path)?;
    }
    Ok(())
}

fn base_files(p: &BasePreds) -> [&Path; 3] {
    [&p.pred_i, &p.pred_q, &p.pred_qi]
}

fn features(dataset: &Dataset, roles: &RunConfig) -> Result<FeatureSet> {
    let fs = build_features(dataset, roles)?;
    if fs.missing_prediction > 0 {
        eprintln!(
            "warning: {} question(s) lack a base-model prediction and were skipped",
            fs.missing_prediction
        );
    }
    Ok(fs)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("{}: cannot write", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = KMeansConfig {
        k: args.k,
        max_iters: args.max_iters,
        tol: args.tol,
        n_restarts: args.restarts,
        seed: args.seed,
        ..KMeansConfig::default()
    };
    config.validate()?;
    let model_dir = parent_dir(&args.out_model);
    let assignments_path = args
        .out_assignments
        .clone()
        .unwrap_or_else(|| model_dir.join("fit_assignments.csv"));
    let _lock = OutputLock::acquire(&model_dir)?;

    let mut manifest = RunManifest::new(
        "fit",
        args.seed,
        json!({ "kmeans": config, "strict": args.strict }),
    );
    let annotations = match &args.annotations {
        Some(p) => {
            manifest.add_input("annotations", p)?;
            Some(load_annotations(p, args.strict)?)
        }
        None => None,
    };
    if let Some(p) = &args.vocab {
        manifest.add_input("vocab", p)?;
    }
    let mut dataset = Dataset::new(annotations, vocabulary(args.vocab.as_deref())?);
    let mut roles = RunConfig::default();
    add_base(
        &mut dataset,
        &mut roles,
        base_files(&args.preds),
        args.strict,
        &mut manifest,
    )?;
    let fs = features(&dataset, &roles)?;
    warn(&dataset.warnings);

    let out = kmeans_fit(&fs.features, &config)?;
    out.model.save(&args.out_model)?;
    write_file(
        &assignments_path,
        &report::assignments_csv(&out.assignments),
    )?;

    println!("cluster,level,size,H_I,H_Q,H_QI");
    for (c, m) in out.member_means.iter().enumerate() {
        println!(
            "{c},{},{},{:.4},{:.4},{:.4}",
            out.model.levels[c], out.sizes[c], m[0], m[1], m[2]
        );
    }
    println!(
        "inertia {:.6} over {} questions",
        out.model.inertia,
        fs.features.len()
    );

    manifest.warnings = dataset.warnings;
    manifest.warnings.missing_prediction += fs.missing_prediction;
    manifest.outputs = vec![file_name(&args.out_model), file_name(&assignments_path)];
    write_file(&model_dir.join("fit_manifest.json"), &manifest.to_json())
}

pub fn assign(args: &AssignArgs) -> Result<()> {
    let out_dir = parent_dir(&args.out);
    let model = ClusterModel::load(&args.model)?;
    let _lock = OutputLock::acquire(&out_dir)?;
    let mut manifest = RunManifest::new("assign", model.seed, json!({ "strict": args.strict }));
    manifest.add_input("model", &args.model)?;
    if let Some(p) = &args.vocab {
        manifest.add_input("vocab", p)?;
    }
    let mut dataset = Dataset::new(None, vocabulary(args.vocab.as_deref())?);
    let mut roles = RunConfig::default();
    add_base(
        &mut dataset,
        &mut roles,
        base_files(&args.preds),
        args.strict,
        &mut manifest,
    )?;
    let fs = features(&dataset, &roles)?;
    warn(&dataset.warnings);

    let assignments = model.assign_all(&fs.features);
    write_file(&args.out, &report::assignments_csv(&assignments))?;
    let mut sizes = vec![0usize; model.k];
    for a in &assignments {
        sizes[a.ordered_cluster] += 1;
    }
    println!("assigned {} questions", assignments.len());
    for (c, n) in sizes.iter().enumerate() {
        println!("cluster {c} ({}): {n}", model.levels[c]);
    }

    manifest.warnings = dataset.warnings;
    manifest.warnings.missing_prediction += fs.missing_prediction;
    manifest.outputs = vec![file_name(&args.out)];
    write_file(&out_dir.join("assign_manifest.json"), &manifest.to_json())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let base: Vec<&PathBuf> = [&args.pred_i, &args.pred_q, &args.pred_qi]
        .into_iter()
        .flatten()
        .collect();
    if !base.is_empty() && base.len() != 3 {
        return Err(Usage("--pred-i, --pred-q and --pred-qi must be given together".into()).into());
    }
    let mut seen = BTreeMap::new();
    for (id, _) in &args.eval_preds {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(Usage(format!("--eval-preds id {id:?} given twice")).into());
        }
    }
    let metric: AccuracyMetric = args.metric.into();
    let normalization: Normalization = args.normalization.into();

    let model = ClusterModel::load(&args.model)?;
    let assignments = report::read_assignments(&args.assignments, &model)?;
    let _lock = OutputLock::acquire(&args.out_dir)?;

    let mut manifest = RunManifest::new(
        "report",
        model.seed,
        json!({
            "metric": metric,
            "normalization": format!("{normalization:?}").to_lowercase(),
            "strict": args.strict,
            "evaluated": args.eval_preds.iter().map(|(id, _)| id).collect::<Vec<_>>(),
            "aux": args.aux.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        }),
    );
    manifest.add_input("annotations", &args.annotations)?;
    manifest.add_input("model", &args.model)?;
    manifest.add_input("assignments", &args.assignments)?;
    if let Some(p) = &args.vocab {
        manifest.add_input("vocab", p)?;
    }

    let annotations = load_annotations(&args.annotations, args.strict)?;
    let mut dataset = Dataset::new(Some(annotations), vocabulary(args.vocab.as_deref())?);
    let mut roles = RunConfig::default();
    if base.len() == 3 {
        add_base(
            &mut dataset,
            &mut roles,
            [base[0], base[1], base[2]],
            args.strict,
            &mut manifest,
        )?;
    }
    for (id, path) in &args.eval_preds {
        let loaded = load_predictions(path, None, dataset.vocab.as_ref(), args.strict)?;
        dataset.add_predictions(id, loaded)?;
        roles.set(id.clone(), Role::Evaluated);
        manifest.add_input(&format!("eval_{id}"), path)?;
    }
    let mut aux = BTreeMap::new();
    for (name, path) in &args.aux {
        aux.insert(name.clone(), load_aux_scores(path)?);
        manifest.add_input(&format!("aux_{name}"), path)?;
    }

    let ctx = ReportContext {
        dataset: &dataset,
        roles: &roles,
        metric,
        normalization,
    };
    let table = report::build_cluster_table(&ctx, &model, &assignments, &aux)?;
    let summary = report::build_model_summary(&ctx)?;
    let unique = report::build_unique_answer_table(&dataset, normalization)?;
    let hists = report::build_overlap_histograms(&ctx, &model, &assignments)?;

    let mut outputs = vec![
        (
            "cluster_table.csv".to_string(),
            report::cluster_table_csv(&table),
        ),
        (
            "model_summary.csv".to_string(),
            report::model_summary_csv(&summary),
        ),
        (
            "unique_answers.csv".to_string(),
            report::unique_answers_csv(&unique),
        ),
    ];
    for (c, h) in hists.iter().enumerate() {
        outputs.push((
            format!("overlap_hist_cluster{c}.csv"),
            report::overlap_histogram_csv(h),
        ));
    }
    for (name, contents) in &outputs {
        report::emit(&args.out_dir, name, contents)?;
    }

    let mut warnings = dataset.warnings;
    warnings.merge(&table.warnings);
    warn(&warnings);
    println!(
        "{} clustered questions, {} models, {} files written to {}",
        table.total(),
        table.models.len(),
        outputs.len() + 1,
        args.out_dir.display()
    );
    manifest.warnings = warnings;
    manifest.outputs = outputs.into_iter().map(|(n, _)| n).collect();
    report::emit(&args.out_dir, "run_manifest.json", &manifest.to_json())?;
    Ok(())
}

pub const PARTITIONS_FILE: &str = "fig2_partitions.csv";

pub fn enumerate(args: &EnumerateArgs) -> Result<()> {
    if args.n < 1 {
        return Err(Usage("--n must be at least 1".into()).into());
    }
    let rows = partition_entropy_enumeration(args.n);
    let _lock = OutputLock::acquire(&args.out)?;
    report::emit(&args.out, PARTITIONS_FILE, &report::partitions_csv(&rows))?;
    println!(
        "{} partitions of {} written to {}",
        rows.len(),
        args.n,
        args.out.join(PARTITIONS_FILE).display()
    );
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> Result<()> {
    if args.annotations.is_none() && args.preds.is_empty() && args.vocab.is_none() {
        return Err(
            Usage("nothing to validate; pass --annotations, --preds or --vocab".into()).into(),
        );
    }
    let mut failed = 0;
    let mut report_result = |path: &Path, result: Result<String, anyhow::Error>| match result {
        Ok(summary) => println!("ok {}: {summary}", path.display()),
        Err(e) => {
            failed += 1;
            println!("error {e:#}");
        }
    };

    let vocab = match &args.vocab {
        Some(p) => match load_vocabulary(p) {
            Ok(v) => {
                report_result(p, Ok(format!("{} answers", v.len())));
                Some(v)
            }
            Err(e) => {
                report_result(p, Err(e.into()));
                None
            }
        },
        None => None,
    };
    if let Some(p) = &args.annotations {
        let r = load_annotations(p, true)
            .map(|l| format!("{} records", l.records.len()))
            .map_err(Into::into);
        report_result(p, r);
    }
    for p in &args.preds {
        let r = load_predictions(p, None, vocab.as_ref(), true)
            .map(|l| {
                let id = l
                    .records
                    .first()
                    .map(|r| r.model_id.as_str())
                    .unwrap_or("-");
                format!("{} records, model {id}", l.records.len())
            })
            .map_err(Into::into);
        report_result(p, r);
    }
    if failed > 0 {
        return Err(ValidationFailed(failed).into());
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", p.display())))?
        }
        None => synth::three_level_spec(args.n, 0, args.models),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let _lock = OutputLock::acquire(&args.out_dir)?;
    let data = synth::generate(&spec)?;
    let written = synth::write(&data, &args.out_dir)?;

    let mut manifest = RunManifest::new("synth", spec.seed, serde_json::to_value(&spec)?);
    if let Some(p) = &args.spec {
        manifest.add_input("spec", p)?;
    }
    manifest.outputs = written.iter().map(|p| file_name(p)).collect();
    report::emit(&args.out_dir, "synth_manifest.json", &manifest.to_json())?;
    println!(
        "{} questions, {} prediction files written to {}",
        data.annotations.len(),
        data.predictions.len(),
        args.out_dir.display()
    );
    Ok(())
}
