//! One function per subcommand. Commands read inputs, never rewrite them,
//! and stamp every artifact with the run's provenance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use betarate::corpus::{
    assemble_input, collect_rating_sets, filter_flagged, normalize_rating,
    rating_stats_normalized, write_records, AnnotationRecord, EvalInstance, Source,
};
use betarate::fusion::{
    calibrate_judge, fit_fusion_weights, fuse, FusionError, FusionModel, JudgeScores,
};
use betarate::metrics::{compute_report, krippendorff_alpha, MetricsError, ReliabilityMatrix};
use betarate::model::{
    load_model, save_model_with_meta, ModelError, ModelParameters, PredictionRecord, TextItem,
    TrainConfig, TrainItem,
};
use betarate::postprocess::{apply_clamp, fit_clamp_threshold, ClampFit, PostprocessError};
use betarate::splits::{
    lalm_holdout_split, stratified_split, Partition, Scenario, SplitManifest, SplitsError,
};

use crate::artifacts::{
    load_corpus, read_json, read_predictions, write_bytes, write_json, write_jsonl, FusedRecord,
    Provenance,
};
use crate::config::{require, RunConfig};
use crate::errors::{internal, missing, schema, CliError};

struct CorpusInput {
    instances: Vec<EvalInstance>,
    annotations: Vec<AnnotationRecord>,
    instances_path: PathBuf,
    /// File the annotations came from, for error attribution.
    annotations_path: PathBuf,
}

/// Loads instances, and annotations either from their own file or from the
/// instances file (the corpus format allows both record kinds per file).
fn corpus_inputs(cfg: &RunConfig) -> Result<CorpusInput, CliError> {
    let instances_path = require(&cfg.paths.instances, "instances")?.to_path_buf();
    let parsed = load_corpus(&instances_path)?;
    let (annotations, annotations_path) = match &cfg.paths.annotations {
        Some(path) if *path != instances_path => (load_corpus(path)?.annotations, path.clone()),
        _ => (parsed.annotations, instances_path.clone()),
    };
    Ok(CorpusInput { instances: parsed.instances, annotations, instances_path, annotations_path })
}

/// Post-filter per-instance (mean, variance) targets on the normalized scale.
fn targets(input: &CorpusInput, cfg: &RunConfig) -> Result<BTreeMap<String, (f64, Option<f64>)>, CliError> {
    let outcome = filter_flagged(&input.annotations, &input.instances, &cfg.filter)
        .map_err(|e| schema(&input.annotations_path, e))?;
    let sets = collect_rating_sets(&input.annotations, &cfg.filter);
    let mut out = BTreeMap::new();
    for (id, set) in &sets {
        if !outcome.valid.contains(id) {
            continue;
        }
        let stats = rating_stats_normalized(set).map_err(|e| schema(&input.annotations_path, e))?;
        out.insert(id.clone(), stats);
    }
    Ok(out)
}

fn text_items<'a>(
    instances: impl IntoIterator<Item = &'a EvalInstance>,
    cfg: &RunConfig,
) -> Vec<TextItem> {
    instances
        .into_iter()
        .map(|inst| TextItem {
            instance_id: inst.instance_id.clone(),
            text: assemble_input(
                inst,
                &cfg.separator,
                cfg.include_transcript,
                cfg.include_question,
                cfg.include_rationale,
            ),
        })
        .collect()
}

fn load_manifest(cfg: &RunConfig) -> Result<SplitManifest, CliError> {
    read_json(require(&cfg.paths.manifest, "manifest")?)
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::InvalidConfig(_) | ModelError::ExternalEncoderRequired(_) => {
            CliError::Config(e.to_string())
        }
        ModelError::EmptyTrainingSet => {
            CliError::UndefinedMetric("no trainable instances selected".into())
        }
        other => internal(other),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    match e {
        MetricsError::LengthMismatch { .. } => internal(e),
        other => CliError::UndefinedMetric(other.to_string()),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out_path = require(&cfg.paths.out, "out")?;
    let sc = cfg.synth.to_config(cfg.seed);
    sc.validate().map_err(CliError::Config)?;
    let corpus = betarate::synth::generate(&sc);

    let mut buf = Vec::from(Provenance::of(cfg).jsonl_header());
    buf.push(b'\n');
    write_records(&corpus.instances, &corpus.annotations, &mut buf).map_err(internal)?;
    write_bytes(out_path, &buf)?;
    eprintln!(
        "wrote {} instances, {} annotations to `{}`",
        corpus.instances.len(),
        corpus.annotations.len(),
        out_path.display()
    );
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest_path = require(&cfg.paths.manifest, "manifest")?;
    let input = corpus_inputs(cfg)?;
    let manifest = match cfg.scenario {
        Scenario::UnseenQuestion => stratified_split(&input.instances, cfg.seed),
        Scenario::UnseenLalm => lalm_holdout_split(&input.instances, &cfg.holdout, cfg.seed),
    }
    .map_err(|e| match e {
        SplitsError::UnknownLalm(_) | SplitsError::HoldoutCount(_) => {
            CliError::Config(e.to_string())
        }
        other => schema(&input.instances_path, other),
    })?;
    write_json(manifest_path, &manifest, &Provenance::of(cfg))?;
    let n = |p| manifest.ids_in(p).len();
    eprintln!(
        "split {} instances: {} train, {} dev, {} test",
        input.instances.len(),
        n(Partition::Train),
        n(Partition::Dev),
        n(Partition::Test)
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = require(&cfg.paths.model, "model")?;
    let input = corpus_inputs(cfg)?;
    let manifest = load_manifest(cfg)?;

    let outcome = filter_flagged(&input.annotations, &input.instances, &cfg.filter)
        .map_err(|e| schema(&input.annotations_path, e))?;
    let sets = collect_rating_sets(&input.annotations, &cfg.filter);
    let texts: BTreeMap<&str, TextItem> = text_items(&input.instances, cfg)
        .into_iter()
        .zip(&input.instances)
        .map(|(item, inst)| (inst.instance_id.as_str(), item))
        .collect();
    let items_of = |partition| -> Vec<TrainItem> {
        manifest
            .ids_in(partition)
            .into_iter()
            .filter(|id| outcome.valid.contains(id))
            .filter_map(|id| {
                let set = sets.get(&id)?;
                let item = texts.get(id.as_str())?;
                Some(TrainItem {
                    instance_id: id.clone(),
                    text: item.text.clone(),
                    ratings: set.normalized.clone(),
                })
            })
            .collect()
    };
    let train_items = items_of(Partition::Train);
    let dev_items = if cfg.train.dev_snapshot { items_of(Partition::Dev) } else { Vec::new() };

    let init = ModelParameters::init_with_hidden(cfg.encoder.clone(), cfg.seed, cfg.train.hidden_dim)
        .map_err(model_err)?;
    let tc = TrainConfig {
        learning_rate: cfg.train.learning_rate,
        batch_size: cfg.train.batch_size,
        max_epochs: cfg.train.max_epochs,
        patience: cfg.train.patience,
        seed: cfg.seed,
        warm_start: Some(init),
    };
    let trained = betarate::model::train(&train_items, &dev_items, &tc, &cfg.encoder, None)
        .map_err(model_err)?;

    let file = File::create(model_path)
        .map_err(|e| internal(format!("cannot write `{}`: {e}", model_path.display())))?;
    save_model_with_meta(&trained.params, &Provenance::of(cfg).meta(), BufWriter::new(file))
        .map_err(internal)?;
    let report = &trained.report;
    eprintln!(
        "trained on {} instances ({} dev): {} epochs, best epoch {}, final train NLL {:.4}",
        train_items.len(),
        dev_items.len(),
        report.epochs_run,
        report.best_epoch,
        report.train_nll.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_model_file(path: &Path) -> Result<ModelParameters, CliError> {
    let file = File::open(path).map_err(|e| missing(path, e))?;
    load_model(BufReader::new(file)).map_err(|e| schema(path, e))
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let predictions_path = require(&cfg.paths.predictions, "predictions")?;
    if cfg.partition.partition().is_some() {
        require(&cfg.paths.manifest, "manifest")?;
    }
    let params = load_model_file(require(&cfg.paths.model, "model")?)?;
    let input = corpus_inputs(cfg)?;

    let selected: Vec<&EvalInstance> = match cfg.partition.partition() {
        None => input.instances.iter().collect(),
        Some(partition) => {
            let ids: BTreeSet<String> = load_manifest(cfg)?.ids_in(partition).into_iter().collect();
            input.instances.iter().filter(|i| ids.contains(&i.instance_id)).collect()
        }
    };
    let items = text_items(selected.iter().copied(), cfg);
    let preds = betarate::model::predict(&items, &params, None).map_err(model_err)?;
    let rows: Vec<PredictionRecord> = preds.iter().map(PredictionRecord::from).collect();
    write_jsonl(predictions_path, &rows, &Provenance::of(cfg))?;
    eprintln!("scored {} instances to `{}`", rows.len(), predictions_path.display());
    Ok(())
}

pub fn clamp_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let clamp_path = require(&cfg.paths.clamp, "clamp")?;
    let predictions_path = require(&cfg.paths.predictions, "predictions")?;
    let input = corpus_inputs(cfg)?;
    let target_stats = targets(&input, cfg)?;
    let preds = read_predictions(predictions_path)?;

    // The rule is fitted on the dev partition when a manifest is given,
    // otherwise on every prediction row with a target.
    let dev_ids: Option<BTreeSet<String>> = match &cfg.paths.manifest {
        Some(_) => Some(load_manifest(cfg)?.ids_in(Partition::Dev).into_iter().collect()),
        None => None,
    };
    let mut dev_preds = Vec::new();
    let mut dev_target_means = Vec::new();
    for row in &preds {
        if dev_ids.as_ref().is_some_and(|ids| !ids.contains(&row.instance_id)) {
            continue;
        }
        if let Some(&(mean, _)) = target_stats.get(&row.instance_id) {
            dev_preds.push((row.mu, row.variance));
            dev_target_means.push(mean);
        }
    }
    let fit = fit_clamp_threshold(&dev_preds, &dev_target_means).map_err(|e| match e {
        PostprocessError::LengthMismatch { .. } => internal(e),
        other => CliError::UndefinedMetric(other.to_string()),
    })?;
    write_json(clamp_path, &fit, &Provenance::of(cfg))?;
    eprintln!(
        "clamp threshold {:.6} on {} dev points: objective {:.4} (unclamped {:.4})",
        fit.rule.variance_threshold,
        dev_preds.len(),
        fit.objective,
        fit.baseline
    );
    Ok(())
}

pub fn clamp_apply(cfg: &RunConfig) -> Result<(), CliError> {
    let out_path = require(&cfg.paths.out, "out")?;
    let fit: ClampFit<f64> = read_json(require(&cfg.paths.clamp, "clamp")?)?;
    let mut rows = read_predictions(require(&cfg.paths.predictions, "predictions")?)?;
    let mut clamped = 0usize;
    for row in &mut rows {
        let score = apply_clamp(row.mu, row.variance, &fit.rule);
        if score != row.mu {
            clamped += 1;
        }
        row.score = Some(score);
    }
    write_jsonl(out_path, &rows, &Provenance::of(cfg))?;
    eprintln!("clamped {clamped} of {} scores", rows.len());
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let predictions_path = require(&cfg.paths.predictions, "predictions")?;
    if cfg.partition.partition().is_some() {
        require(&cfg.paths.manifest, "manifest")?;
    }
    let input = corpus_inputs(cfg)?;
    let target_stats = targets(&input, cfg)?;
    let preds = read_predictions(predictions_path)?;

    let rows: Vec<&PredictionRecord> = match cfg.partition.partition() {
        None => preds.iter().collect(),
        Some(partition) => {
            let ids: BTreeSet<String> = load_manifest(cfg)?.ids_in(partition).into_iter().collect();
            let rows: Vec<&PredictionRecord> =
                preds.iter().filter(|r| ids.contains(&r.instance_id)).collect();
            let have: BTreeSet<&str> = rows.iter().map(|r| r.instance_id.as_str()).collect();
            for id in &ids {
                if target_stats.contains_key(id) && !have.contains(id.as_str()) {
                    return Err(schema(
                        predictions_path,
                        format!("no prediction for partition instance `{id}`"),
                    ));
                }
            }
            rows
        }
    };

    let mut pred_mu = Vec::with_capacity(rows.len());
    let mut pred_var = Vec::with_capacity(rows.len());
    let mut target_mu = Vec::with_capacity(rows.len());
    let mut target_var = Vec::with_capacity(rows.len());
    for row in &rows {
        let Some(&(mean, variance)) = target_stats.get(&row.instance_id) else {
            return Err(schema(
                predictions_path,
                format!("prediction for unknown or filtered instance `{}`", row.instance_id),
            ));
        };
        pred_mu.push(row.score.unwrap_or(row.mu));
        pred_var.push(row.variance);
        target_mu.push(mean);
        target_var.push(variance);
    }
    let report =
        compute_report(&pred_mu, &target_mu, &pred_var, &target_var).map_err(metrics_err)?;
    let mut value = serde_json::to_value(&report).map_err(internal)?;
    value["provenance"] = serde_json::to_value(Provenance::of(cfg)).map_err(internal)?;
    let text = serde_json::to_string_pretty(&value).map_err(internal)?;
    println!("{text}");
    if let Some(report_path) = &cfg.paths.report {
        write_bytes(report_path, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

pub fn agreement(cfg: &RunConfig) -> Result<(), CliError> {
    let input = corpus_inputs(cfg)?;
    let mut before = ReliabilityMatrix::new();
    for rec in &input.annotations {
        if let Some(rating) = rec.rating {
            before
                .insert(&rec.rater_id, &rec.instance_id, rating as f64)
                .map_err(|e| schema(&input.annotations_path, e))?;
        }
    }
    let outcome = filter_flagged(&input.annotations, &input.instances, &cfg.filter)
        .map_err(|e| schema(&input.annotations_path, e))?;
    let mut after = ReliabilityMatrix::new();
    let mut dropped_ratings = 0usize;
    for rec in &input.annotations {
        let Some(rating) = rec.rating else { continue };
        if !outcome.valid.contains(&rec.instance_id)
            || rec.feedback.intersection(&cfg.filter.drop_codes).next().is_some()
        {
            dropped_ratings += 1;
            continue;
        }
        after
            .insert(&rec.rater_id, &rec.instance_id, rating as f64)
            .map_err(|e| schema(&input.annotations_path, e))?;
    }
    let alpha_before = krippendorff_alpha(&before, cfg.alpha_level).map_err(metrics_err)?;
    let alpha_after = krippendorff_alpha(&after, cfg.alpha_level).map_err(metrics_err)?;
    let summary = serde_json::json!({
        "level": cfg.alpha_level,
        "alpha_before": alpha_before,
        "alpha_after": alpha_after,
        "instances_excluded": outcome.excluded.len(),
        "ratings_dropped": dropped_ratings,
        "provenance": Provenance::of(cfg),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(internal)?;
    println!("{text}");
    if let Some(report_path) = &cfg.paths.report {
        write_bytes(report_path, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

/// Reads one judge's scores: every record must carry a rating and share one
/// `judge:<id>` source.
fn load_judge(path: &Path) -> Result<JudgeScores<f64>, CliError> {
    let parsed = load_corpus(path)?;
    if parsed.annotations.is_empty() {
        return Err(schema(path, "no judge annotations"));
    }
    let mut judge_id: Option<String> = None;
    let mut scores = BTreeMap::new();
    for rec in &parsed.annotations {
        let Source::Judge(id) = &rec.source else {
            return Err(schema(path, format!("record by `{}` is not a judge score", rec.rater_id)));
        };
        match &judge_id {
            None => judge_id = Some(id.clone()),
            Some(existing) if existing != id => {
                return Err(schema(path, format!("mixed judge ids `{existing}` and `{id}`")));
            }
            _ => {}
        }
        let Some(rating) = rec.rating else {
            return Err(schema(path, format!("judge score for `{}` has no rating", rec.instance_id)));
        };
        let score = normalize_rating(rating).map_err(|e| schema(path, e))?;
        if scores.insert(rec.instance_id.clone(), score).is_some() {
            return Err(schema(path, format!("duplicate judge score for `{}`", rec.instance_id)));
        }
    }
    Ok(JudgeScores { judge_id: judge_id.expect("checked non-empty"), scores })
}

fn load_judges(cfg: &RunConfig, min: usize) -> Result<Vec<JudgeScores<f64>>, CliError> {
    if cfg.paths.judges.len() < min {
        return Err(CliError::Config(format!(
            "need at least {min} judge score file(s) (flag --judges or config paths.judges)"
        )));
    }
    cfg.paths.judges.iter().map(|p| load_judge(p)).collect()
}

pub fn fuse_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let fusion_path = require(&cfg.paths.fusion, "fusion")?;
    let judges = load_judges(cfg, 2)?;
    let input = corpus_inputs(cfg)?;
    let means: BTreeMap<String, f64> =
        targets(&input, cfg)?.into_iter().map(|(id, (mean, _))| (id, mean)).collect();

    // Calibrations are fitted on dev targets and weights on train targets
    // when a manifest is given; otherwise both use every target.
    let (dev_targets, train_targets) = match &cfg.paths.manifest {
        Some(_) => {
            let manifest = load_manifest(cfg)?;
            let pick = |partition| -> BTreeMap<String, f64> {
                manifest
                    .ids_in(partition)
                    .into_iter()
                    .filter_map(|id| means.get(&id).map(|&m| (id, m)))
                    .collect()
            };
            (pick(Partition::Dev), pick(Partition::Train))
        }
        None => (means.clone(), means.clone()),
    };

    let mut calibrations = Vec::new();
    for judge in &judges {
        let fit = calibrate_judge(judge, &dev_targets).map_err(fusion_err)?;
        if let Some(warning) = fit.warning {
            eprintln!("warning: judge `{}`: {warning}", judge.judge_id);
        }
        calibrations.push(fit.map);
    }
    let weights_fit =
        fit_fusion_weights(&judges, &train_targets, &calibrations).map_err(fusion_err)?;
    if let Some(warning) = weights_fit.warning {
        eprintln!("warning: {warning}");
    }

    let model = FusionModel {
        judge_ids: judges.iter().map(|j| j.judge_id.clone()).collect(),
        calibrations,
        weights: weights_fit.weights,
    };
    write_json(fusion_path, &model, &Provenance::of(cfg))?;
    let summary: Vec<String> = model
        .judge_ids
        .iter()
        .zip(&model.weights)
        .map(|(id, w)| format!("{id}={w:.3}"))
        .collect();
    eprintln!("fusion weights: {}", summary.join(", "));
    Ok(())
}

fn fusion_err(e: FusionError) -> CliError {
    match e {
        FusionError::TooFewJudges(_) => CliError::Config(e.to_string()),
        other => CliError::UndefinedMetric(other.to_string()),
    }
}

pub fn fuse_apply(cfg: &RunConfig) -> Result<(), CliError> {
    let out_path = require(&cfg.paths.out, "out")?;
    let fusion_path = require(&cfg.paths.fusion, "fusion")?;
    let judges = load_judges(cfg, 1)?;
    let model: FusionModel<f64> = read_json(fusion_path)?;

    let ids: Vec<String> = judges
        .iter()
        .flat_map(|j| j.scores.keys().cloned())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let fused = fuse(&judges, &model, &ids).map_err(|e| match e {
        FusionError::ModelShapeMismatch { .. } => schema(fusion_path, e),
        other => fusion_err(other),
    })?;
    let rows: Vec<FusedRecord> = fused
        .scores
        .iter()
        .map(|(id, &score)| FusedRecord {
            instance_id: id.clone(),
            score,
            variance: fused.variances.get(id).copied().flatten(),
        })
        .collect();
    write_jsonl(out_path, &rows, &Provenance::of(cfg))?;
    if !fused.missing.is_empty() {
        eprintln!("warning: {} instance(s) had no usable judge scores", fused.missing.len());
    }
    eprintln!("fused {} scores to `{}`", rows.len(), out_path.display());
    Ok(())
}
