use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use dbiqa::eval::{
    evaluate_session, gmad_competition, level_oracle_score, make_splits, protocol_items, read_scores, run_protocol,
    write_scores, EvalReport, ProtocolItem, ScoreRow, SplitPlan,
};
use dbiqa::forge::{read_manifest, synthesize_dataset, SampleRecord, MANIFEST_NAME, PRISTINE_DIR};
use dbiqa::gradcheck::run_suite;
use dbiqa::image::RgbImage;
use dbiqa::model::{build_dbcnn, finetune as run_finetune, pretrain_stream, scnn_pretrain, ClassifierSample, DbCnnModel, QualitySample};
use dbiqa::nn::Checkpoint;
use dbiqa::toy::{proxy_score, shape_set, toy_sources};
use dbiqa::write_atomic;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{Common, SplitKind, StreamKind};

/// Validates and logs the resolved configuration, creates the output
/// directory and records the configuration in it.
fn start(common: &Common, cfg: &RunConfig, command: &str) -> CliResult<PathBuf> {
    cfg.validate()?;
    let text = cfg.to_toml()?;
    info!("{command}: resolved configuration\n{text}");
    let out = common.out.clone().unwrap_or_else(|| common.root.join(command));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    write_atomic(&out.join("run_config.toml"), text.as_bytes())?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(dbiqa::Error::from)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn data_dir(common: &Common, data: Option<PathBuf>) -> PathBuf {
    data.unwrap_or_else(|| common.root.join("synth"))
}

fn load_corpus(data: &Path) -> CliResult<Vec<SampleRecord>> {
    let records = read_manifest(&data.join(MANIFEST_NAME))?;
    if records.is_empty() {
        return Err(CliError::validation(format!("{} lists no records", data.join(MANIFEST_NAME).display())));
    }
    Ok(records)
}

fn source_ids(records: &[SampleRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records.iter().map(|r| r.source_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Corpus items, with pristine copies when the corpus has them.
fn corpus_items(data: &Path, records: &[SampleRecord]) -> Vec<ProtocolItem> {
    let pristine = data.join(PRISTINE_DIR).is_dir().then_some(PRISTINE_DIR);
    protocol_items(records, pristine)
}

fn score_map(path: &Path, negate: bool) -> CliResult<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for row in read_scores(path)? {
        let score = if negate { -row.score } else { row.score };
        if map.insert(row.path.clone(), score).is_some() {
            return Err(CliError::validation(format!("{}: duplicate path {}", path.display(), row.path)));
        }
    }
    Ok(map)
}

fn lookup(map: &BTreeMap<String, f64>, paths: &[&str], what: &str) -> CliResult<Vec<f64>> {
    let missing: Vec<&str> = paths.iter().copied().filter(|p| !map.contains_key(*p)).collect();
    if let Some(first) = missing.first() {
        return Err(CliError::validation(format!("{what} lacks {} of {} paths (first: {first})", missing.len(), paths.len())));
    }
    Ok(paths.iter().map(|p| map[*p]).collect())
}

pub fn make_sources(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let out = start(common, cfg, "sources")?;
    let sources = toy_sources("src", cfg.sources.count, cfg.sources.side, cfg.seed)?;
    for src in &sources {
        src.image.save_ppm(&out.join(format!("{}.ppm", src.id)))?;
    }
    info!("wrote {} sources to {}", sources.len(), out.display());
    Ok(())
}

fn list_sources(dir: &Path, allow_png: bool) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Io(format!("cannot list {}: {e}", dir.display())))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let image = matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm")) || (allow_png && ext.as_deref() == Some("png"));
        if path.is_file() && image {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn synth(common: &Common, cfg: &RunConfig, sources: Option<PathBuf>) -> CliResult<()> {
    let sources = sources.unwrap_or_else(|| common.root.join("sources"));
    let out = start(common, cfg, "synth")?;
    let paths = list_sources(&sources, cfg.synth.allow_png)?;
    let result = synthesize_dataset(&paths, &out, &cfg.synth, cfg.seed)?;
    for (path, why) in &result.skipped {
        warn!("skipped {}: {why}", path.display());
    }
    info!("{} records from {} sources in {}", result.records.len(), paths.len() - result.skipped.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    report: &'a dbiqa::model::TrainReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<&'a SplitPlan>,
}

fn load_classifier_set(labels: &Path, stream: &dbiqa::model::StreamConfig) -> CliResult<Vec<ClassifierSample>> {
    let base = labels.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(labels).map_err(|e| CliError::Io(format!("{}: {e}", labels.display())))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::validation(format!("{}: {e}", labels.display())))?;
        let (Some(path), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(CliError::validation(format!("{}: expected `path,label` rows", labels.display())));
        };
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| CliError::validation(format!("{}: bad label {label:?}", labels.display())))?;
        let img = RgbImage::load(&base.join(path), true)?;
        out.push(ClassifierSample::from_image(&img, label, stream)?);
    }
    if out.is_empty() {
        return Err(CliError::validation(format!("{} has no rows", labels.display())));
    }
    Ok(out)
}

pub fn pretrain(
    common: &Common,
    cfg: &RunConfig,
    stream: StreamKind,
    data: Option<PathBuf>,
    labels: Option<PathBuf>,
) -> CliResult<()> {
    match stream {
        StreamKind::Scnn => {
            let data = data_dir(common, data);
            let out = start(common, cfg, "pretrain")?;
            let records = load_corpus(&data)?;
            let plan = make_splits(&source_ids(&records), 1, cfg.seed)?.remove(0);
            let (train, held) = plan.partition(&records);
            let load = |recs: Vec<&SampleRecord>| -> CliResult<Vec<ClassifierSample>> {
                recs.into_iter()
                    .map(|r| {
                        let img = RgbImage::load(&data.join(&r.relative_path), true)?;
                        Ok(ClassifierSample::from_image(&img, r.class_index, &cfg.pretrain.scnn)?)
                    })
                    .collect()
            };
            let (train, held) = (load(train)?, load(held)?);
            info!("distortion stream: {} training and {} held-out images", train.len(), held.len());
            let (_, ckpt, report) = scnn_pretrain(&cfg.pretrain.scnn, &train, &held, &cfg.pretrain.scnn_adam, cfg.seed)?;
            ckpt.save(&out.join("scnn.ckpt"))?;
            write_json(&out.join("report.json"), &PretrainSummary { report: &report, split: Some(&plan) })?;
            info!(
                "epoch-0 loss {:.4}, train accuracy {:.4}, held-out accuracy {:.4}",
                report.initial_loss,
                report.train_accuracy,
                report.held_out_accuracy.unwrap_or(f64::NAN)
            );
        }
        StreamKind::Aux => {
            let mut stream_cfg = cfg.pretrain.aux.clone();
            let out = start(common, cfg, "pretrain-aux")?;
            let samples = match &labels {
                Some(path) => load_classifier_set(path, &stream_cfg)?,
                None => shape_set(cfg.pretrain.shape_count, cfg.pretrain.shape_side, cfg.seed)?
                    .iter()
                    .map(|(img, label)| ClassifierSample::from_image(img, *label, &stream_cfg))
                    .collect::<dbiqa::Result<_>>()?,
            };
            let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
            if let Some(last) = stream_cfg.fc_widths.last_mut() {
                *last = classes;
            }
            info!("auxiliary stream: {} images, {classes} classes", samples.len());
            let (_, ckpt, report) = pretrain_stream(&stream_cfg, &samples, &[], &cfg.pretrain.aux_adam, cfg.seed)?;
            ckpt.save(&out.join("aux.ckpt"))?;
            write_json(&out.join("report.json"), &PretrainSummary { report: &report, split: None })?;
            info!("train accuracy {:.4}", report.train_accuracy);
        }
    }
    Ok(())
}

pub struct FinetuneInputs {
    pub data: Option<PathBuf>,
    pub scnn: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub dmos: bool,
}

#[derive(Serialize)]
struct FinetuneSummary<'a> {
    report: &'a dbiqa::model::FinetuneReport,
    split: &'a SplitPlan,
}

pub fn finetune(common: &Common, cfg: &RunConfig, inputs: FinetuneInputs) -> CliResult<()> {
    let data = data_dir(common, inputs.data);
    let scnn_path = inputs.scnn.unwrap_or_else(|| common.root.join("pretrain").join("scnn.ckpt"));
    let aux_path = inputs.aux.unwrap_or_else(|| common.root.join("pretrain-aux").join("aux.ckpt"));
    let out = start(common, cfg, "finetune")?;
    let records = load_corpus(&data)?;
    let plans = make_splits(&source_ids(&records), cfg.finetune.sessions, cfg.seed)?;
    let plan = &plans[cfg.finetune.session - 1];
    let (train, _) = plan.partition(&records);
    let truth = inputs.scores.as_deref().map(|p| score_map(p, inputs.dmos)).transpose()?;
    let scores: Vec<f64> = match &truth {
        Some(map) => lookup(map, &train.iter().map(|r| r.relative_path.as_str()).collect::<Vec<_>>(), "score file")?,
        None => train.iter().map(|r| proxy_score(r.level)).collect(),
    };
    let samples = train
        .iter()
        .zip(&scores)
        .map(|(r, &s)| Ok(QualitySample::from_image(&RgbImage::load(&data.join(&r.relative_path), true)?, s)))
        .collect::<CliResult<Vec<_>>>()?;
    info!("session {}: {} training images from {} sources", plan.session, samples.len(), plan.train.len());
    let mut model = build_dbcnn(&Checkpoint::load(&scnn_path)?, &Checkpoint::load(&aux_path)?, &cfg.finetune.model, cfg.seed)?;
    let (report, _) = run_finetune(&mut model, &samples, &cfg.finetune.adam, cfg.seed)?;
    model.save(&out)?;
    write_json(&out.join("report.json"), &FinetuneSummary { report: &report, split: plan })?;
    if let Some(last) = report.epochs.last() {
        info!("final mean loss {:.5}", last.mean_loss);
    }
    Ok(())
}

pub fn predict(common: &Common, cfg: &RunConfig, model: Option<PathBuf>, data: Option<PathBuf>) -> CliResult<()> {
    let model_dir = model.unwrap_or_else(|| common.root.join("finetune"));
    let data = data_dir(common, data);
    let out = start(common, cfg, "predict")?;
    let model = DbCnnModel::load(&model_dir)?;
    let items = corpus_items(&data, &load_corpus(&data)?);
    let rows = items
        .iter()
        .map(|item| {
            let img = RgbImage::load(&data.join(&item.path), true)?;
            Ok(ScoreRow { path: item.path.clone(), score: f64::from(model.predict_quality(&img)?) })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_scores(&out.join("scores.csv"), &rows)?;
    info!("scored {} images", rows.len());
    Ok(())
}

pub fn oracle_scores(common: &Common, cfg: &RunConfig, data: Option<PathBuf>) -> CliResult<()> {
    let data = data_dir(common, data);
    let out = start(common, cfg, "oracle")?;
    let items = corpus_items(&data, &load_corpus(&data)?);
    let rows: Vec<ScoreRow> =
        items.iter().map(|i| ScoreRow { path: i.path.clone(), score: level_oracle_score(i) }).collect();
    write_scores(&out.join("scores.csv"), &rows)?;
    Ok(())
}

pub struct EvalInputs {
    pub data: Option<PathBuf>,
    pub scores: Vec<PathBuf>,
    pub truth: Option<PathBuf>,
    pub dmos: bool,
    pub split: SplitKind,
    pub name: String,
}

pub fn eval(common: &Common, cfg: &RunConfig, inputs: EvalInputs) -> CliResult<()> {
    let data = data_dir(common, inputs.data);
    let out = start(common, cfg, "eval")?;
    let records = load_corpus(&data)?;
    let truth = match &inputs.truth {
        Some(path) => score_map(path, inputs.dmos)?,
        None => records.iter().map(|r| (r.relative_path.clone(), proxy_score(r.level))).collect(),
    };
    let plans = match inputs.split {
        SplitKind::Test => Some(make_splits(&source_ids(&records), inputs.scores.len(), cfg.seed)?),
        SplitKind::All => None,
    };
    let predictions = inputs.scores.iter().map(|p| score_map(p, false)).collect::<CliResult<Vec<_>>>()?;
    let mut sessions = Vec::new();
    for (i, pred) in predictions.iter().enumerate() {
        let subset: Vec<&SampleRecord> = match &plans {
            Some(plans) => plans[i].partition(&records).1,
            None => records.iter().collect(),
        };
        let paths: Vec<&str> = subset.iter().map(|r| r.relative_path.as_str()).collect();
        let p = lookup(pred, &paths, &inputs.scores[i].display().to_string())?;
        let t = lookup(&truth, &paths, "ground truth")?;
        sessions.push(evaluate_session(i + 1, &p, &t)?);
    }
    let mut report = EvalReport::new(&inputs.name, sessions)?;
    let items: Vec<ProtocolItem> =
        corpus_items(&data, &records).into_iter().filter(|i| predictions[0].contains_key(&i.path)).collect();
    let scores: Vec<f64> = items.iter().map(|i| predictions[0][&i.path]).collect();
    match run_protocol(&items, &scores) {
        Ok(p) => report.protocol = Some(p),
        Err(e) => warn!("D/L/P tests skipped: {e}"),
    }
    write_json(&out.join("report.json"), &report)?;
    let table = report.text_table();
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    info!("\n{table}");
    Ok(())
}

fn display_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(Path::file_name) {
        Some(dir) if stem == "scores" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

pub fn gmad(common: &Common, cfg: &RunConfig, defender: &Path, attacker: &Path) -> CliResult<()> {
    let out = start(common, cfg, "gmad")?;
    let a = score_map(defender, false)?;
    let b = score_map(attacker, false)?;
    let paths: Vec<String> = a.keys().filter(|p| b.contains_key(*p)).cloned().collect();
    if paths.len() < a.len().max(b.len()) {
        warn!("gMAD uses the {} paths present in both score files", paths.len());
    }
    let sa: Vec<f64> = paths.iter().map(|p| a[p]).collect();
    let sb: Vec<f64> = paths.iter().map(|p| b[p]).collect();
    let (na, nb) = (display_name(defender), display_name(attacker));
    let pairs = gmad_competition((&na, &nb), &sa, &sb, &paths, cfg.eval.gmad_bins, cfg.eval.gmad_tolerance)?;
    write_json(&out.join("gmad.json"), &pairs)?;
    for g in &pairs {
        info!(
            "bin {} {} vs {}: best {} worst {} (attacker gap {:.4})",
            g.bin, g.defender, g.attacker, g.attacker_best, g.attacker_worst, g.attacker_gap
        );
    }
    Ok(())
}

pub fn gradcheck(common: &Common, cfg: &RunConfig) -> CliResult<()> {
    let out = start(common, cfg, "gradcheck")?;
    let checks = run_suite(cfg.gradcheck.trials, cfg.seed)?;
    write_json(&out.join("gradcheck.json"), &checks)?;
    for c in &checks {
        info!(
            "{:<28} trials {:>3}  max rel err {:.3e}  tol {:.0e}  {}",
            c.name,
            c.trials,
            c.max_rel_error,
            c.tolerance,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient checks failed: {}", failed.join(", "))))
    }
}
