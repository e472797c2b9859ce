use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use biam::data::{
    generate_synthetic, read_feature_store, Dataset, DatasetManifest, EmbeddingTable,
};
use biam::experiment::{evaluate_split, score_images, train_dataset, Control, EvalMode};
use biam::export::export_heatmaps;
use biam::metrics::{top_classes, EvalReport};
use biam::model::checkpoint;
use biam::train::Trainer;
use biam::verify::run_suite;
use biam::{BiamParams, ModelConfig};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{config_err, CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const VERIFY_FILE: &str = "verify.json";

const SYNTH_SEED: u64 = 7;
const TRAIN_SEED: u64 = 1;

pub struct Context {
    pub config: RunConfig,
    pub deterministic_log: bool,
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| biam::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| biam::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Serialized spelling of a unit enum variant.
fn enum_name<T: Serialize>(value: T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit variant"),
    }
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let manifest_path = cfg.manifest_path()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let store_path = match &cfg.features {
        Some(p) => p.clone(),
        None => DatasetManifest::resolve(manifest_path, &manifest.features),
    };
    let table_path = match &cfg.embeddings {
        Some(p) => p.clone(),
        None => DatasetManifest::resolve(manifest_path, &manifest.embeddings),
    };
    let store = read_feature_store(&store_path)?;
    let mut table = EmbeddingTable::read(&table_path)?;
    if let Some(extra) = &cfg.embeddings_unseen {
        let extra = EmbeddingTable::read(extra)?;
        let names = table.names().iter().chain(extra.names()).cloned().collect();
        let vectors = table.vectors().iter().chain(extra.vectors()).cloned().collect();
        table = EmbeddingTable::new(names, vectors)?;
    }
    Ok(Dataset::new(manifest, store, table)?)
}

fn check_extent(name: &str, configured: Option<usize>, actual: usize) -> CliResult<usize> {
    match configured {
        Some(v) if v != actual => Err(biam::Error::Dimension(format!(
            "{name} = {v} in the config but {actual} in the data"
        ))
        .into()),
        _ => Ok(actual),
    }
}

fn model_config(cfg: &RunConfig, data: &Dataset, seed: u64) -> CliResult<ModelConfig> {
    let g = data.store.geometry();
    let d_a = data
        .embeddings
        .dim()
        .ok_or_else(|| biam::Error::Embedding("embedding table is empty".into()))?;
    let model = ModelConfig {
        h: check_extent("h", cfg.h, g.h)?,
        w: check_extent("w", cfg.w, g.w)?,
        d_r: check_extent("d_r", cfg.d_r, g.d_r)?,
        d_g: check_extent("d_g", cfg.d_g, g.d_g)?,
        d_a: check_extent("d_a", cfg.d_a, d_a)?,
        heads: cfg.heads,
        topk: cfg.topk,
        pool: cfg.pool,
        seed,
    };
    model.validate()?;
    Ok(model)
}

fn check_mode(cfg: &RunConfig, data: &Dataset) -> CliResult<()> {
    if cfg.mode != EvalMode::Standard && data.manifest.unseen_classes.is_empty() {
        return Err(config_err(format!(
            "mode {} needs unseen classes but the manifest lists none",
            enum_name(cfg.mode)
        )));
    }
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig, data: &Dataset) -> CliResult<BiamParams> {
    let params = checkpoint::load(&cfg.checkpoint_path()?)?;
    data.store.geometry().check_model(&params.config)?;
    Ok(params)
}

pub fn synth(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir()?;
    let spec = cfg.synthetic_spec(cfg.seed_or(SYNTH_SEED)?);
    spec.validate()?;
    let data = generate_synthetic(&spec)?;
    create_out(out)?;
    let manifest = data.write(out)?;
    info!("wrote {} images to {}", spec.images, out.display());
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    mean_loss: f64,
    lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<u64>,
}

pub fn train(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir()?;
    let seed = cfg.seed_or(TRAIN_SEED)?;
    let data = load_dataset(cfg)?;
    let model = model_config(cfg, &data, seed)?;
    let mut trainer = Trainer::new(BiamParams::init(&model)?, cfg.train_config(seed))?;

    create_out(out)?;
    let resolved = RunConfig {
        seed: Some(seed),
        ..cfg.clone()
    };
    write_text(&out.join(RUN_CONFIG_FILE), &to_json(&resolved))?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let io_err = |e: std::io::Error| CliError::from(biam::Error::Io {
        path: log_path.clone(),
        source: e,
    });
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err)?);
    let start = Instant::now();
    info!(
        "training {} parameters for {} epochs",
        trainer.params.parameter_count(),
        cfg.epochs
    );
    let mut log_error = None;
    train_dataset(&mut trainer, &data, |_, s| {
        let line = LogLine {
            epoch: s.epoch + 1,
            mean_loss: s.mean_loss,
            lr: s.lr,
            wall_ms: (!ctx.deterministic_log).then(|| start.elapsed().as_millis() as u64),
        };
        let text = serde_json::to_string(&line).expect("log line serializes");
        println!("{text}");
        if let Err(e) = writeln!(log, "{text}") {
            log_error = Some(e);
            return Ok(Control::Stop);
        }
        Ok(Control::Continue)
    })?;
    if let Some(e) = log_error {
        return Err(io_err(e));
    }
    log.flush().map_err(io_err)?;
    checkpoint::save(&trainer.params, &out.join(CHECKPOINT_FILE))?;
    info!("checkpoint written to {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn print_report(mode: &str, split: &str, r: &EvalReport) {
    println!(
        "mode {mode}, split {split}: {} images, {} classes ({} without positives)",
        r.counts.images, r.counts.classes, r.counts.classes_without_positives
    );
    println!("{:<8} {:>8}", "mAP", format!("{:.4}", r.map));
    for (k, f) in &r.f1 {
        println!("F1@{k:<5} {:>8}   P {:.4}  R {:.4}", format!("{:.4}", f.f1), f.p, f.r);
    }
}

pub fn eval(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir()?;
    let data = load_dataset(cfg)?;
    check_mode(cfg, &data)?;
    let params = load_checkpoint(cfg, &data)?;
    let report = evaluate_split(&params, &data, cfg.split, cfg.mode, &cfg.ks, cfg.averaging)?;
    create_out(out)?;
    let mode = enum_name(cfg.mode);
    write_text(&out.join(format!("eval_{mode}.json")), &(report.to_json() + "\n"))?;
    print_report(&mode, &enum_name(cfg.split), &report);
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    id: String,
    labels: Vec<ScoredLabel>,
}

#[derive(Serialize)]
struct ScoredLabel {
    class: String,
    score: f32,
}

pub fn predict(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir()?;
    let data = load_dataset(cfg)?;
    check_mode(cfg, &data)?;
    let params = load_checkpoint(cfg, &data)?;
    let attributes = data.attributes(cfg.mode.space())?;
    if cfg.top_k == 0 || cfg.top_k > attributes.len() {
        return Err(config_err(format!(
            "top_k = {} outside 1..={}",
            cfg.top_k,
            attributes.len()
        )));
    }
    let images = data.images(cfg.split, cfg.mode.space())?;
    let scores = score_images(&params, &images, attributes.matrix())?;
    let c = attributes.len();
    let predictions: Vec<Prediction> = images
        .iter()
        .enumerate()
        .map(|(i, im)| {
            let row = &scores.data()[i * c..(i + 1) * c];
            let wide: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            Prediction {
                id: im.record.id.clone(),
                labels: top_classes(&wide, cfg.top_k)
                    .into_iter()
                    .map(|j| ScoredLabel {
                        class: attributes.names()[j].clone(),
                        score: row[j],
                    })
                    .collect(),
            }
        })
        .collect();
    create_out(out)?;
    write_text(&out.join(PREDICTIONS_FILE), &to_json(&predictions))?;
    info!("{} predictions written", predictions.len());
    Ok(())
}

pub fn attend(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let out = cfg.out_dir()?;
    if cfg.ids.is_empty() {
        return Err(config_err("attend needs image ids (--ids=a,b)"));
    }
    let data = load_dataset(cfg)?;
    let params = load_checkpoint(cfg, &data)?;
    let classes = if cfg.classes.is_empty() {
        check_mode(cfg, &data)?;
        data.manifest.class_names(cfg.mode.space())
    } else {
        cfg.classes.clone()
    };
    let written = export_heatmaps(&params, &data, &cfg.ids, &classes, &out.join(HEATMAP_DIR))?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn verify(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let seed = cfg.seed_or(0)?;
    let start = Instant::now();
    let report = run_suite(seed);
    for c in &report.checks {
        println!(
            "{}  {:<34} {:>10.3e}  (tol {:e})  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance,
            c.detail
        );
    }
    if !ctx.deterministic_log {
        info!("verification took {:.1}s", start.elapsed().as_secs_f64());
    }
    if let Some(out) = &cfg.out {
        create_out(out)?;
        let body = json!({ "seed": seed, "passed": report.passed(), "checks": report.checks });
        write_text(&out.join(VERIFY_FILE), &to_json(&body))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Verify(failed.join(", ")))
    }
}
