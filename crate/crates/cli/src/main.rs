use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ecgrhythm::dsp::{read_spectrogram, write_spectrogram, Preprocessor, SpectrogramSidecar};
use ecgrhythm::serving::{annotate, load_model, save_model, AnnotateRequest, Provenance, ServingError};
use ecgrhythm::signal_io::store::{read_chunk, read_store, write_chunk};
use ecgrhythm::signal_io::{
    extract_chunks_with_boundaries, parse_header, read_signal, scan_annotations, tile_chunks, Chunk, ChunkPolicy,
    LeadPolicy, RhythmClass, SignalIoError,
};
use ecgrhythm::training::plot::accuracy_svg;
use ecgrhythm::training::synth::{synth_dataset, SynthConfig};
use ecgrhythm::training::{
    argmax, comparative_experiment, compute_metrics, confusion_matrix, make_splits, prepare_examples, run_fold,
    standard_variants, Example, FoldReport, RunConfig, TrainingError, VariantResult,
};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "ecgrhythm", version, about = "ECG rhythm classification from 13 s spectrograms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut records (or a chunk store) into chunks and cache spectrograms.
    Preprocess(PreprocessArgs),
    /// Write a synthetic five-class chunk store.
    Synth(SynthArgs),
    /// Two-stage training with k-fold cross-validation.
    Train(TrainArgs),
    /// Evaluate a saved model on a chunk store.
    Eval(EvalArgs),
    /// Annotate one signal file with a saved model.
    Predict(PredictArgs),
    /// HTTP inference endpoint.
    Serve(ServeArgs),
    /// Accuracy-per-epoch curves as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Working sample rate after resampling.
    #[arg(long, default_value_t = 200.0)]
    fs: f64,
    #[arg(long, default_value_t = 13.0)]
    span: f64,
    /// `limb`, `index:N`, or a lead name.
    #[arg(long, default_value = "limb")]
    lead: String,
    /// Label for records without an annotation file (tiled whole).
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Chunk store or `preprocess` output.
    #[arg(long)]
    data: PathBuf,
    /// Flat JSON of training and model settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Run the five-variant front-end comparison instead of plain CV.
    #[arg(long)]
    variants: bool,
    /// Fold indices to run (default: all).
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<usize>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON annotate request, or a chunk `.f32` blob with its sidecar.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "ECGRHYTHM_MODEL")]
    model: PathBuf,
    #[arg(long, env = "ECGRHYTHM_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(Args)]
struct PlotArgs {
    /// `train` output directory or a `variants.json`.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "Test accuracy per epoch")]
    title: String,
}

fn error_code(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ServingError>() {
            if matches!(e, ServingError::Io(_)) {
                return "io";
            }
            return e.validation_code().unwrap_or("serving");
        }
        if cause.downcast_ref::<TrainingError>().is_some() {
            return "training";
        }
        if cause.downcast_ref::<SignalIoError>().is_some() {
            return "signal_io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "usage"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": error_code(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
        Command::Plot(a) => plot(a),
    }
}

fn parse_class(s: &str) -> Result<RhythmClass> {
    RhythmClass::ALL
        .into_iter()
        .find(|c| c.dir_name().eq_ignore_ascii_case(s) || c.display_name().eq_ignore_ascii_case(s))
        .with_context(|| format!("unknown class `{s}`"))
}

fn is_chunk_store(dir: &Path) -> bool {
    RhythmClass::ALL.iter().any(|c| dir.join(c.dir_name()).is_dir())
}

fn preprocessor(fs: f64) -> Result<Preprocessor> {
    let mut filter = ecgrhythm::dsp::FilterSpec::default();
    let mut spec = ecgrhythm::dsp::SpectrogramConfig::default();
    filter.fs_hz = fs;
    spec.fs_hz = fs;
    Ok(Preprocessor::new(&filter, spec)?)
}

/// Chunks from every `<id>.hea` in `dir`; annotations are read from
/// `<id>.txt` when present.
fn chunks_from_records(dir: &Path, policy: &ChunkPolicy, label: Option<RhythmClass>) -> Result<Vec<Chunk>> {
    let mut headers: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "hea"))
        .collect();
    headers.sort();
    if headers.is_empty() {
        bail!("no .hea records or class directories in {}", dir.display());
    }
    let mut chunks = Vec::new();
    let mut discarded = 0;
    for hea in headers {
        let meta = parse_header(&fs::read_to_string(&hea)?).with_context(|| hea.display().to_string())?;
        let file = &meta.leads.first().context("record without leads")?.file_name;
        let bytes = fs::read(dir.join(file)).with_context(|| format!("signal file {file}"))?;
        let record = read_signal(&bytes, &meta).with_context(|| hea.display().to_string())?;
        let ann = hea.with_extension("txt");
        if ann.is_file() {
            let scan = scan_annotations(&fs::read_to_string(&ann)?)?;
            if !scan.unknown_tokens.is_empty() {
                log::warn!("{}: rhythms outside the class table: {:?}", meta.record_id, scan.unknown_tokens);
            }
            let out = extract_chunks_with_boundaries(&record, &scan.annotations(), &scan.unknown_boundaries(), policy)?;
            discarded += out.discarded;
            chunks.extend(out.chunks);
        } else if let Some(label) = label {
            chunks.extend(tile_chunks(&record, label, policy)?);
        } else {
            bail!("{}: no annotation file and no --label", meta.record_id);
        }
    }
    log::info!("{} chunks, {discarded} annotations too short for a chunk", chunks.len());
    Ok(chunks)
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let pre = preprocessor(a.fs)?;
    let chunks = if is_chunk_store(&a.input) {
        read_store(&a.input)?
    } else {
        let policy = ChunkPolicy {
            span_s: a.span,
            lead: a.lead.parse::<LeadPolicy>()?,
        };
        let label = a.label.as_deref().map(parse_class).transpose()?;
        chunks_from_records(&a.input, &policy, label)?
    };
    let chunk_dir = a.out.join("chunks");
    let spec_dir = a.out.join("spectrograms");
    let examples = prepare_examples(&chunks, &pre)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (chunk, ex) in chunks.iter().zip(&examples) {
        write_chunk(&chunk_dir, chunk)?;
        let sidecar = SpectrogramSidecar {
            config: pre.spectrogram_config().clone(),
            n_bins: ex.spec.n_bins(),
            n_frames: ex.spec.n_frames(),
            record_id: chunk.record_id.clone(),
            start_index: chunk.start_index,
            source_fs: chunk.sample_rate_hz,
            label: chunk.label,
        };
        let path = spec_dir.join(chunk.label.dir_name()).join(format!("{}.f32", ex.id));
        write_spectrogram(&path, &ex.spec, &sidecar)?;
        *counts.entry(chunk.label.dir_name()).or_default() += 1;
    }
    println!("{}", serde_json::json!({ "chunks": chunks.len(), "per_class": counts }));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        snr_db: a.snr_db,
        ..SynthConfig::default()
    };
    let chunks = synth_dataset(a.n, &cfg, a.seed);
    for c in &chunks {
        write_chunk(&a.out, c)?;
    }
    println!("{}", serde_json::json!({ "chunks": chunks.len(), "out": a.out }));
    Ok(())
}

/// Examples from cached spectrograms when present, else by running the
/// front end over the chunk store.
fn load_examples(data: &Path, pre: &Preprocessor) -> Result<Vec<Example>> {
    let cache = data.join("spectrograms");
    if cache.is_dir() {
        let mut out = Vec::new();
        for class in RhythmClass::ALL {
            let dir = cache.join(class.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let mut blobs: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "f32"))
                .collect();
            blobs.sort();
            for blob in blobs {
                let (spec, sidecar) = read_spectrogram(&blob)?;
                if &sidecar.config != pre.spectrogram_config() {
                    bail!("{} was cached with a different spectrogram config", blob.display());
                }
                let id = blob.file_stem().and_then(|s| s.to_str()).context("bad file name")?.to_string();
                out.push(Example {
                    id,
                    label: sidecar.label,
                    spec,
                });
            }
        }
        return Ok(out);
    }
    let store = if data.join("chunks").is_dir() { data.join("chunks") } else { data.to_path_buf() };
    if !is_chunk_store(&store) {
        bail!("{} holds neither spectrograms nor a chunk store", data.display());
    }
    Ok(prepare_examples(&read_store(&store)?, pre)?)
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| path.display().to_string())
}

fn train(a: TrainArgs) -> Result<()> {
    let run_cfg = match &a.config {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => RunConfig::default(),
    };
    let (cfg, model_cfg) = (run_cfg.train, run_cfg.model);
    cfg.validate()?;
    model_cfg.validate()?;
    let pre = Preprocessor::default();
    let examples = load_examples(&a.data, &pre)?;
    fs::create_dir_all(&a.out)?;
    let splits = make_splits(&examples, &cfg)?;
    let folds: Vec<usize> = a.folds.unwrap_or_else(|| (0..cfg.k_folds).collect());
    if let Some(bad) = folds.iter().find(|&&f| f >= cfg.k_folds) {
        bail!("fold {bad} out of range for {} folds", cfg.k_folds);
    }

    if a.variants {
        let variants = standard_variants(&model_cfg);
        let results = comparative_experiment(&examples, &variants, &cfg, &folds)?;
        write_json(&a.out.join("variants.json"), &results)?;
        let curves: Vec<(String, Vec<f64>)> =
            results.iter().map(|r| (r.variant.name.clone(), r.mean_accuracy_series())).collect();
        fs::write(a.out.join("variants.svg"), accuracy_svg("Front-end comparison", &curves))?;
        for r in &results {
            println!(
                "{}",
                serde_json::json!({
                    "variant": r.variant.name,
                    "epochs_to_0.9": r.epochs_to_reach(0.9),
                    "final_accuracy": r.mean_accuracy_series().last(),
                })
            );
        }
        return Ok(());
    }

    let (rep, cls) = ecgrhythm::model::Model::new(&model_cfg, cfg.frontend, 0)?.param_counts();
    log::info!(
        "{} examples, {} folds; representation {rep} floats, classifier {cls} floats",
        examples.len(),
        folds.len()
    );
    let outcomes: Vec<_> = folds
        .par_iter()
        .map(|&f| run_fold(&examples, &splits[f], &model_cfg, &cfg))
        .collect::<Result<_, _>>()?;
    for o in &outcomes {
        let k = o.report.fold_index;
        write_json(&a.out.join(format!("fold_{k}.json")), &o.report)?;
        fs::write(a.out.join(format!("table_fold_{k}.csv")), o.report.metrics.table_csv())?;
        let provenance = Provenance {
            seed: cfg.seed,
            fold: Some(k),
            note: format!("{:?} front end", cfg.frontend),
        };
        let hash = save_model(&o.model, &pre, provenance, &a.out.join(format!("model_fold_{k}.ecgm")))?;
        println!(
            "{}",
            serde_json::json!({ "fold": k, "accuracy": o.report.metrics.accuracy, "model_hash": hash })
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let art = load_model(&a.model)?;
    let examples = load_examples(&a.data, &art.preprocessor)?;
    if examples.is_empty() {
        bail!("no chunks in {}", a.data.display());
    }
    let preds: Vec<usize> = examples
        .par_iter()
        .map(|e| art.model.predict(&e.spec).map(|p| argmax(&p)))
        .collect::<Result<_, _>>()?;
    let confusion = confusion_matrix(examples.iter().map(|e| e.label.id()).zip(preds), RhythmClass::COUNT);
    let metrics = compute_metrics(&confusion)?;
    print!("{}", metrics.table_csv());
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let art = load_model(&a.model)?;
    let req = if a.input.extension().is_some_and(|x| x == "f32") {
        let chunk = read_chunk(&a.input)?;
        AnnotateRequest {
            samples: chunk.samples,
            fs_hz: chunk.sample_rate_hz,
            lead: String::new(),
        }
    } else {
        serde_json::from_slice(&fs::read(&a.input).with_context(|| a.input.display().to_string())?)?
    };
    let resp = annotate(&art, &req)?;
    println!("{}", serde_json::to_string(&resp)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ecgrhythm::serving::serve(&a.model, a.bind))?;
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let curves: Vec<(String, Vec<f64>)> = if a.reports.is_file() {
        let results: Vec<VariantResult> = serde_json::from_slice(&fs::read(&a.reports)?)?;
        results.iter().map(|r| (r.variant.name.clone(), r.mean_accuracy_series())).collect()
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(&a.reports)
            .with_context(|| a.reports.display().to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("fold_") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        let mut curves = Vec::new();
        for f in files {
            let report: FoldReport = serde_json::from_slice(&fs::read(&f)?)?;
            curves.push((format!("fold {}", report.fold_index), report.accuracy_series()));
        }
        curves
    };
    if curves.is_empty() {
        bail!("no reports in {}", a.reports.display());
    }
    fs::write(&a.out, accuracy_svg(&a.title, &curves))?;
    println!("{}", serde_json::json!({ "curves": curves.len(), "out": a.out }));
    Ok(())
}
