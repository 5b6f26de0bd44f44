mod experiment;
mod probe;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use uavm::checkpoint;
use uavm::data::archive;
use uavm::data::synth::{generate, SynthSpec};
use uavm::trainer::run_training;
use uavm::{ModelMode, Result, Uavm, UavmError};

use experiment::{apply_mode, apply_overrides, io_err, ExperimentConfig, Sweep};
use probe::{LayerSel, ProbeRequest};

#[derive(Parser, Debug)]
#[command(name = "uavm", version, about = "Unified audio-visual model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired dataset as UAVF archives.
    Generate(GenerateArgs),
    /// Train one model per seed (and per sweep point).
    Train(TrainArgs),
    /// Run a probe on a checkpoint.
    Probe(ProbeArgs),
    /// Predict with a checkpoint, optionally dropping a modality.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// JSON synthetic-data spec; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Spec field override, e.g. `--set num_classes=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Repeat for several datasets, one subdirectory each.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Unified,
    Independent,
    Cross,
}

impl From<ModeArg> for ModelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unified => ModelMode::Unified,
            ModeArg::Independent => ModelMode::Independent,
            ModeArg::Cross => ModelMode::CrossModalAttention,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override on a dotted path, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Replaces the config's seed list; repeatable.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Ablation axis: `s_dim=16,64,256`, `n_s=0,1,2,3` or `lambda_mt=0.2,0.5`.
    #[arg(long)]
    sweep: Option<String>,
    /// Probe to run after training; repeatable.
    #[arg(long)]
    probe: Vec<String>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// UAVF archive holding the samples to probe.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    probe: String,
    /// Layer index, or `all`.
    #[arg(long)]
    layer: Option<LayerSel>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Seed of the probe's train/test split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample for the heatmap probe.
    #[arg(long)]
    sample: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// UAVF archive with the samples to predict.
    #[arg(long)]
    data: PathBuf,
    /// Predict only this sample.
    #[arg(long)]
    sample: Option<String>,
    #[arg(long)]
    drop_audio: bool,
    #[arg(long)]
    drop_video: bool,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Infer(a) => cmd_infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> UavmError {
    UavmError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| UavmError::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    let base = apply_overrides(&base, &a.sets)?;
    let seeds = if a.seed.is_empty() { vec![base.seed] } else { a.seed.clone() };
    for &seed in &seeds {
        let spec = SynthSpec { seed, ..base.clone() };
        spec.validate()?;
        let dir = if seeds.len() == 1 { a.out.clone() } else { a.out.join(format!("seed-{seed}")) };
        create_dir(&dir)?;
        let d = generate(&spec)?;
        archive::save_features(&d.train, dir.join("train.uavf"))?;
        archive::save_features(&d.eval, dir.join("eval.uavf"))?;
        archive::write_manifest(&[&d.train, &d.eval], dir.join("manifest.csv"))?;
        write_json(&dir.join("synth_spec.json"), &spec)?;
        info!("seed {seed}: {} train / {} eval clips in {}", d.train.len(), d.eval.len(), dir.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct RunInfo<'a> {
    seed: u64,
    checkpoint_id: &'a str,
    checkpoint_format: u32,
    archive_format: u32,
    report_format: u32,
    experiment_format: u32,
    parameters: usize,
}

/// One row of a summary table.
struct RunRow {
    point: String,
    seed: u64,
    fused: Option<f64>,
    audio: Option<f64>,
    video: Option<f64>,
    loss: Option<f64>,
    checkpoint_id: String,
}

fn run_experiment(cfg: &ExperimentConfig, point: &str) -> Result<Vec<RunRow>> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    // Written before any work so an interrupted run can still be replayed.
    cfg.write(&out.join("experiment.json"))?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let (train, eval) = cfg.datasets(seed)?;
        let mut model = Uavm::new(cfg.model.clone(), seed)?;
        let tc = uavm::TrainConfig { seed, ..cfg.train.clone() };
        info!("{point} seed {seed}: training {} epochs on {} clips", tc.epochs, train.len());
        let log = run_training(&mut model, &tc, &train, Some(&eval))?;
        let id = checkpoint::save(&model, dir.join("checkpoint.uavc"))?;
        log.write_iterations_csv(&dir.join("iterations.csv"))?;
        log.write_epochs_json(&dir.join("epochs.json"))?;
        write_json(
            &dir.join("run.json"),
            &RunInfo {
                seed,
                checkpoint_id: &id,
                checkpoint_format: checkpoint::VERSION,
                archive_format: archive::VERSION,
                report_format: uavm::probes::REPORT_VERSION,
                experiment_format: experiment::EXPERIMENT_VERSION,
                parameters: model.count_parameters().total,
            },
        )?;
        for name in &cfg.probes {
            let req = ProbeRequest {
                name: name.clone(),
                layer: None,
                ks: vec![1, 5, 10],
                seed,
                sample: None,
            };
            probe::run(&model, &id, &eval, &req, &dir)?;
        }
        let ev = log.final_eval();
        if let Some(e) = ev {
            info!("{point} seed {seed}: fused eval accuracy {:.4}", e.fused_acc);
        }
        rows.push(RunRow {
            point: point.to_string(),
            seed,
            fused: ev.map(|e| e.fused_acc),
            audio: ev.and_then(|e| e.audio_acc),
            video: ev.and_then(|e| e.video_acc),
            loss: log.epochs.last().map(|e| e.mean_loss),
            checkpoint_id: id,
        });
    }
    write_summary(out, &rows)?;
    Ok(rows)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `summary.csv` with one row per run and `summary_stats.csv` with the
/// mean and sample standard deviation of every metric per point.
fn write_summary(out: &Path, rows: &[RunRow]) -> Result<()> {
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["point", "seed", "fused_acc", "audio_acc", "video_acc", "final_loss", "checkpoint_id"])
        .map_err(|e| csv_err(&path, e))?;
    for r in rows {
        w.write_record([
            r.point.clone(),
            r.seed.to_string(),
            cell(r.fused),
            cell(r.audio),
            cell(r.video),
            cell(r.loss),
            r.checkpoint_id.clone(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = out.join("summary_stats.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["point", "metric", "mean", "std", "runs"]).map_err(|e| csv_err(&path, e))?;
    let mut points: Vec<&str> = rows.iter().map(|r| r.point.as_str()).collect();
    points.dedup();
    type Getter = fn(&RunRow) -> Option<f64>;
    let metrics: [(&str, Getter); 4] = [
        ("fused_acc", |r| r.fused),
        ("audio_acc", |r| r.audio),
        ("video_acc", |r| r.video),
        ("final_loss", |r| r.loss),
    ];
    for p in points {
        for (name, get) in metrics {
            let xs: Vec<f64> = rows.iter().filter(|r| r.point == p).filter_map(get).collect();
            if xs.is_empty() {
                continue;
            }
            let (m, s) = mean_std(&xs);
            w.write_record([p.to_string(), name.to_string(), m.to_string(), s.to_string(), xs.len().to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = apply_overrides(&base, &a.sets)?;
    if !a.seed.is_empty() {
        cfg.seeds = a.seed.clone();
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    if let Some(m) = a.mode {
        apply_mode(&mut cfg.model, m.into());
    }
    for p in a.probe {
        if !cfg.probes.contains(&p) {
            cfg.probes.push(p);
        }
    }
    let Some(spec) = a.sweep else {
        run_experiment(&cfg, "base")?;
        return Ok(());
    };
    let sweep: Sweep = spec.parse()?;
    // Fail on a bad point before training anything.
    let points = sweep
        .values
        .iter()
        .map(|v| {
            let name = format!("{}={v}", sweep.key.name());
            let mut c = sweep.apply(&cfg, v)?;
            c.out_dir = cfg.out_dir.join(&name);
            c.validate()?;
            Ok((name, c))
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.out_dir)?;
    cfg.write(&cfg.out_dir.join("experiment.json"))?;
    let mut all = Vec::new();
    for (name, c) in &points {
        all.extend(run_experiment(c, name)?);
    }
    write_summary(&cfg.out_dir, &all)
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let (model, id) = checkpoint::load(&a.checkpoint)?;
    let shape = archive::ExpectedShape {
        seq_len: Some(model.config().seq_len),
        feature_dim: Some(model.config().feature_dim),
    };
    let data = archive::load_features(&a.data, Some(shape))?;
    create_dir(&a.out)?;
    let req = ProbeRequest {
        name: a.probe,
        layer: a.layer,
        ks: a.k,
        seed: a.seed,
        sample: a.sample,
    };
    let report = probe::run(&model, &id, &data, &req, &a.out)?;
    for r in &report.results {
        let mut tags = Vec::new();
        if let Some(l) = r.layer {
            tags.push(format!("layer={l}"));
        }
        if let Some(k) = r.k {
            tags.push(format!("k={k}"));
        }
        if let Some(d) = &r.direction {
            tags.push(d.clone());
        }
        if let Some(h) = r.head {
            tags.push(format!("head={h}"));
        }
        println!("{} {} {:.6}", r.metric, tags.join(" "), r.value);
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    sample_id: String,
    label: String,
    predicted_class: usize,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct InferOutput {
    checkpoint_id: String,
    modalities: Vec<&'static str>,
    predictions: Vec<Prediction>,
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    if a.drop_audio && a.drop_video {
        return Err(UavmError::Config(
            "--drop-audio and --drop-video together leave nothing to infer from; keep at least one modality".into(),
        ));
    }
    let (model, id) = checkpoint::load(&a.checkpoint)?;
    let shape = archive::ExpectedShape {
        seq_len: Some(model.config().seq_len),
        feature_dim: Some(model.config().feature_dim),
    };
    let data = archive::load_features(&a.data, Some(shape))?;
    let samples: Vec<_> = match &a.sample {
        Some(s) => vec![data
            .find(s)
            .ok_or_else(|| UavmError::Data(format!("no sample `{s}` in {}", a.data.display())))?],
        None => data.samples.iter().collect(),
    };
    let mut modalities = Vec::new();
    if !a.drop_audio {
        modalities.push("audio");
    }
    if !a.drop_video {
        modalities.push("video");
    }
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let audio = (!a.drop_audio).then_some(&s.audio);
        let video = (!a.drop_video).then_some(&s.video);
        let scores = model.infer(audio, video)?;
        predictions.push(Prediction {
            sample_id: s.sample_id().to_string(),
            label: s.label().to_string(),
            predicted_class: uavm::tensor::argmax(&scores),
            scores,
        });
    }
    let out = InferOutput {
        checkpoint_id: id,
        modalities,
        predictions,
    };
    match &a.out {
        Some(p) => write_json(p, &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}
