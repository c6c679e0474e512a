//! `memscreen` operator CLI.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use memscreen_core::health::{self, HealthRecord, ScalerParams};
use memscreen_core::image::{self as img, AugmentConfig, IMAGE_SIDE};
use memscreen_core::metrics::{confusion, roc_auc, summary, write_roc_csv};
use memscreen_core::models::{
    self, build_mod1d, build_mod2d_scaled, evaluate_loss, extract_feature_maps, load_weights, save_weights,
    train, write_epoch_log, write_pgm, EpochMetrics, HealthBatches, ImageBatches, ModelId,
    TrainConfig,
};
use memscreen_core::{fixtures, synth};
use memscreen_nn::ModelGraph;
use memscreen_service::config::{scaler_sidecar, ServiceConfig};
use memscreen_service::registry::load_scaler;
use memscreen_service::{http, ModelRegistry, ScreeningService, SystemClock};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "memscreen", version, about = "Memory-game dementia screening: training, evaluation and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Health,
    Images,
}

#[derive(Subcommand)]
enum Command {
    /// Train the health-metrics model from a labelled CSV.
    #[command(name = "train-1d")]
    Train1d {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        /// Weights output; the scaler goes to `<out>.scaler.json`.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV; defaults to `<out>.epochs.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the face model from a `train/ test/ validation/` image tree.
    #[command(name = "train-2d")]
    Train2d {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.0001)]
        lr: f64,
        /// Input side; smaller than 224 uses proportionally narrower dense layers.
        #[arg(long, default_value_t = IMAGE_SIDE)]
        side: usize,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Accuracy, precision, recall, F1 and ROC-AUC of a model on labelled data,
    /// or of a predictions CSV (`prediction,truth[,score]`).
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// Health CSV or image directory (its `test/` split if present).
        #[arg(long, required_unless_present = "predictions")]
        data: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["model", "data"])]
        predictions: Option<PathBuf>,
        /// Scaler JSON for health models; defaults to the sidecar.
        #[arg(long)]
        scaler: Option<PathBuf>,
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
        #[arg(long, default_value = "roc.csv")]
        roc: PathBuf,
    },
    /// Score one set of health measurements.
    #[command(name = "predict-health")]
    PredictHealth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scaler: Option<PathBuf>,
        #[arg(long)]
        age: f64,
        #[arg(long)]
        blood_oxygen: f64,
        #[arg(long)]
        heart_rate: f64,
        #[arg(long)]
        body_temp: f64,
        #[arg(long)]
        weight: f64,
        #[arg(long)]
        diabetic: u8,
    },
    /// Score one face image.
    #[command(name = "predict-face")]
    PredictFace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Write the activations of one convolution layer as PGMs plus a PNG grid.
    #[command(name = "feature-maps")]
    FeatureMaps {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        columns: usize,
    },
    /// Generate a deterministic synthetic corpus.
    #[command(name = "synth-data")]
    SynthData {
        #[arg(long, value_enum)]
        kind: DataKind,
        /// Records for health; images per class for images.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file for health, root directory for images.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = IMAGE_SIDE)]
        side: usize,
    },
    /// Write hand-wired reference models with known outputs.
    #[command(name = "reference-models")]
    ReferenceModels {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        side: usize,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        weights_1d: Option<PathBuf>,
        #[arg(long)]
        weights_2d: Option<PathBuf>,
        #[arg(long)]
        scaler: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_epoch(m: &EpochMetrics) {
    let val = match (m.val_loss, m.val_acc) {
        (Some(l), Some(a)) => format!("  val_loss {l:.4}  val_acc {a:.4}"),
        _ => String::new(),
    };
    println!("epoch {:>4}  loss {:.4}  acc {:.4}{val}", m.epoch, m.train_loss, m.train_acc);
}

fn write_log_file(path: &Path, log: &[EpochMetrics]) -> CliResult {
    write_epoch_log(create(path)?, log)?;
    Ok(())
}

fn write_weights(path: &Path, model: &ModelGraph<f32>) -> CliResult {
    let mut w = create(path)?;
    w.write_all(&save_weights(model)?)?;
    w.flush()?;
    Ok(())
}

fn read_model(path: &Path) -> CliResult<(ModelId, ModelGraph<f32>)> {
    Ok(load_weights(&fs::read(path)?)?)
}

fn scaler_for(model: &Path, explicit: Option<PathBuf>) -> CliResult<ScalerParams> {
    Ok(load_scaler(&explicit.unwrap_or_else(|| scaler_sidecar(model)))?)
}

fn train_1d(data: &Path, cfg: TrainConfig, out: &Path, log: Option<PathBuf>) -> CliResult {
    let records = health::read_csv(File::open(data)?)?;
    let prepared = health::prepare(&records, cfg.seed)?;
    println!(
        "records {}  train {} (after oversampling)  validation {}  test {}",
        records.len(),
        prepared.train.len(),
        prepared.validation.len(),
        prepared.test.len()
    );
    let mut model = build_mod1d(cfg.seed);
    let train_src = HealthBatches {
        set: &prepared.train,
        batch_size: cfg.batch_size,
        shuffle_seed: Some(cfg.seed),
    };
    let val_src = HealthBatches {
        set: &prepared.validation,
        batch_size: cfg.batch_size,
        shuffle_seed: None,
    };
    let history = train(&mut model, &train_src, Some(&val_src), &cfg, &mut print_epoch)?;
    let test_src = HealthBatches {
        set: &prepared.test,
        batch_size: cfg.batch_size,
        shuffle_seed: None,
    };
    let (loss, acc) = evaluate_loss(&model, &test_src)?;
    println!("test loss {loss:.4}  test accuracy {acc:.4}");
    write_weights(out, &model)?;
    serde_json::to_writer_pretty(create(&scaler_sidecar(out))?, &prepared.scaler)?;
    write_log_file(&log.unwrap_or_else(|| with_suffix(out, ".epochs.csv")), &history)?;
    println!("wrote {}", out.display());
    Ok(())
}

struct Train2d {
    cfg: TrainConfig,
    side: usize,
    augment: bool,
}

fn train_2d(data: &Path, opts: Train2d, out: &Path, log: Option<PathBuf>) -> CliResult {
    let ds = img::load_dataset(data, opts.side)?;
    for path in &ds.skipped {
        eprintln!("skipped unreadable image {}", path.display());
    }
    for split in img::SPLITS {
        let c = ds.counts(split);
        println!("{split}: demented {}  non_demented {}", c.demented, c.non_demented);
    }
    let mut model = build_mod2d_scaled(opts.side, opts.cfg.seed)?;
    let augment = opts.augment.then(|| AugmentConfig {
        rng_seed: opts.cfg.seed,
        ..AugmentConfig::default()
    });
    let train_src = ImageBatches {
        samples: &ds.train,
        batch_size: opts.cfg.batch_size,
        shuffle_seed: Some(opts.cfg.seed),
        augment,
    };
    let val_src = ImageBatches {
        samples: &ds.validation,
        batch_size: opts.cfg.batch_size,
        shuffle_seed: None,
        augment: None,
    };
    let history = train(&mut model, &train_src, Some(&val_src), &opts.cfg, &mut print_epoch)?;
    let test_src = ImageBatches {
        samples: &ds.test,
        batch_size: opts.cfg.batch_size,
        shuffle_seed: None,
        augment: None,
    };
    let (loss, acc) = evaluate_loss(&model, &test_src)?;
    println!("test loss {loss:.4}  test accuracy {acc:.4}");
    write_weights(out, &model)?;
    write_log_file(&log.unwrap_or_else(|| with_suffix(out, ".epochs.csv")), &history)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Model scores and true labels for a health CSV or an image directory.
fn score_dataset(model_path: &Path, data: &Path, scaler: Option<PathBuf>) -> CliResult<(Vec<f64>, Vec<u8>)> {
    let (id, model) = read_model(model_path)?;
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    match id {
        ModelId::Mod1D => {
            let scaler = scaler_for(model_path, scaler)?;
            let records = health::read_csv(File::open(data)?)?;
            for (row, r) in records.iter().enumerate() {
                truth.push(r.dementia_label.ok_or(health::HealthError::MissingLabel { row })?);
                scores.push(models::predict_health(&model, r, &scaler)?.score);
            }
        }
        ModelId::Mod2D => {
            let side = model.input_shape()[0];
            let test_dir = data.join("test");
            let dir = if test_dir.is_dir() { test_dir } else { data.to_path_buf() };
            let (samples, skipped) = img::load_split(&dir, side)?;
            for path in skipped {
                eprintln!("skipped unreadable image {}", path.display());
            }
            for sample in &samples {
                scores.push(models::predict_face_tensor(&model, &sample.pixels)?.score);
                truth.push(sample.label);
            }
        }
    }
    Ok((scores, truth))
}

fn read_predictions(path: &Path) -> CliResult<(Vec<u8>, Vec<u8>, Option<Vec<f64>>)> {
    #[derive(serde::Deserialize)]
    struct Row {
        prediction: u8,
        truth: u8,
        score: Option<f64>,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let (mut preds, mut truth, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.deserialize() {
        let r: Row = row?;
        preds.push(r.prediction);
        truth.push(r.truth);
        scores.push(r.score);
    }
    let scores = scores.into_iter().collect::<Option<Vec<f64>>>();
    Ok((preds, truth, scores))
}

fn evaluate(
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    predictions: Option<PathBuf>,
    scaler: Option<PathBuf>,
    report: &Path,
    roc: &Path,
) -> CliResult {
    let (preds, truth, scores) = match (predictions, model, data) {
        (Some(p), _, _) => read_predictions(&p)?,
        (None, Some(m), Some(d)) => {
            let (scores, truth) = score_dataset(&m, &d, scaler)?;
            let preds = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
            (preds, truth, Some(scores))
        }
        _ => return Err("evaluate needs --predictions or both --model and --data".into()),
    };
    let cm = confusion(&preds, &truth)?;
    let s = summary(&cm);
    let curve = match &scores {
        Some(sc) => match roc_auc(sc, &truth) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("no ROC curve: {e}");
                None
            }
        },
        None => None,
    };
    let mut w = csv::Writer::from_writer(create(report)?);
    w.write_record(["metric", "value", "degenerate"])?;
    for (name, m) in [
        ("accuracy", s.accuracy),
        ("precision", s.precision),
        ("recall", s.recall),
        ("f1", s.f1),
    ] {
        w.write_record([name, &m.value.to_string(), &m.degenerate.to_string()])?;
        println!("{name:<10} {:.6}{}", m.value, if m.degenerate { " (undefined)" } else { "" });
    }
    if let Some(c) = &curve {
        w.write_record(["auc", &c.auc.to_string(), "false"])?;
        println!("{:<10} {:.6}", "auc", c.auc);
        write_roc_csv(create(roc)?, c)?;
    }
    for (name, v) in [("tp", cm.tp), ("tn", cm.tn), ("fp", cm.fp), ("fn", cm.fn_)] {
        w.write_record([name, &v.to_string(), "false"])?;
    }
    w.flush()?;
    println!("tp {}  tn {}  fp {}  fn {}", cm.tp, cm.tn, cm.fp, cm.fn_);
    Ok(())
}

fn feature_maps(model: &Path, image: &Path, layer: usize, out_dir: &Path, columns: usize) -> CliResult {
    let (id, model) = read_model(model)?;
    if id != ModelId::Mod2D {
        return Err("feature maps need a face model".into());
    }
    let pixels = img::decode_image(&fs::read(image)?, model.input_shape()[0])?;
    let maps = extract_feature_maps(&model, &pixels, layer)?;
    fs::create_dir_all(out_dir)?;
    for (i, m) in maps.iter().enumerate() {
        write_pgm(create(&out_dir.join(format!("map_{i:03}.pgm")))?, m)?;
    }
    let grid = models::feature_map_grid(&maps, columns.max(1));
    grid.save(out_dir.join("grid.png"))?;
    println!("{} maps of {}x{} written to {}", maps.len(), maps[0].height, maps[0].width, out_dir.display());
    Ok(())
}

fn synth_data(kind: DataKind, n: usize, seed: u64, out: &Path, side: usize) -> CliResult {
    match kind {
        DataKind::Health => {
            let records = synth::health_records(n, seed);
            health::write_csv(create(out)?, &records)?;
            let positives = records.iter().filter(|r| r.dementia_label == Some(1)).count();
            println!("{n} records ({positives} demented) written to {}", out.display());
        }
        DataKind::Images => {
            synth::write_image_corpus(out, n, side, seed)?;
            println!("{n} images per class written under {}", out.display());
        }
    }
    Ok(())
}

fn reference_models(out_dir: &Path, side: usize) -> CliResult {
    fs::create_dir_all(out_dir)?;
    let health_path = out_dir.join("health.modw");
    write_weights(&health_path, &fixtures::reference_mod1d())?;
    serde_json::to_writer_pretty(create(&scaler_sidecar(&health_path))?, &fixtures::reference_scaler())?;
    write_weights(&out_dir.join("face.modw"), &fixtures::reference_mod2d(side))?;
    println!("reference models written to {}", out_dir.display());
    Ok(())
}

struct ServeArgs {
    config: Option<PathBuf>,
    port: Option<u16>,
    weights_1d: Option<PathBuf>,
    weights_2d: Option<PathBuf>,
    scaler: Option<PathBuf>,
    static_dir: Option<PathBuf>,
}

fn serve(args: ServeArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    cfg.port = args.port.unwrap_or(cfg.port);
    cfg.weights_1d = args.weights_1d.or(cfg.weights_1d);
    cfg.weights_2d = args.weights_2d.or(cfg.weights_2d);
    cfg.scaler = args.scaler.or(cfg.scaler);
    cfg.static_dir = args.static_dir.or(cfg.static_dir);
    let (Some(w1), Some(w2)) = (cfg.weights_1d.clone(), cfg.weights_2d.clone()) else {
        return Err("both --weights-1d and --weights-2d (or config keys) are required".into());
    };
    let scaler = cfg.scaler_path().expect("weights_1d is set");
    let registry = ModelRegistry::load(&w1, &scaler, &w2)?;
    for m in registry.info() {
        log::info!("loaded {} ({} parameters, crc {})", m.model, m.parameters, m.checksum);
    }
    let service = Arc::new(ScreeningService::new(
        Arc::new(registry),
        cfg.game.clone(),
        cfg.session_ttl_s * 1000,
        Arc::new(SystemClock),
    ));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        http::serve(listener, service, cfg.static_dir).await
    })?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Train1d {
            data,
            epochs,
            seed,
            batch_size,
            lr,
            out,
            log,
        } => train_1d(
            &data,
            TrainConfig {
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
            },
            &out,
            log,
        ),
        Command::Train2d {
            data,
            epochs,
            seed,
            batch_size,
            lr,
            side,
            no_augment,
            out,
            log,
        } => train_2d(
            &data,
            Train2d {
                cfg: TrainConfig {
                    learning_rate: lr,
                    epochs,
                    batch_size,
                    seed,
                },
                side,
                augment: !no_augment,
            },
            &out,
            log,
        ),
        Command::Evaluate {
            model,
            data,
            predictions,
            scaler,
            report,
            roc,
        } => evaluate(model, data, predictions, scaler, &report, &roc),
        Command::PredictHealth {
            model,
            scaler,
            age,
            blood_oxygen,
            heart_rate,
            body_temp,
            weight,
            diabetic,
        } => {
            let (id, graph) = read_model(&model)?;
            if id != ModelId::Mod1D {
                return Err("predict-health needs a health model".into());
            }
            let scaler = scaler_for(&model, scaler)?;
            let record = HealthRecord {
                age,
                blood_oxygen,
                heart_rate,
                body_temp,
                weight,
                diabetic,
                dementia_label: None,
            };
            let r = models::predict_health(&graph, &record, &scaler)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Command::PredictFace { model, image } => {
            let (id, graph) = read_model(&model)?;
            if id != ModelId::Mod2D {
                return Err("predict-face needs a face model".into());
            }
            let r = models::predict_face(&graph, &fs::read(&image)?)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Command::FeatureMaps {
            model,
            image,
            layer,
            out_dir,
            columns,
        } => feature_maps(&model, &image, layer, &out_dir, columns),
        Command::SynthData {
            kind,
            n,
            seed,
            out,
            side,
        } => synth_data(kind, n, seed, &out, side),
        Command::ReferenceModels { out_dir, side } => reference_models(&out_dir, side),
        Command::Serve {
            config,
            port,
            weights_1d,
            weights_2d,
            scaler,
            static_dir,
        } => serve(ServeArgs {
            config,
            port,
            weights_1d,
            weights_2d,
            scaler,
            static_dir,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
