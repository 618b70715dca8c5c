use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gaze_core::attention::{all_cues, AttentionForm};
use gaze_core::baselines::{fit_ga, predict, FrameTargets, GaConfig, HeuristicWeights};
use gaze_core::controller::{
    run_stream, write_command, BaselinePredictor, Controller, ControllerError, ModelPredictor, OraclePredictor,
    Predictor,
};
use gaze_core::eval::{build_report, confusion, topn_accuracy, AccuracyReport, KFoldOutput};
use gaze_core::features::{Dataset, FrameFeatures, Normalization, Subset};
use gaze_core::models::{load_checkpoint, read_checkpoint, save_checkpoint, ModelConfig, SequenceModel, CHECKPOINT_MAGIC};
use gaze_core::oracle::{persona_family, synth_corpus, GazerPersona};
use gaze_core::scene::{
    compile_timeline, enumerate_situations_2d, enumerate_situations_3d, Cue, CueSet, SceneFrame, SituationSpec,
    Timeline, Variant,
};
use gaze_core::train::{
    evaluate, fit_with, holdout_split, plan_for, predict_subset, run_kfold, FoldResult, KFoldOptions, KFoldRun,
    TrainConfig, TrainError,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::CliConfig;
use crate::session::{self, ServeOptions};
use crate::{data, runtime, Cli, CliError, Command, FileKind, PredictorArgs, TrainOverrides};

type Result<T> = std::result::Result<T, CliError>;

/// Output of `fit-baseline`, also accepted by `run`, `serve` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub variant: Variant,
    pub m: usize,
    pub normalization: Normalization,
    pub weights: HeuristicWeights,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    pub best_fitness: Vec<f64>,
    pub seed: u64,
}

/// Contents of `kfold.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct KFoldFile {
    output: KFoldOutput,
    run: KFoldRun,
}

pub(crate) fn execute(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => CliConfig::load(path).map_err(CliError::Usage)?,
        None => CliConfig::default(),
    };
    match cli.command {
        Command::Scenarios {
            variant,
            count_only,
            out,
            timeline,
        } => scenarios(variant, count_only, out.as_deref(), timeline.as_deref()),
        Command::Synth {
            variant,
            m,
            personas,
            jitter,
            form,
            deterministic,
            noise_rate,
            temperature,
            persona,
            timeline,
            seed,
            out,
        } => {
            let mut base = match persona {
                Some(path) => read_json::<GazerPersona>(&path)?,
                None => GazerPersona::planted(),
            };
            if let Some(form) = form {
                base.attention.form = form.into();
            }
            if deterministic {
                base = base.deterministic();
            }
            if let Some(v) = noise_rate {
                base.noise_rate = v;
            }
            if let Some(v) = temperature {
                base.temperature = v;
            }
            base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let timeline = match timeline {
                Some(path) => {
                    let t = read_timeline(&path)?;
                    if t.variant != variant {
                        return Err(data(format!("timeline is {}, expected {variant}", t.variant)));
                    }
                    t
                }
                None => full_timeline(variant)?,
            };
            synth(&timeline, &base, m, personas, jitter, seed, &config, &out)
        }
        Command::Train {
            data: path,
            arch,
            out,
            seed,
            eval,
            holdout,
            history,
            overrides,
        } => {
            let cfg = train_config(&config, &overrides, seed);
            train(&path, arch.into(), &out, eval.as_deref(), holdout, history.as_deref(), &cfg)
        }
        Command::Kfold {
            data: path,
            arch,
            k,
            out_dir,
            seed,
            holdout,
            folds,
            train_eval_examples,
            overrides,
        } => {
            let cfg = train_config(&config, &overrides, seed);
            let opts = KFoldOptions {
                holdout,
                train_eval_examples: Some(train_eval_examples),
                max_folds: folds,
            };
            kfold(&path, arch.into(), k, &out_dir, &cfg, &opts)
        }
        Command::FitBaseline {
            data: path,
            form,
            cues,
            seed,
            holdout,
            population,
            generations,
            out,
        } => {
            let mut ga = GaConfig { seed, ..config.ga };
            if let Some(p) = population {
                ga.population = p;
            }
            if let Some(g) = generations {
                ga.generations = g;
            }
            let mask = match cues {
                Some(list) => parse_cues(&list)?,
                None => all_cues(),
            };
            fit_baseline(&path, form.into(), mask, holdout, &ga, &out)
        }
        Command::Eval {
            kfold,
            model,
            baseline,
            data: path,
            out_dir,
        } => {
            if !kfold.is_empty() {
                return eval_kfold(&kfold, out_dir.as_deref());
            }
            let path = path.ok_or_else(|| CliError::Usage("--data is required with --model or --baseline".into()))?;
            match (model, baseline) {
                (Some(m), None) => eval_model(&m, &path, out_dir.as_deref()),
                (None, Some(b)) => eval_baseline(&b, &path, out_dir.as_deref()),
                _ => Err(CliError::Usage("give --kfold files, --model or --baseline".into())),
            }
        }
        Command::Run {
            predictor,
            timeline,
            log,
            realtime,
        } => {
            let predictor = build_predictor(&predictor, &config)?;
            let timeline = match timeline {
                Some(path) => read_timeline(&path)?,
                None => full_timeline(predictor.variant())?,
            };
            run_timeline(predictor.as_ref(), &timeline, &config, log.as_deref(), realtime)
        }
        Command::Serve {
            predictor,
            host,
            port,
            record_dir,
        } => {
            let predictor = build_predictor(&predictor, &config)?;
            let policy = gaze_core::controller::ControllerPolicy {
                m: predictor.window_len(),
                ..config.policy
            };
            policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let listener = TcpListener::bind((host.as_str(), port))
                .map_err(|e| runtime(format!("cannot listen on {host}:{port}: {e}")))?;
            let addr = listener.local_addr().map_err(runtime)?;
            println!("listening on {addr}");
            std::io::stdout().flush().map_err(runtime)?;
            let options = ServeOptions {
                policy,
                normalization: config.normalization,
                record_dir,
            };
            session::serve(listener, predictor, options).map_err(runtime)
        }
        Command::Validate { file, kind } => validate(&file, kind),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Dataset::read_jsonl(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.write_jsonl(create(path)?).map_err(runtime)
}

/// Reads a timeline, reporting the first bad line.
fn read_timeline(path: &Path) -> Result<Timeline> {
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, reason: String| data(format!("{}: line {line}: {reason}", path.display()));
    let mut frames: Vec<SceneFrame> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| bad(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: SceneFrame = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        if let Some(prev) = frames.last() {
            if frame.variant() != prev.variant() {
                return Err(bad(i + 1, format!("{} frame in a {} timeline", frame.variant(), prev.variant())));
            }
            if frame.tick != prev.tick + 1 {
                return Err(bad(i + 1, format!("tick {} does not follow {}", frame.tick, prev.tick)));
            }
        }
        frames.push(frame);
    }
    let variant = frames
        .first()
        .map(SceneFrame::variant)
        .ok_or_else(|| data(format!("{}: empty timeline", path.display())))?;
    Ok(Timeline {
        variant,
        fps: variant.fps(),
        frames,
    })
}

fn situations(variant: Variant) -> Vec<SituationSpec> {
    match variant {
        Variant::TwoD => enumerate_situations_2d(),
        Variant::ThreeD => enumerate_situations_3d(),
    }
}

fn full_timeline(variant: Variant) -> Result<Timeline> {
    compile_timeline(&situations(variant), variant.fps()).map_err(runtime)
}

fn variant_of_width(l: usize) -> Option<Variant> {
    [Variant::TwoD, Variant::ThreeD]
        .into_iter()
        .find(|v| v.feature_width() == l)
}

fn scenarios(variant: Option<Variant>, count_only: bool, out: Option<&Path>, timeline: Option<&Path>) -> Result<()> {
    let variants = match variant {
        Some(v) => vec![v],
        None => vec![Variant::TwoD, Variant::ThreeD],
    };
    if count_only {
        for v in &variants {
            println!("{v} {}", situations(*v).len());
        }
    } else {
        let listing: Vec<_> = variants
            .iter()
            .map(|v| json!({ "variant": v, "situations": situations(*v) }))
            .collect();
        let text = serde_json::to_string_pretty(&listing).map_err(runtime)?;
        match out {
            Some(path) => write_text(path, &(text + "\n"))?,
            None => println!("{text}"),
        }
    }
    if let (Some(path), Some(v)) = (timeline, variant) {
        let t = full_timeline(v)?;
        t.write_jsonl(create(path)?).map_err(runtime)?;
        eprintln!("{} frames ({:.0} s) written to {}", t.len(), t.duration_s(), path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    timeline: &Timeline,
    base: &GazerPersona,
    m: usize,
    personas: usize,
    jitter: f64,
    seed: u64,
    config: &CliConfig,
    out: &Path,
) -> Result<()> {
    if m == 0 || personas == 0 {
        return Err(CliError::Usage("--m and --personas must be at least 1".into()));
    }
    let deterministic = base.temperature == 0.0 && base.noise_rate == 0.0 && base.p_stay == 0.0;
    let family: Vec<GazerPersona> = persona_family(base, personas, jitter, seed);
    let mut ds = synth_corpus(timeline, &family, m, &config.geometry).map_err(data)?;
    ds.meta.seed = Some(seed);
    if let Some(obj) = ds.meta.provenance.as_object_mut() {
        obj.insert("seed".into(), json!(seed));
        obj.insert("jitter".into(), json!(jitter));
        obj.insert("deterministic".into(), json!(deterministic));
    }
    write_dataset(&ds, out)?;
    eprintln!(
        "{} examples from {} personas, label counts {:?}",
        ds.len(),
        personas,
        ds.label_counts()
    );
    Ok(())
}

fn train_config(config: &CliConfig, o: &TrainOverrides, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig { seed, ..config.train };
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.patience {
        cfg.patience = v;
    }
    if let Some(v) = o.max_epochs {
        cfg.max_epochs = v;
    }
    if o.epoch_examples.is_some() {
        cfg.epoch_examples = o.epoch_examples;
    }
    if o.eval_examples.is_some() {
        cfg.eval_examples = o.eval_examples;
    }
    cfg
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::EmptyDataset(_) | TrainError::ShapeMismatch(_) | TrainError::Features(_) => data(e),
        _ => runtime(e),
    }
}

fn build_model(ds: &Dataset, arch: gaze_core::models::Arch, seed: u64) -> Result<SequenceModel<f32>> {
    let meta = &ds.meta;
    SequenceModel::build(ModelConfig::for_arch(arch, meta.m, meta.l, meta.labels.len()), seed).map_err(runtime)
}

fn print_epoch(e: &gaze_core::train::EpochRecord) {
    eprintln!(
        "epoch {:>3}  loss {:.4}  train {:.4}  eval {:.4}",
        e.epoch, e.train_loss, e.train_acc, e.eval_acc
    );
}

fn train(
    path: &Path,
    arch: gaze_core::models::Arch,
    out: &Path,
    eval: Option<&Path>,
    holdout: f64,
    history: Option<&Path>,
    cfg: &TrainConfig,
) -> Result<()> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(CliError::Usage(format!("--holdout {holdout} outside [0, 1)")));
    }
    let ds = read_dataset(path)?;
    let eval_ds = eval.map(read_dataset).transpose()?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let (train_set, eval_set) = match &eval_ds {
        Some(e) => (Subset::all(&ds), Subset::all(e)),
        None if holdout == 0.0 || ds.situation_ids().len() < 2 => {
            if holdout > 0.0 {
                eprintln!("warning: a single situation cannot be split; early-stopping on the training data");
            }
            (Subset::all(&ds), Subset::all(&ds))
        }
        None => {
            let (fit_idx, hold_idx) = holdout_split(&ds, &all, holdout, cfg.seed);
            (Subset::new(&ds, fit_idx), Subset::new(&ds, hold_idx))
        }
    };
    let model = build_model(&ds, arch, cfg.seed)?;
    eprintln!(
        "{arch}: {} parameters, {} training / {} early-stopping examples",
        model.param_count(),
        train_set.len(),
        eval_set.len()
    );
    let (model, hist) = fit_with(model, &train_set, &eval_set, cfg, &mut print_epoch).map_err(train_error)?;
    save_checkpoint(&model, out).map_err(runtime)?;
    if let Some(h) = history {
        write_text(h, &hist.to_csv())?;
    }
    let acc = evaluate(&model, &eval_set).map_err(train_error)?;
    let summary = json!({
        "arch": arch,
        "checkpoint": out,
        "best_epoch": hist.best_epoch,
        "epochs": hist.epochs.len(),
        "stop_reason": hist.stop_reason,
        "eval_top_n": acc,
    });
    println!("{summary}");
    Ok(())
}

fn kfold(
    path: &Path,
    arch: gaze_core::models::Arch,
    k: usize,
    out_dir: &Path,
    cfg: &TrainConfig,
    opts: &KFoldOptions,
) -> Result<()> {
    if k < 2 {
        return Err(CliError::Usage("--k must be at least 2".into()));
    }
    let ds = read_dataset(path)?;
    let plan = plan_for(&ds, k, cfg.seed).map_err(train_error)?;
    std::fs::create_dir_all(out_dir).map_err(|e| runtime(format!("{}: {e}", out_dir.display())))?;
    let build = |fold: usize| {
        let meta = &ds.meta;
        SequenceModel::build(
            ModelConfig::for_arch(arch, meta.m, meta.l, meta.labels.len()),
            cfg.seed.wrapping_add(fold as u64),
        )
    };
    let mut on_fold = |f: &FoldResult| {
        eprintln!(
            "fold {}: train {} test {} best epoch {} test top-n {:.4} {:.4} {:.4}",
            f.fold, f.n_train, f.n_test, f.history.best_epoch, f.test_acc[0], f.test_acc[1], f.test_acc[2]
        );
        let _ = std::fs::write(out_dir.join(format!("fold-{}-history.csv", f.fold)), f.history.to_csv());
    };
    let run = run_kfold(&ds, &plan, &build, cfg, opts, &mut on_fold).map_err(train_error)?;
    let output = run.output(&arch.to_string(), &ds);
    let report = build_report(std::slice::from_ref(&output));
    let file = KFoldFile { output, run };
    write_text(
        &out_dir.join("kfold.json"),
        &serde_json::to_string_pretty(&file).map_err(runtime)?,
    )?;
    write_report(&report, out_dir)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn write_report(report: &AccuracyReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    write_text(&dir.join("report.csv"), &report.to_csv())?;
    write_text(&dir.join("report.json"), &report.to_json())?;
    write_text(
        &dir.join("plot.json"),
        &serde_json::to_string_pretty(&report.plot_series()).map_err(runtime)?,
    )
}

fn parse_cues(list: &str) -> Result<CueSet> {
    let mut set = CueSet::EMPTY;
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let cue: Cue = serde_json::from_value(json!(name)).map_err(|_| CliError::Usage(format!("unknown cue {name:?}")))?;
        set.insert(cue);
    }
    Ok(set)
}

fn fit_baseline(path: &Path, form: AttentionForm, mask: CueSet, holdout: f64, ga: &GaConfig, out: &Path) -> Result<()> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(CliError::Usage(format!("--holdout {holdout} outside [0, 1)")));
    }
    let ds = read_dataset(path)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let (fit_idx, hold_idx) = if holdout > 0.0 && ds.situation_ids().len() >= 2 {
        holdout_split(&ds, &all, holdout, ga.seed)
    } else {
        (all, Vec::new())
    };
    let heldout = (!hold_idx.is_empty()).then_some(hold_idx.as_slice());
    let result = fit_ga(&ds, &fit_idx, heldout, form, mask, ga).map_err(data)?;
    let file = BaselineFile {
        variant: ds.meta.variant,
        m: ds.meta.m,
        normalization: ds.meta.normalization,
        weights: result.weights,
        train_accuracy: result.train_accuracy,
        heldout_accuracy: result.heldout_accuracy,
        best_fitness: result.best_fitness,
        seed: ga.seed,
    };
    write_text(out, &serde_json::to_string_pretty(&file).map_err(runtime)?)?;
    println!(
        "{}",
        json!({ "train_accuracy": file.train_accuracy, "heldout_accuracy": file.heldout_accuracy })
    );
    Ok(())
}

fn eval_kfold(files: &[PathBuf], out_dir: Option<&Path>) -> Result<()> {
    let mut outputs = Vec::with_capacity(files.len());
    for path in files {
        let value: serde_json::Value = read_json(path)?;
        let output = match value.get("output") {
            Some(o) => serde_json::from_value::<KFoldOutput>(o.clone()),
            None => serde_json::from_value::<KFoldOutput>(value),
        }
        .map_err(|e| data(format!("{}: {e}", path.display())))?;
        outputs.push(output);
    }
    let report = build_report(&outputs);
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn score(probs: &[Vec<f64>], labels: &[usize], c: usize, out_dir: Option<&Path>) -> Result<()> {
    let mut top_n = Vec::new();
    for n in 1..=c.min(3) {
        top_n.push(topn_accuracy(probs, labels, n).map_err(data)?);
    }
    let predicted: Vec<usize> = probs
        .iter()
        .map(|p| gaze_core::eval::top_labels(p, 1)[0])
        .collect();
    let matrix = confusion(&predicted, labels, c).map_err(data)?;
    let summary = json!({ "examples": labels.len(), "top_n": top_n, "confusion": matrix });
    let text = serde_json::to_string_pretty(&summary).map_err(runtime)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        write_text(&dir.join("eval.json"), &text)?;
    }
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn eval_model(model: &Path, path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(model).map_err(data)?;
    let ds = read_dataset(path)?;
    let all = Subset::all(&ds);
    let probs = predict_subset(&model, &all).map_err(train_error)?;
    let labels: Vec<usize> = (0..ds.len()).map(|i| ds.example(i).label).collect();
    let (m, l, c) = model.config.dims();
    if (m, l, c) != (ds.meta.m, ds.meta.l, ds.meta.labels.len()) {
        return Err(data("model and dataset shapes differ"));
    }
    score(&probs, &labels, c, out_dir)
}

fn eval_baseline(baseline: &Path, path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let file: BaselineFile = read_json(baseline)?;
    let ds = read_dataset(path)?;
    if file.variant != ds.meta.variant {
        return Err(data(format!("baseline is {}, dataset is {}", file.variant, ds.meta.variant)));
    }
    let c = ds.meta.labels.len();
    let mut probs = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let row = ds.last_frame(i).iter().map(|&v| f64::from(v)).collect();
        let features = FrameFeatures::from_flat(ds.meta.variant, true, row).expect("row width matches variant");
        let mut p = vec![0.0; c];
        if let Ok(label) = predict(&FrameTargets::from_features(&features, &ds), &file.weights) {
            p[label] = 1.0;
        }
        probs.push(p);
        labels.push(ds.example(i).label);
    }
    score(&probs, &labels, c, out_dir)
}

fn build_predictor(args: &PredictorArgs, config: &CliConfig) -> Result<Arc<dyn Predictor>> {
    let m = args.m.unwrap_or(config.policy.m);
    if let Some(path) = &args.model {
        let model = load_checkpoint(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        let (_, l, _) = model.config.dims();
        let variant = variant_of_width(l).ok_or_else(|| data(format!("no scene variant has {l} features")))?;
        if args.variant.is_some_and(|v| v != variant) {
            return Err(CliError::Usage(format!("checkpoint is a {variant} model")));
        }
        return Ok(Arc::new(ModelPredictor { model, variant }));
    }
    if let Some(path) = &args.baseline {
        let file: BaselineFile = read_json(path)?;
        if args.variant.is_some_and(|v| v != file.variant) {
            return Err(CliError::Usage(format!("baseline was fitted on {} data", file.variant)));
        }
        return Ok(Arc::new(BaselinePredictor {
            weights: file.weights,
            variant: file.variant,
            m: args.m.unwrap_or(file.m),
            normalization: file.normalization,
        }));
    }
    let persona = match &args.persona {
        Some(path) => read_json::<GazerPersona>(path)?,
        None => GazerPersona::planted(),
    };
    persona.validate().map_err(data)?;
    Ok(Arc::new(OraclePredictor {
        persona,
        variant: args.variant.unwrap_or(Variant::TwoD),
        m,
        normalization: config.normalization,
    }))
}

fn run_timeline(
    predictor: &dyn Predictor,
    timeline: &Timeline,
    config: &CliConfig,
    log: Option<&Path>,
    realtime: bool,
) -> Result<()> {
    if timeline.variant != predictor.variant() {
        return Err(data(format!(
            "timeline is {}, predictor expects {}",
            timeline.variant,
            predictor.variant()
        )));
    }
    let policy = gaze_core::controller::ControllerPolicy {
        m: predictor.window_len(),
        ..config.policy
    };
    let mut controller = Controller::new(policy, predictor, config.normalization).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out: Box<dyn Write> = match log {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let mut sink = |cmd: &gaze_core::controller::GazeCommand| -> std::result::Result<(), ControllerError> {
        write_command(&mut out, cmd).map_err(ControllerError::from)
    };
    let stats = run_stream(&mut controller, &timeline.frames, timeline.fps, realtime, &mut sink).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    eprintln!(
        "{} ticks, latency mean {:.3} ms, p99 {:.3} ms, max {:.3} ms",
        stats.latencies.len(),
        ms(stats.mean()),
        ms(stats.quantile(0.99)),
        ms(stats.max())
    );
    Ok(())
}

fn detect_kind(path: &Path) -> Result<FileKind> {
    let mut head = [0u8; 4];
    let mut file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let n = file.read(&mut head).map_err(data)?;
    if n == 4 && &head == CHECKPOINT_MAGIC {
        return Ok(FileKind::Checkpoint);
    }
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(data)?;
    let value: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| data(format!("{}: line 1: {e}", path.display())))?;
    if value.get("schema_version").is_some() {
        Ok(FileKind::Dataset)
    } else if value.get("characters").is_some() {
        Ok(FileKind::Timeline)
    } else {
        Err(data(format!("{}: not a dataset, checkpoint or timeline", path.display())))
    }
}

fn validate(path: &Path, kind: FileKind) -> Result<()> {
    let kind = match kind {
        FileKind::Auto => detect_kind(path)?,
        k => k,
    };
    let summary = match kind {
        FileKind::Dataset => {
            let ds = read_dataset(path)?;
            format!(
                "dataset: {} examples, variant {}, m {}, L {}, label counts {:?}",
                ds.len(),
                ds.meta.variant,
                ds.meta.m,
                ds.meta.l,
                ds.label_counts()
            )
        }
        FileKind::Checkpoint => {
            let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            let model = read_checkpoint(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))?;
            let (m, l, c) = model.config.dims();
            format!(
                "checkpoint: {} model, m {m}, L {l}, C {c}, {} parameters",
                model.arch(),
                model.param_count()
            )
        }
        FileKind::Timeline => {
            let t = read_timeline(path)?;
            format!(
                "timeline: variant {}, {} frames, {} situations",
                t.variant,
                t.len(),
                t.situation_ids().len()
            )
        }
        FileKind::Auto => unreachable!("kind resolved above"),
    };
    println!("ok {summary}");
    Ok(())
}
