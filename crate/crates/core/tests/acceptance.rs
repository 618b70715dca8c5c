//! End-to-end acceptance run: prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use gaze_core::attention::{all_cues, AttentionForm};
use gaze_core::baselines::{fit_ga, GaConfig};
use gaze_core::controller::{run_stream, write_command, Controller, ControllerPolicy, GazeCommand, ModelPredictor};
use gaze_core::eval::topn_accuracy;
use gaze_core::features::{
    resample_eyelink, Dataset, GazePayload, GazeSample, LabelGeometry, Normalization, Subset,
};
use gaze_core::models::{
    load_checkpoint_as, read_checkpoint, save_checkpoint, Arch, LstmConfig, ModelConfig, ModelError, SequenceModel,
    TransformerConfig,
};
use gaze_core::oracle::{persona_family, synth_corpus, GazerPersona};
use gaze_core::scene::{
    compile_timeline, enumerate_situations_2d, enumerate_situations_3d, CharacterSpecs, Cue, CueSet, Timeline,
};
use gaze_core::train::{plan_for, run_kfold, KFoldOptions, KFoldRun, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_601;

const GRAD_TOL: f64 = 1e-4;
const RESAMPLE_TOL: f64 = 1e-12;
const UNIFORM_SAMPLES: usize = 100_000;
const UNIFORM_TOL: f64 = 0.01;

// planted-oracle learning run
const PERSONAS: usize = 15;
const PERSONA_JITTER: f64 = 0.08;
const FOLDS: usize = 10;
const LSTM_MIN_TOP1: f64 = 0.85;
const LSTM_TRAIN: TrainConfig = TrainConfig {
    lr: 0.001,
    batch_size: 20,
    patience: 8,
    max_epochs: 25,
    seed: SEED,
    shuffle: true,
    epoch_examples: Some(4000),
    eval_examples: Some(2000),
};
const TRANSFORMER_FOLDS: usize = 3;
const TRANSFORMER_TRAIN: TrainConfig = TrainConfig {
    patience: 5,
    max_epochs: 12,
    ..LSTM_TRAIN
};
const TRAIN_EVAL_EXAMPLES: usize = 5000;
const GA_GENERATIONS: usize = 200;
const GA_MIN_HELDOUT: f64 = 0.90;

const TICK_BUDGET: Duration = Duration::from_micros(41_700);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(n: usize, name: &str, start: Instant, o: &Outcome, failures: &mut Vec<usize>) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {n:>2} [{verdict}] {name}: {} ({:.1} s)",
        o.detail,
        start.elapsed().as_secs_f64()
    );
    if !o.pass {
        failures.push(n);
    }
}

fn parameter_counts() -> Outcome {
    let cases = [
        (ModelConfig::Lstm(LstmConfig::new(24, 28, 5)), 57_157),
        (ModelConfig::Lstm(LstmConfig::new(24, 18, 3)), 54_467),
        (ModelConfig::Transformer(TransformerConfig::new(12, 28, 5)), 130_433),
        (ModelConfig::Transformer(TransformerConfig::new(30, 18, 3)), 81_989),
    ];
    let mut got = Vec::new();
    let mut pass = true;
    for (cfg, want) in cases {
        let built = SequenceModel::<f32>::build(cfg, SEED).unwrap().param_count();
        pass &= built == want && cfg.param_count() == want;
        got.push(format!("{}={built}", cfg.arch()));
    }
    outcome(pass, got.join(", "))
}

fn scenario_combinatorics() -> Outcome {
    let specs = enumerate_situations_2d();
    let mut by_count = BTreeMap::new();
    let mut balanced = true;
    for spec in &specs {
        *by_count.entry(spec.present_slots().len()).or_insert(0) += 1;
    }
    for slot in 0..4 {
        let acts: Vec<_> = specs
            .iter()
            .filter_map(|s| match &s.characters {
                CharacterSpecs::TwoD(cs) => cs[slot],
                CharacterSpecs::ThreeD(_) => None,
            })
            .collect();
        let half = acts.len() / 2;
        balanced &= [
            acts.iter().filter(|a| a.near).count(),
            acts.iter().filter(|a| a.pointing).count(),
            acts.iter().filter(|a| a.waving).count(),
            acts.iter().filter(|a| a.talking).count(),
        ]
        .iter()
        .all(|&c| c == half);
    }
    let specs3 = enumerate_situations_3d();
    let placements: BTreeSet<Vec<usize>> = specs3.iter().map(|s| s.present_slots()).collect();
    let expected = BTreeMap::from([(2, 32), (3, 64), (4, 32)]);
    let pass = specs.len() == 128 && by_count == expected && balanced && specs3.len() == 120 && specs3.len() == (12 + 8) * 6;
    outcome(
        pass,
        format!(
            "2D {} {:?} balanced={balanced}; 3D {} over {} presence patterns",
            specs.len(),
            by_count,
            specs3.len(),
            placements.len()
        ),
    )
}

fn resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let xs: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1920.0)).collect();
    let samples: Vec<GazeSample> = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| GazeSample {
            t: i as f64 / 1000.0,
            payload: GazePayload::Screen { x, y: 500.0 },
            valid: true,
        })
        .collect();
    let out = resample_eyelink(&samples).unwrap();
    // hand grouping: each 125-sample block splits 42 / 42 / 41
    let mut expected = Vec::new();
    for block in xs.chunks_exact(125) {
        for (a, b) in [(0, 42), (42, 84), (84, 125)] {
            let g = &block[a..b];
            expected.push(g.iter().sum::<f64>() / g.len() as f64);
        }
    }
    let worst = out
        .iter()
        .zip(&expected)
        .map(|(s, e)| match s.payload {
            GazePayload::Screen { x, .. } => (x - e).abs(),
            GazePayload::Yaw { .. } => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    outcome(
        out.len() == 24 && expected.len() == 24 && worst <= RESAMPLE_TOL,
        format!("1 s -> {} frames, max group-mean error {worst:e}", out.len()),
    )
}

fn gradient_check() -> Outcome {
    let mut lstm = LstmConfig::new(4, 6, 3);
    lstm.units = 8;
    let mut worst = Vec::new();
    for cfg in [ModelConfig::Lstm(lstm), ModelConfig::Transformer(TransformerConfig::new(4, 6, 3))] {
        let model = SequenceModel::<f64>::build(cfg, SEED).unwrap();
        let batch = common::random_batch(2, 4, 6, SEED + 1);
        worst.push((cfg.arch(), common::max_relative_error(model, &batch, &[0, 2])));
    }
    outcome(
        worst.iter().all(|(_, e)| *e < GRAD_TOL),
        worst
            .iter()
            .map(|(a, e)| format!("{a} max rel err {e:.2e}"))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn topn_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let probs: Vec<Vec<f64>> = (0..UNIFORM_SAMPLES)
        .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let labels: Vec<usize> = (0..UNIFORM_SAMPLES).map(|_| rng.gen_range(0..5)).collect();
    let acc: Vec<f64> = (1..=5).map(|n| topn_accuracy(&probs, &labels, n).unwrap()).collect();
    let monotone = acc.windows(2).all(|w| w[0] <= w[1]);
    let near = (0..3).all(|k| (acc[k] - 0.2 * (k + 1) as f64).abs() <= UNIFORM_TOL);
    outcome(
        monotone && acc[4] == 1.0 && near,
        format!("top-1..5 = {:.4} {:.4} {:.4} {:.4} {:.4}", acc[0], acc[1], acc[2], acc[3], acc[4]),
    )
}

fn fold_partition(ds: &Dataset) -> Outcome {
    let plan = plan_for(ds, FOLDS, SEED).unwrap();
    let ids: BTreeSet<usize> = ds.situation_ids().into_iter().collect();
    let mut seen = BTreeMap::new();
    for set in &plan.test_sets {
        for &s in set {
            *seen.entry(s).or_insert(0) += 1;
        }
    }
    let exactly_once = seen.values().all(|&c| c == 1);
    let covers = seen.keys().copied().collect::<BTreeSet<_>>() == ids;
    let mut consistent = true;
    for fold in 0..plan.k {
        let (train, test) = plan.split(ds, fold);
        consistent &= train.len() + test.len() == ds.len();
        consistent &= test.iter().all(|&i| plan.fold_of(ds.example(i).situation_id) == Some(fold));
        consistent &= train.iter().all(|&i| plan.fold_of(ds.example(i).situation_id) != Some(fold));
    }
    outcome(
        exactly_once && covers && consistent,
        format!(
            "{} situations over {} folds, exactly-once={exactly_once}, covers={covers}, membership={consistent}",
            ids.len(),
            plan.k
        ),
    )
}

fn oracle_corpus(timeline: &Timeline) -> Dataset {
    let base = GazerPersona::planted().deterministic();
    let personas: Vec<GazerPersona> = persona_family(&base, PERSONAS, PERSONA_JITTER, SEED)
        .into_iter()
        .map(GazerPersona::deterministic)
        .collect();
    synth_corpus(timeline, &personas, 24, &LabelGeometry::default()).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn kfold(ds: &Dataset, config: ModelConfig, train: &TrainConfig, folds: usize) -> KFoldRun {
    let plan = plan_for(ds, FOLDS, SEED).unwrap();
    let options = KFoldOptions {
        holdout: None,
        train_eval_examples: Some(TRAIN_EVAL_EXAMPLES),
        max_folds: Some(folds),
    };
    let started = Instant::now();
    run_kfold(
        ds,
        &plan,
        &|fold| SequenceModel::build(config, SEED + 1000 + fold as u64),
        train,
        &options,
        &mut |r| {
            println!(
                "    {} fold {}: test top-1/2/3 {:.3}/{:.3}/{:.3}, {} epochs (best {}), {:.0} s",
                config.arch(),
                r.fold,
                r.test_acc[0],
                r.test_acc[1],
                r.test_acc[2],
                r.history.epochs.len(),
                r.history.best_epoch,
                started.elapsed().as_secs_f64()
            )
        },
    )
    .unwrap()
}

/// Cues of the published sum-form model; the others carry no weight.
const SUM_MODEL_CUES: [Cue; 4] = [Cue::Talking, Cue::Waving, Cue::Entering, Cue::Leaving];

/// Sum-form GA held-out accuracy per fold.
fn sum_baseline(ds: &Dataset, folds: usize, mask: CueSet) -> Vec<f64> {
    let plan = plan_for(ds, FOLDS, SEED).unwrap();
    (0..folds)
        .map(|fold| {
            let (train, test) = plan.split(ds, fold);
            let cfg = GaConfig {
                generations: GA_GENERATIONS,
                seed: SEED + fold as u64,
                ..GaConfig::default()
            };
            fit_ga(ds, &train, Some(&test), AttentionForm::Sum, mask, &cfg)
                .unwrap()
                .heldout_accuracy
                .unwrap()
        })
        .collect()
}

fn planted_learning(ds: &Dataset) -> Outcome {
    let lstm = kfold(ds, ModelConfig::Lstm(LstmConfig::new(24, 28, 5)), &LSTM_TRAIN, FOLDS);
    let top1 = mean(lstm.folds.iter().map(|f| f.test_acc[0]));
    let top2 = mean(lstm.folds.iter().map(|f| f.test_acc[1]));
    let transformer = kfold(
        ds,
        ModelConfig::Transformer(TransformerConfig::new(24, 28, 5)),
        &TRANSFORMER_TRAIN,
        TRANSFORMER_FOLDS,
    );
    let t_top1 = mean(transformer.folds.iter().map(|f| f.test_acc[0]));
    let sum = sum_baseline(ds, FOLDS, CueSet::from_cues(&SUM_MODEL_CUES));
    let sum_all = mean(sum.iter().copied());
    let sum_t = mean(sum[..TRANSFORMER_FOLDS].iter().copied());
    // reported only: the sum form given every cue
    let wide = mean(sum_baseline(ds, FOLDS, all_cues()).into_iter());
    let lstm_ok = top1 >= LSTM_MIN_TOP1 && top2 > top1;
    let ordering = top1 >= sum_all && t_top1 >= sum_t;
    outcome(
        lstm_ok && ordering,
        format!(
            "LSTM {FOLDS}-fold top-1 {top1:.3} top-2 {top2:.3}; transformer {TRANSFORMER_FOLDS}-fold top-1 {t_top1:.3}; \
             sum-form GA {sum_all:.3} ({sum_t:.3} on the transformer folds); sum form with all 8 cues {wide:.3}"
        ),
    )
}

fn ga_recovery(ds: &Dataset) -> Outcome {
    let plan = plan_for(ds, FOLDS, SEED).unwrap();
    let (train, test) = plan.split(ds, 0);
    let cfg = GaConfig {
        generations: GA_GENERATIONS,
        seed: SEED,
        ..GaConfig::default()
    };
    let r = fit_ga(ds, &train, Some(&test), AttentionForm::Product, all_cues(), &cfg).unwrap();
    let held = r.heldout_accuracy.unwrap();
    let monotone = r.best_fitness.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        held >= GA_MIN_HELDOUT && monotone,
        format!(
            "product-form held-out agreement {held:.3}, train {:.3}, fitness non-decreasing={monotone}",
            r.train_accuracy
        ),
    )
}

fn checkpoint_round_trip(model: &SequenceModel<f32>, ds: &Dataset) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lstm.gzf");
    save_checkpoint(model, &path).unwrap();
    let loaded = load_checkpoint_as(&path, Arch::Lstm).unwrap();
    let batch: Vec<f32> = (0..64).flat_map(|i| ds.window(i * 97).to_vec()).collect();
    let bits = |m: &SequenceModel<f32>| m.predict(&batch).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(model) == bits(&loaded);

    let bytes = std::fs::read(&path).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    let flip_rejected = matches!(read_checkpoint(flipped.as_slice()), Err(ModelError::CorruptFile(_)));
    let truncated = matches!(read_checkpoint(&bytes[..bytes.len() - 100]), Err(ModelError::CorruptFile(_)));
    let arch = matches!(load_checkpoint_as(&path, Arch::Transformer), Err(ModelError::ArchMismatch { .. }));
    outcome(
        identical && flip_rejected && truncated && arch,
        format!("bit-identical={identical}, flipped={flip_rejected}, truncated={truncated}, wrong arch={arch}"),
    )
}

fn command_log(model: &SequenceModel<f32>, timeline: &Timeline) -> (Vec<GazeCommand>, Vec<u8>, Duration, Duration) {
    let predictor = ModelPredictor {
        model: model.clone(),
        variant: timeline.variant,
    };
    let mut controller = Controller::new(ControllerPolicy::default(), &predictor, Normalization::default()).unwrap();
    let mut log = Vec::new();
    let mut commands = Vec::new();
    let stats = run_stream(&mut controller, &timeline.frames, timeline.fps, false, &mut |c| {
        write_command(&mut log, c)?;
        commands.push(c.clone());
        Ok(())
    })
    .unwrap();
    (commands, log, stats.max(), stats.quantile(0.99))
}

fn controller_invariants(model: &SequenceModel<f32>, timeline: &Timeline) -> Outcome {
    let policy = ControllerPolicy::default();
    let (commands, log, max_latency, p99) = command_log(model, timeline);
    let step_limit = policy.max_pan_rate_dps / timeline.fps + 1e-9;
    let mut prev_pan = policy.warmup_pan_deg;
    let mut rate_ok = true;
    for c in &commands {
        rate_ok &= (c.pan_deg - prev_pan).abs() <= step_limit;
        prev_pan = c.pan_deg;
    }
    let mut hysteresis_ok = true;
    let mut switches = 0;
    let mut last_switch: Option<f64> = None;
    for w in commands.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.target != b.target {
            if let (Some(from), Some(to)) = (a.target, b.target) {
                switches += 1;
                let dwell_ok = last_switch.is_none_or(|t| b.t_s - t >= policy.min_dwell_s - 1e-9);
                let margin_ok = b.probs[to] - b.probs[from] >= policy.switch_margin;
                hysteresis_ok &= dwell_ok || margin_ok;
            }
            last_switch = Some(b.t_s);
        }
    }
    let (_, again, _, _) = command_log(model, timeline);
    let deterministic = log == again;
    let realtime = max_latency < TICK_BUDGET;
    outcome(
        commands.len() == timeline.frames.len() && rate_ok && hysteresis_ok && deterministic && realtime,
        format!(
            "{} ticks ({:.0} s), max tick {:.2} ms (p99 {:.2} ms), {switches} switches, rate-limit={rate_ok}, \
             hysteresis={hysteresis_ok}, identical logs={deterministic}",
            commands.len(),
            timeline.duration_s(),
            max_latency.as_secs_f64() * 1e3,
            p99.as_secs_f64() * 1e3
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filtered runs expect the libtest protocol
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().skip(1).any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }

    let mut failures = Vec::new();
    let t = Instant::now();
    report(1, "parameter counts", t, &parameter_counts(), &mut failures);
    let t = Instant::now();
    report(2, "scenario combinatorics", t, &scenario_combinatorics(), &mut failures);
    let t = Instant::now();
    report(3, "resampling exactness", t, &resampling(), &mut failures);
    let t = Instant::now();
    report(4, "gradient verification", t, &gradient_check(), &mut failures);
    let t = Instant::now();
    report(5, "top-n metric properties", t, &topn_properties(), &mut failures);

    let timeline = compile_timeline(&enumerate_situations_2d(), 24.0).unwrap();
    let corpus = oracle_corpus(&timeline);
    let t = Instant::now();
    report(6, "fold partition", t, &fold_partition(&corpus), &mut failures);
    let t = Instant::now();
    let learning = planted_learning(&corpus);
    report(7, "planted-oracle learning", t, &learning, &mut failures);
    let t = Instant::now();
    report(8, "GA recovery", t, &ga_recovery(&corpus), &mut failures);

    // a trained fold-0 model for the artifact and controller checks
    let plan = plan_for(&corpus, FOLDS, SEED).unwrap();
    let (train_idx, test_idx) = plan.split(&corpus, 0);
    let quick = TrainConfig {
        max_epochs: 3,
        ..LSTM_TRAIN
    };
    let (model, _) = gaze_core::train::fit(
        SequenceModel::build(ModelConfig::Lstm(LstmConfig::new(24, 28, 5)), SEED).unwrap(),
        &Subset::new(&corpus, train_idx),
        &Subset::new(&corpus, test_idx),
        &quick,
    )
    .unwrap();
    let t = Instant::now();
    report(9, "checkpoint round trip", t, &checkpoint_round_trip(&model, &corpus), &mut failures);
    let t = Instant::now();
    report(10, "controller real-time and invariants", t, &controller_invariants(&model, &timeline), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
