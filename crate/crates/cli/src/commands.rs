use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use advmt::data::{load_csv, save_csv, Corpus, CorpusConfig, Split, WindowedSample, MANIFEST_FILE, TOPOLOGY_FILE};
use advmt::eval::{
    ablation_report, evaluate_systems, render_pose_strip, speed_comparison, EvalReport, HorizonSet, Named, Predictor,
    StripOptions, StripRole, ZeroVelocity,
};
use advmt::gradcheck::{run_suite, GradcheckOptions};
use advmt::model::EncoderModel;
use advmt::skeleton::{bone_lengths, MotionSequence, SkeletonTopology};
use advmt::tensor::{corrupt_backward_rule, OpKind};
use advmt::training::{discriminator_checkpoint_name, encoder_checkpoint_name, fit_with, TrainConfig, TRAIN_LOG_FILE};
use ndarray::{s, Axis};
use serde_json::Value;

use crate::args::{EvalArgs, GenerateArgs, GradcheckArgs, PredictArgs, TrainArgs, ValidateArgs};
use crate::run::{load_config, resolve_seed, sha256_file, Failure, Input, Outcome, RunDir, RunManifest};

pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TEXT: &str = "ablation.txt";
pub const SPEED_FILE: &str = "speed.csv";
pub const STRIP_DIR: &str = "strips";

fn decode<T: serde::de::DeserializeOwned>(config: Value, path: Option<&Path>) -> Outcome<T> {
    let what = path.map_or("config".to_owned(), |p| p.display().to_string());
    serde_json::from_value(config).input(what)
}

fn effective(config: &impl serde::Serialize) -> Value {
    serde_json::to_value(config).expect("configs serialize")
}

fn topology(path: Option<&Path>) -> Outcome<SkeletonTopology> {
    match path {
        Some(p) => SkeletonTopology::load(p).input(p.display()),
        None => Ok(SkeletonTopology::default_17()),
    }
}

fn load_corpus(dir: &Path) -> Outcome<Corpus> {
    Corpus::load(dir).input(dir.display())
}

fn load_encoder(path: &Path) -> Outcome<EncoderModel> {
    EncoderModel::load(path).input(path.display())
}

pub fn generate(args: GenerateArgs) -> Outcome {
    let config_path = args.config.as_deref();
    let raw = load_config(config_path, "generate")?;
    let seed = resolve_seed(args.run.seed, &raw)?;
    let mut config: CorpusConfig = decode(raw, config_path)?;
    config.seed = seed.0;
    if let Some(frames) = args.frames {
        config.frames = frames;
    }
    if let Some(fps) = args.fps {
        config.fps = fps;
    }
    if let Some(styles) = &args.styles {
        config.styles = styles.iter().map(|s| s.parse()).collect::<Result<_, _>>().input("--styles")?;
    }
    config.validate().input("config")?;
    config.topology().input("topology")?;

    let manifest = RunManifest::new("generate", config_path, effective(&config), seed)
        .with_inputs(&config.topology.iter().cloned().collect::<Vec<_>>())?;
    let run = RunDir::start(args.run.out, manifest)?;
    match Corpus::generate(&config).and_then(|c| c.write(run.path())) {
        Ok(written) => {
            let mut outputs = vec![PathBuf::from(MANIFEST_FILE), PathBuf::from(TOPOLOGY_FILE)];
            outputs.extend(written.entries.iter().map(|e| PathBuf::from(&e.path)));
            let train = written.entries.iter().filter(|e| e.split == Split::Train).count();
            println!(
                "wrote {} train and {} test sequences to {}",
                train,
                written.entries.len() - train,
                run.path().display()
            );
            run.finish(Ok(outputs))
        }
        Err(e) => {
            run.discard();
            Err(Failure::from(e).note("partial outputs removed"))
        }
    }
}

/// Largest change of any bone's length relative to the sequence's first
/// frame, in mm.
fn bone_drift(seq: &MotionSequence, topo: &SkeletonTopology) -> Outcome<f64> {
    let frames = seq.frames();
    let first = bone_lengths(frames.index_axis(Axis(0), 0), topo).input("bone lengths")?;
    let mut worst: f64 = 0.0;
    for pose in frames.outer_iter() {
        let lengths = bone_lengths(pose, topo).input("bone lengths")?;
        for (a, b) in lengths.iter().zip(&first) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

pub fn validate(args: ValidateArgs) -> Outcome {
    let mut checked: Vec<(String, MotionSequence)> = Vec::new();
    let topo = if args.data.is_dir() {
        let corpus = load_corpus(&args.data)?;
        for split in [Split::Train, Split::Test] {
            for (i, seq) in corpus.sequences(split).enumerate() {
                checked.push((format!("{}[{i}]", split.label()), seq.clone()));
            }
        }
        corpus.topology().clone()
    } else {
        let topo = topology(args.topology.as_deref())?;
        let seq = load_csv(&args.data, &topo).input(args.data.display())?;
        checked.push((args.data.display().to_string(), seq));
        topo
    };
    let mut worst = (0.0, String::new());
    for (name, seq) in &checked {
        let drift = bone_drift(seq, &topo)?;
        if drift > worst.0 || worst.1.is_empty() {
            worst = (drift, name.clone());
        }
    }
    println!(
        "{} sequences parsed; largest bone-length drift {:.3e} mm ({})",
        checked.len(),
        worst.0,
        worst.1
    );
    if worst.0 > args.tolerance {
        return Err(Failure::Check(format!(
            "bone length drifts by {:.3e} mm in {}, above the tolerance of {:e} mm",
            worst.0, worst.1, args.tolerance
        )));
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Outcome {
    let config_path = args.config.as_deref();
    let raw = load_config(config_path, "train")?;
    let seed = resolve_seed(args.run.seed, &raw)?;
    let mut config: TrainConfig = decode(raw, config_path)?;
    config.seed = seed.0;
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }
    if let Some(l) = args.lambda_bone {
        config.loss_weights.lambda_bone = l;
    }
    if let Some(l) = args.lambda_adv {
        config.loss_weights.lambda_adv = l;
    }
    config.validate()?;
    let corpus = load_corpus(&args.data)?;

    let manifest = RunManifest::new("train", config_path, effective(&config), seed)
        .with_inputs(&[args.data.join(MANIFEST_FILE)])?;
    let run = RunDir::start(args.run.out, manifest)?;
    let result = fit_with(&corpus, &config, Some(run.path()), |r| {
        let val: Vec<String> = r.val_mpjpe.iter().map(|v| format!("{v:.1}")).collect();
        eprintln!(
            "epoch {:>3}  mpjpe {:>8.2}  bone {:>7.3}  adv {:>6.3}  disc {:>6.3}  val [{}]  {:.0}s",
            r.epoch,
            r.train.mpjpe,
            r.train.bone,
            r.train.adversarial,
            r.disc_loss,
            val.join(", "),
            r.wall_clock_s
        );
    });
    match result {
        Ok(_) => {
            let encoder = encoder_checkpoint_name(config.epochs);
            println!("final encoder checkpoint {}", run.path().join(&encoder).display());
            let mut outputs = vec![PathBuf::from(TRAIN_LOG_FILE)];
            for epoch in (1..=config.epochs).filter(|e| e % config.checkpoint_every == 0 || *e == config.epochs) {
                outputs.push(encoder_checkpoint_name(epoch).into());
                outputs.push(discriminator_checkpoint_name(epoch).into());
            }
            run.finish(Ok(outputs))
        }
        Err(e) => run.finish(Err(e.into())),
    }
}

fn parse_frame_range(text: &str, future_len: usize) -> Outcome<std::ops::RangeInclusive<usize>> {
    let bad = || Failure::Usage(format!("--speed-frames {text:?}: expected <first>-<last> within 1..={future_len}"));
    let (a, b) = text.split_once('-').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 || a > b || b > future_len {
        return Err(bad());
    }
    Ok(a..=b)
}

fn strip_name(action: &str) -> String {
    let clean: String = action
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}.svg")
}

/// First window of each action in (action, source, start) order.
fn strip_windows(windows: &[WindowedSample]) -> Vec<&WindowedSample> {
    let mut firsts: Vec<&WindowedSample> = Vec::new();
    for w in windows {
        match firsts.iter_mut().find(|f| f.action == w.action) {
            Some(f) if (w.source, w.start) < (f.source, f.start) => *f = w,
            Some(_) => {}
            None => firsts.push(w),
        }
    }
    firsts.sort_by(|a, b| a.action.cmp(&b.action));
    firsts
}

pub fn eval(args: EvalArgs) -> Outcome {
    let corpus = load_corpus(&args.data)?;
    let fps = corpus
        .sequences(Split::Test)
        .next()
        .ok_or_else(|| Failure::Usage(format!("{}: corpus has no test sequences", args.data.display())))?
        .fps();
    let horizons = HorizonSet::parse(&args.horizons, fps).input("--horizons")?;
    if horizons.span() > args.future_len {
        return Err(Failure::Usage(format!(
            "--horizons: {} ms is {} frames, beyond --future-len {}",
            horizons.milliseconds().last().expect("non-empty"),
            horizons.span(),
            args.future_len
        )));
    }
    let speed_frames = parse_frame_range(&args.speed_frames, args.future_len)?;

    let mut models: Vec<(String, PathBuf, EncoderModel)> = Vec::new();
    if let Some(path) = &args.checkpoint {
        models.push((args.label.clone(), path.clone(), load_encoder(path)?));
    }
    for entry in &args.ablate {
        let (path, label) = entry
            .rsplit_once(',')
            .filter(|(p, l)| !p.is_empty() && !l.is_empty())
            .ok_or_else(|| Failure::Usage(format!("--ablate {entry:?}: expected <checkpoint>,<label>")))?;
        if models.iter().any(|(l, _, _)| l == label) || label == ZeroVelocity.name() {
            return Err(Failure::Usage(format!("--ablate {entry:?}: label {label:?} is already in use")));
        }
        models.push((label.to_owned(), PathBuf::from(path), load_encoder(Path::new(path))?));
    }
    let history_len = models.first().map_or(args.history_len, |(_, _, m)| m.config().history_len);
    for (label, path, model) in &models {
        let cfg = model.config();
        if cfg.history_len != history_len {
            return Err(Failure::Usage(format!(
                "{}: observes {} frames, other checkpoints {history_len}",
                path.display(),
                cfg.history_len
            )));
        }
        if cfg.joint_count() != corpus.topology().joint_count() {
            return Err(Failure::Usage(format!(
                "{} ({label}): {} joints, corpus {}",
                path.display(),
                cfg.joint_count(),
                corpus.topology().joint_count()
            )));
        }
    }

    let seed = resolve_seed(args.run.seed, &Value::Null)?;
    let config = serde_json::json!({
        "horizons_ms": horizons.milliseconds(),
        "labels": models.iter().map(|(l, _, _)| l).collect::<Vec<_>>(),
        "baseline_only": args.baseline_only,
        "history_len": history_len,
        "future_len": args.future_len,
        "stride": args.stride,
        "speed_frames": [speed_frames.start(), speed_frames.end()],
        "svg": args.svg,
    });
    let mut inputs = vec![args.data.join(MANIFEST_FILE)];
    inputs.extend(models.iter().map(|(_, p, _)| p.clone()));
    let manifest = RunManifest::new("eval", None, config, seed).with_inputs(&inputs)?;
    let run = RunDir::start(args.run.out.clone(), manifest)?;
    let result = eval_in(&args, &corpus, &horizons, speed_frames, history_len, &models, run.path());
    run.finish(result)
}

fn eval_in(
    args: &EvalArgs,
    corpus: &Corpus,
    horizons: &HorizonSet,
    speed_frames: std::ops::RangeInclusive<usize>,
    history_len: usize,
    models: &[(String, PathBuf, EncoderModel)],
    dir: &Path,
) -> Outcome<Vec<PathBuf>> {
    let windows = corpus.windows(Split::Test, history_len, args.future_len, args.stride)?;
    let named: Vec<Named> = models
        .iter()
        .map(|(label, _, m)| Named {
            name: label.clone(),
            inner: m,
        })
        .collect();
    let mut systems: Vec<&dyn Predictor> = named.iter().map(|n| n as &dyn Predictor).collect();
    systems.push(&ZeroVelocity);

    let mut report = evaluate_systems(&systems, &windows, horizons)?;
    if let Some((_, path, _)) = models.first() {
        report.meta.checkpoint = Some(sha256_file(path).input(path.display())?);
    }
    let mut outputs = vec![PathBuf::from(REPORT_FILE)];
    report.write(&dir.join(REPORT_FILE))?;

    let variant = |name: &str| EvalReport {
        rows: report.rows.iter().filter(|r| r.system == name).cloned().collect(),
        ..report.clone()
    };
    // Baseline first, then the variants, the primary checkpoint last.
    let mut order: Vec<&str> = vec![ZeroVelocity.name()];
    order.extend(named.iter().skip(1).map(|n| n.name.as_str()));
    order.extend(named.first().map(|n| n.name.as_str()));
    let runs: Vec<(String, EvalReport)> = order.iter().map(|s| ((*s).to_owned(), variant(s))).collect();
    let table = ablation_report(&runs)?;
    print!("{}", table.to_text());
    if !args.ablate.is_empty() {
        write_output(dir, ABLATION_CSV, &table.to_csv())?;
        write_output(dir, ABLATION_TEXT, &table.to_text())?;
        outputs.push(ABLATION_CSV.into());
        outputs.push(ABLATION_TEXT.into());
    }

    let mut speed = String::from("system,predicted_mm_per_frame,truth_mm_per_frame\n");
    for system in &systems {
        let c = speed_comparison(*system, &windows, speed_frames.clone())?;
        writeln!(speed, "{},{},{}", system.name(), c.predicted, c.truth).expect("writing to a String");
    }
    write_output(dir, SPEED_FILE, &speed)?;
    outputs.push(SPEED_FILE.into());

    if args.svg {
        let strip_dir = dir.join(STRIP_DIR);
        fs::create_dir_all(&strip_dir).map_err(|e| Failure::Check(format!("{}: {e}", strip_dir.display())))?;
        let primary = systems[0];
        let fps = horizons.fps();
        for w in strip_windows(&windows) {
            let truth = MotionSequence::new(w.target.clone(), fps, Some(w.action.clone()))
                .map_err(|e| Failure::Check(e.to_string()))?;
            let pred = MotionSequence::new(primary.predict(w.input.view(), args.future_len)?, fps, None)
                .map_err(|e| Failure::Check(e.to_string()))?;
            let rel = Path::new(STRIP_DIR).join(strip_name(&w.action));
            render_pose_strip(
                &[(&truth, StripRole::GroundTruth), (&pred, StripRole::Prediction)],
                corpus.topology(),
                &dir.join(&rel),
                &StripOptions::default(),
            )?;
            outputs.push(rel);
        }
    }
    println!(
        "test windows: {}, systems: {}, outputs: {}",
        report.meta.windows,
        systems.len(),
        dir.display()
    );
    Ok(outputs)
}

fn write_output(dir: &Path, name: &str, text: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::Check(format!("{}: {e}", path.display())))
}

pub fn predict(args: PredictArgs) -> Outcome {
    let model = load_encoder(&args.checkpoint)?;
    let topo = topology(args.topology.as_deref())?;
    if model.config().joint_count() != topo.joint_count() {
        return Err(Failure::Usage(format!(
            "{}: {} joints, topology {}",
            args.checkpoint.display(),
            model.config().joint_count(),
            topo.joint_count()
        )));
    }
    let seq = load_csv(&args.input, &topo).input(args.input.display())?;
    let t = model.config().history_len;
    if seq.frame_count() < t {
        return Err(Failure::Usage(format!(
            "{}: {} frames, the model observes {t}",
            args.input.display(),
            seq.frame_count()
        )));
    }
    if args.frames == 0 {
        return Err(Failure::Usage("--frames must be at least 1".into()));
    }
    let same = match (fs::canonicalize(&args.input), fs::canonicalize(&args.out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Failure::Usage("--out would overwrite --input".into()));
    }
    let f = seq.frame_count();
    let pred = model.predict(seq.frames().slice(s![f - t.., .., ..]), args.frames)?;
    let out = MotionSequence::new(pred, seq.fps(), seq.action().map(str::to_owned))
        .map_err(|e| Failure::Check(e.to_string()))?;
    save_csv(&out, &topo, &args.out).map_err(|e| Failure::Check(e.to_string()))?;
    println!("wrote {} predicted frames to {}", args.frames, args.out.display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Outcome {
    if args.instances == 0 {
        return Err(Failure::Usage("--instances must be at least 1".into()));
    }
    let corrupt = match &args.corrupt_op {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            let known: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
            Failure::Usage(format!("unknown operation {name:?}; one of {}", known.join(", ")))
        })?),
        None => None,
    };
    corrupt_backward_rule(corrupt);
    let opts = GradcheckOptions {
        instances: args.instances,
        seed: args.seed,
        ..GradcheckOptions::default()
    };
    let started = Instant::now();
    let results = run_suite(&opts);
    for r in &results {
        let verdict = if r.passed { "pass" } else { "FAIL" };
        println!("{:<28} {:>10.3e}  {verdict}", r.name, r.worst_rel_err);
    }
    println!(
        "{} checks x {} instances, step {:e}, tolerance {:e}, {:.1}s",
        results.len(),
        opts.instances,
        opts.step,
        opts.tolerance,
        started.elapsed().as_secs_f64()
    );
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (worst rel err {:.3e})", r.name, r.worst_rel_err))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed: {}", failed.join(", "))))
    }
}
