use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mldrnet::data::{self, relabel_noise, split, synth as synthesize, CueMix, Dataset, SynthSpec};
use mldrnet::diagnostics::{check_layers, check_model, CheckResult};
use mldrnet::error::Error;
use mldrnet::fusion::FusionKind;
use mldrnet::metrics::{config_hash, evaluate, write_report, ReportFormat, Report};
use mldrnet::model::{self, Arch, ModelConfig};
use mldrnet::train::{ablate as run_ablation, AblationAxis, RunConfig, Trainer};

use crate::{AblateArgs, EvalArgs, GradcheckArgs, RunArgs, SynthArgs, TrainArgs};

pub enum CliError {
    Core(Error),
    /// The command ran but its check did not pass.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_validation() => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::InvalidConfig(msg.into()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        count: a.count,
        image_size: a.size,
        cue_mix: a.cue_mix.parse::<CueMix>()?,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    spec.validate()?;
    let ds = synthesize::<f64>(&spec)?;
    data::store(&ds, &a.out)?;
    println!("wrote {} samples ({}x{}) to {}", ds.len(), a.size, a.size, a.out.display());
    Ok(())
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in a.overrides() {
        cfg.apply(k, &v)?;
    }
    for pair in &a.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.apply(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Sets {
    train: Dataset<f64>,
    val: Option<Dataset<f64>>,
    test: Option<Dataset<f64>>,
}

fn load_sets(cfg: &RunConfig) -> Result<Sets> {
    let sets = if let Some(path) = &cfg.data {
        let all = data::load::<f64>(path)?;
        let (train, test, val) = split(&all, cfg.split, cfg.seed())?;
        Sets {
            train,
            val: (!val.is_empty()).then_some(val),
            test: (!test.is_empty()).then_some(test),
        }
    } else {
        let path = cfg
            .train_data
            .as_ref()
            .ok_or_else(|| invalid("no training data: set data or train_data"))?;
        let opt = |p: &Option<PathBuf>| -> Result<Option<Dataset<f64>>> {
            Ok(match p {
                Some(p) => Some(data::load(p)?),
                None => None,
            })
        };
        Sets {
            train: data::load(path)?,
            val: opt(&cfg.val_data)?,
            test: opt(&cfg.test_data)?,
        }
    };
    for (name, ds) in [("train", Some(&sets.train)), ("val", sets.val.as_ref()), ("test", sets.test.as_ref())] {
        if let Some(ds) = ds {
            check_compatible(&cfg.model, ds, name)?;
        }
    }
    if sets.train.is_empty() {
        return Err(invalid("training set is empty"));
    }
    Ok(sets)
}

fn check_compatible(model: &ModelConfig, ds: &Dataset<f64>, name: &str) -> Result<()> {
    if ds.n_classes() != model.n_classes {
        return Err(CliError::Core(Error::ClassMismatch(format!(
            "{name} set has {} classes, model predicts {}",
            ds.n_classes(),
            model.n_classes
        ))));
    }
    if let Some((h, w)) = ds.image_size()? {
        if h < model.input_size || w < model.input_size {
            return Err(invalid(format!(
                "{name} images are {h}x{w}, smaller than input_size {}",
                model.input_size
            )));
        }
    }
    Ok(())
}

fn report_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    let ext = match cfg.report_format {
        ReportFormat::Csv => "csv",
        ReportFormat::JsonLines => "jsonl",
    };
    cfg.out_dir.join(format!("{stem}.{ext}"))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let sets = load_sets(&cfg)?;
    let train_set = if cfg.noise_rate > 0.0 {
        relabel_noise(&sets.train, cfg.noise_rate, cfg.seed())?.0
    } else {
        sets.train
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = model::load::<f64>(path)?;
            if *ckpt.model.config() != cfg.model {
                return Err(invalid("checkpoint model configuration differs from the run configuration"));
            }
            if ckpt.optimizer.config != cfg.sgd()? {
                return Err(invalid("checkpoint optimizer settings differ from the run configuration"));
            }
            if ckpt.epoch > cfg.epochs {
                return Err(invalid(format!(
                    "checkpoint is at epoch {}, beyond epochs = {}",
                    ckpt.epoch, cfg.epochs
                )));
            }
            Trainer::from_checkpoint(ckpt, cfg.batch_size)?
        }
        None => Trainer::new(cfg.model.clone(), cfg.sgd()?, cfg.batch_size)?,
    };

    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    println!(
        "training {} ({} parameters) on {} samples, config {}",
        cfg.model.arch,
        trainer.model.param_count(),
        train_set.len(),
        cfg.hash()
    );
    let epochs = trainer.fit(&train_set, sets.val.as_ref(), cfg.epochs, |l| {
        let val = match (l.val_loss, l.val_acc) {
            (Some(vl), Some(va)) => format!(" val_loss {vl:.6} val_acc {va:.4}"),
            _ => String::new(),
        };
        println!(
            "epoch {:>4} lr {} train_loss {:.6} train_acc {:.4}{val}",
            l.epoch, l.lr, l.train_loss, l.train_acc
        );
    })?;
    let ckpt_path = cfg.out_dir.join("checkpoint.mldr");
    trainer.save(&ckpt_path)?;

    let final_set = sets.test.as_ref().or(sets.val.as_ref()).unwrap_or(&train_set);
    let e = evaluate(&mut trainer.model, final_set, cfg.crops)?;
    let report = Report {
        kind: "train".into(),
        config_hash: cfg.hash(),
        seed: cfg.seed(),
        config: cfg.to_kv(),
        class_names: train_set.class_names.clone(),
        epochs,
        accuracy: Some(e.accuracy),
        confusion: Some(e.confusion),
        rows: vec![],
    };
    let path = report_path(&cfg, "report");
    write_report(&report, &path, cfg.report_format)?;
    println!("final accuracy {:.4}", e.accuracy);
    println!("wrote {} and {}", ckpt_path.display(), path.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let format = match &a.report {
        Some(p) => ReportFormat::from_path(p)?,
        None => ReportFormat::Csv,
    };
    let ckpt = model::load::<f64>(&a.checkpoint)?;
    let ds = data::load::<f64>(&a.data)?;
    let mut model = ckpt.model;
    check_compatible(model.config(), &ds, "evaluation")?;
    let e = evaluate(&mut model, &ds, a.crops)?;

    let mut config = model.config().to_kv();
    let hash = config_hash(&config);
    config.push(("checkpoint".into(), a.checkpoint.display().to_string()));
    config.push(("data".into(), a.data.display().to_string()));
    config.push(("crops".into(), a.crops.to_string()));
    println!("accuracy {:.6} on {} samples", e.accuracy, ds.len());
    for (name, tpr) in ds.class_names.iter().zip(e.confusion.tpr_per_class()) {
        match tpr {
            Some(t) => println!("  tpr {name:<14} {t:.4}"),
            None => println!("  tpr {name:<14} undefined (no samples)"),
        }
    }
    let report = Report {
        kind: "eval".into(),
        config_hash: hash,
        seed: model.config().seed,
        config,
        class_names: ds.class_names.clone(),
        accuracy: Some(e.accuracy),
        confusion: Some(e.confusion),
        ..Report::default()
    };
    let path = a.report.unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("eval.csv")
    });
    write_report(&report, &path, format)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if !(1e-7..=1e-3).contains(&a.epsilon) {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "epsilon {} outside [1e-7, 1e-3]",
            a.epsilon
        ))));
    }
    let arch: Arch = a.arch.parse()?;
    let fusions: Vec<FusionKind> = match a.fusion.as_str() {
        "all" if arch == Arch::Mldrnet => FusionKind::ALL.to_vec(),
        "all" => vec![FusionKind::Mean],
        f => vec![f.parse()?],
    };
    let mut results: Vec<CheckResult> = Vec::new();
    let show = |r: &CheckResult, results: &mut Vec<CheckResult>| {
        let verdict = if r.report.max_rel_error < a.threshold { "ok" } else { "FAIL" };
        println!(
            "{:<24} max_rel_error {:.3e}  probes {:>6}  {verdict}  worst {}",
            r.name, r.report.max_rel_error, r.report.probes, r.report.worst
        );
        results.push(r.clone());
    };
    if !a.no_layers {
        for r in check_layers(a.seed, a.epsilon)? {
            show(&r, &mut results);
        }
    }
    for fusion in fusions {
        let mut c = ModelConfig::gradcheck(fusion);
        c.arch = arch;
        c.seed = a.seed;
        if arch != Arch::Mldrnet {
            c.width_divisor = 64;
        }
        let r = check_model(&c, 2, a.seed, a.epsilon, a.inject_fault)?;
        show(&r, &mut results);
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !(r.report.max_rel_error < a.threshold))
        .map(|r| format!("{} ({:.3e} at {})", r.name, r.report.max_rel_error, r.report.worst))
        .collect();
    let worst = results.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    if failed.is_empty() {
        println!("gradcheck passed: max relative error {worst:.3e} < {:e}", a.threshold);
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradcheck failed (threshold {:e}): {}",
            a.threshold,
            failed.join("; ")
        )))
    }
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let axis: AblationAxis = a.axis.parse()?;
    let cfg = run_config(&a.run)?;
    let variants: Vec<String> = match &a.variants {
        Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
        None => axis.default_variants(&cfg),
    };
    for v in &variants {
        axis.configure(&cfg, v)?;
    }
    let sets = load_sets(&cfg)?;
    let test = sets
        .test
        .or(sets.val)
        .ok_or_else(|| invalid("ablation needs a test set: set data or test_data"))?;
    fs::create_dir_all(&cfg.out_dir)?;
    println!(
        "ablating {axis} over [{}] with seed {} and {} epochs",
        variants.join(", "),
        cfg.seed(),
        cfg.epochs
    );
    let report = run_ablation(axis, &variants, &cfg, &sets.train, &test, |r| {
        println!(
            "{axis} = {:<8} train_acc {:.4} test_acc {:.4} test_loss {:.6} config {}",
            r.variant, r.train_acc, r.test_acc, r.test_loss, r.config_hash
        );
    })?;
    let path = report_path(&cfg, &format!("ablate-{axis}"));
    write_report(&report, &path, cfg.report_format)?;
    println!("wrote {}", path.display());
    Ok(())
}
