//! Command-line front end: `gen-data`, `train`, `attack`, `eval`, `defend`.
//!
//! Every command writes its artifacts under `--out DIR` together with a
//! `run.json` provenance record. Exit codes: 0 success, 2 configuration
//! error, 3 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::attack::{
    load_perturbations, optimize_samplewise, optimize_uap_with, save_perturbations, write_trace_csv, AttackConfig,
    PertMode, Perturbation,
};
use crate::defenses::{defense_sweep, parse_levels, DefenseKind, PruneMode};
use crate::error::{Error, Result};
use crate::evalharness::{
    avalanche_curve, cross_prompt_eval, evaluate, mean_consecutive, multi_point_eval, noise_baseline, plot,
    rows_csv, seed_stability, Attack, Condition, EvalContext, EvalReport, Series,
};
use crate::fsutil::{sha256_hex, write_atomic};
use crate::losses::{FaForm, SaForm};
use crate::prompts::PromptKind;
use crate::segmodel::train::{train_model, TrainHyper};
use crate::segmodel::{ModelConfig, ModelParams};
use crate::synthclip::{generate_dataset, Dataset, DatasetOptions, Split, Task};

#[derive(Parser, Debug)]
#[command(name = "uapsam", version, about = "Cross-prompt universal adversarial perturbations on synthetic video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic clip dataset and its manifest.
    GenData(GenDataArgs),
    /// Train the segmenter on a manifest's train split.
    Train(TrainArgs),
    /// Optimize a universal or sample-wise perturbation.
    Attack(AttackArgs),
    /// Evaluate benign and perturbed segmentation.
    Eval(EvalArgs),
    /// Sweep a defense over levels.
    Defend(DefendArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub clips: usize,
    #[arg(long, default_value_t = 30)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TaskArg::Video)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 15)]
    pub frames: usize,
    /// Frame height and width.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 5)]
    pub image_frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest path (or a directory containing manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub seed: u64,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Stop once held-out mIoU reaches this.
    #[arg(long)]
    pub target_miou: Option<f64>,
    /// Fail (exit 3) if the best held-out mIoU is below this. Defaults to
    /// the smaller of 0.70 and the target.
    #[arg(long)]
    pub gate_miou: Option<f64>,
    /// JSON file with hyper-parameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Universal)]
    pub mode: ModeArg,
    /// Budget as `10/255` or a decimal; defaults to 10/255 universal,
    /// 8/255 sample-wise.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub scan_m: Option<usize>,
    #[arg(long, value_enum)]
    pub sa_form: Option<SaArg>,
    #[arg(long, value_enum)]
    pub fa_form: Option<FaArg>,
    /// Loss terms to drop, from `sa,fa,ma`.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimize on frame 0 only.
    #[arg(long)]
    pub first_frame_only: bool,
    /// JSON attack configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pert: Option<PathBuf>,
    /// Prompt kinds for the cross-prompt protocol.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "point")]
    pub prompts: Vec<PromptArg>,
    #[arg(long, default_value_t = 1)]
    pub prompt_count: usize,
    /// Points per prompt for the multi-point protocol, e.g. `1,2,3,5`.
    #[arg(long, value_delimiter = ',')]
    pub multi_point: Vec<usize>,
    #[arg(long)]
    pub avalanche: bool,
    #[arg(long)]
    pub noise_baseline: bool,
    /// Number of attack seeds for the seed-stability protocol.
    #[arg(long)]
    pub seed_stability: Option<usize>,
    /// Seed of the attack run the evaluation prompts are disjoint from.
    #[arg(long, default_value_t = 30)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub frames: usize,
    /// Render PNG charts next to the CSVs.
    #[arg(long)]
    pub plots: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DefendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pert: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub defense: DefenseArg,
    /// `0:0.9:0.1`, `0..5` or a comma list.
    #[arg(long)]
    pub levels: String,
    #[arg(long, value_enum, default_value_t = PruneArg::Global)]
    pub prune_mode: PruneArg,
    #[arg(long, default_value_t = 30)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Video,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum ModeArg {
    Universal,
    Samplewise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SaArg {
    Bce,
    Mse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaArg {
    Contrastive,
    Cosine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PromptArg {
    Point,
    Box,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DefenseArg {
    Prune,
    Spatter,
    Saturate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PruneArg {
    Global,
    PerLayer,
}

/// Parses `a/b` or a decimal into a budget in `[0, 1]`.
pub fn parse_epsilon(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("cannot parse budget `{s}`; use e.g. 10/255 or 0.04"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0 {
                return Err(bad());
            }
            a as f64 / b as f64
        }
        None => s.trim().parse::<f64>().map_err(|_| bad())?,
    };
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("budget {v} outside [0, 1]")));
    }
    Ok(v)
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

fn file_hash(p: &Path) -> Result<String> {
    if !p.exists() {
        return Err(Error::Missing(vec![p.to_path_buf()]));
    }
    Ok(sha256_hex(&fs::read(p)?))
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    if !p.exists() {
        return Err(Error::Missing(vec![p.to_path_buf()]));
    }
    serde_json::from_slice(&fs::read(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn write_run_json(out: &Path, command: &str, config: serde_json::Value, inputs: serde_json::Value, outputs: &[&str]) -> Result<()> {
    let record = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "version": env!("CARGO_PKG_VERSION"),
        "backend": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
    });
    write_atomic(&out.join("run.json"), serde_json::to_string_pretty(&record)?.as_bytes())
}

fn load_inputs(model: &Path, data: &Path) -> Result<(ModelParams, Dataset, serde_json::Value)> {
    let mpath = manifest_path(data);
    let missing: Vec<PathBuf> = [model.to_path_buf(), mpath.clone()].into_iter().filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let params = ModelParams::load(model)?;
    let ds = Dataset::load(&mpath)?;
    if (ds.manifest.height, ds.manifest.width) != (params.config.height, params.config.width) {
        return Err(Error::Config(format!(
            "manifest frames are {}x{}, model expects {}x{}",
            ds.manifest.height, ds.manifest.width, params.config.height, params.config.width
        )));
    }
    let inputs = json!({
        "model": { "path": model, "sha256": file_hash(model)? },
        "manifest": { "path": mpath, "sha256": file_hash(&mpath)? },
    });
    Ok((params, ds, inputs))
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Video => "video",
        Task::Image => "image",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Eval(a) => eval(a),
        Command::Defend(a) => defend(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let task = match a.task {
        TaskArg::Video => Task::Video,
        TaskArg::Image => Task::Image,
    };
    let opts = DatasetOptions {
        frame_count: a.frames,
        height: a.size,
        width: a.size,
        image_frames_per_clip: a.image_frames,
    };
    let ds = generate_dataset(a.clips, a.seed, task, &opts)?;
    let path = ds.save(&a.out)?;
    write_run_json(
        &a.out,
        "gen-data",
        json!({ "clips": a.clips, "seed": a.seed, "task": task_name(task), "frames": a.frames, "size": a.size, "image_frames": a.image_frames }),
        json!({}),
        &["manifest.json", "clips/"],
    )?;
    println!(
        "wrote {} ({} train, {} test, sha256 {})",
        path.display(),
        ds.manifest.count(Split::Train),
        ds.manifest.count(Split::Test),
        file_hash(&path)?
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut hyper = match &a.config {
        Some(p) => read_json::<TrainHyper>(p)?,
        None => TrainHyper::default(),
    };
    hyper.seed = a.seed;
    if let Some(v) = a.max_epochs {
        hyper.max_epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        hyper.steps_per_epoch = v;
    }
    if let Some(v) = a.lr {
        hyper.lr = v;
    }
    if let Some(v) = a.target_miou {
        hyper.target_miou = v;
        hyper.gate_miou = hyper.gate_miou.min(v);
    }
    if let Some(v) = a.gate_miou {
        hyper.gate_miou = v;
    }
    if hyper.max_epochs == 0 || hyper.steps_per_epoch == 0 || !(hyper.lr > 0.0) {
        return Err(Error::Config("max-epochs, steps-per-epoch and lr must be positive".into()));
    }
    let mpath = manifest_path(&a.data);
    let ds = Dataset::load(&mpath)?;
    let config = ModelConfig {
        height: ds.manifest.height,
        width: ds.manifest.width,
        ..ModelConfig::default()
    };
    config.validate()?;
    let train_units = ds.units(Split::Train, usize::MAX);
    let val_units = ds.units(Split::Test, usize::MAX);
    if train_units.is_empty() {
        return Err(Error::Config("manifest has an empty train split".into()));
    }
    let report = train_model(config, &train_units, &val_units, &hyper, |r| {
        eprintln!("epoch {:>3}  loss {:.4}  held-out mIoU {:.3}", r.epoch, r.mean_loss, r.val_miou);
    })?;
    fs::create_dir_all(&a.out)?;
    report.params.save(&a.out.join("model.bin"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.history {
        w.serialize(r)?;
    }
    write_atomic(&a.out.join("train_history.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    let best = report.history.iter().map(|r| r.val_miou).fold(0.0, f64::max);
    write_run_json(
        &a.out,
        "train",
        json!({ "hyper": hyper, "model": report.params.config }),
        json!({ "manifest": { "path": mpath, "sha256": file_hash(&mpath)? } }),
        &["model.bin", "train_history.csv"],
    )?;
    println!("held-out mIoU {best:.4}");
    Ok(())
}

fn resolve_attack_config(a: &AttackArgs) -> Result<AttackConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<AttackConfig>(p)?,
        None if a.mode == ModeArg::Samplewise => AttackConfig::samplewise(),
        None => AttackConfig::universal(),
    };
    if let Some(e) = &a.eps {
        cfg.epsilon = parse_epsilon(e)?;
    }
    if let Some(s) = &a.step {
        cfg.step_size = parse_epsilon(s)?;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.scan_m {
        cfg.scan_m = v;
    }
    if let Some(v) = a.frames {
        cfg.frames_per_clip = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.sa_form {
        cfg.loss.sa_form = match v {
            SaArg::Bce => SaForm::Bce,
            SaArg::Mse => SaForm::Mse,
        };
    }
    if let Some(v) = a.fa_form {
        cfg.loss.fa_form = match v {
            FaArg::Contrastive => FaForm::Contrastive,
            FaArg::Cosine => FaForm::Cosine,
        };
    }
    for t in &a.ablate {
        match t.trim() {
            "sa" => cfg.loss.w_sa = 0.0,
            "fa" => cfg.loss.w_fa = 0.0,
            "ma" => cfg.loss.w_ma = 0.0,
            "" => {}
            other => return Err(Error::Config(format!("unknown loss term `{other}` in --ablate"))),
        }
    }
    cfg.first_frame_only |= a.first_frame_only;
    cfg.validate()?;
    Ok(cfg)
}

fn attack(a: AttackArgs) -> Result<()> {
    let cfg = resolve_attack_config(&a)?;
    let (params, ds, inputs) = load_inputs(&a.model, &a.data)?;
    crate::prompts::scan_targets(ds.manifest.height, ds.manifest.width, cfg.scan_m, 0)?;
    let train_units = ds.units(Split::Train, cfg.frames_per_clip);
    fs::create_dir_all(&a.out)?;
    let (perts, trace): (Vec<Perturbation>, _) = match a.mode {
        ModeArg::Universal => {
            let out = optimize_uap_with(&params, &train_units, &cfg, |r| {
                eprintln!(
                    "epoch {:>2} clip {:>3}  J_sa {:.4}  J_fa {:.4}  J_ma {}  J_total {:.4}",
                    r.epoch,
                    r.clip_id,
                    r.j_sa,
                    r.j_fa,
                    r.j_ma.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                    r.j_total
                );
            })?;
            (vec![out.perturbation], out.trace)
        }
        ModeArg::Samplewise => {
            let test_units = ds.units(Split::Test, cfg.frames_per_clip);
            let mut perts = Vec::new();
            let mut trace = Vec::new();
            for (i, u) in test_units.iter().enumerate() {
                let out = optimize_samplewise(&params, u, &train_units, &cfg)?;
                trace.extend(out.trace.into_iter().map(|r| crate::attack::TraceRow { clip_id: i, ..r }));
                perts.push(out.perturbation);
            }
            (perts, trace)
        }
    };
    save_perturbations(&a.out.join("perturbation.bin"), &perts)?;
    write_trace_csv(&a.out.join("loss_trace.csv"), &trace)?;
    write_run_json(
        &a.out,
        "attack",
        json!({ "mode": perts[0].mode, "attack": cfg, "config_hash": cfg.hash() }),
        inputs,
        &["perturbation.bin", "loss_trace.csv"],
    )?;
    println!(
        "wrote {} {} perturbation(s), epsilon {:.6}, max |delta| {:.6}",
        perts.len(),
        perts[0].mode.as_str(),
        cfg.epsilon,
        perts.iter().map(|p| p.linf()).fold(0.0, f64::max)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.prompt_count == 0 || a.frames == 0 {
        return Err(Error::Config("prompt-count and frames must be at least 1".into()));
    }
    if a.multi_point.contains(&0) {
        return Err(Error::Config("multi-point counts must be at least 1".into()));
    }
    if matches!(a.seed_stability, Some(n) if n < 2) {
        return Err(Error::Config("seed-stability needs at least 2 seeds".into()));
    }
    let (params, ds, mut inputs) = load_inputs(&a.model, &a.data)?;
    let perts = match &a.pert {
        Some(p) => {
            inputs["perturbation"] = json!({ "path": p, "sha256": file_hash(p)? });
            load_perturbations(p)?
        }
        None => Vec::new(),
    };
    let test_units = ds.units(Split::Test, a.frames);
    let ctx = EvalContext {
        params: &params,
        units: &test_units,
        dataset_id: file_hash(&manifest_path(&a.data))?[..12].to_string(),
        model_id: file_hash(&a.model)?[..12].to_string(),
        task: ds.manifest.task,
        optimization_seed: a.seed,
    };
    let attack = if perts.is_empty() { Attack::None } else { Attack::Learned(&perts) };
    let kinds: Vec<PromptKind> = a
        .prompts
        .iter()
        .map(|k| match k {
            PromptArg::Point => PromptKind::Point,
            PromptArg::Box => PromptKind::Box,
        })
        .collect();
    let (mut rows, mut summaries) = cross_prompt_eval(&ctx, attack, &kinds, a.prompt_count)?;
    if !a.multi_point.is_empty() {
        rows.extend(multi_point_eval(&ctx, attack, &a.multi_point)?);
    }
    if a.noise_baseline {
        let eps = perts.first().map(|p| p.epsilon).unwrap_or(10.0 / 255.0);
        let noise = noise_baseline(eps, ds.manifest.height, ds.manifest.width, a.seed);
        rows.extend(evaluate(&ctx, Attack::Noise(&noise))?.into_iter().filter(|r| r.condition == Condition::NoiseBaseline));
    }
    let mut report = EvalReport {
        seed: a.seed,
        config_hash: perts.first().map(|p| p.config_hash.clone()).unwrap_or_default(),
        ..Default::default()
    };
    if a.avalanche {
        let universal = perts.iter().find(|p| p.mode == PertMode::Universal);
        for (i, u) in test_units.iter().enumerate() {
            let p = universal.or(perts.get(i));
            report.avalanche.extend(avalanche_curve(&params, u, i, p)?);
        }
    }
    let mut outputs = vec!["report.csv"];
    if let Some(n) = a.seed_stability {
        let cfg = AttackConfig {
            frames_per_clip: a.frames,
            ..AttackConfig::universal()
        };
        let seeds: Vec<u64> = (0..n as u64).map(|i| a.seed + i).collect();
        let train_units = ds.units(Split::Train, a.frames);
        let s = seed_stability(&params, &train_units, &ctx, &cfg, &seeds)?;
        write_atomic(&a.out.join("seed_stability.json"), serde_json::to_string_pretty(&s)?.as_bytes())?;
        outputs.push("seed_stability.json");
        summaries.push(crate::evalharness::Summary {
            label: format!("seed stability ({n} seeds)"),
            condition: Condition::Adversarial,
            n,
            mean: s.mean,
            std: s.std,
        });
    }
    report.rows = rows;
    report.summaries = summaries;
    fs::create_dir_all(&a.out)?;
    report.write(&a.out)?;
    if !report.summaries.is_empty() {
        outputs.push("summary.csv");
    }
    if !report.avalanche.is_empty() {
        outputs.push("avalanche.csv");
    }
    if a.plots {
        let values: Vec<f64> = report.rows.iter().map(|r| r.miou).collect();
        plot::bar_chart(&a.out.join("miou.png"), &values)?;
        outputs.push("miou.png");
        if !report.avalanche.is_empty() {
            let series: Vec<Vec<f64>> = [Condition::Benign, Condition::Adversarial]
                .iter()
                .flat_map(|&c| {
                    let av = &report.avalanche;
                    (0..test_units.len()).map(move |i| {
                        av.iter()
                            .filter(|p| p.clip_id == i && p.condition == c && p.series == Series::Consecutive)
                            .map(|p| p.similarity)
                            .collect::<Vec<_>>()
                    })
                })
                .filter(|s| !s.is_empty())
                .collect();
            plot::line_chart(&a.out.join("avalanche.png"), &series)?;
            outputs.push("avalanche.png");
        }
    }
    write_run_json(
        &a.out,
        "eval",
        json!({
            "prompts": kinds, "prompt_count": a.prompt_count, "multi_point": a.multi_point,
            "avalanche": a.avalanche, "noise_baseline": a.noise_baseline,
            "seed_stability": a.seed_stability, "seed": a.seed, "frames": a.frames,
        }),
        inputs,
        &outputs,
    )?;
    for r in &report.rows {
        println!(
            "{:<6} k={} prompt {:>2} {:<14} mIoU {:.4}",
            r.prompt_mode.as_str(),
            r.points,
            r.prompt_id,
            format!("{:?}", r.condition).to_lowercase(),
            r.miou
        );
    }
    for s in &report.summaries {
        println!("{} [{:?}]: mean {:.4} std {:.4} (n={})", s.label, s.condition, s.mean, s.std, s.n);
    }
    if !report.avalanche.is_empty() {
        println!(
            "mean consecutive similarity: benign {:.4}, adversarial {:.4}",
            mean_consecutive(&report.avalanche, Condition::Benign),
            mean_consecutive(&report.avalanche, Condition::Adversarial)
        );
    }
    Ok(())
}

fn defend(a: DefendArgs) -> Result<()> {
    let levels = parse_levels(&a.levels)?;
    let defense = match a.defense {
        DefenseArg::Prune => DefenseKind::Prune,
        DefenseArg::Spatter => DefenseKind::Spatter,
        DefenseArg::Saturate => DefenseKind::Saturate,
    };
    for &l in &levels {
        let ok = match defense {
            DefenseKind::Prune => (0.0..=0.9).contains(&l),
            _ => l.fract() == 0.0 && (0.0..=5.0).contains(&l),
        };
        if !ok {
            return Err(Error::Config(format!("defense level {l} out of range for {:?}", a.defense)));
        }
    }
    let prune_mode = match a.prune_mode {
        PruneArg::Global => PruneMode::Global,
        PruneArg::PerLayer => PruneMode::PerLayer,
    };
    let (params, ds, mut inputs) = load_inputs(&a.model, &a.data)?;
    let perts = match &a.pert {
        Some(p) => {
            inputs["perturbation"] = json!({ "path": p, "sha256": file_hash(p)? });
            load_perturbations(p)?
        }
        None => Vec::new(),
    };
    let test_units = ds.units(Split::Test, a.frames);
    let ctx = EvalContext {
        params: &params,
        units: &test_units,
        dataset_id: file_hash(&manifest_path(&a.data))?[..12].to_string(),
        model_id: file_hash(&a.model)?[..12].to_string(),
        task: ds.manifest.task,
        optimization_seed: a.seed,
    };
    let attack = if perts.is_empty() { Attack::None } else { Attack::Learned(&perts) };
    let rows = defense_sweep(&ctx, attack, defense, &levels, prune_mode, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("sweep.csv"), &rows_csv(&rows)?)?;
    write_run_json(
        &a.out,
        "defend",
        json!({ "defense": defense, "levels": levels, "prune_mode": prune_mode, "seed": a.seed, "frames": a.frames }),
        inputs,
        &["sweep.csv"],
    )?;
    for r in &rows {
        println!(
            "level {:<5} {:<12} mIoU {:.4}",
            r.defense_level.unwrap_or(0.0),
            format!("{:?}", r.condition).to_lowercase(),
            r.miou
        );
    }
    Ok(())
}
