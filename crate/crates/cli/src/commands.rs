//! Subcommand implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use stdiff::checkpoint::Checkpoint;
use stdiff::data::{
    generate_block_masks, load_csv, load_roles, save_csv, save_roles, simulate_plant, Ledger, MaskPlan,
    PlantConfig, SCENARIO_LEVELS,
};
use stdiff::diffusion::ScheduleConfig;
use stdiff::eval::{
    curve_svg, masked_mae_rmse, masked_mae_rmse_z, summarize, summary_table, write_curve, write_reports,
    Baseline, CurveRow, ImputationMethod,
};
use stdiff::impute::{impute_with_checkpoint, write_gap_report, CovariateFallback, ImputeConfig, ImputeMode};
use stdiff::train::{train, write_loss_curve, Architecture, TrainConfig};
use stdiff::{Error, Result};

use crate::config::{ConfigFile, Resolver};
use crate::manifest::Manifest;
use crate::{
    Cli, Command, EvalArgs, FallbackArg, ImputeArgs, MaskArgs, MethodArg, ModeArg, PlantArg, ReportArgs,
    SimulateArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut r = Resolver::new(&file);
    let (name, manifest, primary) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(a, &mut r)?, a.output.as_path()),
        Command::Mask(a) => ("mask", mask(a, &mut r)?, a.output.as_path()),
        Command::Train(a) => ("train", train_cmd(a, &mut r)?, a.output.as_path()),
        Command::Impute(a) => ("impute", impute(a, &mut r)?, a.output.as_path()),
        Command::Eval(a) => ("eval", eval(a, &mut r)?, a.output.as_path()),
        Command::Report(a) => ("report", report(a, &mut r)?, a.output.as_path()),
    };
    let mut m = Manifest::new(name, r.resolved);
    if let Some(p) = &cli.config {
        m.input(p)?;
    }
    for p in &manifest.inputs {
        m.input(p)?;
    }
    for p in &manifest.outputs {
        m.output(p)?;
    }
    let written = m.save_beside(primary)?;
    log::info!("manifest written to {}", written.display());
    Ok(())
}

/// Artifact paths touched by a subcommand.
#[derive(Default)]
struct Touched {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn owned(paths: &[&Path]) -> Vec<PathBuf> {
    paths.iter().map(|p| p.to_path_buf()).collect()
}

fn parse_level(raw: Option<&String>) -> Result<Option<u32>> {
    raw.map(|s| s.parse::<u32>().map_err(|e| Error::Config(e.to_string()))).transpose()
}

fn check_level(level: u32) -> Result<u32> {
    if SCENARIO_LEVELS.contains(&level) {
        Ok(level)
    } else {
        Err(Error::Config(format!("level must be one of {SCENARIO_LEVELS:?}, got {level}")))
    }
}

fn simulate(a: &SimulateArgs, r: &mut Resolver) -> Result<Touched> {
    let seed = r.value("seed", a.seed, 0u64)?;
    let plant_flag = a.plant.map(|p| match p {
        PlantArg::Scalar => "scalar".to_string(),
        PlantArg::Nonlinear => "nonlinear".to_string(),
    });
    let plant = r.value("plant", plant_flag, "scalar".to_string())?;
    let length = r.value("length", a.length, 5000usize)?;
    let cfg = match plant.as_str() {
        "scalar" => {
            let mut cfg = PlantConfig::scalar(
                r.value("a", None, 0.9)?,
                r.value("b", None, 1.0)?,
                r.value("sigma", None, 0.1)?,
                length,
                seed,
            );
            cfg.control.amplitude = r.value("control-amplitude", None, cfg.control.amplitude)?;
            cfg.control.mean_hold = r.value("control-hold", None, cfg.control.mean_hold)?;
            cfg
        }
        "nonlinear" => {
            let mut cfg = PlantConfig::nonlinear(length, seed);
            cfg.process_noise = r.value("sigma", None, cfg.process_noise)?;
            cfg.control.amplitude = r.value("control-amplitude", None, cfg.control.amplitude)?;
            cfg.control.mean_hold = r.value("control-hold", None, cfg.control.mean_hold)?;
            cfg
        }
        other => return Err(Error::Config(format!("unknown plant `{other}` (expected scalar|nonlinear)"))),
    };
    let sim = simulate_plant(&cfg)?;
    save_csv(&a.output, &sim.table)?;
    let mut t = Touched::default();
    t.outputs.push(a.output.clone());
    if let Some(p) = &a.roles {
        save_roles(p, &sim.table)?;
        t.outputs.push(p.clone());
    }
    Ok(t)
}

fn mask(a: &MaskArgs, r: &mut Resolver) -> Result<Touched> {
    let table = load_csv(&a.input, &load_roles(&a.roles)?)?;
    let level = check_level(r.value("level", parse_level(a.level.as_ref())?, 20u32)?)?;
    let seed = r.value("seed", a.seed, 0u64)?;
    let mut plan = MaskPlan::for_level(level, seed)?;
    plan.mean_block_len = r.value("mean-block-len", None, plan.mean_block_len)?;
    plan.cofailure_fraction = r.value("cofailure-fraction", None, plan.cofailure_fraction)?;
    let out = generate_block_masks(&table, &plan)?;
    for rate in &out.realized {
        log::info!("{} ({}): {:.2}% missing", rate.channel, rate.role, 100.0 * rate.rate);
    }
    r.record("realized-state-rate", out.state_rate());
    r.record("realized-covariate-rate", out.covariate_rate());
    save_csv(&a.output, &out.masked)?;
    out.ledger.save(&a.ledger)?;
    Ok(Touched {
        inputs: owned(&[&a.input, &a.roles]),
        outputs: owned(&[&a.output, &a.ledger]),
    })
}

fn train_config(a: &TrainArgs, r: &mut Resolver) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let da = Architecture::default();
    let t = r.value("diffusion-steps", a.diffusion_steps, d.schedule.steps)?;
    let base = if t == d.schedule.steps {
        d.schedule.clone()
    } else {
        ScheduleConfig::scaled(t)
    };
    let schedule = ScheduleConfig {
        steps: t,
        beta_start: r.value("beta-start", None, base.beta_start)?,
        beta_end: r.value("beta-end", None, base.beta_end)?,
    };
    let architecture = Architecture {
        time_embed_dim: r.value("time-embed-dim", None, da.time_embed_dim)?,
        encoder_hidden: r.sizes("encoder-hidden", None, &da.encoder_hidden)?,
        context_dim: r.value("context-dim", None, da.context_dim)?,
        predictor_width: r.value("predictor-width", None, da.predictor_width)?,
        predictor_blocks: r.value("predictor-blocks", None, da.predictor_blocks)?,
    };
    let cfg = TrainConfig {
        schedule,
        architecture,
        batch_size: r.value("batch-size", None, d.batch_size)?,
        steps: r.value("steps", a.steps, d.steps)?,
        learning_rate: r.value("learning-rate", None, d.learning_rate)?,
        p_drop: r.value("p-drop", None, d.p_drop)?,
        seed: r.value("seed", a.seed, d.seed)?,
        validation_fraction: r.value("validation-fraction", None, d.validation_fraction)?,
        eval_every: r.value("eval-every", None, d.eval_every)?,
        eval_samples: d.eval_samples,
        ema_decay: r.value("ema-decay", None, d.ema_decay)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: &TrainArgs, r: &mut Resolver) -> Result<Touched> {
    let table = load_csv(&a.input, &load_roles(&a.roles)?)?;
    let cfg = train_config(a, r)?;
    let out = train(&table, &cfg)?;
    r.record("transitions", out.transitions);
    if let Some(last) = out.curve.last() {
        log::info!("final train loss {:.4}, validation {:?}", last.train_loss, last.validation_loss);
    }
    Checkpoint::new(&table, cfg.schedule.clone(), out.stats, out.params).save(&a.output)?;
    let mut t = Touched {
        inputs: owned(&[&a.input, &a.roles]),
        outputs: owned(&[&a.output]),
    };
    if let Some(p) = &a.loss_curve {
        write_loss_curve(BufWriter::new(File::create(p)?), &out.curve)?;
        t.outputs.push(p.clone());
    }
    Ok(t)
}

fn impute(a: &ImputeArgs, r: &mut Resolver) -> Result<Touched> {
    let table = load_csv(&a.input, &load_roles(&a.roles)?)?;
    let method_flag = a.method.map(|m| {
        match m {
            MethodArg::Stdiff => "stdiff",
            MethodArg::Locf => "locf",
            MethodArg::Linear => "linear",
            MethodArg::Kalman => "kalman",
        }
        .to_string()
    });
    let method = r.value("method", method_flag, "stdiff".to_string())?;
    let mut t = Touched {
        inputs: owned(&[&a.input, &a.roles]),
        outputs: owned(&[&a.output]),
    };
    let baseline = match method.as_str() {
        "stdiff" => None,
        "locf" => Some(Baseline::Locf),
        "linear" => Some(Baseline::LinearInterp),
        "kalman" => Some(Baseline::Kalman),
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    if let Some(b) = baseline {
        let filled = b.impute(&table, 0)?;
        save_csv(&a.output, &filled)?;
        return Ok(t);
    }

    let ckpt_path = a
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("the stdiff method needs --checkpoint".into()))?;
    let checkpoint = Checkpoint::load(ckpt_path)?;
    t.inputs.push(ckpt_path.to_path_buf());
    let defaults = ImputeConfig::default();
    let mode_flag = a.mode.map(|m| match m {
        ModeArg::Full => ImputeMode::Full,
        ModeArg::HistoryOnly => ImputeMode::HistoryOnly,
    });
    let fallback_flag = a.covariate_fallback.map(|f| match f {
        FallbackArg::MaskZero => CovariateFallback::MaskZero,
        FallbackArg::Locf => CovariateFallback::Locf,
        FallbackArg::Linear => CovariateFallback::Linear,
        FallbackArg::Kalman => CovariateFallback::Kalman,
    });
    let cfg = ImputeConfig {
        samples: r.value("samples", a.samples, defaults.samples)?,
        seed: r.value("seed", a.seed, defaults.seed)?,
        mode: r.value("mode", mode_flag, defaults.mode)?,
        fallback: r.value("covariate-fallback", fallback_flag, defaults.fallback)?,
        anchor_leading: r.value("anchor-leading", a.anchor_leading.then_some(true), defaults.anchor_leading)?,
    };
    let out = impute_with_checkpoint(&table, &checkpoint, &cfg)?;
    save_csv(&a.output, &out.table)?;
    if let Some(p) = &a.diagnostics {
        let ledger = a.ledger.as_deref().map(Ledger::load).transpose()?;
        write_gap_report(BufWriter::new(File::create(p)?), &out.gaps, &out.table, ledger.as_ref())?;
        t.outputs.push(p.clone());
        if let Some(l) = &a.ledger {
            t.inputs.push(l.clone());
        }
    }
    Ok(t)
}

fn eval(a: &EvalArgs, r: &mut Resolver) -> Result<Touched> {
    let table = load_csv(&a.input, &load_roles(&a.roles)?)?;
    let ledger = Ledger::load(&a.ledger)?;
    let method = r.value("method", a.method.clone(), "stdiff".to_string())?;
    let level = r
        .optional("level", parse_level(a.level.as_ref())?)?
        .map(check_level)
        .transpose()?;
    let seed = r.optional("seed", a.seed)?;
    let mut t = Touched {
        inputs: owned(&[&a.input, &a.roles, &a.ledger]),
        outputs: owned(&[&a.output]),
    };
    let report = if a.z_space {
        let p = a.checkpoint.as_deref().expect("clap enforces --checkpoint");
        t.inputs.push(p.to_path_buf());
        r.record("z-space", true);
        masked_mae_rmse_z(&table, &ledger, &Checkpoint::load(p)?.stats)?
    } else {
        masked_mae_rmse(&table, &ledger)?
    };
    let report = report.labelled(method, level, seed);
    for c in &report.channels {
        log::info!("{}: MAE {:.6} RMSE {:.6} over {}", c.channel, c.mae, c.rmse, c.count);
    }
    write_reports(&[report], BufWriter::new(File::create(&a.output)?))?;
    Ok(t)
}

#[derive(serde::Deserialize)]
struct MetricLine {
    method: String,
    level: Option<u32>,
    seed: Option<u64>,
    channel: String,
    mae: f64,
    rmse: f64,
}

fn report(a: &ReportArgs, _r: &mut Resolver) -> Result<Touched> {
    let mut rows = Vec::new();
    for p in &a.input {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(p)?;
        for line in rdr.deserialize::<MetricLine>() {
            let line = line?;
            let level = line
                .level
                .ok_or_else(|| Error::Config(format!("{}: metric rows need a level", p.display())))?;
            rows.push(CurveRow {
                method: line.method,
                level,
                seed: line.seed.unwrap_or(0),
                channel: line.channel,
                mae: line.mae,
                rmse: line.rmse,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("no metric rows to report".into()));
    }
    std::fs::create_dir_all(&a.output)?;
    let summary = summarize(&rows);
    let curve = a.output.join("curve.csv");
    let table = a.output.join("summary.txt");
    let svg = a.output.join("curve.svg");
    write_curve(&rows, BufWriter::new(File::create(&curve)?))?;
    std::fs::write(&table, summary_table(&summary))?;
    std::fs::write(&svg, curve_svg(&summary))?;
    print!("{}", summary_table(&summary));
    Ok(Touched {
        inputs: a.input.clone(),
        outputs: vec![curve, table, svg],
    })
}
