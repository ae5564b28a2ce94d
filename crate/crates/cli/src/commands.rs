//! One function per subcommand. Each builds the experiment context from the
//! resolved config, writes a run manifest first, then does the work.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use realign::curation::{load_manifest, PreferencePair, MANIFEST_FILE};
use realign::diffusion::{Condition, Denoiser};
use realign::eval::{
    curate_pairs, data_size_sweep, generate_batch, mean_preference, perturbation_ablation,
    run_ablation, sliced_wasserstein, toy_context, win_rate, EvalReport, ExperimentContext,
};
use realign::training::{
    gradient_check, run_stage1, run_stage2, Checkpoint, LossKind, Stage, TrainOutcome,
};
use realign::{Error, Result};

use crate::config::{FileConfig, Preset};
use crate::error::{CliError, CliResult};
use crate::manifest::{file_sha256, RunManifest};
use crate::plots;

/// Everything a command needs beyond its config file.
pub struct RunArgs {
    pub config_path: PathBuf,
    pub config: FileConfig,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub preset: Preset,
    pub no_plots: bool,
}

const SW_PROJECTIONS: usize = 32;

impl RunArgs {
    fn context(&self) -> Result<ExperimentContext> {
        let budget = self.config.budget.resolve();
        toy_context(
            self.config.experiment.mixture()?,
            self.config.experiment.corpus_size,
            &budget,
            self.seed,
        )
    }

    fn manifest(
        &self,
        command: &str,
        extra_inputs: &[&Path],
        output_paths: Vec<PathBuf>,
    ) -> Result<()> {
        let mut input_hashes = BTreeMap::new();
        for path in std::iter::once(&self.config_path.as_path()).chain(extra_inputs.iter()) {
            input_hashes.insert(path.display().to_string(), file_sha256(path)?);
        }
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: serde_json::to_value(&self.config)?,
            input_hashes,
            output_paths,
        }
        .write(&self.run_dir)?;
        Ok(())
    }

    /// Load pairs from `train.pairs_dir` if set, else curate into
    /// `<run_dir>/curation`.
    fn pairs(&self, ctx: &ExperimentContext) -> Result<(Vec<PreferencePair>, PathBuf)> {
        if let Some(dir) = &self.config.train.pairs_dir {
            let (_, pairs) = load_manifest(dir)?;
            Ok((pairs, dir.clone()))
        } else {
            let dir = self.run_dir.join("curation");
            fs::create_dir_all(&dir)?;
            let cur = self.config.curation.resolve(self.seed)?;
            let pairs = curate_pairs(ctx, &cur, &dir)?;
            Ok((pairs, dir))
        }
    }
}

pub fn cmd_curate(args: &RunArgs) -> CliResult<()> {
    args.manifest(
        "curate",
        &[],
        vec![PathBuf::from(MANIFEST_FILE), PathBuf::from("arrays.bin")],
    )?;
    let ctx = args.context()?;
    let cur = args.config.curation.resolve(args.seed)?;
    let manifest = realign::curation::run_curation(
        &ctx.real_data,
        &ctx.weak,
        &ctx.curation_scorer,
        &cur,
        &ctx.schedule,
        &args.run_dir,
    )?;
    let c = &manifest.stage_counts;
    println!(
        "curated {} pairs (corpus {} -> colorfulness {} -> constructed {} -> gap {} -> selected {})",
        manifest.pairs.len(),
        c.initial,
        c.after_colorfulness,
        c.constructed,
        c.after_gap,
        c.selected
    );
    println!("tau_used: {}", manifest.tau_used);
    for w in &manifest.warnings {
        println!("warning: {w}");
    }
    println!("content_hash: {}", manifest.content_hash);
    println!("manifest: {}", args.run_dir.join(MANIFEST_FILE).display());
    Ok(())
}

pub fn cmd_train(
    args: &RunArgs,
    stage: Stage,
    resume: Option<&Path>,
    from_base: bool,
) -> CliResult<()> {
    let cfg = args.config.train.resolve(stage, args.preset, args.seed)?;
    let stage_tag = match stage {
        Stage::Stage1 => "stage1",
        Stage::Stage2 => "stage2",
    };
    let mut extra: Vec<&Path> = Vec::new();
    if let Some(p) = resume {
        extra.push(p);
    }
    if let Some(p) = &args.config.train.stage1_checkpoint {
        extra.push(p);
    }
    args.manifest(
        "train",
        &extra,
        vec![
            PathBuf::from(format!("{stage_tag}.ckpt")),
            PathBuf::from(format!("{stage_tag}_log.jsonl")),
        ],
    )?;

    let ctx = args.context()?;
    let resume_ckpt = resume.map(Checkpoint::load).transpose()?;
    let outcome = match stage {
        Stage::Stage1 => dump_on_numeric_failure(args, &cfg, || {
            run_stage1(&ctx.base, &ctx.real_data, &cfg, &ctx.schedule, resume_ckpt.as_ref())
        })?,
        Stage::Stage2 => {
            let init = match (&args.config.train.stage1_checkpoint, from_base) {
                (Some(path), false) => Checkpoint::load(path)?.to_denoiser()?,
                (None, true) => ctx.base.clone(),
                (Some(_), true) => {
                    return Err(CliError::Core(Error::Config(
                        "--from-base conflicts with train.stage1_checkpoint".into(),
                    )))
                }
                (None, false) => {
                    return Err(CliError::Core(Error::Config(
                        "stage 2 needs train.stage1_checkpoint, or pass --from-base to \
                         start from the pretrained base (ablation use only)"
                            .into(),
                    )))
                }
            };
            let (pairs, _) = args.pairs(&ctx)?;
            dump_on_numeric_failure(args, &cfg, || {
                run_stage2(&init, &pairs, &cfg, &ctx.schedule, resume_ckpt.as_ref())
            })?
        }
    };

    let ckpt_path = args.run_dir.join(format!("{stage_tag}.ckpt"));
    outcome.checkpoint.save(&ckpt_path)?;
    let log_path = args.run_dir.join(format!("{stage_tag}_log.jsonl"));
    let mut log = fs::File::create(&log_path)?;
    for entry in &outcome.logs {
        serde_json::to_writer(&mut log, entry)?;
        log.write_all(b"\n")?;
    }

    if let Some(last) = outcome.logs.last() {
        println!(
            "{stage_tag}: {} steps, final loss {:.6}, grad norm {:.4}",
            outcome.logs.len(),
            last.loss,
            last.grad_norm
        );
        if stage == Stage::Stage2 {
            println!("implicit reward gap: {:.6}", last.implicit_reward_gap);
        }
    } else {
        println!("{stage_tag}: 0 steps, checkpoint equals initialization");
    }

    if stage == Stage::Stage1 {
        log_distance_drop(args, &ctx, &outcome.model)?;
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

/// Exit-code-4 paths must leave a diagnostic dump behind.
fn dump_on_numeric_failure(
    args: &RunArgs,
    cfg: &realign::training::TrainConfig,
    run: impl FnOnce() -> Result<TrainOutcome>,
) -> Result<TrainOutcome> {
    match run() {
        Err(e @ Error::NonFinite { .. }) => {
            let dump = serde_json::json!({
                "error": e.to_string(),
                "train_config": cfg,
            });
            let path = args.run_dir.join("error_dump.json");
            fs::write(&path, serde_json::to_vec_pretty(&dump)?)?;
            eprintln!("numeric failure; diagnostics at {}", path.display());
            Err(e)
        }
        other => other,
    }
}

/// Sliced-Wasserstein distance to held-out data, before vs after stage 1.
fn log_distance_drop(args: &RunArgs, ctx: &ExperimentContext, model: &Denoiser) -> Result<()> {
    let n = args.config.eval.distance_samples;
    let steps = args.config.budget.resolve().sample_steps;
    let held_out = ctx.held_out(n, 1);
    let sw = |m: &Denoiser| -> Result<f64> {
        let gen = generate_batch(m, &Condition::Null, n, steps, &ctx.schedule, args.seed ^ 0x5eed)?;
        sliced_wasserstein(&gen, &held_out, SW_PROJECTIONS, args.seed)
    };
    let before = sw(&ctx.base)?;
    let after = sw(model)?;
    println!(
        "sliced-Wasserstein to held-out data: {before:.4} -> {after:.4} ({:+.1}%)",
        100.0 * (after / before - 1.0)
    );
    Ok(())
}

pub fn cmd_eval(args: &RunArgs) -> CliResult<()> {
    let mut extra: Vec<&Path> = Vec::new();
    if let Some(p) = &args.config.eval.checkpoint {
        extra.push(p);
    }
    let mut outputs = vec![PathBuf::from("eval.json"), PathBuf::from("eval.csv")];
    if !args.no_plots {
        outputs.push(PathBuf::from("eval_scatter.png"));
    }
    args.manifest("eval", &extra, outputs)?;

    let ctx = args.context()?;
    let budget = args.config.budget.resolve();
    let model = match &args.config.eval.checkpoint {
        Some(path) => Checkpoint::load(path)?.to_denoiser()?,
        None => ctx.base.clone(),
    };

    let seeds = args.config.eval.seeds.clone();
    if seeds.is_empty() {
        return Err(CliError::Core(Error::Empty("eval.seeds".into())));
    }
    let rows = ["model", "base"];
    let models = [&model, &ctx.base];
    let held_out = ctx.held_out(args.config.eval.distance_samples, 1);
    let mut raw = vec![vec![Vec::new(), Vec::new()]; rows.len()];
    for (r, m) in models.iter().enumerate() {
        for &s in &seeds {
            raw[r][0].push(mean_preference(
                *m,
                &ctx.eval_scorer,
                &ctx.eval_conditions,
                budget.eval_samples,
                budget.sample_steps,
                &ctx.schedule,
                s,
            )?);
            let gen = generate_batch(
                *m,
                &Condition::Null,
                args.config.eval.distance_samples,
                budget.sample_steps,
                &ctx.schedule,
                s,
            )?;
            raw[r][1].push(sliced_wasserstein(&gen, &held_out, SW_PROJECTIONS, s)?);
        }
    }
    let mut report = EvalReport::from_raw(
        format!("eval-seed{}", args.seed),
        rows.iter().map(|s| s.to_string()).collect(),
        vec!["preference".into(), "sliced_wasserstein".into()],
        seeds,
        raw,
    )?;
    let wr = win_rate(
        &model,
        &ctx.base,
        &ctx.eval_conditions,
        &ctx.eval_scorer,
        budget.eval_samples,
        budget.sample_steps,
        &ctx.schedule,
        args.seed,
    )?;
    report
        .metadata
        .insert("win_rate_model_vs_base".into(), format!("{wr}"));
    report.write(&args.run_dir, "eval")?;

    if !args.no_plots {
        let gen = generate_batch(
            &model,
            &Condition::Null,
            args.config.eval.distance_samples,
            budget.sample_steps,
            &ctx.schedule,
            args.seed,
        )?;
        plots::scatter_png(&held_out, &gen, &args.run_dir.join("eval_scatter.png"))?;
    }

    print_report(&report);
    println!("win rate vs base: {wr:.4}");
    println!("report: {}", args.run_dir.join("eval.json").display());
    Ok(())
}

/// `perturbation = false` runs the two-stage grid; `true` runs the
/// negative-construction-mode comparison.
pub fn cmd_ablate(args: &RunArgs, perturbation: bool) -> CliResult<()> {
    if perturbation {
        return cmd_perturb(args);
    }
    args.manifest(
        "ablate",
        &[],
        vec![PathBuf::from("ablation.json"), PathBuf::from("ablation.csv")],
    )?;
    let ctx = args.context()?;
    let budget = args.config.budget.resolve();
    let (pairs, _) = args.pairs(&ctx)?;
    let report = run_ablation(&ctx, &pairs, &args.config.eval.seeds, &budget)?;
    report.write(&args.run_dir, "ablation")?;
    print_report(&report);
    println!("report: {}", args.run_dir.join("ablation.json").display());
    required_expectations_hold(&report)
}

pub fn cmd_sweep(args: &RunArgs) -> CliResult<()> {
    args.manifest(
        "sweep",
        &[],
        vec![PathBuf::from("sweep.json"), PathBuf::from("sweep.csv")],
    )?;
    let ctx = args.context()?;
    let budget = args.config.budget.resolve();
    let (pairs, _) = args.pairs(&ctx)?;
    let report = data_size_sweep(
        &ctx,
        &pairs,
        &args.config.eval.sweep_sizes,
        &args.config.eval.seeds,
        &budget,
    )?;
    report.write(&args.run_dir, "sweep")?;
    print_report(&report);
    println!("report: {}", args.run_dir.join("sweep.json").display());
    required_expectations_hold(&report)
}

fn cmd_perturb(args: &RunArgs) -> CliResult<()> {
    args.manifest(
        "perturb",
        &[],
        vec![
            PathBuf::from("perturbation.json"),
            PathBuf::from("perturbation.csv"),
        ],
    )?;
    let ctx = args.context()?;
    let budget = args.config.budget.resolve();
    let cur = args.config.curation.resolve(args.seed)?;
    let report = perturbation_ablation(
        &ctx,
        &[
            realign::curation::NegativeMode::Inpainting,
            realign::curation::NegativeMode::TextToImage,
        ],
        &cur,
        &args.config.eval.seeds,
        &budget,
        &args.run_dir,
    )?;
    report.write(&args.run_dir, "perturbation")?;
    print_report(&report);
    println!("report: {}", args.run_dir.join("perturbation.json").display());
    required_expectations_hold(&report)
}

pub fn cmd_gradcheck(args: &RunArgs, trials: usize, tol: f64) -> CliResult<()> {
    args.manifest("gradcheck", &[], vec![PathBuf::from("gradcheck.json")])?;
    let mut all_pass = true;
    let mut reports = Vec::new();
    for kind in [LossKind::Stage1, LossKind::Stage2] {
        let report = gradient_check(kind, trials, tol, args.seed)?;
        let worst = report
            .trials
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0f64, f64::max);
        println!(
            "{kind}: {} trials, worst relative error {worst:.3e} (tol {tol:.1e}) -> {}",
            report.trials.len(),
            if report.pass { "pass" } else { "FAIL" }
        );
        all_pass &= report.pass;
        reports.push(report);
    }
    fs::write(
        args.run_dir.join("gradcheck.json"),
        serde_json::to_vec_pretty(&reports)?,
    )?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::Tolerance(
            "gradient check exceeded the relative-error tolerance".into(),
        ))
    }
}

fn print_report(report: &EvalReport) {
    for (r, row) in report.rows.iter().enumerate() {
        let cells: Vec<String> = report
            .metrics
            .iter()
            .enumerate()
            .map(|(m, name)| format!("{name} {:+.5}", report.aggregates[r][m]))
            .collect();
        println!("{row}: {}", cells.join(", "));
    }
    for e in &report.expectations {
        println!(
            "[{}] {}{}",
            if e.satisfied { "ok" } else { "MISS" },
            e.description,
            if e.required { "" } else { " (non-fatal)" }
        );
    }
}

fn required_expectations_hold(report: &EvalReport) -> CliResult<()> {
    let failed: Vec<&str> = report
        .expectations
        .iter()
        .filter(|e| e.required && !e.satisfied)
        .map(|e| e.description.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "required expectations failed: {}",
            failed.join("; ")
        )))
    }
}
