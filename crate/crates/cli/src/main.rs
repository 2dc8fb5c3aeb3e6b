mod cli;
mod commands;
mod config;
mod run;

use std::collections::BTreeMap;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use crate::cli::{Cli, Command, GlobalArgs, RerunArgs};
use crate::config::{ConfigError, PipelineConfig};
use crate::run::{load_manifest, MissingInput, RunManifest, Workspace};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// Exit status and tag for each error family.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    if err.downcast_ref::<UsageError>().is_some() || err.downcast_ref::<ConfigError>().is_some() {
        (2, "config")
    } else if err.downcast_ref::<MissingInput>().is_some() {
        (3, "input")
    } else {
        (1, "run")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            eprintln!("error[{kind}]: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let Some(workdir) = cli.global.workdir.clone() else {
        return Err(UsageError("--workdir is required".into()).into());
    };
    let mut ws = Workspace::new(&workdir)?;
    if let Command::Rerun(args) = &cli.command {
        return rerun(&mut ws, args, &cli.global);
    }

    let mut config = match &cli.global.config {
        Some(rel) => {
            let path = ws.resolve(rel);
            if !path.is_file() {
                return Err(MissingInput { path: rel.display().to_string() }.into());
            }
            PipelineConfig::load(&path)?
        }
        None => PipelineConfig::default(),
    };
    config.apply(&cli.global.overrides(), cli.command.stage())?;
    if let Command::Fewshot(args) = &cli.command {
        if !args.seeds.is_empty() {
            config.seeds = args.seeds.clone();
        }
    }
    config.validate()?;
    execute(&mut ws, &cli.command, &config, cli.global.dry_run, None)?;
    Ok(())
}

fn build_job(ws: &mut Workspace, command: &Command, config: &PipelineConfig) -> Result<commands::Job> {
    match command {
        Command::LexiconNormalize(a) => commands::lexicon_normalize(ws, a, config),
        Command::LexiconExtend(a) => commands::lexicon_extend(ws, a, config),
        Command::LexiconFilter(a) => commands::lexicon_filter(ws, a, config),
        Command::Pretrain(a) => commands::pretrain_cmd(ws, a, config),
        Command::Finetune(a) => commands::finetune_cmd(ws, a, config),
        Command::Fewshot(a) => commands::fewshot_cmd(ws, a, config),
        Command::Predict(a) => commands::predict_cmd(ws, a, config),
        Command::Evaluate(a) => commands::evaluate_cmd(ws, a, config),
        Command::PromptEval(a) => commands::prompt_eval_cmd(ws, a, config),
        Command::Report(a) => commands::report_cmd(ws, a, config),
        Command::Rerun(_) => bail!("a rerun manifest cannot itself describe a rerun"),
    }
}

fn diff_hashes(expected: &BTreeMap<String, String>, found: &BTreeMap<String, String>) -> Vec<String> {
    let keys: std::collections::BTreeSet<&String> = expected.keys().chain(found.keys()).collect();
    keys.into_iter().filter(|k| expected.get(*k) != found.get(*k)).cloned().collect()
}

/// Validates inputs, then (unless dry-running) runs the job inside a new
/// run directory.
fn execute(
    ws: &mut Workspace,
    command: &Command,
    config: &PipelineConfig,
    dry_run: bool,
    expected_inputs: Option<&BTreeMap<String, String>>,
) -> Result<Option<RunManifest>> {
    let job = build_job(ws, command, config)?;
    if let Some(expected) = expected_inputs {
        let changed = diff_hashes(expected, ws.inputs());
        if !changed.is_empty() {
            bail!("inputs differ from the manifest: {}", changed.join(", "));
        }
    }
    if dry_run {
        println!("dry run: {} is valid (config {})", command.name(), config.short_hash());
        for (path, hash) in ws.inputs() {
            println!("  input {path} sha256:{}", &hash[..12]);
        }
        return Ok(None);
    }

    let mut run = ws.start_run(command.name(), serde_json::to_value(command)?, config)?;
    let dir = run.dir().to_owned();
    match job(&mut run) {
        Ok(()) => {
            let manifest = run.finish()?;
            println!("run: {}", dir.display());
            Ok(Some(manifest))
        }
        Err(err) => {
            if let Err(e) = run.fail(&err) {
                eprintln!("warning: could not record the failure in the manifest: {e:#}");
            }
            Err(err.context(format!("{} failed; see {}", command.name(), dir.display())))
        }
    }
}

fn rerun(ws: &mut Workspace, args: &RerunArgs, global: &GlobalArgs) -> Result<()> {
    if global.has_overrides() {
        return Err(UsageError("rerun takes its config from the manifest; drop --config and override flags".into()).into());
    }
    let manifest = load_manifest(&ws.resolve(&args.manifest))?;
    let command: Command = serde_json::from_value(manifest.invocation.clone())
        .map_err(|e| anyhow::anyhow!("manifest invocation is not a known command: {e}"))?;
    manifest.config.validate()?;
    let Some(replayed) = execute(ws, &command, &manifest.config, global.dry_run, Some(&manifest.inputs))? else {
        return Ok(());
    };
    let changed = diff_hashes(&manifest.outputs, &replayed.outputs);
    if !changed.is_empty() {
        bail!("replay produced different artifacts: {}", changed.join(", "));
    }
    println!("reproduced {} artifacts", replayed.outputs.len());
    Ok(())
}
