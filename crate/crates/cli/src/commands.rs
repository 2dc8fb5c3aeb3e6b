use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lexsent_core::encoder::{EncoderBackend, ReferenceEncoder};
use lexsent_core::eval::{
    aggregate_report, argmax, merge_reports, predict_zero_shot, read_predictions, score_predictions,
    write_predictions, EvalReport, GroupSpec, PredictionRecord, Score,
};
use lexsent_core::extend::{load_edges, project_scores, ProjectionOptions};
use lexsent_core::filter::run_filter;
use lexsent_core::lexicon::{
    load_lexicon, merge_lexicons, read_lexicon, write_lexicon, Lang, LoadOptions,
};
use lexsent_core::prompt::{
    builtin_templates, evaluate_prompts, CachedScorer, CompletionScorer, HttpScorer, MockScorer, PromptTemplate,
    ScorerError, SCORER_URL_ENV,
};
use lexsent_core::train::{
    fewshot_sample, finetune, load_sentences, pretrain, run_seeds, FinetuneJob, LabeledSentenceSet, PretrainJob,
    SentenceRecord,
};
use lexsent_core::{EncoderCheckpoint, Lexicon};
use serde::Serialize;

use crate::cli::{
    EvaluateArgs, ExtendArgs, FewshotArgs, FilterArgs, FinetuneArgs, NormalizeArgs, PredictArgs, PretrainArgs,
    PromptEvalArgs, ReportArgs,
};
use crate::config::PipelineConfig;
use crate::run::{Run, Workspace};

/// The part of a command that runs after inputs and config are validated.
pub type Job = Box<dyn FnOnce(&mut Run) -> Result<()>>;

fn load_options(config: &PipelineConfig) -> LoadOptions {
    LoadOptions { on_duplicate: config.on_duplicate, ..LoadOptions::default() }
}

fn lexicon_bytes(lexicon: &Lexicon) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_lexicon(lexicon, &mut buf)?;
    Ok(buf)
}

fn load_input_lexicon(ws: &mut Workspace, rel: &Path, config: &PipelineConfig) -> Result<Lexicon> {
    let path = ws.input(rel)?;
    load_lexicon(&path, load_options(config)).with_context(|| format!("cannot load lexicon {}", rel.display()))
}

fn load_checkpoint(ws: &mut Workspace, rel: &Path) -> Result<(EncoderCheckpoint, String)> {
    let path = ws.input(rel)?;
    let ckpt = EncoderCheckpoint::load(&path).with_context(|| format!("cannot load checkpoint {}", rel.display()))?;
    let hash = ckpt.hash()?;
    Ok((ckpt, hash))
}

fn load_dataset(ws: &mut Workspace, rel: &Path) -> Result<LabeledSentenceSet> {
    let dir = ws.input_dir(rel)?;
    LabeledSentenceSet::load_dir(&dir).with_context(|| format!("cannot load dataset {}", rel.display()))
}

pub fn lexicon_normalize(ws: &mut Workspace, args: &NormalizeArgs, config: &PipelineConfig) -> Result<Job> {
    let path = ws.input(&args.input)?;
    let mut text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", args.input.display()))?;
    if args.raw {
        match text.lines().next() {
            Some(first) if first.starts_with('#') => {
                if first.trim() != "#scale=raw" {
                    bail!("--raw conflicts with the pragma {first:?} in {}", args.input.display());
                }
            }
            _ => text.insert_str(0, "#scale=raw\n"),
        }
    }
    let lexicon: Lexicon = read_lexicon(text.as_bytes(), load_options(config))
        .with_context(|| format!("cannot load lexicon {}", args.input.display()))?;
    let out = args.out.clone();
    Ok(Box::new(move |run| {
        run.write(&out, &lexicon_bytes(&lexicon)?)?;
        println!("normalized {} entries", lexicon.len());
        Ok(())
    }))
}

pub fn lexicon_extend(ws: &mut Workspace, args: &ExtendArgs, config: &PipelineConfig) -> Result<Job> {
    let base = load_input_lexicon(ws, &args.base, config)?;
    let edges_path = ws.input(&args.edges)?;
    let edges = load_edges(&edges_path).with_context(|| format!("cannot load edges {}", args.edges.display()))?;
    let targets = args.targets.iter().map(|t| Lang::new(t)).collect::<Result<BTreeSet<_>, _>>()?;
    if targets.is_empty() {
        bail!("--targets must name at least one language");
    }
    let options = ProjectionOptions { case_fold: config.case_fold };
    let (policy, out) = (config.on_duplicate, args.out.clone());
    Ok(Box::new(move |run| {
        let (projected, report) = project_scores(&base, &edges, &targets, options)?;
        let merged = merge_lexicons(&base, &projected, policy)?;
        run.write(&out, &lexicon_bytes(&merged)?)?;
        run.write("projected.tsv", &lexicon_bytes(&projected)?)?;
        run.write_json("projection_report.json", &report)?;
        println!(
            "projected {} entries from {} usable edges ({} merged, {} skipped)",
            report.total_added(),
            report.usable_edges,
            report.duplicates_merged,
            report.skipped_edges
        );
        Ok(())
    }))
}

pub fn lexicon_filter(ws: &mut Workspace, args: &FilterArgs, config: &PipelineConfig) -> Result<Job> {
    let base = load_input_lexicon(ws, &args.base, config)?;
    let candidates = load_input_lexicon(ws, &args.candidates, config)?;
    if base.is_empty() {
        bail!("base lexicon {} is empty", args.base.display());
    }
    if let Some(key) = base.keys().find(|k| !k.lang.is_english()) {
        bail!("base lexicon must be English only, found {key}");
    }
    if let Some(key) = candidates.keys().find(|k| base.contains(k)) {
        bail!("candidate {key} is already in the base lexicon");
    }
    let filter = config.filter_config();
    let (dim, seed, out) = (config.embedding_dim, config.seed, args.out.clone());
    Ok(Box::new(move |run| {
        let mut encoder = ReferenceEncoder::<f64>::new(dim, 1, seed);
        let outcome = run_filter(&base, &candidates, &filter, &mut encoder)?;
        let accepted = outcome.accepted()?;
        run.write(&out, &lexicon_bytes(&outcome.lexicon)?)?;
        run.write("accepted.tsv", &lexicon_bytes(&accepted)?)?;
        run.write("rejected.tsv", &lexicon_bytes(&outcome.rejected()?)?)?;
        let mut trace = Vec::new();
        outcome.trace.write_jsonl(&mut trace)?;
        run.write("trace.jsonl", &trace)?;
        println!(
            "accepted {} of {} candidates in {} iterations ({:?})",
            accepted.len(),
            candidates.len(),
            outcome.trace.iterations.len(),
            outcome.trace.termination
        );
        Ok(())
    }))
}

pub fn pretrain_cmd(ws: &mut Workspace, args: &PretrainArgs, config: &PipelineConfig) -> Result<Job> {
    let lexicon = load_input_lexicon(ws, &args.lexicon, config)?;
    if lexicon.is_empty() {
        bail!("lexicon {} is empty", args.lexicon.display());
    }
    let mut job = PretrainJob::new(lexicon, config.objective, config.seed);
    job.config = config.pretrain_config();
    let outputs = config.objective.class_mode().map_or(1, |m| m.arity());
    let (dim, out) = (config.embedding_dim, args.out.clone());
    Ok(Box::new(move |run| {
        let ckpt = pretrain(&job, ReferenceEncoder::<f64>::new(dim, outputs, job.seed))?;
        for w in &ckpt.meta.warnings {
            eprintln!("warning: {w}");
        }
        run.write(&out, &ckpt.to_bytes()?)?;
        let fit = &ckpt.meta.fit;
        println!(
            "pretrained {} head: best epoch {} of {}, validation loss {:.6}",
            ckpt.meta.head.describe(),
            fit.best_epoch,
            fit.curve.len(),
            fit.best_val_loss
        );
        Ok(())
    }))
}

/// Argmax labels for a split, keeping the gold label for scoring.
fn classify_split(
    model: &ReferenceEncoder<f64>,
    labels: &[String],
    records: &[SentenceRecord],
    model_id: &str,
) -> Result<Vec<PredictionRecord<f64>>> {
    records
        .iter()
        .map(|r| {
            let logits = model.predict(&r.text)?;
            let i = argmax(&logits).context("model produced no outputs")?;
            Ok(PredictionRecord {
                text: r.text.clone(),
                gold: Some(r.label.clone()),
                pred: labels[i].clone(),
                score: Score::Logits(logits),
                model: model_id.to_owned(),
            })
        })
        .collect()
}

fn predictions_bytes(records: &[PredictionRecord<f64>]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_predictions(records, &mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct FinetuneMetrics {
    labels: Vec<String>,
    best_epoch: usize,
    best_dev_loss: f64,
    dev_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_f1: Option<f64>,
}

pub fn finetune_cmd(ws: &mut Workspace, args: &FinetuneArgs, config: &PipelineConfig) -> Result<Job> {
    let dataset = load_dataset(ws, &args.data)?;
    let base = args.checkpoint.as_deref().map(|p| load_checkpoint(ws, p)).transpose()?;
    let mut job = FinetuneJob::new(dataset, config.seed);
    job.config = config.finetune_config();
    let dim = config.embedding_dim;
    let out = args.out.clone();
    Ok(Box::new(move |run| {
        let labels = job.dataset.labels().to_vec();
        let backend = match base {
            Some((ckpt, hash)) => {
                job.base_head = Some(ckpt.meta.head);
                job.base_checkpoint = Some(hash);
                ckpt.model
            }
            None => ReferenceEncoder::new(dim, labels.len(), job.seed),
        };
        let ckpt = finetune(&job, backend)?;
        let bytes = ckpt.to_bytes()?;
        run.write(&out, &bytes)?;
        let id = crate::run::sha256_hex(&bytes)[..12].to_owned();
        let dev = classify_split(&ckpt.model, &labels, job.dataset.dev(), &id)?;
        let test_f1 = if job.dataset.test().is_empty() {
            None
        } else {
            let test = classify_split(&ckpt.model, &labels, job.dataset.test(), &id)?;
            run.write("test_predictions.jsonl", &predictions_bytes(&test)?)?;
            Some(score_predictions(&test)?)
        };
        let metrics = FinetuneMetrics {
            labels,
            best_epoch: ckpt.meta.fit.best_epoch,
            best_dev_loss: ckpt.meta.fit.best_val_loss,
            dev_f1: score_predictions(&dev)?,
            test_f1,
        };
        run.write_json("metrics.json", &metrics)?;
        match test_f1 {
            Some(f1) => println!("dev F1 {:.4}, test F1 {f1:.4}", metrics.dev_f1),
            None => println!("dev F1 {:.4}", metrics.dev_f1),
        }
        Ok(())
    }))
}

#[derive(Serialize)]
struct FewshotSeed {
    seed: u64,
    test_f1: f64,
    best_epoch: usize,
    train_ids: Vec<usize>,
    dev_ids: Vec<usize>,
}

#[derive(Serialize)]
struct FewshotSummary {
    n_train: usize,
    n_dev: usize,
    runs: Vec<FewshotSeed>,
    mean_test_f1: f64,
}

pub fn fewshot_cmd(ws: &mut Workspace, args: &FewshotArgs, config: &PipelineConfig) -> Result<Job> {
    let dataset = load_dataset(ws, &args.data)?;
    let base = args.checkpoint.as_deref().map(|p| load_checkpoint(ws, p)).transpose()?;
    let (n_train, n_dev) = (config.fewshot_train, config.fewshot_dev);
    if dataset.test().is_empty() {
        bail!("few-shot evaluation needs a test split in {}", args.data.display());
    }
    for (name, have, want) in [("train", dataset.train().len(), n_train), ("dev", dataset.dev().len(), n_dev)] {
        if have < want {
            bail!("{name} split has {have} rows, {want} requested");
        }
    }
    let config = config.clone();
    Ok(Box::new(move |run| {
        let labels = dataset.labels().to_vec();
        let mut runs = Vec::new();
        for &seed in &config.seeds {
            let sample = fewshot_sample(&dataset, n_train, n_dev, seed, config.fewshot_stratified)?;
            let mut job = FinetuneJob::new(sample, seed);
            job.config = config.finetune_config();
            let backend = match &base {
                Some((ckpt, hash)) => {
                    job.base_head = Some(ckpt.meta.head.clone());
                    job.base_checkpoint = Some(hash.clone());
                    ckpt.model.clone()
                }
                None => ReferenceEncoder::new(config.embedding_dim, labels.len(), seed),
            };
            let ckpt = finetune(&job, backend)?;
            let id = format!("fewshot-seed-{seed}");
            let test = classify_split(&ckpt.model, &labels, job.dataset.test(), &id)?;
            run.write(format!("seed-{seed}/test_predictions.jsonl"), &predictions_bytes(&test)?)?;
            let f1 = score_predictions(&test)?;
            println!("seed {seed}: test F1 {f1:.4}");
            runs.push(FewshotSeed {
                seed,
                test_f1: f1,
                best_epoch: ckpt.meta.fit.best_epoch,
                train_ids: job.dataset.train().iter().map(|r| r.id).collect(),
                dev_ids: job.dataset.dev().iter().map(|r| r.id).collect(),
            });
        }
        let by_seed: BTreeMap<u64, f64> = runs.iter().map(|r| (r.seed, r.test_f1)).collect();
        let mean = run_seeds(&config.seeds, |s| Ok(((), by_seed[&s])))?.mean;
        run.write_json("fewshot.json", &FewshotSummary { n_train, n_dev, runs, mean_test_f1: mean })?;
        println!("mean test F1 over {} seeds: {mean:.4}", config.seeds.len());
        Ok(())
    }))
}

/// Reads a `text` or `text<TAB>label` file with a header row.
fn read_inputs<R: BufRead>(reader: R, origin: &str) -> Result<Vec<(String, Option<String>)>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let labeled = match header.trim_end_matches('\r') {
        "text" => false,
        "text\tlabel" => true,
        other => bail!("{origin}: line 1: expected header \"text\" or \"text\\tlabel\", found {other:?}"),
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if labeled { 2 } else { 1 };
        if fields.len() != want {
            bail!("{origin}: line {}: expected {want} column(s), found {}", i + 2, fields.len());
        }
        out.push((fields[0].trim().to_owned(), labeled.then(|| fields[1].trim().to_owned())));
    }
    Ok(out)
}

pub fn predict_cmd(ws: &mut Workspace, args: &PredictArgs, config: &PipelineConfig) -> Result<Job> {
    let (ckpt, hash) = load_checkpoint(ws, &args.checkpoint)?;
    let input_path = ws.input(&args.input)?;
    let file = fs::File::open(&input_path)?;
    let rows = read_inputs(std::io::BufReader::new(file), &args.input.display().to_string())?;
    let (task, max_len, out) = (config.task, config.finetune_max_len, args.out.clone());
    let model_id = args.model_id.clone().unwrap_or_else(|| hash[..12].to_owned());
    Ok(Box::new(move |run| {
        let mut model = ckpt.model;
        model.set_max_len(max_len);
        let records = predict_zero_shot(&model, &ckpt.meta.head, &rows, task, &model_id)?;
        run.write(&out, &predictions_bytes(&records)?)?;
        if records.iter().any(|r| r.gold.is_some()) {
            println!("predicted {} sentences, F1 {:.4}", records.len(), score_predictions(&records)?);
        } else {
            println!("predicted {} sentences", records.len());
        }
        Ok(())
    }))
}

fn load_groups(ws: &mut Workspace, rel: &Path) -> Result<GroupSpec> {
    let path = ws.input(rel)?;
    let text = fs::read_to_string(&path)?;
    let spec: GroupSpec = if rel.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid group spec {}", rel.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid group spec {}", rel.display()))?
    };
    spec.validate()?;
    Ok(spec)
}

pub fn render_report(report: &EvalReport<f64>) -> String {
    let mut s = String::new();
    let width = report.per_language.keys().map(String::len).chain(report.groups.keys().map(String::len)).max();
    let w = width.unwrap_or(0).max(8);
    let _ = writeln!(s, "{:<w$}  {:>7}", "language", "f1");
    for (lang, f1) in &report.per_language {
        let _ = writeln!(s, "{lang:<w$}  {f1:>7.4}");
    }
    if !report.groups.is_empty() {
        let _ = writeln!(s, "\n{:<w$}  {:>7}  members", "group", "mean");
        for (name, g) in &report.groups {
            let mean = g.mean.map_or("-".to_owned(), |m| format!("{m:.4}"));
            let mut members = g.members.join(",");
            if !g.excluded.is_empty() {
                let _ = write!(members, " (excluded: {})", g.excluded.join(","));
            }
            let _ = writeln!(s, "{name:<w$}  {mean:>7}  {members}");
        }
    }
    if let Some(avg) = report.average {
        let _ = writeln!(s, "\n{:<w$}  {avg:>7.4}", "average");
    }
    s
}

fn write_report(run: &mut Run, report: &EvalReport<f64>) -> Result<()> {
    run.write_json("report.json", report)?;
    let table = render_report(report);
    run.write("report.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn evaluate_cmd(ws: &mut Workspace, args: &EvaluateArgs, _config: &PipelineConfig) -> Result<Job> {
    let mut per_language = BTreeMap::new();
    for item in &args.predictions {
        let (lang, rel) = item.split_once('=').with_context(|| format!("expected LANG=PATH, found {item:?}"))?;
        let lang = Lang::new(lang)?.to_string();
        let path = ws.input(Path::new(rel))?;
        let records: Vec<PredictionRecord<f64>> = read_predictions(std::io::BufReader::new(fs::File::open(&path)?))
            .with_context(|| format!("cannot read predictions {rel}"))?;
        let f1 = score_predictions(&records).with_context(|| format!("cannot score {rel}"))?;
        if per_language.insert(lang.clone(), f1).is_some() {
            bail!("language {lang} given twice");
        }
    }
    let spec = match &args.groups {
        Some(rel) => load_groups(ws, rel)?,
        None => GroupSpec { ungrouped: per_language.keys().cloned().collect(), ..GroupSpec::default() },
    };
    let report = aggregate_report(&per_language, &spec)?;
    Ok(Box::new(move |run| write_report(run, &report)))
}

/// Locates `report.json` for a run given as a directory, a file, or a run
/// name under `<workdir>/runs`.
fn report_path(ws: &Workspace, run: &Path) -> PathBuf {
    for candidate in [run.to_owned(), Path::new("runs").join(run)] {
        let full = ws.resolve(&candidate);
        if full.is_file() {
            return candidate;
        }
        if full.join("report.json").is_file() {
            return candidate.join("report.json");
        }
    }
    run.join("report.json")
}

pub fn report_cmd(ws: &mut Workspace, args: &ReportArgs, _config: &PipelineConfig) -> Result<Job> {
    let mut reports: Vec<EvalReport<f64>> = Vec::new();
    for run in &args.runs {
        let rel = report_path(ws, run);
        let path = ws.input(&rel)?;
        let report = serde_json::from_slice(&fs::read(&path)?)
            .with_context(|| format!("{} is not an evaluation report", rel.display()))?;
        reports.push(report);
    }
    let spec = args.groups.as_deref().map(|g| load_groups(ws, g)).transpose()?;
    let merged = merge_reports(&reports, spec.as_ref())?;
    Ok(Box::new(move |run| write_report(run, &merged)))
}

enum Scorer {
    Mock(MockScorer),
    Http(HttpScorer),
}

impl CompletionScorer for Scorer {
    fn score(&self, context: &str, completion: &str) -> Result<Vec<f64>, ScorerError> {
        match self {
            Scorer::Mock(s) => s.score(context, completion),
            Scorer::Http(s) => s.score(context, completion),
        }
    }
}

#[derive(Serialize)]
struct PromptEvalOutput<'a> {
    scorer: String,
    #[serde(flatten)]
    report: &'a lexsent_core::prompt::PromptEvalReport,
}

pub fn prompt_eval_cmd(ws: &mut Workspace, args: &PromptEvalArgs, config: &PipelineConfig) -> Result<Job> {
    let path = ws.input(&args.data)?;
    let rows = load_sentences(&path)?;
    let prompt = config.prompt_config();
    if let Some(r) = rows.iter().find(|r| !prompt.verbalizers.contains(&r.label)) {
        bail!("label {:?} in {} is not among the verbalizers {:?}", r.label, args.data.display(), prompt.verbalizers);
    }
    let dataset: Vec<(String, String)> = rows.into_iter().map(|r| (r.text, r.label)).collect();

    let templates = match &args.templates {
        None => builtin_templates(),
        Some(dir) => {
            let mut out = Vec::new();
            for id in 1..=u8::MAX {
                let rel = dir.join(format!("prompt_{id}.txt"));
                if !ws.resolve(&rel).is_file() {
                    break;
                }
                out.push(PromptTemplate::load(&ws.input(&rel)?, id)?);
            }
            if out.is_empty() {
                bail!("no prompt_1.txt in {}", dir.display());
            }
            out
        }
    };

    let (scorer, label) = match &args.mock {
        Some(rel) => {
            let text = fs::read_to_string(ws.input(rel)?)?;
            let mock = MockScorer::from_json(&text).with_context(|| format!("invalid mock table {}", rel.display()))?;
            (Scorer::Mock(mock), format!("mock:{}", rel.display()))
        }
        None => {
            let timeout = Duration::from_secs(config.scorer_timeout_secs);
            let http = HttpScorer::from_env(timeout)
                .with_context(|| format!("no scorer: pass --mock FILE or set {SCORER_URL_ENV}"))?;
            let url = std::env::var(SCORER_URL_ENV).unwrap_or_default();
            (Scorer::Http(http), format!("http:{url}"))
        }
    };

    Ok(Box::new(move |run| {
        let cached = CachedScorer::new(scorer);
        let report = evaluate_prompts(&cached, &templates, &dataset, &prompt)?;
        run.write_json("prompt_report.json", &PromptEvalOutput { scorer: label, report: &report })?;
        for t in &report.templates {
            match (&t.f1, &t.error) {
                (Some(f1), _) => println!("template {}: F1 {f1:.4} ({} ties)", t.template, t.ties),
                (None, Some(e)) => println!("template {}: failed: {e}", t.template),
                (None, None) => println!("template {}: no score", t.template),
            }
        }
        match report.average {
            Some(avg) => println!("average F1 {avg:.4}"),
            None => eprintln!("warning: average withheld because some templates failed"),
        }
        Ok(())
    }))
}
