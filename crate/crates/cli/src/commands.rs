use std::fmt::Write as _;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rationale::autodiff::Primitive;
use rationale::data::{
    corpus_stats, extract_silver_rationales, generate_synthetic, load_corpus, save_corpus, split_cases, Case,
    LabelSet, Split, Vocabulary,
};
use rationale::metrics::EvalReport;
use rationale::model::Checkpoint;
use rationale::training::{evaluate, greedy_lambda_tuning, run_experiment, run_gradcheck, train, train_label_counts};
use serde_json::json;

use crate::config::FileConfig;
use crate::{Command, Common, Format, MaskView, SplitArg};

pub enum Status {
    Ok,
    /// The command ran but its check did not pass.
    CheckFailed,
}

/// Internal failures are library errors that are not caused by inputs.
pub fn is_internal(e: &anyhow::Error) -> bool {
    e.chain()
        .find_map(|c| c.downcast_ref::<rationale::Error>())
        .is_some_and(|e| !e.is_user_error())
}

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Synth { common } => synth(&common),
        Command::Train {
            common,
            corpus,
            checkpoint,
            log,
        } => train_cmd(&common, corpus, checkpoint, log),
        Command::Tune { common, corpus } => tune(&common, corpus),
        Command::Eval {
            common,
            corpus,
            checkpoint,
            split,
            mask,
        } => eval(&common, corpus, &checkpoint, split, mask),
        Command::Gradcheck {
            common,
            n_probes,
            inject_fault,
        } => gradcheck(&common, n_probes, inject_fault.as_deref()),
        Command::ExtractSilver { common, text, n_facts } => extract_silver(&common, &text, n_facts),
        Command::Stats { common, corpus } => stats(&common, corpus),
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render(common: &Common, table: impl FnOnce() -> String, machine: impl FnOnce() -> String) -> Result<()> {
    let mut text = match common.format {
        Format::Table => table(),
        Format::Machine => machine(),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    emit(common, &text)
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

fn synth(common: &Common) -> Result<Status> {
    let mut cfg = FileConfig::load(common.config.as_deref())?.synth;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("synth needs --out for the corpus file"))?;
    let cases = generate_synthetic(&cfg)?;
    save_corpus(out, &cases, &cfg.label_set()?)?;
    let count = |s| cases.iter().filter(|c| c.split == s).count();
    eprintln!(
        "wrote {} cases to {} (train {}, dev {}, test {})",
        cases.len(),
        out.display(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    Ok(Status::Ok)
}

fn train_cmd(
    common: &Common,
    corpus: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    log: Option<PathBuf>,
) -> Result<Status> {
    let file = FileConfig::load(common.config.as_deref())?;
    let model = file.model()?.clone();
    let mut cfg = file.train.clone();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if checkpoint.is_some() {
        cfg.checkpoint_path = checkpoint;
    }
    if log.is_some() {
        cfg.log_path = log;
    }
    let labels = LabelSet::prefix(model.num_labels)?;
    let cases = load_corpus(&file.corpus(corpus)?, &labels)?;

    if file.experiment.runs > 1 {
        let outcome = run_experiment(&cases, &labels, &model, &cfg, file.experiment.runs)?;
        return render(common, || outcome.report.to_table(), || outcome.report.to_json()).map(|_| Status::Ok);
    }

    let outcome = train(&cases, &labels, &model, &cfg)?;
    let h = &outcome.history;
    let best = h.epochs.get(h.best_epoch.wrapping_sub(1)).and_then(|e| e.dev.clone());
    render(
        common,
        || {
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:>5} {:>10} {:>10} {:>9} {:>10}",
                "epoch", "loss", "dev F1", "sparsity", "silver mRP"
            );
            for e in &h.epochs {
                let (f1, sp, mrp) = e.dev.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN), |d| {
                    (
                        d.micro_f1_masked,
                        d.observed_sparsity,
                        d.silver.map_or(f64::NAN, |s| s.mean_r_precision),
                    )
                });
                let _ = writeln!(
                    t,
                    "{:>5} {:>10.4} {:>10.4} {:>9.1} {:>10.4}",
                    e.epoch, e.mean_loss.total, f1, sp, mrp
                );
            }
            let _ = writeln!(t, "kept epoch {} after {} steps", h.best_epoch, h.steps.len());
            if let Some(d) = &best {
                let _ = writeln!(t, "\ndev report (kept epoch)");
                t.push_str(&d.to_table());
            }
            t
        },
        || {
            pretty(&json!({
                "best_epoch": h.best_epoch,
                "steps": h.steps.len(),
                "passes": h.passes,
                "epochs": h.epochs,
                "dev": best,
            }))
        },
    )?;
    Ok(Status::Ok)
}

fn tune(common: &Common, corpus: Option<PathBuf>) -> Result<Status> {
    let file = FileConfig::load(common.config.as_deref())?;
    let model = file.model()?.clone();
    let grid = file.grid()?;
    let mut cfg = file.train.clone();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let labels = LabelSet::prefix(model.num_labels)?;
    let cases = load_corpus(&file.corpus(corpus)?, &labels)?;
    let result = greedy_lambda_tuning(&cases, &labels, &model, &cfg, &grid)?;
    render(common, || result.to_table(), || result.to_json())?;
    Ok(Status::Ok)
}

fn select_split(cases: &[Case], split: SplitArg) -> Vec<Case> {
    match split {
        SplitArg::Train => split_cases(cases, Split::Train),
        SplitArg::Dev => split_cases(cases, Split::Dev),
        SplitArg::Test => split_cases(cases, Split::Test),
        SplitArg::All => cases.to_vec(),
    }
}

/// The quantities of one column group of the report.
fn mask_view(r: &EvalReport, view: MaskView) -> Vec<(&'static str, f64)> {
    let mut v = vec![("cases", r.cases as f64)];
    match view {
        MaskView::Learned => {
            v.push(("observed_sparsity", r.observed_sparsity));
            v.push(("micro_f1_masked", r.micro_f1_masked));
            v.push(("sufficiency", r.sufficiency));
            for (name, s) in [("silver", r.silver), ("gold", r.gold)] {
                if let Some(s) = s {
                    v.push((if name == "silver" { "silver_f1" } else { "gold_f1" }, s.f1));
                    v.push((if name == "silver" { "silver_mrp" } else { "gold_mrp" }, s.mean_r_precision));
                }
            }
        }
        MaskView::Complement => {
            v.push(("complement_sparsity", 100.0 - r.observed_sparsity));
            v.push(("micro_f1_complement", r.micro_f1_complement));
            v.push(("comprehensiveness", r.comprehensiveness));
        }
        MaskView::Full => v.push(("micro_f1_full", r.micro_f1_full)),
        MaskView::All => unreachable!("full report rendered directly"),
    }
    v
}

fn eval(
    common: &Common,
    corpus: Option<PathBuf>,
    checkpoint: &Path,
    split: SplitArg,
    view: MaskView,
) -> Result<Status> {
    let file = FileConfig::load(common.config.as_deref())?;
    let ck = Checkpoint::load(checkpoint)?;
    let labels = LabelSet::prefix(ck.config.num_labels)?;
    let cases = load_corpus(&file.corpus(corpus)?, &labels)?;
    let selected = select_split(&cases, split);
    if selected.is_empty() {
        bail!("corpus has no cases in the {split:?} split");
    }
    let counts = train_label_counts(&cases, labels.len());
    let vocab = Vocabulary::from_tokens(ck.vocabulary.clone());
    let report = evaluate(&ck.config, &ck.params, &vocab, &selected, &labels, Some(&counts))?;
    if view == MaskView::All {
        render(common, || report.to_table(), || report.to_json())?;
        return Ok(Status::Ok);
    }
    let rows = mask_view(&report, view);
    render(
        common,
        || {
            rows.iter().fold(String::new(), |mut t, (k, v)| {
                let _ = writeln!(t, "{k:<20} {v:.4}");
                t
            })
        },
        || pretty(&serde_json::Value::Object(rows.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())),
    )?;
    Ok(Status::Ok)
}

fn gradcheck(common: &Common, n_probes: Option<usize>, fault: Option<&str>) -> Result<Status> {
    let mut cfg = FileConfig::load(common.config.as_deref())?.gradcheck;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = n_probes {
        cfg.n_probes = n;
    }
    let fault = fault
        .map(|name| Primitive::from_name(name).ok_or_else(|| anyhow!("unknown primitive `{name}`")))
        .transpose()?;
    let lines = run_gradcheck(&cfg, fault)?;
    let passed = lines.iter().all(|l| l.passed);
    render(
        common,
        || {
            let mut t = String::new();
            let _ = writeln!(t, "{:<28} {:>12} {:>7}  result", "objective", "max rel err", "probes");
            for l in &lines {
                let verdict = if l.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(t, "{:<28} {:>12.3e} {:>7}  {verdict}", l.name, l.max_relative_error, l.probes);
            }
            let _ = writeln!(t, "tolerance {:e}: {}", cfg.tolerance, if passed { "all passed" } else { "FAILED" });
            t
        },
        || pretty(&json!({ "tolerance": cfg.tolerance, "passed": passed, "objectives": lines })),
    )?;
    Ok(if passed { Status::Ok } else { Status::CheckFailed })
}

fn extract_silver(common: &Common, text: &Path, n_facts: usize) -> Result<Status> {
    let body = if text == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("cannot read standard input")?;
        s
    } else {
        std::fs::read_to_string(text).with_context(|| format!("cannot read {}", text.display()))?
    };
    let set = extract_silver_rationales(&body, n_facts);
    render(
        common,
        || {
            let items: Vec<String> = set.iter().map(|i| i.to_string()).collect();
            format!("{{{}}}", items.join(","))
        },
        || serde_json::to_string(&set).expect("index set serializes"),
    )?;
    Ok(Status::Ok)
}

fn stats(common: &Common, corpus: Option<PathBuf>) -> Result<Status> {
    let file = FileConfig::load(common.config.as_deref())?;
    let labels = LabelSet::articles();
    let path = file.corpus(corpus)?;
    let cases = load_corpus(&path, &labels)?;
    let mut parts = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        let subset = split_cases(&cases, split);
        if !subset.is_empty() {
            parts.push((split.to_string(), corpus_stats(&subset, &labels)?));
        }
    }
    parts.push(("all".to_string(), corpus_stats(&cases, &labels)?));
    render(
        common,
        || {
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:<6} {:>7} {:>10} {:>12} {:>12} {:>11}",
                "split", "cases", "w/ silver", "sparsity %", "allegations", "paragraphs"
            );
            for (name, s) in &parts {
                let _ = writeln!(
                    t,
                    "{:<6} {:>7} {:>10} {:>12.1} {:>12.2} {:>11.1}",
                    name, s.cases, s.cases_with_silver, s.silver_sparsity_pct, s.mean_allegations, s.mean_paragraphs
                );
            }
            let all = &parts.last().expect("all row").1;
            let _ = writeln!(t, "\n{:<8} {:>7}", "article", "cases");
            for (name, n) in all.label_histogram.iter().filter(|(_, n)| *n > 0) {
                let _ = writeln!(t, "{name:<8} {n:>7}");
            }
            t
        },
        || {
            pretty(&serde_json::Value::Object(
                parts.iter().map(|(k, s)| (k.clone(), json!(s))).collect(),
            ))
        },
    )?;
    Ok(Status::Ok)
}
