//! `tagrel`: generate data, score tags under named presets, learn fusion
//! weights and evaluate runs.

mod config;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tagrel_core::collection::{generate_collection, load_collection};
use tagrel_core::evalkit::{evaluate_run, format_report, pairwise_tests, DEFAULT_PERMUTATIONS, NDCG_CUTOFF};
use tagrel_core::learning::{AscentConfig, DmlConfig, Metric};
use tagrel_core::pipeline::{learn, read_learned, write_learned, LearnConfig, Preset, Scorer, ScoringConfig, DEFAULT_FEATURES};
use tagrel_core::{Collection, Error, Qrels, RunFile, SyntheticConfig};

const SUBCOMMANDS: [&str; 5] = ["synth", "score", "learn", "eval", "list-presets"];

#[derive(Parser)]
#[command(name = "tagrel", version, about = "Tag relevance fusion for tag-based image retrieval")]
#[command(args_override_self = true)]
struct Cli {
    /// `key = value` file supplying any flag of the subcommand; flags given
    /// on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic collection with ground-truth qrels.
    Synth(SynthArgs),
    /// Score tags of a collection under a preset and write a run file.
    Score(ScoreArgs),
    /// Learn fusion weights for a learning preset.
    Learn(LearnArgs),
    /// Evaluate run files against qrels.
    Eval(EvalArgs),
    /// Print every preset name.
    ListPresets(ListArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_images: usize,
    #[arg(long, default_value_t = 20)]
    n_tags: usize,
    /// Defaults to a quarter of the images.
    #[arg(long)]
    n_users: Option<usize>,
    /// Comma-separated feature names; each is informative for a disjoint
    /// block of tags.
    #[arg(long, default_value = "COLOR,CSLBP")]
    features: String,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.9)]
    q_correct: f64,
    #[arg(long, default_value_t = 0.05)]
    q_incorrect: f64,
    #[arg(long, default_value_t = 0.15)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Split into named subdirectories, e.g. `source=2000,train=1000,test=1000`.
    /// Sizes must add up to the image count when `--n-images` is given.
    #[arg(long)]
    partitions: Option<String>,
}

#[derive(Args, Clone)]
struct ScoringArgs {
    /// Directory with `tags.tsv` and `<feature>.feat` files holding the
    /// neighbor source collection.
    #[arg(long)]
    source: PathBuf,
    /// Comma-separated visual features; each must have a feature file.
    #[arg(long, default_value = "COLOR,CSLBP,GIST,DSIFT")]
    features: String,
    #[arg(long, default_value_t = 500)]
    k: usize,
    /// Comma-separated base presets fused by `Late` presets (default
    /// `TagRel-<feature>` per feature).
    #[arg(long)]
    members: Option<String>,
    #[arg(long)]
    kde_feature: Option<String>,
    /// KDE bandwidth; median pairwise distance when unset.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 500)]
    kde_cap: usize,
    #[arg(long, default_value_t = 10_000)]
    calibration_pairs: usize,
    #[arg(long, default_value_t = 1)]
    sim_min_count: usize,
    /// Comma-separated tags (default: every tag of the scored collection).
    #[arg(long)]
    tags: Option<String>,
    /// Root seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Directory with the collection to score (default: the source).
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    preset: String,
    /// Directory with learned weights for learning presets.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    /// Run file to write.
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the preset name.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Directory with the training collection.
    #[arg(long)]
    train: PathBuf,
    /// Training qrels (default: `<train>/qrels.tsv`).
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Any preset of the family to learn, e.g. `Late-minmax-learning+`.
    #[arg(long)]
    preset: String,
    /// Directory receiving the weight files and training log.
    #[arg(long)]
    out: PathBuf,
    /// `AP` or `NDCG@<cutoff>`.
    #[arg(long, default_value = "AP")]
    metric: String,
    #[arg(long, default_value_t = 1)]
    min_pos: usize,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    /// Skip per-concept weights.
    #[arg(long)]
    no_per_concept: bool,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 2.0)]
    growth: f64,
    #[arg(long, default_value_t = 10)]
    doublings: u32,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 50)]
    sweeps: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 512)]
    breakpoint_cap: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    qrels: PathBuf,
    /// Run files to evaluate.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Report file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    n_perm: usize,
    #[arg(long, default_value_t = NDCG_CUTOFF)]
    cutoff: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ListArgs {
    /// Comma-separated feature names.
    #[arg(long, default_value = "COLOR,CSLBP,GIST,DSIFT")]
    features: String,
}

type CliResult<T> = std::result::Result<T, String>;

fn err(e: Error) -> String {
    e.to_string()
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

fn load_dir(dir: &Path, features: &[String]) -> CliResult<Collection> {
    let feats: Vec<PathBuf> = features.iter().map(|f| dir.join(format!("{f}.feat"))).collect();
    load_collection(&dir.join("tags.tsv"), &feats).map_err(err)
}

fn scoring_config(a: &ScoringArgs) -> ScoringConfig {
    ScoringConfig {
        k: a.k,
        features: split_list(&a.features),
        late_members: a.members.as_deref().map(split_list).unwrap_or_default(),
        kde_feature: a.kde_feature.clone(),
        kde_sigma: a.sigma,
        kde_sample_cap: a.kde_cap,
        calibration_pairs: a.calibration_pairs,
        similarity_min_count: a.sim_min_count,
        seed: a.seed,
    }
}

/// Feature files needed by the configuration: the fused features plus any
/// referenced by late members or the KDE baseline.
fn needed_features(cfg: &ScoringConfig) -> CliResult<Vec<String>> {
    let mut out: BTreeSet<String> = cfg.features.iter().cloned().collect();
    for m in cfg.members().map_err(err)? {
        match m {
            Preset::TagRel(f) | Preset::TagRanking(Some(f)) => {
                out.insert(f);
            }
            Preset::TagRanking(None) => {
                out.insert(cfg.kde_feature().map_err(err)?.to_string());
            }
            _ => {}
        }
    }
    if let Some(f) = &cfg.kde_feature {
        out.insert(f.clone());
    }
    Ok(out.into_iter().collect())
}

fn preset_features(p: &Preset, cfg: &ScoringConfig) -> CliResult<Vec<String>> {
    let mut f = needed_features(cfg)?;
    match p {
        Preset::TagRel(x) | Preset::TagRanking(Some(x)) => f.push(x.clone()),
        Preset::TagRanking(None) => f.push(cfg.kde_feature().map_err(err)?.to_string()),
        _ => {}
    }
    f.sort();
    f.dedup();
    Ok(f)
}

fn resolve_tags(a: &ScoringArgs, target: &Collection) -> Vec<String> {
    match &a.tags {
        Some(t) => split_list(t),
        None => target.tags().map(String::from).collect(),
    }
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let names = split_list(&a.features);
    let parts: Vec<(String, usize)> = match &a.partitions {
        None => Vec::new(),
        Some(list) => split_list(list)
            .iter()
            .map(|p| {
                let (name, n) = p.split_once('=').ok_or_else(|| format!("bad partition `{p}`"))?;
                let n: usize = n.trim().parse().map_err(|_| format!("bad partition size in `{p}`"))?;
                Ok((name.trim().to_string(), n))
            })
            .collect::<CliResult<_>>()?,
    };
    let total: usize = parts.iter().map(|p| p.1).sum();
    if !parts.is_empty() && total != a.n_images {
        return Err(format!("partitions add up to {total}, not --n-images {}", a.n_images));
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut cfg = SyntheticConfig::with_blocks(a.n_images, a.n_tags, &name_refs, a.dim, a.seed);
    if let Some(u) = a.n_users {
        cfg.n_users = u;
    }
    cfg.q_correct = a.q_correct;
    cfg.q_incorrect = a.q_incorrect;
    cfg.cluster_spread = a.spread;
    let (c, truth) = generate_collection(&cfg).map_err(err)?;
    let qrels = Qrels::from_ground_truth(&truth);
    let write = |dir: &Path, c: &Collection, q: &Qrels| -> CliResult<()> {
        c.write_dir(dir).map_err(err)?;
        q.write(&dir.join("qrels.tsv")).map_err(err)
    };
    if parts.is_empty() {
        return write(&a.out, &c, &qrels);
    }
    let mut start = 0;
    for (name, n) in parts {
        let ids: Vec<&str> = c.images()[start..start + n].iter().map(|r| r.id.as_str()).collect();
        start += n;
        let sub = c.subset(ids.iter().copied()).map_err(err)?;
        let q = qrels.restricted_to(&ids.into_iter().collect());
        write(&a.out.join(name), &sub, &q)?;
    }
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> CliResult<bool> {
    let preset: Preset = a.preset.parse().map_err(err)?;
    let cfg = scoring_config(&a.scoring);
    let feats = preset_features(&preset, &cfg)?;
    let source = load_dir(&a.scoring.source, &feats)?;
    let target = match &a.target {
        Some(t) => load_dir(t, &feats)?,
        None => source.clone(),
    };
    let weights = match (&preset, preset.family()) {
        (
            Preset::Fusion {
                weighting: tagrel_core::pipeline::Weighting::Average,
                ..
            },
            _,
        ) => None,
        (_, Some(family)) => {
            let dir = a
                .weights_dir
                .as_ref()
                .ok_or_else(|| format!("{preset} needs --weights-dir"))?;
            Some(read_learned(dir, &family).map_err(err)?)
        }
        _ => None,
    };
    let scorer = Scorer::new(&source, &target, &cfg).map_err(err)?;
    let tags = resolve_tags(&a.scoring, &target);
    let tag_refs: Vec<&str> = tags.iter().map(String::as_str).collect();
    let tables = scorer.score(&preset, &tag_refs, weights.as_ref()).map_err(err)?;
    let mut ok = Vec::new();
    let mut failed = false;
    for (tag, t) in tables {
        match t {
            Ok(t) => ok.push(t),
            Err(e) => {
                eprintln!("tag `{tag}`: {e}");
                failed = true;
            }
        }
    }
    let run_id = a.run_id.unwrap_or_else(|| preset.to_string());
    RunFile::from_tables(&run_id, &ok).write(&a.out).map_err(err)?;
    Ok(!failed)
}

fn cmd_learn(a: LearnArgs) -> CliResult<()> {
    let preset: Preset = a.preset.parse().map_err(err)?;
    let family = preset
        .family()
        .ok_or_else(|| format!("{preset} is not a fusion preset"))?;
    let cfg = scoring_config(&a.scoring);
    let feats = preset_features(&preset, &cfg)?;
    let source = load_dir(&a.scoring.source, &feats)?;
    let train = load_dir(&a.train, &feats)?;
    let qrels_path = a.qrels.clone().unwrap_or_else(|| a.train.join("qrels.tsv"));
    let qrels = Qrels::read(&qrels_path).map_err(err)?;
    let metric: Metric = a.metric.parse().map_err(err)?;
    let lcfg = LearnConfig {
        ascent: AscentConfig {
            metric,
            initial_step: a.step,
            growth: a.growth,
            max_doublings: a.doublings,
            tolerance: a.tolerance,
            max_sweeps: a.sweeps,
            restarts: a.restarts,
            seed: 0,
            breakpoint_cap: a.breakpoint_cap,
        },
        dml: DmlConfig::default(),
        n_pairs: a.pairs,
        min_pos: a.min_pos,
        per_concept: !a.no_per_concept,
        seed: a.scoring.seed,
    };
    let scorer = Scorer::new(&source, &train, &cfg).map_err(err)?;
    let tags = match &a.scoring.tags {
        Some(t) => split_list(t),
        None => qrels.tags().map(String::from).collect(),
    };
    let tag_refs: Vec<&str> = tags.iter().map(String::as_str).collect();
    let out = learn(&scorer, &preset, &qrels, &tag_refs, &lcfg).map_err(err)?;
    write_learned(&a.out, &family, &out).map_err(err)
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let qrels = Qrels::read(&a.qrels).map_err(err)?;
    let mut evals = Vec::new();
    for p in &a.runs {
        let run = RunFile::read(p).map_err(err)?;
        let e = evaluate_run(&run, &qrels, a.cutoff);
        for c in e.concepts.iter().filter(|c| c.unjudged) {
            eprintln!("{}: tag `{}` has no judgments; scored as all irrelevant", p.display(), c.tag);
        }
        evals.push(e);
    }
    let tests = if evals.len() >= 2 {
        pairwise_tests(&evals, a.n_perm, a.seed).map_err(err)?
    } else {
        Vec::new()
    };
    let report = format_report(&evals, &tests, a.cutoff);
    match &a.out {
        Some(p) => fs::write(p, report).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn cmd_list(a: ListArgs) {
    let feats = split_list(&a.features);
    let feats = if feats.is_empty() {
        DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect()
    } else {
        feats
    };
    for p in Preset::all(&feats) {
        println!("{p}");
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let res = match cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Score(a) => cmd_score(a),
        Command::Learn(a) => cmd_learn(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::ListPresets(a) => {
            cmd_list(a);
            Ok(true)
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
