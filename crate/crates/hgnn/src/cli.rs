//! The `hgnn` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hgnn_core::corpus::synthesize_corpus;
use hgnn_core::graph::Grid;
use hgnn_core::metrics::evaluate;
use hgnn_core::{
    Decoding, DialogueRecord, EpochLog, GnnMode, HeteroGraph, Model, NodeType, SynthSpec, TrainConfig, Trainer,
};

use crate::parallel::RayonExecutor;
use crate::{checkpoint, records, report, settings, Error, Result};

pub const SEED_ENV: &str = "HGNN_SEED";

const PRECEDENCE: &str = "Configuration precedence, highest first: command-line flags, \
the --config file, the HGNN_SEED environment variable (seed only), built-in defaults. \
Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "hgnn", version, about = "Heterogeneous graph emotional dialogue model", after_help = PRECEDENCE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-signal synthetic corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Print one generated response per dialogue.
    Generate(GenerateArgs),
    /// Evaluate a checkpoint and write a report.
    Eval(EvalArgs),
    /// Print the graph of one dialogue.
    InspectGraph(InspectArgs),
    /// Compare backward gradients with central differences on a synthetic dialogue.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub dialogues: usize,
    /// Defaults to HGNN_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the labeling function; corpora sharing it share labels.
    #[arg(long)]
    pub signal_seed: Option<u64>,
    #[arg(long)]
    pub max_turns: Option<usize>,
}

/// Options that shape the training configuration.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Node types to remove from the graph, comma separated.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Share one graph weight per layer across node types.
    #[arg(long)]
    pub homo: bool,
    /// Condition the decoder on the gold emotion.
    #[arg(long)]
    pub golden_emotion: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any configuration key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus whose mean losses are logged after every epoch.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Also write `OUT.epochN` every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Respond as this speaker instead of each dialogue's next speaker.
    #[arg(long)]
    pub speaker: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Text report path; a `.jsonl` file is written beside it.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Zero-based dialogue index.
    #[arg(long)]
    pub index: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Settings applied on top of the small gradient-check widths.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 3)]
    pub turns: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => 1,
        Error::Format { what: "config", .. } => 1,
        Error::Model(hgnn_core::Error::Config(_)) => 1,
        Error::Model(hgnn_core::Error::Numerical { .. }) => 3,
        _ => 2,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl ConfigArgs {
    /// Defaults, then the environment seed, then the file, then flags.
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base;
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
        if let Some(path) = &self.config {
            cfg = settings::load(path, cfg)?;
        }
        if let Some(a) = &self.ablate {
            cfg.ablate = settings::parse_node_types(a).map_err(Error::Usage)?;
        }
        if self.homo {
            cfg.gnn_mode = GnnMode::Homo;
        }
        if self.golden_emotion {
            cfg.golden_emotion = true;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            settings::apply(&mut cfg, k.trim(), v.trim()).map_err(Error::Usage)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn announce(err: &mut dyn Write, command: &str, paths: &[(&str, &Path)], cfg: Option<&TrainConfig>) -> Result<()> {
    writeln!(err, "# command = {command}")?;
    for (k, p) in paths {
        writeln!(err, "# {k} = {}", p.display())?;
    }
    if let Some(cfg) = cfg {
        err.write_all(settings::render(cfg).as_bytes())?;
    }
    Ok(())
}

fn load_records(path: &Path, max_turns: usize) -> Result<Vec<DialogueRecord>> {
    let loaded = records::load_corpus(path, max_turns)?;
    if loaded.records.is_empty() {
        return Err(Error::Format {
            what: "corpus",
            line: loaded.rejected.first().map_or(0, |r| r.line),
            message: format!("{} has no usable dialogues", path.display()),
        });
    }
    Ok(loaded.records)
}

fn decoding(beam: usize) -> Result<Decoding> {
    match beam {
        0 => Err(Error::Usage("--beam must be at least 1".into())),
        1 => Ok(Decoding::Greedy),
        k => Ok(Decoding::Beam(k)),
    }
}

fn epoch_line(log: &EpochLog) -> String {
    format!(
        "epoch={} objective={} generation={} classification={} emotion_accuracy={} dialogues={} skipped={}",
        log.epoch, log.objective, log.generation, log.classification, log.emotion_accuracy, log.dialogues, log.skipped
    )
}

fn numerical(detail: String) -> Error {
    Error::Model(hgnn_core::Error::Numerical {
        param: "objective".into(),
        detail,
    })
}

fn synth(a: &SynthArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        n_dialogues: a.dialogues,
        seed: match a.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(defaults.seed),
        },
        signal_seed: a.signal_seed.unwrap_or(defaults.signal_seed),
        max_turns: a.max_turns.unwrap_or(defaults.max_turns),
        ..defaults
    };
    announce(err, "synth", &[("out", &a.out)], None)?;
    writeln!(err, "{spec:?}")?;
    let corpus = synthesize_corpus(&spec)?;
    records::save_corpus(&a.out, &corpus)?;
    writeln!(out, "wrote {} dialogues to {}", corpus.len(), a.out.display())?;
    Ok(())
}

fn train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = a.config.resolve(TrainConfig::default())?;
    if a.checkpoint_every == Some(0) {
        return Err(Error::Usage("--checkpoint-every must be positive".into()));
    }
    let mut paths = vec![("corpus", a.corpus.as_path()), ("out", a.out.as_path())];
    if let Some(v) = &a.valid {
        paths.push(("valid", v.as_path()));
    }
    announce(err, "train", &paths, Some(&cfg))?;
    let corpus = load_records(&a.corpus, cfg.max_turns)?;
    let valid = a
        .valid
        .as_deref()
        .map(|p| load_records(p, cfg.max_turns))
        .transpose()?;
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(Model::from_corpus(&corpus, cfg)?);
    for _ in 0..epochs {
        let log = trainer.train_epoch(&corpus, &RayonExecutor)?;
        if !log.objective.is_finite() {
            return Err(numerical(format!("epoch {} objective is {}", log.epoch, log.objective)));
        }
        let mut line = epoch_line(&log);
        if let Some(v) = &valid {
            let (mut total, mut generation, mut classification) = (0.0, 0.0, 0.0);
            for d in v {
                let l = trainer.model.losses(d)?;
                total += l.total;
                generation += l.generation;
                classification += l.classification;
            }
            let n = v.len() as f64;
            line.push_str(&format!(
                " valid_objective={} valid_generation={} valid_classification={}",
                total / n,
                generation / n,
                classification / n
            ));
        }
        writeln!(out, "{line}")?;
        if let Some(every) = a.checkpoint_every {
            if log.epoch % every == 0 {
                let mut p = a.out.clone().into_os_string();
                p.push(format!(".epoch{}", log.epoch));
                checkpoint::save(Path::new(&p), &trainer.model)?;
            }
        }
    }
    checkpoint::save(&a.out, &trainer.model)?;
    Ok(())
}

fn generate(a: &GenerateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let decoding = decoding(a.beam)?;
    let model = checkpoint::load(&a.ckpt)?;
    announce(err, "generate", &[("ckpt", &a.ckpt), ("corpus", &a.corpus)], Some(&model.config))?;
    for mut d in load_records(&a.corpus, model.config.max_turns)? {
        if let Some(s) = &a.speaker {
            d.next_speaker.clone_from(s);
        }
        let g = model.generate(&d, decoding)?;
        writeln!(out, "{}", model.vocab.decode(&g.tokens))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let decoding = decoding(a.beam)?;
    let model = checkpoint::load(&a.ckpt)?;
    announce(
        err,
        "eval",
        &[("ckpt", &a.ckpt), ("corpus", &a.corpus), ("report", &a.report)],
        Some(&model.config),
    )?;
    let corpus = load_records(&a.corpus, model.config.max_turns)?;
    let r = evaluate(&model, &corpus, decoding)?;
    if !r.ppl.is_finite() {
        return Err(numerical(format!("perplexity is {}", r.ppl)));
    }
    report::write(&a.report, &r)?;
    out.write_all(report::render_text(&r).as_bytes())?;
    Ok(())
}

fn inspect(a: &InspectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = a.config.resolve(TrainConfig::default())?;
    announce(err, "inspect-graph", &[("corpus", &a.corpus)], Some(&cfg))?;
    let corpus = load_records(&a.corpus, cfg.max_turns)?;
    let d = corpus
        .get(a.index)
        .ok_or_else(|| Error::Usage(format!("--index {} but the corpus has {} dialogues", a.index, corpus.len())))?;
    let graph = HeteroGraph::build(
        d,
        hgnn_core::graph::GraphOptions {
            self_loops: cfg.self_loops,
            exclude: cfg.ablate,
        },
    )?;
    write!(out, "{}", render_graph(&graph, cfg.mask_orientation))?;
    Ok(())
}

/// Nodes, edges with the rules that fired, and every type-wise adjacency.
pub fn render_graph(graph: &HeteroGraph, orientation: hgnn_core::MaskOrientation) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let n = graph.node_count();
    let _ = writeln!(s, "nodes {n}");
    for (i, node) in graph.nodes().iter().enumerate() {
        let _ = writeln!(s, "  {i} {} {}", graph.node_label(i), node.kind.name());
    }
    let _ = writeln!(s, "edges {}", graph.edge_count());
    for ((i, j), rules) in graph.edges() {
        let rules: Vec<String> = rules.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(
            s,
            "  {} -- {} rules {}",
            graph.node_label(i),
            graph.node_label(j),
            rules.join(",")
        );
    }
    for t in NodeType::ALL {
        let _ = writeln!(s, "A_{}", t.symbol());
        let cells = graph.type_adjacency(t, orientation);
        let _ = write!(s, "{}", Grid { cells: &cells, size: n });
    }
    s
}

/// A synthetic dialogue with `turns` utterances for gradient checks.
pub fn gradcheck_dialogue(cfg: &TrainConfig, turns: usize, seed: u64) -> Result<Vec<DialogueRecord>> {
    Ok(synthesize_corpus(&SynthSpec {
        n_dialogues: 1,
        min_turns: turns,
        max_turns: turns,
        face_dim: cfg.face_dim,
        audio_dim: cfg.audio_dim,
        seed,
        ..SynthSpec::default()
    })?)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let args = ConfigArgs {
        config: a.config.clone(),
        seed: a.seed,
        ..ConfigArgs::default()
    };
    let cfg = args.resolve(TrainConfig::gradient_check_scale())?;
    if let Some(p) = &a.config {
        announce(err, "gradcheck", &[("config", p)], Some(&cfg))?;
    } else {
        announce(err, "gradcheck", &[], Some(&cfg))?;
    }
    if a.turns == 0 {
        return Err(Error::Usage("--turns must be positive".into()));
    }
    let corpus = gradcheck_dialogue(&cfg, a.turns, cfg.seed)?;
    let model = Model::from_corpus(&corpus, cfg)?;
    let r = model.gradient_check(&corpus[0], a.eps, None)?;
    writeln!(out, "max_rel_error = {:e}", r.max_rel_error)?;
    if let Some((name, i)) = &r.worst {
        writeln!(out, "worst = {name}[{i}]")?;
    }
    writeln!(out, "checked_entries = {}", r.checked_entries)?;
    if r.max_rel_error.is_nan() || r.max_rel_error > a.tolerance {
        return Err(Error::Model(hgnn_core::Error::Numerical {
            param: r.worst.map_or_else(|| "?".into(), |(n, i)| format!("{n}[{i}]")),
            detail: format!("relative error {:e} above {:e}", r.max_rel_error, a.tolerance),
        }));
    }
    Ok(())
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, out, err),
        Command::Train(a) => train(a, out, err),
        Command::Generate(a) => generate(a, out, err),
        Command::Eval(a) => eval(a, out, err),
        Command::InspectGraph(a) => inspect(a, out, err),
        Command::Gradcheck(a) => gradcheck(a, out, err),
    }
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
