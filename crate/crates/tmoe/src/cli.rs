//! The `tmoe` batch command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tmoe_core::experts::{init_params, StreamKind};
use tmoe_core::features::{RawInstance, RelationLexicon, Resources};
use tmoe_core::train::{
    ablation_run, adapt_entailment, adapt_storycloze, group_questions, train_stream, transfer_load,
    AblationFlag, AblationSetup, EvalSet, FixedScorer, Question, TrainOutcome,
};
use tmoe_core::MixtureMode;

use crate::checkpoint;
use crate::config::{FileConfig, Resolved};
use crate::error::{Error, Result, EXIT_OK, EXIT_USAGE};
use crate::formats::{
    self, load_lexicon, load_word_vectors, read_instances, read_text, write_text,
};
use crate::gradcheck::{gradient_suite, DEFAULT_TOLERANCE};
use crate::pipeline::{encode_all, evaluate_parallel, prepare, EncodedScorer, SharedScorer};
use crate::report;
use crate::synth::{self, Signal, SuiteSpec};

#[derive(Debug, Parser)]
#[command(
    name = "tmoe",
    version,
    about = "Task-aware mixture of reading-comprehension experts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Train one expert on a multiple-choice instance file.
    Train(TrainArgs),
    /// Train QCN on entailment pairs or PCN on stories.
    Pretrain(PretrainArgs),
    /// Accuracy of one or more experts and of their mixture in both modes.
    Eval(EvalArgs),
    /// Per-question choices, combined probabilities and expert confidences.
    Predict(PredictArgs),
    /// Finite-difference check of every layer and stream.
    Gradcheck(GradcheckArgs),
    /// Retrain with each feature channel disabled in turn.
    Ablate(AblateArgs),
    /// Write the seeded synthetic corpora.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StreamArg {
    Pqcn,
    Qcn,
    Pcn,
}

impl From<StreamArg> for StreamKind {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Pqcn => StreamKind::Pqcn,
            StreamArg::Qcn => StreamKind::Qcn,
            StreamArg::Pcn => StreamKind::Pcn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Entailment,
    StoryCloze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Weighted,
    Hard,
}

impl From<ModeArg> for MixtureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Weighted => MixtureMode::WeightedSum,
            ModeArg::Hard => MixtureMode::HardChoice,
        }
    }
}

/// Settings shared by the training verbs. Each overrides the same key in
/// `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Tunables {
    /// TOML file with defaults for any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Minimum corpus count for a vocabulary entry.
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub d_word: Option<usize>,
    #[arg(long)]
    pub d_pos: Option<usize>,
    #[arg(long)]
    pub d_ne: Option<usize>,
    #[arg(long)]
    pub d_rel: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_att: Option<usize>,
    #[arg(long)]
    pub no_pos: bool,
    #[arg(long)]
    pub no_ne: bool,
    #[arg(long)]
    pub no_handcrafted: bool,
    #[arg(long)]
    pub no_relations: bool,
    /// Use random word vectors even when a vector file is given.
    #[arg(long)]
    pub no_vectors: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Tunables {
    fn as_file_config(&self) -> FileConfig {
        let off = |b: bool| if b { Some(false) } else { None };
        FileConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            clip_norm: self.clip_norm,
            patience: self.patience,
            min_count: self.min_count,
            d_word: self.d_word,
            d_pos: self.d_pos,
            d_ne: self.d_ne,
            d_rel: self.d_rel,
            d_h: self.d_h,
            d_att: self.d_att,
            pos: off(self.no_pos),
            ne: off(self.no_ne),
            handcrafted: off(self.no_handcrafted),
            relations: off(self.no_relations),
            vectors: off(self.no_vectors),
            workers: self.workers,
        }
    }

    /// Defaults, then `--config`, then explicit flags.
    pub fn resolve(&self, seed: u64) -> Result<Resolved> {
        let file = FileConfig::load(self.config.as_deref())?;
        let r = Resolved::from_file(&file.overlay(self.as_file_config()), seed);
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, value_enum)]
    pub stream: StreamArg,
    #[arg(long, required = true)]
    pub seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Word-vector text file.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Relation lexicon (head, tail, relation per line).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Start from a pre-trained checkpoint of the same stream.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Per-epoch loss and accuracy trace.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub tune: Tunables,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub tune: Tunables,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Expert checkpoint; repeat for a mixture.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Debugging aid: an expert that always answers `kind=p1,p2`.
    #[arg(long = "inject", value_name = "KIND=P1,P2")]
    pub inject: Vec<String>,
    /// Machine-readable report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Aligned text table; printed to stdout when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, value_enum, default_value = "weighted")]
    pub mode: ModeArg,
    /// One JSON line per question.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, value_enum)]
    pub stream: StreamArg,
    #[arg(long, required = true)]
    pub seed: u64,
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Channels to disable one at a time: pos, ne, handcrafted, relations,
    /// vectors.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "pos,ne,handcrafted,relations,vectors"
    )]
    pub flags: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub tune: Tunables,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "question")]
    pub signal: Signal,
    #[arg(long)]
    pub train_pairs: Option<usize>,
    #[arg(long)]
    pub heldout_pairs: Option<usize>,
    #[arg(long)]
    pub train_questions: Option<usize>,
    #[arg(long)]
    pub dev_questions: Option<usize>,
    #[arg(long)]
    pub entailment: Option<usize>,
    #[arg(long)]
    pub stories: Option<usize>,
    #[arg(long)]
    pub d_word: Option<usize>,
}

/// Parses `args` (program name first) and runs the verb; returns the exit
/// status. Output goes to stdout, diagnostics to the log.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Train(a) => train(a),
        Verb::Pretrain(a) => pretrain(a),
        Verb::Eval(a) => eval(a),
        Verb::Predict(a) => predict(a),
        Verb::Gradcheck(a) => gradcheck(a),
        Verb::Ablate(a) => ablate(a),
        Verb::Synth(a) => synth_verb(a),
    }
}

fn log_resolved(verb: &str, r: &Resolved) {
    log::info!("{verb}: resolved configuration {}", r.to_json());
}

fn vector_loader<'a>(
    path: Option<&'a Path>,
    r: &'a Resolved,
) -> impl FnOnce(&Resources) -> Result<tmoe_core::features::WordVectorTable> + 'a {
    move |res| load_word_vectors(path, &res.vocab, r.d_word, r.seed)
}

fn write_outcome(
    outcome: TrainOutcome,
    res: &Resources,
    task: &str,
    out: &Path,
    log_path: Option<&Path>,
) -> Result<()> {
    let trace = report::epoch_tsv(&outcome.epochs);
    if let Some(p) = log_path {
        write_text(p, &trace)?;
    }
    print!("{trace}");
    println!(
        "best epoch {} dev accuracy {:.6} -> {}",
        outcome.best_epoch,
        outcome.best_dev_accuracy,
        out.display()
    );
    checkpoint::save(&outcome.into_checkpoint(res, task), out)
}

fn train(a: TrainArgs) -> Result<()> {
    let kind: StreamKind = a.stream.into();
    let init = a.init_from.as_deref().map(checkpoint::load).transpose()?;
    let mut tune = a.tune.clone();
    if let Some(c) = &init {
        let s = &c.stream.config;
        tune.d_word = tune.d_word.or(Some(s.d_word));
        tune.d_pos = tune.d_pos.or(Some(s.d_pos));
        tune.d_ne = tune.d_ne.or(Some(s.d_ne));
        tune.d_rel = tune.d_rel.or(Some(s.d_rel));
        tune.d_h = tune.d_h.or(Some(s.d_h));
        tune.d_att = tune.d_att.or(Some(s.d_att));
    }
    let r = tune.resolve(a.seed)?;
    log_resolved("train", &r);
    let train_raw = read_instances(&a.data)?;
    let dev_raw = read_instances(&a.dev)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let prep = prepare(
        &train_raw,
        &dev_raw,
        lexicon,
        vector_loader(a.vectors.as_deref(), &r),
        r.min_count,
    )?;
    let cfg = r.stream_config();
    let (initial, task) = match &init {
        Some(c) => {
            if c.stream.kind != kind {
                return Err(tmoe_core::Error::KindMismatch {
                    expected: kind.name(),
                    found: c.stream.kind.name(),
                }
                .into());
            }
            let p = transfer_load(c, &prep.resources, &prep.vectors, &cfg)?;
            (p, format!("transfer:{}", c.meta.source_task))
        }
        None => (
            init_params(kind, &cfg, &prep.vectors, &prep.resources)?,
            "scratch".to_string(),
        ),
    };
    let dev = EvalSet::from_instances(prep.dev.clone());
    let outcome = train_stream(kind, &prep.train, &dev, &r.train_config(), initial)?;
    write_outcome(outcome, &prep.resources, &task, &a.out, a.log.as_deref())
}

fn adapt(task: TaskArg, path: &Path) -> Result<Vec<RawInstance>> {
    let text = read_text(path)?;
    match task {
        TaskArg::Entailment => adapt_entailment(&formats::parse_entailment(&text, path)?)
            .map_err(|e| formats::with_path(path, e)),
        TaskArg::StoryCloze => adapt_storycloze(&formats::parse_stories(&text, path)?)
            .map_err(|e| formats::with_path(path, e)),
    }
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let (kind, tag) = match a.task {
        TaskArg::Entailment => (StreamKind::Qcn, "entailment"),
        TaskArg::StoryCloze => (StreamKind::Pcn, "story-cloze"),
    };
    let r = a.tune.resolve(a.seed)?;
    log_resolved("pretrain", &r);
    let train_raw = adapt(a.task, &a.data)?;
    let dev_raw = adapt(a.task, &a.dev)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let prep = prepare(
        &train_raw,
        &dev_raw,
        lexicon,
        vector_loader(a.vectors.as_deref(), &r),
        r.min_count,
    )?;
    let initial = init_params(kind, &r.stream_config(), &prep.vectors, &prep.resources)?;
    let dev = EvalSet::from_instances(prep.dev.clone());
    let outcome = train_stream(kind, &prep.train, &dev, &r.train_config(), initial)?;
    write_outcome(outcome, &prep.resources, tag, &a.out, a.log.as_deref())
}

fn parse_injection(spec: &str) -> Result<FixedScorer> {
    let bad = || Error::Usage(format!("--inject expects KIND=P1,P2, got `{spec}`"));
    let (kind, probs) = spec.split_once('=').ok_or_else(bad)?;
    let kind: StreamKind = kind.trim().parse().map_err(|_| bad())?;
    let (p1, p2) = probs.split_once(',').ok_or_else(bad)?;
    let p1: f64 = p1.trim().parse().map_err(|_| bad())?;
    let p2: f64 = p2.trim().parse().map_err(|_| bad())?;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(bad());
    }
    Ok(FixedScorer::constant(kind, p1, p2))
}

struct Experts {
    encoded: Vec<EncodedScorer>,
    injected: Vec<FixedScorer>,
    questions: Vec<Question>,
    workers: usize,
}

impl Experts {
    fn scorers(&self) -> Vec<SharedScorer<'_>> {
        let mut v: Vec<SharedScorer<'_>> =
            self.encoded.iter().map(|s| s as SharedScorer<'_>).collect();
        v.extend(self.injected.iter().map(|s| s as SharedScorer<'_>));
        v
    }
}

fn load_experts(a: &EvalArgs) -> Result<Experts> {
    if a.checkpoints.is_empty() && a.inject.is_empty() {
        return Err(Error::Usage("give at least one --checkpoint".into()));
    }
    let file = FileConfig::load(a.config.as_deref())?;
    let workers = a.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(Error::Usage("workers must be positive".into()));
    }
    log::info!(
        "evaluation: data {} checkpoints {:?} injected {:?} workers {workers}",
        a.data.display(),
        a.checkpoints,
        a.inject
    );
    let raws = read_instances(&a.data)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let mut encoded = Vec::new();
    for path in &a.checkpoints {
        let c = checkpoint::load(path)?;
        log::info!(
            "{}: {} expert from {}",
            path.display(),
            c.stream.kind,
            c.meta.source_task
        );
        // Experts trained without a lexicon ignore the one given here.
        let lex = if c.relations.len() == 1 {
            RelationLexicon::empty()
        } else {
            lexicon.clone()
        };
        encoded.push(EncodedScorer::new(&c, lex, &raws)?);
    }
    let injected = a
        .inject
        .iter()
        .map(|s| parse_injection(s))
        .collect::<Result<Vec<_>>>()?;
    let reference = Resources::build(&raws, RelationLexicon::empty(), 1);
    let questions = group_questions(encode_all(&raws, &reference)?)?;
    Ok(Experts {
        encoded,
        injected,
        questions,
        workers,
    })
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let experts = load_experts(&a)?;
    let scorers = experts.scorers();
    let mut reports = Vec::new();
    for mode in [MixtureMode::WeightedSum, MixtureMode::HardChoice] {
        reports.push(evaluate_parallel(
            &scorers,
            &experts.questions,
            mode,
            experts.workers,
        )?);
    }
    if let Some(p) = &a.report {
        write_text(p, &report::eval_tsv(&reports))?;
    }
    emit(&report::eval_table(&reports), a.table.as_deref())
}

fn predict(a: PredictArgs) -> Result<()> {
    let experts = load_experts(&a.eval)?;
    let scorers = experts.scorers();
    let rep = evaluate_parallel(&scorers, &experts.questions, a.mode.into(), experts.workers)?;
    if let Some(p) = &a.out {
        write_text(p, &report::predictions_jsonl(&rep))?;
    }
    if let Some(p) = &a.eval.report {
        write_text(p, &report::eval_tsv(std::slice::from_ref(&rep)))?;
    }
    emit(&report::predictions_table(&rep), a.eval.table.as_deref())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    log::info!("gradcheck: seed {} tolerance {:e}", a.seed, a.tolerance);
    let rows = gradient_suite(a.seed)?;
    let mut worst: f64 = 0.0;
    for r in &rows {
        println!(
            "{:<16}{:>12.3e}  {}",
            r.check, r.max_rel_error, r.worst_param
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if rows
        .iter()
        .any(|r| r.max_rel_error.is_nan() || r.max_rel_error >= a.tolerance)
    {
        return Err(Error::Check(format!(
            "gradient error {worst:e} exceeds {:e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let kind: StreamKind = a.stream.into();
    let flags = a
        .flags
        .iter()
        .map(|f| {
            f.parse::<AblationFlag>()
                .map_err(|e| Error::Usage(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = a.tune.resolve(a.seed)?;
    log_resolved("ablate", &r);
    let train_raw = read_instances(&a.data)?;
    let dev_raw = read_instances(&a.dev)?;
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let prep = prepare(
        &train_raw,
        &dev_raw,
        lexicon,
        vector_loader(a.vectors.as_deref(), &r),
        r.min_count,
    )?;
    let dev = group_questions(prep.dev.clone())?;
    let setup = AblationSetup {
        kind,
        stream: r.stream_config(),
        train: r.train_config(),
        train_data: &prep.train,
        dev: &dev,
        word_vectors: &prep.vectors,
        resources: &prep.resources,
    };
    let table = ablation_run(&setup, &flags)?;
    if let Some(p) = &a.out {
        write_text(p, &table.to_tsv())?;
    }
    emit(&table.to_aligned(), a.table.as_deref())
}

fn synth_verb(a: SynthArgs) -> Result<()> {
    let d = SuiteSpec::default();
    let spec = SuiteSpec {
        seed: a.seed,
        train_pairs: a.train_pairs.unwrap_or(d.train_pairs),
        heldout_pairs: a.heldout_pairs.unwrap_or(d.heldout_pairs),
        train_questions: a.train_questions.unwrap_or(d.train_questions),
        dev_questions: a.dev_questions.unwrap_or(d.dev_questions),
        signal: a.signal,
        entailment: a.entailment.unwrap_or(d.entailment),
        stories: a.stories.unwrap_or(d.stories),
        d_word: a.d_word.unwrap_or(d.d_word),
    };
    log::info!("synth: {spec:?}");
    for name in synth::write_suite(&a.out_dir, &spec)? {
        println!("{}", a.out_dir.join(name).display());
    }
    Ok(())
}
