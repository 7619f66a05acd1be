use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pseudofam::corpus::{
    build_vocab, load_parallel, manifest_text, read_manifest, synth_generate, LangPairId, PhyloSpec, Vocab,
};
use pseudofam::datasim::{data_similarity, DataSimConfig};
use pseudofam::family::{family_for, InitRule};
use pseudofam::fim::{estimate_fims, fim_distribution_report, report_csv, FimVector, DEFAULT_K};
use pseudofam::model::{init_model, load_checkpoint, save_checkpoint, ModelConfig, SectionId};
use pseudofam::similarity::{similarity_matrix, Method, SimilarityMatrix};
use pseudofam::trainer::{train_with_log, AdamConfig, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "pseudofam",
    version,
    about = "Fisher-information language similarity and pseudo families"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic corpora from a phylogeny config (TOML).
    GenSynth(GenSynthArgs),
    /// Build a vocabulary from corpus files.
    BuildVocab(BuildVocabArgs),
    /// Pretrain the shared model on every corpus of a manifest.
    Train(TrainArgs),
    /// Estimate diagonal Fisher information per language pair.
    EstimateFim(EstimateArgs),
    /// Score every pair of FIMs into a CSV matrix.
    Similarity(SimilarityArgs),
    /// Select the pseudo family of a target pair from a matrix.
    SelectFamily(SelectArgs),
    /// Embedding-space data similarity between two corpora.
    DataSim(DataSimArgs),
    /// Section distribution of the top-K fisher parameters.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Total size including reserved ids.
    #[arg(long, default_value_t = 200)]
    max_size: usize,
    #[arg(long, value_delimiter = ',', default_value = "en")]
    targets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    max_len: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Single corpus (with --pair and --out).
    #[arg(long, requires_all = ["pair", "out"], conflicts_with = "manifest")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    pair: Option<LangPairId>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Every corpus of a manifest (with --out-dir).
    #[arg(long, requires = "out_dir")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Mse,
    Kl,
    Overlap,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mse => Method::Mse,
            MethodArg::Kl => Method::Kl,
            MethodArg::Overlap => Method::Overlap,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    FirstTwo,
    FirstOnly,
}

#[derive(Debug, Args)]
struct SimilarityArgs {
    #[arg(long, num_args = 1.., required = true)]
    fims: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "overlap")]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    /// `ffn`, `all`, or a comma list such as `E_f,D_a`.
    #[arg(long, default_value = "ffn")]
    sections: String,
    /// Checkpoint to validate every FIM against.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output CSV (plus a `.meta` sidecar); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    target: LangPairId,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "first-two")]
    init: InitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataSimArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    aux: PathBuf,
    #[arg(long)]
    aux_pair: LangPairId,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    target_pair: LangPairId,
    #[arg(long, default_value_t = 0.10)]
    frac: f64,
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-sentence top-n table as CSV.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    fims: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec = PhyloSpec::load(&a.config)?;
    eprintln!("[config] phylogeny {:?}", spec);
    let out = synth_generate(&spec)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut entries = Vec::new();
    for (pair, corpus) in &out.corpora {
        let name = format!("{pair}.tsv");
        std::fs::write(a.out_dir.join(&name), corpus.to_tsv())?;
        entries.push((pair, name));
    }
    let manifest = manifest_text(entries.iter().map(|(p, n)| (*p, n.as_str())));
    std::fs::write(a.out_dir.join("manifest.tsv"), manifest)?;
    eprintln!("wrote {} corpora to {}", out.corpora.len(), a.out_dir.display());
    Ok(())
}

fn build_vocab_cmd(a: &BuildVocabArgs) -> Result<()> {
    let targets: Vec<&str> = a.targets.iter().map(String::as_str).collect();
    let vocab = build_vocab(&a.inputs, a.max_size, &targets)?;
    vocab.save(&a.out)?;
    eprintln!("vocabulary of {} tokens ({} reserved)", vocab.len(), vocab.reserved());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let vocab = Vocab::load(&a.vocab)?;
    let corpora = read_manifest(&a.manifest)?
        .into_iter()
        .map(|(pair, path)| load_parallel(&path, pair, &vocab))
        .collect::<pseudofam::Result<Vec<_>>>()?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        num_heads: a.heads,
        max_len: a.max_len,
        seed: a.seed,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..Default::default()
        },
        seed: a.seed,
    };
    eprintln!("[config] model {model:?}");
    eprintln!("[config] train {cfg:?}");
    let init = init_model(&model)?;
    let (params, _) = train_with_log(&init, &corpora, &cfg, |epoch, loss| {
        eprintln!("epoch {epoch}: mean loss {loss:.6}");
    })?;
    save_checkpoint(&params, &a.out)?;
    eprintln!("checkpoint {} hash {}", a.out.display(), params.content_hash());
    Ok(())
}

fn estimate_cmd(a: &EstimateArgs) -> Result<()> {
    let params = load_checkpoint(&a.model)?;
    let vocab = Vocab::load(&a.vocab)?;
    let jobs: Vec<(LangPairId, PathBuf, PathBuf)> = match (&a.corpus, &a.manifest) {
        (Some(corpus), None) => vec![(
            a.pair.clone().expect("clap requires --pair"),
            corpus.clone(),
            a.out.clone().expect("clap requires --out"),
        )],
        (None, Some(manifest)) => {
            let dir = a.out_dir.as_ref().expect("clap requires --out-dir");
            std::fs::create_dir_all(dir)?;
            read_manifest(manifest)?
                .into_iter()
                .map(|(pair, path)| {
                    let out = dir.join(format!("{pair}.fim"));
                    (pair, path, out)
                })
                .collect()
        }
        _ => bail!("give either --corpus/--pair/--out or --manifest/--out-dir"),
    };
    let corpora = jobs
        .iter()
        .map(|(pair, path, _)| load_parallel(path, pair.clone(), &vocab))
        .collect::<pseudofam::Result<Vec<_>>>()?;
    let fims = estimate_fims(&params, &corpora, a.batch_size, a.seed, a.jobs)?;
    for (fim, (_, _, out)) in fims.iter().zip(&jobs) {
        fim.save(out)?;
        eprintln!("{} -> {} ({} batches)", fim.pair(), out.display(), fim.num_batches());
    }
    Ok(())
}

fn similarity_cmd(a: &SimilarityArgs) -> Result<()> {
    let sections = SectionId::parse_filter(&a.sections)?;
    let model = a.model.as_ref().map(load_checkpoint).transpose()?;
    let fims = a
        .fims
        .iter()
        .map(|p| {
            let f = FimVector::load(p)?;
            if let Some(m) = &model {
                f.check_model(m)?;
            }
            Ok(f)
        })
        .collect::<pseudofam::Result<Vec<_>>>()?;
    let m = similarity_matrix(&fims, a.method.into(), a.k, &sections)?;
    match &a.out {
        Some(p) => m.save(p)?,
        None => print!("{}", m.to_csv()),
    }
    Ok(())
}

fn select_cmd(a: &SelectArgs) -> Result<()> {
    let m = SimilarityMatrix::load(&a.matrix, a.method.into())?;
    let rule = match a.init {
        InitArg::FirstTwo => InitRule::FirstTwo,
        InitArg::FirstOnly => InitRule::FirstOnly,
    };
    let (_, record) = family_for(&m, &a.target, rule)?;
    write_out(a.out.as_deref(), &record.to_json())
}

fn data_sim_cmd(a: &DataSimArgs) -> Result<()> {
    let params = load_checkpoint(&a.model)?;
    let vocab = Vocab::load(&a.vocab)?;
    let aux = load_parallel(&a.aux, a.aux_pair.clone(), &vocab)?;
    let target = load_parallel(&a.target, a.target_pair.clone(), &vocab)?;
    let cfg = DataSimConfig {
        sample_frac: a.frac,
        top_n: a.top_n,
        seed: a.seed,
    };
    let r = data_similarity(&aux, &target, &params, &cfg)?;
    println!("score = {:?}", r.score);
    println!("aux_sample = {}", r.aux_sample.len());
    println!("target_sample = {}", r.target_sample.len());
    println!("top_n = {}", r.top_n);
    if let Some(p) = &a.dump {
        std::fs::write(p, r.to_csv())?;
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let reports = a
        .fims
        .iter()
        .map(|p| fim_distribution_report(&FimVector::load(p)?, a.k))
        .collect::<pseudofam::Result<Vec<_>>>()?;
    write_out(a.out.as_deref(), &report_csv(&reports))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::BuildVocab(a) => build_vocab_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::EstimateFim(a) => estimate_cmd(a),
        Command::Similarity(a) => similarity_cmd(a),
        Command::SelectFamily(a) => select_cmd(a),
        Command::DataSim(a) => data_sim_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    eprintln!("[config] {:?}", cli.command);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
