//! End-to-end run on a synthetic phylogeny: generate, tokenize, pretrain,
//! estimate one FIM per leaf, and score every pair.

use crate::corpus::{build_vocab_from_lines, synth_generate, ParallelCorpus, PhyloSpec, SynthCorpora, Vocab};
use crate::error::Result;
use crate::fim::{estimate_fims, FimVector, DEFAULT_K};
use crate::model::{init_model, ModelConfig, ParamStore, SectionId};
use crate::similarity::{similarity_matrix, Method, SimilarityMatrix};
use crate::trainer::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub phylogeny: PhyloSpec,
    pub max_vocab: usize,
    /// `vocab_size` is replaced by the built vocabulary's size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fim_batch_size: usize,
    pub fim_seed: u64,
    pub method: Method,
    pub k_fraction: f64,
    pub sections: Vec<SectionId>,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(phylogeny: PhyloSpec) -> Self {
        let seed = phylogeny.seed;
        Self {
            phylogeny,
            max_vocab: 200,
            model: ModelConfig {
                seed,
                ..Default::default()
            },
            train: TrainConfig {
                seed,
                ..Default::default()
            },
            fim_batch_size: 16,
            fim_seed: seed,
            method: Method::Overlap,
            k_fraction: DEFAULT_K,
            sections: SectionId::FFN.to_vec(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub synth: SynthCorpora,
    pub vocab: Vocab,
    pub corpora: Vec<ParallelCorpus>,
    pub params: ParamStore,
    pub train_report: TrainReport,
    pub fims: Vec<FimVector>,
    pub matrix: SimilarityMatrix,
}

pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let synth = synth_generate(&cfg.phylogeny)?;
    let tsv: Vec<String> = synth.corpora.values().map(|c| c.to_tsv()).collect();
    let vocab = build_vocab_from_lines(
        tsv.iter().flat_map(|t| t.lines()),
        cfg.max_vocab,
        &[cfg.phylogeny.target.as_str()],
    )?;
    let corpora = synth
        .corpora
        .values()
        .map(|c| c.tokenize(&vocab))
        .collect::<Result<Vec<_>>>()?;
    let model = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model
    };
    let init = init_model(&model)?;
    let (params, train_report) = train(&init, &corpora, &cfg.train)?;
    let fims = estimate_fims(&params, &corpora, cfg.fim_batch_size, cfg.fim_seed, cfg.jobs)?;
    let matrix = similarity_matrix(&fims, cfg.method, cfg.k_fraction, &cfg.sections)?;
    Ok(ExperimentOutput {
        synth,
        vocab,
        corpora,
        params,
        train_report,
        fims,
        matrix,
    })
}
