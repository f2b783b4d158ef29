use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser as ClapParser, Subcommand, ValueEnum};
use ctxparse::data::{
    generate_synthetic, load_dataset, save_dataset, Example, SyntheticGrammar, SyntheticTaskConfig,
};
use ctxparse::experiment::{
    ensure_dir, format_predictions, load_parser, load_retriever, nearest, parse_predictions,
    run_experiment, save_parser, save_retriever, score, stage_rng, training_supports, write_report,
    ExperimentConfig, Prediction,
};
use ctxparse::metalearn::{adapted_predict, meta_train, train_plain};
use ctxparse::parser::{parser_vocab, Parser};
use ctxparse::retriever::{
    retriever_vocab, train_retriever, DistanceMode, RetrievalIndex, Retriever,
};
use ctxparse::{Error, Result};

#[derive(ClapParser)]
#[command(
    name = "ctxparse",
    version,
    about = "Context-dependent semantic parsing toolkit"
)]
struct Cli {
    /// Hyperparameter file (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distance {
    Context,
    Utterance,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its grammar file into the output directory.
    GenSynthetic {
        #[arg(long)]
        grammar: Option<String>,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        ambiguity: Option<f64>,
        #[arg(long)]
        context_patterns: Option<usize>,
    },
    /// Train the context-aware retriever; writes `<out>/retriever`.
    TrainRetriever {
        #[arg(long)]
        data: PathBuf,
    },
    /// Encode a dataset into a retrieval index; writes `<out>/index.*`.
    BuildIndex {
        #[arg(long)]
        retriever: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the nearest indexed examples of one example.
    Retrieve {
        #[arg(long)]
        retriever: PathBuf,
        /// Index path stem (without extension).
        #[arg(long)]
        index: PathBuf,
        /// Dataset holding the query example.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, value_enum, default_value = "context")]
        distance: Distance,
    },
    /// Train the parser without meta-learning; writes `<out>/parser`.
    TrainParser {
        #[arg(long)]
        data: PathBuf,
    },
    /// Meta-train the parser on retrieved pseudo-tasks; writes `<out>/parser-meta`.
    MetaTrain {
        #[arg(long)]
        data: PathBuf,
        /// Index built over `--data`.
        #[arg(long)]
        index: PathBuf,
        /// Parser checkpoint to start from instead of fresh weights.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Parse every example of a dataset; writes `<out>/predictions.tsv`.
    Predict {
        #[arg(long)]
        parser: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Retriever for test-time adaptation (needs `--index` and `--train`).
        #[arg(long, requires_all = ["index", "train"])]
        retriever: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Dataset the index was built over.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Skip the adaptation step even when a retriever is given.
        #[arg(long)]
        no_finetune: bool,
    },
    /// Score a predictions file; writes `<out>/report.txt` and `<out>/report.json`.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full pipeline described by `--config`.
    RunExperiment,
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_epoch(line: impl std::fmt::Display) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenSynthetic {
            grammar,
            examples,
            ambiguity,
            context_patterns,
        } => {
            let grammar: SyntheticGrammar = grammar
                .as_deref()
                .unwrap_or(&cfg.synthetic_grammar)
                .parse()?;
            let task = SyntheticTaskConfig {
                grammar,
                context_patterns: context_patterns.unwrap_or(cfg.context_patterns),
                examples: examples.unwrap_or(cfg.train_size + cfg.test_size),
                ambiguity: ambiguity.unwrap_or(cfg.ambiguity),
                seed: cfg.seed,
            };
            let generated = generate_synthetic(&task)?;
            ensure_dir(out)?;
            let grammar_path = out.join(grammar.file_name());
            std::fs::write(&grammar_path, grammar.text())
                .map_err(|e| io_error(&grammar_path, e))?;
            let path = out.join("dataset.jsonl");
            save_dataset(&path, grammar.file_name(), &generated)?;
            println!("{}\t{} examples", path.display(), generated.len());
        }
        Command::TrainRetriever { data } => {
            let dataset = load_dataset(&data)?;
            let mut rng = stage_rng(cfg.seed, 1);
            let (model, init) = Retriever::new(
                retriever_vocab(&dataset.examples),
                cfg.retriever_config(),
                &mut rng,
            )?;
            let (params, _) = train_retriever(
                &model,
                init,
                &dataset.examples,
                &cfg.retriever_train_config(),
                &mut rng,
                &mut |s| {
                    print_epoch(format_args!(
                        "epoch={}\ttrain_token_nll={:.6}\tdev_token_nll={}",
                        s.epoch,
                        s.train_token_nll,
                        s.dev_token_nll.map_or("-".into(), |d| format!("{d:.6}"))
                    ))
                },
            )?;
            save_retriever(&out.join("retriever"), &model, &params)?;
        }
        Command::BuildIndex { retriever, data } => {
            let (model, params) = load_retriever(&retriever)?;
            let dataset = load_dataset(&data)?;
            let index = RetrievalIndex::build(&model, &params, &dataset.examples)?;
            ensure_dir(out)?;
            index.save(&out.join("index"))?;
            println!("indexed {} examples", index.len());
        }
        Command::Retrieve {
            retriever,
            index,
            data,
            id,
            k,
            distance,
        } => {
            let (model, params) = load_retriever(&retriever)?;
            let index = RetrievalIndex::load(&index)?;
            let dataset = load_dataset(&data)?;
            let query = dataset
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no example with id {id}")))?;
            let mode = match distance {
                Distance::Context => DistanceMode::ContextAware,
                Distance::Utterance => DistanceMode::UtteranceOnly,
            };
            for (rank, (hit, dist)) in nearest(&model, &params, &index, query, k, mode)?
                .into_iter()
                .enumerate()
            {
                println!("{}\t{hit}\t{dist:.6}", rank + 1);
            }
        }
        Command::TrainParser { data } => {
            let dataset = load_dataset(&data)?;
            let (model, init) = fresh_parser(&cfg, &dataset.grammar, &dataset.examples)?;
            let mut rng = stage_rng(cfg.seed, 3);
            let params = train_plain(
                &model,
                init,
                &dataset.examples,
                &cfg.train_config(),
                &mut rng,
                &mut |e| print_epoch(e),
            )?;
            save_parser(&out.join("parser"), &model, &params)?;
        }
        Command::MetaTrain { data, index, init } => {
            let dataset = load_dataset(&data)?;
            let index = RetrievalIndex::load(&index)?;
            let supports = training_supports(&index, &dataset.examples, cfg.k)?;
            let (model, theta) = match init {
                Some(dir) => load_parser(&dir)?,
                None => fresh_parser(&cfg, &dataset.grammar, &dataset.examples)?,
            };
            let mut rng = stage_rng(cfg.seed, 4);
            let params = meta_train(
                &model,
                theta,
                &dataset.examples,
                &supports,
                &cfg.meta_config(),
                &mut rng,
                &mut |e| print_epoch(e),
            )?;
            save_parser(&out.join("parser-meta"), &model, &params)?;
        }
        Command::Predict {
            parser,
            data,
            retriever,
            index,
            train,
            no_finetune,
        } => {
            let (model, theta) = load_parser(&parser)?;
            let dataset = load_dataset(&data)?;
            let adapt = match (retriever, index, train) {
                (Some(r), Some(i), Some(t)) => Some((
                    load_retriever(&r)?,
                    RetrievalIndex::load(&i)?,
                    load_dataset(&t)?,
                )),
                _ => None,
            };
            let meta = cfg.meta_config();
            let mut preds = Vec::with_capacity(dataset.examples.len());
            for query in &dataset.examples {
                let supports: Vec<&Example> = match &adapt {
                    Some(((r, rp), index, train)) => {
                        nearest(r, rp, index, query, meta.k, DistanceMode::ContextAware)?
                            .into_iter()
                            .map(|(id, _)| {
                                train.get(id).ok_or_else(|| {
                                    Error::InvalidArgument(format!(
                                        "indexed example {id} is missing from --train"
                                    ))
                                })
                            })
                            .collect::<Result<_>>()?
                    }
                    None => Vec::new(),
                };
                let r = adapted_predict(
                    &model,
                    &theta,
                    query,
                    &supports,
                    &meta,
                    !no_finetune,
                    cfg.max_actions,
                )?;
                preds.push(Prediction {
                    id: query.id,
                    status: r.status,
                    actions: r.actions,
                    tokens: r.tokens,
                });
            }
            ensure_dir(out)?;
            let path = out.join("predictions.tsv");
            std::fs::write(&path, format_predictions(&preds)).map_err(|e| io_error(&path, e))?;
        }
        Command::Evaluate { predictions, data } => {
            let text =
                std::fs::read_to_string(&predictions).map_err(|e| io_error(&predictions, e))?;
            let preds = parse_predictions(&text)?;
            let dataset = load_dataset(&data)?;
            let report = score(&preds, &dataset.examples)?;
            write_report(out, &report, None)?;
            println!(
                "exact_match={:.2}\tbleu={:.2}\tfailures={}",
                report.exact_match, report.bleu, report.failures
            );
        }
        Command::RunExperiment => {
            if cli.config.is_none() {
                return Err(Error::Config("run-experiment needs --config".into()));
            }
            let mode = cfg.mode.clone();
            let report = run_experiment(cfg, out)?;
            println!(
                "mode={mode}\texact_match={:.2}\tbleu={:.2}\tfailures={}",
                report.exact_match, report.bleu, report.failures
            );
        }
    }
    Ok(())
}

fn fresh_parser(
    cfg: &ExperimentConfig,
    grammar: &ctxparse::grammar::Grammar,
    examples: &[Example],
) -> Result<(Parser, ctxparse::numerics::ModelParams)> {
    let mut rng = stage_rng(cfg.seed, 2);
    Parser::new(
        grammar.clone(),
        parser_vocab(grammar, examples),
        cfg.parser_config(),
        &mut rng,
    )
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
