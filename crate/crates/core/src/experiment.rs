//! End-to-end experiment pipeline: retriever training, indexing, parser
//! (meta-)training, prediction and scoring, with every stage seeded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_dataset, Example, SyntheticGrammar, SyntheticTaskConfig, Vocab,
    AMBIGUOUS_TAG,
};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::grammar::{Action, Grammar};
use crate::metalearn::{adapted_predict, meta_train, train_plain, MetaConfig, TrainConfig};
use crate::numerics::ModelParams;
use crate::parser::{parser_vocab, ParseResult, ParseStatus, Parser, ParserConfig};
use crate::retriever::{
    retriever_vocab, train_retriever, DistanceMode, RetrievalIndex, Retriever, RetrieverConfig,
    RetrieverTrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    S2a,
    S2aMaml,
    S2aMamlNoFinetune,
    RetrievalOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::S2a,
        Mode::S2aMaml,
        Mode::S2aMamlNoFinetune,
        Mode::RetrievalOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::S2a => "s2a",
            Mode::S2aMaml => "s2a+maml",
            Mode::S2aMamlNoFinetune => "s2a+maml-nofinetune",
            Mode::RetrievalOnly => "retrieval-only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Flat experiment configuration; every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: String,
    pub seed: u64,
    /// Dataset file; when absent a synthetic dataset is generated.
    pub dataset: Option<PathBuf>,
    /// Separate test file; otherwise the last `test_size` examples are held out.
    pub test_dataset: Option<PathBuf>,
    pub synthetic_grammar: String,
    pub train_size: usize,
    pub test_size: usize,
    pub ambiguity: f64,
    pub context_patterns: usize,

    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub latent_dim: usize,
    pub kappa: f64,
    pub decoder_layers: usize,
    pub retriever_epochs: usize,
    pub retriever_lr: f64,
    pub retriever_batch: usize,
    pub dev_fraction: f64,
    pub patience: usize,

    pub action_dim: usize,
    pub symbol_dim: usize,
    pub parser_hidden_dim: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,

    pub alpha: f64,
    pub beta: f64,
    pub k: usize,
    pub test_batch: usize,
    pub inner_steps: usize,
    pub meta_epochs: usize,
    /// Start meta-training from the plainly trained parser instead of fresh weights.
    pub meta_warm_start: bool,
    pub max_actions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: "s2a+maml".into(),
            seed: 0,
            dataset: None,
            test_dataset: None,
            synthetic_grammar: "java".into(),
            train_size: 500,
            test_size: 100,
            ambiguity: 0.5,
            context_patterns: 8,
            embedding_dim: 64,
            hidden_dim: 64,
            layers: 1,
            dropout: 0.5,
            latent_dim: 32,
            kappa: 50.0,
            decoder_layers: 4,
            retriever_epochs: 20,
            retriever_lr: 0.005,
            retriever_batch: 10,
            dev_fraction: 0.1,
            patience: 3,
            action_dim: 32,
            symbol_dim: 16,
            parser_hidden_dim: 64,
            lr: 0.005,
            batch: 10,
            epochs: 20,
            alpha: 0.001,
            beta: 0.0002,
            k: 4,
            test_batch: 10,
            inner_steps: 1,
            meta_epochs: 5,
            meta_warm_start: true,
            max_actions: crate::parser::DEFAULT_MAX_ACTIONS,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.mode()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.test_dataset]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.parse()
    }

    pub fn retriever_config(&self) -> RetrieverConfig {
        RetrieverConfig {
            word_dim: self.embedding_dim,
            hidden: self.hidden_dim,
            encoder_layers: self.layers,
            latent: self.latent_dim,
            kappa: self.kappa,
            decoder_layers: self.decoder_layers,
            decoder_hidden: self.hidden_dim,
            dropout: self.dropout,
        }
    }

    pub fn retriever_train_config(&self) -> RetrieverTrainConfig {
        RetrieverTrainConfig {
            epochs: self.retriever_epochs,
            lr: self.retriever_lr,
            batch_size: self.retriever_batch,
            dev_fraction: self.dev_fraction,
            patience: self.patience,
        }
    }

    pub fn parser_config(&self) -> ParserConfig {
        ParserConfig {
            word_dim: self.embedding_dim,
            encoder_hidden: self.hidden_dim,
            encoder_layers: self.layers,
            action_dim: self.action_dim,
            symbol_dim: self.symbol_dim,
            decoder_hidden: self.parser_hidden_dim,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch,
        }
    }

    pub fn meta_config(&self) -> MetaConfig {
        MetaConfig {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
            test_batch: self.test_batch,
            inner_steps: self.inner_steps,
            epochs: self.meta_epochs,
        }
    }
}

/// Support lists (indices into `train`) for every training example, read
/// off an index built over `train` itself.
pub fn training_supports(
    index: &RetrievalIndex,
    train: &[Example],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    let pos: HashMap<usize, usize> = train.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    train
        .iter()
        .map(|ex| {
            let row = index
                .ids()
                .iter()
                .position(|&id| id == ex.id)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("example {} is not indexed", ex.id))
                })?;
            let hits = index.query(&index.code(row), k, Some(ex.id), DistanceMode::ContextAware)?;
            hits.iter()
                .map(|(id, _)| {
                    pos.get(id).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "indexed example {id} is not in the training set"
                        ))
                    })
                })
                .collect()
        })
        .collect()
}

/// The `k` nearest indexed examples of `query`, excluding the query itself.
pub fn nearest(
    retriever: &Retriever,
    params: &ModelParams,
    index: &RetrievalIndex,
    query: &Example,
    k: usize,
    mode: DistanceMode,
) -> Result<Vec<(usize, f64)>> {
    let code = retriever.latent_code(params, query)?;
    let exclude = index.contains(query.id).then_some(query.id);
    index.query(&code, k, exclude, mode)
}

/// Seeded generator for one pipeline stage.
pub fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// Tags an error with the pipeline stage it came from, keeping the
/// innermost stage when one is already attached.
fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// Ids of examples tagged as context dependent.
pub fn ambiguous_ids(examples: &[Example]) -> Vec<usize> {
    examples
        .iter()
        .filter(|e| e.tags.iter().any(|t| t == AMBIGUOUS_TAG))
        .map(|e| e.id)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: usize,
    pub status: ParseStatus,
    pub actions: Vec<Action>,
    pub tokens: Vec<String>,
}

impl Prediction {
    fn from_parse(id: usize, r: ParseResult) -> Self {
        Self {
            id,
            status: r.status,
            actions: r.actions,
            tokens: r.tokens,
        }
    }
}

/// One line per prediction: id, status, action codes, surface tokens.
pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        let acts: Vec<String> = p.actions.iter().map(Action::to_string).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.id,
            p.status.as_str(),
            acts.join(" "),
            p.tokens.join(" ")
        )
        .unwrap();
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = |what: &str| Error::Dataset(format!("predictions line {}: {what}", n + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected id, status, actions, tokens"));
            }
            let id = fields[0].parse().map_err(|_| bad("bad id"))?;
            let status = match fields[1] {
                "ok" => ParseStatus::Ok,
                "failed" => ParseStatus::Failed,
                other => return Err(bad(&format!("unknown status `{other}`"))),
            };
            let actions = fields[2]
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<Vec<Action>>>()?;
            let tokens = fields[3].split_whitespace().map(str::to_string).collect();
            Ok(Prediction {
                id,
                status,
                actions,
                tokens,
            })
        })
        .collect()
}

/// Writes `report.txt` and the structured `report.json` summary.
pub fn write_report(out: &Path, report: &EvalReport, mode: Option<Mode>) -> Result<()> {
    ensure_dir(out)?;
    write(&out.join("report.txt"), report.to_text())?;
    let summary = serde_json::json!({
        "mode": mode.map(Mode::as_str),
        "exact_match": report.exact_match,
        "bleu": report.bleu,
        "failures": report.failures,
        "examples": report.rows.len(),
    });
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
}

pub fn score(preds: &[Prediction], gold: &[Example]) -> Result<EvalReport> {
    let by_id: HashMap<usize, &Example> = gold.iter().map(|e| (e.id, e)).collect();
    let items = preds
        .iter()
        .map(|p| {
            let g = by_id
                .get(&p.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no gold example {}", p.id)))?;
            Ok((
                p.id,
                p.status.as_str().to_string(),
                p.tokens.clone(),
                g.surface.clone(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(&items)
}

pub struct TrainedRetriever {
    pub model: Retriever,
    pub params: ModelParams,
    pub index: RetrievalIndex,
}

pub struct TrainedParser {
    pub model: Parser,
    pub params: ModelParams,
}

/// Lazily computed pipeline stages shared by all modes of one configuration.
pub struct Session {
    pub config: ExperimentConfig,
    pub grammar: Grammar,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    retriever: Option<TrainedRetriever>,
    plain: Option<TrainedParser>,
    meta: Option<ModelParams>,
    /// Free-form training log lines.
    pub log: Vec<String>,
}

impl Session {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let (grammar, train, test) = stage("load-data", load_data(&config))?;
        Ok(Self {
            config,
            grammar,
            train,
            test,
            retriever: None,
            plain: None,
            meta: None,
            log: Vec::new(),
        })
    }

    pub fn retriever(&mut self) -> Result<&TrainedRetriever> {
        if self.retriever.is_none() {
            let trained = self.fit_retriever()?;
            self.retriever = Some(trained);
        }
        Ok(self.retriever.as_ref().expect("trained above"))
    }

    fn fit_retriever(&mut self) -> Result<TrainedRetriever> {
        let mut rng = stage_rng(self.config.seed, 1);
        let vocab = retriever_vocab(&self.train);
        let (model, init) = stage(
            "train-retriever",
            Retriever::new(vocab, self.config.retriever_config(), &mut rng),
        )?;
        let log = &mut self.log;
        let (params, _) = stage(
            "train-retriever",
            train_retriever(
                &model,
                init,
                &self.train,
                &self.config.retriever_train_config(),
                &mut rng,
                &mut |s| {
                    log.push(format!(
                        "retriever epoch={} train_token_nll={:.6} dev_token_nll={}",
                        s.epoch,
                        s.train_token_nll,
                        s.dev_token_nll
                            .map(|d| format!("{d:.6}"))
                            .unwrap_or_else(|| "-".into())
                    ))
                },
            ),
        )?;
        let index = stage(
            "build-index",
            RetrievalIndex::build(&model, &params, &self.train),
        )?;
        Ok(TrainedRetriever {
            model,
            params,
            index,
        })
    }

    pub fn plain_parser(&mut self) -> Result<&TrainedParser> {
        if self.plain.is_none() {
            let trained = stage("train-parser", self.fit_plain())?;
            self.plain = Some(trained);
        }
        Ok(self.plain.as_ref().expect("trained above"))
    }

    fn fresh_parser(&self) -> Result<(Parser, ModelParams)> {
        let mut rng = stage_rng(self.config.seed, 2);
        let vocab = parser_vocab(&self.grammar, &self.train);
        Parser::new(
            self.grammar.clone(),
            vocab,
            self.config.parser_config(),
            &mut rng,
        )
    }

    fn fit_plain(&mut self) -> Result<TrainedParser> {
        let (model, init) = self.fresh_parser()?;
        let mut rng = stage_rng(self.config.seed, 3);
        let log = &mut self.log;
        let params = train_plain(
            &model,
            init,
            &self.train,
            &self.config.train_config(),
            &mut rng,
            &mut |e| log.push(format!("parser {e}")),
        )?;
        Ok(TrainedParser { model, params })
    }

    pub fn training_supports(&mut self) -> Result<Vec<Vec<usize>>> {
        let k = self.config.k;
        self.retriever()?;
        let index = &self.retriever.as_ref().expect("trained above").index;
        training_supports(index, &self.train, k)
    }

    pub fn meta_params(&mut self) -> Result<&ModelParams> {
        if self.meta.is_none() {
            let supports = self.training_supports()?;
            let params = stage("meta-train", self.fit_meta(&supports))?;
            self.meta = Some(params);
        }
        Ok(self.meta.as_ref().expect("trained above"))
    }

    fn fit_meta(&mut self, supports: &[Vec<usize>]) -> Result<ModelParams> {
        let init = if self.config.meta_warm_start {
            self.plain_parser()?.params.clone()
        } else {
            self.fresh_parser()?.1
        };
        let model = self.plain_parser()?.model.clone();
        let mut rng = stage_rng(self.config.seed, 4);
        let log = &mut self.log;
        meta_train(
            &model,
            init,
            &self.train,
            supports,
            &self.config.meta_config(),
            &mut rng,
            &mut |e| log.push(format!("meta {e}")),
        )
    }

    /// Nearest training examples of a query (self excluded when indexed).
    pub fn neighbors(
        &mut self,
        query: &Example,
        k: usize,
        mode: DistanceMode,
    ) -> Result<Vec<usize>> {
        let r = self.retriever()?;
        let hits = nearest(&r.model, &r.params, &r.index, query, k, mode)?;
        Ok(hits.into_iter().map(|(id, _)| id).collect())
    }

    fn train_example(&self, id: usize) -> &Example {
        self.train
            .iter()
            .find(|e| e.id == id)
            .expect("index is built over the training set")
    }

    /// Share of the test examples in `ids` whose nearest training example
    /// has the same gold output pattern.
    pub fn retrieval_accuracy(&mut self, ids: &[usize], mode: DistanceMode) -> Result<f64> {
        let queries: Vec<Example> = self
            .test
            .iter()
            .filter(|e| ids.contains(&e.id))
            .cloned()
            .collect();
        if queries.is_empty() {
            return Err(Error::Empty("query set"));
        }
        let mut hits = 0;
        for q in &queries {
            let nn = self.neighbors(q, 1, mode)?;
            if self.train_example(nn[0]).output_pattern() == q.output_pattern() {
                hits += 1;
            }
        }
        Ok(hits as f64 / queries.len() as f64)
    }

    pub fn predict(&mut self, mode: Mode) -> Result<Vec<Prediction>> {
        let max = self.config.max_actions;
        let test = self.test.clone();
        let mut out = Vec::with_capacity(test.len());
        match mode {
            Mode::S2a => {
                let p = self.plain_parser()?;
                for q in &test {
                    out.push(Prediction::from_parse(
                        q.id,
                        p.model.parse_greedy(&p.params, q, max)?,
                    ));
                }
            }
            Mode::S2aMamlNoFinetune => {
                let theta = self.meta_params()?.clone();
                let p = self.plain_parser()?;
                for q in &test {
                    out.push(Prediction::from_parse(
                        q.id,
                        p.model.parse_greedy(&theta, q, max)?,
                    ));
                }
            }
            Mode::S2aMaml => {
                let theta = self.meta_params()?.clone();
                let cfg = self.config.meta_config();
                let model = self.plain_parser()?.model.clone();
                for q in &test {
                    let ids = self.neighbors(q, cfg.k, DistanceMode::ContextAware)?;
                    let supports: Vec<&Example> =
                        ids.iter().map(|&i| self.train_example(i)).collect();
                    let r = adapted_predict(&model, &theta, q, &supports, &cfg, true, max)?;
                    out.push(Prediction::from_parse(q.id, r));
                }
            }
            Mode::RetrievalOnly => {
                for q in &test {
                    let nn = self.neighbors(q, 1, DistanceMode::ContextAware)?;
                    let n = self.train_example(nn[0]);
                    out.push(Prediction {
                        id: q.id,
                        status: ParseStatus::Ok,
                        actions: n.actions.clone(),
                        tokens: n.surface.clone(),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Writes checkpoints and the index for whatever stages have run.
    pub fn save_models(&self, out: &Path) -> Result<()> {
        if let Some(r) = &self.retriever {
            save_retriever(&out.join("retriever"), &r.model, &r.params)?;
            r.index.save(&out.join("index"))?;
        }
        if let Some(p) = &self.plain {
            save_parser(&out.join("parser"), &p.model, &p.params)?;
        }
        if let (Some(p), Some(meta)) = (&self.plain, &self.meta) {
            save_parser(&out.join("parser-meta"), &p.model, meta)?;
        }
        Ok(())
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Grammar, Vec<Example>, Vec<Example>)> {
    match (&cfg.dataset, &cfg.test_dataset) {
        (Some(train), Some(test)) => {
            let a = load_dataset(train)?;
            let b = load_dataset(test)?;
            Ok((a.grammar, a.examples, b.examples))
        }
        (Some(path), None) => {
            let d = load_dataset(path)?;
            split(d.grammar, d.examples, cfg.test_size)
        }
        (None, Some(_)) => Err(Error::Config("test_dataset given without dataset".into())),
        (None, None) => {
            let grammar: SyntheticGrammar = cfg.synthetic_grammar.parse()?;
            let examples = generate_synthetic(&SyntheticTaskConfig {
                grammar,
                context_patterns: cfg.context_patterns,
                examples: cfg.train_size + cfg.test_size,
                ambiguity: cfg.ambiguity,
                seed: cfg.seed,
            })?;
            split(grammar.grammar(), examples, cfg.test_size)
        }
    }
}

fn split(
    grammar: Grammar,
    mut examples: Vec<Example>,
    test: usize,
) -> Result<(Grammar, Vec<Example>, Vec<Example>)> {
    if test == 0 || test >= examples.len() {
        return Err(Error::Config(format!(
            "test_size {test} must be in 1..{}",
            examples.len()
        )));
    }
    let held = examples.split_off(examples.len() - test);
    Ok((grammar, examples, held))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn save_retriever(dir: &Path, model: &Retriever, params: &ModelParams) -> Result<()> {
    ensure_dir(dir)?;
    let cfg = serde_json::to_string_pretty(&model.config).expect("config serializes");
    write(&dir.join("config.json"), cfg)?;
    model.vocab.save(&dir.join("vocab.txt"))?;
    params.save(&dir.join("params"))
}

pub fn load_retriever(dir: &Path) -> Result<(Retriever, ModelParams)> {
    let config: RetrieverConfig = read_json(&dir.join("config.json"))?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let params = ModelParams::load(&dir.join("params"))?;
    Ok((Retriever::with_params(vocab, config, &params)?, params))
}

pub fn save_parser(dir: &Path, model: &Parser, params: &ModelParams) -> Result<()> {
    ensure_dir(dir)?;
    let cfg = serde_json::to_string_pretty(&model.config).expect("config serializes");
    write(&dir.join("config.json"), cfg)?;
    write(&dir.join("grammar.txt"), model.grammar.source())?;
    model.vocab.save(&dir.join("vocab.txt"))?;
    params.save(&dir.join("params"))
}

pub fn load_parser(dir: &Path) -> Result<(Parser, ModelParams)> {
    let config: ParserConfig = read_json(&dir.join("config.json"))?;
    let grammar = Grammar::from_file(&dir.join("grammar.txt"))?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let params = ModelParams::load(&dir.join("params"))?;
    Ok((
        Parser::with_params(grammar, vocab, config, &params)?,
        params,
    ))
}

/// Runs the configured mode end to end and writes its artifacts to `out`:
/// checkpoints, index, `predictions.tsv`, `report.txt`, `report.json` and
/// `train.log`.
pub fn run_experiment(config: ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let mode = config.mode()?;
    ensure_dir(out)?;
    let mut session = Session::new(config)?;
    let preds = stage("predict", session.predict(mode))?;
    let report = stage("evaluate", score(&preds, &session.test))?;
    session.save_models(out)?;
    write(&out.join("predictions.tsv"), format_predictions(&preds))?;
    write_report(out, &report, Some(mode))?;
    let mut log = session.log.join("\n");
    log.push('\n');
    write(&out.join("train.log"), log)?;
    Ok(report)
}
