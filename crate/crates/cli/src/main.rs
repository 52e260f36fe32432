use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hpt_core::encoders::{load_checkpoint, save_checkpoint, EncoderConfig, TextEncoder};
use hpt_core::harness::{
    author_fixtures, corpus_from_fixtures, cross_dataset_eval, default_shifts, domain_gen_eval,
    evaluate, gradient_suite, make_splits, run_ablation, synthetic_corpus, train_all_classes,
    train_base, AblationSuite, DatasetSpec, SplitSpec, SyntheticDataset, DEFAULT_SHOTS,
};
use hpt_core::knowledge::{
    generate_corpus, validate_corpus, DescriptionCorpus, FixtureStore, KnowledgeConfig,
    LiveBackend, LlmClient,
};
use hpt_core::training::{trace_to_jsonl, HptModel, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "hpt",
    version,
    about = "Hierarchical prompt tuning on synthetic vision-language data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record the synthetic author's answers for a dataset as a fixture file.
    SynthFixtures {
        #[arg(long, default_value = "toy8")]
        dataset: String,
        #[arg(long, default_value_t = 5)]
        n_h: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the description pipeline and write a validated corpus.
    GenerateKnowledge {
        #[arg(long, default_value = "toy8")]
        dataset: String,
        /// Replay answers from this fixture file.
        #[arg(long, conflicts_with = "live")]
        fixtures: Option<PathBuf>,
        /// Query an OpenAI-compatible endpoint (HPT_LLM_API_KEY, HPT_LLM_ENDPOINT, HPT_LLM_MODEL).
        #[arg(long)]
        live: bool,
        /// Where to store the answers of a live run.
        #[arg(long, requires = "live")]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n_h: usize,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train prompts and save a checkpoint.
    Train {
        #[arg(long, default_value = "toy8")]
        dataset: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus file; generated from the synthetic author when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// base2new trains on the base half; all trains on every class.
        #[arg(long, value_enum, default_value_t = TrainSplit::Base2new)]
        split: TrainSplit,
        #[arg(long, default_value_t = DEFAULT_SHOTS)]
        shots: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-step loss trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under one protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Protocol::Base2new)]
        protocol: Protocol,
        /// Target datasets of the crossdata protocol.
        #[arg(long, value_delimiter = ',', default_value = "toy6,toy12")]
        targets: Vec<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run an ablation suite.
    Ablate {
        #[arg(long)]
        suite: AblationSuite,
        #[arg(long, default_value = "toy8")]
        dataset: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SHOTS)]
        shots: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Compare analytic and finite-difference gradients of every parameter group.
    CheckGrads {
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Show the final token's attention over a class description's words.
    DumpAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        description: usize,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum TrainSplit {
    Base2new,
    All,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Protocol {
    Base2new,
    Crossdata,
    Domaingen,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the HPT preset instead of HPT++ defaults.
    #[arg(long)]
    hpt: bool,
    /// Override one setting, e.g. `--set beta=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self, default: TrainConfig) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::parse(&read(path)?)?,
            None if self.hpt => TrainConfig::hpt(),
            None => default,
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("override {item:?} is not KEY=VALUE"))?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(clap::Args)]
struct OutputArgs {
    /// Also write the report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

impl OutputArgs {
    fn emit(&self, table: &str, json: &str) -> Result<()> {
        print!("{table}");
        if let Some(path) = &self.json {
            write(path, json)?;
        }
        Ok(())
    }
}

/// Everything needed to evaluate or inspect a trained model later.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    model: HptModel,
    dataset: DatasetSpec,
    corpus: DescriptionCorpus,
    split: TrainSplit,
    base2new: SplitSpec,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn world(name: &str, text: &TextEncoder) -> Result<SyntheticDataset> {
    Ok(SyntheticDataset::generate(
        DatasetSpec::builtin(name)?,
        text,
    )?)
}

fn corpus_for(
    path: Option<&Path>,
    dataset: &SyntheticDataset,
    text: &TextEncoder,
    n_h: usize,
) -> Result<DescriptionCorpus> {
    let corpus = match path {
        Some(p) => DescriptionCorpus::from_json(&read(p)?)?,
        None => synthetic_corpus(
            dataset,
            text,
            &KnowledgeConfig {
                n_h,
                ..KnowledgeConfig::default()
            },
        )?,
    };
    report_warnings(&corpus, text)?;
    Ok(corpus)
}

fn report_warnings(corpus: &DescriptionCorpus, text: &TextEncoder) -> Result<()> {
    for w in validate_corpus(corpus, &text.tokenizer())?.warnings {
        eprintln!(
            "warning: {} description {}: {:.0}% of graph words not found ({})",
            w.class,
            w.index,
            100.0 * w.miss_ratio,
            w.missing.join(", ")
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let encoder = EncoderConfig::default();
    match cli.command {
        Command::SynthFixtures { dataset, n_h, out } => {
            let text = TextEncoder::random(encoder)?;
            let ds = world(&dataset, &text)?;
            let config = KnowledgeConfig {
                n_h,
                ..KnowledgeConfig::default()
            };
            let store = author_fixtures(&ds, &text, &config)?;
            store.save(&out)?;
            println!("{} answers written to {}", store.len(), out.display());
        }
        Command::GenerateKnowledge {
            dataset,
            fixtures,
            live,
            record,
            n_h,
            workers,
            out,
        } => {
            let text = TextEncoder::random(encoder)?;
            let ds = world(&dataset, &text)?;
            let config = KnowledgeConfig {
                n_h,
                workers,
                ..KnowledgeConfig::default()
            };
            let corpus = if live {
                let backend = LiveBackend::from_env()?;
                let recorder =
                    std::sync::Arc::new(hpt_core::knowledge::RecordingBackend::new(backend));
                let client = LlmClient::new(Box::new(Shared(recorder.clone())));
                let corpus = generate_corpus(
                    &ds.spec.template(n_h)?,
                    &ds.class_names(),
                    &client,
                    &text,
                    &config,
                )?;
                drop(client);
                if let (Some(path), Some(recorder)) = (record, std::sync::Arc::into_inner(recorder))
                {
                    recorder.into_fixtures().save(&path)?;
                }
                corpus
            } else {
                let store = match fixtures {
                    Some(path) => FixtureStore::load(&path)?,
                    None => author_fixtures(&ds, &text, &config)?,
                };
                corpus_from_fixtures(&ds, store, &text, &config)?
            };
            report_warnings(&corpus, &text)?;
            corpus.save(&out)?;
            println!(
                "{} classes × {} descriptions written to {}",
                corpus.classes.len(),
                corpus.n_h,
                out.display()
            );
        }
        Command::Train {
            dataset,
            config,
            corpus,
            split,
            shots,
            out,
            trace,
        } => {
            let config = config.resolve(TrainConfig::default())?;
            let mut model = HptModel::new(encoder, config)?;
            let ds = world(&dataset, &model.text)?;
            let corpus = corpus_for(corpus.as_deref(), &ds, &model.text, model.config.n_h)?;
            let base2new = make_splits(&ds, model.config.seed, shots)?;
            let start = Instant::now();
            let records = match split {
                TrainSplit::Base2new => train_base(&mut model, &corpus, &ds, &base2new)?,
                TrainSplit::All => train_all_classes(&mut model, &corpus, &ds, shots)?,
            };
            let secs = start.elapsed().as_secs_f64();
            if let Some(path) = trace {
                write(&path, &trace_to_jsonl(&records))?;
            }
            if let Some(last) = records.last() {
                println!(
                    "{} steps in {secs:.2}s, final loss {:.4} (asymmetric {:.4}, consistency {:.4})",
                    records.len(),
                    last.total,
                    last.l_asy,
                    last.l_c
                );
            }
            print!("{}", model.config.to_config_text());
            save_checkpoint(
                &out,
                &Checkpoint {
                    model,
                    dataset: ds.spec,
                    corpus,
                    split,
                    base2new,
                },
            )?;
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            protocol,
            targets,
            output,
        } => {
            let ck: Checkpoint = load_checkpoint(&checkpoint)?;
            let ds = SyntheticDataset::generate(ck.dataset.clone(), &ck.model.text)?;
            let report = match protocol {
                Protocol::Base2new => {
                    if ck.split != TrainSplit::Base2new {
                        eprintln!("warning: checkpoint was trained on all classes; new-class accuracy is not held out");
                    }
                    evaluate(&ck.model, &ck.corpus, &ds, &ck.base2new)?
                }
                Protocol::Crossdata => {
                    let mut worlds = Vec::new();
                    for name in &targets {
                        let target = world(name, &ck.model.text)?;
                        let corpus =
                            corpus_for(None, &target, &ck.model.text, ck.model.config.n_h)?;
                        worlds.push((target, corpus));
                    }
                    let refs: Vec<_> = worlds.iter().map(|(d, c)| (d, c)).collect();
                    cross_dataset_eval(&ck.model, &ck.dataset.name, &refs)?
                }
                Protocol::Domaingen => {
                    let variants = default_shifts()
                        .into_iter()
                        .enumerate()
                        .map(|(i, (label, shift))| {
                            Ok((label, ds.shifted(shift, ck.model.config.seed + i as u64)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<_> = variants.iter().map(|(l, d)| (l.as_str(), d)).collect();
                    domain_gen_eval(&ck.model, &ck.corpus, &ds, &refs)?
                }
            };
            output.emit(&report.to_table(), &report.to_json()?)?;
        }
        Command::Ablate {
            suite,
            dataset,
            config,
            corpus,
            shots,
            output,
        } => {
            let base = config.resolve(suite.default_config())?;
            let text = TextEncoder::random(encoder.clone())?;
            let ds = world(&dataset, &text)?;
            let n_h = suite
                .variants(&base)
                .iter()
                .map(|(_, c)| c.n_h)
                .max()
                .unwrap_or(base.n_h);
            let corpus = corpus_for(corpus.as_deref(), &ds, &text, n_h)?;
            let split = make_splits(&ds, base.seed, shots)?;
            let report = run_ablation(suite, &base, &encoder, &corpus, &ds, &split)?;
            output.emit(&report.to_table(), &report.to_json()?)?;
        }
        Command::CheckGrads { output } => {
            let start = Instant::now();
            let report = gradient_suite()?;
            let table = format!(
                "{}{:.2}s\n",
                report.to_table(),
                start.elapsed().as_secs_f64()
            );
            output.emit(&table, &(serde_json::to_string_pretty(&report)? + "\n"))?;
            if !report.passed() {
                bail!("gradient check failed");
            }
        }
        Command::DumpAttn {
            checkpoint,
            class,
            layer,
            description,
            top_k,
        } => {
            let ck: Checkpoint = load_checkpoint(&checkpoint)?;
            let model = &ck.model;
            let ctx = model.class_context(ck.corpus.class(&class)?)?;
            if description >= ctx.n_h() {
                bail!("class {class:?} has {} descriptions", ctx.n_h());
            }
            let desc = &ctx.descriptions[description];
            let dump = model.text.dump_attention_scores(
                &desc.seq,
                &model.bundle,
                &ctx.high_prompts(model.towers(), &model.bundle)?,
                &ctx.modifiers(description, &model.bundle),
                layer,
                top_k,
            )?;
            println!("{class} / description {description}: {}", desc.text);
            println!("final-token attention at layer {layer}");
            for (word, score) in &dump.words {
                println!("  {word:<16} {score:.4}");
            }
        }
    }
    Ok(())
}

struct Shared<B>(std::sync::Arc<B>);

impl<B: hpt_core::knowledge::LlmBackend> hpt_core::knowledge::LlmBackend for Shared<B> {
    fn model(&self) -> &str {
        self.0.model()
    }

    fn complete(&self, instruction: &str) -> hpt_core::Result<String> {
        self.0.complete(instruction)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
