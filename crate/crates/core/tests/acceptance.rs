//! Exit gate. Prints one PASS/FAIL line per criterion and exits non-zero if
//! any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{
    closest_scan, dense_attention, oracle_additive, oracle_reweight, random_case, to_rows,
};
use hpt_core::encoders::{
    modified_attention, to_checkpoint_string, AttentionModMatrix, EncoderConfig, ModMode,
    PromptBundle, TextEncoder,
};
use hpt_core::harness::{
    author_fixtures, corpus_from_fixtures, evaluate, gradient_suite, harmonic_mean, make_splits,
    run_ablation, train_base, AblationSuite, DatasetSpec, MetricsReport, SyntheticDataset,
    DEFAULT_SHOTS,
};
use hpt_core::knowledge::{
    compute_c, select_closest, validate_corpus, DescriptionCorpus, FixtureStore, KnowledgeConfig,
};
use hpt_core::numerics::{AffineMap, Tensor2};
use hpt_core::relgraph::{
    align_words, build_additive_matrix, build_reweight_matrix, build_selective_matrix,
    RelationGraph,
};
use hpt_core::training::{consistency_loss, HptModel, Mode, ReweightStrategy, TrainConfig};
use hpt_core::HptError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Everything a criterion may need about the toy world, built once.
struct Toy {
    encoder: EncoderConfig,
    dataset: SyntheticDataset,
    corpus: DescriptionCorpus,
}

impl Toy {
    fn new(name: &str) -> Result<Self, String> {
        let encoder = EncoderConfig::default();
        let text = TextEncoder::random(encoder.clone()).map_err(e)?;
        let dataset =
            SyntheticDataset::generate(DatasetSpec::builtin(name).map_err(e)?, &text).map_err(e)?;
        let config = KnowledgeConfig::default();
        let fixtures = author_fixtures(&dataset, &text, &config).map_err(e)?;
        let corpus = corpus_from_fixtures(&dataset, fixtures, &text, &config).map_err(e)?;
        Ok(Self {
            encoder,
            dataset,
            corpus,
        })
    }

    fn run(
        &self,
        config: &TrainConfig,
        corpus: &DescriptionCorpus,
    ) -> Result<(HptModel, MetricsReport), String> {
        let mut model = HptModel::new(self.encoder.clone(), config.clone()).map_err(e)?;
        let split = make_splits(&self.dataset, config.seed, DEFAULT_SHOTS).map_err(e)?;
        train_base(&mut model, corpus, &self.dataset, &split).map_err(e)?;
        let report = evaluate(&model, corpus, &self.dataset, &split).map_err(e)?;
        Ok((model, report))
    }
}

fn accuracies(report: &MetricsReport) -> Vec<f64> {
    report
        .rows
        .iter()
        .flat_map(|r| r.accuracies().collect::<Vec<_>>())
        .collect()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let report = gradient_suite().map_err(e)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = report
        .groups
        .iter()
        .map(|g| g.max_relative_error)
        .fold(0.0, f64::max);
    ensure!(
        report.groups.len() == 5,
        "expected 5 groups, got {}",
        report.groups.len()
    );
    ensure!(report.passed(), "{}", report.to_table());
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("5 groups, max rel err {worst:.2e}, {secs:.2}s"))
}

fn neutral_identities(toy: &Toy, seen: &mut Vec<f64>) -> Outcome {
    let enc = TextEncoder::random(toy.encoder.clone()).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (seq, graph) = random_case(&mut rng, 2, 2);
        let bundle = PromptBundle::new(&enc.config, 2, 2, rng.random());
        let high: Vec<Tensor2> = (0..enc.config.num_layers)
            .map(|_| Tensor2::random_normal(2, enc.config.model_dim, 0.5, &mut rng))
            .collect();
        let alignment = align_words(&seq, &graph);
        let plain = enc
            .hierarchical_forward(&seq, &bundle, &high, &[])
            .map_err(e)?;
        for m in [
            build_reweight_matrix(&graph, &alignment, 0.0, &seq.layout).map_err(e)?,
            build_additive_matrix(&graph, &alignment, 0.0, 0.0, &seq.layout),
        ] {
            let z = enc
                .hierarchical_forward(&seq, &bundle, &high, &vec![m; enc.config.num_layers])
                .map_err(e)?;
            for (a, b) in z.iter().zip(&plain) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(
        worst <= 1e-12,
        "neutral matrices moved outputs by {worst:e}"
    );

    let mut rows = Vec::new();
    for strategy in [
        ReweightStrategy::Additive,
        ReweightStrategy::Multiplicative,
        ReweightStrategy::MultiplicativeSelective,
    ] {
        let config = TrainConfig {
            beta: 0.0,
            reweight_strategy: strategy,
            ..TrainConfig::default()
        };
        let (_, report) = toy.run(&config, &toy.corpus)?;
        seen.extend(accuracies(&report));
        rows.push(report.rows[0].clone());
    }
    ensure!(
        rows.iter()
            .all(|r| r.base == rows[0].base && r.new == rows[0].new),
        "accuracies differ at beta=0: {rows:?}"
    );
    Ok(format!(
        "max deviation {worst:.1e}; beta=0 base {:.4} new {:.4} for all three strategies",
        rows[0].base.unwrap(),
        rows[0].new.unwrap()
    ))
}

fn arithmetic() -> Outcome {
    let hm1 = harmonic_mean(72.43, 68.14).map_err(e)?;
    let hm2 = harmonic_mean(84.13, 77.99).map_err(e)?;
    ensure!((hm1 - 70.22).abs() <= 0.01, "HM(72.43, 68.14) = {hm1}");
    ensure!((hm2 - 80.95).abs() <= 0.01, "HM(84.13, 77.99) = {hm2}");
    let c: Vec<usize> = [101, 1000, 10]
        .iter()
        .map(|&n| compute_c(n))
        .collect::<Result<_, _>>()
        .map_err(e)?;
    ensure!(c == [3, 4, 2], "C values {c:?}");
    let phi = AffineMap::identity("phi", 3);
    let v = [0.3, -1.2, 2.0];
    let ends = [
        consistency_loss(&v, &v, &phi).map_err(e)?,
        consistency_loss(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &phi).map_err(e)?,
        consistency_loss(&v, &v.map(|x| -x), &phi).map_err(e)?,
    ];
    ensure!(
        ends.iter()
            .zip([0.0, 1.0, 2.0])
            .all(|(a, b)| (a - b).abs() < 1e-12),
        "L_c endpoints {ends:?}"
    );
    Ok(format!(
        "HM {hm1:.4}, {hm2:.4}; C {c:?}; L_c endpoints {ends:?}"
    ))
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let (seq, graph) = random_case(&mut rng, 2, case % 3);
        let alignment = align_words(&seq, &graph);
        let add = build_additive_matrix(&graph, &alignment, 0.8, 0.3, &seq.layout);
        ensure!(
            to_rows(&add.values) == oracle_additive(&seq, &graph, 0.8, 0.3),
            "additive matrix differs on graph {case}"
        );
        let rw = build_reweight_matrix(&graph, &alignment, 0.2, &seq.layout).map_err(e)?;
        ensure!(
            to_rows(&rw.values) == oracle_reweight(&seq, &graph, 0.2),
            "re-weighting matrix differs on graph {case}"
        );
    }

    let embeddings: Vec<(String, Vec<f64>)> = (0..20)
        .map(|i| {
            let v = (0..16).map(|_| StandardNormal.sample(&mut rng)).collect();
            (format!("class{i:02}"), v)
        })
        .collect();
    let c = compute_c(20).map_err(e)?;
    for (name, _) in &embeddings {
        ensure!(
            select_closest(&embeddings, name, c).map_err(e)? == closest_scan(&embeddings, name, c),
            "closest classes differ for {name}"
        );
    }

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = Tensor2::random_normal(8, 4, 1.0, &mut rng);
        let k = Tensor2::random_normal(8, 4, 1.0, &mut rng);
        let v = Tensor2::random_normal(8, 4, 1.0, &mut rng);
        let raw = Tensor2::random_normal(8, 8, 1.0, &mut rng);
        for (mode, values) in [
            (ModMode::None, Tensor2::zeros(8, 8)),
            (ModMode::Additive, raw.clone()),
            (ModMode::Multiplicative, raw.map(f64::exp)),
            (ModMode::MultiplicativeSelective, raw.map(f64::exp)),
        ] {
            let got = modified_attention(
                &q,
                &k,
                &v,
                &AttentionModMatrix::new(mode, values.clone()).map_err(e)?,
            )
            .map_err(e)?;
            let want = dense_attention(
                &to_rows(&q),
                &to_rows(&k),
                &to_rows(&v),
                mode,
                &to_rows(&values),
            );
            for (a, b) in to_rows(&got).iter().flatten().zip(want.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(
        worst < 1e-10,
        "attention deviates from dense reference by {worst:e}"
    );
    Ok(format!(
        "50 graphs exact, 20 classes exact, attention max deviation {worst:.1e}"
    ))
}

fn toy_benchmark(toy: &Toy, seen: &mut Vec<f64>) -> Outcome {
    let config = TrainConfig::default();
    ensure!(
        (config.n_g, config.n_h, config.beta, config.lambda) == (2, 5, 0.2, 1.0),
        "default config drifted: {config:?}"
    );
    let start = Instant::now();
    let (model, report) = toy.run(&config, &toy.corpus)?;
    let secs = start.elapsed().as_secs_f64();
    seen.extend(accuracies(&report));
    let (base, new) = (report.rows[0].base.unwrap(), report.rows[0].new.unwrap());
    ensure!(secs < 120.0, "training took {secs:.1}s");
    ensure!(base >= 0.95, "base accuracy {base}");
    ensure!(new >= 1.0 / 8.0 + 0.30, "new accuracy {new}");

    let (again, rerun) = toy.run(&config, &toy.corpus)?;
    ensure!(
        report.to_json().map_err(e)? == rerun.to_json().map_err(e)?
            && to_checkpoint_string(&model).map_err(e)?
                == to_checkpoint_string(&again).map_err(e)?,
        "rerun with the same seed differs"
    );
    Ok(format!(
        "base {base:.4}, new {new:.4}, HM {:.4}, {secs:.2}s, rerun identical",
        report.rows[0].hm.unwrap()
    ))
}

fn reductions(toy: &Toy, seen: &mut Vec<f64>) -> Outcome {
    let hpt = TrainConfig::hpt();
    ensure!(
        hpt.lambda == 0.0
            && hpt.mode == Mode::Hpt
            && hpt.reweight_strategy == ReweightStrategy::Additive,
        "hpt preset is {hpt:?}"
    );
    let init = HptModel::new(toy.encoder.clone(), hpt.clone()).map_err(e)?;
    let (model, report) = toy.run(&hpt, &toy.corpus)?;
    seen.extend(accuracies(&report));
    ensure!(
        model.bundle.adapter == init.bundle.adapter,
        "adapter moved although lambda = 0"
    );
    ensure!(
        model.bundle.relation_scalars != init.bundle.relation_scalars,
        "relation scalars were not trained in hpt mode"
    );

    let global_only = TrainConfig {
        high_prompts: false,
        low_prompts: false,
        ..hpt.clone()
    };
    let mut no_graphs = toy.corpus.clone();
    for c in &mut no_graphs.classes {
        c.relations = vec![RelationGraph::default(); c.relations.len()];
    }
    let (a, ra) = toy.run(&global_only, &toy.corpus)?;
    let (b, rb) = toy.run(&global_only, &no_graphs)?;
    let (c, rc) = toy.run(
        &TrainConfig {
            reweight_strategy: ReweightStrategy::None,
            ..global_only.clone()
        },
        &toy.corpus,
    )?;
    ensure!(
        a.bundle == b.bundle && a.bundle == c.bundle && ra.rows == rb.rows && ra.rows == rc.rows,
        "global-only path depends on graphs or on the re-weighting strategy"
    );

    let split = make_splits(&toy.dataset, hpt.seed, DEFAULT_SHOTS).map_err(e)?;
    let ablation = run_ablation(
        AblationSuite::PromptLevels,
        &hpt,
        &toy.encoder,
        &toy.corpus,
        &toy.dataset,
        &split,
    )
    .map_err(e)?;
    let labels: Vec<&str> = ablation
        .rows
        .iter()
        .map(|r| r.metrics.label.as_str())
        .collect();
    ensure!(
        labels == ["G", "G+H", "G+L", "G+H+L"],
        "ablation rows {labels:?}"
    );
    ensure!(
        ablation.rows[0].metrics == ra.rows[0].clone().relabel("G"),
        "G row is not the global-only run"
    );
    for r in &ablation.rows {
        seen.extend(r.metrics.accuracies());
    }
    print!("{}", indent(&ablation.to_table()));
    Ok("hpt preset leaves the adapter untouched; global-only path is graph-free; 4-row table emitted".into())
}

trait Relabel {
    fn relabel(self, label: &str) -> Self;
}

impl Relabel for hpt_core::harness::MetricRow {
    fn relabel(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}\n")).collect()
}

fn knowledge_determinism(toy: &Toy) -> Outcome {
    let text = TextEncoder::random(toy.encoder.clone()).map_err(e)?;
    let config = KnowledgeConfig::default();
    let fixtures = author_fixtures(&toy.dataset, &text, &config)
        .map_err(e)?
        .to_json()
        .map_err(e)?;
    let mut outputs = Vec::new();
    for workers in [1, 4] {
        let config = KnowledgeConfig {
            workers,
            ..config.clone()
        };
        let store = FixtureStore::from_json(&fixtures).map_err(e)?;
        let corpus = corpus_from_fixtures(&toy.dataset, store, &text, &config).map_err(e)?;
        validate_corpus(&corpus, &text.tokenizer()).map_err(e)?;
        outputs.push(corpus.to_json().map_err(e)?);
    }
    ensure!(outputs[0] == outputs[1], "replays differ");
    let reloaded = DescriptionCorpus::from_json(&outputs[0])
        .map_err(e)?
        .to_json()
        .map_err(e)?;
    ensure!(reloaded == outputs[0], "serialize round trip differs");

    let mut short = toy.corpus.clone();
    short.classes[0].overall.truncate(4);
    match validate_corpus(&short, &text.tokenizer()) {
        Err(HptError::Structural(msg)) => Ok(format!(
            "{} bytes identical across replays; 4-of-5: {msg}",
            outputs[0].len()
        )),
        other => Err(format!("4-of-5 corpus gave {other:?}")),
    }
}

fn normalization(toy: &Toy, seen: &[f64]) -> Outcome {
    let enc = TextEncoder::random(toy.encoder.clone()).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (seq, graph) = random_case(&mut rng, 2, 2);
        let bundle = PromptBundle::new(&enc.config, 2, 2, rng.random());
        let high: Vec<Tensor2> = (0..enc.config.num_layers)
            .map(|_| Tensor2::random_normal(2, enc.config.model_dim, 0.5, &mut rng))
            .collect();
        let alignment = align_words(&seq, &graph);
        let beta = rng.random_range(0.0..2.0);
        for m in [
            build_additive_matrix(&graph, &alignment, beta, beta / 2.0, &seq.layout),
            build_reweight_matrix(&graph, &alignment, beta, &seq.layout).map_err(e)?,
            build_selective_matrix(&graph, &alignment, beta, &seq.layout).map_err(e)?,
        ] {
            let pass = enc
                .hierarchical_pass(
                    &seq,
                    &bundle.global_values(),
                    &high,
                    &vec![m; enc.config.num_layers],
                    None,
                )
                .map_err(e)?;
            for l in 0..enc.config.num_layers {
                let a = pass.attention(l).ok_or("missing layer")?;
                for r in 0..a.rows() {
                    worst = worst.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    ensure!(worst <= 1e-6, "softmax row sum off by {worst:e}");
    ensure!(!seen.is_empty(), "no accuracies were reported");
    ensure!(
        seen.iter().all(|a| (0.0..=1.0).contains(a)),
        "accuracy outside [0, 1]"
    );

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let d = 8;
        let mut phi = AffineMap::identity("phi", d);
        phi.weight.value = Tensor2::random_normal(d, d, 1.0, &mut rng);
        phi.bias.value = Tensor2::random_normal(1, d, 1.0, &mut rng);
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let l = consistency_loss(&z, &t, &phi).map_err(e)?;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    ensure!(lo >= 0.0 && hi <= 2.0, "L_c range [{lo}, {hi}]");
    Ok(format!(
        "row sums within {worst:.1e}; {} accuracies in [0,1]; L_c in [{lo:.3}, {hi:.3}] over 1000 inputs",
        seen.len()
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {n}: {name}: {detail}");
        results.push((n, name, outcome));
    };

    let toy = Toy::new("toy8");
    let mut seen = Vec::new();
    run(1, "gradient suite", &mut gradients);
    match &toy {
        Ok(toy) => {
            run(2, "beta=0 / zero-bias identities", &mut || {
                neutral_identities(toy, &mut seen)
            });
            run(3, "formula arithmetic", &mut arithmetic);
            run(4, "oracle equivalences", &mut oracles);
            run(5, "toy benchmark", &mut || toy_benchmark(toy, &mut seen));
            run(6, "reduction checks", &mut || reductions(toy, &mut seen));
            run(7, "knowledge pipeline determinism", &mut || {
                knowledge_determinism(toy)
            });
            run(8, "normalization invariants", &mut || {
                normalization(toy, &seen)
            });
        }
        Err(err) => {
            for (n, name) in [
                (2, "beta=0 / zero-bias identities"),
                (5, "toy benchmark"),
                (6, "reduction checks"),
                (7, "knowledge pipeline determinism"),
                (8, "normalization invariants"),
            ] {
                run(n, name, &mut || {
                    Err(format!("toy world could not be built: {err}"))
                });
            }
            run(3, "formula arithmetic", &mut arithmetic);
            run(4, "oracle equivalences", &mut oracles);
        }
    }

    let failed = results.iter().filter(|(_, _, o)| o.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
