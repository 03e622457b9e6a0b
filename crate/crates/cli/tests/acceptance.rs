//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use affectfuse_core::evaluation::{
    accuracy, baseline_classify, evaluate, uar, BaselineOutcome, ConfusionCounts, Predictions,
};
use affectfuse_core::featurize::{build_vocab, tfidf, DocFreqs};
use affectfuse_core::fusion::{run_plan, FixedConfigProvider, FusionMode, FusionPlan, Modality, SplitFeatures, Targets};
use affectfuse_core::llm::{estimate_latency_seconds, estimate_tokens};
use affectfuse_core::neuralnet::{layer_sizes, train, LossKind, MlpConfig, MlpModel, MIN_UNITS};
use affectfuse_core::tuning::{sample, SearchSpace};
use affectfuse_core::{BinaryLabel, FeatureMatrix, TaskSpec, Trait};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

/// Name, check and runtime limit.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows((0..rows.len()).map(|i| format!("r{i}")).collect(), rows).unwrap()
}

fn fraction_correct(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5)).count() as f64 / y.len() as f64
}

// ---------------------------------------------------------------- TF-IDF

fn oracle_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

fn oracle_grams(doc: &[String], orders: &[usize]) -> Vec<String> {
    let mut out = Vec::new();
    for &n in orders {
        if doc.len() >= n {
            out.extend(doc.windows(n).map(|w| w.join(" ")));
        }
    }
    out
}

/// `tf * (ln((1 + n) / (1 + df)) + 1)` computed from raw token lists.
fn oracle_weight(term: &str, doc: &[String], train: &[Vec<String>], orders: &[usize]) -> f64 {
    let tf = oracle_grams(doc, orders).iter().filter(|g| *g == term).count() as f64;
    let df = train.iter().filter(|d| oracle_grams(d, orders).iter().any(|g| g == term)).count() as f64;
    let n = train.len() as f64;
    tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
}

fn tfidf_oracle() -> Outcome {
    const WORDS: &[&str] = &["calm", "storm", "Blue", "red", "not", "very", "we", "they", "sea", "sky", "día"];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    let mut corpora = 0;
    while corpora < 50 {
        let n_docs = rng.gen_range(1..=20);
        let docs: Vec<String> = (0..n_docs)
            .map(|_| {
                (0..rng.gen_range(1..15))
                    .map(|_| format!("{}{}", WORDS[rng.gen_range(0..WORDS.len())], [" ", ". ", ", ", "?"][rng.gen_range(0..4)]))
                    .collect()
            })
            .collect();
        let orders: &[usize] = [&[1usize][..], &[1, 2], &[1, 2, 3]][corpora % 3];
        let vocab = build_vocab(&docs, orders, 100_000).map_err(|e| e.to_string())?;
        let df = DocFreqs::fit(&docs, &vocab);
        let m = tfidf((0..docs.len()).map(|i| i.to_string()).collect(), &docs, &vocab, &df).map_err(|e| e.to_string())?;
        let tokens: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(d)).collect();
        // every n-gram seen in the corpus must be in the uncapped vocabulary
        let mut all: Vec<String> = tokens.iter().flat_map(|d| oracle_grams(d, orders)).collect();
        all.sort();
        all.dedup();
        ensure(vocab.terms().len() == all.len(), || format!("vocabulary size {} vs {}", vocab.terms().len(), all.len()))?;
        for (r, doc) in tokens.iter().enumerate() {
            for (c, term) in vocab.terms().iter().enumerate() {
                let want = oracle_weight(term, doc, &tokens, orders);
                let got = m.get(r, c);
                let err = if want == 0.0 { got.abs() } else { (got - want).abs() / want.abs() };
                worst = worst.max(err);
            }
        }
        corpora += 1;
    }
    ensure(worst <= 1e-12, || format!("max relative error {worst:e}"))?;
    Ok(format!("{corpora} corpora, max relative error {worst:e}"))
}

// ------------------------------------------------------------- gradients

/// Smallest distance of a hidden pre-activation or MAE residual from its kink.
fn kink_margin(model: &MlpModel, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    for (x, &y) in xs.iter().zip(ys) {
        let mut a = x.clone();
        let last = model.layers.len() - 1;
        for (l, layer) in model.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|o| layer.bias[o] + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * a[i]).sum::<f64>())
                .collect();
            if l < last {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
                a = z.into_iter().map(|v| v.max(0.0)).collect();
            } else if model.config.loss == LossKind::Mae {
                margin = margin.min((1.0 / (1.0 + (-z[0]).exp()) - y).abs());
            }
        }
    }
    margin
}

fn gradient_error(n_hidden: usize, loss: LossKind, draw: u64, redraws: &mut usize) -> f64 {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw * 13 + n_hidden as u64 * 101 + loss as u64 * 7);
    let (mut model, xs, ys) = loop {
        let dim = rng.gen_range(1..5);
        let mut model = MlpModel::init(MlpConfig::new(n_hidden, 64, 1e-3, loss, draw), dim, &mut rng).unwrap();
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let batch = rng.gen_range(1..8);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
        let ys: Vec<f64> = (0..batch)
            .map(|_| if loss == LossKind::Mae { rng.gen_range(0.0..1.0) } else { f64::from(rng.gen_range(0..2u8)) })
            .collect();
        if kink_margin(&model, &xs, &ys) >= 1e-4 {
            break (model, xs, ys);
        }
        *redraws += 1;
    };
    let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grads) = model.backward(&rows, &ys).unwrap();
    let analytic: Vec<f64> = grads.tensors().into_iter().flatten().copied().collect();
    let mut worst: f64 = 0.0;
    let mut k_flat = 0;
    for (t, len) in model.tensor_sizes().into_iter().enumerate() {
        for k in 0..len {
            let original = model.tensors_mut()[t][k];
            model.tensors_mut()[t][k] = original + H;
            let plus = model.batch_loss(&rows, &ys).unwrap();
            model.tensors_mut()[t][k] = original - H;
            let minus = model.batch_loss(&rows, &ys).unwrap();
            model.tensors_mut()[t][k] = original;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[k_flat];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            k_flat += 1;
        }
    }
    worst
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut redraws = 0;
    for n in 0..=3 {
        for loss in [LossKind::BinaryNll, LossKind::Mae] {
            for draw in 0..10 {
                let err = gradient_error(n, loss, draw, &mut redraws);
                ensure(err <= 1e-4, || format!("N={n} {loss:?} draw {draw}: relative error {err:e}"))?;
                worst = worst.max(err);
            }
        }
    }
    Ok(format!("80 draws, max relative error {worst:e}, {redraws} redraws near kinks"))
}

// ---------------------------------------------------------- optimization

fn optimization() -> Outcome {
    let corners = [([0.0, 0.0], 0.0), ([0.0, 1.0], 1.0), ([1.0, 0.0], 1.0), ([1.0, 1.0], 0.0)];
    let rows: Vec<Vec<f64>> = (0..32).flat_map(|_| corners.iter().map(|(p, _)| p.to_vec())).collect();
    let y: Vec<f64> = (0..32).flat_map(|_| corners.iter().map(|(_, l)| *l)).collect();
    let x = matrix(&rows);
    let cfg = MlpConfig { max_epochs: 2000, patience: 2000, ..MlpConfig::new(2, 64, 1e-2, LossKind::BinaryNll, 21) };
    let model = train(&cfg, &x, &y, &x, &y).map_err(|e| e.to_string())?;
    let xor_acc = fraction_correct(&model.predict_proba(&x).unwrap(), &y);
    ensure(xor_acc == 1.0, || format!("XOR train accuracy {xor_acc}"))?;
    let xor_epochs = model.history.len();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..300 {
        let label = f64::from(i % 2 == 0);
        let centre = if label == 1.0 { [1.5, -1.0] } else { [-1.5, 1.0] };
        rows.push(vec![centre[0] + rng.gen_range(-0.8..0.8), centre[1] + rng.gen_range(-0.8..0.8)]);
        y.push(label);
    }
    let x = matrix(&rows);
    let cfg = MlpConfig { max_epochs: 200, patience: 200, ..MlpConfig::new(1, 64, 1e-2, LossKind::BinaryNll, 4) };
    let model = train(&cfg, &x, &y, &x, &y).map_err(|e| e.to_string())?;
    let blob_acc = fraction_correct(&model.predict_proba(&x).unwrap(), &y);
    ensure(blob_acc == 1.0, || format!("blob train accuracy {blob_acc}"))?;
    Ok(format!("XOR 100% within {xor_epochs} epochs, blobs 100% within {} epochs", model.history.len()))
}

// ---------------------------------------------------------------- fusion

/// Label = bit1 XOR bit2; modality A sees only bit 1 and B only bit 2.
/// The four bit combinations are equally frequent, so neither modality alone
/// carries any information about the label.
fn xor_modalities(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let (mut a, mut b, mut y) = (Vec::new(), Vec::new(), Vec::new());
    let encode = |bit: bool, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let s = if bit { 1.0 } else { -1.0 };
        (0..4).map(|_| s + rng.gen_range(-0.3..0.3)).collect()
    };
    let mut cells: Vec<(bool, bool)> = (0..n).map(|i| (i % 2 == 0, (i / 2) % 2 == 0)).collect();
    cells.shuffle(rng);
    for (b1, b2) in cells {
        a.push(encode(b1, rng));
        b.push(encode(b2, rng));
        y.push(f64::from(b1 != b2));
    }
    (a, b, y)
}

fn fusion_benefit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (tr_a, tr_b, y_train) = xor_modalities(2000, &mut rng);
    let (te_a, te_b, y_test) = xor_modalities(500, &mut rng);
    let split = |tr: &[Vec<f64>], te: &[Vec<f64>]| {
        let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let train = FeatureMatrix::from_rows(ids("tr", tr.len()), tr).unwrap();
        SplitFeatures { dev: train.clone(), train, test: FeatureMatrix::from_rows(ids("te", te.len()), te).unwrap() }
    };
    let (ma, mb) = (Modality::TEXT_EMB, Modality::CHAT_EMB);
    let features = BTreeMap::from([(ma, split(&tr_a, &te_a)), (mb, split(&tr_b, &te_b))]);
    let targets = Targets { train: y_train.clone(), dev: y_train };
    let config = MlpConfig { max_epochs: 60, patience: 10, ..MlpConfig::new(1, 64, 1e-2, LossKind::BinaryNll, 13) };
    let mut provider = FixedConfigProvider::new(config);
    let mut acc = |plan: FusionPlan| -> Result<f64, String> {
        let out = run_plan(&plan, &features, &targets, &mut provider).map_err(|e| e.to_string())?;
        Ok(fraction_correct(&out.test_proba, &y_test))
    };
    let single_a = acc(FusionPlan::single(ma))?;
    let single_b = acc(FusionPlan::single(mb))?;
    let early = acc(FusionPlan::new(FusionMode::Early, vec![ma, mb]).unwrap())?;
    let late = acc(FusionPlan::new(FusionMode::Late, vec![ma, mb]).unwrap())?;
    let detail = format!("single {single_a:.3}/{single_b:.3}, early {early:.3}, late {late:.3}");
    ensure(single_a <= 0.60 && single_b <= 0.60 && early >= 0.95 && late <= 0.60, || detail.clone())?;
    Ok(detail)
}

// --------------------------------------------------------------- metrics

/// `(num / den)` reduced to lowest terms, then rounded once.
fn exact(num: u64, den: u64) -> f64 {
    let (mut a, mut b) = (num, den);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    (num / a) as f64 / (den / a) as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sets = 0;
    while sets < 1000 {
        let n = rng.gen_range(2..80);
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let pos = truth.iter().filter(|&&t| t).count() as u64;
        let neg = n as u64 - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        let hit = |class: bool| truth.iter().zip(&pred).filter(|(t, p)| **t == class && **p == class).count() as u64;
        let want_acc = exact(hit(true) + hit(false), n as u64);
        // (tp/P + tn/N) / 2 as one fraction
        let want_uar = exact(hit(true) * neg + hit(false) * pos, 2 * pos * neg);
        let labels = |v: &[bool]| v.iter().map(|&b| BinaryLabel::from_bool(b)).collect::<Vec<_>>();
        let c = ConfusionCounts::from_pairs(&labels(&pred), &labels(&truth)).map_err(|e| e.to_string())?;
        let (got_acc, got_uar) = (accuracy(&c).unwrap(), uar(&c).unwrap());
        ensure(got_acc == want_acc && got_uar == want_uar, || {
            format!("set {sets}: accuracy {got_acc} vs {want_acc}, UAR {got_uar} vs {want_uar}")
        })?;
        sets += 1;
    }
    let hand = ConfusionCounts { tp: 3, fn_: 1, tn: 2, fp: 2 };
    let (a, u) = (accuracy(&hand).unwrap(), uar(&hand).unwrap());
    ensure(a == 0.625 && u == 0.625, || format!("hand case {a}/{u}"))?;
    let truth: Vec<BinaryLabel> = (0..17).map(|i| BinaryLabel::from_bool(i % 3 == 0)).collect();
    let always = vec![1.0; truth.len()];
    let report = evaluate(Predictions::Probabilities(&always), &truth, 0.5).map_err(|e| e.to_string())?;
    ensure(report.uar == 0.5, || format!("always-positive UAR {}", report.uar))?;
    Ok(format!("{sets} random sets exact, hand case 0.625/0.625, always-positive UAR 0.5"))
}

// -------------------------------------------------------------- baseline

fn baseline_fixtures() -> Outcome {
    use BaselineOutcome::{Excluded as X, Negative as N, Positive as P};
    let cases: [(TaskSpec, [(&str, BaselineOutcome); 10]); 3] = [
        (
            TaskSpec::SENTIMENT,
            [
                ("positive", P),
                ("Negative.", N),
                ("The sentiment is POSITIVE!", P),
                ("I would say negative, mostly", N),
                ("positive or negative, hard to say", X),
                ("It is neutral", X),
                ("positively glowing", X),
                ("non-negative overall", N),
                ("", X),
                ("Answer: (positive)", P),
            ],
        ),
        (
            TaskSpec::SUICIDE,
            [
                ("yes", P),
                ("No.", N),
                ("I do not know", X),
                ("not sure, I don't know", X),
                ("nobody knows; none", X),
                ("Yes, because of the despair", P),
                ("yes and no", X),
                ("the answer is no", N),
                ("NO!", N),
                ("eyes noted", X),
            ],
        ),
        (
            TaskSpec::personality(Trait::Extraversion),
            [
                ("high", P),
                ("Low", N),
                ("The level is high because they love parties", P),
                ("rather low-key: low", N),
                ("highly social", X),
                ("high or low, unclear", X),
                ("moderate", X),
                ("slow and lowly", X),
                ("LOW.", N),
                ("high!!!", P),
            ],
        ),
    ];
    let mut checked = 0;
    for (task, fixtures) in &cases {
        for (text, want) in fixtures {
            let got = baseline_classify(text, task);
            ensure(got == *want, || format!("{task} {text:?}: {got:?}, annotated {want:?}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} fixture strings as annotated"))
}

// --------------------------------------------------------------- sampler

fn sampler() -> Outcome {
    const DRAWS: usize = 100_000;
    let space = SearchSpace::default();
    let mut counts = [0u64; 4];
    let mut below = 0usize;
    for i in 0..DRAWS {
        let c = sample(&space, 123, i, LossKind::BinaryNll);
        ensure(c.n_hidden <= 3, || format!("N = {}", c.n_hidden))?;
        ensure((64..=512).contains(&c.first_units), || format!("U = {}", c.first_units))?;
        ensure((1e-6..=10.0).contains(&c.learning_rate), || format!("alpha = {}", c.learning_rate))?;
        counts[c.n_hidden] += 1;
        below += usize::from(c.learning_rate < 10f64.powf(-2.5));
    }
    let expected = DRAWS as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = ChiSquared::new(3.0).unwrap().sf(chi2);
    let frac = below as f64 / DRAWS as f64;
    let detail = format!("chi2 p = {p:.4}, fraction alpha < 10^-2.5 = {frac:.4}");
    ensure(p > 0.001 && (frac - 0.5).abs() <= 0.02, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------- determinism

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let name = entry.file_name();
        if entry.file_type()?.is_dir() {
            // a previous local run's output must not seed the cache
            if name != "out" {
                copy_dir(&entry.path(), &to.join(&name))?;
            }
        } else {
            std::fs::copy(entry.path(), to.join(&name))?;
        }
    }
    Ok(())
}

fn read_reports(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn run_cli(workdir: &Path) -> Result<serde_json::Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_affectfuse"))
        .args(["run", "--config", "config.json", "--mock-llm", "--mock-embeddings"])
        .current_dir(workdir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| format!("summary: {e}"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    copy_dir(&fixtures, tmp.path()).map_err(|e| e.to_string())?;
    let first = run_cli(tmp.path())?;
    let reports_dir = tmp.path().join("out/reports");
    let before = read_reports(&reports_dir)?;
    let second = run_cli(tmp.path())?;
    let after = read_reports(&reports_dir)?;
    ensure(before.len() == 4, || format!("{} report files", before.len()))?;
    ensure(before == after, || "reports differ between runs".into())?;
    let calls = second["llm_requests"].as_u64();
    ensure(calls == Some(0), || format!("second run made {calls:?} LLM calls"))?;
    let rerun = second["steps_run"].as_array().map_or(usize::MAX, Vec::len);
    ensure(rerun == 0, || format!("second run executed {rerun} steps"))?;
    Ok(format!(
        "first run {} LLM calls, second run 0 calls and {} cached steps, 4 reports identical",
        first["llm_requests"], second["steps_cached"]
    ))
}

// ----------------------------------------------------------- layer sizes

fn layer_size_rule() -> Outcome {
    let mut cases = 0;
    for n in 0..=3 {
        for u in 64..=512 {
            let sizes = layer_sizes(n, u).map_err(|e| e.to_string())?;
            ensure(sizes.len() == n, || format!("({n},{u}): {sizes:?}"))?;
            ensure(n == 0 || sizes[0] == u, || format!("({n},{u}): {sizes:?}"))?;
            ensure(sizes.windows(2).all(|w| w[1] <= w[0]), || format!("({n},{u}): {sizes:?}"))?;
            ensure(sizes.iter().all(|&s| s >= MIN_UNITS), || format!("({n},{u}): {sizes:?}"))?;
            cases += 1;
        }
    }
    let spot = (layer_sizes(3, 512).unwrap(), layer_sizes(3, 100).unwrap());
    ensure(spot.0 == [512, 256, 128] && spot.1 == [100, 50, 32], || format!("{spot:?}"))?;
    Ok(format!("{cases} (N, U) pairs, spot cases [512,256,128] and [100,50,32]"))
}

// ---------------------------------------------------------------- tokens

fn token_latency() -> Outcome {
    let total = estimate_tokens(&TaskSpec::SENTIMENT, "", None).total;
    let latency = estimate_latency_seconds(100);
    // 0.038 * 100 + 1.32 evaluated exactly is 5.12
    ensure(total == 71 && latency == 5.12, || format!("{total} tokens, latency {latency}"))?;
    Ok(format!("{total} tokens, latency(100) = {latency} s"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("tfidf-oracle", tfidf_oracle, Duration::from_secs(5)),
        ("gradient-check", gradients, Duration::from_secs(60)),
        ("optimization-sanity", optimization, Duration::from_secs(30)),
        ("fusion-complementarity", fusion_benefit, Duration::from_secs(60)),
        ("metric-oracles", metric_oracles, Duration::MAX),
        ("baseline-fixtures", baseline_fixtures, Duration::MAX),
        ("sampler-distribution", sampler, Duration::MAX),
        ("determinism-caching", determinism, Duration::from_secs(300)),
        ("layer-size-rule", layer_size_rule, Duration::MAX),
        ("token-latency", token_latency, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed < limit {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.1?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} ({elapsed:.2?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
