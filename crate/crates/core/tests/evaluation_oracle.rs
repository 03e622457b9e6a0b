use affectfuse_core::evaluation::{accuracy, baseline_classify, evaluate, uar, BaselineOutcome, ConfusionCounts, Predictions};
use affectfuse_core::{BinaryLabel, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact rational `(numerator, denominator)` in lowest terms, rounded once.
fn ratio(num: u64, den: u64) -> f64 {
    let (mut a, mut b) = (num, den);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let g = a.max(1);
    (num / g) as f64 / (den / g) as f64
}

/// Accuracy and UAR straight from the pairs, using exact fractions.
fn brute_force(pred: &[bool], truth: &[bool]) -> (f64, Option<f64>) {
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as u64;
    let recall = |class: bool| {
        let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == class).collect();
        let hits = members.iter().filter(|&&i| pred[i] == class).count() as u64;
        (!members.is_empty()).then_some((hits, members.len() as u64))
    };
    // (a/b + c/d) / 2 = (ad + cb) / 2bd
    let uar = match (recall(true), recall(false)) {
        (Some((a, b)), Some((c, d))) => Some(ratio(a * d + c * b, 2 * b * d)),
        _ => None,
    };
    (ratio(correct, pred.len() as u64), uar)
}

#[test]
fn metrics_equal_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let to_labels = |v: &[bool]| v.iter().map(|&b| BinaryLabel::from_bool(b)).collect::<Vec<_>>();
        let c = ConfusionCounts::from_pairs(&to_labels(&pred), &to_labels(&truth)).unwrap();
        let (acc, want_uar) = brute_force(&pred, &truth);
        assert_eq!(accuracy(&c).unwrap(), acc);
        assert_eq!(uar(&c).ok(), want_uar);
    }
}

#[test]
fn balanced_truth_gives_equal_accuracy_and_uar() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let half = rng.gen_range(1..30);
        let truth: Vec<BinaryLabel> = (0..2 * half).map(|i| BinaryLabel::from_bool(i < half)).collect();
        let probs: Vec<f64> = (0..2 * half).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = evaluate(Predictions::Probabilities(&probs), &truth, 0.5).unwrap();
        assert_eq!(r.accuracy, r.uar);
    }
}

#[test]
fn evaluated_plus_excluded_is_input_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kinds = [BaselineOutcome::Positive, BaselineOutcome::Negative, BaselineOutcome::Excluded];
    for _ in 0..200 {
        let n = rng.gen_range(4..40);
        let mut outcomes: Vec<BaselineOutcome> = (0..n).map(|_| kinds[rng.gen_range(0..3)]).collect();
        outcomes[0] = BaselineOutcome::Positive;
        let mut truth: Vec<BinaryLabel> = (0..n).map(|_| BinaryLabel::from_bool(rng.gen_bool(0.5))).collect();
        truth[0] = BinaryLabel::Positive;
        outcomes[1] = BaselineOutcome::Negative;
        truth[1] = BinaryLabel::Negative;
        let r = evaluate(Predictions::Baseline(&outcomes), &truth, 0.5).unwrap();
        assert_eq!(r.n_evaluated + r.n_excluded, n);
    }
}

#[test]
fn baseline_is_total_on_arbitrary_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let len = rng.gen_range(0..30);
        let s: String = (0..len).map(|_| char::from_u32(rng.gen_range(0..0x3000)).unwrap_or(' ')).collect();
        let a = baseline_classify(&s, &TaskSpec::SUICIDE);
        assert_eq!(a, baseline_classify(&s, &TaskSpec::SUICIDE));
    }
}
