//! Naive per-example recounts of every metric. They share no code with the
//! library and panic on the first disagreement.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taco::metrics::{
    accuracy_f1, amber_metrics, by_split, hallusion_metrics, mme_score, yes_bias, Difficulty, GenerativePrediction,
    GroupKeys, LabeledPrediction, Split,
};
use taco::{Answer, YesNo};

const TOL: f64 = 1e-9;

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= TOL, "{what}: library {a} vs recount {b}");
}

fn random_answer(rng: &mut ChaCha8Rng) -> Answer {
    match rng.gen_range(0..10) {
        0 => Answer::Unparseable,
        1..=5 => Answer::Yes,
        _ => Answer::No,
    }
}

fn random_gold(rng: &mut ChaCha8Rng) -> YesNo {
    if rng.gen_bool(0.5) {
        YesNo::Yes
    } else {
        YesNo::No
    }
}

fn is_correct(p: &LabeledPrediction) -> bool {
    matches!(
        (p.predicted, p.gold),
        (Answer::Yes, YesNo::Yes) | (Answer::No, YesNo::No)
    )
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// (accuracy, precision, recall, f1) by direct counting.
fn recount_acc_f1(preds: &[&LabeledPrediction]) -> (f64, f64, f64, f64) {
    let n = preds.len();
    let correct = preds.iter().filter(|p| is_correct(p)).count();
    let said_yes = preds.iter().filter(|p| p.predicted == Answer::Yes).count();
    let gold_yes = preds.iter().filter(|p| p.gold == YesNo::Yes).count();
    let hit = preds
        .iter()
        .filter(|p| p.predicted == Answer::Yes && p.gold == YesNo::Yes)
        .count();
    let precision = frac(hit, said_yes);
    let recall = frac(hit, gold_yes);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (frac(correct, n), precision, recall, f1)
}

fn binary_fixture(rng: &mut ChaCha8Rng) -> Vec<LabeledPrediction> {
    let n = rng.gen_range(1..80);
    let splits = [
        None,
        Some(Split::Random),
        Some(Split::Popular),
        Some(Split::Adversarial),
    ];
    (0..n)
        .map(|i| {
            let mut p = LabeledPrediction::new(format!("b{i}"), random_answer(rng), random_gold(rng));
            p.group_keys.split = *splits.choose(rng).unwrap();
            p
        })
        .collect()
}

fn check_binary(preds: &[LabeledPrediction]) {
    let all: Vec<&LabeledPrediction> = preds.iter().collect();
    let m = accuracy_f1(preds).unwrap();
    let (acc, p, r, f1) = recount_acc_f1(&all);
    close(m.accuracy, acc, "accuracy");
    close(m.precision, p, "precision");
    close(m.recall, r, "recall");
    close(m.f1, f1, "f1");

    let splits = by_split(preds).unwrap();
    for (name, scores) in &splits {
        let members: Vec<&LabeledPrediction> = preds
            .iter()
            .filter(|p| name == "all" || p.group_keys.split.map(|s| s.as_str()) == Some(name.as_str()))
            .collect();
        let (acc, _, _, f1) = recount_acc_f1(&members);
        close(scores.accuracy, acc, "split accuracy");
        close(scores.f1, f1, "split f1");
    }

    let bias = yes_bias(preds).unwrap();
    let said_yes = preds.iter().filter(|p| p.predicted == Answer::Yes).count() as f64;
    let gold_yes = preds.iter().filter(|p| p.gold == YesNo::Yes).count() as f64;
    close(bias.pct_diff, (said_yes - gold_yes) / preds.len() as f64, "pct_diff");
    let fp = preds
        .iter()
        .filter(|p| p.predicted == Answer::Yes && p.gold == YesNo::No)
        .count();
    let missed = preds
        .iter()
        .filter(|p| p.gold == YesNo::Yes && p.predicted != Answer::Yes)
        .count();
    match bias.fp_ratio {
        Some(v) => close(v, fp as f64 / (fp + missed) as f64, "fp_ratio"),
        None => assert_eq!(fp + missed, 0),
    }
}

fn mme_fixture(rng: &mut ChaCha8Rng) -> Vec<LabeledPrediction> {
    let mut out = Vec::new();
    for t in 0..rng.gen_range(1..5) {
        for img in 0..rng.gen_range(1..10) {
            for q in 0..2 {
                let mut p = LabeledPrediction::new(format!("m{t}-{img}-{q}"), random_answer(rng), random_gold(rng));
                p.group_keys = GroupKeys {
                    subtask: Some(format!("task{t}")),
                    pair_id: Some(format!("task{t}/img{img}")),
                    ..GroupKeys::default()
                };
                out.push(p);
            }
        }
    }
    out.shuffle(rng);
    out
}

fn check_mme(preds: &[LabeledPrediction]) {
    let scores = mme_score(preds).unwrap();
    let tasks: BTreeSet<&str> = preds.iter().map(|p| p.group_keys.subtask.as_deref().unwrap()).collect();
    assert_eq!(scores.len(), tasks.len());
    for task in tasks {
        let qs: Vec<&LabeledPrediction> = preds
            .iter()
            .filter(|p| p.group_keys.subtask.as_deref() == Some(task))
            .collect();
        let images: BTreeSet<&str> = qs.iter().map(|p| p.group_keys.pair_id.as_deref().unwrap()).collect();
        let both = images
            .iter()
            .filter(|img| {
                qs.iter()
                    .filter(|p| p.group_keys.pair_id.as_deref() == Some(**img))
                    .all(|p| is_correct(p))
            })
            .count();
        let acc = frac(qs.iter().filter(|p| is_correct(p)).count(), qs.len());
        close(scores[task], 100.0 * (acc + frac(both, images.len())), "mme");
    }
}

fn hallusion_fixture(rng: &mut ChaCha8Rng) -> Vec<LabeledPrediction> {
    let n = rng.gen_range(1..60);
    let pairs = rng.gen_range(1..10);
    let figures = rng.gen_range(1..8);
    (0..n)
        .map(|i| {
            let mut p = LabeledPrediction::new(format!("h{i}"), random_answer(rng), random_gold(rng));
            p.group_keys = GroupKeys {
                pair_id: Some(format!("pair{}", rng.gen_range(0..pairs))),
                figure_id: Some(format!("fig{}", rng.gen_range(0..figures))),
                difficulty: [None, Some(Difficulty::Easy), Some(Difficulty::Hard)]
                    .choose(rng)
                    .copied()
                    .unwrap(),
                ..GroupKeys::default()
            };
            p
        })
        .collect()
}

fn group_all_correct(preds: &[LabeledPrediction], key: fn(&LabeledPrediction) -> &str) -> f64 {
    let groups: BTreeSet<&str> = preds.iter().map(key).collect();
    let ok = groups
        .iter()
        .filter(|g| preds.iter().filter(|p| key(p) == **g).all(is_correct))
        .count();
    frac(ok, groups.len())
}

fn check_hallusion(preds: &[LabeledPrediction]) {
    let m = hallusion_metrics(preds).unwrap();
    close(
        m.q_acc,
        group_all_correct(preds, |p| p.group_keys.pair_id.as_deref().unwrap()),
        "qAcc",
    );
    close(
        m.f_acc,
        group_all_correct(preds, |p| p.group_keys.figure_id.as_deref().unwrap()),
        "fAcc",
    );
    close(
        m.a_acc,
        frac(preds.iter().filter(|p| is_correct(p)).count(), preds.len()),
        "aAcc",
    );
    for (d, got) in [(Difficulty::Easy, m.easy_a_acc), (Difficulty::Hard, m.hard_a_acc)] {
        let part: Vec<&LabeledPrediction> = preds.iter().filter(|p| p.group_keys.difficulty == Some(d)).collect();
        match got {
            Some(v) => close(
                v,
                frac(part.iter().filter(|p| is_correct(p)).count(), part.len()),
                "difficulty aAcc",
            ),
            None => assert!(part.is_empty()),
        }
    }
}

const VOCAB: &[&str] = &[
    "dog", "cat", "car", "tree", "cup", "kite", "bench", "horse", "boat", "clock", "vase", "book",
];

fn subset(rng: &mut ChaCha8Rng, min: usize) -> BTreeSet<String> {
    let k = rng.gen_range(min..=6);
    VOCAB.choose_multiple(rng, k).map(|s| s.to_string()).collect()
}

fn check_amber(rng: &mut ChaCha8Rng) {
    let gens: Vec<GenerativePrediction> = (0..rng.gen_range(1..30))
        .map(|i| GenerativePrediction {
            example_id: format!("g{i}"),
            mentioned_objects: subset(rng, 0),
            annotated_objects: subset(rng, 1),
            hallucination_targets: subset(rng, 0),
        })
        .collect();
    let m = amber_metrics(&gens).unwrap();
    let (mut chair, mut cog, mut cover, mut hal, mut counted) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for g in &gens {
        let wrong: Vec<&String> = g
            .mentioned_objects
            .iter()
            .filter(|o| !g.annotated_objects.contains(*o))
            .collect();
        let right = g.mentioned_objects.len() - wrong.len();
        cover += right as f64 / g.annotated_objects.len() as f64;
        if !wrong.is_empty() {
            hal += 1;
        }
        if !g.mentioned_objects.is_empty() {
            counted += 1;
            chair += wrong.len() as f64 / g.mentioned_objects.len() as f64;
            let targeted = wrong.iter().filter(|o| g.hallucination_targets.contains(**o)).count();
            cog += targeted as f64 / g.mentioned_objects.len() as f64;
        }
    }
    let n = gens.len() as f64;
    let avg = |sum: f64| {
        if counted == 0 {
            0.0
        } else {
            100.0 * sum / counted as f64
        }
    };
    close(m.chair, avg(chair), "chair");
    close(m.cog, avg(cog), "cog");
    close(m.cover, 100.0 * cover / n, "cover");
    close(m.hal, 100.0 * hal as f64 / n, "hal");
}

/// One random fixture run covering every metric family.
pub fn check_all(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_binary(&binary_fixture(&mut rng));
    check_mme(&mme_fixture(&mut rng));
    check_hallusion(&hallusion_fixture(&mut rng));
    check_amber(&mut rng);
}
