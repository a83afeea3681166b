use std::sync::atomic::{AtomicUsize, Ordering};

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::corpus::{Split, TemplateSpec};

fn spec(kind: TaskKind, verbalizers: &[&str]) -> TaskSpec {
    TaskSpec {
        task_id: "t".into(),
        name: String::new(),
        kind,
        instruction: "do the task".into(),
        verbalizers: verbalizers.iter().map(|s| s.to_string()).collect(),
        template: TemplateSpec::new("{input} -> {target}", "{input} ->", "\n\n"),
        max_target_len: 8,
        context_budget: 128,
    }
}

fn ex(id: &str, input: &str, target: &str) -> Example {
    Example::new("t", id, input, target)
}

/// Counts calls and answers from a lookup on the candidate's input.
struct Counting<F> {
    calls: AtomicUsize,
    f: F,
}

impl<F: Fn(&str, &str) -> f64 + Send + Sync> Scorer for Counting<F> {
    fn fingerprint(&self) -> String {
        "counting".into()
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(pairs
            .iter()
            .map(|p| (self.f)(&p.context, &p.continuation).ln())
            .collect())
    }
}

#[test]
fn gen_passthrough() {
    let s = spec(TaskKind::Generation, &[]);
    let scorer = FnScorer::new("const", |_: &str, _: &str| 0.3);
    let v = score_gen(&scorer, &ex("q", "x", "y"), &ex("c", "a", "b"), &s).unwrap();
    assert_abs_diff_eq!(v, 0.3, epsilon = 1e-12);
}

#[test]
fn gen_context_layout() {
    let s = spec(TaskKind::Generation, &[]);
    let q = ex("q", "2+2", "4");
    let c = ex("c", "1+1", "2");
    assert_eq!(scoring_context(&s, &q, &c).unwrap(), "1+1 -> 2\n\n2+2 ->");
    assert_eq!(continuation_for("2+2 ->", "4"), " 4");
    assert_eq!(continuation_for("2+2 -> ", "4"), "4");
}

#[test]
fn gen_rejects_self_candidate() {
    let s = spec(TaskKind::Generation, &[]);
    let scorer = FnScorer::new("const", |_: &str, _: &str| 0.3);
    let q = ex("q", "x", "y");
    assert!(matches!(
        score_gen(&scorer, &q, &q, &s),
        Err(Error::Contract(_))
    ));
}

#[test]
fn gen_is_monotone_passthrough() {
    let s = spec(TaskKind::Generation, &[]);
    let scorer = FnScorer::new("by-demo", |ctx: &str, _: &str| {
        if ctx.starts_with("first") {
            0.3
        } else {
            0.6
        }
    });
    let q = ex("q", "x", "y");
    let a = score_gen(&scorer, &q, &ex("a", "first", "1"), &s).unwrap();
    let b = score_gen(&scorer, &q, &ex("b", "second", "2"), &s).unwrap();
    assert!(b > a);
}

fn label_scorer(table: &'static [(&'static str, f64)]) -> impl Scorer {
    FnScorer::new("table", move |_: &str, cont: &str| {
        table
            .iter()
            .find(|(l, _)| *l == cont.trim())
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    })
}

#[test]
fn cls_normalizes_over_labels() {
    let s = spec(TaskKind::Classification, &["pos", "neg"]);
    let scorer = label_scorer(&[("pos", 0.6), ("neg", 0.2)]);
    let v = score_cls(&scorer, &ex("q", "x", "pos"), &ex("c", "z", "neg"), &s).unwrap();
    assert_abs_diff_eq!(v, 0.75, epsilon = 1e-12);
}

#[test]
fn cls_uniform() {
    let s = spec(TaskKind::Classification, &["a", "b", "c", "d"]);
    let scorer = FnScorer::new("u", |_: &str, _: &str| 0.1);
    let v = score_cls(&scorer, &ex("q", "x", "c"), &ex("c", "z", "a"), &s).unwrap();
    assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
}

#[test]
fn cls_zero_denominator_is_error() {
    let s = spec(TaskKind::Classification, &["a", "b"]);
    let scorer = FnScorer::new("zero", |_: &str, _: &str| 0.0);
    let err = score_cls(&scorer, &ex("q", "x", "a"), &ex("c", "z", "a"), &s).unwrap_err();
    assert!(matches!(err, Error::Scoring { ref candidate_id, .. } if candidate_id == "c"));
}

#[test]
fn cls_gold_outside_label_space() {
    let s = spec(TaskKind::Classification, &["a", "b"]);
    let scorer = FnScorer::new("u", |_: &str, _: &str| 0.5);
    assert!(matches!(
        score_cls(&scorer, &ex("q", "x", "zzz"), &ex("c", "z", "a"), &s),
        Err(Error::Data(_))
    ));
}

#[test]
fn multi_choice_uses_example_choices() {
    let s = spec(TaskKind::MultiChoice, &[]);
    let scorer = label_scorer(&[("left", 0.3), ("right", 0.1)]);
    let q = ex("q", "which way", "left").with_choices(vec!["left".into(), "right".into()]);
    let v = score_cls(&scorer, &q, &ex("c", "z", "right"), &s).unwrap();
    assert_abs_diff_eq!(v, 0.75, epsilon = 1e-12);
}

#[test]
fn rank_examples() {
    assert_eq!(rank_candidates(&[0.9, 0.2, 0.9, 0.1]).unwrap(), vec![1, 3, 2, 4]);
    assert_eq!(rank_candidates(&[0.5]).unwrap(), vec![1]);
    assert_eq!(rank_candidates(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![4, 3, 2, 1]);
    assert!(rank_candidates(&[0.1, f64::NAN]).is_err());
    assert!(rank_candidates(&[]).is_err());
    assert_eq!(rank_candidates(&[f64::NEG_INFINITY, 0.0]).unwrap(), vec![2, 1]);
}

fn registry() -> DatasetRegistry {
    let mut reg = DatasetRegistry::from_tasks([spec(TaskKind::Generation, &[])]).unwrap();
    for (id, x) in [("q", "query"), ("a", "low"), ("b", "high"), ("c", "mid")] {
        reg.add_example(Split::Train, ex(id, x, "out")).unwrap();
    }
    reg
}

fn by_demo(ctx: &str, _: &str) -> f64 {
    if ctx.starts_with("low") {
        0.1
    } else if ctx.starts_with("high") {
        0.9
    } else {
        0.5
    }
}

#[test]
fn candidate_set_ranks_and_caches() {
    let reg = registry();
    let scorer = Counting {
        calls: AtomicUsize::new(0),
        f: by_demo,
    };
    let cache = ScoreCache::new();
    let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let q = reg.get("t", "q").unwrap();
    let set = score_candidate_set(&scorer, &reg, q, &ids, 0, &cache).unwrap();
    let ranks: Vec<usize> = set.entries.iter().map(|e| e.rank).collect();
    assert_eq!(ranks, vec![3, 1, 2]);
    assert_abs_diff_eq!(set.entries[1].score.exp(), 0.9, epsilon = 1e-12);
    assert_eq!(cache.len(), 3);
    let calls = scorer.calls.load(Ordering::SeqCst);
    let again = score_candidate_set(&scorer, &reg, q, &ids, 1, &cache).unwrap();
    assert_eq!(scorer.calls.load(Ordering::SeqCst), calls, "all cached: no scorer calls");
    assert_eq!(again.entries, set.entries);
}

#[test]
fn candidate_set_is_all_or_nothing() {
    let reg = registry();
    let scorer = FnScorer::new("demo", by_demo);
    let cache = ScoreCache::new();
    let ids: Vec<String> = ["a", "missing", "c"].iter().map(|s| s.to_string()).collect();
    let q = reg.get("t", "q").unwrap();
    let err = score_candidate_set(&scorer, &reg, q, &ids, 0, &cache).unwrap_err();
    assert!(matches!(err, Error::Scoring { ref candidate_id, .. } if candidate_id == "missing"));
    assert!(cache.is_empty());
    let self_ids = vec!["q".to_string()];
    assert!(score_candidate_set(&scorer, &reg, q, &self_ids, 0, &cache).is_err());
}

#[test]
fn batched_scoring_matches_single() {
    let reg = registry();
    let scorer = FnScorer::new("demo", by_demo);
    let q = reg.get("t", "q").unwrap();
    let a = reg.get("t", "a").unwrap();
    let ids_q: Vec<String> = vec!["a".into(), "b".into()];
    let ids_a: Vec<String> = vec!["c".into(), "q".into()];
    let cache = ScoreCache::new();
    let sets = score_candidate_sets(&scorer, &reg, &[(q, ids_q.clone()), (a, ids_a.clone())], 0, &cache).unwrap();
    let fresh = ScoreCache::new();
    assert_eq!(sets[0], score_candidate_set(&scorer, &reg, q, &ids_q, 0, &fresh).unwrap());
    assert_eq!(sets[1], score_candidate_set(&scorer, &reg, a, &ids_a, 0, &fresh).unwrap());
    assert_eq!(cache.len(), 4);
}

#[test]
fn candidate_store_jsonl_round_trip() {
    let mut store = CandidateStore::new(2);
    store.insert(CandidateSet {
        query_id: "q".into(),
        task: "t".into(),
        iteration: 2,
        entries: vec![
            ScoredCandidate { candidate_id: "a".into(), score: -0.25, rank: 1 },
            ScoredCandidate { candidate_id: "b".into(), score: f64::NEG_INFINITY, rank: 2 },
        ],
    });
    let text = store.to_jsonl();
    assert!(text.starts_with(r#"{"query_id":"q","task":"t","iteration":2,"candidates":[{"id":"a","score":-0.25,"rank":1}"#));
    let back = CandidateStore::from_jsonl(&text, "mem").unwrap();
    assert_eq!(back, store);
}

#[test]
fn oracle_ranks_follow_ground_truth() {
    let lexicon = (0..6u32)
        .flat_map(|k| [(format!("topic{k}"), k), (format!("label{k}"), k)])
        .collect();
    let oracle = OracleScorer::new(OracleConfig {
        num_keys: 6,
        lexicon,
        separator: "\n\n".into(),
        sharpness: 0.7,
        unkeyed_likelihood: 1e-6,
    })
    .unwrap();
    let s = spec(
        TaskKind::Classification,
        &["label0", "label1", "label2", "label3", "label4", "label5"],
    );
    let mut reg = DatasetRegistry::from_tasks([s]).unwrap();
    for i in 0..30u32 {
        let k = (i * 7) % 6;
        reg.add_example(
            Split::Train,
            ex(&i.to_string(), &format!("topic{k} filler"), &format!("label{k}")),
        )
        .unwrap();
    }
    let cache = ScoreCache::new();
    for q in reg.train("t") {
        let qk = oracle.key_of(&q.input).unwrap();
        let ids: Vec<String> = reg
            .train("t")
            .iter()
            .filter(|c| c.example_id != q.example_id)
            .map(|c| c.example_id.clone())
            .collect();
        let set = score_candidate_set(&oracle, &reg, q, &ids, 0, &cache).unwrap();
        let mut declared: Vec<usize> = (0..ids.len()).collect();
        let dist = |i: usize| {
            let c = reg.get("t", &ids[i]).unwrap();
            oracle.demo_distance(qk, oracle.key_of(&c.input))
        };
        declared.sort_by_key(|&i| (dist(i), i));
        let mut by_rank: Vec<usize> = (0..ids.len()).collect();
        by_rank.sort_by_key(|&i| set.entries[i].rank);
        assert_eq!(by_rank, declared);
    }
}

proptest! {
    #[test]
    fn ranks_invariant_under_exp(scores in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(rank_candidates(&scores).unwrap(), rank_candidates(&exp).unwrap());
        let mut sorted = rank_candidates(&scores).unwrap();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (1..=scores.len()).collect::<Vec<_>>());
    }

    #[test]
    fn cls_invariant_under_scaling(ps in prop::collection::vec(0.01f64..1.0, 2..6), c in 0.05f64..1.0) {
        let labels: Vec<String> = (0..ps.len()).map(|i| format!("l{i}")).collect();
        let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let s = spec(TaskKind::Classification, &label_refs);
        let lookup = |cont: &str, scale: f64| {
            let i: usize = cont.trim()[1..].parse().unwrap();
            ps[i] * scale
        };
        let plain = FnScorer::new("p", |_: &str, cont: &str| lookup(cont, 1.0));
        let scaled = FnScorer::new("s", |_: &str, cont: &str| lookup(cont, c));
        let q = ex("q", "x", "l1");
        let z = ex("z", "y", "l0");
        let a = score_cls(&plain, &q, &z, &s).unwrap();
        let b = score_cls(&scaled, &q, &z, &s).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
