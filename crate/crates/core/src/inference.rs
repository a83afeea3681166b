//! Demonstration retrieval, selection under a context budget, ordering,
//! prompt assembly and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{fnv1a, Example, TaskKind, TaskSpec};
use crate::dense_index::DenseIndex;
use crate::encoder::BiEncoderParams;
use crate::error::{Error, Result};
use crate::feedback::{continuation_for, ScorePair, Scorer};
use crate::lexical::InvertedIndex;
use crate::text::count_tokens;

/// Demonstrations kept for label-space tasks.
pub const CLASSIFICATION_DEMOS: usize = 8;

/// Encoder and index known to belong together.
#[derive(Debug, Clone, Copy)]
pub struct DenseRetriever<'a> {
    params: &'a BiEncoderParams,
    index: &'a DenseIndex,
}

impl<'a> DenseRetriever<'a> {
    pub fn new(params: &'a BiEncoderParams, index: &'a DenseIndex) -> Result<Self> {
        let fingerprint = params.fingerprint();
        if index.checkpoint_fingerprint != fingerprint {
            return Err(Error::State(format!(
                "index for `{}` was built by checkpoint {}, not {fingerprint}; rebuild it",
                index.task_id, index.checkpoint_fingerprint
            )));
        }
        if index.dim != params.dim {
            return Err(Error::State(format!(
                "index has {} dims, checkpoint has {}",
                index.dim, params.dim
            )));
        }
        Ok(Self { params, index })
    }

    /// Top-`k` demonstrations for `x_test`, highest score first.
    pub fn retrieve(&self, spec: &TaskSpec, x_test: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if spec.task_id != self.index.task_id {
            return Err(Error::Contract(format!(
                "index covers task `{}`, query is for `{}`",
                self.index.task_id, spec.task_id
            )));
        }
        let query: Vec<f32> = self
            .params
            .encode_query(spec, x_test)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        self.index.search(&query, k)
    }
}

/// [`DenseRetriever::retrieve`] with the fingerprint check on every call.
pub fn retrieve(
    params: &BiEncoderParams,
    index: &DenseIndex,
    x_test: &str,
    spec: &TaskSpec,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    DenseRetriever::new(params, index)?.retrieve(spec, x_test, k)
}

/// Lexical ranking of the indexed pool against `x_test`.
pub fn bm25_ranking(index: &InvertedIndex, x_test: &str, k: usize) -> Vec<(String, f64)> {
    index.top_k(x_test, k)
}

/// `k` pool ids drawn uniformly for `query_id`, reproducible per query
/// regardless of processing order. Every score is zero.
pub fn random_ranking(pool: &[Example], k: usize, seed: u64, query_id: &str) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(query_id.as_bytes()));
    index::sample(&mut rng, pool.len(), k.min(pool.len()))
        .into_iter()
        .map(|i| (pool[i].example_id.clone(), 0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStrategy {
    /// Least similar first, so the most similar sits next to the query.
    #[default]
    Ascending,
    Descending,
    Random(u64),
}

impl OrderStrategy {
    /// Parses `ascending`, `descending` or `random`; `random` uses `seed`.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "ascending" => Ok(Self::Ascending),
            "descending" => Ok(Self::Descending),
            "random" => Ok(Self::Random(seed)),
            other => Err(Error::Config(format!(
                "unknown order `{other}` (expected ascending, descending or random)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ascending => "ascending",
            Self::Descending => "descending",
            Self::Random(_) => "random",
        }
    }
}

impl fmt::Display for OrderStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random(seed) => write!(f, "random({seed})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for OrderStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("random(").and_then(|r| r.strip_suffix(')')) {
            let seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad random seed in `{s}`")))?;
            return Ok(Self::Random(seed));
        }
        Self::parse(s, 0)
    }
}

/// Rearranges demonstrations given best first.
pub fn order_demonstrations<T: Clone>(ranked: &[T], strategy: OrderStrategy) -> Vec<T> {
    let mut out = ranked.to_vec();
    match strategy {
        OrderStrategy::Descending => {}
        OrderStrategy::Ascending => out.reverse(),
        OrderStrategy::Random(seed) => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    out
}

/// Renders demonstrations then the query, joined by the template joiner.
pub fn render_prompt(spec: &TaskSpec, demos: &[&Example], x_test: &str) -> Result<String> {
    let mut parts = Vec::with_capacity(demos.len() + 1);
    for d in demos {
        parts.push(spec.render_demo(d)?);
    }
    parts.push(spec.render_query(x_test)?);
    Ok(parts.join(&spec.template.joiner))
}

/// Prompt tokens plus the reserved target length.
pub fn prompt_cost(spec: &TaskSpec, demos: &[&Example], x_test: &str) -> Result<usize> {
    Ok(count_tokens(&render_prompt(spec, demos, x_test)?) + spec.max_target_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<'a> {
    pub demos: Vec<&'a Example>,
    /// Set when not even one demonstration fits.
    pub empty_warning: bool,
}

/// Picks demonstrations from `ranked` (best first). Label-space tasks take
/// the first [`CLASSIFICATION_DEMOS`] unless they overflow the budget;
/// otherwise the longest prefix that fits is used.
pub fn select_demonstrations<'a>(
    ranked: &[&'a Example],
    spec: &TaskSpec,
    x_test: &str,
) -> Result<Selection<'a>> {
    let base = prompt_cost(spec, &[], x_test)?;
    if base > spec.context_budget {
        return Err(Error::Budget(format!(
            "query alone costs {base} tokens, budget is {}",
            spec.context_budget
        )));
    }
    if spec.kind.has_label_space() {
        let first = &ranked[..ranked.len().min(CLASSIFICATION_DEMOS)];
        if prompt_cost(spec, first, x_test)? <= spec.context_budget {
            return Ok(Selection {
                demos: first.to_vec(),
                empty_warning: ranked.is_empty(),
            });
        }
    }
    let cap = if spec.kind.has_label_space() {
        CLASSIFICATION_DEMOS
    } else {
        ranked.len()
    };
    let mut demos: Vec<&Example> = Vec::new();
    for &d in ranked.iter().take(cap) {
        demos.push(d);
        if prompt_cost(spec, &demos, x_test)? > spec.context_budget {
            demos.pop();
            break;
        }
    }
    let empty_warning = demos.is_empty() && !ranked.is_empty();
    if empty_warning {
        log::warn!("no demonstration fits the budget of task `{}`", spec.task_id);
    }
    Ok(Selection {
        demos,
        empty_warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub task_id: String,
    pub demonstrations: Vec<String>,
    pub order_strategy: OrderStrategy,
    pub rendered_prompt: String,
    pub token_cost: usize,
    pub budget: usize,
}

/// Assembles the prompt for demonstrations already in final order.
pub fn assemble_prompt(
    demos: &[&Example],
    x_test: &str,
    spec: &TaskSpec,
    order_strategy: OrderStrategy,
) -> Result<PromptPlan> {
    let rendered_prompt = render_prompt(spec, demos, x_test)?;
    let token_cost = count_tokens(&rendered_prompt) + spec.max_target_len;
    if token_cost > spec.context_budget {
        return Err(Error::Contract(format!(
            "prompt costs {token_cost} tokens, budget is {}",
            spec.context_budget
        )));
    }
    Ok(PromptPlan {
        task_id: spec.task_id.clone(),
        demonstrations: demos.iter().map(|d| d.example_id.clone()).collect(),
        order_strategy,
        rendered_prompt,
        token_cost,
        budget: spec.context_budget,
    })
}

/// Selection, ordering and assembly for one query.
pub fn plan_prompt(
    ranked: &[&Example],
    spec: &TaskSpec,
    x_test: &str,
    order: OrderStrategy,
) -> Result<PromptPlan> {
    let selection = select_demonstrations(ranked, spec, x_test)?;
    let ordered = order_demonstrations(&selection.demos, order);
    assemble_prompt(&ordered, x_test, spec, order)
}

/// The label whose continuation the scorer finds most likely after
/// `prompt`; ties go to the earlier label.
pub fn predict_label(scorer: &dyn Scorer, prompt: &str, labels: &[String]) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::Data("empty label space".to_string()));
    }
    let pairs: Vec<ScorePair> = labels
        .iter()
        .map(|y| ScorePair::new(prompt, continuation_for(prompt, y)))
        .collect();
    let lls = scorer.log_likelihoods(&pairs)?;
    let mut best = 0;
    for (i, v) in lls.iter().enumerate() {
        if *v > lls[best] {
            best = i;
        }
    }
    Ok(labels[best].clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ExactMatch,
}

impl Metric {
    pub fn for_kind(kind: TaskKind) -> Self {
        if kind.has_label_space() {
            Metric::Accuracy
        } else {
            Metric::ExactMatch
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
}

fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn evaluate(predictions: &[String], golds: &[Example], metric: Metric) -> Result<EvalResult> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold examples",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Contract("nothing to evaluate".to_string()));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| match metric {
            Metric::Accuracy => p.as_str() == g.target,
            Metric::ExactMatch => normalize_whitespace(p) == normalize_whitespace(&g.target),
        })
        .count();
    Ok(EvalResult {
        metric,
        value: correct as f64 / golds.len() as f64,
        n: golds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetRegistry, Split, TemplateSpec};
    use crate::encoder::{init_params, Vocabulary};
    use crate::feedback::FnScorer;
    use proptest::prelude::*;

    fn spec(kind: TaskKind, budget: usize, target_len: usize) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            name: String::new(),
            kind,
            instruction: "do it".into(),
            verbalizers: if kind == TaskKind::Generation { vec![] } else { vec!["yes".into(), "no".into()] },
            template: TemplateSpec::new("{input} {target}", "{input}", "\n"),
            max_target_len: target_len,
            context_budget: budget,
        }
    }

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn demo(id: usize, len: usize) -> Example {
        Example::new("t", format!("d{id}"), words(len - 1, "w"), "yes")
    }

    #[test]
    fn budget_example() {
        let s = spec(TaskKind::Generation, 100, 20);
        let pool: Vec<Example> = (0..5).map(|i| demo(i, 25)).collect();
        let refs: Vec<&Example> = pool.iter().collect();
        let sel = select_demonstrations(&refs, &s, &words(30, "q")).unwrap();
        assert_eq!(sel.demos.len(), 2);
        assert!(!sel.empty_warning);
    }

    #[test]
    fn classification_takes_eight() {
        let s = spec(TaskKind::Classification, 10_000, 1);
        let pool: Vec<Example> = (0..20).map(|i| demo(i, 5)).collect();
        let refs: Vec<&Example> = pool.iter().collect();
        let sel = select_demonstrations(&refs, &s, "q").unwrap();
        assert_eq!(sel.demos.len(), 8);
        assert_eq!(sel.demos[0].example_id, "d0");
        let sel = select_demonstrations(&refs[..3], &s, "q").unwrap();
        assert_eq!(sel.demos.len(), 3);
    }

    #[test]
    fn classification_falls_back_to_budget() {
        let s = spec(TaskKind::Classification, 40, 1);
        let pool: Vec<Example> = (0..20).map(|i| demo(i, 10)).collect();
        let refs: Vec<&Example> = pool.iter().collect();
        let sel = select_demonstrations(&refs, &s, "q").unwrap();
        assert_eq!(sel.demos.len(), 3);
    }

    #[test]
    fn oversized_first_demo_gives_empty_selection() {
        let s = spec(TaskKind::Generation, 50, 5);
        let pool = [demo(0, 100), demo(1, 2)];
        let refs: Vec<&Example> = pool.iter().collect();
        let sel = select_demonstrations(&refs, &s, "q").unwrap();
        assert!(sel.demos.is_empty());
        assert!(sel.empty_warning);
    }

    #[test]
    fn query_over_budget() {
        let s = spec(TaskKind::Generation, 10, 5);
        let err = select_demonstrations(&[], &s, &words(8, "q")).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn assembly() {
        let s = spec(TaskKind::Generation, 100, 3);
        let plan = assemble_prompt(&[], "hello there", &s, OrderStrategy::Ascending).unwrap();
        assert_eq!(plan.rendered_prompt, "hello there");
        assert_eq!(plan.token_cost, 2 + 3);
        let (a, b) = (demo(0, 3), demo(1, 2));
        let plan = assemble_prompt(&[&a, &b], "x", &s, OrderStrategy::Descending).unwrap();
        assert_eq!(plan.rendered_prompt, "w0 w1 yes\nw0 yes\nx");
        assert_eq!(plan.demonstrations, vec!["d0", "d1"]);
        let tight = spec(TaskKind::Generation, 4, 3);
        assert!(matches!(assemble_prompt(&[&a], "x", &tight, OrderStrategy::Ascending), Err(Error::Contract(_))));
    }

    #[test]
    fn orders() {
        let ranked = vec!["a", "b", "c", "d"];
        let asc = order_demonstrations(&ranked, OrderStrategy::Ascending);
        assert_eq!(asc, vec!["d", "c", "b", "a"]);
        let mut rev = asc.clone();
        rev.reverse();
        assert_eq!(rev, order_demonstrations(&ranked, OrderStrategy::Descending));
        let r1 = order_demonstrations(&ranked, OrderStrategy::Random(4));
        assert_eq!(r1, order_demonstrations(&ranked, OrderStrategy::Random(4)));
        let mut sorted = r1.clone();
        sorted.sort();
        assert_eq!(sorted, ranked);
    }

    #[test]
    fn strategy_names() {
        assert_eq!(OrderStrategy::default(), OrderStrategy::Ascending);
        assert_eq!("random(5)".parse::<OrderStrategy>().unwrap(), OrderStrategy::Random(5));
        assert_eq!(OrderStrategy::parse("random", 9).unwrap().to_string(), "random(9)");
        assert!(OrderStrategy::parse("sideways", 0).is_err());
    }

    #[test]
    fn metrics() {
        let golds: Vec<Example> = ["a", "b", "c d", "e"]
            .iter()
            .enumerate()
            .map(|(i, t)| Example::new("t", format!("{i}"), "x", *t))
            .collect();
        let p = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(evaluate(&p(&["a", "b", "c d", "e"]), &golds, Metric::Accuracy).unwrap().value, 1.0);
        assert_eq!(evaluate(&p(&["x", "x", "x", "x"]), &golds, Metric::Accuracy).unwrap().value, 0.0);
        assert_eq!(evaluate(&p(&["a", "b", "c  d", "z"]), &golds, Metric::Accuracy).unwrap().value, 0.5);
        assert_eq!(evaluate(&p(&["a", "b", " c  d ", "z"]), &golds, Metric::ExactMatch).unwrap().value, 0.75);
        assert!(matches!(evaluate(&p(&["a"]), &golds, Metric::Accuracy), Err(Error::Contract(_))));
    }

    #[test]
    fn prediction_is_label_argmax() {
        let scorer = FnScorer::new("pref", |_: &str, c: &str| if c.trim() == "no" { 0.7 } else { 0.2 });
        let labels = vec!["yes".to_string(), "no".to_string()];
        assert_eq!(predict_label(&scorer, "p", &labels).unwrap(), "no");
        let flat = FnScorer::new("flat", |_: &str, _: &str| 0.5);
        assert_eq!(predict_label(&flat, "p", &labels).unwrap(), "yes");
    }

    fn registry(n: usize) -> DatasetRegistry {
        let mut reg = DatasetRegistry::from_tasks([spec(TaskKind::Generation, 200, 2)]).unwrap();
        for i in 0..n {
            reg.add_example(Split::Train, Example::new("t", format!("e{i:03}"), format!("a{} b{} c{}", i % 7, i % 11, i % 3), format!("z{}", i % 5)))
                .unwrap();
        }
        reg
    }

    #[test]
    fn retrieval_matches_similarity() {
        let reg = registry(200);
        let params = init_params(Vocabulary::from_registry(&reg).unwrap(), 8, 3);
        let index = DenseIndex::build(&params, &reg, "t").unwrap();
        let s = reg.task("t").unwrap();
        let query = Example::new("t", "q", "a3 b5 c1 unseen", "");
        let hits = retrieve(&params, &index, &query.input, s, 200).unwrap();
        let mut brute: Vec<(f64, usize)> = reg
            .train("t")
            .iter()
            .enumerate()
            .map(|(i, d)| (params.similarity(&query, d, s).unwrap(), i))
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for ((id, score), (sim, i)) in hits.iter().zip(&brute) {
            assert!((score - sim).abs() < 1e-5);
            let _ = (id, i);
        }
        assert_eq!(hits[0].0, reg.train("t")[brute[0].1].example_id);
        assert_eq!(retrieve(&params, &index, &query.input, s, 1).unwrap(), hits[..1].to_vec());
    }

    #[test]
    fn stale_index_is_rejected() {
        let reg = registry(10);
        let params = init_params(Vocabulary::from_registry(&reg).unwrap(), 4, 3);
        let index = DenseIndex::build(&params, &reg, "t").unwrap();
        let other = init_params(Vocabulary::from_registry(&reg).unwrap(), 4, 4);
        let err = retrieve(&other, &index, "a1", reg.task("t").unwrap(), 3).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn random_baseline_is_per_query_reproducible() {
        let reg = registry(30);
        let pool = reg.train("t");
        let a = random_ranking(pool, 5, 1, "q1");
        assert_eq!(a, random_ranking(pool, 5, 1, "q1"));
        assert_ne!(a, random_ranking(pool, 5, 1, "q2"));
        assert_eq!(random_ranking(pool, 100, 1, "q1").len(), 30);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn plans_respect_budget_and_are_maximal(
            lens in prop::collection::vec(1usize..30, 0..20),
            budget in 5usize..200,
            qlen in 1usize..10,
            target in 0usize..5,
            classification in any::<bool>(),
        ) {
            let kind = if classification { TaskKind::Classification } else { TaskKind::Generation };
            let s = spec(kind, budget, target);
            let pool: Vec<Example> = lens.iter().enumerate().map(|(i, l)| demo(i, *l + 1)).collect();
            let refs: Vec<&Example> = pool.iter().collect();
            let x = words(qlen, "q");
            match plan_prompt(&refs, &s, &x, OrderStrategy::Ascending) {
                Err(Error::Budget(_)) => prop_assert!(qlen + target > budget),
                Err(e) => prop_assert!(false, "{e}"),
                Ok(plan) => {
                    prop_assert!(plan.token_cost <= budget);
                    let l = plan.demonstrations.len();
                    let cap = if classification { CLASSIFICATION_DEMOS.min(refs.len()) } else { refs.len() };
                    if l < cap {
                        prop_assert!(prompt_cost(&s, &refs[..=l], &x).unwrap() > budget);
                    }
                }
            }
        }
    }
}
