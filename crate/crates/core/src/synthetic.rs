//! Generated task family with latent keys, paired with an [`OracleScorer`]
//! configuration so that the best demonstrations are known exactly.
//!
//! Every example carries a key on a ring. Its input mixes words from its
//! key's topic group, fewer words from the group of the opposite key and
//! filler words; its target is the key's verbalizer. Word overlap alone
//! barely separates a key from its opposite. The oracle maps topic words and
//! verbalizers to their keys, so a demonstration helps a query exactly as
//! much as the two keys agree.
//!
//! [`OracleScorer`]: crate::feedback::OracleScorer

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetRegistry, Example, Split, TaskKind, TaskSpec, TemplateSpec};
use crate::error::{Error, Result};
use crate::feedback::{CandidateStore, OracleConfig};
use crate::trainer::TrainConfig;

pub const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub num_keys: u32,
    pub words_per_key: usize,
    pub own_words: usize,
    pub distractor_words: usize,
    pub filler_words: usize,
    pub filler_pool: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            tasks: 2,
            num_keys: 12,
            words_per_key: 6,
            own_words: 3,
            distractor_words: 2,
            filler_words: 6,
            filler_pool: 30,
            train_per_task: 400,
            test_per_task: 96,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub config: SyntheticConfig,
    pub registry: DatasetRegistry,
    pub oracle: OracleConfig,
    /// Training configuration sized for this fixture.
    pub train_config: TrainConfig,
    keys: HashMap<(String, String), u32>,
}

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "vu", "da", "fe", "go", "hi", "ju",
    "ka", "ne", "po", "ru", "zo",
];

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn task_spec(t: usize, verbalizers: Vec<String>) -> TaskSpec {
    TaskSpec {
        task_id: format!("topic{t}"),
        name: format!("synthetic topic task {t}"),
        kind: TaskKind::Classification,
        instruction: format!("Name the topic of the passage (family {t})."),
        verbalizers,
        template: TemplateSpec::new("{input}\nTopic: {target}", "{input}\nTopic:", SEPARATOR),
        max_target_len: 1,
        context_budget: 256,
    }
}

impl SyntheticFixture {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        let c = config;
        if c.num_keys < 2 || c.tasks == 0 || c.own_words == 0 || c.words_per_key < c.own_words {
            return Err(Error::Config("synthetic fixture is degenerate".to_string()));
        }
        if c.own_words <= c.distractor_words {
            return Err(Error::Config("own_words must exceed distractor_words".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut used = HashSet::new();
        let filler: Vec<String> = (0..c.filler_pool).map(|_| pseudo_word(&mut rng, &mut used)).collect();
        let mut lexicon = BTreeMap::new();
        let mut specs = Vec::new();
        let mut topics = Vec::new();
        for t in 0..c.tasks {
            let mut groups = Vec::new();
            let mut verbalizers = Vec::new();
            for k in 0..c.num_keys {
                let group: Vec<String> = (0..c.words_per_key).map(|_| pseudo_word(&mut rng, &mut used)).collect();
                for w in &group {
                    lexicon.insert(w.clone(), k);
                }
                let v = pseudo_word(&mut rng, &mut used);
                lexicon.insert(v.clone(), k);
                verbalizers.push(v);
                groups.push(group);
            }
            specs.push(task_spec(t, verbalizers));
            topics.push(groups);
        }
        let mut registry = DatasetRegistry::from_tasks(specs.clone())?;
        let mut keys = HashMap::new();
        for (t, spec) in specs.iter().enumerate() {
            let total = c.train_per_task + c.test_per_task;
            for i in 0..total {
                let key = rng.gen_range(0..c.num_keys);
                let mut words: Vec<String> = topics[t][key as usize]
                    .choose_multiple(&mut rng, c.own_words)
                    .cloned()
                    .collect();
                let confuser = (key + c.num_keys / 2) % c.num_keys;
                words.extend(
                    topics[t][confuser as usize]
                        .choose_multiple(&mut rng, c.distractor_words)
                        .cloned(),
                );
                words.extend(filler.choose_multiple(&mut rng, c.filler_words).cloned());
                words.shuffle(&mut rng);
                let (split, id) = if i < c.train_per_task {
                    (Split::Train, format!("t{t}-train-{i:04}"))
                } else {
                    (Split::Test, format!("t{t}-test-{:04}", i - c.train_per_task))
                };
                let example = Example::new(&spec.task_id, &id, words.join(" "), &spec.verbalizers[key as usize]);
                keys.insert((spec.task_id.clone(), id), key);
                registry.add_example(split, example)?;
            }
        }
        let oracle = OracleConfig {
            num_keys: c.num_keys,
            lexicon,
            separator: SEPARATOR.to_string(),
            sharpness: 1.0,
            unkeyed_likelihood: 1e-6,
        };
        let train_config = TrainConfig {
            learning_rate: 2e-2,
            warmup_steps: 20,
            batch_size: 16,
            l_sampled: 8,
            k_candidates: 16,
            iterations: 2,
            epochs_initial: 40,
            epochs_per_iteration: 10,
            seed: c.seed,
            dim: 16,
            ..TrainConfig::default()
        };
        Ok(Self {
            config: c.clone(),
            registry,
            oracle,
            train_config,
            keys,
        })
    }

    /// Latent key of an example.
    pub fn key(&self, task_id: &str, example_id: &str) -> Option<u32> {
        self.keys.get(&(task_id.to_string(), example_id.to_string())).copied()
    }

    /// Training examples whose oracle score for `query` is maximal: those
    /// sharing its key, excluding the query itself.
    pub fn best_demos(&self, task_id: &str, query_id: &str) -> BTreeSet<&str> {
        let Some(key) = self.key(task_id, query_id) else {
            return BTreeSet::new();
        };
        self.registry
            .train(task_id)
            .iter()
            .filter(|e| e.example_id != query_id && self.key(task_id, &e.example_id) == Some(key))
            .map(|e| e.example_id.as_str())
            .collect()
    }

    /// Mean over queries of `|Z ∩ B| / min(|Z|, |B|)`, where `B` is the set
    /// of oracle-best demonstrations for the query.
    pub fn best_recall(&self, store: &CandidateStore) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for set in store.sets() {
            let best = self.best_demos(&set.task, &set.query_id);
            let denom = best.len().min(set.entries.len());
            if denom == 0 {
                continue;
            }
            let hits = set.ids().filter(|id| best.contains(id)).count();
            total += hits as f64 / denom as f64;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Fraction of `(task, query, demo)` triples whose demo shares the
    /// query's key.
    pub fn agreement<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> f64 {
        let mut n = 0usize;
        let mut hits = 0usize;
        for (task, query, demo) in pairs {
            n += 1;
            if self.key(task, query).is_some() && self.key(task, query) == self.key(task, demo) {
                hits += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            hits as f64 / n as f64
        }
    }

    /// Writes `registry.json`, `train.jsonl`, `test.jsonl`, `oracle.json`,
    /// `keys.json` and `train_config.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("registry.json", self.registry.registry_json())?;
        write("train.jsonl", self.registry.split_jsonl(Split::Train))?;
        write("test.jsonl", self.registry.split_jsonl(Split::Test))?;
        write("oracle.json", pretty(&self.oracle)?)?;
        let keys: BTreeMap<String, BTreeMap<&str, u32>> = self.keys.iter().fold(BTreeMap::new(), |mut acc, ((t, id), k)| {
            acc.entry(t.clone()).or_default().insert(id.as_str(), *k);
            acc
        });
        write("keys.json", pretty(&keys)?)?;
        write("train_config.json", pretty(&self.train_config)?)?;
        Ok(())
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
