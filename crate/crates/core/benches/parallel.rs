//! Data-parallel hot paths, each timed on the full rayon pool and on a
//! single-thread pool. Built with `--no-default-features`, every path runs
//! the sequential fallback and only the `sequential` variant is reported.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use udr::corpus::{DatasetRegistry, Example};
use udr::dense_index::DenseIndex;
use udr::encoder::{encode_corpus, init_params, BiEncoderParams, Vocabulary};
use udr::feedback::{score_candidate_sets, OracleScorer, ScoreCache};
use udr::synthetic::{SyntheticConfig, SyntheticFixture};
use udr::trainer::mine_candidates;

struct Setup {
    registry: DatasetRegistry,
    params: BiEncoderParams,
    oracle: OracleScorer,
    index: DenseIndex,
    queries: Vec<Vec<f32>>,
}

fn setup() -> Setup {
    let fixture = SyntheticFixture::generate(&SyntheticConfig {
        tasks: 1,
        train_per_task: 2000,
        test_per_task: 200,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let registry = fixture.registry;
    let params = init_params(Vocabulary::from_registry(&registry).unwrap(), 32, 1);
    let index = DenseIndex::build(&params, &registry, "topic0").unwrap();
    let spec = registry.task("topic0").unwrap();
    let queries = registry
        .examples("topic0", udr::corpus::Split::Test)
        .iter()
        .map(|q| params.encode_query(spec, &q.input).iter().map(|v| *v as f32).collect())
        .collect();
    Setup {
        registry,
        params,
        oracle: OracleScorer::new(fixture.oracle).unwrap(),
        index,
        queries,
    }
}

/// Runs `f` once per available variant.
fn variants(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        g.bench_function(BenchmarkId::from_parameter("rayon"), |b| b.iter(&mut f));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::from_parameter("sequential"), |b| single.install(|| b.iter(&mut f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&mut f));
    g.finish();
}

fn benches(c: &mut Criterion) {
    let s = setup();
    let spec = s.registry.task("topic0").unwrap();
    let train: &[Example] = s.registry.train("topic0");

    variants(c, "encode_corpus", || {
        encode_corpus(&s.params, train, spec).unwrap();
    });
    variants(c, "mine_candidates", || {
        mine_candidates(&s.params, &s.registry, "topic0", 50).unwrap();
    });
    variants(c, "search_batch", || {
        s.index.search_batch(&s.queries, 50).unwrap();
    });
    let requests: Vec<(&Example, Vec<String>)> = train[..200]
        .iter()
        .map(|q| (q, train[200..250].iter().map(|e| e.example_id.clone()).collect()))
        .collect();
    variants(c, "score_candidate_sets", || {
        score_candidate_sets(&s.oracle, &s.registry, &requests, 0, &ScoreCache::new()).unwrap();
    });
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
