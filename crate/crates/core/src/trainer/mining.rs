//! Candidate mining with the current encoder.

use crate::corpus::DatasetRegistry;
use crate::dense_index::top_k_indices;
use crate::encoder::{dot, encode_corpus, BiEncoderParams};
use crate::error::{Error, Result};
use crate::par;

/// For every training example of `task_id`, the ids of the `k` most similar
/// other training examples, most similar first. Rows follow the train split.
pub fn mine_candidates(
    params: &BiEncoderParams,
    registry: &DatasetRegistry,
    task_id: &str,
    k: usize,
) -> Result<Vec<(String, Vec<String>)>> {
    let spec = registry.task(task_id)?;
    let train = registry.train(task_id);
    if train.is_empty() {
        return Err(Error::State(format!("task `{task_id}` has an empty train split")));
    }
    let demos = encode_corpus(params, train, spec)?;
    Ok(par::map_range(train.len(), |q| {
        let query = params.encode_query(spec, &train[q].input);
        let sims: Vec<f64> = demos.iter().map(|d| dot(&query, d)).collect();
        let ids = top_k_indices(&sims, k, Some(q))
            .into_iter()
            .map(|i| train[i].example_id.clone())
            .collect();
        (train[q].example_id.clone(), ids)
    }))
}
