//! The mixed training objective evaluated end to end through the encoder.

use crate::encoder::{dot, BiEncoderParams, EncodingTape};
use crate::error::{Error, Result};
use crate::par;

use super::loss::{loss_inbatch, loss_rank, loss_total};
use super::optim::EncoderGrads;

/// One query's sampled candidates within a [`MicroBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryList {
    /// Indices into [`MicroBatch::columns`].
    pub columns: Vec<usize>,
    /// Rank of each listed candidate among the list (1 = best).
    pub ranks: Vec<usize>,
    /// Column holding the query example itself, excluded from its softmax.
    pub excluded: Option<usize>,
}

impl QueryList {
    pub fn positive(&self) -> Option<usize> {
        self.ranks
            .iter()
            .position(|r| *r == 1)
            .map(|i| self.columns[i])
    }
}

/// Tokenized training batch: every query, and the union of all sampled
/// candidates as columns shared by all queries' in-batch softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroBatch {
    pub queries: Vec<Vec<u32>>,
    pub columns: Vec<Vec<u32>>,
    pub lists: Vec<QueryList>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValue {
    pub total: f64,
    pub rank: f64,
    pub inbatch: f64,
}

/// Value of `λ·mean(rank loss) + (1 − λ)·mean(in-batch loss)` and its
/// gradient with respect to every encoder parameter.
pub fn objective(
    params: &BiEncoderParams,
    batch: &MicroBatch,
    lambda: f64,
) -> Result<(ObjectiveValue, EncoderGrads)> {
    if batch.queries.len() != batch.lists.len() {
        return Err(Error::Contract("one candidate list per query required".to_string()));
    }
    let n_queries = batch.queries.len();
    if n_queries == 0 {
        return Ok((ObjectiveValue::default(), EncoderGrads::zeros_like(params)));
    }
    let query_tapes: Vec<EncodingTape> = par::map(&batch.queries, |t| params.query_tower.forward(t));
    let column_tapes: Vec<EncodingTape> = par::map(&batch.columns, |t| params.demo_tower.forward(t));
    let sims: Vec<Vec<f64>> = query_tapes
        .iter()
        .map(|q| column_tapes.iter().map(|c| dot(&q.output, &c.output)).collect())
        .collect();

    let mut grad_sims = vec![vec![0.0; batch.columns.len()]; n_queries];
    let scale = 1.0 / n_queries as f64;

    let mut rank_value = 0.0;
    let mut rows = Vec::with_capacity(n_queries);
    let mut positives = Vec::with_capacity(n_queries);
    for (q, list) in batch.lists.iter().enumerate() {
        if list.columns.len() != list.ranks.len() || list.columns.is_empty() {
            return Err(Error::Contract(format!("malformed candidate list for query {q}")));
        }
        let listed: Vec<f64> = list.columns.iter().map(|&c| sims[q][c]).collect();
        let (v, g) = loss_rank(&listed, &list.ranks);
        rank_value += v * scale;
        for (&c, gv) in list.columns.iter().zip(&g) {
            grad_sims[q][c] += lambda * scale * gv;
        }
        let mut row = sims[q].clone();
        if let Some(x) = list.excluded {
            row[x] = f64::NEG_INFINITY;
        }
        rows.push(row);
        positives.push(
            list.positive()
                .ok_or_else(|| Error::Contract(format!("query {q} has no rank-1 candidate")))?,
        );
    }
    let (inbatch_value, ib_grads) = loss_inbatch(&rows, &positives)?;
    for (gq, row) in grad_sims.iter_mut().zip(&ib_grads) {
        for (g, r) in gq.iter_mut().zip(row) {
            *g += (1.0 - lambda) * r;
        }
    }

    let d = params.dim;
    let mut grads = EncoderGrads::zeros_like(params);
    for (q, tape) in query_tapes.iter().enumerate() {
        let mut g_out = vec![0.0; d];
        for (c, ct) in column_tapes.iter().enumerate() {
            let gs = grad_sims[q][c];
            if gs != 0.0 {
                for (o, v) in g_out.iter_mut().zip(&ct.output) {
                    *o += gs * v;
                }
            }
        }
        params.query_tower.backward(tape, &g_out, &mut grads.query);
    }
    for (c, tape) in column_tapes.iter().enumerate() {
        let mut g_out = vec![0.0; d];
        for (q, qt) in query_tapes.iter().enumerate() {
            let gs = grad_sims[q][c];
            if gs != 0.0 {
                for (o, v) in g_out.iter_mut().zip(&qt.output) {
                    *o += gs * v;
                }
            }
        }
        params.demo_tower.backward(tape, &g_out, &mut grads.demo);
    }

    let value = ObjectiveValue {
        total: loss_total(rank_value, inbatch_value, lambda),
        rank: rank_value,
        inbatch: inbatch_value,
    };
    Ok((value, grads))
}
