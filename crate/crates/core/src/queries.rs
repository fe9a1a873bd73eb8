//! Multi-step queries: refresh the sketch if anything changed, take the
//! rough-rank item `d`, and run a one-shot protocol over `{d_i <= d}`.

use crate::error::{Error, Result};
use crate::harness::oracle::{verify_against_oracle, Answer, Oracle, Verdict};
use crate::kselect::{run_approx_k_select, ApproxParams, SelectCtx};
use crate::model::{derive_seed, DataItem, HeightSource, Stream};
use crate::netsim::{CostLedger, Network, Payload};
use crate::selemon::{Monitor, RoughRank};
use crate::topk::{run_top_k, TopKParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    TopK,
    KSelect,
}

impl QueryKind {
    pub fn tag(self) -> &'static str {
        match self {
            QueryKind::TopK => "TOPK",
            QueryKind::KSelect => "KSEL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub kind: QueryKind,
    pub k: usize,
    /// Top-k: the k smallest, ascending. k-select: the selected item.
    pub items: Vec<DataItem>,
    /// Everything this query cost, refresh included.
    pub ledger: CostLedger,
    /// The refresh share of `ledger`.
    pub refresh: CostLedger,
    pub verdict: Verdict,
    /// The restricted run could not answer and a full run followed.
    pub fallback_used: bool,
    /// Rough rank had no representative; the protocol ran over every node.
    pub full_population: bool,
    pub result_rank: Option<usize>,
}

/// Per-query protocol knobs that do not live in the sketch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryParams {
    pub phi: f64,
    pub h_max: u32,
    pub amp_factor: f64,
    pub sample_const: f64,
    /// Seed of this query; every random choice derives from it.
    pub seed: u64,
}

fn refresh_if_dirty(mon: &mut Monitor, net: &mut Network) -> CostLedger {
    let before = net.ledger();
    if mon.is_dirty() {
        mon.refresh(net);
    }
    net.ledger() - before
}

fn check_k(mon: &Monitor, k: usize) -> Result<()> {
    let n = mon.population().len();
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange { k, n });
    }
    Ok(())
}

pub fn query_top_k(mon: &mut Monitor, net: &mut Network, oracle: &Oracle, k: usize, qp: QueryParams) -> Result<QueryReport> {
    check_k(mon, k)?;
    let before = net.ledger();
    let refresh = refresh_if_dirty(mon, net);
    let (level, rough) = mon.rough_rank(k)?;
    let heights = HeightSource::new(derive_seed(qp.seed, &[Stream::Heights as u64]), qp.phi);
    let pop = mon.population();
    let (result, fallback_used, full_population) = match rough {
        RoughRank::Item(d) => {
            net.broadcast_value(Payload::Bound(d));
            let restricted = pop.up_to(Some(d));
            let cap = qp.h_max.min(mon.class_top(level));
            let first = run_top_k(net, restricted, TopKParams::new(k, cap), &heights, 0);
            if first.failed {
                (run_top_k(net, pop.sorted(), TopKParams::new(k, qp.h_max), &heights, 1), true, false)
            } else {
                (first, false, false)
            }
        }
        RoughRank::FullPopulation => (run_top_k(net, pop.sorted(), TopKParams::new(k, qp.h_max), &heights, 0), false, true),
    };
    let answer = Answer::TopK(&result.items);
    let (verdict, result_rank) = verify_against_oracle(oracle, k, &answer);
    Ok(QueryReport {
        kind: QueryKind::TopK,
        k,
        items: result.items,
        ledger: net.ledger() - before,
        refresh,
        verdict,
        fallback_used,
        full_population,
        result_rank,
    })
}

pub fn query_k_select(
    mon: &mut Monitor,
    net: &mut Network,
    oracle: &Oracle,
    k: usize,
    eps: f64,
    delta: f64,
    qp: QueryParams,
) -> Result<QueryReport> {
    check_k(mon, k)?;
    let before = net.ledger();
    let refresh = refresh_if_dirty(mon, net);
    let (level, rough) = mon.rough_rank(k)?;
    let pop = mon.population();
    let params = ApproxParams {
        eps,
        delta,
        delta_prime: 1.0 / (pop.len().max(2) as f64).log2(),
        amp_factor: qp.amp_factor,
        sample_const: qp.sample_const,
    };
    let full = SelectCtx { participants: pop.sorted(), phi: qp.phi, h_max: qp.h_max, seed: qp.seed };
    let (item, fallback_used, full_population) = match rough {
        RoughRank::Item(d) => {
            net.broadcast_value(Payload::Bound(d));
            let restricted = pop.up_to(Some(d));
            if restricted.len() >= k {
                let ctx = SelectCtx { participants: restricted, h_max: qp.h_max.min(mon.class_top(level)), ..full };
                (run_approx_k_select(net, &ctx, k, params).item, false, false)
            } else {
                let ctx = SelectCtx { seed: derive_seed(qp.seed, &[1]), ..full };
                (run_approx_k_select(net, &ctx, k, params).item, true, false)
            }
        }
        RoughRank::FullPopulation => (run_approx_k_select(net, &full, k, params).item, false, true),
    };
    let items: Vec<DataItem> = item.into_iter().collect();
    let answer = Answer::KSelect { item, eps };
    let (verdict, result_rank) = verify_against_oracle(oracle, k, &answer);
    Ok(QueryReport {
        kind: QueryKind::KSelect,
        k,
        items,
        ledger: net.ledger() - before,
        refresh,
        verdict,
        fallback_used,
        full_population,
        result_rank,
    })
}
