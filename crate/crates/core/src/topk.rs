//! Exact one-shot Top-k: an in-order walk over the implicit search tree that
//! random geometric heights induce on the participants.

use crate::model::{DataItem, HeightSource};
use crate::netsim::{CostLedger, HeightIndex, HeightPredicate, Network, Probe, ProbeTarget, Window};

#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    /// Ascending. On failure, every participant.
    pub items: Vec<DataItem>,
    pub ledger: CostLedger,
    /// Fewer than `k` participants exist.
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopKParams {
    pub k: usize,
    pub h_max: u32,
    /// Stop only at an `h = 0` leaf holding exactly `k` items, as the literal
    /// recursion does, instead of as soon as the k-th item is emitted.
    pub strict: bool,
}

impl TopKParams {
    pub fn new(k: usize, h_max: u32) -> Self {
        TopKParams { k, h_max, strict: false }
    }
}

struct Walk<'a, T: ?Sized> {
    net: &'a mut Network,
    target: &'a T,
    params: TopKParams,
    instance: u32,
    out: Vec<DataItem>,
    done: bool,
}

impl<T: ProbeTarget + ?Sized> Walk<'_, T> {
    fn emit(&mut self, d: DataItem) {
        self.out.push(d);
        if !self.params.strict && self.out.len() == self.params.k {
            self.done = true;
        }
    }

    fn rec(&mut self, lower: Option<DataItem>, upper: Option<DataItem>, h: u32) {
        if self.done {
            return;
        }
        if h == 0 {
            if self.out.len() == self.params.k {
                self.done = true;
            }
            return;
        }
        let pred = HeightPredicate::AtLeast(h);
        let probe = Probe::new(Window::between(lower, upper), pred).instance(self.instance);
        let responses = self.net.probe(probe, self.target);
        if responses.is_empty() {
            return self.rec(lower, upper, h - 1);
        }
        let mut left = lower;
        for r in responses {
            self.rec(left, Some(r), h - 1);
            if self.done {
                return;
            }
            self.emit(r);
            if self.done {
                return;
            }
            left = Some(r);
        }
        self.rec(left, upper, h - 1);
    }
}

/// Runs the walk against whatever answers probes. The top probe asks for
/// `h_i >= h_max`, which is the same as clamping heights at `h_max`.
pub fn top_k_walk<T: ProbeTarget + ?Sized>(net: &mut Network, target: &T, params: TopKParams, instance: u32) -> TopKResult {
    let before = net.ledger();
    let mut walk = Walk { net, target, params, instance, out: Vec::new(), done: params.k == 0 };
    walk.rec(None, None, params.h_max.max(1));
    let failed = walk.out.len() < params.k;
    let items = walk.out;
    TopKResult { items, ledger: net.ledger() - before, failed }
}

/// Top-k over `participants` (ascending items), with per-node heights drawn
/// from `heights` at draw number `draw`.
pub fn run_top_k(
    net: &mut Network,
    participants: &[DataItem],
    params: TopKParams,
    heights: &HeightSource,
    draw: u64,
) -> TopKResult {
    let index = HeightIndex::from_heights(participants, 1, |_, it| heights.height(it.owner, draw).get());
    top_k_walk(net, &index, params, 0)
}

/// `k + ((1 - phi) / phi) log_{1/phi}(N) + 1`, the expected response count bound.
pub fn message_bound(k: usize, n: usize, phi: f64) -> f64 {
    k as f64 + (1.0 - phi) / phi * crate::model::log_inv_phi(n as f64, phi) + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Height, NodeId, NodeState};

    fn nodes(spec: &[(i64, u32)]) -> Vec<NodeState> {
        spec.iter()
            .enumerate()
            .map(|(i, &(v, h))| {
                let id = NodeId::from_index(i);
                NodeState { id, item: DataItem::new(v, id), height: Height::new(h).unwrap(), dirty: false }
            })
            .collect()
    }

    #[test]
    fn singleton() {
        let ns = nodes(&[(7, 1)]);
        let mut net = Network::new();
        let r = top_k_walk(&mut net, &ns[..], TopKParams::new(1, 3), 0);
        assert_eq!(r.items, vec![ns[0].item]);
        assert!(!r.failed);
    }

    #[test]
    fn too_few_nodes_fails_with_everything() {
        let ns = nodes(&[(5, 1), (3, 2), (4, 1), (1, 3), (2, 1)]);
        let mut net = Network::new();
        let r = top_k_walk(&mut net, &ns[..], TopKParams::new(9, 3), 0);
        assert!(r.failed);
        assert_eq!(r.items.iter().map(|d| d.value).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn hand_traced_walk() {
        // values 1..=6 with heights 1,3,1,2,1,1; k = 3, h_max = 3.
        let ns = nodes(&[(1, 1), (2, 3), (3, 1), (4, 2), (5, 1), (6, 1)]);
        let mut net = Network::traced();
        let r = top_k_walk(&mut net, &ns[..], TopKParams::new(3, 3), 0);
        assert_eq!(r.items.iter().map(|d| d.value).collect::<Vec<_>>(), vec![1, 2, 3]);
        // (-inf,inf)>=3 -> {2}; (-inf,2)>=2 -> {}; (-inf,2)>=1 -> {1};
        // (-inf,1)>=0 leaf; emit 1; (1,2) leaf; emit 2; (2,inf)>=2 -> {4};
        // (2,4)>=1 -> {3}; emit 3 -> done.
        assert_eq!(r.ledger, CostLedger { broadcasts: 5, unicasts: 4, rounds: 5 });
    }

    #[test]
    fn strict_mode_costs_at_least_as_much() {
        let ns = nodes(&[(1, 1), (2, 3), (3, 1), (4, 2), (5, 1), (6, 1)]);
        let mut a = Network::new();
        let mut b = Network::new();
        let fast = top_k_walk(&mut a, &ns[..], TopKParams::new(3, 3), 0);
        let strict = top_k_walk(&mut b, &ns[..], TopKParams { strict: true, ..TopKParams::new(3, 3) }, 0);
        assert_eq!(fast.items, strict.items);
        assert!(strict.ledger.total_messages() >= fast.ledger.total_messages());
    }

    #[test]
    fn bound_at_half() {
        assert!((message_bound(10, 4096, 0.5) - 23.0).abs() < 1e-9);
    }
}
