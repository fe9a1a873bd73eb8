//! Approximate selection: constant-factor selection by height descent, its
//! median amplification, and sampling-based (eps, delta) k-select.

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::model::{log_inv_phi, stream_rng, DataItem, HeightSource, Stream};
use crate::netsim::{CostLedger, HeightIndex, HeightPredicate, Instances, Network, Payload, Probe, ProbeBatch, ProbeTarget, Window};
use crate::topk::{run_top_k, TopKParams, TopKResult};

/// Height schedule of one descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descent {
    /// First probed height; asks for `h_i >= h_top`.
    pub h_top: u32,
    /// Last probed height.
    pub h_min: u32,
    pub alpha: f64,
    /// 1-based index of the response chosen at `h_min`.
    pub j_star: usize,
    /// `h_min` exceeded `h_top` and was lowered to it.
    pub h_min_clamped: bool,
}

impl Descent {
    /// Schedule for rank `k`: `h_min = floor(log_{1/phi}(7k)) + 1`, `alpha` its
    /// fractional part, `j* = max(1, round((1/phi)^alpha))`. An integral
    /// logarithm uses `alpha = 1` and `h_min = log_{1/phi}(7k)`.
    pub fn for_rank(k: usize, phi: f64, h_max: u32) -> Self {
        let x = log_inv_phi(7.0 * k as f64, phi);
        let nearest = x.round();
        let (h_min, alpha) = if (x - nearest).abs() < 1e-9 {
            (nearest as u32, 1.0)
        } else {
            (x.floor() as u32 + 1, x - x.floor())
        };
        let j_star = ((1.0 / phi).powf(alpha).round() as usize).max(1);
        Self::clamped(h_max, h_min.max(1), alpha, j_star)
    }

    /// Descent with `j* = 1` ending at `h_min`.
    pub fn to_height(h_max: u32, h_min: u32) -> Self {
        Self::clamped(h_max, h_min.max(1), 0.0, 1)
    }

    fn clamped(h_top: u32, h_min: u32, alpha: f64, j_star: usize) -> Self {
        let h_top = h_top.max(1);
        Descent { h_top, h_min: h_min.min(h_top), alpha, j_star, h_min_clamped: h_min > h_top }
    }

    pub fn levels(&self) -> u32 {
        self.h_top - self.h_min + 1
    }
}

/// Outcome of one descent instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InstanceOutcome {
    /// `None` stands for "no item", which orders above every item.
    pub item: Option<DataItem>,
    /// Fewer than `j*` responses arrived at `h_min`.
    pub shortfall: bool,
}

/// Runs one descent per target in lockstep: all instances probe the same
/// height in one batch, so rounds equal those of a single instance. The
/// observer sees `(instance, height, responses)` for every probe.
pub fn descend_instances<T: ProbeTarget>(
    net: &mut Network,
    targets: &[T],
    descent: Descent,
    mut observe: impl FnMut(u32, u32, &[DataItem]),
) -> Vec<InstanceOutcome> {
    let mut state: Vec<InstanceOutcome> = vec![InstanceOutcome::default(); targets.len()];
    let router = Instances(targets);
    for h in (descent.h_min..=descent.h_top).rev() {
        let pred = if h == descent.h_top { HeightPredicate::AtLeast(h) } else { HeightPredicate::Exactly(h) };
        let batch = ProbeBatch {
            probes: state
                .iter()
                .enumerate()
                .map(|(i, s)| Probe::new(Window::below(s.item), pred).instance(i as u32))
                .collect(),
        };
        let responses = net.issue_probe_batch(&batch, &router);
        for (i, rs) in responses.iter().enumerate() {
            observe(i as u32, h, rs);
            let s = &mut state[i];
            if h > descent.h_min {
                if let Some(first) = rs.first() {
                    s.item = Some(*first);
                }
            } else if rs.len() >= descent.j_star {
                s.item = Some(rs[descent.j_star - 1]);
            } else {
                s.shortfall = true;
                if let Some(last) = rs.last() {
                    s.item = Some(*last);
                }
            }
        }
    }
    state
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectMeta {
    pub descent: Descent,
    pub instances: Vec<InstanceOutcome>,
    pub shortfall: bool,
    /// Samples received by the sampling step, when there is one.
    pub samples: Option<usize>,
    /// Coin probability of the sampling step.
    pub coin_p: Option<f64>,
    /// Participants eligible to sample (`d_i < d`).
    pub eligible: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectResult {
    /// `None` when no participant ever responded.
    pub item: Option<DataItem>,
    pub ledger: CostLedger,
    pub meta: SelectMeta,
}

/// Sampling parameters: `S = (1/eps^2) ln(2/delta)`, `p = min(1, c_s S / k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub eps: f64,
    pub delta: f64,
    pub sample_size: f64,
    pub coin_p: f64,
}

impl SampleParams {
    pub fn new(eps: f64, delta: f64, sample_const: f64, k: usize) -> Self {
        let sample_size = (2.0 / delta).ln() / (eps * eps);
        let coin_p = (sample_const * sample_size / k as f64).min(1.0);
        SampleParams { eps, delta, sample_size, coin_p }
    }

    /// The `ceil(p k)`-th smallest sample is the output.
    pub fn target_index(&self, k: usize) -> usize {
        ((self.coin_p * k as f64) - 1e-9).ceil().max(1.0) as usize
    }
}

/// `max(1, ceil(lambda ln(1/delta')))`.
pub fn amp_instances(amp_factor: f64, delta_prime: f64) -> usize {
    ((amp_factor * (1.0 / delta_prime).ln() - 1e-9).ceil() as usize).max(1)
}

/// Inputs shared by every one-shot select protocol.
#[derive(Debug, Clone, Copy)]
pub struct SelectCtx<'a> {
    /// Participants in ascending order.
    pub participants: &'a [DataItem],
    pub phi: f64,
    pub h_max: u32,
    /// Seed of this protocol execution; instance streams derive from it.
    pub seed: u64,
}

impl SelectCtx<'_> {
    fn indexes(&self, instances: usize, floor: u32) -> Vec<HeightIndex<'_>> {
        (0..instances)
            .map(|i| {
                let mut rng = stream_rng(self.seed, Stream::Heights, &[i as u64]);
                HeightIndex::sparse(self.participants, self.phi, floor, &mut rng)
            })
            .collect()
    }
}

fn lower_median(outcomes: &[InstanceOutcome]) -> Option<DataItem> {
    let mut items: Vec<Option<DataItem>> = outcomes.iter().map(|o| o.item).collect();
    // None sorts last: it stands for +infinity.
    items.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    items[(items.len() - 1) / 2]
}

fn announce(net: &mut Network, item: Option<DataItem>) {
    match item {
        Some(d) => net.broadcast_value(Payload::Bound(d)),
        None => net.broadcast_value(Payload::Note("no item")),
    }
}

fn amplified(net: &mut Network, ctx: &SelectCtx<'_>, k: usize, instances: usize) -> SelectResult {
    let before = net.ledger();
    let descent = Descent::for_rank(k, ctx.phi, ctx.h_max);
    let targets = ctx.indexes(instances, descent.h_min);
    let outcomes = descend_instances(net, &targets, descent, |_, _, _| {});
    let item = lower_median(&outcomes);
    announce(net, item);
    SelectResult {
        item,
        ledger: net.ledger() - before,
        meta: SelectMeta {
            descent,
            shortfall: outcomes.iter().any(|o| o.shortfall),
            instances: outcomes,
            samples: None,
            coin_p: None,
            eligible: None,
        },
    }
}

/// One CoFaSel instance followed by a broadcast of its output.
pub fn run_cofasel(net: &mut Network, ctx: &SelectCtx<'_>, k: usize) -> SelectResult {
    amplified(net, ctx, k, 1)
}

/// Median of `max(1, ceil(lambda ln(1/delta')))` CoFaSel instances run in
/// lockstep.
pub fn run_cofasel_amp(net: &mut Network, ctx: &SelectCtx<'_>, k: usize, delta_prime: f64, amp_factor: f64) -> SelectResult {
    amplified(net, ctx, k, amp_instances(amp_factor, delta_prime))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxParams {
    pub eps: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub amp_factor: f64,
    pub sample_const: f64,
}

/// CoFaSelAmp for a bound `d`, then every participant below `d` reports with
/// probability `p`; the output is the `ceil(p k)`-th smallest report.
pub fn run_approx_k_select(net: &mut Network, ctx: &SelectCtx<'_>, k: usize, params: ApproxParams) -> SelectResult {
    let before = net.ledger();
    let pre = run_cofasel_amp(net, ctx, k, params.delta_prime, params.amp_factor);
    let sp = SampleParams::new(params.eps, params.delta, params.sample_const, k);
    let bound = pre.item;
    let eligible = match bound {
        Some(d) => &ctx.participants[..ctx.participants.partition_point(|x| *x < d)],
        None => ctx.participants,
    };
    let mut rng = stream_rng(ctx.seed, Stream::Coins, &[]);
    let samples = net.in_round(|net| {
        net.broadcast_value(Payload::SampleRequest { bound, p: sp.coin_p });
        let picked = coin_positions(eligible.len(), sp.coin_p, &mut rng);
        let mut samples = Vec::with_capacity(picked.len());
        for pos in picked {
            let it = eligible[pos];
            net.unicast_to_server(it.owner, Payload::Sample(it));
            samples.push(it);
        }
        samples
    });
    let target = sp.target_index(k);
    let (item, short) = if samples.len() >= target {
        (Some(samples[target - 1]), false)
    } else {
        (bound.or(samples.last().copied()), true)
    };
    SelectResult {
        item,
        ledger: net.ledger() - before,
        meta: SelectMeta {
            shortfall: short || pre.meta.shortfall,
            samples: Some(samples.len()),
            coin_p: Some(sp.coin_p),
            eligible: Some(eligible.len()),
            ..pre.meta
        },
    }
}

/// Positions in `0..len` whose independent `p`-coin succeeds, ascending.
fn coin_positions<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<usize> {
    if p >= 1.0 {
        return (0..len).collect();
    }
    let gaps = Geometric::new(p).expect("coin probability lies in (0, 1)");
    let mut out = Vec::new();
    let mut pos = 0u64;
    loop {
        pos += gaps.sample(rng);
        if pos >= len as u64 {
            return out;
        }
        out.push(pos as usize);
        pos += 1;
    }
}

/// Top-k through a selection pre-pass: descend to
/// `h' = ceil(log_{1/phi}(14k)) + c0`, broadcast the smallest item `d` found
/// there, run Top-k over `{d_i <= d}`, and fall back to all participants if
/// that set holds fewer than `k` items.
pub fn run_top_k_via_select(net: &mut Network, ctx: &SelectCtx<'_>, k: usize, c0: u32) -> (TopKResult, bool) {
    let before = net.ledger();
    let h_prime = (log_inv_phi(14.0 * k as f64, ctx.phi) - 1e-9).ceil() as u32 + c0;
    let descent = Descent::to_height(ctx.h_max, h_prime);
    let targets = ctx.indexes(1, descent.h_min);
    let d = descend_instances(net, &targets, descent, |_, _, _| {})[0].item;
    announce(net, d);
    let restricted = match d {
        Some(d) => &ctx.participants[..ctx.participants.partition_point(|x| *x <= d)],
        None => ctx.participants,
    };
    let heights = HeightSource::new(crate::model::derive_seed(ctx.seed, &[Stream::Heights as u64, 1 << 32]), ctx.phi);
    let params = TopKParams::new(k, ctx.h_max.min(h_prime));
    let mut result = run_top_k(net, restricted, params, &heights, 0);
    let fallback = result.failed && restricted.len() < ctx.participants.len();
    if fallback {
        result = run_top_k(net, ctx.participants, TopKParams::new(k, ctx.h_max), &heights, 1);
    }
    result.ledger = net.ledger() - before;
    (result, fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeId;
    use rand::SeedableRng;

    fn items(n: usize) -> Vec<DataItem> {
        (0..n).map(|i| DataItem::new(i as i64, NodeId::from_index(i))).collect()
    }

    #[test]
    fn schedule_for_k16_half() {
        let d = Descent::for_rank(16, 0.5, 16);
        assert_eq!(d.h_min, 7);
        assert!((d.alpha - (112f64.log2() - 6.0)).abs() < 1e-12);
        assert!((d.alpha - 0.8074).abs() < 1e-4);
        assert_eq!(d.j_star, 2);
        assert!(!d.h_min_clamped);
    }

    #[test]
    fn integral_log_uses_alpha_one() {
        // 7k = 49 = 7^2 with 1/phi = 7.
        let d = Descent::for_rank(7, 1.0 / 7.0, 10);
        assert_eq!(d.h_min, 2);
        assert_eq!(d.alpha, 1.0);
        assert_eq!(d.j_star, 7);
    }

    #[test]
    fn h_min_above_cap_is_clamped() {
        let d = Descent::for_rank(1000, 0.5, 5);
        assert_eq!(d.h_min, 5);
        assert!(d.h_min_clamped);
        assert_eq!(d.levels(), 1);
    }

    #[test]
    fn instance_count() {
        assert_eq!(amp_instances(24.0, (-1.0f64).exp()), 24);
        assert_eq!(amp_instances(0.01, 0.5), 1);
    }

    #[test]
    fn sample_params() {
        let sp = SampleParams::new(0.25, 0.1, 1.0, 100);
        assert!((sp.sample_size - 16.0 * 20f64.ln()).abs() < 1e-12);
        assert!((sp.coin_p - sp.sample_size / 100.0).abs() < 1e-12);
        assert_eq!(SampleParams::new(0.25, 0.1, 48.0, 100).coin_p, 1.0);
        assert_eq!(SampleParams::new(0.25, 0.1, 48.0, 100).target_index(100), 100);
    }

    #[test]
    fn single_participant() {
        let its = items(1);
        let ctx = SelectCtx { participants: &its, phi: 0.5, h_max: 1, seed: 3 };
        let mut net = Network::new();
        let r = run_cofasel(&mut net, &ctx, 1);
        assert_eq!(r.item, Some(its[0]));
    }

    #[test]
    fn amp_rounds_match_single() {
        let its = items(4096);
        let ctx = SelectCtx { participants: &its, phi: 0.5, h_max: 12, seed: 9 };
        let mut a = Network::new();
        let mut b = Network::new();
        let one = run_cofasel(&mut a, &ctx, 4);
        let many = run_cofasel_amp(&mut b, &ctx, 4, 0.1, 24.0);
        assert_eq!(one.ledger.rounds, many.ledger.rounds);
        assert_eq!(one.ledger.rounds as u32, 12 - one.meta.descent.h_min + 2);
        assert_eq!(many.meta.instances.len(), 56);
    }

    #[test]
    fn exhaustive_sampling_is_exact() {
        let its = items(2000);
        let ctx = SelectCtx { participants: &its, phi: 0.5, h_max: 11, seed: 21 };
        let params = ApproxParams { eps: 0.25, delta: 0.1, delta_prime: 0.1, amp_factor: 24.0, sample_const: 48.0 };
        for seed in 0..20 {
            let ctx = SelectCtx { seed, ..ctx };
            let mut net = Network::new();
            let r = run_approx_k_select(&mut net, &ctx, 10, params);
            let d = r.item.unwrap();
            assert_eq!(r.meta.coin_p, Some(1.0));
            assert_eq!(d.value, 9, "rank-10 item has value 9");
            assert_eq!(r.ledger.rounds as u32, 11 - r.meta.descent.h_min + 3);
        }
    }

    #[test]
    fn via_select_exact() {
        let its = items(3000);
        for seed in 0..30 {
            let ctx = SelectCtx { participants: &its, phi: 0.5, h_max: 12, seed };
            let mut net = Network::new();
            let (r, _) = run_top_k_via_select(&mut net, &ctx, 20, 1);
            assert_eq!(r.items, its[..20].to_vec());
        }
    }

    #[test]
    fn coin_positions_respects_probability() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let total: usize = (0..200).map(|_| coin_positions(1000, 0.1, &mut rng).len()).sum();
        let mean = total as f64 / 200.0;
        assert!((mean - 100.0).abs() < 3.0, "mean {mean}");
    }

}
