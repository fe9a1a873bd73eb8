use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rankmon::harness::oracle::{in_window, verify_against_oracle, Answer, Oracle, Verdict};
use rankmon::kselect::{run_cofasel, run_cofasel_amp, SelectCtx};
use rankmon::model::{oracle_rank, HeightSource, NodeId, NodeState, Population};
use rankmon::netsim::{HeightIndex, HeightPredicate, Probe, ProbeTarget, Window};
use rankmon::queries::{query_top_k, QueryParams};
use rankmon::selemon::{LevelStatus, Monitor};
use rankmon::topk::{run_top_k, TopKParams};
use rankmon::workload::{gen_random_updates, QuerySpec, Scenario};
use rankmon::{Config, DataItem, Height, Network};

fn bound(pop: &Population, pick: Option<usize>) -> Option<DataItem> {
    pick.map(|i| pop.sorted()[i % pop.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn height_index_answers_like_a_full_scan(
        values in prop::collection::vec(0i64..40, 1..80),
        hs in prop::collection::vec(1u32..9, 80),
        lo in prop::option::of(0usize..80),
        hi in prop::option::of(0usize..80),
        h in 1u32..10,
        exact in any::<bool>(),
    ) {
        let pop = Population::from_values(&values);
        let height_of = |id: NodeId| hs[id.index()];
        let states: Vec<NodeState> = pop.nodes().iter()
            .map(|s| NodeState { height: Height::new(height_of(s.id)).unwrap(), ..*s })
            .collect();
        let index = HeightIndex::from_heights(pop.sorted(), 1, |_, it| height_of(it.owner));
        let pred = if exact { HeightPredicate::Exactly(h) } else { HeightPredicate::AtLeast(h) };
        let probe = Probe::new(Window::between(bound(&pop, lo), bound(&pop, hi)), pred);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        index.respond(&probe, &mut a);
        states[..].respond(&probe, &mut b);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn top_k_returns_the_k_smallest(
        values in prop::collection::vec(-20i64..20, 1..120),
        k in 1usize..130,
        h_max in 1u32..12,
        seed in any::<u64>(),
        strict in any::<bool>(),
    ) {
        let pop = Population::from_values(&values);
        let heights = HeightSource::new(seed, 0.5);
        let mut net = Network::new();
        let params = TopKParams { strict, ..TopKParams::new(k, h_max) };
        let res = run_top_k(&mut net, pop.sorted(), params, &heights, 0);
        let mut sorted: Vec<DataItem> = pop.sorted().to_vec();
        sorted.sort();
        prop_assert_eq!(res.failed, k > values.len());
        prop_assert_eq!(&res.items[..], &sorted[..k.min(values.len())]);
        // One probe per round, one unicast per response.
        prop_assert_eq!(res.ledger.rounds, res.ledger.broadcasts);
        prop_assert!(res.ledger.unicasts as usize >= res.items.len());
        prop_assert_eq!(res.ledger, net.ledger());
    }

    #[test]
    fn amplification_keeps_single_instance_rounds(
        n in 64usize..3000,
        k in 1usize..12,
        seed in any::<u64>(),
        lambda in 1.0f64..6.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pop = Population::permutation(n, &mut rng);
        let cfg = Config::new(n);
        let ctx = SelectCtx { participants: pop.sorted(), phi: cfg.phi, h_max: cfg.h_max, seed };
        let single = run_cofasel(&mut Network::new(), &ctx, k);
        let amp = run_cofasel_amp(&mut Network::new(), &ctx, k, 0.1, lambda);
        prop_assert_eq!(single.ledger.rounds, amp.ledger.rounds);
        prop_assert_eq!(single.ledger.broadcasts + single.ledger.unicasts, single.ledger.total_messages());
    }

    #[test]
    fn sketch_entries_track_current_items(
        seed in any::<u64>(),
        batches in prop::collection::vec(prop::collection::vec((0usize..4096, 0i64..4096), 0..200), 1..4),
    ) {
        let n = 4096;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mon = Monitor::new(Population::permutation(n, &mut rng), &Config::new(n).with_seed(seed)).unwrap();
        let mut net = Network::new();
        mon.initialize(&mut net);
        for batch in batches {
            for (i, v) in batch {
                mon.update(&mut net, NodeId::from_index(i), v).unwrap();
            }
            mon.refresh(&mut net);
            prop_assert!(!mon.is_dirty());
            for item in mon.sketch().by_height.values() {
                prop_assert_eq!(mon.population().node(item.owner).item, *item);
            }
            for state in &mon.sketch().levels {
                prop_assert!(state.status != LevelStatus::Unfilled);
                if state.status == LevelStatus::Filled {
                    let (a, r) = (state.alarm.unwrap(), state.rep.unwrap());
                    prop_assert!(a.item < r.item, "alarm sits below the representative");
                }
            }
        }
        let total = net.ledger();
        prop_assert_eq!(total.total_messages(), total.broadcasts + total.unicasts);
    }

    #[test]
    fn multi_step_top_k_is_exact(seed in any::<u64>(), m in 0usize..64, k in 1usize..20) {
        let n = 512;
        let cfg = Config::new(n).with_seed(seed);
        let scn = gen_random_updates(n, m, 6, 1000, seed, Some(QuerySpec::TopK { k })).unwrap();
        let values = scn.initial_values().unwrap();
        let mut oracle = Oracle::from_values(&values);
        let mut mon = Monitor::new(Population::from_values(&values), &cfg).unwrap();
        let mut net = Network::new();
        mon.initialize(&mut net);
        for (t, e) in scn.epochs.iter().enumerate().skip(1) {
            for &(id, v) in &e.updates {
                mon.update(&mut net, id, v).unwrap();
                oracle.apply(id, v);
            }
            let qp = QueryParams { phi: 0.5, h_max: cfg.h_max, amp_factor: 2.0, sample_const: 1.0, seed: seed ^ t as u64 };
            let before = net.ledger();
            let rep = query_top_k(&mut mon, &mut net, &oracle, k, qp).unwrap();
            prop_assert_eq!(rep.verdict, Verdict::Pass);
            prop_assert_eq!(rep.items, oracle.smallest(k));
            prop_assert_eq!(rep.ledger, net.ledger() - before);
            prop_assert_eq!(mon.population().checksum(), oracle.checksum());
        }
    }

    #[test]
    fn oracle_rank_is_one_plus_smaller_count(values in prop::collection::vec(-5i64..5, 1..60), pick in 0usize..60) {
        let oracle = Oracle::from_values(&values);
        let items: Vec<DataItem> = oracle.items().collect();
        let d = items[pick % items.len()];
        let expect = 1 + items.iter().filter(|x| **x < d).count();
        prop_assert_eq!(oracle.rank(&d), Some(expect));
        prop_assert_eq!(oracle_rank(&items, &d).unwrap(), expect);
    }

    #[test]
    fn window_is_closed(k in 1usize..1000, quarter in 0u32..3) {
        let eps = quarter as f64 * 0.25;
        let hi = ((1.0 + eps) * k as f64).floor() as usize;
        let lo = ((1.0 - eps) * k as f64).ceil() as usize;
        prop_assert!(in_window(hi, k, eps));
        prop_assert!(!in_window(hi + 1, k, eps));
        prop_assert!(in_window(lo.max(1), k, eps));
        if lo > 1 {
            prop_assert!(!in_window(lo - 1, k, eps));
        }
    }

    #[test]
    fn scenario_text_round_trips(seed in any::<u64>(), n in 1usize..40, m in 0usize..40, t in 0usize..5) {
        let m = m.min(n);
        let q = Some(QuerySpec::KSelect { k: n.max(1), eps: 0.25, delta: 0.1 });
        let scn = gen_random_updates(n, m, t, 100, seed, q).unwrap();
        prop_assert_eq!(Scenario::parse(&scn.to_text()).unwrap(), scn);
    }
}

#[test]
fn top_k_answer_against_oracle() {
    let oracle = Oracle::from_values(&[5, 3, 9, 1]);
    let best = oracle.smallest(2);
    assert_eq!(verify_against_oracle(&oracle, 2, &Answer::TopK(&best)), (Verdict::Pass, Some(2)));
    let wrong = [best[0], oracle.smallest(3)[2]];
    assert_eq!(verify_against_oracle(&oracle, 2, &Answer::TopK(&wrong)).0, Verdict::Fail);
}
