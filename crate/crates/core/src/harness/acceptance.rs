//! The acceptance criteria, one function each. Every function runs its own
//! experiment with a fixed seed and returns an [`Outcome`]; nothing here
//! panics on a failed criterion.

use std::time::Instant;

use crate::error::Result;
use crate::harness::experiments::{
    initialized_monitor, rank_grid, run_experiment, run_scenario, Experiment, ExperimentOutput, Protocol,
};
use crate::harness::oracle::Oracle;
use crate::harness::report::{write_csv, write_traces};
use crate::harness::stats::{linear_fit, Frequency, Summary};
use crate::harness::{run_trials, trial_seed, Constants, TrialRecord, Verdict};
use crate::kselect::{run_cofasel, run_cofasel_amp, SelectCtx};
use crate::model::{default_h_max, derive_seed, log_inv_phi, stream_rng, Config, Population, Stream};
use crate::netsim::Network;
use crate::selemon::RoughRank;
use crate::workload::{check_adversary, gen_adversary_min, geocoin_check};

/// Root of every acceptance seed; calibration uses `Constants::pilot_seed`.
pub const ACCEPT_ROOT: u64 = 0x5eed_acce;

/// Criteria whose targets cannot be met as stated. They still run and print
/// their numbers; the decisions ledger holds the analysis.
pub const KNOWN_RED: &[u8] = &[2, 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn known_red(&self) -> bool {
        KNOWN_RED.contains(&self.id)
    }

    pub fn line(&self) -> String {
        let tag = if self.pass { "[PASS]" } else { "[FAIL]" };
        let note = if !self.pass && self.known_red() { " (known red, see decisions ledger)" } else { "" };
        format!("{tag} C{} {}: {}{note}", self.id, self.name, self.detail)
    }
}

fn seed(id: u8) -> u64 {
    derive_seed(ACCEPT_ROOT, &[id as u64])
}

fn experiment(protocol: Protocol, cfg: Config, c: &Constants, id: u8) -> Experiment {
    let cfg = Config { amp_factor: c.amp_factor, sample_const: c.sample_const, ..cfg }.with_seed(seed(id));
    let mut e = Experiment::new(protocol, cfg);
    e.constants = c.clone();
    e
}

fn totals(rs: &[TrialRecord]) -> Summary {
    Summary::of(&rs.iter().map(|r| r.messages_total as f64).collect::<Vec<_>>())
}

fn unicasts(rs: &[TrialRecord]) -> Summary {
    Summary::of(&rs.iter().map(|r| r.messages_unicast as f64).collect::<Vec<_>>())
}

fn rounds(rs: &[TrialRecord]) -> Summary {
    Summary::of(&rs.iter().map(|r| r.rounds as f64).collect::<Vec<_>>())
}

/// `k + ((1 - phi)/phi) log_{1/phi} n + 1`.
pub fn top_k_bound(k: usize, n: usize, phi: f64) -> f64 {
    k as f64 + (1.0 - phi) / phi * log_inv_phi(n as f64, phi) + 1.0
}

pub fn c1_topk_exact(c: &Constants) -> Result<Outcome> {
    let start = Instant::now();
    let mut detail = Vec::new();
    let mut pass = true;
    for k in [1, 10, 64] {
        let mut e = experiment(Protocol::TopK, Config { h_max: 12, ..Config::new(4096) }, c, 1);
        e.k = k;
        e.trials = 2000;
        let rs = run_experiment(&e, false)?.records;
        let answered: Vec<_> = rs.iter().filter(|r| r.result_rank.is_some()).collect();
        let exact = answered.iter().filter(|r| r.verdict == Verdict::Pass).count();
        pass &= exact == answered.len();
        detail.push(format!("k={k} {exact}/{} exact", answered.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    Ok(Outcome { id: 1, name: "top-k exactness", pass, detail: format!("{}, {secs:.1}s", detail.join(", ")) })
}

pub fn c2_topk_messages(c: &Constants) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for phi in [0.25, 0.5, 0.75] {
        let n = 4096;
        let h_max = if phi == 0.5 { 12 } else { default_h_max(n, phi) };
        let mut e = experiment(Protocol::TopK, Config { h_max, ..Config::new(n).with_phi(phi) }, c, 2);
        e.k = 10;
        e.trials = 2000;
        let rs = run_experiment(&e, false)?.records;
        let bound = if phi == 0.5 { 23.0 } else { top_k_bound(10, n, phi) };
        let (t, u) = (totals(&rs), unicasts(&rs));
        pass &= t.mean_within(bound);
        detail.push(format!("phi={phi} total {:.2}+-{:.2} vs {bound:.2} (unicast {:.2})", t.mean, t.stderr, u.mean));
    }
    Ok(Outcome { id: 2, name: "top-k message bound", pass, detail: detail.join("; ") })
}

pub fn c3_topk_tradeoff(c: &Constants) -> Result<Outcome> {
    let mut msgs = Vec::new();
    let mut rnds = Vec::new();
    for phi in [0.25, 0.5, 0.75] {
        let n = 4096;
        let mut e = experiment(Protocol::TopK, Config { h_max: default_h_max(n, phi), ..Config::new(n).with_phi(phi) }, c, 3);
        e.k = 64;
        e.trials = 2000;
        let rs = run_experiment(&e, false)?.records;
        msgs.push(totals(&rs).mean);
        rnds.push(rounds(&rs).mean);
    }
    let pass = msgs[0] < msgs[1] && msgs[1] < msgs[2] && rnds[0] > rnds[1] && rnds[1] > rnds[2];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" / ");
    Ok(Outcome {
        id: 3,
        name: "top-k trade-off direction",
        pass,
        detail: format!("phi 1/4, 1/2, 3/4: messages {}, rounds {}", fmt(&msgs), fmt(&rnds)),
    })
}

pub fn c4_cofasel(c: &Constants) -> Result<Outcome> {
    let mut e = experiment(Protocol::CoFaSel, Config::new(1 << 16), c, 4);
    e.k = 16;
    e.trials = 5000;
    let rs = run_experiment(&e, false)?.records;
    let f = Frequency::of(rs.iter().map(|r| r.result_rank.is_some_and(|x| (16..=672).contains(&x))));
    Ok(Outcome {
        id: 4,
        name: "CoFaSel interval",
        pass: f.at_least(0.57),
        detail: format!("Pr[rank in [16, 672]] = {:.4} +- {:.4}, target 0.57", f.rate, f.stderr),
    })
}

pub fn c5_cofasel_amp(c: &Constants) -> Result<Outcome> {
    let cfg = Config { delta_prime: 0.1, amp_factor: c.amp_factor, ..Config::new(1 << 16) };
    let k = 16;
    let trials = 2000;
    let root = seed(5);
    let rows = run_trials(trials, |t| {
        let s = trial_seed(root, t);
        let mut rng = stream_rng(s, Stream::Population, &[]);
        let pop = Population::permutation(cfg.n, &mut rng);
        let ctx = SelectCtx { participants: pop.sorted(), phi: cfg.phi, h_max: cfg.h_max, seed: s };
        let single = run_cofasel(&mut Network::new(), &ctx, k);
        let amp = run_cofasel_amp(&mut Network::new(), &ctx, k, cfg.delta_prime, cfg.amp_factor);
        // Values are 0..n, so rank is value + 1.
        let ok = amp.item.is_some_and(|d| (k..=42 * k).contains(&(d.value as usize + 1)));
        (ok, single.ledger.rounds == amp.ledger.rounds)
    });
    let f = Frequency::of(rows.iter().map(|r| r.0));
    let same = rows.iter().all(|r| r.1);
    Ok(Outcome {
        id: 5,
        name: "CoFaSelAmp",
        pass: f.at_least(0.9) && same,
        detail: format!("Pr[rank in [k, 42k]] = {:.4} +- {:.4}, rounds equal single: {same}", f.rate, f.stderr),
    })
}

pub fn c6_approx_k_select(c: &Constants) -> Result<Outcome> {
    let cfg = Config { eps: 0.25, delta: 0.1, ..Config::new(1 << 16) };
    let (k, phi, h_max) = (100, cfg.phi, cfg.h_max);
    let mut e = experiment(Protocol::ApproKSel, cfg, c, 6);
    e.k = k;
    e.trials = 2000;
    let rs = run_experiment(&e, false)?.records;
    let fail = Frequency::of(rs.iter().map(|r| r.verdict == Verdict::Fail));
    // Independent of the descent code: h_min = floor(log_{1/phi} 7k) + 1.
    let h_min = ((7.0 * k as f64).ln() / (1.0 / phi).ln()).floor() as u32 + 1;
    let expect = (h_max - h_min.min(h_max) + 3) as u64;
    let exact = rs.iter().all(|r| r.rounds == expect);
    Ok(Outcome {
        id: 6,
        name: "ApproKSel",
        pass: fail.at_most(0.1) && exact,
        detail: format!("failure {:.4} +- {:.4}, rounds all {expect}: {exact}", fail.rate, fail.stderr),
    })
}

pub fn c7_geocoin(_: &Constants) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, phi) in [0.5, 0.75].into_iter().enumerate() {
        let r = geocoin_check(phi, 1 << 16, 100_000, derive_seed(seed(7), &[i as u64]));
        let target = (1.0 - phi) / phi;
        let worst = r.per_height.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
        pass &= worst <= 0.03;
        detail.push(format!("phi={phi} {} heights, max |E[C_h] - {target:.3}| = {worst:.4}", r.per_height.len()));
    }
    Ok(Outcome { id: 7, name: "geocoin cross-check", pass, detail: detail.join("; ") })
}

pub fn c8_rough_rank(_: &Constants) -> Result<Outcome> {
    let cfg = Config::new(1 << 16);
    let root = seed(8);
    let rows = run_trials(500, |t| -> Result<Vec<(bool, Option<bool>)>> {
        let mut net = Network::new();
        let mon = initialized_monitor(&cfg, trial_seed(root, t), &mut net)?;
        let oracle = Oracle::from_values(&mon.population().nodes().iter().map(|s| s.item.value).collect::<Vec<_>>());
        let p = mon.params();
        Ok(rank_grid(cfg.n)
            .into_iter()
            .map(|k| match mon.rough_rank(k) {
                Ok((level, RoughRank::Item(d))) => {
                    let rank = oracle.rank(&d).unwrap_or(0);
                    // Class membership: the representative's rank lies in its class's window.
                    let member = rank as f64 >= p.rank_boundary(level);
                    let upper = member.then(|| rank as f64 <= p.rank_boundary(level + 1));
                    (rank >= k, upper)
                }
                _ => (true, None),
            })
            .collect())
    });
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for r in rows {
        for (lo, up) in r? {
            lower.push(lo);
            upper.extend(up);
        }
    }
    let lo = Frequency::of(lower);
    let up = Frequency::of(upper);
    Ok(Outcome {
        id: 8,
        name: "SeleMon rough rank",
        pass: lo.at_least(0.9) && up.hits == up.count,
        detail: format!("rank >= k {:.4} +- {:.4}; upper boundary held {}/{}", lo.rate, lo.stderr, up.hits, up.count),
    })
}

pub fn c9_refresh(c: &Constants) -> Result<Outcome> {
    let mut means = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for m in [16, 256, 4096] {
        let mut e = experiment(Protocol::SeleMonRefresh, Config::new(1 << 16), c, 9);
        e.m = m;
        e.trials = 200;
        let rs = run_experiment(&e, false)?.records;
        let s = totals(&rs);
        let bound = c.bounds.c3 * 2.0 * (m as f64).log2() + c.bounds.c4;
        pass &= s.mean_within(bound);
        detail.push(format!("m={m} {:.1}+-{:.1} vs {bound:.1}", s.mean, s.stderr));
        means.push(s.mean);
    }
    let ratio = means[2] / means[0];
    pass &= means[2] > means[0] && ratio < 16.0;
    Ok(Outcome { id: 9, name: "REFRESH scaling", pass, detail: format!("{}; ratio {ratio:.2}", detail.join(", ")) })
}

fn query_rows(out: &ExperimentOutput) -> Vec<&TrialRecord> {
    out.records.iter().filter(|r| r.protocol != "init").collect()
}

pub fn c10_query_top_k(c: &Constants) -> Result<Outcome> {
    let n = 1 << 16;
    let k = 32;
    let mut pass = true;
    let mut detail = Vec::new();
    for m in [16, 256, 4096] {
        let mut e = experiment(Protocol::QueryTopK, Config::new(n), c, 10);
        e.k = k;
        e.m = m;
        e.epochs = 50;
        e.trials = 20;
        let out = run_experiment(&e, false)?;
        let q = query_rows(&out);
        let s = Summary::of(&q.iter().map(|r| r.messages_total as f64).collect::<Vec<_>>());
        let bound = k as f64 + c.bounds.c5 * ((m as f64).log2() + (n as f64).log2().log2()) + c.bounds.c6;
        let exact = q.iter().all(|r| r.verdict == Verdict::Pass);
        let fallback = q.iter().filter(|r| r.fallback_used).count();
        pass &= s.mean_within(bound) && exact;
        detail.push(format!("m={m} {:.1}+-{:.1} vs {bound:.1}, exact {exact}, fallback {fallback}/{}", s.mean, s.stderr, q.len()));
    }
    Ok(Outcome { id: 10, name: "multi-step top-k", pass, detail: detail.join("; ") })
}

pub fn c11_query_k_select(c: &Constants) -> Result<Outcome> {
    let cfg = Config { eps: 0.25, delta: 0.1, ..Config::new(1 << 16) };
    let mut e = experiment(Protocol::QueryKSelect, cfg, c, 11);
    e.k = 100;
    e.m = 256;
    e.epochs = 50;
    e.trials = 20;
    let out = run_experiment(&e, false)?;
    let q = query_rows(&out);
    let f = Frequency::of(q.iter().map(|r| r.verdict == Verdict::Fail));
    Ok(Outcome {
        id: 11,
        name: "multi-step k-select",
        pass: f.at_most(0.1),
        detail: format!("{} queries, failure {:.4} +- {:.4}", f.count, f.rate, f.stderr),
    })
}

pub fn c12_adversary(c: &Constants) -> Result<Outcome> {
    let n = 4096;
    let cfg = Config::new(n).with_seed(seed(12));
    let mut checked = 0;
    let mut broken = None;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, (m, horizon)) in [16, 64, 256].into_iter().flat_map(|m| [8, 16, 32].map(|t| (m, t))).enumerate() {
        let s = derive_seed(cfg.seed, &[i as u64]);
        let (scn, chosen) = gen_adversary_min(n, m, horizon, s)?;
        checked += 1;
        if let Err(e) = check_adversary(&scn, &chosen) {
            broken.get_or_insert(format!("m={m} T={horizon}: {e}"));
        }
        let cfg = Config { amp_factor: c.amp_factor, sample_const: c.sample_const, ..cfg.clone() };
        let run = run_scenario(&scn, &cfg, s, &mut Network::new())?;
        let exact = run.queries.iter().all(|q| q.report.verdict == Verdict::Pass);
        if !exact {
            broken.get_or_insert(format!("m={m} T={horizon}: a minimum query was wrong"));
        }
        // Initial epoch excluded: the instance's cost is over the T update epochs.
        let cost: u64 = run.queries[1..].iter().map(|q| (q.report.ledger + q.notices).total_messages()).sum();
        xs.push(horizon as f64 * (m as f64).log2());
        ys.push(cost as f64);
    }
    let fit = linear_fit(&xs, &ys);
    let detail = match &broken {
        Some(b) => b.clone(),
        None => format!("{checked} instances valid; cost slope {:.3} per unit of T log2 m", fit.slope),
    };
    Ok(Outcome { id: 12, name: "adversary instance", pass: broken.is_none() && fit.slope > 0.0, detail })
}

fn bytes(out: &ExperimentOutput) -> Result<(Vec<u8>, Vec<u8>)> {
    let (mut csv, mut trace) = (Vec::new(), Vec::new());
    write_csv(&mut csv, &out.records)?;
    write_traces(&mut trace, &out.traces)?;
    Ok((csv, trace))
}

pub fn c13_determinism(c: &Constants) -> Result<Outcome> {
    let mut same = true;
    let mut sizes = 0;
    for (protocol, k) in [(Protocol::TopK, 10), (Protocol::ApproKSel, 100), (Protocol::QueryTopK, 8)] {
        let mut e = experiment(protocol, Config::new(1 << 12), c, 13);
        e.k = k;
        e.m = 32;
        e.epochs = 5;
        e.trials = 4;
        let a = bytes(&run_experiment(&e, true)?)?;
        let b = bytes(&run_experiment(&e, true)?)?;
        sizes += a.0.len() + a.1.len();
        same &= a == b && !a.1.is_empty();
    }
    Ok(Outcome {
        id: 13,
        name: "determinism",
        pass: same,
        detail: format!("byte-identical CSV and traces across reruns: {same} ({sizes} bytes)"),
    })
}

pub type Criterion = fn(&Constants) -> Result<Outcome>;

pub const CRITERIA: [(u8, Criterion); 13] = [
    (1, c1_topk_exact),
    (2, c2_topk_messages),
    (3, c3_topk_tradeoff),
    (4, c4_cofasel),
    (5, c5_cofasel_amp),
    (6, c6_approx_k_select),
    (7, c7_geocoin),
    (8, c8_rough_rank),
    (9, c9_refresh),
    (10, c10_query_top_k),
    (11, c11_query_k_select),
    (12, c12_adversary),
    (13, c13_determinism),
];

/// Runs the selected criteria (all when `only` is empty) in order.
pub fn run_all(c: &Constants, only: &[u8]) -> Result<Vec<Outcome>> {
    CRITERIA.iter().filter(|(id, _)| only.is_empty() || only.contains(id)).map(|(_, f)| f(c)).collect()
}
