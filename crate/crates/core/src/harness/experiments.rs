//! Experiment descriptors and the trial bodies behind every CLI subcommand.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::oracle::{in_window, Oracle, Verdict};
use crate::harness::report::TrialRecord;
use crate::harness::{run_trials, trial_seed, Constants};
use crate::kselect::{run_approx_k_select, run_cofasel, run_cofasel_amp, run_top_k_via_select, ApproxParams, SelectCtx};
use crate::model::{derive_seed, stream_rng, Config, HeightSource, Population, Stream};
use crate::netsim::{CostLedger, Network, TraceEvent};
use crate::queries::{query_k_select, query_top_k, QueryParams, QueryReport};
use crate::selemon::{LevelStatus, Monitor, RoughRank};
use crate::topk::{run_top_k, TopKParams};
use crate::workload::{gen_adversary_min, gen_random_updates, QuerySpec, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    TopK,
    TopKViaSelect,
    CoFaSel,
    CoFaSelAmp,
    ApproKSel,
    SeleMonInit,
    SeleMonRefresh,
    QueryTopK,
    QueryKSelect,
    Adversary,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::TopK => "topk",
            Protocol::TopKViaSelect => "topk-select",
            Protocol::CoFaSel => "cofasel",
            Protocol::CoFaSelAmp => "cofasel-amp",
            Protocol::ApproKSel => "approx-kselect",
            Protocol::SeleMonInit => "selemon-init",
            Protocol::SeleMonRefresh => "selemon-refresh",
            Protocol::QueryTopK => "query-topk",
            Protocol::QueryKSelect => "query-kselect",
            Protocol::Adversary => "adversary",
        }
    }
}

/// Everything needed to reproduce a batch of trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub protocol: Protocol,
    /// `cfg.seed` is the root seed; trial seeds derive from it.
    pub cfg: Config,
    pub k: usize,
    /// Updates per epoch.
    pub m: usize,
    /// Epochs after the initial one, for multi-step protocols.
    pub epochs: usize,
    pub trials: u64,
    pub constants: Constants,
    pub strict: bool,
    /// Values are drawn from `0..value_range`; defaults to `n`.
    pub value_range: Option<i64>,
    /// Replaces the generated workload of multi-step protocols.
    pub scenario: Option<Scenario>,
}

impl Experiment {
    pub fn new(protocol: Protocol, cfg: Config) -> Self {
        Experiment {
            protocol,
            cfg,
            k: 10,
            m: 0,
            epochs: 1,
            trials: 1,
            constants: Constants::frozen(),
            strict: false,
            value_range: None,
            scenario: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        if self.k == 0 {
            return Err(Error::config("k must be positive"));
        }
        if self.m > self.cfg.n {
            return Err(Error::config(format!("m = {} exceeds n = {}", self.m, self.cfg.n)));
        }
        if let Some(s) = &self.scenario {
            if s.n != self.cfg.n {
                return Err(Error::config(format!("scenario has n = {}, config has n = {}", s.n, self.cfg.n)));
            }
        }
        let multi = matches!(self.protocol, Protocol::QueryTopK | Protocol::QueryKSelect | Protocol::SeleMonRefresh);
        // A scenario carries its own ranks; the adversary asks for the minimum.
        if self.k > self.cfg.n && multi && self.scenario.is_none() {
            return Err(Error::RankOutOfRange { k: self.k, n: self.cfg.n });
        }
        Ok(())
    }

    fn value_range(&self) -> i64 {
        self.value_range.unwrap_or(self.cfg.n as i64).max(1)
    }

    fn record(&self, trial: u64, seed: u64, ledger: CostLedger) -> TrialRecord {
        let mut r = TrialRecord {
            trial,
            seed,
            protocol: self.protocol.tag(),
            n: self.cfg.n,
            phi: self.cfg.phi,
            k: self.k,
            m: self.m,
            messages_unicast: 0,
            messages_broadcast: 0,
            messages_total: 0,
            rounds: 0,
            verdict: Verdict::Pass,
            fallback_used: false,
            result_rank: None,
        };
        r.set_ledger(ledger);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub records: Vec<TrialRecord>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub traces: Vec<(u64, Vec<TraceEvent>)>,
}

fn network(traced: bool) -> Network {
    if traced {
        Network::traced()
    } else {
        Network::new()
    }
}

fn values_of(pop: &Population) -> Vec<i64> {
    pop.nodes().iter().map(|s| s.item.value).collect()
}

/// Log-spaced ranks `1, 2, 4, ...` up to `n`.
pub fn rank_grid(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| k.checked_mul(2)).take_while(|&k| k <= n).collect()
}

/// `rank(rough_rank(k)) >= k`, counting a full-population answer as rank n.
pub fn rough_rank_holds(mon: &Monitor, oracle: &Oracle, k: usize) -> bool {
    match mon.rough_rank(k) {
        Ok((_, RoughRank::Item(d))) => oracle.rank(&d).is_some_and(|r| r >= k),
        Ok((_, RoughRank::FullPopulation)) => true,
        Err(_) => false,
    }
}

/// A freshly initialized monitor over a random permutation of `0..n`.
pub fn initialized_monitor(cfg: &Config, seed: u64, net: &mut Network) -> Result<Monitor> {
    let mut rng = stream_rng(seed, Stream::Population, &[]);
    let pop = Population::permutation(cfg.n, &mut rng);
    let mut mon = Monitor::new(pop, &Config { seed, ..cfg.clone() })?;
    mon.initialize(net);
    Ok(mon)
}

/// Applies `m` updates to distinct random nodes with values in `0..range`.
pub fn random_updates(mon: &mut Monitor, net: &mut Network, m: usize, range: i64, seed: u64) -> Result<Vec<(crate::model::NodeId, i64)>> {
    let mut rng = stream_rng(seed, Stream::Workload, &[]);
    let n = mon.population().len();
    let mut applied = Vec::with_capacity(m);
    for i in index::sample(&mut rng, n, m) {
        let id = crate::model::NodeId::from_index(i);
        let v = rng.random_range(0..range.max(1));
        mon.update(net, id, v)?;
        applied.push((id, v));
    }
    Ok(applied)
}

/// One answered query of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochQuery {
    pub epoch: usize,
    pub report: QueryReport,
    /// Update notices sent since the previous query.
    pub notices: CostLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub init: CostLedger,
    pub queries: Vec<EpochQuery>,
}

/// Replays a scenario against a monitor and an independent oracle, answering
/// every query. The oracle and the monitor must agree on the item multiset
/// before each query; disagreement is a harness bug and panics.
pub fn run_scenario(scn: &Scenario, cfg: &Config, seed: u64, net: &mut Network) -> Result<ScenarioRun> {
    let values = scn.initial_values()?;
    let mut oracle = Oracle::from_values(&values);
    let mut mon = Monitor::new(Population::from_values(&values), &Config { n: scn.n, seed, ..cfg.clone() })?;
    let start = net.ledger();
    mon.initialize(net);
    let init = net.ledger() - start;
    let mut queries = Vec::new();
    let mut since = net.ledger();
    for (t, epoch) in scn.epochs.iter().enumerate() {
        if t > 0 {
            for &(id, v) in &epoch.updates {
                mon.update(net, id, v)?;
                oracle.apply(id, v);
            }
        }
        let Some(spec) = epoch.query else { continue };
        assert_eq!(oracle.checksum(), mon.population().checksum(), "oracle diverged from the monitor at epoch {t}");
        let notices = net.ledger() - since;
        let qp = QueryParams {
            phi: cfg.phi,
            h_max: cfg.h_max,
            amp_factor: cfg.amp_factor,
            sample_const: cfg.sample_const,
            seed: derive_seed(seed, &[Stream::Trial as u64, t as u64]),
        };
        let report = match spec {
            QuerySpec::TopK { k } => query_top_k(&mut mon, net, &oracle, k, qp)?,
            QuerySpec::KSelect { k, eps, delta } => query_k_select(&mut mon, net, &oracle, k, eps, delta, qp)?,
        };
        since = net.ledger();
        queries.push(EpochQuery { epoch: t, report, notices });
    }
    Ok(ScenarioRun { init, queries })
}

fn scenario_records(exp: &Experiment, trial: u64, seed: u64, run: &ScenarioRun) -> Vec<TrialRecord> {
    let mut out = Vec::with_capacity(run.queries.len() + 1);
    let mut init = exp.record(trial, seed, run.init);
    init.protocol = "init";
    init.k = 0;
    out.push(init);
    for q in &run.queries {
        let mut r = exp.record(trial, seed, q.report.ledger + q.notices);
        r.k = q.report.k;
        r.verdict = q.report.verdict;
        r.fallback_used = q.report.fallback_used;
        r.result_rank = q.report.result_rank;
        out.push(r);
    }
    out
}

/// Runs trial `trial` of `exp`.
pub fn run_trial(exp: &Experiment, trial: u64, traced: bool) -> Result<TrialOutput> {
    let cfg = &exp.cfg;
    let seed = trial_seed(cfg.seed, trial);
    let mut net = network(traced);
    let k = exp.k;
    let records = match exp.protocol {
        Protocol::TopK => {
            let mut rng = stream_rng(seed, Stream::Population, &[]);
            let pop = Population::uniform(cfg.n, exp.value_range(), &mut rng);
            let oracle = Oracle::from_values(&values_of(&pop));
            let heights = HeightSource::new(derive_seed(seed, &[Stream::Heights as u64]), cfg.phi);
            let params = TopKParams { strict: exp.strict, ..TopKParams::new(k, cfg.h_max) };
            let res = run_top_k(&mut net, pop.sorted(), params, &heights, 0);
            let mut r = exp.record(trial, seed, res.ledger);
            // A failed run (fewer than k items exist) is a fail row with no rank.
            r.verdict = Verdict::from_bool(!res.failed && res.items == oracle.smallest(k));
            r.result_rank = if res.failed { None } else { res.items.last().and_then(|d| oracle.rank(d)) };
            vec![r]
        }
        Protocol::TopKViaSelect => {
            let mut rng = stream_rng(seed, Stream::Population, &[]);
            let pop = Population::permutation(cfg.n, &mut rng);
            let oracle = Oracle::from_values(&values_of(&pop));
            let ctx = SelectCtx { participants: pop.sorted(), phi: cfg.phi, h_max: cfg.h_max, seed };
            let (res, fallback) = run_top_k_via_select(&mut net, &ctx, k, exp.constants.select_extra_levels);
            let mut r = exp.record(trial, seed, res.ledger);
            r.verdict = Verdict::from_bool(!res.failed && res.items == oracle.smallest(k));
            r.fallback_used = fallback;
            r.result_rank = if res.failed { None } else { res.items.last().and_then(|d| oracle.rank(d)) };
            vec![r]
        }
        Protocol::CoFaSel | Protocol::CoFaSelAmp | Protocol::ApproKSel => {
            let mut rng = stream_rng(seed, Stream::Population, &[]);
            let pop = Population::permutation(cfg.n, &mut rng);
            let oracle = Oracle::from_values(&values_of(&pop));
            let ctx = SelectCtx { participants: pop.sorted(), phi: cfg.phi, h_max: cfg.h_max, seed };
            let res = match exp.protocol {
                Protocol::CoFaSel => run_cofasel(&mut net, &ctx, k),
                Protocol::CoFaSelAmp => run_cofasel_amp(&mut net, &ctx, k, cfg.delta_prime, cfg.amp_factor),
                _ => run_approx_k_select(&mut net, &ctx, k, approx_params(cfg)),
            };
            let rank = res.item.and_then(|d| oracle.rank(&d));
            let ok = match (exp.protocol, rank) {
                (_, None) => false,
                (Protocol::ApproKSel, Some(r)) => in_window(r, k, cfg.eps),
                (_, Some(r)) => k <= r && r <= 42 * k,
            };
            let mut r = exp.record(trial, seed, res.ledger);
            r.verdict = Verdict::from_bool(ok);
            r.result_rank = rank;
            vec![r]
        }
        Protocol::SeleMonInit => {
            let mon = initialized_monitor(cfg, seed, &mut net)?;
            let oracle = Oracle::from_values(&values_of(mon.population()));
            let mut r = exp.record(trial, seed, net.ledger());
            r.verdict = Verdict::from_bool(rank_grid(cfg.n).into_iter().all(|k| rough_rank_holds(&mon, &oracle, k)));
            r.result_rank = match mon.rough_rank(k.min(cfg.n))?.1 {
                RoughRank::Item(d) => oracle.rank(&d),
                RoughRank::FullPopulation => Some(cfg.n),
            };
            vec![r]
        }
        Protocol::SeleMonRefresh => {
            let mut mon = initialized_monitor(cfg, seed, &mut net)?;
            let start = net.ledger();
            random_updates(&mut mon, &mut net, exp.m, exp.value_range(), seed)?;
            mon.refresh(&mut net);
            let mut r = exp.record(trial, seed, net.ledger() - start);
            let unfilled = mon.sketch().levels.iter().any(|l| l.status == LevelStatus::Unfilled);
            r.verdict = Verdict::from_bool(!unfilled);
            vec![r]
        }
        Protocol::QueryTopK | Protocol::QueryKSelect | Protocol::Adversary => {
            let scn = match (&exp.scenario, exp.protocol) {
                (Some(s), _) => s.clone(),
                (None, Protocol::Adversary) => gen_adversary_min(cfg.n, exp.m, exp.epochs, seed)?.0,
                (None, p) => {
                    let q = if p == Protocol::QueryTopK {
                        QuerySpec::TopK { k }
                    } else {
                        QuerySpec::KSelect { k, eps: cfg.eps, delta: cfg.delta }
                    };
                    gen_random_updates(cfg.n, exp.m, exp.epochs, exp.value_range(), seed, Some(q))?
                }
            };
            let run = run_scenario(&scn, cfg, seed, &mut net)?;
            scenario_records(exp, trial, seed, &run)
        }
    };
    Ok(TrialOutput { records, trace: net.take_trace() })
}

pub fn approx_params(cfg: &Config) -> ApproxParams {
    ApproxParams {
        eps: cfg.eps,
        delta: cfg.delta,
        delta_prime: cfg.delta_prime,
        amp_factor: cfg.amp_factor,
        sample_const: cfg.sample_const,
    }
}

/// Runs every trial and gathers rows (and traces) in trial order. Nothing is
/// returned unless every trial succeeds.
pub fn run_experiment(exp: &Experiment, traced: bool) -> Result<ExperimentOutput> {
    exp.validate()?;
    let outputs = run_trials(exp.trials, |t| run_trial(exp, t, traced));
    let mut out = ExperimentOutput::default();
    for (t, o) in outputs.into_iter().enumerate() {
        let o = o?;
        out.records.extend(o.records);
        if traced {
            out.traces.push((t as u64, o.trace));
        }
    }
    Ok(out)
}
