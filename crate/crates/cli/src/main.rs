use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankmon::harness::acceptance;
use rankmon::harness::calibrate::{calibrate, PilotScale};
use rankmon::harness::experiments::{initialized_monitor, random_updates};
use rankmon::harness::report::{write_csv, write_traces};
use rankmon::harness::{run_experiment, Constants, Experiment, Protocol, Summary, TrialRecord, Verdict};
use rankmon::model::log_inv_phi;
use rankmon::workload::{geocoin_check, Scenario};
use rankmon::{Config, Error, Network, RefreshStrategy};

#[derive(Parser)]
#[command(name = "rankmon", version, about = "Simulate rank-based monitoring protocols and check their guarantees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact Top-k by descending height probes.
    Topk {
        #[command(flatten)]
        common: Common,
        /// Check |S| = k only at height-0 leaves.
        #[arg(long)]
        strict: bool,
        /// Select near rank 14k first, then run Top-k below it.
        #[arg(long)]
        via_select: bool,
    },
    /// Constant-factor selection near rank 7k.
    Cofasel {
        #[command(flatten)]
        common: Common,
        /// Median of independent instances, failure probability delta'.
        #[arg(long)]
        amp: bool,
    },
    /// Approximate k-selection with rank in [(1-eps)k, (1+eps)k].
    Kselect {
        #[command(flatten)]
        common: Common,
    },
    /// Build the rank sketch; with --m > 0, apply m updates and refresh.
    Selemon {
        #[command(flatten)]
        common: Common,
        /// Per-level snapshot of trial 0, tab separated.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Multi-step queries over an update workload.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = QueryArg::Topk)]
        kind: QueryArg,
    },
    /// Minimum tracking on the adversarial instance.
    Adversary {
        #[command(flatten)]
        common: Common,
    },
    /// Per-height response counts of the geocoin experiment.
    Geocoin {
        #[command(flatten)]
        common: Common,
    },
    /// Run pilot grids and write a constants file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Small pilot, for smoke runs only.
        #[arg(long)]
        quick: bool,
    },
    /// Run the acceptance criteria against the frozen constants.
    Accept {
        #[command(flatten)]
        common: Common,
        /// Criterion numbers to run, comma separated. Defaults to all.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryArg {
    Topk,
    Kselect,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Oracle,
    Probe,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long)]
    phi: Option<f64>,
    /// Defaults to the smallest admissible value for n and phi.
    #[arg(long)]
    hmax: Option<u32>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta_prime: Option<f64>,
    #[arg(long)]
    con: Option<f64>,
    #[arg(long, default_value_t = 0)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Oracle)]
    refresh_strategy: StrategyArg,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Constants file; the frozen set when absent.
    #[arg(long)]
    constants: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Exit 1 when the mean of messages_total exceeds this.
    #[arg(long)]
    max_mean_messages: Option<f64>,
    /// Exit 1 when the fraction of passing rows is below this.
    #[arg(long)]
    min_pass_rate: Option<f64>,
}

impl Common {
    fn constants(&self) -> rankmon::Result<Constants> {
        match &self.constants {
            Some(p) => Constants::load(p),
            None => Ok(Constants::frozen()),
        }
    }

    fn config(&self, c: &Constants) -> Config {
        let mut cfg = Config::new(self.n).with_seed(self.seed);
        if let Some(phi) = self.phi {
            cfg = cfg.with_phi(phi);
        }
        if let Some(h) = self.hmax {
            cfg.h_max = h;
        }
        cfg.eps = self.eps.unwrap_or(cfg.eps);
        cfg.delta = self.delta.unwrap_or(cfg.delta);
        cfg.delta_prime = self.delta_prime.unwrap_or(cfg.delta_prime);
        cfg.con = self.con.unwrap_or(cfg.con);
        cfg.amp_factor = c.amp_factor;
        cfg.sample_const = c.sample_const;
        cfg.refresh_strategy = match self.refresh_strategy {
            StrategyArg::Oracle => RefreshStrategy::OracleMax,
            StrategyArg::Probe => RefreshStrategy::DescendProbe,
        };
        cfg
    }

    fn experiment(&self, protocol: Protocol) -> rankmon::Result<Experiment> {
        let c = self.constants()?;
        let mut e = Experiment::new(protocol, self.config(&c));
        e.constants = c;
        e.k = self.k;
        e.m = self.m;
        e.epochs = self.epochs;
        e.trials = self.trials;
        if let Some(p) = &self.scenario {
            e.scenario = Some(Scenario::parse(&std::fs::read_to_string(p)?)?);
        }
        Ok(e)
    }
}

/// Writes `bytes` to `path`, or stdout.
fn emit(path: Option<&Path>, bytes: &[u8]) -> io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    }
}

fn summarize(protocol: &str, records: &[TrialRecord]) -> (Summary, f64) {
    let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.protocol != "init").collect();
    let s = Summary::of(&rows.iter().map(|r| r.messages_total as f64).collect::<Vec<_>>());
    let u = Summary::of(&rows.iter().map(|r| r.messages_unicast as f64).collect::<Vec<_>>());
    let rounds = Summary::of(&rows.iter().map(|r| r.rounds as f64).collect::<Vec<_>>());
    let pass = rows.iter().filter(|r| r.verdict == Verdict::Pass).count() as f64 / rows.len().max(1) as f64;
    eprintln!("protocol\trows\tmean_messages\tstderr\tmin\tmax\tmean_unicast\tmean_rounds\tpass_rate");
    eprintln!(
        "{protocol}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
        rows.len(),
        s.mean,
        s.stderr,
        s.min,
        s.max,
        u.mean,
        rounds.mean,
        pass
    );
    (s, pass)
}

fn run(common: &Common, protocol: Protocol, strict: bool) -> rankmon::Result<bool> {
    let mut exp = common.experiment(protocol)?;
    exp.strict = strict;
    let out = run_experiment(&exp, common.trace.is_some())?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &out.records)?;
    emit(common.out.as_deref(), &csv)?;
    if let Some(p) = &common.trace {
        let mut buf = Vec::new();
        write_traces(&mut buf, &out.traces)?;
        std::fs::write(p, buf)?;
    }
    let (s, pass) = summarize(protocol.tag(), &out.records);
    let mut ok = true;
    if let Some(max) = common.max_mean_messages {
        ok &= s.mean_within(max);
    }
    if let Some(min) = common.min_pass_rate {
        ok &= pass >= min;
    }
    Ok(ok)
}

fn selemon(common: &Common, snapshot: Option<&Path>) -> rankmon::Result<bool> {
    let protocol = if common.m == 0 { Protocol::SeleMonInit } else { Protocol::SeleMonRefresh };
    let ok = run(common, protocol, false)?;
    if let Some(path) = snapshot {
        let exp = common.experiment(protocol)?;
        let seed = rankmon::harness::trial_seed(exp.cfg.seed, 0);
        let mut net = Network::new();
        let mut mon = initialized_monitor(&exp.cfg, seed, &mut net)?;
        if common.m > 0 {
            random_updates(&mut mon, &mut net, common.m, common.n as i64, seed)?;
            mon.refresh(&mut net);
        }
        let mut out = BufWriter::new(File::create(path)?);
        mon.write_snapshot(&mut out)?;
        out.flush()?;
    }
    Ok(ok)
}

fn geocoin(common: &Common) -> rankmon::Result<bool> {
    let phi = common.phi.unwrap_or(0.5);
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Config(format!("phi must lie in (0, 1), got {phi}")));
    }
    let r = geocoin_check(phi, common.n, common.trials, common.seed);
    let target = (1.0 - phi) / phi;
    let mut text = String::from("h\tmean_count\ttarget\n");
    for (i, x) in r.per_height.iter().enumerate() {
        text.push_str(&format!("{}\t{x:.6}\t{target:.6}\n", i + 1));
    }
    text.push_str(&format!("tail\t{:.6}\t{:.6}\n", r.tail, (common.n as f64) * phi.powi(r.cutoff as i32 - 1)));
    emit(common.out.as_deref(), text.as_bytes())?;
    let worst = r.per_height.iter().map(|x| (x - target).abs()).fold(0.0, f64::max);
    eprintln!("cutoff {} (log_1/phi n = {:.3}), max deviation {worst:.4}", r.cutoff, log_inv_phi(common.n as f64, phi));
    Ok(true)
}

fn calibrate_cmd(common: &Common, quick: bool) -> rankmon::Result<bool> {
    let base = common.constants()?;
    let scale = if quick { PilotScale::quick() } else { PilotScale::full() };
    let cal = calibrate(&base, scale)?;
    for line in &cal.log {
        eprintln!("{line}");
    }
    emit(common.out.as_deref(), cal.constants.to_toml().as_bytes())?;
    Ok(true)
}

fn accept(common: &Common, only: &[u8]) -> rankmon::Result<bool> {
    let c = common.constants()?;
    let mut all = true;
    let mut text = String::new();
    for o in acceptance::run_all(&c, only)? {
        println!("{}", o.line());
        text.push_str(&o.line());
        text.push('\n');
        all &= o.pass;
    }
    if let Some(p) = &common.out {
        std::fs::write(p, text)?;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Topk { common, strict, via_select } => {
            run(common, if *via_select { Protocol::TopKViaSelect } else { Protocol::TopK }, *strict)
        }
        Cmd::Cofasel { common, amp } => run(common, if *amp { Protocol::CoFaSelAmp } else { Protocol::CoFaSel }, false),
        Cmd::Kselect { common } => run(common, Protocol::ApproKSel, false),
        Cmd::Selemon { common, snapshot } => selemon(common, snapshot.as_deref()),
        Cmd::Query { common, kind } => run(
            common,
            match kind {
                QueryArg::Topk => Protocol::QueryTopK,
                QueryArg::Kselect => Protocol::QueryKSelect,
            },
            false,
        ),
        Cmd::Adversary { common } => run(common, Protocol::Adversary, false),
        Cmd::Geocoin { common } => geocoin(common),
        Cmd::Calibrate { common, quick } => calibrate_cmd(common, *quick),
        Cmd::Accept { common, only } => accept(common, only),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

