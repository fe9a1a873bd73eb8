//! Update streams (uniform random and the adversarial minimum-tracking
//! instance), the scenario text format, and the geocoin cross-check.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};

use crate::error::{Error, Result};
use crate::model::{log_inv_phi, stream_rng, NodeId, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuerySpec {
    TopK { k: usize },
    KSelect { k: usize, eps: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Epoch {
    pub updates: Vec<(NodeId, i64)>,
    pub query: Option<QuerySpec>,
}

/// Epoch 0 assigns every node its initial value; epochs `1..=T` follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub epochs: Vec<Epoch>,
}

impl Scenario {
    /// Epochs after the initial assignment.
    pub fn horizon(&self) -> usize {
        self.epochs.len().saturating_sub(1)
    }

    /// Values after epoch 0, by node index.
    pub fn initial_values(&self) -> Result<Vec<i64>> {
        let mut values = vec![None; self.n];
        for &(id, v) in self.epochs.first().map_or(&[][..], |e| &e.updates[..]) {
            values[id.index()] = Some(v);
        }
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Scenario { line: 0, msg: format!("node {} has no initial value", i + 1) }))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, e) in self.epochs.iter().enumerate() {
            for &(id, _) in &e.updates {
                if id.0 == 0 || id.index() >= self.n {
                    return Err(Error::Scenario { line: 0, msg: format!("epoch {t}: node {id} outside 1..={}", self.n) });
                }
            }
        }
        self.initial_values().map(|_| ())
    }

    /// Text form: `n T`, then per epoch `E t`, its `U node value` lines and an
    /// optional `Q TOPK k` or `Q KSEL k eps delta` line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.horizon());
        for (t, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(s, "E {t}");
            for &(id, v) in &e.updates {
                let _ = writeln!(s, "U {id} {v}");
            }
            match e.query {
                Some(QuerySpec::TopK { k }) => {
                    let _ = writeln!(s, "Q TOPK {k}");
                }
                Some(QuerySpec::KSelect { k, eps, delta }) => {
                    let _ = writeln!(s, "Q KSEL {k} {eps} {delta}");
                }
                None => {}
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        fn err(line: usize, msg: impl Into<String>) -> Error {
            Error::Scenario { line, msg: msg.into() }
        }
        fn num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
            tok.ok_or_else(|| err(line, format!("missing {what}")))?
                .parse()
                .map_err(|_| err(line, format!("bad {what}")))
        }
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| err(1, "empty scenario"))?;
        let mut toks = header.split_whitespace();
        let n: usize = num(hl, toks.next(), "n")?;
        let horizon: usize = num(hl, toks.next(), "T")?;
        let mut epochs: Vec<Epoch> = Vec::new();
        for (ln, line) in lines {
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("E") => {
                    let t: usize = num(ln, toks.next(), "epoch")?;
                    if t != epochs.len() {
                        return Err(err(ln, format!("expected epoch {}, found {t}", epochs.len())));
                    }
                    epochs.push(Epoch::default());
                }
                Some("U") => {
                    let id: u32 = num(ln, toks.next(), "node")?;
                    let v: i64 = num(ln, toks.next(), "value")?;
                    if id == 0 || id as usize > n {
                        return Err(err(ln, format!("node {id} outside 1..={n}")));
                    }
                    if epochs.is_empty() {
                        epochs.push(Epoch::default());
                    }
                    epochs.last_mut().unwrap().updates.push((NodeId(id), v));
                }
                Some("Q") => {
                    let q = match toks.next() {
                        Some("TOPK") => QuerySpec::TopK { k: num(ln, toks.next(), "k")? },
                        Some("KSEL") => QuerySpec::KSelect {
                            k: num(ln, toks.next(), "k")?,
                            eps: num(ln, toks.next(), "eps")?,
                            delta: num(ln, toks.next(), "delta")?,
                        },
                        _ => return Err(err(ln, "query kind must be TOPK or KSEL")),
                    };
                    let epoch = epochs.last_mut().ok_or_else(|| err(ln, "query before any epoch"))?;
                    if epoch.query.replace(q).is_some() {
                        return Err(err(ln, "second query in one epoch"));
                    }
                }
                Some(other) => return Err(err(ln, format!("unknown record {other:?}"))),
                None => unreachable!("blank lines are skipped"),
            }
            if toks.next().is_some() {
                return Err(err(ln, "trailing tokens"));
            }
        }
        if epochs.len() != horizon + 1 {
            return Err(err(hl, format!("header announces {horizon} epochs after epoch 0, found {}", epochs.len().saturating_sub(1))));
        }
        let s = Scenario { n, epochs };
        s.validate()?;
        Ok(s)
    }
}

/// Epoch 0 draws every value uniformly from `0..value_range`; each later
/// epoch updates `m` distinct uniformly chosen nodes with fresh values.
pub fn gen_random_updates(n: usize, m: usize, horizon: usize, value_range: i64, seed: u64, query: Option<QuerySpec>) -> Result<Scenario> {
    if m > n {
        return Err(Error::config(format!("m = {m} exceeds n = {n}")));
    }
    let mut rng = stream_rng(seed, Stream::Workload, &[]);
    let range = value_range.max(1);
    let mut epochs = Vec::with_capacity(horizon + 1);
    epochs.push(Epoch {
        updates: (0..n).map(|i| (NodeId::from_index(i), rng.random_range(0..range))).collect(),
        query: None,
    });
    for _ in 0..horizon {
        let updates = index::sample(&mut rng, n, m)
            .into_iter()
            .map(|i| (NodeId::from_index(i), rng.random_range(0..range)))
            .collect();
        epochs.push(Epoch { updates, query });
    }
    Ok(Scenario { n, epochs })
}

/// The minimum-tracking hard instance: value sets `S_0` (n values) and
/// `S_1..S_T` (m values each) with `max(S_{t+1}) < min(S_t)`. Epoch 0 assigns
/// `S_0` by a random permutation; the `m` nodes holding its smallest values
/// form `N`, and epoch `t` hands a random permutation of `S_t` to `N`. Every
/// epoch asks for the minimum. Returns the scenario and `N`.
pub fn gen_adversary_min(n: usize, m: usize, horizon: usize, seed: u64) -> Result<(Scenario, Vec<NodeId>)> {
    if m > n || horizon < 1 {
        return Err(Error::config(format!("adversary needs m <= n and T >= 1, got m = {m}, n = {n}, T = {horizon}")));
    }
    let mut rng = stream_rng(seed, Stream::Workload, &[]);
    let (t_, m_, n_) = (horizon as i64, m as i64, n as i64);
    let mut s0: Vec<i64> = (t_ * m_..t_ * m_ + n_).collect();
    s0.shuffle(&mut rng);
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_unstable_by_key(|&i| s0[i]);
    let chosen: Vec<NodeId> = by_value[..m].iter().map(|&i| NodeId::from_index(i)).collect();
    let top1 = Some(QuerySpec::TopK { k: 1 });
    let mut epochs = vec![Epoch {
        updates: s0.iter().enumerate().map(|(i, &v)| (NodeId::from_index(i), v)).collect(),
        query: top1,
    }];
    for t in 1..=t_ {
        let mut st: Vec<i64> = ((t_ - t) * m_..(t_ - t + 1) * m_).collect();
        st.shuffle(&mut rng);
        epochs.push(Epoch { updates: chosen.iter().copied().zip(st).collect(), query: top1 });
    }
    Ok((Scenario { n, epochs }, chosen))
}

/// Checks the construction of [`gen_adversary_min`]: distinct values, each
/// update batch lies wholly below the previous one, only `chosen` nodes change
/// after epoch 0, and the minimum always sits on a chosen node. Returns the
/// first violation.
pub fn check_adversary(scn: &Scenario, chosen: &[NodeId]) -> std::result::Result<(), String> {
    let mut values = scn.initial_values().map_err(|e| e.to_string())?;
    let mut all: Vec<i64> = values.clone();
    let mut floor = values.iter().copied().min().ok_or("empty population")?;
    for (t, e) in scn.epochs.iter().enumerate().skip(1) {
        if e.updates.len() != chosen.len() {
            return Err(format!("epoch {t} updates {} nodes, expected {}", e.updates.len(), chosen.len()));
        }
        let top = e.updates.iter().map(|u| u.1).max().unwrap_or(i64::MIN);
        if top >= floor {
            return Err(format!("epoch {t}: max {top} is not below the previous minimum {floor}"));
        }
        floor = e.updates.iter().map(|u| u.1).min().unwrap_or(floor);
        for &(id, v) in &e.updates {
            if !chosen.contains(&id) {
                return Err(format!("epoch {t}: node {id} is outside N"));
            }
            values[id.index()] = v;
            all.push(v);
        }
        let argmin = values.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| NodeId::from_index(i));
        if !argmin.is_some_and(|id| chosen.contains(&id)) {
            return Err(format!("epoch {t}: minimum is held outside N"));
        }
        if e.query != Some(QuerySpec::TopK { k: 1 }) {
            return Err(format!("epoch {t}: query is not a minimum query"));
        }
    }
    let len = all.len();
    all.sort_unstable();
    all.dedup();
    if all.len() != len {
        return Err("values repeat across epochs".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeocoinReport {
    /// `H = ceil(log_{1/phi} N)`: heights `1..H` are modelled individually.
    pub cutoff: u32,
    /// Empirical `E[C_h]` for `h = 1..H-1`.
    pub per_height: Vec<f64>,
    /// Empirical mean of the tail count `Bin(N, phi^(H-1))`.
    pub tail: f64,
}

/// Simulates the geocoin experiment: `G_h ~ Geometric(phi^h)` failures,
/// `C_h ~ Bin(G_h, phi^(h-1)(1-phi)/(1-phi^h))`, and the tail
/// `Bin(N, phi^(H-1))` that replaces the last run.
pub fn geocoin_check(phi: f64, population: usize, trials: u64, seed: u64) -> GeocoinReport {
    let cutoff = ((log_inv_phi(population as f64, phi) - 1e-9).ceil() as u32).max(1);
    let mut rng = stream_rng(seed, Stream::Geocoin, &[]);
    let mut sums = vec![0u64; cutoff.saturating_sub(1) as usize];
    let mut tail = 0u64;
    let tail_dist = Binomial::new(population as u64, phi.powi(cutoff as i32 - 1)).expect("probability in [0, 1]");
    let runs: Vec<(Geometric, f64)> = (1..cutoff)
        .map(|h| {
            let g = Geometric::new(phi.powi(h as i32)).expect("probability in (0, 1]");
            let p = phi.powi(h as i32 - 1) * (1.0 - phi) / (1.0 - phi.powi(h as i32));
            (g, p)
        })
        .collect();
    for _ in 0..trials {
        for (slot, (g, p)) in runs.iter().enumerate() {
            let size = g.sample(&mut rng);
            if size > 0 {
                sums[slot] += Binomial::new(size, *p).expect("probability in [0, 1]").sample(&mut rng);
            }
        }
        tail += tail_dist.sample(&mut rng);
    }
    let t = trials.max(1) as f64;
    GeocoinReport { cutoff, per_height: sums.iter().map(|&s| s as f64 / t).collect(), tail: tail as f64 / t }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_full_epochs() {
        let s = gen_random_updates(50, 0, 4, 100, 1, None).unwrap();
        assert!(s.epochs[1..].iter().all(|e| e.updates.is_empty()));
        let s = gen_random_updates(50, 50, 3, 100, 1, None).unwrap();
        for e in &s.epochs[1..] {
            let mut ids: Vec<u32> = e.updates.iter().map(|u| u.0 .0).collect();
            ids.sort_unstable();
            assert_eq!(ids, (1..=50).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let q = Some(QuerySpec::TopK { k: 3 });
        assert_eq!(gen_random_updates(100, 10, 5, 1000, 7, q).unwrap(), gen_random_updates(100, 10, 5, 1000, 7, q).unwrap());
        assert_ne!(gen_random_updates(100, 10, 5, 1000, 7, q).unwrap(), gen_random_updates(100, 10, 5, 1000, 8, q).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let mut s = gen_random_updates(20, 3, 4, 50, 2, Some(QuerySpec::KSelect { k: 5, eps: 0.25, delta: 0.1 })).unwrap();
        s.epochs[2].query = Some(QuerySpec::TopK { k: 2 });
        s.epochs[3].updates.clear();
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad = "3 1\nE 0\nU 1 5\nU 2 6\nU 3 7\nE 1\nU 4 1\n";
        match Scenario::parse(bad) {
            Err(Error::Scenario { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Scenario::parse("2 0\nE 0\nU 1 5\n").is_err(), "node 2 lacks a value");
    }

    #[test]
    fn adversary_invariants() {
        let (s, chosen) = gen_adversary_min(64, 8, 5, 3).unwrap();
        assert_eq!(check_adversary(&s, &chosen), Ok(()));
        let mut values = s.initial_values().unwrap();
        let mut prev_min = *values.iter().min().unwrap();
        for e in &s.epochs[1..] {
            let batch: Vec<i64> = e.updates.iter().map(|u| u.1).collect();
            assert!(*batch.iter().max().unwrap() < prev_min);
            prev_min = *batch.iter().min().unwrap();
            for &(id, v) in &e.updates {
                assert!(chosen.contains(&id));
                values[id.index()] = v;
            }
            let argmin = values.iter().enumerate().min_by_key(|(_, &v)| v).unwrap().0;
            assert!(chosen.contains(&NodeId::from_index(argmin)));
        }
    }

    #[test]
    fn geocoin_half() {
        let r = geocoin_check(0.5, 4096, 20_000, 1);
        assert_eq!(r.cutoff, 12);
        for (h, c) in r.per_height.iter().enumerate() {
            assert!((c - 1.0).abs() < 0.06, "h {} mean {c}", h + 1);
        }
        assert!(r.tail <= 2.0 + 0.05);
    }
}
