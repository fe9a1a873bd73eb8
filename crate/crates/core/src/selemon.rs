//! The dynamic rough-rank sketch: rank classes with boundaries
//! `(log2 n)^(8 C l)`, each watched through the heights of its sub-classes.
//!
//! The server keeps, per height, the smallest item it has seen at that height.
//! Sub-classes `tau' = 1, 2` of level `l` collect the stored entries whose
//! heights fall into their height bands; an alarm `a_l` and a representative
//! `r_l` are drawn from them. `rough_rank(k)` answers with `r_l` for the level
//! whose lower neighbour's rank class contains `k`.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;

use crate::error::{Error, Result};
use crate::kselect::{descend_instances, Descent};
use crate::model::{clamp_height, derive_seed, stream_rng, Config, DataItem, HeightSource, NodeId, Population, RefreshStrategy, Stream};
use crate::netsim::{HeightIndex, HeightPredicate, Network, Payload, Probe, Window};

/// Attempts per level before it is given up as a sentinel.
pub const MAX_ATTEMPTS: u32 = 8;

const EPS: f64 = 1e-9;

/// Level geometry derived from `n`, `phi` and `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchParams {
    pub n: usize,
    pub phi: f64,
    pub h_max: u32,
    pub con: f64,
    /// `log2 n`.
    pub log_n: f64,
    /// `H = log_{1/phi}(log2 n)`.
    pub unit: f64,
    /// Number of levels `l` with `rank_boundary(l) <= n`.
    pub level_count: usize,
}

impl SketchParams {
    pub fn new(cfg: &Config) -> Self {
        let log_n = (cfg.n.max(2) as f64).log2();
        let unit = crate::model::log_inv_phi(log_n, cfg.phi);
        let mut p = SketchParams { n: cfg.n, phi: cfg.phi, h_max: cfg.h_max, con: cfg.con, log_n, unit, level_count: 0 };
        let mut count = 0;
        while p.rank_boundary(count) <= cfg.n as f64 * (1.0 + EPS) {
            count += 1;
            if count > 64 {
                break;
            }
        }
        p.level_count = count.max(1);
        p
    }

    /// `(log2 n)^(8 C l)`.
    pub fn rank_boundary(&self, level: usize) -> f64 {
        self.log_n.powf(8.0 * self.con * level as f64)
    }

    /// Height range `(8 C l H, 8 C (l+1) H]` of class `l`.
    pub fn class_range(&self, level: usize) -> (f64, f64) {
        let w = 8.0 * self.con * self.unit;
        (w * level as f64, w * (level + 1) as f64)
    }

    /// Height band `((8 C l + (2 tau + 1) C) H, (8 C l + (2 tau + 3) C) H]`.
    pub fn band(&self, level: usize, tau: u32) -> (f64, f64) {
        let base = 8.0 * self.con * level as f64;
        let t = tau as f64;
        (
            (base + (2.0 * t + 1.0) * self.con) * self.unit,
            (base + (2.0 * t + 3.0) * self.con) * self.unit,
        )
    }

    /// Integer heights in a half-open real interval `(lo, hi]`, capped at `h_max`.
    fn integers_in(&self, (lo, hi): (f64, f64)) -> RangeInclusive<u32> {
        let first = ((lo + EPS).floor() as i64 + 1).max(1) as u32;
        let last = ((hi + EPS).floor().max(0.0) as u32).min(self.h_max);
        first..=last
    }

    pub fn band_heights(&self, level: usize, tau: u32) -> RangeInclusive<u32> {
        self.integers_in(self.band(level, tau))
    }

    pub fn class_heights(&self, level: usize) -> RangeInclusive<u32> {
        self.integers_in(self.class_range(level))
    }

    /// Both materialized bands contain an attainable height.
    pub fn feasible(&self, level: usize) -> bool {
        !self.band_heights(level, 1).is_empty() && !self.band_heights(level, 2).is_empty()
    }

    /// `(l, tau')` with `h` in band `(l, tau')`, `tau'` in {1, 2}.
    pub fn classify_height(&self, h: u32) -> Option<(usize, u32)> {
        (0..self.level_count).find_map(|l| {
            [1, 2].into_iter().find_map(|tau| {
                let (lo, hi) = self.band(l, tau);
                let x = h as f64;
                (x > lo + EPS && x <= hi + EPS).then_some((l, tau))
            })
        })
    }

    /// The class whose height range contains `h`.
    pub fn level_of_height(&self, h: u32) -> usize {
        let w = 8.0 * self.con * self.unit;
        ((h as f64 / w - EPS).ceil().max(1.0) as usize) - 1
    }

    /// `l` with `rank_boundary(l - 1) <= k < rank_boundary(l)`.
    pub fn level_for_rank(&self, k: usize) -> usize {
        let mut l = 1;
        while self.rank_boundary(l) <= k as f64 * (1.0 + EPS) {
            l += 1;
        }
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub item: DataItem,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelStatus {
    Filled,
    /// Deleted by an update trigger, or never built.
    Unfilled,
    /// Gave up after [`MAX_ATTEMPTS`]; answers with the full population.
    Empty,
    /// No attainable height falls into one of its bands.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub status: LevelStatus,
    pub alarm: Option<Entry>,
    pub rep: Option<Entry>,
}

/// Server-side state: the smallest item per height and the level table.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSketch {
    pub by_height: BTreeMap<u32, DataItem>,
    pub levels: Vec<LevelState>,
    pub time: u64,
}

impl RankSketch {
    fn entries_in(&self, heights: RangeInclusive<u32>) -> Vec<Entry> {
        if heights.is_empty() {
            return Vec::new();
        }
        self.by_height.range(heights).map(|(&height, &item)| Entry { item, height }).collect()
    }

    pub fn filled(&self, level: usize) -> bool {
        self.levels.get(level).is_some_and(|s| s.status == LevelStatus::Filled)
    }
}

/// What `rough_rank` hands to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoughRank {
    Item(DataItem),
    /// No usable representative: run over every node.
    FullPopulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RebuildStats {
    pub attempts: u32,
    pub participants: usize,
    pub levels: usize,
}

/// SeleMon: the sketch together with the node population it watches.
#[derive(Debug, Clone)]
pub struct Monitor {
    params: SketchParams,
    strategy: RefreshStrategy,
    seed: u64,
    pop: Population,
    sketch: RankSketch,
    /// Representatives as last broadcast; nodes evaluate triggers against it.
    board: Vec<Option<(Entry, Entry)>>,
    dirty: Vec<NodeId>,
    rebuilds: u64,
    updates: u64,
    last_rebuild: RebuildStats,
}

impl Monitor {
    pub fn new(pop: Population, cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        if pop.len() != cfg.n {
            return Err(Error::config(format!("population has {} nodes, config says {}", pop.len(), cfg.n)));
        }
        let params = SketchParams::new(cfg);
        let levels = (0..params.level_count)
            .map(|l| LevelState {
                status: if params.feasible(l) { LevelStatus::Unfilled } else { LevelStatus::Infeasible },
                alarm: None,
                rep: None,
            })
            .collect();
        Ok(Monitor {
            board: vec![None; params.level_count],
            params,
            strategy: cfg.refresh_strategy,
            seed: cfg.seed,
            pop,
            sketch: RankSketch { by_height: BTreeMap::new(), levels, time: 0 },
            dirty: Vec::new(),
            rebuilds: 0,
            updates: 0,
            last_rebuild: RebuildStats::default(),
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn sketch(&self) -> &RankSketch {
        &self.sketch
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_dirty(&self) -> bool {
        !self.dirty.is_empty()
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty.len()
    }

    pub fn last_rebuild(&self) -> RebuildStats {
        self.last_rebuild
    }

    fn live_levels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.params.level_count).filter(|&l| self.sketch.levels[l].status != LevelStatus::Infeasible)
    }

    /// Builds every live level from scratch.
    pub fn initialize(&mut self, net: &mut Network) {
        self.pop.flush();
        let pending: Vec<usize> = self.live_levels().collect();
        self.rebuild(net, pending);
        self.clear_dirty();
    }

    fn clear_dirty(&mut self) {
        for id in self.dirty.drain(..) {
            self.pop.node_mut(id).dirty = false;
        }
    }

    fn drop_level(&mut self, level: usize) {
        let heights = self.params.class_heights(level);
        let doomed: Vec<u32> = if heights.is_empty() {
            Vec::new()
        } else {
            self.sketch.by_height.range(heights).map(|(&h, _)| h).collect()
        };
        for h in doomed {
            self.sketch.by_height.remove(&h);
        }
        let state = &mut self.sketch.levels[level];
        state.alarm = None;
        state.rep = None;
    }

    /// Rebuilds `pending` levels (ascending) with fresh heights, retrying the
    /// ones that stay unfilled.
    fn rebuild(&mut self, net: &mut Network, mut pending: Vec<usize>) {
        let mut stats = RebuildStats { levels: pending.len(), ..RebuildStats::default() };
        if pending.is_empty() {
            self.last_rebuild = stats;
            return;
        }
        let rebuilt = pending.clone();
        for &l in &pending {
            self.drop_level(l);
        }
        for _ in 0..MAX_ATTEMPTS {
            if pending.is_empty() {
                break;
            }
            stats.attempts += 1;
            let found = self.attempt(net, &pending, &mut stats);
            for (h, item) in found {
                self.sketch.by_height.insert(h, item);
            }
            let mut rng = stream_rng(self.seed, Stream::Representatives, &[self.rebuilds]);
            pending.retain(|&l| {
                let s1 = self.sketch.entries_in(self.params.band_heights(l, 1));
                let s2 = self.sketch.entries_in(self.params.band_heights(l, 2));
                match (s1.choose(&mut rng), s2.choose(&mut rng)) {
                    (Some(&a), Some(&r)) => {
                        let state = &mut self.sketch.levels[l];
                        state.status = LevelStatus::Filled;
                        state.alarm = Some(a);
                        state.rep = Some(r);
                        false
                    }
                    _ => true,
                }
            });
            for &l in &pending {
                self.drop_level(l);
            }
        }
        for &l in &pending {
            self.sketch.levels[l].status = LevelStatus::Empty;
        }
        net.in_round(|net| {
            for &l in &rebuilt {
                let state = &self.sketch.levels[l];
                match (state.alarm, state.rep) {
                    (Some(a), Some(r)) => {
                        net.broadcast_value(Payload::Representatives { level: l, alarm: a.item, rep: r.item });
                        self.board[l] = Some((a, r));
                    }
                    _ => {
                        net.broadcast_value(Payload::EmptyLevel { level: l });
                        self.board[l] = None;
                    }
                }
            }
        });
        self.last_rebuild = stats;
    }

    /// One descent with freshly drawn heights. When the level above the
    /// pending ones is filled, only items below its representative take part
    /// and the descent starts at the representative's height; otherwise every
    /// node takes part from `h_max` down. Returns the smallest response per
    /// height within the pending classes.
    fn attempt(&mut self, net: &mut Network, pending: &[usize], stats: &mut RebuildStats) -> BTreeMap<u32, DataItem> {
        let lo = pending[0];
        let hi = *pending.last().unwrap();
        let above = match self.sketch.levels.get(hi + 1) {
            Some(s) if s.status == LevelStatus::Filled => s.rep,
            _ => None,
        };
        let bound = above.map(|e| e.item);
        let cap = above.map_or(self.params.h_max, |e| e.height.min(self.params.h_max)).max(1);
        let floor = (*self.params.band_heights(lo, 1).start()).min(cap);
        self.rebuilds += 1;
        let source = HeightSource::new(derive_seed(self.seed, &[Stream::Heights as u64, self.rebuilds]), self.params.phi);
        let h_max = self.params.h_max;
        let participants = self.pop.below(bound);
        stats.participants = participants.len();
        let heights: Vec<u32> = participants
            .iter()
            .map(|it| clamp_height(source.height(it.owner, 0), h_max).get())
            .collect();
        let index = HeightIndex::from_heights(participants, floor, |pos, _| heights[pos]);
        let wanted: Vec<RangeInclusive<u32>> = pending.iter().map(|&l| self.params.class_heights(l)).collect();
        let mut found = BTreeMap::new();
        descend_instances(net, std::slice::from_ref(&index), Descent::to_height(cap, floor), |_, h, rs| {
            if let Some(&first) = rs.first() {
                if wanted.iter().any(|r| r.contains(&h)) {
                    found.entry(h).or_insert(first);
                }
            }
        });
        let owners: Vec<NodeId> = participants.iter().map(|it| it.owner).collect();
        for (owner, h) in owners.into_iter().zip(heights) {
            self.pop.node_mut(owner).height = crate::model::Height::new(h).expect("heights are positive");
        }
        found
    }

    /// Node `id` observes `value`. Costs one unicast when a level trigger
    /// fires, nothing otherwise.
    pub fn update(&mut self, net: &mut Network, id: NodeId, value: i64) -> Result<()> {
        if !self.pop.contains(id) {
            return Err(Error::config(format!("node {id} is outside 1..={}", self.pop.len())));
        }
        let state = *self.pop.node(id);
        let old = state.item;
        let new = DataItem::new(value, id);
        let h = state.height.get();
        // A node can sit at two heights when a lower rebuild redrew its height.
        self.sketch.by_height.retain(|_, it| it.owner != id);
        let triggered: Vec<usize> = self
            .board
            .iter()
            .enumerate()
            .filter_map(|(l, reps)| {
                let (a, r) = (*reps)?;
                let fires = old == a.item || old == r.item || (a.height <= h && h <= r.height && new < a.item);
                fires.then_some(l)
            })
            .collect();
        if !triggered.is_empty() {
            net.unicast_to_server(id, Payload::Notice { levels: triggered.clone() });
            for l in triggered {
                if self.sketch.levels[l].status == LevelStatus::Filled {
                    self.drop_level(l);
                    self.sketch.levels[l].status = LevelStatus::Unfilled;
                }
            }
        }
        self.pop.set_value(id, value);
        let source = HeightSource::new(derive_seed(self.seed, &[Stream::Heights as u64, u64::MAX]), self.params.phi);
        let node = self.pop.node_mut(id);
        node.height = clamp_height(source.height(id, self.updates), self.params.h_max);
        self.updates += 1;
        if !node.dirty {
            node.dirty = true;
            self.dirty.push(id);
        }
        Ok(())
    }

    /// Highest live level still unfilled.
    fn highest_unfilled(&self) -> Option<usize> {
        self.live_levels().filter(|&l| self.sketch.levels[l].status == LevelStatus::Unfilled).max()
    }

    fn dirty_level(&mut self, net: &mut Network) -> Option<usize> {
        if self.dirty.is_empty() {
            return None;
        }
        match self.strategy {
            RefreshStrategy::OracleMax => {
                let h = self.dirty.iter().map(|&id| self.pop.node(id).height.get()).max()?;
                Some(self.params.level_of_height(h))
            }
            RefreshStrategy::DescendProbe => {
                let top = self.live_levels().max().unwrap_or(0);
                for l in (1..=top).rev() {
                    let threshold = (self.params.class_range(l).0 + EPS).floor() as u32 + 1;
                    let probe = Probe::new(Window::all(), HeightPredicate::AtLeast(threshold)).dirty_only();
                    if !net.probe(probe, self.pop.nodes()).is_empty() {
                        return Some(l);
                    }
                }
                Some(0)
            }
        }
    }

    /// Restores the sketch after updates: rebuilds every level up to the
    /// higher of the top unfilled level and the level of the largest dirty
    /// height.
    pub fn refresh(&mut self, net: &mut Network) {
        self.sketch.time += 1;
        self.pop.flush();
        let from_dirty = self.dirty_level(net);
        let level = match (self.highest_unfilled(), from_dirty) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        if let Some(level) = level {
            let top_live = self.live_levels().max();
            let level = top_live.map_or(level, |t| level.min(t));
            let pending: Vec<usize> = self.live_levels().filter(|&l| l <= level).collect();
            self.rebuild(net, pending);
        } else {
            self.last_rebuild = RebuildStats::default();
        }
        self.clear_dirty();
    }

    /// Representative for rank `k`; costs nothing.
    pub fn rough_rank(&self, k: usize) -> Result<(usize, RoughRank)> {
        if k == 0 || k > self.pop.len() {
            return Err(Error::RankOutOfRange { k, n: self.pop.len() });
        }
        let level = self.params.level_for_rank(k);
        let answer = match self.sketch.levels.get(level) {
            Some(LevelState { status: LevelStatus::Filled, rep: Some(r), .. }) => RoughRank::Item(r.item),
            _ => RoughRank::FullPopulation,
        };
        Ok((level, answer))
    }

    /// Upper height of class `level`'s range, capped at `h_max`.
    pub fn class_top(&self, level: usize) -> u32 {
        self.params.h_max.min(*self.params.class_heights(level).end()).max(1)
    }

    /// One tab-separated line per level:
    /// `level filled a_value a_height r_value r_height |S1| |S2|`.
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (l, state) in self.sketch.levels.iter().enumerate() {
            let s1 = self.sketch.entries_in(self.params.band_heights(l, 1)).len();
            let s2 = self.sketch.entries_in(self.params.band_heights(l, 2)).len();
            let fmt = |e: Option<Entry>| e.map_or_else(|| "-\t-".to_string(), |e| format!("{}\t{}", e.item.value, e.height));
            writeln!(
                out,
                "{l}\t{}\t{}\t{}\t{s1}\t{s2}",
                state.status == LevelStatus::Filled,
                fmt(state.alarm),
                fmt(state.rep)
            )?;
        }
        Ok(())
    }
}
