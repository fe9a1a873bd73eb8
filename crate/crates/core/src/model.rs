//! Items, heights, node state, configuration and seed derivation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node identifier in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn from_index(index: usize) -> Self {
        NodeId(index as u32 + 1)
    }

    /// Zero-based position in per-node arrays.
    pub fn index(self) -> usize {
        debug_assert!(self.0 >= 1, "node ids start at 1");
        (self.0 - 1) as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One observation. Ordered lexicographically by `(value, owner)`, which makes
/// the order strict and total even when two nodes observe the same value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataItem {
    pub value: i64,
    pub owner: NodeId,
}

impl DataItem {
    pub fn new(value: i64, owner: NodeId) -> Self {
        DataItem { value, owner }
    }
}

impl fmt::Display for DataItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.value, self.owner)
    }
}

/// Geometric level of a node, always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Height(u32);

impl Height {
    pub fn new(h: u32) -> Option<Height> {
        (h >= 1).then_some(Height(h))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// Maps 64 random bits to a height with `Pr[h] = phi^(h-1) (1 - phi)`.
///
/// `phi == 0.5` counts trailing zero bits; every other `phi` inverts the
/// geometric CDF on a 53-bit uniform in `(0, 1]`.
pub fn height_from_bits(bits: u64, phi: f64) -> Height {
    if phi == 0.5 {
        return Height(1 + bits.trailing_zeros());
    }
    let u = ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let levels = (u.ln() / phi.ln()).floor();
    Height(1 + levels.min(4096.0) as u32)
}

pub fn draw_height<R: RngCore + ?Sized>(phi: f64, rng: &mut R) -> Height {
    height_from_bits(rng.next_u64(), phi)
}

pub fn clamp_height(h: Height, h_max: u32) -> Height {
    Height(h.0.min(h_max.max(1)))
}

/// `log_{1/phi}(x)`.
pub fn log_inv_phi(x: f64, phi: f64) -> f64 {
    x.ln() / (1.0 / phi).ln()
}

/// Smallest height cap satisfying `h_max >= log_{1/phi}(n)`.
pub fn default_h_max(n: usize, phi: f64) -> u32 {
    let exact = log_inv_phi(n.max(1) as f64, phi);
    ((exact - 1e-9).ceil() as u32).max(1)
}

/// Test oracle for `rank(d)`: the 1-based position of `d` among `items`.
///
/// Linear scan, independent of any sorted structure the protocols use.
pub fn oracle_rank(items: &[DataItem], d: &DataItem) -> Result<usize> {
    let mut below = 0usize;
    let mut present = false;
    for it in items {
        match it.cmp(d) {
            std::cmp::Ordering::Less => below += 1,
            std::cmp::Ordering::Equal => present = true,
            std::cmp::Ordering::Greater => {}
        }
    }
    if present {
        Ok(below + 1)
    } else {
        Err(Error::ItemAbsent(*d))
    }
}

/// State one sensor keeps between protocol executions.
///
/// The representatives a node learns from server broadcasts are identical on
/// every node, so they are stored once on the sketch's broadcast board rather
/// than copied into each `NodeState`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeState {
    pub id: NodeId,
    pub item: DataItem,
    pub height: Height,
    pub dirty: bool,
}

/// How REFRESH learns the largest height among nodes updated since the last
/// rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshStrategy {
    /// The simulator supplies the value without charging messages.
    #[default]
    OracleMax,
    /// The server probes dirty nodes one class height range at a time.
    DescendProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub n: usize,
    pub phi: f64,
    pub h_max: u32,
    /// Class-width constant `C`.
    pub con: f64,
    pub eps: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub seed: u64,
    /// Amplification multiplier: `ceil(amp_factor * ln(1/delta'))` instances.
    pub amp_factor: f64,
    /// Sampling constant in the coin probability `min(1, c_s * S / k)`.
    pub sample_const: f64,
    pub refresh_strategy: RefreshStrategy,
}

impl Config {
    pub fn new(n: usize) -> Self {
        Config {
            n,
            phi: 0.5,
            h_max: default_h_max(n, 0.5),
            con: 0.25,
            eps: 0.25,
            delta: 0.1,
            delta_prime: 0.1,
            seed: 0,
            amp_factor: 24.0,
            sample_const: 48.0,
            refresh_strategy: RefreshStrategy::OracleMax,
        }
    }

    /// Sets `phi` and resets `h_max` to its minimal admissible value.
    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self.h_max = default_h_max(self.n, phi);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        if self.n == 0 {
            return Err(Error::config("n must be positive"));
        }
        open_unit("phi", self.phi)?;
        open_unit("eps", self.eps)?;
        open_unit("delta", self.delta)?;
        open_unit("delta_prime", self.delta_prime)?;
        let needed = default_h_max(self.n, self.phi);
        if self.h_max < needed {
            return Err(Error::config(format!(
                "h_max = {} is below ceil(log_(1/phi) n) = {needed}",
                self.h_max
            )));
        }
        if !(self.con > 0.0 && self.con.is_finite()) {
            return Err(Error::config("con must be a positive real"));
        }
        if self.amp_factor.is_nan() || self.sample_const.is_nan() || self.amp_factor <= 0.0 || self.sample_const <= 0.0 {
            return Err(Error::config("amp_factor and sample_const must be positive"));
        }
        Ok(())
    }
}

/// Purposes for derived random streams. Distinct tags keep streams independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    Heights = 2,
    Coins = 3,
    Representatives = 4,
    Workload = 5,
    Trial = 6,
    Geocoin = 7,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a root seed and a path of labels.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().enumerate().fold(splitmix64(root), |acc, (i, &part)| {
        splitmix64(acc ^ splitmix64(part.wrapping_add((i as u64 + 1) << 56)))
    })
}

pub fn stream_rng(root: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(stream as u64);
    full.extend_from_slice(path);
    ChaCha8Rng::seed_from_u64(derive_seed(root, &full))
}

/// Per-node height draws keyed by `(seed, node id, draw number)`.
///
/// Each protocol instance gets its own seed, so a node's height in one
/// instance is independent of every other instance and of evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct HeightSource {
    seed: u64,
    phi: f64,
}

impl HeightSource {
    pub fn new(seed: u64, phi: f64) -> Self {
        HeightSource { seed, phi }
    }

    pub fn height(&self, node: NodeId, draw: u64) -> Height {
        height_from_bits(self.bits(node, draw), self.phi)
    }

    pub fn bits(&self, node: NodeId, draw: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(((node.0 as u64) << 32) ^ draw.wrapping_mul(0xA24B_AED4_963E_E407)))
    }

    /// A uniform in `[0, 1)` for coin tosses.
    pub fn uniform(&self, node: NodeId, draw: u64) -> f64 {
        (self.bits(node, draw) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// The current item of every node, plus the same items in ascending order.
///
/// Updates are buffered and merged into the sorted view on [`flush`], so a
/// batch of `m` updates costs `O(n + m log m)` instead of `m` shifts.
///
/// [`flush`]: Population::flush
#[derive(Debug, Clone)]
pub struct Population {
    nodes: Vec<NodeState>,
    sorted: Vec<DataItem>,
    pending: Vec<NodeId>,
}

impl Population {
    pub fn from_values(values: &[i64]) -> Self {
        let nodes: Vec<NodeState> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let id = NodeId::from_index(i);
                NodeState { id, item: DataItem::new(v, id), height: Height(1), dirty: false }
            })
            .collect();
        let mut sorted: Vec<DataItem> = nodes.iter().map(|s| s.item).collect();
        sorted.sort_unstable();
        Population { nodes, sorted, pending: Vec::new() }
    }

    /// Values `0..n` assigned to nodes by a uniform random permutation.
    /// Builds the sorted view in linear time.
    pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut values: Vec<i64> = (0..n as i64).collect();
        values.shuffle(rng);
        let mut sorted = vec![DataItem::new(0, NodeId(1)); n];
        let nodes = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let id = NodeId::from_index(i);
                let item = DataItem::new(v, id);
                sorted[v as usize] = item;
                NodeState { id, item, height: Height(1), dirty: false }
            })
            .collect();
        Population { nodes, sorted, pending: Vec::new() }
    }

    /// Values drawn uniformly from `0..range`; small ranges produce ties.
    pub fn uniform<R: Rng + ?Sized>(n: usize, range: i64, rng: &mut R) -> Self {
        let values: Vec<i64> = (0..n).map(|_| rng.random_range(0..range.max(1))).collect();
        Self::from_values(&values)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut NodeState {
        &mut self.nodes[id.index()]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.index() < self.nodes.len()
    }

    /// All items in ascending order. Panics if updates are pending.
    pub fn sorted(&self) -> &[DataItem] {
        assert!(self.pending.is_empty(), "Population::flush must run before reading the sorted view");
        &self.sorted
    }

    /// Participants `{i : d_i < bound}`, or everyone when `bound` is `None`.
    pub fn below(&self, bound: Option<DataItem>) -> &[DataItem] {
        let sorted = self.sorted();
        match bound {
            Some(b) => &sorted[..sorted.partition_point(|x| *x < b)],
            None => sorted,
        }
    }

    /// Participants `{i : d_i <= bound}`, or everyone when `bound` is `None`.
    pub fn up_to(&self, bound: Option<DataItem>) -> &[DataItem] {
        let sorted = self.sorted();
        match bound {
            Some(b) => &sorted[..sorted.partition_point(|x| *x <= b)],
            None => sorted,
        }
    }

    /// Replaces node `id`'s item and returns the old one. The sorted view is
    /// stale until [`flush`](Population::flush).
    pub fn set_value(&mut self, id: NodeId, value: i64) -> DataItem {
        let state = &mut self.nodes[id.index()];
        let old = state.item;
        state.item = DataItem::new(value, id);
        self.pending.push(id);
        old
    }

    pub fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let mut touched = vec![false; self.nodes.len()];
        let mut fresh = Vec::with_capacity(self.pending.len());
        for id in self.pending.drain(..) {
            if !std::mem::replace(&mut touched[id.index()], true) {
                fresh.push(self.nodes[id.index()].item);
            }
        }
        fresh.sort_unstable();
        let kept = std::mem::take(&mut self.sorted);
        let mut merged = Vec::with_capacity(self.nodes.len());
        let mut fresh_iter = fresh.into_iter().peekable();
        for it in kept.into_iter().filter(|it| !touched[it.owner.index()]) {
            while let Some(f) = fresh_iter.next_if(|f| *f < it) {
                merged.push(f);
            }
            merged.push(it);
        }
        merged.extend(fresh_iter);
        self.sorted = merged;
    }

    /// Order-independent fingerprint of the current item multiset.
    pub fn checksum(&self) -> u64 {
        item_checksum(self.nodes.iter().map(|s| s.item))
    }
}

pub fn item_checksum(items: impl IntoIterator<Item = DataItem>) -> u64 {
    items.into_iter().fold(0u64, |acc, it| {
        acc.wrapping_add(splitmix64((it.value as u64) ^ ((it.owner.0 as u64) << 48).rotate_left(7)))
    })
}

/// Sorted snapshot used to score answers: ranks by binary search.
#[derive(Debug, Clone, Default)]
pub struct RankOracle {
    sorted: Vec<DataItem>,
}

impl RankOracle {
    pub fn new(items: impl IntoIterator<Item = DataItem>) -> Self {
        let mut sorted: Vec<DataItem> = items.into_iter().collect();
        sorted.sort_unstable();
        RankOracle { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn rank(&self, d: &DataItem) -> Result<usize> {
        self.sorted
            .binary_search(d)
            .map(|i| i + 1)
            .map_err(|_| Error::ItemAbsent(*d))
    }

    pub fn smallest(&self, k: usize) -> &[DataItem] {
        &self.sorted[..k.min(self.sorted.len())]
    }

    pub fn checksum(&self) -> u64 {
        item_checksum(self.sorted.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(values: &[i64]) -> Vec<DataItem> {
        values.iter().enumerate().map(|(i, &v)| DataItem::new(v, NodeId::from_index(i))).collect()
    }

    #[test]
    fn owner_breaks_ties() {
        let a = DataItem::new(5, NodeId(1));
        let b = DataItem::new(5, NodeId(2));
        assert!(a < b);
        assert_ne!(a, b);
    }

    #[test]
    fn clamp_examples() {
        let h = |x| Height::new(x).unwrap();
        assert_eq!(clamp_height(h(5), 12), h(5));
        assert_eq!(clamp_height(h(40), 12), h(12));
        assert_eq!(clamp_height(h(12), 12), h(12));
    }

    #[test]
    fn oracle_rank_examples() {
        let its = items(&[3, 1, 2]);
        assert_eq!(oracle_rank(&its, &its[1]).unwrap(), 1);
        assert_eq!(oracle_rank(&its, &its[0]).unwrap(), 3);
        let stranger = DataItem::new(1, NodeId(9));
        assert!(matches!(oracle_rank(&its, &stranger), Err(Error::ItemAbsent(_))));
    }

    #[test]
    fn oracle_rank_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let its: Vec<DataItem> = (0..1000)
            .map(|i| DataItem::new(rng.random_range(0..300), NodeId::from_index(i)))
            .collect();
        let mut sorted = its.clone();
        sorted.sort();
        for (pos, d) in sorted.iter().enumerate() {
            assert_eq!(oracle_rank(&its, d).unwrap(), pos + 1);
        }
    }

    #[test]
    fn height_pmf_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 1_000_000;
        let mut counts = [0u32; 4];
        let mut sum = 0u64;
        for _ in 0..draws {
            let h = draw_height(0.5, &mut rng).get();
            sum += h as u64;
            if h <= 3 {
                counts[h as usize] += 1;
            }
        }
        let mean = sum as f64 / draws as f64;
        assert!((mean - 2.0).abs() < 0.01, "mean {mean}");
        assert!((counts[1] as f64 / draws as f64 - 0.5).abs() < 0.003);
        assert!((counts[2] as f64 / draws as f64 - 0.25).abs() < 0.003);
    }

    #[test]
    fn height_tail_at_nine_tenths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 1_000_000;
        let tail = (0..draws).filter(|_| draw_height(0.9, &mut rng).get() >= 10).count();
        let freq = tail as f64 / draws as f64;
        assert!((freq - 0.9f64.powi(9)).abs() < 0.005, "tail {freq}");
    }

    #[test]
    fn height_pmf_bins_match_for_several_phi() {
        for (phi, seed) in [(0.25, 3u64), (0.5, 4), (0.75, 5)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws = 1_000_000;
            let mut bins = [0u32; 11];
            for _ in 0..draws {
                let h = draw_height(phi, &mut rng).get() as usize;
                if h <= 10 {
                    bins[h] += 1;
                }
            }
            for (h, &count) in bins.iter().enumerate().skip(1) {
                let expected = phi.powi(h as i32 - 1) * (1.0 - phi);
                let got = count as f64 / draws as f64;
                assert!((got - expected).abs() < 0.003, "phi {phi} h {h}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn same_seed_same_heights() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000).map(|_| draw_height(0.3, &mut rng).get()).collect::<Vec<_>>()
        };
        assert_eq!(run(77), run(77));
        assert_ne!(run(77), run(78));
    }

    #[test]
    fn h_max_default_covers_log() {
        assert_eq!(default_h_max(4096, 0.5), 12);
        assert_eq!(default_h_max(1 << 16, 0.5), 16);
        assert_eq!(default_h_max(4096, 0.25), 6);
        assert_eq!(default_h_max(1, 0.5), 1);
    }

    #[test]
    fn config_validation() {
        assert!(Config::new(100).validate().is_ok());
        let mut c = Config::new(100);
        c.phi = 1.0;
        assert!(c.validate().is_err());
        let mut c = Config::new(4096);
        c.h_max = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn permutation_population_is_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pop = Population::permutation(500, &mut rng);
        assert!(pop.sorted().windows(2).all(|w| w[0] < w[1]));
        let mut manual: Vec<DataItem> = pop.nodes().iter().map(|s| s.item).collect();
        manual.sort();
        assert_eq!(manual, pop.sorted());
    }

    #[test]
    fn flush_merges_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut pop = Population::uniform(300, 50, &mut rng);
        for _ in 0..120 {
            let id = NodeId(rng.random_range(1..=300));
            pop.set_value(id, rng.random_range(-20..70));
        }
        pop.flush();
        let oracle = RankOracle::new(pop.nodes().iter().map(|s| s.item));
        assert_eq!(pop.sorted(), oracle.smallest(300));
        assert_eq!(pop.checksum(), oracle.checksum());
    }
}
