//! Broadcast probes, unicast responses, and unit-cost accounting.
//!
//! A round is one [`ProbeBatch`] together with all of its responses, or one
//! informational broadcast issued on its own. Everything issued inside
//! [`Network::in_round`] shares a single round.

use std::fmt;
use std::io::Write;
use std::ops::{Add, AddAssign, Sub};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use crate::model::{draw_height, DataItem, NodeId, NodeState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostLedger {
    pub broadcasts: u64,
    pub unicasts: u64,
    pub rounds: u64,
}

impl CostLedger {
    pub fn total_messages(&self) -> u64 {
        self.broadcasts + self.unicasts
    }
}

impl Add for CostLedger {
    type Output = CostLedger;

    fn add(self, rhs: CostLedger) -> CostLedger {
        CostLedger {
            broadcasts: self.broadcasts + rhs.broadcasts,
            unicasts: self.unicasts + rhs.unicasts,
            rounds: self.rounds + rhs.rounds,
        }
    }
}

impl AddAssign for CostLedger {
    fn add_assign(&mut self, rhs: CostLedger) {
        *self = *self + rhs;
    }
}

impl Sub for CostLedger {
    type Output = CostLedger;

    fn sub(self, rhs: CostLedger) -> CostLedger {
        CostLedger {
            broadcasts: self.broadcasts - rhs.broadcasts,
            unicasts: self.unicasts - rhs.unicasts,
            rounds: self.rounds - rhs.rounds,
        }
    }
}

/// Open interval `(lower, upper)` over the item order; `None` is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Window {
    pub lower: Option<DataItem>,
    pub upper: Option<DataItem>,
}

impl Window {
    pub fn all() -> Self {
        Window::default()
    }

    pub fn below(upper: Option<DataItem>) -> Self {
        Window { lower: None, upper }
    }

    pub fn between(lower: Option<DataItem>, upper: Option<DataItem>) -> Self {
        Window { lower, upper }
    }

    pub fn contains(&self, d: &DataItem) -> bool {
        self.lower.is_none_or(|l| l < *d) && self.upper.is_none_or(|u| *d < u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeightPredicate {
    AtLeast(u32),
    Exactly(u32),
}

impl HeightPredicate {
    pub fn matches(self, h: u32) -> bool {
        match self {
            HeightPredicate::AtLeast(x) => h >= x,
            HeightPredicate::Exactly(x) => h == x,
        }
    }

    pub fn level(self) -> u32 {
        match self {
            HeightPredicate::AtLeast(x) | HeightPredicate::Exactly(x) => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub window: Window,
    pub height: HeightPredicate,
    pub dirty_only: bool,
    pub instance: u32,
}

impl Probe {
    pub fn new(window: Window, height: HeightPredicate) -> Self {
        Probe { window, height, dirty_only: false, instance: 0 }
    }

    pub fn instance(mut self, instance: u32) -> Self {
        self.instance = instance;
        self
    }

    pub fn dirty_only(mut self) -> Self {
        self.dirty_only = true;
        self
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = |b: Option<DataItem>, inf: &str| b.map_or_else(|| inf.to_string(), |d| d.to_string());
        let (op, h) = match self.height {
            HeightPredicate::AtLeast(h) => (">=", h),
            HeightPredicate::Exactly(h) => ("=", h),
        };
        write!(
            f,
            "probe ({},{}) h{op}{h}{}",
            bound(self.window.lower, "-inf"),
            bound(self.window.upper, "+inf"),
            if self.dirty_only { " dirty" } else { "" }
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProbeBatch {
    pub probes: Vec<Probe>,
}

impl ProbeBatch {
    pub fn single(probe: Probe) -> Self {
        ProbeBatch { probes: vec![probe] }
    }
}

/// Anything that can answer a probe: returns the matching items in ascending
/// order.
pub trait ProbeTarget {
    fn respond(&self, probe: &Probe, out: &mut Vec<DataItem>);
}

/// Reference evaluation: every node checks the predicate against its state.
impl ProbeTarget for [NodeState] {
    fn respond(&self, probe: &Probe, out: &mut Vec<DataItem>) {
        let start = out.len();
        out.extend(
            self.iter()
                .filter(|s| {
                    (!probe.dirty_only || s.dirty)
                        && probe.height.matches(s.height.get())
                        && probe.window.contains(&s.item)
                })
                .map(|s| s.item),
        );
        out[start..].sort_unstable();
    }
}

/// Dispatches each probe to the target named by its instance id.
pub struct Instances<'a, T>(pub &'a [T]);

impl<T: ProbeTarget> ProbeTarget for Instances<'_, T> {
    fn respond(&self, probe: &Probe, out: &mut Vec<DataItem>) {
        self.0[probe.instance as usize].respond(probe, out)
    }
}

/// Participants in ascending item order with their heights bucketed, so a
/// probe touches only the nodes at the heights it asks about.
///
/// Heights below `floor` are never realized; probing below it is a bug.
#[derive(Debug, Clone)]
pub struct HeightIndex<'a> {
    items: &'a [DataItem],
    floor: u32,
    buckets: Vec<Vec<u32>>,
}

impl<'a> HeightIndex<'a> {
    /// Builds from one explicit height per participant, keeping heights at or
    /// above `floor`.
    pub fn from_heights(items: &'a [DataItem], floor: u32, mut height: impl FnMut(usize, &DataItem) -> u32) -> Self {
        let floor = floor.max(1);
        let mut buckets: Vec<Vec<u32>> = Vec::new();
        for (pos, it) in items.iter().enumerate() {
            let h = height(pos, it);
            if h < floor {
                continue;
            }
            let slot = (h - floor) as usize;
            if buckets.len() <= slot {
                buckets.resize_with(slot + 1, Vec::new);
            }
            buckets[slot].push(pos as u32);
        }
        HeightIndex { items, floor, buckets }
    }

    /// Realizes i.i.d. geometric heights lazily: only participants whose
    /// height reaches `floor` are drawn, by skipping ahead geometrically.
    /// The realized heights have the same joint law as drawing every node.
    pub fn sparse<R: Rng + ?Sized>(items: &'a [DataItem], phi: f64, floor: u32, rng: &mut R) -> Self {
        let floor = floor.max(1);
        let reach = phi.powi(floor as i32 - 1);
        let mut buckets: Vec<Vec<u32>> = Vec::new();
        let gaps = Geometric::new(reach).expect("reach probability lies in (0, 1]");
        let mut pos = 0u64;
        loop {
            pos += gaps.sample(rng);
            if pos >= items.len() as u64 {
                break;
            }
            let h = floor - 1 + draw_height(phi, rng).get();
            let slot = (h - floor) as usize;
            if buckets.len() <= slot {
                buckets.resize_with(slot + 1, Vec::new);
            }
            buckets[slot].push(pos as u32);
            pos += 1;
        }
        HeightIndex { items, floor, buckets }
    }

    pub fn participants(&self) -> &'a [DataItem] {
        self.items
    }

    pub fn floor(&self) -> u32 {
        self.floor
    }

    /// Number of participants with a realized height.
    pub fn realized(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    fn span(&self, window: &Window) -> (u32, u32) {
        let lo = window.lower.map_or(0, |l| self.items.partition_point(|x| *x <= l));
        let hi = window.upper.map_or(self.items.len(), |u| self.items.partition_point(|x| *x < u));
        (lo as u32, hi.max(lo) as u32)
    }
}

impl ProbeTarget for HeightIndex<'_> {
    fn respond(&self, probe: &Probe, out: &mut Vec<DataItem>) {
        assert!(!probe.dirty_only, "HeightIndex carries no dirty flags");
        let level = probe.height.level();
        assert!(level >= self.floor, "probe at height {level} below realized floor {}", self.floor);
        let (lo, hi) = self.span(&probe.window);
        if lo == hi {
            return;
        }
        let first = (level - self.floor) as usize;
        let last = match probe.height {
            HeightPredicate::Exactly(_) => first + 1,
            HeightPredicate::AtLeast(_) => self.buckets.len(),
        };
        let mut hits: Vec<u32> = Vec::new();
        for bucket in self.buckets.iter().take(last).skip(first) {
            let a = bucket.partition_point(|&p| p < lo);
            let b = bucket.partition_point(|&p| p < hi);
            hits.extend_from_slice(&bucket[a..b]);
        }
        hits.sort_unstable();
        out.extend(hits.into_iter().map(|p| self.items[p as usize]));
    }
}

/// What a broadcast or unicast carries, for the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Bound(DataItem),
    Representatives { level: usize, alarm: DataItem, rep: DataItem },
    EmptyLevel { level: usize },
    SampleRequest { bound: Option<DataItem>, p: f64 },
    Sample(DataItem),
    Notice { levels: Vec<usize> },
    Note(&'static str),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Bound(d) => write!(f, "bound {d}"),
            Payload::Representatives { level, alarm, rep } => write!(f, "reps L{level} a={alarm} r={rep}"),
            Payload::EmptyLevel { level } => write!(f, "empty L{level}"),
            Payload::SampleRequest { bound, p } => match bound {
                Some(b) => write!(f, "sample below {b} p={p:.6}"),
                None => write!(f, "sample all p={p:.6}"),
            },
            Payload::Sample(d) => write!(f, "sample {d}"),
            Payload::Notice { levels } => {
                write!(f, "notice")?;
                for l in levels {
                    write!(f, " L{l}")?;
                }
                Ok(())
            }
            Payload::Note(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Broadcast,
    Unicast,
}

impl EventKind {
    pub fn tag(self) -> &'static str {
        match self {
            EventKind::Broadcast => "BCAST",
            EventKind::Unicast => "UNICAST",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub round: u64,
    pub kind: EventKind,
    pub instance: u32,
    pub node: Option<NodeId>,
    pub summary: String,
}

/// Simulated channel for one protocol execution (or one scenario).
#[derive(Debug, Default)]
pub struct Network {
    ledger: CostLedger,
    trace: Option<Vec<TraceEvent>>,
    depth: u32,
}

impl Network {
    pub fn new() -> Self {
        Network::default()
    }

    /// A network that also records every message.
    pub fn traced() -> Self {
        Network { trace: Some(Vec::new()), ..Network::default() }
    }

    pub fn ledger(&self) -> CostLedger {
        self.ledger
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn record(&mut self, kind: EventKind, instance: u32, node: Option<NodeId>, summary: impl FnOnce() -> String) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent { round: self.ledger.rounds, kind, instance, node, summary: summary() });
        }
    }

    /// Runs `f` inside one communication round. Nested calls share the
    /// outermost round.
    pub fn in_round<R>(&mut self, f: impl FnOnce(&mut Network) -> R) -> R {
        if self.depth == 0 {
            self.ledger.rounds += 1;
        }
        self.depth += 1;
        let out = f(self);
        self.depth -= 1;
        out
    }

    /// Broadcasts every probe of the batch and collects the responses of each,
    /// sorted ascending. Costs one round, one broadcast per probe and one
    /// unicast per response.
    pub fn issue_probe_batch<T: ProbeTarget + ?Sized>(&mut self, batch: &ProbeBatch, target: &T) -> Vec<Vec<DataItem>> {
        self.in_round(|net| {
            batch
                .probes
                .iter()
                .map(|probe| {
                    net.ledger.broadcasts += 1;
                    net.record(EventKind::Broadcast, probe.instance, None, || probe.to_string());
                    let mut responses = Vec::new();
                    target.respond(probe, &mut responses);
                    net.ledger.unicasts += responses.len() as u64;
                    if net.trace.is_some() {
                        for r in &responses {
                            net.record(EventKind::Unicast, probe.instance, Some(r.owner), || format!("response {r}"));
                        }
                    }
                    responses
                })
                .collect()
        })
    }

    /// A batch holding a single probe.
    pub fn probe<T: ProbeTarget + ?Sized>(&mut self, probe: Probe, target: &T) -> Vec<DataItem> {
        self.issue_probe_batch(&ProbeBatch::single(probe), target).pop().unwrap_or_default()
    }

    /// One server broadcast; its own round unless issued inside a batch.
    pub fn broadcast_value(&mut self, payload: Payload) {
        self.broadcast_tagged(0, payload)
    }

    pub fn broadcast_tagged(&mut self, instance: u32, payload: Payload) {
        self.in_round(|net| {
            net.ledger.broadcasts += 1;
            net.record(EventKind::Broadcast, instance, None, || payload.to_string());
        })
    }

    pub fn unicast_to_server(&mut self, node: NodeId, payload: Payload) {
        self.ledger.unicasts += 1;
        self.record(EventKind::Unicast, 0, Some(node), || payload.to_string());
    }
}

/// Writes trace events as tab-separated lines:
/// `trial round kind instance node summary`.
pub fn write_trace<W: Write>(out: &mut W, trial: u64, events: &[TraceEvent]) -> std::io::Result<()> {
    for e in events {
        let node = e.node.map_or_else(|| "-".to_string(), |n| n.to_string());
        writeln!(out, "{trial}\t{}\t{}\t{}\t{node}\t{}", e.round, e.kind.tag(), e.instance, e.summary)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Height;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_nodes() -> Vec<NodeState> {
        [(1, 1), (2, 2), (3, 1)]
            .iter()
            .enumerate()
            .map(|(i, &(v, h))| {
                let id = NodeId::from_index(i);
                NodeState { id, item: DataItem::new(v, id), height: Height::new(h).unwrap(), dirty: false }
            })
            .collect()
    }

    #[test]
    fn probe_all_at_height_two() {
        let nodes = three_nodes();
        let mut net = Network::new();
        let r = net.probe(Probe::new(Window::all(), HeightPredicate::AtLeast(2)), &nodes[..]);
        assert_eq!(r, vec![nodes[1].item]);
        assert_eq!(net.ledger(), CostLedger { broadcasts: 1, unicasts: 1, rounds: 1 });
    }

    #[test]
    fn upper_bound_is_open() {
        let nodes = three_nodes();
        let mut net = Network::new();
        let r = net.probe(Probe::new(Window::below(Some(nodes[1].item)), HeightPredicate::AtLeast(1)), &nodes[..]);
        assert_eq!(r, vec![nodes[0].item]);
    }

    #[test]
    fn broadcasts_inside_one_round() {
        let mut net = Network::new();
        net.in_round(|net| {
            net.broadcast_value(Payload::Note("a"));
            net.broadcast_value(Payload::Note("b"));
        });
        assert_eq!(net.ledger(), CostLedger { broadcasts: 2, unicasts: 0, rounds: 1 });
        net.broadcast_value(Payload::Note("c"));
        assert_eq!(net.ledger().rounds, 2);
    }

    #[test]
    fn unicasts_only_touch_unicast_count() {
        let mut net = Network::new();
        let before = net.ledger();
        assert_eq!(net.ledger(), before);
        for i in 1..=5 {
            net.unicast_to_server(NodeId(i), Payload::Notice { levels: vec![0] });
        }
        assert_eq!(net.ledger(), CostLedger { broadcasts: 0, unicasts: 5, rounds: 0 });
    }

    #[test]
    fn batch_accounting() {
        let nodes = three_nodes();
        let mut net = Network::traced();
        let batch = ProbeBatch {
            probes: vec![
                Probe::new(Window::all(), HeightPredicate::AtLeast(1)),
                Probe::new(Window::all(), HeightPredicate::Exactly(2)).instance(1),
                Probe::new(Window::all(), HeightPredicate::Exactly(9)).instance(2),
            ],
        };
        let out = net.issue_probe_batch(&batch, &nodes[..]);
        assert_eq!(out.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 1, 0]);
        assert_eq!(net.ledger(), CostLedger { broadcasts: 3, unicasts: 4, rounds: 1 });
        assert_eq!(net.trace().unwrap().len() as u64, net.ledger().total_messages());
    }

    #[test]
    fn sparse_index_realizes_expected_count() {
        let items: Vec<DataItem> = (0..1 << 16).map(|i| DataItem::new(i, NodeId::from_index(i as usize))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let total: usize = (0..50).map(|_| HeightIndex::sparse(&items, 0.5, 7, &mut rng).realized()).sum();
        let mean = total as f64 / 50.0;
        // 65536 * 2^-6 = 1024 with binomial sd 32 per draw, 4.5 for the mean.
        assert!((mean - 1024.0).abs() < 20.0, "mean {mean}");
    }

    #[test]
    fn write_trace_format() {
        let nodes = three_nodes();
        let mut net = Network::traced();
        net.probe(Probe::new(Window::all(), HeightPredicate::AtLeast(2)), &nodes[..]);
        let mut buf = Vec::new();
        write_trace(&mut buf, 7, net.trace().unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "7\t1\tBCAST\t0\t-\tprobe (-inf,+inf) h>=2\n7\t1\tUNICAST\t0\t2\tresponse 2@2\n");
    }
}
