//! Independent ground truth, replayed from the same scenario the protocols
//! see, and the verdict rules applied to query answers.

use serde::Serialize;

use crate::model::{item_checksum, oracle_rank, DataItem, NodeId};

/// Current value of every node, kept apart from any protocol state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oracle {
    values: Vec<i64>,
}

impl Oracle {
    pub fn from_values(values: &[i64]) -> Self {
        Oracle { values: values.to_vec() }
    }

    pub fn apply(&mut self, id: NodeId, value: i64) {
        self.values[id.index()] = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = DataItem> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| DataItem::new(v, NodeId::from_index(i)))
    }

    /// The `k` smallest items, ascending, by linear-time selection.
    pub fn smallest(&self, k: usize) -> Vec<DataItem> {
        let mut all: Vec<DataItem> = self.items().collect();
        let k = k.min(all.len());
        if k == 0 {
            return Vec::new();
        }
        all.select_nth_unstable(k - 1);
        all.truncate(k);
        all.sort_unstable();
        all
    }

    pub fn rank(&self, d: &DataItem) -> Option<usize> {
        let all: Vec<DataItem> = self.items().collect();
        oracle_rank(&all, d).ok()
    }

    pub fn checksum(&self) -> u64 {
        item_checksum(self.items())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Answer<'a> {
    TopK(&'a [DataItem]),
    KSelect { item: Option<DataItem>, eps: f64 },
}

/// Closed window `(1 - eps) k <= rank <= (1 + eps) k`.
pub fn in_window(rank: usize, k: usize, eps: f64) -> bool {
    let (r, k) = (rank as f64, k as f64);
    (1.0 - eps) * k <= r + 1e-9 && r <= (1.0 + eps) * k + 1e-9
}

/// Top-k: exact equality with the oracle's k smallest. k-select: window test.
/// Also returns the rank of the answer (the largest item for Top-k).
pub fn verify_against_oracle(oracle: &Oracle, k: usize, answer: &Answer<'_>) -> (Verdict, Option<usize>) {
    match *answer {
        Answer::TopK(items) => {
            let rank = items.last().and_then(|d| oracle.rank(d));
            (Verdict::from_bool(items.len() == k && items == oracle.smallest(k).as_slice()), rank)
        }
        Answer::KSelect { item, eps } => match item.and_then(|d| oracle.rank(&d)) {
            Some(r) => (Verdict::from_bool(in_window(r, k, eps)), Some(r)),
            None => (Verdict::Fail, None),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle() -> Oracle {
        Oracle::from_values(&(0..200).rev().collect::<Vec<i64>>())
    }

    #[test]
    fn exact_match_passes() {
        let o = oracle();
        let best = o.smallest(5);
        assert_eq!(best.iter().map(|d| d.value).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(verify_against_oracle(&o, 5, &Answer::TopK(&best)), (Verdict::Pass, Some(5)));
        assert_eq!(verify_against_oracle(&o, 5, &Answer::TopK(&best[..4])).0, Verdict::Fail);
    }

    #[test]
    fn window_is_closed() {
        let o = oracle();
        let at = |rank: i64| o.items().find(|d| d.value == rank - 1);
        assert_eq!(verify_against_oracle(&o, 100, &Answer::KSelect { item: at(125), eps: 0.25 }).0, Verdict::Pass);
        assert_eq!(verify_against_oracle(&o, 100, &Answer::KSelect { item: at(75), eps: 0.25 }).0, Verdict::Pass);
        assert_eq!(verify_against_oracle(&o, 100, &Answer::KSelect { item: at(126), eps: 0.25 }).0, Verdict::Fail);
        assert_eq!(verify_against_oracle(&o, 100, &Answer::KSelect { item: None, eps: 0.25 }).0, Verdict::Fail);
    }

    #[test]
    fn replay_tracks_checksum() {
        let mut o = oracle();
        let mut pop = crate::model::Population::from_values(&(0..200).rev().collect::<Vec<i64>>());
        for (i, v) in [(3usize, -5i64), (7, 1000), (3, 42)] {
            o.apply(NodeId::from_index(i), v);
            pop.set_value(NodeId::from_index(i), v);
        }
        pop.flush();
        assert_eq!(o.checksum(), pop.checksum());
    }
}
