use std::collections::BTreeMap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Trajectory,
    Advisory,
    DistanceHistory,
}

#[derive(Debug, Error, PartialEq)]
#[error("{store:?} store unavailable at t={t}")]
pub struct StoreUnavailable {
    pub store: StoreKind,
    pub t: f64,
}

/// A window `[start, end)` during which a store rejects reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub store: StoreKind,
    pub start: f64,
    pub end: f64,
}

/// Versioned key-value store with commit timestamps.
///
/// A read at `t` sees, per key, the write with the latest commit time at or
/// before `t`; writes with equal commit times are ordered by arrival.
#[derive(Debug, Clone)]
pub struct KeyValueStore<K, V> {
    kind: StoreKind,
    records: BTreeMap<K, BTreeMap<(OrderedFloat<f64>, u64), V>>,
    outages: Vec<(f64, f64)>,
    seq: u64,
}

impl<K: Ord + Clone, V> KeyValueStore<K, V> {
    pub fn new(kind: StoreKind) -> Self {
        KeyValueStore {
            kind,
            records: BTreeMap::new(),
            outages: Vec::new(),
            seq: 0,
        }
    }

    pub fn with_outages(mut self, outages: &[Outage]) -> Self {
        self.outages = outages.iter().filter(|o| o.store == self.kind).map(|o| (o.start, o.end)).collect();
        self
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn is_available(&self, t: f64) -> bool {
        !self.outages.iter().any(|&(a, b)| t >= a && t < b)
    }

    fn check(&self, t: f64) -> Result<(), StoreUnavailable> {
        if self.is_available(t) {
            Ok(())
        } else {
            Err(StoreUnavailable { store: self.kind, t })
        }
    }

    /// Write issued at `issued_at`, visible from `commit_at` on.
    pub fn put(&mut self, key: K, value: V, issued_at: f64, commit_at: f64) -> Result<(), StoreUnavailable> {
        self.check(issued_at)?;
        self.seq += 1;
        self.records.entry(key).or_default().insert((OrderedFloat(commit_at), self.seq), value);
        Ok(())
    }

    /// Latest write for `key` committed at or before `t`, with its commit time.
    pub fn get(&self, key: &K, t: f64) -> Result<Option<(&V, f64)>, StoreUnavailable> {
        self.check(t)?;
        Ok(self.latest(key, t))
    }

    fn latest(&self, key: &K, t: f64) -> Option<(&V, f64)> {
        self.records
            .get(key)?
            .range(..=(OrderedFloat(t), u64::MAX))
            .next_back()
            .map(|((c, _), v)| (v, c.0))
    }

    /// Every key's latest visible write at `t`, in key order.
    pub fn scan(&self, t: f64) -> Result<Vec<(K, &V, f64)>, StoreUnavailable> {
        self.check(t)?;
        Ok(self
            .records
            .keys()
            .filter_map(|k| self.latest(k, t).map(|(v, c)| (k.clone(), v, c)))
            .collect())
    }

    /// Drop versions that can no longer be the latest one visible at or after `t`.
    pub fn compact(&mut self, t: f64) {
        for versions in self.records.values_mut() {
            let keep_from = versions.range(..=(OrderedFloat(t), u64::MAX)).next_back().map(|(k, _)| *k);
            if let Some(k) = keep_from {
                *versions = versions.split_off(&k);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn visibility_follows_commit_time() {
        let mut s: KeyValueStore<u32, &str> = KeyValueStore::new(StoreKind::Advisory);
        assert_eq!(s.get(&1, 100.0).unwrap(), None);
        s.put(1, "a", 10.0, 10.3).unwrap();
        assert_eq!(s.get(&1, 10.0).unwrap(), None);
        assert_eq!(s.get(&1, 10.3).unwrap(), Some((&"a", 10.3)));
        s.put(1, "b", 11.0, 11.2).unwrap();
        assert_eq!(s.get(&1, 11.1).unwrap().unwrap().0, &"a");
        assert_eq!(s.get(&1, 12.0).unwrap().unwrap().0, &"b");
        // equal commit times: the later write wins
        s.put(1, "c", 11.0, 11.2).unwrap();
        assert_eq!(s.get(&1, 12.0).unwrap().unwrap().0, &"c");
    }

    #[test]
    fn outages_reject_access() {
        let outage = Outage { store: StoreKind::Trajectory, start: 5.0, end: 7.0 };
        let mut s: KeyValueStore<u32, u32> = KeyValueStore::new(StoreKind::Trajectory).with_outages(&[outage]);
        assert!(s.put(1, 1, 5.5, 5.6).is_err());
        assert!(s.put(1, 1, 7.0, 7.1).is_ok());
        assert!(s.get(&1, 6.0).is_err());
        assert!(s.scan(6.9).is_err());
        assert_eq!(s.scan(8.0).unwrap().len(), 1);
        let other: KeyValueStore<u32, u32> = KeyValueStore::new(StoreKind::Advisory).with_outages(&[outage]);
        assert!(other.is_available(6.0));
    }

    #[test]
    fn compaction_keeps_reads() {
        let mut s: KeyValueStore<u32, u32> = KeyValueStore::new(StoreKind::Trajectory);
        for i in 0..10 {
            s.put(0, i, i as f64, i as f64 + 0.5).unwrap();
        }
        s.compact(5.0);
        assert_eq!(s.get(&0, 5.0).unwrap().unwrap().0, &4);
        assert_eq!(s.get(&0, 9.5).unwrap().unwrap().0, &9);
        assert_eq!(s.get(&0, 4.0).unwrap(), None);
    }

    proptest! {
        #[test]
        fn reads_never_see_the_future(writes in prop::collection::vec((0u32..4, 0.0..100.0f64), 1..60), at in 0.0..120.0f64) {
            let mut s: KeyValueStore<u32, (f64, usize)> = KeyValueStore::new(StoreKind::Trajectory);
            for (i, &(k, c)) in writes.iter().enumerate() {
                s.put(k, (c, i), 0.0, c).unwrap();
            }
            for k in 0..4 {
                let expected = writes
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| w.0 == k && w.1 <= at)
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
                    .map(|(i, w)| (w.1, i));
                prop_assert_eq!(s.get(&k, at).unwrap().map(|(v, _)| *v), expected);
            }
        }
    }
}
