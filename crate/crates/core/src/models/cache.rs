use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;
use rustc_hash::FxBuildHasher;

use crate::types::canonical;

/// Memo of pair distances for one frozen state of `W`.
///
/// The map is sharded, so lookups and inserts from concurrent search workers
/// only contend within a shard; a miss computes under the shard's entry lock,
/// so every caller observes the first stored value. Values are valid only
/// until the next [`DistanceCache::begin_generation`].
#[derive(Debug)]
pub struct DistanceCache {
    map: DashMap<u64, f64, FxBuildHasher>,
    generation: AtomicU64,
    evaluations: AtomicU64,
    enabled: bool,
}

impl Default for DistanceCache {
    fn default() -> Self {
        Self::new()
    }
}

impl DistanceCache {
    pub fn new() -> Self {
        Self {
            map: DashMap::with_hasher(FxBuildHasher),
            generation: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
            enabled: true,
        }
    }

    /// A cache that never stores anything; every lookup evaluates.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    /// Drops every memoized value and starts a new generation.
    pub fn begin_generation(&self) -> u64 {
        self.map.clear();
        self.generation.fetch_add(1, Ordering::AcqRel) + 1
    }

    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::Acquire)
    }

    /// Number of times the underlying distance was actually computed.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    fn key(i: usize, j: usize) -> u64 {
        let (a, b) = canonical(i, j);
        ((a as u64) << 32) | b as u64
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.map.get(&Self::key(i, j)).map(|v| *v)
    }

    /// Returns the memoized `d(i, j)`, computing it with `f` on a miss.
    #[inline]
    pub fn get_or_compute(&self, i: usize, j: usize, f: impl FnOnce() -> f64) -> f64 {
        if !self.enabled {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            return f();
        }
        let key = Self::key(i, j);
        if let Some(v) = self.map.get(&key) {
            return *v;
        }
        *self.map.entry(key).or_insert_with(|| {
            self.evaluations.fetch_add(1, Ordering::Relaxed);
            f()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memoizes_symmetric_pairs() {
        let c = DistanceCache::new();
        c.begin_generation();
        assert_eq!(c.get_or_compute(3, 1, || 2.5), 2.5);
        assert_eq!(c.get_or_compute(1, 3, || 9.0), 2.5);
        assert_eq!(c.evaluations(), 1);
        c.begin_generation();
        assert_eq!(c.get_or_compute(1, 3, || 9.0), 9.0);
        assert_eq!(c.evaluations(), 2);
        assert_eq!(c.generation(), 2);
    }

    #[test]
    fn concurrent_get_or_compute_agrees() {
        let c = DistanceCache::new();
        std::thread::scope(|s| {
            for t in 0..4 {
                let c = &c;
                s.spawn(move || {
                    for i in 0..200usize {
                        let v = c.get_or_compute(i, i + 1, || (i * 10 + t) as f64);
                        assert_eq!(v % 10.0 < 4.0, true);
                    }
                });
            }
        });
        assert_eq!(c.len(), 200);
        assert_eq!(c.evaluations(), 200);
    }
}
