use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

/// Byte-capacity LRU set. Recency is a monotonically increasing stamp, so
/// iteration order (and therefore eviction) never depends on hashing.
#[derive(Debug, Clone)]
pub struct LruSet<K> {
    entries: HashMap<K, (u64, u64)>,
    by_recency: BTreeMap<u64, K>,
    clock: u64,
    resident_bytes: u64,
}

impl<K: Clone + Eq + Hash> Default for LruSet<K> {
    fn default() -> Self {
        LruSet {
            entries: HashMap::new(),
            by_recency: BTreeMap::new(),
            clock: 0,
            resident_bytes: 0,
        }
    }
}

impl<K: Clone + Eq + Hash> LruSet<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident_bytes
    }

    pub fn contains(&self, key: &K) -> bool {
        self.entries.contains_key(key)
    }

    /// Marks a resident key most-recently-used. Returns false if absent.
    pub fn touch(&mut self, key: &K) -> bool {
        let Some(entry) = self.entries.get_mut(key) else {
            return false;
        };
        self.clock += 1;
        self.by_recency.remove(&entry.0);
        entry.0 = self.clock;
        self.by_recency.insert(self.clock, key.clone());
        true
    }

    /// Inserts at MRU position; the caller is responsible for evicting.
    pub fn insert(&mut self, key: K, size: u64) {
        if self.touch(&key) {
            return;
        }
        self.clock += 1;
        self.by_recency.insert(self.clock, key.clone());
        self.entries.insert(key, (self.clock, size));
        self.resident_bytes += size;
    }

    pub fn pop_lru(&mut self) -> Option<(K, u64)> {
        let (_, key) = self.by_recency.pop_first()?;
        let (_, size) = self.entries.remove(&key).expect("recency index in sync");
        self.resident_bytes -= size;
        Some((key, size))
    }

    /// Keys from least to most recently used.
    pub fn keys_lru_first(&self) -> impl Iterator<Item = &K> {
        self.by_recency.values()
    }
}
