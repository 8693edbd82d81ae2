//! Geo-located block caches in front of data origins.
//!
//! A job picks the cache nearest to where it runs (haversine distance, ties by
//! cache name) once at start, then reads each input file through it. Reads are
//! rounded out to whole blocks; resident blocks are served at the cache
//! bandwidth, missing blocks are first pulled from the origin. Timing is
//! serial: `miss_bytes / origin_bw + total_bytes / cache_bw`.

mod geo;
mod lru;

use thiserror::Error;

pub use geo::{haversine_km, GeoPoint, EARTH_RADIUS_KM};
pub use lru::LruSet;

pub const DEFAULT_BLOCK_SIZE: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CacheError {
    #[error("no caches to choose from")]
    NoCaches,
    #[error("read of {length} bytes at offset {offset} runs past end of {size}-byte file")]
    OutOfRange { offset: u64, length: u64, size: u64 },
    #[error("cache '{name}': {reason}")]
    InvalidConfig { name: String, reason: String },
}

/// Interned file identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub file: FileId,
    pub block_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferResult {
    pub bytes_from_cache: u64,
    pub bytes_from_origin: u64,
    /// Seconds.
    pub duration: f64,
    pub evicted_blocks: u64,
    pub hit_blocks: u64,
    pub miss_blocks: u64,
}

impl TransferResult {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_from_cache + self.bytes_from_origin
    }

    fn accumulate(&mut self, other: &TransferResult) {
        self.bytes_from_cache += other.bytes_from_cache;
        self.bytes_from_origin += other.bytes_from_origin;
        self.duration += other.duration;
        self.evicted_blocks += other.evicted_blocks;
        self.hit_blocks += other.hit_blocks;
        self.miss_blocks += other.miss_blocks;
    }
}

/// Cumulative per-cache counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hit_blocks: u64,
    pub miss_blocks: u64,
    pub bytes_from_cache: u64,
    pub bytes_from_origin: u64,
    pub evicted_blocks: u64,
}

impl CacheStats {
    /// Fraction of blocks served without touching the origin (0 when idle).
    pub fn hit_ratio(&self) -> f64 {
        let total = self.hit_blocks + self.miss_blocks;
        if total == 0 {
            0.0
        } else {
            self.hit_blocks as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheNode {
    pub name: String,
    pub geo: GeoPoint,
    pub capacity_bytes: u64,
    pub block_size: u64,
    /// Cache to job, bytes per second.
    pub bandwidth_bps: f64,
    /// Origin to cache, bytes per second.
    pub origin_bandwidth_bps: f64,
    lru: LruSet<BlockKey>,
    stats: CacheStats,
}

impl CacheNode {
    pub fn new(
        name: impl Into<String>,
        geo: GeoPoint,
        capacity_bytes: u64,
        block_size: u64,
        bandwidth_bps: f64,
        origin_bandwidth_bps: f64,
    ) -> Result<CacheNode, CacheError> {
        let name = name.into();
        let invalid = |reason: &str| CacheError::InvalidConfig {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if block_size == 0 {
            return Err(invalid("block size must be positive"));
        }
        if !(bandwidth_bps > 0.0 && bandwidth_bps.is_finite()) {
            return Err(invalid("bandwidth must be positive"));
        }
        if !(origin_bandwidth_bps > 0.0 && origin_bandwidth_bps.is_finite()) {
            return Err(invalid("origin bandwidth must be positive"));
        }
        if !geo.is_valid() {
            return Err(invalid("coordinates out of range"));
        }
        Ok(CacheNode {
            name,
            geo,
            capacity_bytes,
            block_size,
            bandwidth_bps,
            origin_bandwidth_bps,
            lru: LruSet::new(),
            stats: CacheStats::default(),
        })
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lru.resident_bytes()
    }

    pub fn is_resident(&self, key: &BlockKey) -> bool {
        self.lru.contains(key)
    }

    /// Resident blocks, least recently used first.
    pub fn resident_blocks(&self) -> impl Iterator<Item = &BlockKey> {
        self.lru.keys_lru_first()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Size of block `index` of a `file_size`-byte file (the last block may be short).
    pub fn block_len(&self, file_size: u64, index: u64) -> u64 {
        let start = index * self.block_size;
        self.block_size.min(file_size.saturating_sub(start))
    }

    /// Block-rounded number of bytes a read of `[offset, offset+length)` moves.
    pub fn rounded_len(&self, file_size: u64, offset: u64, length: u64) -> u64 {
        if length == 0 {
            return 0;
        }
        let first = offset / self.block_size;
        let last = (offset + length - 1) / self.block_size;
        (first..=last).map(|i| self.block_len(file_size, i)).sum()
    }

    /// Reads `length` bytes at `offset` of a file through this cache.
    pub fn fetch(
        &mut self,
        file: FileId,
        file_size: u64,
        offset: u64,
        length: u64,
    ) -> Result<TransferResult, CacheError> {
        if offset.checked_add(length).is_none_or(|end| end > file_size) {
            return Err(CacheError::OutOfRange {
                offset,
                length,
                size: file_size,
            });
        }
        let mut result = TransferResult::default();
        if length == 0 {
            return Ok(result);
        }
        let first = offset / self.block_size;
        let last = (offset + length - 1) / self.block_size;
        for block_index in first..=last {
            let key = BlockKey { file, block_index };
            let len = self.block_len(file_size, block_index);
            if self.lru.touch(&key) {
                result.hit_blocks += 1;
                result.bytes_from_cache += len;
                continue;
            }
            result.miss_blocks += 1;
            result.bytes_from_origin += len;
            if len > self.capacity_bytes {
                // Too big to ever be resident: passes straight through.
                continue;
            }
            self.lru.insert(key, len);
            while self.lru.resident_bytes() > self.capacity_bytes {
                self.lru.pop_lru();
                result.evicted_blocks += 1;
            }
        }
        let total = result.total_bytes() as f64;
        result.duration =
            result.bytes_from_origin as f64 / self.origin_bandwidth_bps + total / self.bandwidth_bps;

        self.stats.hit_blocks += result.hit_blocks;
        self.stats.miss_blocks += result.miss_blocks;
        self.stats.bytes_from_cache += result.bytes_from_cache;
        self.stats.bytes_from_origin += result.bytes_from_origin;
        self.stats.evicted_blocks += result.evicted_blocks;
        debug_assert!(self.lru.resident_bytes() <= self.capacity_bytes);
        Ok(result)
    }
}

/// Index of the cache closest to `at`; ties go to the lexicographically smallest name.
pub fn nearest_cache_index(at: GeoPoint, caches: &[CacheNode]) -> Result<usize, CacheError> {
    caches
        .iter()
        .enumerate()
        .map(|(i, c)| (haversine_km(at, c.geo), &c.name, i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, _, i)| i)
        .ok_or(CacheError::NoCaches)
}

pub fn nearest_cache(at: GeoPoint, caches: &[CacheNode]) -> Result<&CacheNode, CacheError> {
    nearest_cache_index(at, caches).map(|i| &caches[i])
}

/// Reads every input whole, in order, through `cache`. Duration is the sum of
/// the individual fetches.
pub fn stage_files(inputs: &[(FileId, u64)], cache: &mut CacheNode) -> TransferResult {
    let mut total = TransferResult::default();
    for &(file, size) in inputs {
        let r = cache
            .fetch(file, size, 0, size)
            .expect("whole-file reads are always in range");
        total.accumulate(&r);
    }
    total
}
