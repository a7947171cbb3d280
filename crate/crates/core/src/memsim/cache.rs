//! Set-associative write-back cache and fully-associative TLB models.
//!
//! Lines store real data so that functional correctness (read-your-writes
//! through the hierarchy) and purge behavior are emergent rather than
//! assumed.

use crate::events::Pid;
use crate::machine::Cluster;

/// One cache line slot.
#[derive(Clone, Debug, PartialEq)]
pub struct CacheLineState {
    pub valid: bool,
    pub dirty: bool,
    pub tag: u64,
    pub line_addr: u64,
    pub owner: Pid,
    pub owner_cluster: Cluster,
    pub lru: u64,
    pub data: Box<[u8]>,
}

/// A line pushed out of a cache, either by replacement or invalidation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvictedLine {
    pub line_addr: u64,
    pub owner: Pid,
    pub owner_cluster: Cluster,
    pub dirty: bool,
    pub data: Box<[u8]>,
}

/// Set-associative LRU cache with write-back, write-allocate semantics.
#[derive(Clone, Debug, PartialEq)]
pub struct SetAssocCache {
    sets: usize,
    assoc: usize,
    line_bytes: usize,
    lines: Vec<CacheLineState>,
    tick: u64,
    valid_count: usize,
}

impl SetAssocCache {
    pub fn new(total_bytes: usize, assoc: usize, line_bytes: usize) -> Self {
        let total_lines = total_bytes / line_bytes;
        let sets = total_lines / assoc;
        assert!(sets > 0, "cache must hold at least one set");
        let lines = (0..total_lines)
            .map(|_| CacheLineState {
                valid: false,
                dirty: false,
                tag: 0,
                line_addr: 0,
                owner: Pid(0),
                owner_cluster: Cluster::Insecure,
                lru: 0,
                data: vec![0u8; line_bytes].into_boxed_slice(),
            })
            .collect();
        SetAssocCache {
            sets,
            assoc,
            line_bytes,
            lines,
            tick: 0,
            valid_count: 0,
        }
    }

    pub fn sets(&self) -> usize {
        self.sets
    }

    pub fn line_bytes(&self) -> usize {
        self.line_bytes
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn dirty_count(&self) -> usize {
        self.lines.iter().filter(|l| l.valid && l.dirty).count()
    }

    fn set_of(&self, line_addr: u64) -> usize {
        (line_addr % self.sets as u64) as usize
    }

    fn tag_of(&self, line_addr: u64) -> u64 {
        line_addr / self.sets as u64
    }

    fn set_range(&self, set: usize) -> std::ops::Range<usize> {
        set * self.assoc..(set + 1) * self.assoc
    }

    /// Slot index of `line_addr` if present, updating recency.
    pub fn lookup(&mut self, line_addr: u64) -> Option<usize> {
        let tag = self.tag_of(line_addr);
        let range = self.set_range(self.set_of(line_addr));
        self.tick += 1;
        let tick = self.tick;
        for i in range {
            let l = &mut self.lines[i];
            if l.valid && l.tag == tag {
                l.lru = tick;
                return Some(i);
            }
        }
        None
    }

    /// Presence check without touching LRU state.
    pub fn probe(&self, line_addr: u64) -> Option<&CacheLineState> {
        let tag = self.tag_of(line_addr);
        self.lines[self.set_range(self.set_of(line_addr))]
            .iter()
            .find(|l| l.valid && l.tag == tag)
    }

    pub fn slot(&self, idx: usize) -> &CacheLineState {
        &self.lines[idx]
    }

    pub fn read(&self, idx: usize, offset: usize, out: &mut [u8]) {
        out.copy_from_slice(&self.lines[idx].data[offset..offset + out.len()]);
    }

    pub fn write(&mut self, idx: usize, offset: usize, bytes: &[u8], writer: Pid, cluster: Cluster) {
        let l = &mut self.lines[idx];
        l.data[offset..offset + bytes.len()].copy_from_slice(bytes);
        l.dirty = true;
        l.owner = writer;
        l.owner_cluster = cluster;
    }

    /// Overwrites the whole line without marking it dirty (used when merging
    /// a write-back that is itself about to be forwarded).
    pub fn merge(&mut self, idx: usize, data: &[u8], dirty: bool) {
        let l = &mut self.lines[idx];
        l.data.copy_from_slice(data);
        l.dirty = l.dirty || dirty;
    }

    /// Installs `line_addr`, evicting the set's LRU victim if necessary.
    pub fn fill(
        &mut self,
        line_addr: u64,
        owner: Pid,
        owner_cluster: Cluster,
        dirty: bool,
        data: &[u8],
    ) -> Option<EvictedLine> {
        debug_assert!(self.probe(line_addr).is_none(), "double fill of {line_addr}");
        let tag = self.tag_of(line_addr);
        let range = self.set_range(self.set_of(line_addr));
        self.tick += 1;
        let tick = self.tick;
        let mut victim_idx = range.start;
        let mut victim_lru = u64::MAX;
        let mut found_invalid = false;
        for i in range {
            let l = &self.lines[i];
            if !l.valid {
                victim_idx = i;
                found_invalid = true;
                break;
            }
            if l.lru < victim_lru {
                victim_lru = l.lru;
                victim_idx = i;
            }
        }
        let l = &mut self.lines[victim_idx];
        let evicted = if !found_invalid {
            Some(EvictedLine {
                line_addr: l.line_addr,
                owner: l.owner,
                owner_cluster: l.owner_cluster,
                dirty: l.dirty,
                data: l.data.clone(),
            })
        } else {
            self.valid_count += 1;
            None
        };
        l.valid = true;
        l.dirty = dirty;
        l.tag = tag;
        l.line_addr = line_addr;
        l.owner = owner;
        l.owner_cluster = owner_cluster;
        l.lru = tick;
        l.data.copy_from_slice(data);
        evicted
    }

    /// Removes `line_addr` if present, returning its final state.
    pub fn invalidate(&mut self, line_addr: u64) -> Option<EvictedLine> {
        let tag = self.tag_of(line_addr);
        let range = self.set_range(self.set_of(line_addr));
        for i in range {
            let l = &mut self.lines[i];
            if l.valid && l.tag == tag {
                let was_dirty = l.dirty;
                l.valid = false;
                l.dirty = false;
                self.valid_count -= 1;
                return Some(EvictedLine {
                    line_addr: l.line_addr,
                    owner: l.owner,
                    owner_cluster: l.owner_cluster,
                    dirty: was_dirty,
                    data: l.data.clone(),
                });
            }
        }
        None
    }

    /// Flush-and-invalidate: every valid line is returned (dirty ones must be
    /// written back by the caller) and the cache ends empty.
    pub fn flush_invalidate(&mut self) -> Vec<EvictedLine> {
        if self.valid_count == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.valid_count);
        for l in &mut self.lines {
            if l.valid {
                out.push(EvictedLine {
                    line_addr: l.line_addr,
                    owner: l.owner,
                    owner_cluster: l.owner_cluster,
                    dirty: l.dirty,
                    data: l.data.clone(),
                });
                l.valid = false;
                l.dirty = false;
            }
        }
        self.valid_count = 0;
        out
    }

    /// Valid lines whose address satisfies `pred` (used for re-homing).
    pub fn valid_lines_where(&self, mut pred: impl FnMut(u64) -> bool) -> Vec<u64> {
        self.lines
            .iter()
            .filter(|l| l.valid && pred(l.line_addr))
            .map(|l| l.line_addr)
            .collect()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = &CacheLineState> {
        self.lines.iter().filter(|l| l.valid)
    }
}

/// Fully-associative LRU TLB holding page translations. Shares the flush
/// semantics of the private caches; a miss costs one page walk.
#[derive(Clone, Debug, PartialEq)]
pub struct Tlb {
    entries: Vec<TlbEntry>,
    tick: u64,
    valid_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct TlbEntry {
    valid: bool,
    page: u64,
    lru: u64,
}

impl Tlb {
    pub fn new(entries: usize) -> Self {
        Tlb {
            entries: (0..entries)
                .map(|_| TlbEntry {
                    valid: false,
                    page: 0,
                    lru: 0,
                })
                .collect(),
            tick: 0,
            valid_count: 0,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    /// Returns true on a hit; on a miss the translation is installed.
    pub fn access(&mut self, page: u64) -> bool {
        self.tick += 1;
        let tick = self.tick;
        let mut victim = 0;
        let mut victim_lru = u64::MAX;
        for (i, e) in self.entries.iter_mut().enumerate() {
            if e.valid && e.page == page {
                e.lru = tick;
                return true;
            }
            let key = if e.valid { e.lru } else { 0 };
            if key < victim_lru {
                victim_lru = key;
                victim = i;
            }
        }
        let e = &mut self.entries[victim];
        if !e.valid {
            self.valid_count += 1;
        }
        e.valid = true;
        e.page = page;
        e.lru = tick;
        false
    }

    pub fn flush(&mut self) -> usize {
        let n = self.valid_count;
        for e in &mut self.entries {
            e.valid = false;
        }
        self.valid_count = 0;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache() -> SetAssocCache {
        SetAssocCache::new(1024, 2, 64) // 8 sets x 2 ways
    }

    #[test]
    fn fill_then_lookup_hits() {
        let mut c = cache();
        assert!(c.lookup(5).is_none());
        c.fill(5, Pid(1), Cluster::Secure, false, &[7u8; 64]);
        let idx = c.lookup(5).expect("line present");
        let mut buf = [0u8; 4];
        c.read(idx, 0, &mut buf);
        assert_eq!(buf, [7, 7, 7, 7]);
    }

    #[test]
    fn lru_victim_is_least_recent() {
        let mut c = cache();
        // Lines 0, 8, 16 map to set 0 in an 8-set cache.
        c.fill(0, Pid(1), Cluster::Secure, false, &[0u8; 64]);
        c.fill(8, Pid(1), Cluster::Secure, false, &[1u8; 64]);
        c.lookup(0); // refresh 0, making 8 the victim
        let evicted = c
            .fill(16, Pid(1), Cluster::Secure, false, &[2u8; 64])
            .expect("set full");
        assert_eq!(evicted.line_addr, 8);
    }

    #[test]
    fn flush_reports_dirty_and_empties() {
        let mut c = cache();
        for i in 0..8u64 {
            c.fill(i, Pid(1), Cluster::Secure, i < 3, &[i as u8; 64]);
        }
        let flushed = c.flush_invalidate();
        assert_eq!(flushed.len(), 8);
        assert_eq!(flushed.iter().filter(|e| e.dirty).count(), 3);
        assert_eq!(c.valid_count(), 0);
        assert!(c.flush_invalidate().is_empty());
    }

    #[test]
    fn tlb_is_lru_and_flushable() {
        let mut t = Tlb::new(2);
        assert!(!t.access(1));
        assert!(!t.access(2));
        assert!(t.access(1));
        assert!(!t.access(3)); // evicts 2
        assert!(!t.access(2));
        assert_eq!(t.flush(), 2);
        assert!(!t.access(1));
    }
}
