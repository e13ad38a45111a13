use super::action::DropReason;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub segments_in: u64,
    pub emitted_to_client: u64,
    pub emitted_to_server: u64,
    /// Segments passed through unchanged apart from L2 (and, for spliced
    /// flows, sequence translation).
    pub forwarded: u64,
    pub synacks_sent: u64,
    /// Cookie SipHash evaluations, encode and verify.
    pub hash_invocations: u64,
    pub whitelist_lookups: u64,
    pub whitelist_admits: u64,
    pub whitelist_evictions: u64,
    pub conn_inserts: u64,
    pub conn_removals: u64,
    pub conn_swapped_out: u64,
    pub conn_high_water: u64,
    pub handshake_retransmits: u64,
    pub pending_stored: u64,
    pub gc_runs: u64,
    pub drops: [u64; DropReason::ALL.len()],
}

impl EngineStats {
    pub fn drop_count(&self, r: DropReason) -> u64 {
        self.drops[r.index()]
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.iter().sum()
    }

    pub(crate) fn record_drop(&mut self, r: DropReason) {
        self.drops[r.index()] += 1;
    }

    /// Sums counters; high-water marks are summed too, giving an upper bound
    /// on the combined peak.
    pub fn merge(&mut self, o: &EngineStats) {
        self.segments_in += o.segments_in;
        self.emitted_to_client += o.emitted_to_client;
        self.emitted_to_server += o.emitted_to_server;
        self.forwarded += o.forwarded;
        self.synacks_sent += o.synacks_sent;
        self.hash_invocations += o.hash_invocations;
        self.whitelist_lookups += o.whitelist_lookups;
        self.whitelist_admits += o.whitelist_admits;
        self.whitelist_evictions += o.whitelist_evictions;
        self.conn_inserts += o.conn_inserts;
        self.conn_removals += o.conn_removals;
        self.conn_swapped_out += o.conn_swapped_out;
        self.conn_high_water += o.conn_high_water;
        self.handshake_retransmits += o.handshake_retransmits;
        self.pending_stored += o.pending_stored;
        self.gc_runs += o.gc_runs;
        for (a, b) in self.drops.iter_mut().zip(o.drops.iter()) {
            *a += b;
        }
    }

    /// `(name, value)` pairs in a fixed order, for reports.
    pub fn rows(&self) -> Vec<(String, u64)> {
        let mut v = vec![
            ("segments_in".to_string(), self.segments_in),
            ("emitted_to_client".into(), self.emitted_to_client),
            ("emitted_to_server".into(), self.emitted_to_server),
            ("forwarded".into(), self.forwarded),
            ("synacks_sent".into(), self.synacks_sent),
            ("hash_invocations".into(), self.hash_invocations),
            ("whitelist_lookups".into(), self.whitelist_lookups),
            ("whitelist_admits".into(), self.whitelist_admits),
            ("whitelist_evictions".into(), self.whitelist_evictions),
            ("conn_inserts".into(), self.conn_inserts),
            ("conn_removals".into(), self.conn_removals),
            ("conn_swapped_out".into(), self.conn_swapped_out),
            ("conn_high_water".into(), self.conn_high_water),
            ("handshake_retransmits".into(), self.handshake_retransmits),
            ("pending_stored".into(), self.pending_stored),
            ("gc_runs".into(), self.gc_runs),
        ];
        for r in DropReason::ALL {
            v.push((format!("drop_{}", r.as_str()), self.drop_count(r)));
        }
        v
    }
}
