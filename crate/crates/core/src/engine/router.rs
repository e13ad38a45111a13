use crate::packet::FlowKey;
use crate::siphash::SipKey;

use super::action::Interface;
use super::config::ShardKey;

/// Partitions flows across shards, receive-side-scaling style.
#[derive(Debug, Clone)]
pub struct ShardRouter {
    key: SipKey,
    shard_key: ShardKey,
    shard_count: usize,
}

impl ShardRouter {
    pub fn new(shard_key: ShardKey, shard_count: usize, secret: [u8; 16]) -> Self {
        assert!(shard_count > 0);
        ShardRouter {
            key: SipKey::from_bytes(&secret),
            shard_key,
            shard_count,
        }
    }

    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    /// Shard for a segment with key `k` that arrived on `ingress`.
    ///
    /// Both directions of a connection land on the same shard. With
    /// source-ip sharding every flow of one client does too.
    pub fn route(&self, k: &FlowKey, ingress: Interface) -> usize {
        if self.shard_count == 1 {
            return 0;
        }
        let h = match self.shard_key {
            ShardKey::FourTuple => {
                let a = (u32::from(k.src_ip), k.src_port);
                let b = (u32::from(k.dst_ip), k.dst_port);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let mut msg = [0u8; 12];
                msg[0..4].copy_from_slice(&lo.0.to_be_bytes());
                msg[4..6].copy_from_slice(&lo.1.to_be_bytes());
                msg[6..10].copy_from_slice(&hi.0.to_be_bytes());
                msg[10..12].copy_from_slice(&hi.1.to_be_bytes());
                self.key.hash(&msg)
            }
            ShardKey::SourceIp => {
                let client = match ingress {
                    Interface::Client => k.src_ip,
                    Interface::Server => k.dst_ip,
                };
                self.key.hash(&client.octets())
            }
        };
        (h % self.shard_count as u64) as usize
    }
}
