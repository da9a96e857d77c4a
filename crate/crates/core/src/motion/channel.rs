use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_queue::ArrayQueue;

use super::TrajectoryPacket;

/// Bounded single-producer single-consumer channel between the leader and
/// follower loops. The producer never blocks: on overflow the oldest packet is
/// discarded and counted.
#[derive(Debug, Clone)]
pub struct PacketChannel {
    queue: Arc<ArrayQueue<TrajectoryPacket>>,
    dropped: Arc<AtomicU64>,
}

impl PacketChannel {
    pub fn new(capacity: usize) -> Self {
        Self { queue: Arc::new(ArrayQueue::new(capacity.max(1))), dropped: Arc::new(AtomicU64::new(0)) }
    }

    pub fn send(&self, packet: TrajectoryPacket) {
        if self.queue.force_push(packet).is_some() {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn recv(&self) -> Option<TrajectoryPacket> {
        self.queue.pop()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}
