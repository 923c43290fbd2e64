//! Fan-out to subscribers through bounded per-client queues.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;

use log::{info, warn};

/// Frames a client may fall behind before it is dropped.
pub const SUBSCRIBER_QUEUE_DEPTH: usize = 64;

pub type ClientId = u64;

/// A serialized protocol line shared by every recipient.
pub type Payload = Arc<str>;

#[derive(Debug)]
struct Subscriber {
    id: ClientId,
    tx: SyncSender<Payload>,
}

/// Registry of connected clients. Owned by the fan-out stage alone.
#[derive(Debug)]
pub struct Subscribers {
    clients: Vec<Subscriber>,
    next_id: ClientId,
    depth: usize,
    dropped_slow: u64,
}

impl Default for Subscribers {
    fn default() -> Self {
        Subscribers::with_depth(SUBSCRIBER_QUEUE_DEPTH)
    }
}

impl Subscribers {
    pub fn with_depth(depth: usize) -> Self {
        Subscribers {
            clients: Vec::new(),
            next_id: 0,
            depth,
            dropped_slow: 0,
        }
    }

    /// Registers a client and returns the receiving end of its queue.
    pub fn subscribe(&mut self) -> (ClientId, Receiver<Payload>) {
        let (tx, rx) = sync_channel(self.depth);
        let id = self.next_id;
        self.next_id += 1;
        self.clients.push(Subscriber { id, tx });
        (id, rx)
    }

    /// Registers a queue created elsewhere under a caller-chosen id.
    pub fn attach(&mut self, id: ClientId, tx: SyncSender<Payload>) {
        self.clients.push(Subscriber { id, tx });
        self.next_id = self.next_id.max(id + 1);
    }

    pub fn unsubscribe(&mut self, id: ClientId) {
        self.clients.retain(|c| c.id != id);
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn ids(&self) -> Vec<ClientId> {
        self.clients.iter().map(|c| c.id).collect()
    }

    /// Clients removed because their queue overflowed.
    pub fn dropped_slow(&self) -> u64 {
        self.dropped_slow
    }

    /// Queues `payload` for every client without blocking. Returns the
    /// number of clients it was queued for.
    pub fn publish(&mut self, payload: &Payload) -> usize {
        let mut delivered = 0;
        let mut dropped_slow = 0;
        self.clients.retain(|c| match c.tx.try_send(payload.clone()) {
            Ok(()) => {
                delivered += 1;
                true
            }
            Err(TrySendError::Full(_)) => {
                warn!("client {} fell {} messages behind, dropping it", c.id, SUBSCRIBER_QUEUE_DEPTH);
                dropped_slow += 1;
                false
            }
            Err(TrySendError::Disconnected(_)) => {
                info!("client {} disconnected", c.id);
                false
            }
        });
        self.dropped_slow += dropped_slow;
        delivered
    }

    /// Queues `payload` for one client. Same drop rules as [`publish`].
    ///
    /// [`publish`]: Subscribers::publish
    pub fn send_to(&mut self, id: ClientId, payload: Payload) -> bool {
        let Some(pos) = self.clients.iter().position(|c| c.id == id) else {
            return false;
        };
        match self.clients[pos].tx.try_send(payload) {
            Ok(()) => true,
            Err(e) => {
                if matches!(e, TrySendError::Full(_)) {
                    warn!("client {id} queue full, dropping it");
                    self.dropped_slow += 1;
                }
                self.clients.remove(pos);
                false
            }
        }
    }
}
