//! Typed inboxes with single-owner draining.
//!
//! Any owner may append to any inbox; only the inbox owner may drain it.
//! Messages sent during tick `t` become visible at delivery in tick `t + 1`,
//! so a request/reply round trip needs at least two ticks.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::value::{InboxId, OwnerId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MessageKind {
    RequestData,
    ProvideData,
    RequestChange,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::RequestData => "request-data",
            MessageKind::ProvideData => "provide-data",
            MessageKind::RequestChange => "request-change",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "request-data" => Some(MessageKind::RequestData),
            "provide-data" => Some(MessageKind::ProvideData),
            "request-change" => Some(MessageKind::RequestChange),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: OwnerId,
    pub schema: String,
    pub kind: MessageKind,
    pub payload: Vec<(String, Value)>,
    pub sent_tick: u64,
}

impl Message {
    pub fn field(&self, name: &str) -> Option<&Value> {
        self.payload.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SendStatus {
    Delivered,
    Dropped,
    NoSuchInbox,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessagingError {
    #[error("owner {owner:?} already has an inbox for schema `{schema}`")]
    DuplicateSchema { owner: OwnerId, schema: String },
    #[error("{caller:?} tried to drain inbox {inbox:?} owned by {owner:?}")]
    NotOwner { caller: OwnerId, owner: OwnerId, inbox: InboxId },
    #[error("no inbox {0:?}")]
    NoSuchInbox(InboxId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InboxCounters {
    pub sent: u64,
    pub drained: u64,
    pub dropped: u64,
}

#[derive(Debug)]
pub struct Inbox {
    pub id: InboxId,
    pub owner: OwnerId,
    pub schema: String,
    pub capacity: Option<usize>,
    queue: VecDeque<Message>,
    in_flight: usize,
    refs: u32,
    pub counters: InboxCounters,
}

impl Inbox {
    pub fn pending(&self) -> usize {
        self.queue.len() + self.in_flight
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BusTotals {
    pub sent: u64,
    pub drained: u64,
    pub dropped: u64,
}

#[derive(Debug, Default)]
pub struct MessageBus {
    inboxes: BTreeMap<InboxId, Inbox>,
    by_owner: BTreeMap<(OwnerId, String), InboxId>,
    in_flight: Vec<(InboxId, Message)>,
    pool: BTreeMap<String, Vec<VecDeque<Message>>>,
    next_id: u32,
    totals: BusTotals,
    pub pool_reuses: u64,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fresh inbox. At most one inbox per (owner, schema).
    pub fn register(&mut self, owner: OwnerId, schema: &str, capacity: Option<usize>) -> Result<InboxId, MessagingError> {
        if self.by_owner.contains_key(&(owner, schema.to_string())) {
            return Err(MessagingError::DuplicateSchema { owner, schema: schema.to_string() });
        }
        let queue = match self.pool.get_mut(schema).and_then(|p| p.pop()) {
            Some(q) => {
                self.pool_reuses += 1;
                q
            }
            None => VecDeque::new(),
        };
        let id = InboxId(self.next_id);
        self.next_id += 1;
        self.inboxes.insert(
            id,
            Inbox { id, owner, schema: schema.to_string(), capacity, queue, in_flight: 0, refs: 1, counters: InboxCounters::default() },
        );
        self.by_owner.insert((owner, schema.to_string()), id);
        Ok(id)
    }

    /// Reference-counted registration used by behavior descriptors: nested
    /// grants that declare the same inbox share it.
    pub fn attach(&mut self, owner: OwnerId, schema: &str) -> InboxId {
        if let Some(id) = self.lookup(owner, schema) {
            self.inboxes.get_mut(&id).expect("indexed inbox").refs += 1;
            id
        } else {
            self.register(owner, schema, None).expect("checked above")
        }
    }

    /// Drops one reference; the inbox is removed when none remain.
    pub fn detach(&mut self, owner: OwnerId, schema: &str) {
        if let Some(id) = self.lookup(owner, schema) {
            let inbox = self.inboxes.get_mut(&id).expect("indexed inbox");
            inbox.refs -= 1;
            if inbox.refs == 0 {
                self.remove(id);
            }
        }
    }

    pub fn remove(&mut self, id: InboxId) {
        if let Some(mut inbox) = self.inboxes.remove(&id) {
            self.by_owner.remove(&(inbox.owner, inbox.schema.clone()));
            let lost = inbox.queue.len() as u64;
            inbox.counters.dropped += lost;
            self.totals.dropped += lost;
            inbox.queue.clear();
            self.pool.entry(inbox.schema).or_default().push(inbox.queue);
        }
    }

    /// Removes every inbox of an owner (destroyed owners).
    pub fn remove_owner(&mut self, owner: OwnerId) {
        let ids: Vec<InboxId> = self.inboxes.values().filter(|i| i.owner == owner).map(|i| i.id).collect();
        for id in ids {
            self.remove(id);
        }
    }

    pub fn lookup(&self, owner: OwnerId, schema: &str) -> Option<InboxId> {
        self.by_owner.get(&(owner, schema.to_string())).copied()
    }

    pub fn inbox(&self, id: InboxId) -> Option<&Inbox> {
        self.inboxes.get(&id)
    }

    pub fn owner_inboxes(&self, owner: OwnerId) -> impl Iterator<Item = &Inbox> {
        self.by_owner.range((owner, String::new())..).take_while(move |((o, _), _)| *o == owner).filter_map(|(_, id)| self.inboxes.get(id))
    }

    pub fn send(&mut self, to: InboxId, msg: Message) -> SendStatus {
        let Some(inbox) = self.inboxes.get_mut(&to) else {
            return SendStatus::NoSuchInbox;
        };
        inbox.counters.sent += 1;
        self.totals.sent += 1;
        if inbox.capacity.is_some_and(|cap| inbox.pending() >= cap) {
            inbox.counters.dropped += 1;
            self.totals.dropped += 1;
            return SendStatus::Dropped;
        }
        inbox.in_flight += 1;
        self.in_flight.push((to, msg));
        SendStatus::Delivered
    }

    /// Moves every message sent before `now` into its inbox queue. Returns
    /// the delivered (inbox, message) pairs in send order.
    pub fn deliver(&mut self, now: u64) -> Vec<(InboxId, OwnerId, Message)> {
        let mut delivered = Vec::new();
        let mut keep = Vec::new();
        for (id, msg) in std::mem::take(&mut self.in_flight) {
            if msg.sent_tick >= now {
                keep.push((id, msg));
                continue;
            }
            match self.inboxes.get_mut(&id) {
                Some(inbox) => {
                    inbox.in_flight -= 1;
                    inbox.queue.push_back(msg.clone());
                    delivered.push((id, inbox.owner, msg));
                }
                // Receiver vanished while the message was in flight.
                None => self.totals.dropped += 1,
            }
        }
        self.in_flight = keep;
        delivered
    }

    pub fn drain(&mut self, caller: OwnerId, id: InboxId, max: Option<usize>) -> Result<Vec<Message>, MessagingError> {
        let inbox = self.inboxes.get_mut(&id).ok_or(MessagingError::NoSuchInbox(id))?;
        if inbox.owner != caller {
            return Err(MessagingError::NotOwner { caller, owner: inbox.owner, inbox: id });
        }
        let n = max.unwrap_or(usize::MAX).min(inbox.queue.len());
        let out: Vec<Message> = inbox.queue.drain(..n).collect();
        inbox.counters.drained += out.len() as u64;
        self.totals.drained += out.len() as u64;
        Ok(out)
    }

    pub fn totals(&self) -> &BusTotals {
        &self.totals
    }

    /// Messages queued or in flight anywhere.
    pub fn pending(&self) -> u64 {
        self.inboxes.values().map(|i| i.queue.len() as u64).sum::<u64>() + self.in_flight.len() as u64
    }

    /// Messages waiting for owners of the given kind, used for the heavy-use
    /// budget boost.
    pub fn queued_for(&self, owner: OwnerId) -> usize {
        self.owner_inboxes(owner).map(|i| i.queued()).sum()
    }

    /// Global conservation: sent = drained + dropped + pending.
    pub fn conserved(&self) -> bool {
        self.totals.sent == self.totals.drained + self.totals.dropped + self.pending()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{InstanceId, NpcId};

    fn msg(sender: OwnerId, tick: u64, n: i64) -> Message {
        Message { sender, schema: "s".into(), kind: MessageKind::ProvideData, payload: vec![("n".into(), Value::Num(n))], sent_tick: tick }
    }

    const NPC1: OwnerId = OwnerId::Npc(NpcId(1));
    const PUB: OwnerId = OwnerId::Instance(InstanceId(0));

    #[test]
    fn fresh_inbox_is_empty() {
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "seat-grant", None).unwrap();
        assert!(bus.drain(NPC1, id, None).unwrap().is_empty());
    }

    #[test]
    fn duplicate_schema_rejected() {
        let mut bus = MessageBus::new();
        bus.register(NPC1, "a", None).unwrap();
        assert!(matches!(bus.register(NPC1, "a", None), Err(MessagingError::DuplicateSchema { .. })));
    }

    #[test]
    fn capacity_drops_overflow() {
        // Three sends into a capacity-1 inbox: only the first fits until drained.
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "s", Some(1)).unwrap();
        assert_eq!(bus.send(id, msg(PUB, 0, 1)), SendStatus::Delivered);
        assert_eq!(bus.send(id, msg(PUB, 0, 2)), SendStatus::Dropped);
        bus.deliver(1);
        assert_eq!(bus.send(id, msg(PUB, 1, 3)), SendStatus::Dropped);
        assert_eq!(bus.drain(NPC1, id, None).unwrap().len(), 1);
        assert_eq!(bus.send(id, msg(PUB, 1, 4)), SendStatus::Delivered);
        assert!(bus.conserved());
    }

    #[test]
    fn delivery_waits_for_next_tick() {
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "s", None).unwrap();
        bus.send(id, msg(PUB, 5, 1));
        assert!(bus.deliver(5).is_empty());
        assert_eq!(bus.deliver(6).len(), 1);
    }

    #[test]
    fn fifo_and_max() {
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "s", None).unwrap();
        for n in 0..3 {
            bus.send(id, msg(PUB, 0, n));
        }
        bus.deliver(1);
        let a = bus.drain(NPC1, id, Some(1)).unwrap();
        let b = bus.drain(NPC1, id, Some(1)).unwrap();
        assert_eq!(a[0].field("n"), Some(&Value::Num(0)));
        assert_eq!(b[0].field("n"), Some(&Value::Num(1)));
    }

    #[test]
    fn non_owner_cannot_drain() {
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "s", None).unwrap();
        assert!(matches!(bus.drain(PUB, id, None), Err(MessagingError::NotOwner { .. })));
    }

    #[test]
    fn removed_receiver_reports_no_such_inbox() {
        let mut bus = MessageBus::new();
        let id = bus.register(NPC1, "s", None).unwrap();
        bus.send(id, msg(PUB, 0, 1));
        bus.remove(id);
        assert_eq!(bus.send(id, msg(PUB, 0, 2)), SendStatus::NoSuchInbox);
        bus.deliver(1);
        assert!(bus.conserved());
    }

    #[test]
    fn attach_is_reference_counted_and_pooled() {
        let mut bus = MessageBus::new();
        let a = bus.attach(NPC1, "drink");
        let b = bus.attach(NPC1, "drink");
        assert_eq!(a, b);
        bus.detach(NPC1, "drink");
        assert!(bus.lookup(NPC1, "drink").is_some());
        bus.detach(NPC1, "drink");
        assert!(bus.lookup(NPC1, "drink").is_none());
        bus.attach(NPC1, "drink");
        assert_eq!(bus.pool_reuses, 1);
    }

    /// All C(6,3) = 20 ways to interleave two senders of three messages.
    fn interleavings() -> Vec<Vec<bool>> {
        (0u32..64).filter(|m| m.count_ones() == 3).map(|m| (0..6).map(|i| m & (1 << i) != 0).collect()).collect()
    }

    #[test]
    fn per_sender_order_survives_every_interleaving() {
        let schedules = interleavings();
        assert_eq!(schedules.len(), 20);
        let a = NPC1;
        let b = OwnerId::Npc(NpcId(2));
        for sched in schedules {
            let mut bus = MessageBus::new();
            let id = bus.register(PUB, "s", None).unwrap();
            let (mut na, mut nb) = (0, 0);
            for (tick, from_a) in sched.iter().enumerate() {
                let (sender, n) = if *from_a { (a, &mut na) } else { (b, &mut nb) };
                bus.send(id, msg(sender, tick as u64, *n));
                *n += 1;
            }
            bus.deliver(10);
            let out = bus.drain(PUB, id, None).unwrap();
            for sender in [a, b] {
                let seq: Vec<i64> = out.iter().filter(|m| m.sender == sender).map(|m| m.field("n").unwrap().as_num().unwrap()).collect();
                assert_eq!(seq, vec![0, 1, 2]);
            }
            assert!(bus.conserved());
        }
    }
}
