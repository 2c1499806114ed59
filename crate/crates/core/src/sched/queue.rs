use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use crate::engine::RequestMeta;
use crate::workload::{RequestId, UserId};

/// Queued requests of one user, split into fresh interaction heads and
/// continuations. Each deque is ordered by `(arrival_ms, id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserQueue {
    pub fresh: VecDeque<RequestMeta>,
    pub continuations: VecDeque<RequestMeta>,
}

pub(crate) fn arrival_order(a: &RequestMeta, b: &RequestMeta) -> Ordering {
    a.arrival_ms.total_cmp(&b.arrival_ms).then(a.id.cmp(&b.id))
}

impl UserQueue {
    pub fn earliest(&self) -> Option<&RequestMeta> {
        match (self.fresh.front(), self.continuations.front()) {
            (Some(a), Some(b)) => Some(if arrival_order(a, b).is_le() { a } else { b }),
            (a, b) => a.or(b),
        }
    }

    pub fn earliest_continuation(&self) -> Option<&RequestMeta> {
        self.continuations.front()
    }

    pub fn len(&self) -> usize {
        self.fresh.len() + self.continuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fresh.is_empty() && self.continuations.is_empty()
    }
}

/// Per-user waiting queue (Q).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WaitQueue {
    users: BTreeMap<UserId, UserQueue>,
    owner: BTreeMap<RequestId, UserId>,
}

impl WaitQueue {
    pub fn push(&mut self, req: RequestMeta) {
        let uq = self.users.entry(req.user).or_default();
        let dq = if req.is_continuation() {
            &mut uq.continuations
        } else {
            &mut uq.fresh
        };
        let pos = dq.partition_point(|x| arrival_order(x, &req).is_lt());
        dq.insert(pos, req);
        self.owner.insert(req.id, req.user);
    }

    pub fn remove(&mut self, id: RequestId) -> Option<RequestMeta> {
        let user = self.owner.remove(&id)?;
        let uq = self.users.get_mut(&user)?;
        let found = [&mut uq.fresh, &mut uq.continuations]
            .into_iter()
            .find_map(|dq| dq.iter().position(|r| r.id == id).and_then(|i| dq.remove(i)));
        if uq.is_empty() {
            self.users.remove(&user);
        }
        found
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.owner.contains_key(&id)
    }

    pub fn has_user(&self, user: UserId) -> bool {
        self.users.contains_key(&user)
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    /// Users with at least one queued request, in id order.
    pub fn users(&self) -> impl Iterator<Item = (UserId, &UserQueue)> {
        self.users.iter().map(|(u, q)| (*u, q))
    }

    /// Globally earliest request by `(arrival_ms, id)`.
    pub fn earliest(&self) -> Option<&RequestMeta> {
        self.users
            .values()
            .filter_map(UserQueue::earliest)
            .min_by(|a, b| arrival_order(a, b))
    }
}

/// Counter of `user`, zero if never touched.
pub(crate) fn counter(counters: &BTreeMap<UserId, f64>, user: UserId) -> f64 {
    counters.get(&user).copied().unwrap_or(0.0)
}

/// Lifts a newly backlogged user's counter so idle periods do not bank credit.
///
/// Only applies when `user` has nothing queued. With an empty queue the
/// counter is raised to the most recent user to leave the queue; otherwise to
/// the minimum counter among queued users.
pub fn adjust_counter_on_arrival(
    counters: &mut BTreeMap<UserId, f64>,
    queue: &WaitQueue,
    last_exited: Option<UserId>,
    user: UserId,
) {
    if queue.has_user(user) {
        counters.entry(user).or_insert(0.0);
        return;
    }
    let floor = if queue.is_empty() {
        last_exited.map(|e| counter(counters, e))
    } else {
        queue
            .users()
            .map(|(u, _)| counter(counters, u))
            .min_by(f64::total_cmp)
    };
    let current = counters.entry(user).or_insert(0.0);
    if let Some(floor) = floor {
        *current = current.max(floor);
    }
}

/// Picks the candidate with the smallest `(counter, arrival, user)`.
pub(crate) fn argmin_by_counter<'a>(
    counters: &BTreeMap<UserId, f64>,
    candidates: impl Iterator<Item = (UserId, &'a RequestMeta)>,
) -> Option<&'a RequestMeta> {
    candidates
        .min_by(|(ua, a), (ub, b)| {
            counter(counters, *ua)
                .total_cmp(&counter(counters, *ub))
                .then(a.arrival_ms.total_cmp(&b.arrival_ms))
                .then(ua.cmp(ub))
        })
        .map(|(_, r)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{AppId, InteractionId};

    pub(crate) fn meta(id: u64, user: u32, stage: u32, arrival: f64) -> RequestMeta {
        RequestMeta {
            id: RequestId(id),
            user: UserId(user),
            app: AppId(0),
            interaction: InteractionId(id),
            stage,
            num_calls: stage.max(1),
            input_tokens: 10,
            system_tokens: 0,
            arrival_ms: arrival,
            head_arrival_ms: arrival,
        }
    }

    #[test]
    fn push_keeps_arrival_order_and_remove_cleans_up() {
        let mut q = WaitQueue::default();
        q.push(meta(2, 0, 1, 5.0));
        q.push(meta(1, 0, 1, 1.0));
        q.push(meta(3, 0, 2, 0.5));
        assert_eq!(q.earliest().unwrap().id, RequestId(3));
        let (_, uq) = q.users().next().unwrap();
        assert_eq!(uq.fresh.front().unwrap().id, RequestId(1));
        assert_eq!(q.remove(RequestId(3)).unwrap().id, RequestId(3));
        assert_eq!(q.remove(RequestId(3)), None);
        q.remove(RequestId(1));
        q.remove(RequestId(2));
        assert!(q.is_empty());
        assert!(!q.has_user(UserId(0)));
    }

    #[test]
    fn adjustment_uses_queue_minimum() {
        let mut counters = BTreeMap::from([(UserId(0), 5.0), (UserId(1), 3.0), (UserId(2), 1.0)]);
        let mut q = WaitQueue::default();
        q.push(meta(1, 0, 1, 0.0));
        q.push(meta(2, 1, 1, 0.0));
        adjust_counter_on_arrival(&mut counters, &q, None, UserId(2));
        assert_eq!(counters[&UserId(2)], 3.0);
        // already above the floor: unchanged
        counters.insert(UserId(3), 10.0);
        adjust_counter_on_arrival(&mut counters, &q, None, UserId(3));
        assert_eq!(counters[&UserId(3)], 10.0);
    }

    #[test]
    fn adjustment_with_empty_queue_uses_last_exited() {
        let mut counters = BTreeMap::from([(UserId(0), 7.0)]);
        let q = WaitQueue::default();
        adjust_counter_on_arrival(&mut counters, &q, None, UserId(1));
        assert_eq!(counters[&UserId(1)], 0.0);
        adjust_counter_on_arrival(&mut counters, &q, Some(UserId(0)), UserId(1));
        assert_eq!(counters[&UserId(1)], 7.0);
    }

    #[test]
    fn queued_user_is_not_adjusted() {
        let mut counters = BTreeMap::from([(UserId(0), 1.0), (UserId(1), 9.0)]);
        let mut q = WaitQueue::default();
        q.push(meta(1, 0, 1, 0.0));
        q.push(meta(2, 1, 1, 0.0));
        adjust_counter_on_arrival(&mut counters, &q, None, UserId(0));
        assert_eq!(counters[&UserId(0)], 1.0);
    }
}
