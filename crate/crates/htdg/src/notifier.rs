//! A two-phase-commit event notifier (eventcount) for parking idle workers.
//!
//! A waiter that finds its predicate false calls [`Notifier::prepare_wait`],
//! re-checks the predicate, and then either [`Notifier::cancel_wait`] (the
//! predicate turned true) or [`Notifier::commit_wait`] (block until
//! notified). A notifying thread writes the predicate first and then calls
//! [`Notifier::notify_one`]/[`Notifier::notify_all`].
//!
//! # Ordering crux
//!
//! Correctness hangs on a Dekker-style store-load ordering between the two
//! sides:
//!
//! * waiter:   store (waiter count += 1, inside a SeqCst RMW) ... load predicate
//! * notifier: store predicate                                ... load waiter count
//!
//! `prepare_wait`'s SeqCst read-modify-write and the SeqCst fence at the top
//! of `notify` put all four accesses into the single total order of
//! sequentially consistent operations, so at least one side observes the
//! other: either the notifier sees the registered waiter (and bumps the
//! epoch, waking it), or the waiter's predicate re-check sees the write (and
//! cancels). Weakening either ordering reintroduces the lost-wakeup race.

use std::sync::atomic::{fence, AtomicU64, AtomicU8, Ordering};
use std::sync::{Condvar, Mutex};

use crossbeam_utils::CachePadded;

/// Low bits count waiters inside the prepare..commit window; high bits are
/// the notification epoch.
const WAITER_BITS: u32 = 24;
const WAITER_MASK: u64 = (1 << WAITER_BITS) - 1;
const EPOCH_ONE: u64 = 1 << WAITER_BITS;

// Per-waiter debug states.
const W_NONE: u8 = 0;
const W_PREPARING: u8 = 1;
const W_COMMITTED: u8 = 2;

struct WaiterSlot {
    /// Epoch snapshot taken at prepare time; read back by commit.
    epoch: AtomicU64,
    /// Debug-only protocol state machine.
    state: AtomicU8,
}

/// Per-domain wait/notify object. All operations may be called from any
/// thread; `commit_wait` is the only blocking call.
pub struct Notifier {
    state: CachePadded<AtomicU64>,
    lock: Mutex<()>,
    cv: Condvar,
    slots: Box<[WaiterSlot]>,
}

impl Notifier {
    /// `max_waiters` distinct waiter ids may use this notifier (one per
    /// worker in the owning domain).
    pub fn new(max_waiters: usize) -> Self {
        assert!((max_waiters as u64) < WAITER_MASK);
        Notifier {
            state: CachePadded::new(AtomicU64::new(0)),
            lock: Mutex::new(()),
            cv: Condvar::new(),
            slots: (0..max_waiters.max(1))
                .map(|_| WaiterSlot {
                    epoch: AtomicU64::new(0),
                    state: AtomicU8::new(W_NONE),
                })
                .collect(),
        }
    }

    fn debug_transition(&self, waiter: usize, from: u8, to: u8) {
        if cfg!(debug_assertions) {
            let prev = self.slots[waiter].state.swap(to, Ordering::Relaxed);
            assert!(
                prev == from,
                "notifier protocol violation: waiter {waiter} moved {prev} -> {to}, expected from {from}"
            );
        }
    }

    /// Registers `waiter` as a sleep candidate and snapshots the epoch.
    /// After this returns, any notification is visible to at least one
    /// registered waiter.
    pub fn prepare_wait(&self, waiter: usize) {
        self.debug_transition(waiter, W_NONE, W_PREPARING);
        // SeqCst RMW: the waiter-count store that the notify side must see
        // (or else we must see its predicate write). See module docs.
        let s = self.state.fetch_add(1, Ordering::SeqCst);
        self.slots[waiter].epoch.store(s >> WAITER_BITS, Ordering::Relaxed);
    }

    /// Withdraws a prepared wait (the predicate turned true).
    pub fn cancel_wait(&self, waiter: usize) {
        self.debug_transition(waiter, W_PREPARING, W_NONE);
        self.state.fetch_sub(1, Ordering::SeqCst);
    }

    /// Blocks until a notification arrives that the prepared snapshot has not
    /// already consumed. Returns immediately if one arrived since
    /// `prepare_wait`.
    pub fn commit_wait(&self, waiter: usize) {
        self.debug_transition(waiter, W_PREPARING, W_COMMITTED);
        let target = self.slots[waiter].epoch.load(Ordering::Relaxed);
        {
            let mut guard = self.lock.lock().unwrap();
            while self.state.load(Ordering::SeqCst) >> WAITER_BITS == target {
                guard = self.cv.wait(guard).unwrap();
            }
        }
        self.debug_transition(waiter, W_COMMITTED, W_NONE);
        self.state.fetch_sub(1, Ordering::SeqCst);
    }

    /// Wakes one waiter if any is preparing or committed; a no-op otherwise.
    pub fn notify_one(&self) {
        self.notify(false);
    }

    /// Wakes all current waiters.
    pub fn notify_all(&self) {
        self.notify(true);
    }

    fn notify(&self, all: bool) {
        // Store-load fence: orders the caller's predicate write before the
        // waiter-count read below. See module docs.
        fence(Ordering::SeqCst);
        let s = self.state.load(Ordering::Relaxed);
        if s & WAITER_MASK == 0 {
            return;
        }
        self.state.fetch_add(EPOCH_ONE, Ordering::SeqCst);
        // Bridge with the commit-side mutex: a waiter is either not yet
        // inside its epoch check (it will see the bump) or already in
        // `Condvar::wait` (the signal below reaches it).
        drop(self.lock.lock().unwrap());
        if all {
            self.cv.notify_all();
        } else {
            self.cv.notify_one();
        }
    }

    /// Waiters currently inside the prepare..commit window.
    pub fn waiter_count(&self) -> usize {
        (self.state.load(Ordering::SeqCst) & WAITER_MASK) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn notify_between_prepare_and_commit_does_not_block() {
        let n = Arc::new(Notifier::new(1));
        n.prepare_wait(0);
        let n2 = Arc::clone(&n);
        let notifier = thread::spawn(move || n2.notify_one());
        notifier.join().unwrap();
        // The epoch moved while we were prepared; commit returns immediately.
        n.commit_wait(0);
        assert_eq!(n.waiter_count(), 0);
    }

    #[test]
    fn cancel_makes_notify_a_noop() {
        let n = Notifier::new(1);
        n.prepare_wait(0);
        n.cancel_wait(0);
        assert_eq!(n.waiter_count(), 0);
        n.notify_one(); // fast path: no waiters, nothing happens
        assert_eq!(n.waiter_count(), 0);
    }

    #[test]
    fn notify_all_wakes_every_committed_waiter() {
        let n = Arc::new(Notifier::new(2));
        let woken = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        for w in 0..2 {
            let n = Arc::clone(&n);
            handles.push(thread::spawn(move || {
                n.prepare_wait(w);
                n.commit_wait(w);
            }));
        }
        // Wait for both to commit, then release them together.
        while n.waiter_count() < 2 {
            thread::yield_now();
        }
        thread::sleep(Duration::from_millis(10));
        n.notify_all();
        for h in handles {
            h.join().unwrap();
        }
        woken.store(true, Ordering::Relaxed);
        assert_eq!(n.waiter_count(), 0);
    }

    #[test]
    fn notify_one_wakes_a_sleeping_waiter() {
        let n = Arc::new(Notifier::new(1));
        let n2 = Arc::clone(&n);
        let h = thread::spawn(move || {
            n2.prepare_wait(0);
            n2.commit_wait(0);
        });
        while n.waiter_count() == 0 {
            thread::yield_now();
        }
        thread::sleep(Duration::from_millis(5));
        n.notify_one();
        h.join().unwrap();
    }

    /// Hammer the canonical pattern: the waiter re-checks a predicate between
    /// prepare and commit while a peer sets it and notifies. The waiter must
    /// never sleep through a set predicate (the join below would hang).
    #[test]
    fn no_lost_wakeup_stress() {
        for _ in 0..2_000 {
            let n = Arc::new(Notifier::new(1));
            let flag = Arc::new(AtomicBool::new(false));
            let (n2, f2) = (Arc::clone(&n), Arc::clone(&flag));
            let waiter = thread::spawn(move || loop {
                if f2.load(Ordering::SeqCst) {
                    break;
                }
                n2.prepare_wait(0);
                if f2.load(Ordering::SeqCst) {
                    n2.cancel_wait(0);
                    break;
                }
                n2.commit_wait(0);
            });
            flag.store(true, Ordering::SeqCst);
            n.notify_one();
            waiter.join().unwrap();
        }
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "notifier protocol violation")]
    fn double_prepare_asserts_in_debug() {
        let n = Notifier::new(1);
        n.prepare_wait(0);
        n.prepare_wait(0);
    }
}
