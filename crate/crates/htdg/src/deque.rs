//! A Chase-Lev work-stealing deque with a growable ring buffer.
//!
//! [`WorkDeque`] is the owner handle: exactly one thread may `push`/`pop` at
//! the bottom end. [`Stealer`] handles are cloneable and any thread may
//! `steal` from the top end concurrently. The split enforces the single-owner
//! rule in the type system. Memory orderings follow the weak-memory
//! formulation of the algorithm (Le et al., PPoPP 2013).
//!
//! Growth allocates a doubled ring and copies the live range; retired buffers
//! are kept alive until the deque drops, because concurrent stealers may
//! still be reading from them. Growth is geometric, so retired storage totals
//! less than one final-size buffer.

use std::cell::{Cell, UnsafeCell};
use std::marker::PhantomData;
use std::mem::{self, MaybeUninit};
use std::sync::atomic::{fence, AtomicIsize, AtomicPtr, Ordering};
use std::sync::{Arc, Mutex};

/// Default initial capacity (slots). Growth doubles as needed.
pub const DEFAULT_CAPACITY: usize = 64;

/// Outcome of a steal attempt.
#[derive(Debug, PartialEq, Eq)]
pub enum Steal<T> {
    /// The deque was observed empty.
    Empty,
    /// One item was taken.
    Success(T),
    /// Lost a race with a concurrent pop/steal; the caller may retry.
    Retry,
}

impl<T> Steal<T> {
    pub fn success(self) -> Option<T> {
        match self {
            Steal::Success(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Steal::Empty)
    }
}

struct Buffer<T> {
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
    /// Power of two; index masking wraps the ring.
    cap: usize,
}

impl<T> Buffer<T> {
    fn alloc(cap: usize) -> *mut Buffer<T> {
        debug_assert!(cap.is_power_of_two());
        let slots = (0..cap)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        Box::into_raw(Box::new(Buffer { slots, cap }))
    }

    unsafe fn slot(&self, index: isize) -> *mut MaybeUninit<T> {
        self.slots[(index as usize) & (self.cap - 1)].get()
    }

    unsafe fn write(&self, index: isize, value: T) {
        (*self.slot(index)).write(value);
    }

    unsafe fn read(&self, index: isize) -> T {
        (*self.slot(index)).assume_init_read()
    }
}

struct Inner<T> {
    /// Steal end. Monotonically increasing.
    top: AtomicIsize,
    /// Owner end. Only the owner writes it.
    bottom: AtomicIsize,
    buffer: AtomicPtr<Buffer<T>>,
    /// Old buffers, kept alive for in-flight stealers; freed on drop.
    retired: Mutex<Vec<*mut Buffer<T>>>,
}

unsafe impl<T: Send> Send for Inner<T> {}
unsafe impl<T: Send> Sync for Inner<T> {}

impl<T> Drop for Inner<T> {
    fn drop(&mut self) {
        // Sole remaining reference: drain live items, then free all storage.
        let t = self.top.load(Ordering::Relaxed);
        let b = self.bottom.load(Ordering::Relaxed);
        let buf = self.buffer.load(Ordering::Relaxed);
        unsafe {
            let mut i = t;
            while i < b {
                drop((*buf).read(i));
                i += 1;
            }
            drop(Box::from_raw(buf));
            for old in self.retired.lock().unwrap().drain(..) {
                drop(Box::from_raw(old));
            }
        }
    }
}

/// Owner handle: single-threaded `push`/`pop`, movable but not shareable.
pub struct WorkDeque<T> {
    inner: Arc<Inner<T>>,
    /// Makes the owner handle `!Sync`; `Stealer` is the shared view.
    _not_sync: PhantomData<Cell<()>>,
}

unsafe impl<T: Send> Send for WorkDeque<T> {}

/// Shared handle for concurrent stealing.
pub struct Stealer<T> {
    inner: Arc<Inner<T>>,
}

impl<T> Clone for Stealer<T> {
    fn clone(&self) -> Self {
        Stealer {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Send> Default for WorkDeque<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Send> WorkDeque<T> {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }

    /// `capacity` is rounded up to a power of two (minimum 2).
    pub fn with_capacity(capacity: usize) -> Self {
        let cap = capacity.next_power_of_two().max(2);
        WorkDeque {
            inner: Arc::new(Inner {
                top: AtomicIsize::new(0),
                bottom: AtomicIsize::new(0),
                buffer: AtomicPtr::new(Buffer::alloc(cap)),
                retired: Mutex::new(Vec::new()),
            }),
            _not_sync: PhantomData,
        }
    }

    pub fn stealer(&self) -> Stealer<T> {
        Stealer {
            inner: Arc::clone(&self.inner),
        }
    }

    /// Owner push at the bottom end. Grows the ring when full.
    pub fn push(&self, value: T) {
        let inner = &*self.inner;
        let b = inner.bottom.load(Ordering::Relaxed);
        let t = inner.top.load(Ordering::Acquire);
        let mut buf = inner.buffer.load(Ordering::Relaxed);
        unsafe {
            if b - t >= (*buf).cap as isize {
                buf = self.grow(b, t, buf);
            }
            (*buf).write(b, value);
        }
        // Publish the slot before advancing bottom so stealers that observe
        // the new bottom also observe the written value.
        inner.bottom.store(b + 1, Ordering::Release);
    }

    #[cold]
    unsafe fn grow(&self, b: isize, t: isize, old: *mut Buffer<T>) -> *mut Buffer<T> {
        let new = Buffer::alloc((*old).cap * 2);
        let mut i = t;
        while i < b {
            std::ptr::copy_nonoverlapping((*old).slot(i), (*new).slot(i), 1);
            i += 1;
        }
        // Stealers may still read `old`; retire it instead of freeing.
        self.inner.retired.lock().unwrap().push(old);
        self.inner.buffer.store(new, Ordering::Release);
        new
    }

    /// Owner pop at the bottom end (LIFO relative to push).
    pub fn pop(&self) -> Option<T> {
        let inner = &*self.inner;
        let b = inner.bottom.load(Ordering::Relaxed) - 1;
        let buf = inner.buffer.load(Ordering::Relaxed);
        inner.bottom.store(b, Ordering::Relaxed);
        // Order the bottom write before reading top: a concurrent stealer
        // must either see the reserved bottom or we must see its CAS on top.
        fence(Ordering::SeqCst);
        let t = inner.top.load(Ordering::Relaxed);

        if t <= b {
            if t == b {
                // Single element left: race stealers for it via top.
                let won = inner
                    .top
                    .compare_exchange(t, t + 1, Ordering::SeqCst, Ordering::Relaxed)
                    .is_ok();
                inner.bottom.store(b + 1, Ordering::Relaxed);
                if won {
                    Some(unsafe { (*buf).read(b) })
                } else {
                    None
                }
            } else {
                // More than one element: slot b is exclusively ours.
                Some(unsafe { (*buf).read(b) })
            }
        } else {
            inner.bottom.store(b + 1, Ordering::Relaxed);
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        len(&self.inner)
    }
}

impl<T: Send> Stealer<T> {
    /// Steal from the top end (FIFO relative to push). Any thread may call
    /// this; contention reports [`Steal::Retry`] rather than spinning.
    pub fn steal(&self) -> Steal<T> {
        let inner = &*self.inner;
        let t = inner.top.load(Ordering::Acquire);
        fence(Ordering::SeqCst);
        let b = inner.bottom.load(Ordering::Acquire);

        if t >= b {
            return Steal::Empty;
        }
        // Speculatively read the value before claiming it; on a lost race the
        // bitwise copy is forgotten, never dropped.
        let buf = inner.buffer.load(Ordering::Acquire);
        let value = unsafe { (*buf).read(t) };
        if inner
            .top
            .compare_exchange(t, t + 1, Ordering::SeqCst, Ordering::Relaxed)
            .is_err()
        {
            mem::forget(value);
            return Steal::Retry;
        }
        Steal::Success(value)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        len(&self.inner)
    }
}

fn len<T>(inner: &Inner<T>) -> usize {
    let t = inner.top.load(Ordering::SeqCst);
    let b = inner.bottom.load(Ordering::SeqCst);
    (b - t).max(0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::atomic::AtomicUsize;
    use std::thread;

    #[test]
    fn owner_end_is_lifo() {
        let q = WorkDeque::new();
        q.push(1);
        q.push(2);
        q.push(3);
        assert_eq!(q.pop(), Some(3));
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.pop(), Some(1));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn steal_end_is_fifo() {
        let q = WorkDeque::new();
        let s = q.stealer();
        q.push(1);
        q.push(2);
        q.push(3);
        assert_eq!(s.steal(), Steal::Success(1));
        assert_eq!(s.steal(), Steal::Success(2));
        assert_eq!(s.steal(), Steal::Success(3));
        assert!(s.steal().is_empty());
    }

    #[test]
    fn pop_and_steal_on_empty() {
        let q: WorkDeque<u32> = WorkDeque::new();
        assert_eq!(q.pop(), None);
        assert!(q.stealer().steal().is_empty());
        assert!(q.is_empty());
    }

    #[test]
    fn growth_preserves_contents() {
        let q = WorkDeque::with_capacity(2);
        for i in 0..10_000 {
            q.push(i);
        }
        assert_eq!(q.len(), 10_000);
        for i in (0..10_000).rev() {
            assert_eq!(q.pop(), Some(i));
        }
    }

    #[test]
    fn growth_with_concurrent_stealer() {
        let q = Arc::new(WorkDeque::with_capacity(2));
        let s = q.stealer();
        let total = 100_000usize;
        let got = thread::spawn(move || {
            let mut got = Vec::new();
            while got.len() < total / 2 {
                if let Steal::Success(v) = s.steal() {
                    got.push(v);
                }
            }
            got
        });
        for i in 0..total {
            q.push(i);
        }
        let mut stolen = got.join().unwrap();
        while let Some(v) = q.pop() {
            stolen.push(v);
        }
        stolen.sort_unstable();
        assert_eq!(stolen, (0..total).collect::<Vec<_>>());
    }

    /// Exactly-once under contention: a mixed owner push/pop stream against
    /// several thieves never loses or duplicates an item.
    #[test]
    fn stress_exactly_once() {
        const ITEMS: usize = 100_000;
        const THIEVES: usize = 4;
        for seed in 0..4u64 {
            let q = Arc::new(WorkDeque::with_capacity(8));
            let done = Arc::new(AtomicUsize::new(0));
            let mut handles = Vec::new();
            for _ in 0..THIEVES {
                let s = q.stealer();
                let done = Arc::clone(&done);
                handles.push(thread::spawn(move || {
                    let mut got = Vec::new();
                    loop {
                        match s.steal() {
                            Steal::Success(v) => got.push(v),
                            _ => {
                                if done.load(Ordering::Acquire) == 1 && s.is_empty() {
                                    break;
                                }
                                std::hint::spin_loop();
                            }
                        }
                    }
                    got
                }));
            }
            let mut popped = Vec::new();
            let mut x = seed.wrapping_add(0x9E3779B97F4A7C15);
            for i in 0..ITEMS {
                q.push(i);
                // xorshift coin: sometimes pop a few back.
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                if x % 3 == 0 {
                    if let Some(v) = q.pop() {
                        popped.push(v);
                    }
                }
            }
            done.store(1, Ordering::Release);
            let mut all: Vec<usize> = popped;
            for h in handles {
                all.extend(h.join().unwrap());
            }
            while let Some(v) = q.pop() {
                all.push(v);
            }
            assert_eq!(all.len(), ITEMS, "seed {seed}: lost or duplicated items");
            let set: HashSet<usize> = all.iter().copied().collect();
            assert_eq!(set.len(), ITEMS, "seed {seed}: duplicate items");
        }
    }

    /// Last-item race: exactly one of the owner's pop and a concurrent steal
    /// wins, every round.
    #[test]
    fn last_item_single_winner() {
        for _ in 0..10_000 {
            let q = Arc::new(WorkDeque::with_capacity(2));
            q.push(7u32);
            let s = q.stealer();
            let q2 = Arc::clone(&q);
            let thief = thread::spawn(move || loop {
                match s.steal() {
                    Steal::Success(v) => break Some(v),
                    Steal::Empty => break None,
                    Steal::Retry => {}
                }
            });
            let mine = q2.pop();
            let theirs = thief.join().unwrap();
            assert!(
                mine.is_some() ^ theirs.is_some(),
                "exactly one side must win: owner={mine:?} thief={theirs:?}"
            );
        }
    }

    /// Items with destructors are neither leaked nor double-dropped, even
    /// when some are left in the deque at drop time.
    #[test]
    fn drop_accounting() {
        static LIVE: AtomicUsize = AtomicUsize::new(0);
        struct Tracked;
        impl Tracked {
            fn new() -> Self {
                LIVE.fetch_add(1, Ordering::SeqCst);
                Tracked
            }
        }
        impl Drop for Tracked {
            fn drop(&mut self) {
                LIVE.fetch_sub(1, Ordering::SeqCst);
            }
        }
        {
            let q = WorkDeque::with_capacity(2);
            let s = q.stealer();
            for _ in 0..100 {
                q.push(Tracked::new());
            }
            for _ in 0..20 {
                drop(q.pop());
            }
            for _ in 0..20 {
                drop(s.steal().success());
            }
            assert_eq!(LIVE.load(Ordering::SeqCst), 60);
        }
        assert_eq!(LIVE.load(Ordering::SeqCst), 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use std::collections::VecDeque;

        #[derive(Debug, Clone)]
        enum Op {
            Push(u32),
            Pop,
            Steal,
        }

        fn ops() -> impl Strategy<Value = Vec<Op>> {
            proptest::collection::vec(
                prop_oneof![
                    any::<u32>().prop_map(Op::Push),
                    Just(Op::Pop),
                    Just(Op::Steal),
                ],
                0..200,
            )
        }

        proptest! {
            /// Single-threaded semantics match a double-ended reference model:
            /// pop takes from the back, steal from the front.
            #[test]
            fn matches_reference_model(ops in ops()) {
                let q = WorkDeque::with_capacity(2);
                let s = q.stealer();
                let mut model: VecDeque<u32> = VecDeque::new();
                for op in ops {
                    match op {
                        Op::Push(v) => {
                            q.push(v);
                            model.push_back(v);
                        }
                        Op::Pop => prop_assert_eq!(q.pop(), model.pop_back()),
                        Op::Steal => {
                            let got = s.steal().success();
                            prop_assert_eq!(got, model.pop_front());
                        }
                    }
                    prop_assert_eq!(q.len(), model.len());
                }
            }
        }
    }
}
