//! Fixed-capacity circular buffer with a stride-discard operation.
//!
//! `head` is the next write slot and `tail` the oldest retained value. A
//! stride of `s` advances `tail`, dropping the `s` oldest samples so that the
//! next convolution window keeps the `capacity - s` overlapping samples.
//! Occupancy is tracked explicitly, so `head == tail` is never ambiguous.

use std::fmt;

/// Errors raised by ring buffer operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RingError {
    /// A write was attempted on a full buffer.
    #[error("ring buffer overflow: capacity {capacity} already full")]
    Overflow { capacity: usize },
    /// A stride asked to discard more values than are stored.
    #[error("ring buffer underflow: cannot stride {requested} with only {count} stored")]
    Underflow { requested: usize, count: usize },
}

#[derive(Clone, PartialEq)]
pub struct StridedRingBuffer<T = f32> {
    storage: Box<[T]>,
    head: usize,
    tail: usize,
    count: usize,
}

impl<T: Copy + Default> StridedRingBuffer<T> {
    /// Creates an empty buffer.
    ///
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
        Self {
            storage: vec![T::default(); capacity].into_boxed_slice(),
            head: 0,
            tail: 0,
            count: 0,
        }
    }

    /// Stores `value` at `head` and advances it.
    pub fn write(&mut self, value: T) -> Result<(), RingError> {
        if self.is_full() {
            return Err(RingError::Overflow {
                capacity: self.capacity(),
            });
        }
        self.storage[self.head] = value;
        self.head = (self.head + 1) % self.capacity();
        self.count += 1;
        Ok(())
    }

    /// Removes and returns the oldest value.
    pub fn read(&mut self) -> Option<T> {
        if self.is_empty() {
            return None;
        }
        let value = self.storage[self.tail];
        self.tail = (self.tail + 1) % self.capacity();
        self.count -= 1;
        Some(value)
    }

    /// Discards the `s` oldest values by advancing `tail`.
    pub fn stride(&mut self, s: usize) -> Result<(), RingError> {
        if s > self.count {
            return Err(RingError::Underflow {
                requested: s,
                count: self.count,
            });
        }
        self.tail = (self.tail + s) % self.capacity();
        self.count -= s;
        Ok(())
    }

    /// Copies out the stored values, oldest first.
    pub fn peek_window(&self) -> Vec<T> {
        self.iter().collect()
    }

    /// The `i`-th oldest stored value.
    #[inline]
    pub fn get(&self, i: usize) -> Option<T> {
        (i < self.count).then(|| self.storage[(self.tail + i) % self.capacity()])
    }

    /// Iterates stored values oldest first without copying the window.
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        let (a, b) = self.as_slices();
        a.iter().chain(b.iter()).copied()
    }

    /// The stored window as two contiguous runs, oldest first.
    pub fn as_slices(&self) -> (&[T], &[T]) {
        let end = self.tail + self.count;
        if end <= self.capacity() {
            (&self.storage[self.tail..end], &[])
        } else {
            (
                &self.storage[self.tail..],
                &self.storage[..end - self.capacity()],
            )
        }
    }

    /// Drops every stored value.
    pub fn clear(&mut self) {
        self.head = 0;
        self.tail = 0;
        self.count = 0;
    }
}

impl<T> StridedRingBuffer<T> {
    #[inline]
    pub fn capacity(&self) -> usize {
        self.storage.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn head(&self) -> usize {
        self.head
    }

    #[inline]
    pub fn tail(&self) -> usize {
        self.tail
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.count == self.storage.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl<T: fmt::Debug + Copy + Default> fmt::Debug for StridedRingBuffer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StridedRingBuffer")
            .field("capacity", &self.capacity())
            .field("head", &self.head)
            .field("tail", &self.tail)
            .field("window", &self.peek_window())
            .finish()
    }
}
