//! Bounded per-agent history buffer: newest last, oldest evicted first.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct HistoryBuffer<T> {
    depth: usize,
    entries: VecDeque<T>,
}

impl<T> HistoryBuffer<T> {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            entries: VecDeque::with_capacity(depth),
        }
    }

    pub fn push(&mut self, entry: T) {
        if self.depth == 0 {
            return;
        }
        if self.entries.len() == self.depth {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest-to-newest iteration.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    pub fn to_vec(&self) -> Vec<T>
    where
        T: Clone,
    {
        self.entries.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest_first() {
        let mut buf = HistoryBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.to_vec(), vec![2, 3, 4]);
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn never_exceeds_depth() {
        let mut buf = HistoryBuffer::new(2);
        for i in 0..100 {
            buf.push(i);
            assert!(buf.len() <= 2);
        }
    }

    #[test]
    fn zero_depth_stays_empty() {
        let mut buf = HistoryBuffer::new(0);
        buf.push(1);
        assert!(buf.is_empty());
    }
}
