use std::collections::VecDeque;

use crate::autograd::Var;

use super::PromptEmbedding;

/// One remembered frame: fused tokens (`hw x d`) with cached keys/values.
#[derive(Clone, Copy, Debug)]
pub struct MemoryEntry {
    pub tokens: Var,
    pub keys: Var,
    pub values: Var,
}

/// FIFO of the `K` most recent frames plus the first-frame prompt, which
/// is never evicted.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
    prompt: PromptEmbedding,
}

impl MemoryBank {
    pub fn new(capacity: usize, prompt: PromptEmbedding) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
            prompt,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends a frame, evicting the oldest once `K` are held.
    pub fn push(&mut self, entry: MemoryEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn prompt(&self) -> &PromptEmbedding {
        &self.prompt
    }
}
