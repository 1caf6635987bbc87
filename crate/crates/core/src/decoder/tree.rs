//! Candidate locations of one 8-CCE segment as a binary tree.
//!
//! The root covers all 8 CCEs at level 8, its two children the halves at
//! level 4, and so on down to the 8 single-CCE leaves: 15 nodes, with 8/L
//! positions at level L. Nodes are stored in heap order (children of `i` are
//! `2i + 1` and `2i + 2`).

pub const SEGMENT_CCES: usize = 8;
pub const NODES: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeStatus {
    Unvisited,
    Empty,
    Decoded,
    Skipped,
}

/// A node as `(offset inside the segment, level)`.
pub type Node = (usize, usize);

fn node_of(index: usize) -> Node {
    let depth = (index + 1).ilog2() as usize;
    let level = SEGMENT_CCES >> depth;
    let pos = index + 1 - (1 << depth);
    (pos * level, level)
}

fn index_of(offset: usize, level: usize) -> usize {
    let depth = (SEGMENT_CCES / level).ilog2() as usize;
    (1 << depth) - 1 + offset / level
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchTree {
    status: [NodeStatus; NODES],
}

impl SearchTree {
    /// Build from the emptiness flags of the segment's 8 CCEs. A leaf is
    /// empty when its CCE is; an inner node is empty when both children are.
    pub fn build(empty: &[bool]) -> Self {
        assert_eq!(empty.len(), SEGMENT_CCES, "a segment has 8 CCEs");
        let mut status = [NodeStatus::Unvisited; NODES];
        for i in (0..NODES).rev() {
            let is_empty = if i >= NODES / 2 {
                empty[i - NODES / 2]
            } else {
                status[2 * i + 1] == NodeStatus::Empty && status[2 * i + 2] == NodeStatus::Empty
            };
            if is_empty {
                status[i] = NodeStatus::Empty;
            }
        }
        Self { status }
    }

    pub fn status(&self, offset: usize, level: usize) -> NodeStatus {
        self.status[index_of(offset, level)]
    }

    /// Non-empty, unvisited nodes in pre-order (root first, then the left
    /// subtree before the right).
    pub fn candidates(&self) -> Vec<Node> {
        let mut out = Vec::new();
        self.preorder(0, &mut out);
        out
    }

    fn preorder(&self, i: usize, out: &mut Vec<Node>) {
        if i >= NODES || self.status[i] == NodeStatus::Empty {
            return;
        }
        if self.status[i] == NodeStatus::Unvisited {
            out.push(node_of(i));
        }
        self.preorder(2 * i + 1, out);
        self.preorder(2 * i + 2, out);
    }

    /// Record a validated message at this node; its non-empty descendants
    /// are skipped.
    pub fn mark_decoded(&mut self, offset: usize, level: usize) {
        let i = index_of(offset, level);
        self.status[i] = NodeStatus::Decoded;
        let mut stack = vec![2 * i + 1, 2 * i + 2];
        while let Some(j) = stack.pop() {
            if j >= NODES {
                continue;
            }
            if self.status[j] != NodeStatus::Empty {
                self.status[j] = NodeStatus::Skipped;
            }
            stack.push(2 * j + 1);
            stack.push(2 * j + 2);
        }
    }

    /// Same-start ancestors of a node, nearest first.
    pub fn same_start_ancestors(offset: usize, level: usize) -> Vec<Node> {
        let mut out = Vec::new();
        let mut l = level * 2;
        while l <= SEGMENT_CCES && offset.is_multiple_of(l) {
            out.push((offset, l));
            l *= 2;
        }
        out
    }
}
