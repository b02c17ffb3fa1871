use crate::data::{FeatureMatrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf,
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// One node of a separation tree. `leaf_size` is the number of construction
/// samples that reached the node (for internal nodes too).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationNode {
    pub depth: usize,
    pub leaf_size: usize,
    pub kind: NodeKind,
}

impl SeparationNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

/// Arena of nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationTree {
    pub(crate) nodes: Vec<SeparationNode>,
}

impl SeparationTree {
    pub fn root(&self) -> &SeparationNode {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[SeparationNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SeparationNode {
        &self.nodes[id]
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Grows a tree over `subset` (indices into `features`).
///
/// Each node draws a feature uniformly and a split value uniformly inside the
/// feature's range over the node's samples; samples with `x[m] < v` go left.
/// Nodes become leaves at `max_depth`, at one sample, when the drawn feature
/// is constant, or when the split leaves a side empty.
pub fn build_tree(
    features: &FeatureMatrix,
    subset: &[usize],
    rng: &mut RandomSource,
    max_depth: usize,
) -> Result<SeparationTree> {
    if subset.is_empty() {
        return Err(Error::invalid("cannot build a tree on an empty subset"));
    }
    if max_depth == 0 {
        return Err(Error::invalid("max_depth must be at least 1"));
    }
    let mut nodes = Vec::new();
    let mut work = subset.to_vec();
    grow(features, &mut work, 0, max_depth, rng, &mut nodes);
    Ok(SeparationTree { nodes })
}

fn grow(
    features: &FeatureMatrix,
    samples: &mut [usize],
    depth: usize,
    max_depth: usize,
    rng: &mut RandomSource,
    nodes: &mut Vec<SeparationNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(SeparationNode {
        depth,
        leaf_size: samples.len(),
        kind: NodeKind::Leaf,
    });
    if depth >= max_depth || samples.len() <= 1 {
        return id;
    }

    let feature = rng.below(features.cols());
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        let x = features.row(i)[feature];
        (lo.min(x), hi.max(x))
    });
    if !(hi > lo) {
        return id;
    }
    let value = rng.uniform(lo, hi);

    // In-place partition: [0, split) goes left.
    let mut split = 0;
    for j in 0..samples.len() {
        if features.row(samples[j])[feature] < value {
            samples.swap(split, j);
            split += 1;
        }
    }
    if split == 0 || split == samples.len() {
        return id;
    }

    let (left_samples, right_samples) = samples.split_at_mut(split);
    let left = grow(features, left_samples, depth + 1, max_depth, rng, nodes);
    let right = grow(features, right_samples, depth + 1, max_depth, rng, nodes);
    nodes[id].kind = NodeKind::Split {
        feature,
        value,
        left,
        right,
    };
    id
}

/// Depth of the leaf reached by `x`.
pub fn path_length(tree: &SeparationTree, x: &[f64]) -> f64 {
    let mut id = 0;
    loop {
        let node = &tree.nodes[id];
        match node.kind {
            NodeKind::Leaf => return node.depth as f64,
            NodeKind::Split {
                feature,
                value,
                left,
                right,
            } => {
                id = if x[feature] < value { left } else { right };
            }
        }
    }
}
