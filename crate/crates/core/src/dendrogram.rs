//! Correlation-distance agglomerative clustering.
//!
//! The tree is stored as an arena of nodes. Every internal node caches the
//! sorted set of leaf indices below it, so tree allocators can slice `Σ` and
//! `μ` without walking subtrees again.

use nalgebra::DMatrix;

use crate::core_types::CorrelationMatrix;
use crate::error::{Error, Result};

/// Linkage criterion for merging clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkageRule {
    Ward,
    Single,
    Complete,
    Average,
}

impl LinkageRule {
    pub const ALL: [LinkageRule; 4] = [
        LinkageRule::Ward,
        LinkageRule::Single,
        LinkageRule::Complete,
        LinkageRule::Average,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkageRule::Ward => "ward",
            LinkageRule::Single => "single",
            LinkageRule::Complete => "complete",
            LinkageRule::Average => "average",
        }
    }
}

impl std::str::FromStr for LinkageRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ward" => Ok(LinkageRule::Ward),
            "single" => Ok(LinkageRule::Single),
            "complete" => Ok(LinkageRule::Complete),
            "average" => Ok(LinkageRule::Average),
            other => Err(Error::Parameter(format!(
                "unknown linkage '{other}' (expected ward, single, complete or average)"
            ))),
        }
    }
}

/// `d_ij = √(½(1 − C_ij))`, with an exactly zero diagonal.
pub fn corr_distance(corr: &CorrelationMatrix) -> DMatrix<f64> {
    let n = corr.n();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (0.5 * (1.0 - corr.get(i, j))).max(0.0).sqrt().min(1.0)
        }
    })
}

/// One node of the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        asset: usize,
    },
    Internal {
        left: usize,
        right: usize,
        height: f64,
        leaves: Vec<usize>,
    },
}

/// Nested description of a tree, used to build hand-specified topologies.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Leaf(usize),
    Node(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn node(l: Shape, r: Shape) -> Shape {
        Shape::Node(Box::new(l), Box::new(r))
    }
}

/// Binary cluster tree over assets `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    nodes: Vec<TreeNode>,
    root: usize,
    leaf_order: Vec<usize>,
    n: usize,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Left-to-right leaf traversal (the quasi-diagonal order).
    pub fn leaf_order(&self) -> &[usize] {
        &self.leaf_order
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match &self.nodes[id] {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal { left, right, .. } => Some((*left, *right)),
        }
    }

    pub fn height(&self, id: usize) -> f64 {
        match &self.nodes[id] {
            TreeNode::Leaf { .. } => 0.0,
            TreeNode::Internal { height, .. } => *height,
        }
    }

    /// Sorted leaf indices beneath `id`.
    pub fn leaves(&self, id: usize) -> &[usize] {
        match &self.nodes[id] {
            TreeNode::Leaf { asset } => std::slice::from_ref(asset),
            TreeNode::Internal { leaves, .. } => leaves,
        }
    }

    /// Internal node ids in pre-order (root first).
    pub fn internal_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n.saturating_sub(1));
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if let Some((l, r)) = self.children(id) {
                out.push(id);
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Dendrogram, id: usize) -> usize {
            match t.children(id) {
                None => 0,
                Some((l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, self.root)
    }

    /// Builds a tree from an explicit nested shape. Heights are set to the
    /// subtree depth.
    pub fn from_shape(shape: &Shape) -> Result<Self> {
        let mut nodes = Vec::new();
        let root = push_shape(shape, &mut nodes);
        Self::from_arena(nodes, root)
    }

    /// Balanced binary tree that splits `order` into halves recursively
    /// (left half gets `⌊len/2⌋` leaves).
    pub fn balanced(order: &[usize]) -> Result<Self> {
        fn build(order: &[usize]) -> Shape {
            if order.len() == 1 {
                return Shape::Leaf(order[0]);
            }
            let mid = order.len() / 2;
            Shape::node(build(&order[..mid]), build(&order[mid..]))
        }
        if order.len() < 2 {
            return Err(Error::DegenerateUniverse(order.len()));
        }
        Self::from_shape(&build(order))
    }

    fn from_arena(nodes: Vec<TreeNode>, root: usize) -> Result<Self> {
        let n = nodes
            .iter()
            .filter(|x| matches!(x, TreeNode::Leaf { .. }))
            .count();
        if n < 2 {
            return Err(Error::DegenerateUniverse(n));
        }
        let mut t = Dendrogram {
            nodes,
            root,
            leaf_order: Vec::new(),
            n,
        };
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            match t.children(id) {
                None => {
                    if let TreeNode::Leaf { asset } = t.nodes[id] {
                        order.push(asset);
                    }
                }
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &a)| i != a) {
            return Err(Error::Parameter(
                "tree leaves must be exactly the assets 0..n-1".into(),
            ));
        }
        t.leaf_order = order;
        Ok(t)
    }
}

fn push_shape(shape: &Shape, nodes: &mut Vec<TreeNode>) -> usize {
    match shape {
        Shape::Leaf(a) => {
            nodes.push(TreeNode::Leaf { asset: *a });
            nodes.len() - 1
        }
        Shape::Node(l, r) => {
            let li = push_shape(l, nodes);
            let ri = push_shape(r, nodes);
            let mut leaves = leaf_set(nodes, li);
            leaves.extend(leaf_set(nodes, ri));
            leaves.sort_unstable();
            let depth = 1.0 + subtree_height(nodes, li).max(subtree_height(nodes, ri));
            nodes.push(TreeNode::Internal {
                left: li,
                right: ri,
                height: depth,
                leaves,
            });
            nodes.len() - 1
        }
    }
}

fn leaf_set(nodes: &[TreeNode], id: usize) -> Vec<usize> {
    match &nodes[id] {
        TreeNode::Leaf { asset } => vec![*asset],
        TreeNode::Internal { leaves, .. } => leaves.clone(),
    }
}

fn subtree_height(nodes: &[TreeNode], id: usize) -> f64 {
    match &nodes[id] {
        TreeNode::Leaf { .. } => 0.0,
        TreeNode::Internal { height, .. } => *height,
    }
}

/// Agglomerative clustering on the correlation distance with Lance–Williams
/// updates. Ties are broken by the lexicographically smallest cluster-id pair;
/// leaves carry ids `0..n` and the k-th merge creates id `n + k`. The cluster
/// with the smaller id becomes the left child.
pub fn build_tree(corr: &CorrelationMatrix, rule: LinkageRule) -> Result<Dendrogram> {
    let n = corr.n();
    if n < 2 {
        return Err(Error::DegenerateUniverse(n));
    }
    let total = 2 * n - 1;
    let base = corr_distance(corr);
    let mut dist = DMatrix::<f64>::zeros(total, total);
    dist.view_mut((0, 0), (n, n)).copy_from(&base);

    let mut nodes: Vec<TreeNode> = (0..n).map(|asset| TreeNode::Leaf { asset }).collect();
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();

    for step in 0..(n - 1) {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let d = dist[(i, j)];
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (h, i, j) = best;
        let k = n + step;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        active.retain(|&x| x != i && x != j);
        for &m in &active {
            let (dmi, dmj) = (dist[(m, i)], dist[(m, j)]);
            let nm = size[m] as f64;
            let d = match rule {
                LinkageRule::Single => dmi.min(dmj),
                LinkageRule::Complete => dmi.max(dmj),
                LinkageRule::Average => (ni * dmi + nj * dmj) / (ni + nj),
                LinkageRule::Ward => {
                    let t = ni + nj + nm;
                    (((ni + nm) * dmi * dmi + (nj + nm) * dmj * dmj - nm * h * h) / t)
                        .max(0.0)
                        .sqrt()
                }
            };
            dist[(m, k)] = d;
            dist[(k, m)] = d;
        }
        size[k] = size[i] + size[j];
        let mut leaves = leaf_set(&nodes, i);
        leaves.extend(leaf_set(&nodes, j));
        leaves.sort_unstable();
        nodes.push(TreeNode::Internal {
            left: i,
            right: j,
            height: h,
            leaves,
        });
        active.push(k);
    }
    Dendrogram::from_arena(nodes, total - 1)
}
