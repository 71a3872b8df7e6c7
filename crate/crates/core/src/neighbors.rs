//! Exact k-nearest-neighbor search over a static point set.
//!
//! Euclidean metric; results are ordered by `(distance, insertion index)` so
//! ties always resolve toward the earlier point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    root: Option<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(dim: usize, rows: &[Vec<f64>]) -> KdTree {
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "point dimension mismatch");
            points.extend_from_slice(r);
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let root = if rows.is_empty() {
            None
        } else {
            let n = order.len();
            Some(Self::build(dim, &points, &mut order, 0, n))
        };
        KdTree { dim, points, order, root }
    }

    fn build(dim: usize, pts: &[f64], order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let slice = &mut order[start..end];
        let mut best = (0usize, -1.0f64);
        for d in 0..dim {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = pts[i * dim + d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let split_dim = best.0;
        if best.1 <= 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            pts[a * dim + split_dim].total_cmp(&pts[b * dim + split_dim]).then(a.cmp(&b))
        });
        let value = pts[slice[mid] * dim + split_dim];
        let left = Self::build(dim, pts, order, start, start + mid);
        let right = Self::build(dim, pts, order, start + mid, end);
        Node::Split { dim: split_dim, value, left: Box::new(left), right: Box::new(right) }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.points[index * self.dim..(index + 1) * self.dim]
    }

    /// The `k` nearest points as `(index, distance)`, nearest first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        let k = k.min(self.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let (Some(root), true) = (&self.root, k > 0) {
            self.search(root, query, k, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn search(&self, node: &Node, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let p = self.point(i);
                    let dist2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    let c = Candidate { dist2, index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
