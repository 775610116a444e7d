//! Exact nearest-neighbour search over a static point set.
//!
//! Results are ordered by `(squared distance, point index)`, so equidistant
//! neighbours always come back lowest index first. The tree never prunes a
//! subtree whose bounding plane is at exactly the current worst distance,
//! which keeps that tie-break exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::Point;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a point set.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// One query result: index into the indexed point set and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl SpatialIndex {
    pub fn new(points: Vec<Point>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    /// Index over the horizontal projection (z set to 0) of the given points.
    pub fn new_planar(points: &[Point]) -> Self {
        Self::new(points.iter().map(|p| Point::new(p.x, p.y, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// The `min(k, n)` nearest points, ordered by distance then index.
    pub fn knn(&self, query: &Point, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Empty("spatial index"));
        }
        let k = k.min(self.points.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        Ok(finish(heap.into_vec()))
    }

    /// All points within `radius` (inclusive), ordered by distance then index.
    pub fn within_radius(&self, query: &Point, radius: f64) -> Vec<Neighbor> {
        if self.points.is_empty() || radius < 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        self.radius_node(0, query, radius * radius, &mut out);
        finish(out)
    }

    /// Indices only, for callers that do not need sorted output or distances.
    pub fn within_radius_unsorted(&self, query: &Point, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.points.is_empty() || radius < 0.0 {
            return;
        }
        let mut tmp = Vec::new();
        self.radius_node(0, query, radius * radius, &mut tmp);
        out.extend(tmp.into_iter().map(|c| c.index));
    }

    fn knn_node(&self, node: usize, q: &Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: self.points[i].distance_squared(q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q.coord(axis) - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_node(near, q, k, heap);
                let visit_far =
                    heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.dist2);
                if visit_far {
                    self.knn_node(far, q, k, heap);
                }
            }
        }
    }

    fn radius_node(&self, node: usize, q: &Point, r2: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let dist2 = self.points[i].distance_squared(q);
                    if dist2 <= r2 {
                        out.push(Candidate { dist2, index: i });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q.coord(axis) - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_node(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_node(far, q, r2, out);
                }
            }
        }
    }
}

fn finish(mut found: Vec<Candidate>) -> Vec<Neighbor> {
    found.sort_unstable();
    found
        .into_iter()
        .map(|c| Neighbor {
            index: c.index,
            distance: c.dist2.sqrt(),
        })
        .collect()
}

fn build(
    points: &[Point],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let axis = widest_axis(points, slice);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a]
            .coord(axis)
            .total_cmp(&points[b].coord(axis))
            .then(a.cmp(&b))
    });
    let value = points[slice[mid]].coord(axis);
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

fn widest_axis(points: &[Point], idx: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx {
        for a in 0..3 {
            let c = points[i].coord(a);
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0)
}
