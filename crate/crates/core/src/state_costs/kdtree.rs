use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Static 3-d tree for k-nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Permutation of point indices laid out as an implicit balanced tree.
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist_sq: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

impl KdTree {
    pub fn build(points: Vec<[f64; 3]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::arrange(&points, &mut order, 0);
        KdTree { points, order }
    }

    fn arrange(points: &[[f64; 3]], slice: &mut [usize], depth: usize) {
        if slice.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let (left, right) = slice.split_at_mut(mid);
        Self::arrange(points, left, depth + 1);
        Self::arrange(points, &mut right[1..], depth + 1);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    /// Returns `min(k, len)` entries.
    pub fn nearest(&self, query: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, &self.order, 0, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.index, c.dist_sq)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn search(&self, q: &[f64; 3], k: usize, slice: &[usize], depth: usize, heap: &mut BinaryHeap<Candidate>) {
        if slice.is_empty() {
            return;
        }
        let axis = depth % 3;
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = &self.points[idx];
        let cand = Candidate {
            dist_sq: dist_sq(q, p),
            index: idx,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(q, k, near, depth + 1, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
            self.search(q, k, far, depth + 1, heap);
        }
    }
}
