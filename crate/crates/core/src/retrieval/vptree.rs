//! Vantage-point tree over the rows of a point matrix.
//!
//! Each internal node stores one vantage row and the median distance `mu`
//! of its subtree to that row; rows at distance `<= mu` go inside, the rest
//! outside. Leaves hold small buckets that are scanned linearly.
//!
//! Subtrees are pruned with the triangle inequality, widened by a tiny
//! relative slack so that rounding in `|d(q, v) - mu|` can never discard a
//! row whose computed distance satisfies the query. Final membership is
//! always decided on the exact computed distance, which is what keeps the
//! tree bit-for-bit consistent with the brute-force scan.

use std::collections::BinaryHeap;

use super::{euclidean, Neighbor};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        vantage: usize,
        mu: f64,
        inside: Option<usize>,
        outside: Option<usize>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct VpTree {
    nodes: Vec<Node>,
    /// Permutation of row indices; leaves reference ranges of it.
    order: Vec<usize>,
    root: Option<usize>,
}

#[inline]
fn slack(a: f64, b: f64) -> f64 {
    1e-9 * (1.0 + a.abs() + b.abs())
}

impl VpTree {
    pub(crate) fn build(points: &[f64], dim: usize, n: usize) -> VpTree {
        let mut tree = VpTree {
            nodes: Vec::new(),
            order: (0..n).collect(),
            root: None,
        };
        let mut scratch = Vec::new();
        tree.root = tree.build_range(points, dim, 0, n, &mut scratch);
        tree
    }

    fn build_range(
        &mut self,
        points: &[f64],
        dim: usize,
        start: usize,
        end: usize,
        scratch: &mut Vec<(f64, usize)>,
    ) -> Option<usize> {
        if start >= end {
            return None;
        }
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return Some(self.nodes.len() - 1);
        }
        let vantage = self.order[start];
        let vrow = &points[vantage * dim..(vantage + 1) * dim];
        scratch.clear();
        scratch.extend(self.order[start + 1..end].iter().map(|&i| {
            (euclidean(vrow, &points[i * dim..(i + 1) * dim]), i)
        }));
        let mid = (scratch.len() - 1) / 2;
        scratch.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mu = scratch[mid].0;
        for (slot, &(_, i)) in self.order[start + 1..end].iter_mut().zip(scratch.iter()) {
            *slot = i;
        }
        let split = start + 1 + mid + 1;
        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            vantage,
            mu,
            inside: None,
            outside: None,
        });
        let inside = self.build_range(points, dim, start + 1, split, scratch);
        let outside = self.build_range(points, dim, split, end, scratch);
        if let Node::Split {
            inside: ins,
            outside: out,
            ..
        } = &mut self.nodes[id]
        {
            *ins = inside;
            *out = outside;
        }
        Some(id)
    }

    pub(crate) fn ball(
        &self,
        points: &[f64],
        dim: usize,
        q: &[f64],
        r: f64,
        exclude: Option<usize>,
        out: &mut Vec<Neighbor>,
    ) {
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if Some(i) == exclude {
                            continue;
                        }
                        let d = euclidean(q, &points[i * dim..(i + 1) * dim]);
                        if d <= r {
                            out.push(Neighbor { dist: d, index: i });
                        }
                    }
                }
                Node::Split {
                    vantage,
                    mu,
                    inside,
                    outside,
                } => {
                    let dv = euclidean(q, &points[vantage * dim..(vantage + 1) * dim]);
                    if dv <= r && Some(vantage) != exclude {
                        out.push(Neighbor {
                            dist: dv,
                            index: vantage,
                        });
                    }
                    let tol = r + slack(dv, mu);
                    if let Some(c) = inside {
                        if dv - mu <= tol {
                            stack.push(c);
                        }
                    }
                    if let Some(c) = outside {
                        if mu - dv <= tol {
                            stack.push(c);
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn knn(
        &self,
        points: &[f64],
        dim: usize,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
    ) -> Vec<Neighbor> {
        let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
        let offer = |heap: &mut BinaryHeap<Neighbor>, cand: Neighbor| {
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(cand);
            }
        };
        let tau = |heap: &BinaryHeap<Neighbor>| {
            if heap.len() < k {
                f64::INFINITY
            } else {
                heap.peek().expect("nonempty").dist
            }
        };
        self.knn_visit(points, dim, q, exclude, self.root, &mut heap, &offer, &tau);
        heap.into_sorted_vec()
    }

    #[allow(clippy::too_many_arguments)]
    fn knn_visit<O, T>(
        &self,
        points: &[f64],
        dim: usize,
        q: &[f64],
        exclude: Option<usize>,
        node: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
        offer: &O,
        tau: &T,
    ) where
        O: Fn(&mut BinaryHeap<Neighbor>, Neighbor),
        T: Fn(&BinaryHeap<Neighbor>) -> f64,
    {
        let Some(id) = node else { return };
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) != exclude {
                        let d = euclidean(q, &points[i * dim..(i + 1) * dim]);
                        offer(heap, Neighbor { dist: d, index: i });
                    }
                }
            }
            Node::Split {
                vantage,
                mu,
                inside,
                outside,
            } => {
                let dv = euclidean(q, &points[vantage * dim..(vantage + 1) * dim]);
                if Some(vantage) != exclude {
                    offer(
                        heap,
                        Neighbor {
                            dist: dv,
                            index: vantage,
                        },
                    );
                }
                let s = slack(dv, mu);
                let (first, first_lb, second, second_lb) = if dv <= mu {
                    (inside, dv - mu, outside, mu - dv)
                } else {
                    (outside, mu - dv, inside, dv - mu)
                };
                if first_lb <= tau(heap) + s {
                    self.knn_visit(points, dim, q, exclude, first, heap, offer, tau);
                }
                if second_lb <= tau(heap) + s {
                    self.knn_visit(points, dim, q, exclude, second, heap, offer, tau);
                }
            }
        }
    }
}
