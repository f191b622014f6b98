use crate::geom::{self, Vec3};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: usize,
    right: usize,
}

/// Static 3D k-d tree for nearest-neighbor queries. Equidistant candidates
/// resolve to the lowest point index, matching a linear scan.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build(points, &mut order, &mut nodes);
        KdTree {
            points: points.to_vec(),
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of and squared distance to the nearest point.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.root == NONE {
            return None;
        }
        let mut best = (NONE, f64::INFINITY);
        self.search(self.root, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: Vec3, best: &mut (usize, f64)) {
        let n = self.nodes[node];
        let p = self.points[n.point];
        let d = geom::dist2(p, q);
        if d < best.1 || (d == best.1 && n.point < best.0) {
            *best = (n.point, d);
        }
        let delta = q[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NONE {
            self.search(near, q, best);
        }
        if far != NONE && delta * delta <= best.1 {
            self.search(far, q, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], nodes: &mut Vec<Node>) -> usize {
    if order.is_empty() {
        return NONE;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let id = nodes.len();
    nodes.push(Node {
        point: order[mid],
        axis,
        left: NONE,
        right: NONE,
    });
    let (left, rest) = order.split_at_mut(mid);
    let left = build(points, left, nodes);
    let right = build(points, &mut rest[1..], nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest([0.0; 3]).is_none());
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest([0.0; 3]), Some((0, 1.0)));
        assert_eq!(t.nearest([2.0, 0.0, 0.0]), Some((0, 1.0)));
    }
}
