//! Static R-tree over bounding boxes, bulk-loaded with sort-tile-recursive
//! packing. Built once, queried by point.

use alloc::vec::Vec;

use super::polygon::BBox;

const NODE_CAPACITY: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    bbox: BBox,
    /// Item indices for leaves, node indices otherwise.
    children: Vec<usize>,
    leaf: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BBoxIndex {
    nodes: Vec<Node>,
    root: Option<usize>,
    item_boxes: Vec<BBox>,
}

impl BBoxIndex {
    /// Indexes `boxes`; query results refer to positions in this slice.
    pub fn build(boxes: &[BBox]) -> Self {
        let mut index = BBoxIndex { nodes: Vec::new(), root: None, item_boxes: boxes.to_vec() };
        if boxes.is_empty() {
            return index;
        }
        let items: Vec<(usize, BBox)> = boxes.iter().copied().enumerate().collect();
        let mut level = index.pack(items, true);
        while level.len() > 1 {
            let parents: Vec<(usize, BBox)> = level.iter().map(|&n| (n, index.nodes[n].bbox)).collect();
            level = index.pack(parents, false);
        }
        index.root = level.first().copied();
        index
    }

    fn pack(&mut self, mut entries: Vec<(usize, BBox)>, leaf: bool) -> Vec<usize> {
        let n = entries.len();
        let node_count = n.div_ceil(NODE_CAPACITY);
        let slices = integer_sqrt_ceil(node_count).max(1);
        let per_slice = slices * NODE_CAPACITY;

        entries.sort_by(|a, b| a.1.center()[0].total_cmp(&b.1.center()[0]).then(a.0.cmp(&b.0)));
        let mut created = Vec::with_capacity(node_count);
        for slice in entries.chunks_mut(per_slice) {
            slice.sort_by(|a, b| a.1.center()[1].total_cmp(&b.1.center()[1]).then(a.0.cmp(&b.0)));
            for group in slice.chunks(NODE_CAPACITY) {
                let bbox = group.iter().fold(BBox::EMPTY, |acc, e| acc.union(e.1));
                self.nodes.push(Node { bbox, children: group.iter().map(|e| e.0).collect(), leaf });
                created.push(self.nodes.len() - 1);
            }
        }
        created
    }

    pub fn len(&self) -> usize {
        self.item_boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_boxes.is_empty()
    }

    /// Indices of every box containing `(x, y)`, ascending.
    pub fn query_point(&self, x: f64, y: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let Some(root) = self.root else { return out };
        let mut stack = Vec::from([root]);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bbox.contains(x, y) {
                continue;
            }
            if node.leaf {
                out.extend(node.children.iter().copied().filter(|&i| self.item_boxes[i].contains(x, y)));
            } else {
                stack.extend(node.children.iter().copied());
            }
        }
        out.sort_unstable();
        out
    }
}

fn integer_sqrt_ceil(n: usize) -> usize {
    let mut r = 0usize;
    while r * r < n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_index() {
        let idx = BBoxIndex::build(&[]);
        assert!(idx.query_point(0.0, 0.0).is_empty());
        assert!(idx.is_empty());
    }

    #[test]
    fn nested_and_disjoint_boxes() {
        let boxes = vec![
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(2.0, 2.0, 3.0, 3.0),
            BBox::new(20.0, 20.0, 21.0, 21.0),
        ];
        let idx = BBoxIndex::build(&boxes);
        assert_eq!(idx.query_point(2.5, 2.5), vec![0, 1]);
        assert_eq!(idx.query_point(5.0, 5.0), vec![0]);
        assert_eq!(idx.query_point(20.5, 20.0), vec![2]);
        assert!(idx.query_point(15.0, 15.0).is_empty());
    }

    #[test]
    fn grid_of_many_boxes() {
        let mut boxes = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let (x, y) = (i as f64, j as f64);
                boxes.push(BBox::new(x, y, x + 1.5, y + 1.5));
            }
        }
        let idx = BBoxIndex::build(&boxes);
        for &(x, y) in &[(0.2, 0.2), (10.7, 3.3), (39.9, 39.9), (41.0, 41.0), (-1.0, 5.0)] {
            let brute: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].contains(x, y)).collect();
            assert_eq!(idx.query_point(x, y), brute);
        }
    }
}
