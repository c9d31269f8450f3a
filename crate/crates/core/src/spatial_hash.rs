//! Uniform-grid spatial hash over 3D points, used for radius queries.

use std::collections::HashMap;

use nalgebra::Point3;

pub type CellKey = [i64; 3];

/// Maps cells of edge `cell_size` to the ids of the points inside them.
/// Every inserted id lives in exactly one cell.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell_size: f64,
    cells: HashMap<CellKey, Vec<usize>>,
    len: usize,
}

impl SpatialHash {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size.is_finite() && cell_size > 0.0, "cell size must be positive");
        Self {
            cell_size,
            cells: HashMap::new(),
            len: 0,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    fn coord(&self, v: f64) -> i64 {
        // saturating float->int cast keeps far-away points in edge cells
        (v / self.cell_size).floor() as i64
    }

    pub fn key(&self, p: &Point3<f64>) -> CellKey {
        [self.coord(p.x), self.coord(p.y), self.coord(p.z)]
    }

    pub fn insert(&mut self, id: usize, p: &Point3<f64>) {
        self.cells.entry(self.key(p)).or_default().push(id);
        self.len += 1;
    }

    /// Removes `id`, which must have been inserted at `p`. Returns whether it
    /// was found.
    pub fn remove(&mut self, id: usize, p: &Point3<f64>) -> bool {
        let key = self.key(p);
        let Some(bucket) = self.cells.get_mut(&key) else {
            return false;
        };
        let Some(pos) = bucket.iter().position(|&i| i == id) else {
            return false;
        };
        bucket.swap_remove(pos);
        if bucket.is_empty() {
            self.cells.remove(&key);
        }
        self.len -= 1;
        true
    }

    /// Re-files `id` after its point moved from `from` to `to`.
    pub fn relocate(&mut self, id: usize, from: &Point3<f64>, to: &Point3<f64>) {
        if self.key(from) != self.key(to) && self.remove(id, from) {
            self.insert(id, to);
        }
    }

    /// Ids stored in exactly the cell `key`.
    pub fn cell(&self, key: &CellKey) -> &[usize] {
        self.cells.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ids in every cell that can hold a point within `radius` of `q`. When
    /// `radius` equals the cell size this is the 27-cell neighborhood.
    pub fn candidates<'a>(&'a self, q: &Point3<f64>, radius: f64) -> impl Iterator<Item = usize> + 'a {
        let slack = 1e-9 * (radius + q.coords.abs().max());
        let lo = [0, 1, 2].map(|a| self.coord(q[a] - radius - slack));
        let hi = [0, 1, 2].map(|a| self.coord(q[a] + radius + slack));
        (lo[0]..=hi[0]).flat_map(move |x| {
            (lo[1]..=hi[1]).flat_map(move |y| (lo[2]..=hi[2]).flat_map(move |z| self.cell(&[x, y, z]).iter().copied()))
        })
    }

    pub fn clear(&mut self) {
        self.cells.clear();
        self.len = 0;
    }
}
