use serde::{Deserialize, Serialize};

/// Dense node-major container with one value per (node, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid<T> {
    nodes: usize,
    horizons: usize,
    cells: Vec<T>,
}

impl<T: Clone + Default> CellGrid<T> {
    pub fn new(nodes: usize, horizons: usize) -> Self {
        Self {
            nodes,
            horizons,
            cells: vec![T::default(); nodes * horizons],
        }
    }
}

impl<T> CellGrid<T> {
    pub fn from_fn(nodes: usize, horizons: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let cells = (0..nodes * horizons)
            .map(|k| f(k / horizons, k % horizons))
            .collect();
        Self {
            nodes,
            horizons,
            cells,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn horizons(&self) -> usize {
        self.horizons
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, node: usize, horizon: usize) -> usize {
        debug_assert!(node < self.nodes && horizon < self.horizons);
        node * self.horizons + horizon
    }

    pub fn get(&self, node: usize, horizon: usize) -> &T {
        &self.cells[self.index(node, horizon)]
    }

    pub fn get_mut(&mut self, node: usize, horizon: usize) -> &mut T {
        let idx = self.index(node, horizon);
        &mut self.cells[idx]
    }

    /// Cells in node-major order.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.cells.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.cells.iter_mut()
    }

    /// `((node, horizon), cell)` pairs in node-major order.
    pub fn indexed(&self) -> impl Iterator<Item = ((usize, usize), &T)> {
        let h = self.horizons;
        self.cells.iter().enumerate().map(move |(k, c)| ((k / h, k % h), c))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> CellGrid<U> {
        CellGrid {
            nodes: self.nodes,
            horizons: self.horizons,
            cells: self.cells.iter().map(f).collect(),
        }
    }

    pub fn into_cells(self) -> Vec<T> {
        self.cells
    }
}
