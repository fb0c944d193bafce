//! Grid-space embedding of a turbine registry.
//!
//! Rows are the registry's unique latitudes in increasing order, columns its
//! unique longitudes in increasing order, and each turbine sits at the cell
//! of its own (latitude, longitude). The grid is therefore the smallest one
//! that keeps every turbine in a distinct cell while preserving the
//! north-south and east-west ordering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TurbineRegistry;

/// Cell value for grid positions without a turbine.
pub const EMPTY: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridJson", into = "GridJson")]
pub struct GridMap {
    height: usize,
    width: usize,
    /// Row-major `height × width`, turbine id or [`EMPTY`].
    cells: Vec<i64>,
    row_coords: Vec<f64>,
    col_coords: Vec<f64>,
    /// `positions[id] = (row, col)`.
    positions: Vec<(usize, usize)>,
}

impl GridMap {
    /// Embeds every turbine of `registry`.
    pub fn embed(registry: &TurbineRegistry) -> Result<Self> {
        let row_coords = sorted_unique(registry.turbines().iter().map(|t| t.latitude));
        let col_coords = sorted_unique(registry.turbines().iter().map(|t| t.longitude));
        let (height, width) = (row_coords.len(), col_coords.len());

        let mut cells = vec![EMPTY; height * width];
        let mut positions = Vec::with_capacity(registry.len());
        for t in registry.turbines() {
            // Membership is guaranteed: both coordinate lists were built from
            // these very values.
            let row = index_of(&row_coords, t.latitude);
            let col = index_of(&col_coords, t.longitude);
            let slot = &mut cells[row * width + col];
            if *slot != EMPTY {
                return Err(Error::CellCollision {
                    first: *slot as usize,
                    second: t.id,
                    row,
                    col,
                });
            }
            *slot = t.id as i64;
            positions.push((row, col));
        }
        Ok(Self {
            height,
            width,
            cells,
            row_coords,
            col_coords,
            positions,
        })
    }

    /// Builds a grid from an explicit cell matrix (e.g. read from JSON).
    pub fn from_cells(
        cells: Vec<Vec<i64>>,
        row_coords: Vec<f64>,
        col_coords: Vec<f64>,
    ) -> Result<Self> {
        let height = cells.len();
        let width = cells.first().map_or(0, Vec::len);
        if height == 0 || width == 0 || cells.iter().any(|r| r.len() != width) {
            return Err(Error::shape("grid cells must be a non-empty rectangle"));
        }
        if row_coords.len() != height || col_coords.len() != width {
            return Err(Error::shape(format!(
                "grid is {height}×{width} but has {}×{} coordinates",
                row_coords.len(),
                col_coords.len()
            )));
        }
        let flat: Vec<i64> = cells.into_iter().flatten().collect();
        let n = flat.iter().filter(|&&c| c != EMPTY).count();
        let mut positions = vec![None; n];
        for (i, &id) in flat.iter().enumerate() {
            if id == EMPTY {
                continue;
            }
            if id < 0 || id as usize >= n {
                return Err(Error::shape(format!("cell id {id} outside 0..{n}")));
            }
            if positions[id as usize].replace((i / width, i % width)).is_some() {
                return Err(Error::shape(format!("turbine {id} appears twice")));
            }
        }
        Ok(Self {
            height,
            width,
            cells: flat,
            row_coords,
            col_coords,
            positions: positions.into_iter().map(|p| p.expect("bijective")).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_turbines(&self) -> usize {
        self.positions.len()
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, row: usize, col: usize) -> i64 {
        self.cells[row * self.width + col]
    }

    /// Row-major cell table.
    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        self.cells.chunks(self.width).map(<[i64]>::to_vec).collect()
    }

    pub fn row_coords(&self) -> &[f64] {
        &self.row_coords
    }

    pub fn col_coords(&self) -> &[f64] {
        &self.col_coords
    }

    /// Row-major occupancy mask, `true` where a turbine sits.
    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(|&c| c != EMPTY).collect()
    }

    /// Cell of a turbine.
    pub fn locate(&self, turbine_id: i64) -> Result<(usize, usize)> {
        usize::try_from(turbine_id)
            .ok()
            .and_then(|id| self.positions.get(id).copied())
            .ok_or(Error::UnknownTurbine(turbine_id))
    }

    /// Fraction of cells that hold a turbine.
    pub fn occupancy(&self) -> f64 {
        self.num_turbines() as f64 / self.num_cells() as f64
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

fn sorted_unique(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.map(|x| x + 0.0).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn index_of(sorted: &[f64], value: f64) -> usize {
    sorted
        .binary_search_by(|probe| probe.total_cmp(&(value + 0.0)))
        .expect("coordinate drawn from the same registry")
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    cells: Vec<Vec<i64>>,
    row_coords: Vec<f64>,
    col_coords: Vec<f64>,
}

impl From<GridMap> for GridJson {
    fn from(g: GridMap) -> Self {
        GridJson {
            cells: g.rows(),
            row_coords: g.row_coords,
            col_coords: g.col_coords,
        }
    }
}

impl TryFrom<GridJson> for GridMap {
    type Error = Error;

    fn try_from(j: GridJson) -> Result<Self> {
        GridMap::from_cells(j.cells, j.row_coords, j.col_coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> TurbineRegistry {
        TurbineRegistry::from_rows([(0, 10.0, 20.0), (1, 10.5, 20.0), (2, 10.0, 20.7)]).unwrap()
    }

    #[test]
    fn embeds_three_turbines() {
        let g = GridMap::embed(&three()).unwrap();
        assert_eq!(g.rows(), vec![vec![0, 2], vec![1, -1]]);
        assert_eq!(g.row_coords(), &[10.0, 10.5]);
        assert_eq!(g.col_coords(), &[20.0, 20.7]);
        assert_eq!(g.locate(2).unwrap(), (0, 1));
        assert_eq!(g.locate(0).unwrap(), (0, 0));
        assert!(matches!(g.locate(99), Err(Error::UnknownTurbine(99))));
        assert!(matches!(g.locate(-1), Err(Error::UnknownTurbine(-1))));
        assert_eq!(g.occupancy(), 0.75);
    }

    #[test]
    fn single_turbine() {
        let reg = TurbineRegistry::from_rows([(5, 41.4, 105.0)]).unwrap();
        let g = GridMap::embed(&reg).unwrap();
        assert_eq!(g.rows(), vec![vec![0]]);
        assert_eq!(g.occupancy(), 1.0);
    }

    #[test]
    fn shared_latitude_is_one_row() {
        let reg = TurbineRegistry::from_rows((0..6).map(|i| (i, 41.5, -105.0 + 0.01 * i as f64)))
            .unwrap();
        let g = GridMap::embed(&reg).unwrap();
        assert_eq!((g.height(), g.width()), (1, 6));
        assert!(g.cells().iter().all(|&c| c != EMPTY));
        assert_eq!(g.rows(), vec![vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn json_round_trip() {
        let g = GridMap::embed(&three()).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"cells\":[[0,2],[1,-1]]"));
        let back: GridMap = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn from_cells_rejects_repeats() {
        let r = GridMap::from_cells(vec![vec![0, 0]], vec![1.0], vec![1.0, 2.0]);
        assert!(r.is_err());
    }
}
