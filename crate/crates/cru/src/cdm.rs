//! Command distribution module: per-command gridded probability maps over
//! the airspace, built by filtering a small set of coordinate-command pairs.
//! Select mode averages the maps of the predicted commands; naive mode (no
//! prediction available) averages all six.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::region::RegionModel;
use crate::corpus::{CommandLabelSet, CommandType, SurveillanceScene, AIRSPACE_HALF_XY, AIRSPACE_Z_MAX};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum CdmError {
    #[error("cannot predict over an empty scene")]
    EmptyScene,
    #[error("map for {0:?} missing")]
    MissingMap(CommandType),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Gaussian,
    Binary,
    Maximum,
    Uniform,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] =
        [FilterKind::Gaussian, FilterKind::Binary, FilterKind::Maximum, FilterKind::Uniform];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Gaussian => "gaussian",
            FilterKind::Binary => "binary",
            FilterKind::Maximum => "maximum",
            FilterKind::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub sigma_xy: f64,
    pub sigma_z: f64,
    pub radius_xy: f64,
    pub radius_z: f64,
}

impl FilterConfig {
    pub fn new(kind: FilterKind) -> Self {
        FilterConfig { kind, sigma_xy: 8_000.0, sigma_z: 800.0, radius_xy: 10_000.0, radius_z: 1_000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridDims {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl GridDims {
    pub fn name(&self) -> &'static str {
        match self {
            GridDims::TwoD => "2d",
            GridDims::ThreeD => "3d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "2d" => Some(GridDims::TwoD),
            "3d" => Some(GridDims::ThreeD),
            _ => None,
        }
    }
}

pub const GRID_NX: usize = 64;
pub const GRID_NY: usize = 64;
pub const GRID_NZ: usize = 16;

/// Cell geometry covering exactly the airspace box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub cell_x: f64,
    pub cell_y: f64,
    pub cell_z: f64,
}

impl Grid {
    pub fn new(dims: GridDims) -> Self {
        let nz = match dims {
            GridDims::TwoD => 1,
            GridDims::ThreeD => GRID_NZ,
        };
        Grid {
            nx: GRID_NX,
            ny: GRID_NY,
            nz,
            cell_x: 2.0 * AIRSPACE_HALF_XY / GRID_NX as f64,
            cell_y: 2.0 * AIRSPACE_HALF_XY / GRID_NY as f64,
            cell_z: AIRSPACE_Z_MAX / nz as f64,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    fn center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            -AIRSPACE_HALF_XY + (ix as f64 + 0.5) * self.cell_x,
            -AIRSPACE_HALF_XY + (iy as f64 + 0.5) * self.cell_y,
            (iz as f64 + 0.5) * self.cell_z,
        ]
    }

    /// Nearest cell for a point; coordinates outside the box clamp to the
    /// border cells.
    pub fn cell_index(&self, p: [f64; 3]) -> usize {
        let clamp = |v: f64, offset: f64, cell: f64, n: usize| -> usize {
            (((v + offset) / cell).floor().max(0.0) as usize).min(n - 1)
        };
        let ix = clamp(p[0], AIRSPACE_HALF_XY, self.cell_x, self.nx);
        let iy = clamp(p[1], AIRSPACE_HALF_XY, self.cell_y, self.ny);
        let iz = clamp(p[2], 0.0, self.cell_z, self.nz);
        (iz * self.ny + iy) * self.nx + ix
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionMap {
    pub command: CommandType,
    pub values: Vec<f64>,
    pub sample_count: usize,
}

/// Scaled distance-squared between a cell center and a training point.
/// 2D mode ignores altitude.
fn scaled_dist_sq(center: [f64; 3], point: [f64; 3], sx: f64, sz: f64, dims: GridDims) -> f64 {
    let dx = (center[0] - point[0]) / sx;
    let dy = (center[1] - point[1]) / sx;
    let mut d = dx * dx + dy * dy;
    if dims == GridDims::ThreeD {
        let dz = (center[2] - point[2]) / sz;
        d += dz * dz;
    }
    d
}

/// Filter the coordinate-command pairs of one command into a grid, then
/// normalize the peak to 1 (all-zero grids stay zero).
pub fn build_map(
    pairs: &[[f64; 3]],
    command: CommandType,
    filter: &FilterConfig,
    dims: GridDims,
) -> DistributionMap {
    let grid = Grid::new(dims);
    let values: Vec<f64> = (0..grid.cell_count())
        .into_par_iter()
        .map(|cell| {
            let iz = cell / (grid.nx * grid.ny);
            let iy = (cell / grid.nx) % grid.ny;
            let ix = cell % grid.nx;
            let center = grid.center(ix, iy, iz);
            match filter.kind {
                FilterKind::Gaussian => pairs
                    .iter()
                    .map(|p| {
                        (-scaled_dist_sq(center, *p, filter.sigma_xy, filter.sigma_z, dims) / 2.0)
                            .exp()
                    })
                    .sum(),
                FilterKind::Maximum => pairs
                    .iter()
                    .map(|p| {
                        (-scaled_dist_sq(center, *p, filter.sigma_xy, filter.sigma_z, dims) / 2.0)
                            .exp()
                    })
                    .fold(0.0, f64::max),
                FilterKind::Binary => {
                    let hit = pairs.iter().any(|p| {
                        scaled_dist_sq(center, *p, filter.radius_xy, filter.radius_z, dims) <= 1.0
                    });
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                }
                FilterKind::Uniform => pairs
                    .iter()
                    .filter(|p| {
                        scaled_dist_sq(center, **p, filter.radius_xy, filter.radius_z, dims) <= 1.0
                    })
                    .count() as f64,
            }
        })
        .collect();
    let mut map = DistributionMap { command, values, sample_count: pairs.len() };
    normalize_peak(&mut map.values);
    map
}

fn normalize_peak(values: &mut [f64]) {
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdm {
    pub format_version: u32,
    pub dims: GridDims,
    pub filter: FilterConfig,
    pub grid: Grid,
    pub maps: BTreeMap<CommandType, DistributionMap>,
}

/// Draw `pairs_per_command` coordinate-command pairs per command type from
/// the region model and build all six maps.
pub fn build_cdm(
    region: &RegionModel,
    pairs_per_command: usize,
    filter: &FilterConfig,
    dims: GridDims,
    seed: u64,
) -> Cdm {
    let maps = CommandType::ALL
        .into_iter()
        .map(|cmd| {
            let pairs = sample_pairs(region, cmd, pairs_per_command, seed);
            (cmd, build_map(&pairs, cmd, filter, dims))
        })
        .collect();
    Cdm { format_version: 1, dims, filter: *filter, grid: Grid::new(dims), maps }
}

/// Coordinate-command pairs for one command, drawn from its spatial mixture.
pub fn sample_pairs(
    region: &RegionModel,
    command: CommandType,
    count: usize,
    seed: u64,
) -> Vec<[f64; 3]> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xCD40 + command.index() as u64));
    let set: CommandLabelSet = [command].into_iter().collect();
    (0..count).map(|_| region.sample_position(&set, &mut rng)).collect()
}

impl Cdm {
    /// Distribution score for a position: mean over the predicted commands'
    /// maps (select), or over all six when the prediction is empty (naive).
    pub fn query_dis(&self, position: [f64; 3], predicted: &CommandLabelSet) -> f64 {
        let cell = self.grid.cell_index(position);
        let commands: Vec<CommandType> = if predicted.is_empty() {
            CommandType::ALL.to_vec()
        } else {
            predicted.iter().copied().collect()
        };
        let sum: f64 = commands.iter().map(|c| self.maps[c].values[cell]).sum();
        sum / commands.len() as f64
    }

    /// Call-sign prediction from coordinates alone: the plane with the
    /// highest distribution score (ties break toward the lower index).
    pub fn predict(
        &self,
        scene: &SurveillanceScene,
        predicted: &CommandLabelSet,
    ) -> Result<String, CdmError> {
        if scene.is_empty() {
            return Err(CdmError::EmptyScene);
        }
        let mut best = 0;
        let mut best_dis = f64::NEG_INFINITY;
        for (i, plane) in scene.planes.iter().enumerate() {
            let dis = self.query_dis(plane.position(), predicted);
            if dis > best_dis {
                best = i;
                best_dis = dis;
            }
        }
        Ok(scene.planes[best].callsign.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), CdmError> {
        let json = serde_json::to_string(self).map_err(|e| CdmError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CdmError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CdmError::Checkpoint(e.to_string()))
    }
}
