use serde::{Deserialize, Serialize};

use super::AttributionError;
use crate::volume::{ClassMask, Dims, LogitField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Semantic,
    Cubes,
}

/// Voxel → region labels; every region id in `0..num_regions` is used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervoxelPartition {
    pub dims: Dims,
    pub labels: Vec<usize>,
    pub num_regions: usize,
    pub scheme: PartitionScheme,
    /// For semantic partitions, the class id behind each region.
    pub region_classes: Vec<usize>,
}

impl SupervoxelPartition {
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_regions];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn region_mask(&self, region: usize) -> ClassMask {
        ClassMask::from_bools(self.dims, self.labels.iter().map(|&l| l == region)).expect("labels cover the grid")
    }

    /// Spreads one value per region onto that region's voxels.
    pub fn broadcast(&self, values: &[f64]) -> Vec<f64> {
        self.labels.iter().map(|&l| values[l]).collect()
    }
}

/// Tiles the grid with `cube_edge`-sized cubes in x-fastest cube order.
/// Cubes on the far boundary are truncated when an extent is not a multiple
/// of the edge; they remain separate regions.
pub fn partition_cubes(dims: Dims, cube_edge: usize) -> Result<SupervoxelPartition, AttributionError> {
    if cube_edge == 0 {
        return Err(AttributionError::InvalidParam("cube_edge must be >= 1".into()));
    }
    let counts = dims.0.map(|n| n.div_ceil(cube_edge));
    let labels = (0..dims.len())
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            x / cube_edge + counts[0] * (y / cube_edge + counts[1] * (z / cube_edge))
        })
        .collect();
    Ok(SupervoxelPartition {
        dims,
        labels,
        num_regions: counts.iter().product(),
        scheme: PartitionScheme::Cubes,
        region_classes: Vec::new(),
    })
}

/// Regions are the predicted classes; classes absent from the prediction are
/// dropped and the rest renumbered in ascending class order.
pub fn partition_semantic(logits: &LogitField) -> SupervoxelPartition {
    let classes = logits.argmax_labels();
    let mut present = vec![false; logits.num_classes()];
    for &c in &classes {
        present[c] = true;
    }
    let region_classes: Vec<usize> = (0..present.len()).filter(|&c| present[c]).collect();
    let mut region_of = vec![usize::MAX; present.len()];
    for (region, &class) in region_classes.iter().enumerate() {
        region_of[class] = region;
    }
    SupervoxelPartition {
        dims: logits.dims(),
        labels: classes.iter().map(|&c| region_of[c]).collect(),
        num_regions: region_classes.len(),
        scheme: PartitionScheme::Semantic,
        region_classes,
    }
}
