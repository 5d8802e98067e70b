use std::collections::HashMap;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Integer voxel coordinate of a point: `floor(p / voxel_size)` per axis.
pub fn voxel_coord(p: [f32; 3], voxel_size: f64) -> [i32; 3] {
    p.map(|v| (v as f64 / voxel_size).floor() as i32)
}

/// Occupied voxels of a cloud and the voxel of every point. Voxels are
/// numbered in order of first occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelLayout {
    pub voxel_size: f64,
    pub coords: Vec<[i32; 3]>,
    pub point_to_voxel: Vec<u32>,
}

impl VoxelLayout {
    pub fn new(points: &[[f32; 3]], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
        }
        let mut index: HashMap<[i32; 3], u32> = HashMap::new();
        let mut coords = Vec::new();
        let point_to_voxel = points
            .iter()
            .map(|p| {
                let c = voxel_coord(*p, voxel_size);
                *index.entry(c).or_insert_with(|| {
                    coords.push(c);
                    (coords.len() - 1) as u32
                })
            })
            .collect();
        Ok(Self {
            voxel_size,
            coords,
            point_to_voxel,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.len()];
        for v in &self.point_to_voxel {
            c[*v as usize] += 1;
        }
        c
    }
}

/// Sparse grid with one feature row per occupied voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelGrid<T> {
    pub layout: VoxelLayout,
    /// `[voxels, C]`.
    pub features: Tensor<T>,
}

/// Groups points into voxels; each voxel feature is the mean of its
/// members' rows of `features` (`[N, C]`).
pub fn voxelize<T: Real>(points: &[[f32; 3]], features: &Tensor<T>, voxel_size: f64) -> Result<SparseVoxelGrid<T>> {
    let (n, c) = features.dims2()?;
    if n != points.len() {
        return Err(Error::Shape(format!("{} feature rows for {} points", n, points.len())));
    }
    let layout = VoxelLayout::new(points, voxel_size)?;
    let counts = layout.counts();
    let mut out = vec![T::zero(); layout.len() * c];
    for (i, v) in layout.point_to_voxel.iter().enumerate() {
        let v = *v as usize;
        let inv = T::one() / T::lit(counts[v] as f64);
        for k in 0..c {
            out[v * c + k] += features.data()[i * c + k] * inv;
        }
    }
    let features = Tensor::new(vec![layout.len(), c], out)?;
    Ok(SparseVoxelGrid { layout, features })
}

/// Per-point rows taken from their voxel: `[N, C]`.
pub fn devoxelize<T: Real>(grid: &SparseVoxelGrid<T>) -> Tensor<T> {
    let c = grid.features.shape()[1];
    let mut out = Vec::with_capacity(grid.layout.point_to_voxel.len() * c);
    for v in &grid.layout.point_to_voxel {
        let v = *v as usize;
        out.extend_from_slice(&grid.features.data()[v * c..(v + 1) * c]);
    }
    Tensor::new(vec![grid.layout.point_to_voxel.len(), c], out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_voxel_averages_features() {
        let pts = [[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [1.0, 0.0, 0.0]];
        let f = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 6.0, 5.0, 5.0]).unwrap();
        let g = voxelize(&pts, &f, 0.5).unwrap();
        assert_eq!(g.layout.coords, vec![[0, 0, 0], [2, 0, 0]]);
        assert_eq!(g.features.data(), &[2.0, 4.0, 5.0, 5.0]);
        assert_eq!(devoxelize(&g).data(), &[2.0, 4.0, 2.0, 4.0, 5.0, 5.0]);
    }

    #[test]
    fn single_point_and_negative_coords() {
        let g = voxelize(
            &[[-0.1, -0.3, 0.0]],
            &Tensor::new(vec![1, 1], vec![7.0f64]).unwrap(),
            0.25,
        )
        .unwrap();
        assert_eq!(g.layout.coords, vec![[-1, -2, 0]]);
        assert_eq!(g.features.data(), &[7.0]);
    }

    #[test]
    fn bad_voxel_size_rejected() {
        assert!(VoxelLayout::new(&[[0.0; 3]], 0.0).is_err());
        assert!(VoxelLayout::new(&[[0.0; 3]], -1.0).is_err());
    }
}
