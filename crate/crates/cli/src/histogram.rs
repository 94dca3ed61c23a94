//! Color histograms on a uniform grid over the rescaled Lab cube.

use uot::DiscreteSpace;

use crate::color::{lab_to_unit, srgb_to_lab};
use crate::error::{CliError, Result};
use crate::ppm::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct LabHistogram {
    /// Bins along L, a and b.
    pub resolution: [usize; 3],
    /// Pixel count per bin, row-major with L slowest.
    pub masses: Vec<f64>,
}

pub fn check_resolution(resolution: [usize; 3]) -> Result<()> {
    if resolution.contains(&0) {
        return Err(CliError::config("histogram resolution must be positive"));
    }
    Ok(())
}

/// Bin centers `(k + 1/2)/n` of one axis.
pub fn axis_centers(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

/// Row-major bin of a point of the unit cube; points outside are clamped.
pub fn bin_of(unit: [f64; 3], resolution: [usize; 3]) -> usize {
    let mut index = 0;
    for (u, &n) in unit.iter().zip(&resolution) {
        let k = ((u * n as f64).floor().max(0.0) as usize).min(n - 1);
        index = index * n + k;
    }
    index
}

/// Bin of every pixel.
pub fn pixel_bins(image: &Image, resolution: [usize; 3]) -> Result<Vec<usize>> {
    check_resolution(resolution)?;
    Ok(image.pixels.iter().map(|&p| bin_of(lab_to_unit(srgb_to_lab(p)), resolution)).collect())
}

impl LabHistogram {
    pub fn from_image(image: &Image, resolution: [usize; 3]) -> Result<Self> {
        let bins = pixel_bins(image, resolution)?;
        let mut masses = vec![0.0; resolution.iter().product()];
        for b in bins {
            masses[b] += 1.0;
        }
        Ok(Self { resolution, masses })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn axes(&self) -> Vec<Vec<f64>> {
        self.resolution.iter().map(|&n| axis_centers(n)).collect()
    }

    /// Bin centers in the unit cube, in bin order.
    pub fn centers(&self) -> Vec<[f64; 3]> {
        let axes = self.axes();
        let [_, na, nb] = self.resolution;
        (0..self.len())
            .map(|i| [axes[0][i / (na * nb)], axes[1][(i / nb) % na], axes[2][i % nb]])
            .collect()
    }

    /// The grid of bin centers, each carrying unit weight.
    pub fn space(&self) -> Result<DiscreteSpace> {
        DiscreteSpace::grid(self.axes(), vec![1.0; self.len()]).map_err(crate::config::invalid)
    }
}
