//! Color transfer between two images by unbalanced transport of their Lab
//! histograms followed by the barycentric projection of the plan.

use uot::geometry::{build_cost_quadratic, gibbs_kernel};
use uot::{solve_plain, DivergenceKind, DivergenceSpec, Plan, ScalingOptions};

use crate::color::{lab_to_srgb, unit_to_lab};
use crate::error::{CliError, Result};
use crate::histogram::{pixel_bins, LabHistogram};
use crate::ppm::Image;

/// `T_i = Σ_j R_ij y_j / Σ_j R_ij` for each source bin; `None` where row `i`
/// carries no mass.
pub fn barycentric_map(plan: &Plan, targets: &[[f64; 3]]) -> Result<Vec<Option<[f64; 3]>>> {
    let components: Vec<Vec<f64>> = (0..3).map(|c| targets.iter().map(|y| y[c]).collect()).collect();
    let means = plan.conditional_means(&components).map_err(crate::config::invalid)?;
    Ok(means.into_iter().map(|m| m.map(|v| [v[0], v[1], v[2]])).collect())
}

/// Replaces each pixel by the color `T` assigns to its bin (coordinates in
/// the unit Lab cube). Pixels of bins mapped to `None` are kept as they are.
pub fn apply_color_map(image: &Image, resolution: [usize; 3], map: &[Option<[f64; 3]>]) -> Result<Image> {
    let bins = pixel_bins(image, resolution)?;
    let expected: usize = resolution.iter().product();
    if map.len() != expected {
        return Err(CliError::config(format!("color map has {} bins, expected {expected}", map.len())));
    }
    let pixels = image
        .pixels
        .iter()
        .zip(bins)
        .map(|(&p, b)| map[b].map_or(p, |t| lab_to_srgb(unit_to_lab(t))))
        .collect();
    Image::new(image.width, image.height, pixels)
}

#[derive(Debug, Clone)]
pub struct Transfer {
    pub image: Image,
    pub source: LabHistogram,
    pub target: LabHistogram,
    pub map: Vec<Option<[f64; 3]>>,
    pub iterations: usize,
    pub converged: bool,
    /// Source-weighted mean of `|T_i - x_i|` in Lab units.
    pub mean_displacement: f64,
}

/// Transports the normalized histogram of `source` onto that of `target`:
/// first marginal pinned, second penalized by `second`. Plain iterations
/// with the separable kernel of the bin grid.
pub fn color_transfer(
    source: &Image,
    target: &Image,
    resolution: [usize; 3],
    second: DivergenceKind,
    epsilon: f64,
    options: ScalingOptions,
) -> Result<Transfer> {
    let hx = LabHistogram::from_image(source, resolution)?;
    let hy = LabHistogram::from_image(target, resolution)?;
    let x = hx.space()?;
    let y = hy.space()?;
    let normalize = |h: &LabHistogram| {
        let t = h.total();
        h.masses.iter().map(|m| m / t).collect::<Vec<_>>()
    };
    let f1 = DivergenceSpec::equality(normalize(&hx)).map_err(crate::config::invalid)?;
    let f2 = DivergenceSpec::new(second, normalize(&hy)).map_err(crate::config::invalid)?;
    let cost = build_cost_quadratic(&x, &y).map_err(crate::config::invalid)?;
    let kernel = gibbs_kernel(&cost, epsilon).map_err(crate::config::invalid)?;
    let report = solve_plain(&f1, &f2, &kernel, &x, &y, epsilon, options)?;
    let centers = hx.centers();
    let map = barycentric_map(&report.plan, &hy.centers())?;
    let mut moved = 0.0;
    for ((t, c), w) in map.iter().zip(&centers).zip(&f1.reference) {
        if let Some(t) = t {
            let (a, b) = (unit_to_lab(*t), unit_to_lab(*c));
            moved += w * (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
        }
    }
    let image = apply_color_map(source, resolution, &map)?;
    Ok(Transfer {
        image,
        source: hx,
        target: hy,
        map,
        iterations: report.iterations,
        converged: report.converged,
        mean_displacement: moved,
    })
}
