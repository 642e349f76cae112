//! Noisy linear imputation.
//!
//! Each masked pixel is replaced, per channel, by the value that makes it the
//! mean of its 4-connected neighbors. Masked neighbors are unknowns, unmasked
//! ones are constants, and border pixels average over the neighbors they have.
//! Gaussian noise is added to every masked sample after solving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::solver::{conjugate_gradient, BandedCholesky, NeighborSystem};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::map::PixelIndex;
use crate::seed::normal_at;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig {
    /// Standard deviation of the additive noise, in normalized pixel units.
    pub noise_sigma: f64,
    /// Largest accepted equation residual, in pixel units.
    pub tolerance: f64,
    /// Iteration cap for the iterative solver; `None` means `10 * H * W`.
    pub max_iterations: Option<usize>,
    /// Components with fewer unknowns than this are solved directly.
    pub direct_threshold: usize,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            tolerance: 1e-6,
            max_iterations: None,
            direct_threshold: 1000,
        }
    }
}

impl ImputationConfig {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "solver tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

fn neighbors(flat: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (flat / width, flat % width);
    let up = (r > 0).then(|| flat - width);
    let down = (r + 1 < height).then(|| flat + width);
    let left = (c > 0).then(|| flat - 1);
    let right = (c + 1 < width).then(|| flat + 1);
    [up, left, right, down].into_iter().flatten()
}

/// Groups masked pixels into 4-connected components, each sorted row-major.
fn components(masked: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; masked.len()];
    let mut out = Vec::new();
    for start in 0..masked.len() {
        if !masked[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(p) = stack.pop() {
            comp.push(p);
            for q in neighbors(p, height, width) {
                if masked[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Replaces the masked pixels of `image` by noisy neighbor-mean imputation.
///
/// Unmasked samples are copied bit-for-bit. Noise for a given pixel and
/// channel depends only on `seed`, not on the rest of the mask.
pub fn impute(
    image: &ImageTensor,
    mask: &[PixelIndex],
    config: &ImputationConfig,
    seed: u64,
) -> Result<ImageTensor> {
    config.validate()?;
    let (height, width) = image.spatial_dims();
    let total = height * width;
    let mut masked = vec![false; total];
    for p in mask {
        if p.row >= height || p.col >= width {
            return Err(Error::PixelOutOfRange {
                row: p.row,
                col: p.col,
                height,
                width,
            });
        }
        masked[p.flat(width)] = true;
    }
    impute_flat(image, &masked, config, seed)
}

pub(crate) fn impute_flat(
    image: &ImageTensor,
    masked: &[bool],
    config: &ImputationConfig,
    seed: u64,
) -> Result<ImageTensor> {
    let (height, width) = image.spatial_dims();
    let total = height * width;
    let count = masked.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(image.clone());
    }
    if count == total {
        return Err(Error::AllPixelsMasked);
    }
    let max_iterations = config.max_iterations.unwrap_or(10 * total);
    let mut out = image.clone();
    let mut local = vec![usize::MAX; total];

    for comp in components(masked, height, width) {
        for (i, &p) in comp.iter().enumerate() {
            local[p] = i;
        }
        let mut degree = Vec::with_capacity(comp.len());
        let mut links = Vec::with_capacity(comp.len());
        let mut anchors = Vec::with_capacity(comp.len());
        for &p in &comp {
            let mut d = 0.0;
            let mut l = Vec::with_capacity(4);
            let mut a = Vec::with_capacity(4);
            for q in neighbors(p, height, width) {
                d += 1.0;
                if masked[q] {
                    l.push(local[q]);
                } else {
                    a.push(q);
                }
            }
            degree.push(d);
            links.push(l);
            anchors.push(a);
        }
        let system = NeighborSystem { degree, links };
        let direct = if comp.len() < config.direct_threshold {
            Some(BandedCholesky::factor(&system)?)
        } else {
            None
        };
        for channel in 0..image.channels() {
            let plane = image.plane(channel);
            let rhs: Vec<f64> = anchors
                .iter()
                .map(|a| a.iter().map(|&q| f64::from(plane[q])).sum())
                .collect();
            let solution = match &direct {
                Some(factor) => factor.solve(&rhs),
                None => conjugate_gradient(&system, &rhs, config.tolerance, max_iterations)?,
            };
            let target = out.plane_mut(channel);
            for (&p, v) in comp.iter().zip(solution) {
                target[p] = v as f32;
            }
        }
    }

    if config.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for channel in 0..image.channels() {
            let target = out.plane_mut(channel);
            for (p, _) in masked.iter().enumerate().filter(|(_, &m)| m) {
                let noise = config.noise_sigma * normal_at(&mut rng, channel as u64, p as u64);
                target[p] = (f64::from(target[p]) + noise) as f32;
            }
        }
    }
    Ok(out)
}
