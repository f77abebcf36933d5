use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm, GmmConfig, GmmModel, Samples};
use super::SegvalError;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major intensities in `[0, 1]` with one or three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, SegvalError> {
        if width == 0 || height == 0 {
            return Err(SegvalError::InvalidInput("empty pixel grid".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(SegvalError::InvalidInput(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(SegvalError::InvalidInput(format!(
                "{} values for a {width}x{height}x{channels} grid",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SegvalError::InvalidInput(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, SegvalError> {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, 1, data)
    }

    /// Decode an image file into RGB intensities.
    pub fn load(path: &Path) -> Result<Self, SegvalError> {
        let img = image::open(path)
            .map_err(|e| SegvalError::Image {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(w as usize, h as usize, 3, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-pixel luminance; single-channel grids are returned as is.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect()
    }
}

/// Row-major water mask; `true` marks water.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, SegvalError> {
        if bits.len() != width * height || bits.is_empty() {
            return Err(SegvalError::InvalidInput(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, bits }
    }

    /// Any nonzero channel marks water.
    pub fn load(path: &Path) -> Result<Self, SegvalError> {
        let img = image::open(path)
            .map_err(|e| SegvalError::Image {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0.iter().any(|&c| c != 0)).collect();
        Self::new(w as usize, h as usize, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_water(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Rule picking which mixture component is water.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterComponent {
    /// Component whose mean has the lowest luminance.
    #[default]
    LowestLuminance,
    /// Component owning the largest 4-connected region that touches the
    /// bottom edge; falls back to lowest luminance when no region does.
    BottomEdgeRegion,
}

/// Pixel features the mixture is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelFeature {
    #[default]
    Luminance,
    Rgb,
}

pub fn pixel_features(image: &PixelGrid, feature: PixelFeature) -> (Vec<f64>, usize) {
    match (feature, image.channels) {
        (PixelFeature::Rgb, 3) => (image.data.clone(), 3),
        _ => (image.luminance(), 1),
    }
}

fn mean_luminance(mean: &[f64]) -> f64 {
    if mean.len() == 3 {
        LUMA.iter().zip(mean).map(|(w, m)| w * m).sum()
    } else {
        mean[0]
    }
}

fn darkest(model: &GmmModel) -> usize {
    (0..model.k)
        .min_by(|&a, &b| mean_luminance(&model.means[a]).total_cmp(&mean_luminance(&model.means[b])))
        .expect("model has components")
}

/// Size of the largest bottom-touching 4-connected region per label.
fn bottom_region_sizes(labels: &[usize], width: usize, height: usize, k: usize) -> Vec<usize> {
    let mut seen = vec![false; labels.len()];
    let mut best = vec![0; k];
    let mut stack = Vec::new();
    for x in 0..width {
        let start = (height - 1) * width + x;
        if seen[start] {
            continue;
        }
        let label = labels[start];
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (cx, cy) = (i % width, i / width);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == label {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if cx > 0 {
                visit(i - 1);
            }
            if cx + 1 < width {
                visit(i + 1);
            }
            if cy > 0 {
                visit(i - width);
            }
            if cy + 1 < height {
                visit(i + width);
            }
        }
        best[label] = best[label].max(size);
    }
    best
}

/// Assign every pixel to its maximum-posterior component and mark the
/// water component's pixels.
pub fn gmm_mask(
    image: &PixelGrid,
    model: &GmmModel,
    feature: PixelFeature,
    strategy: WaterComponent,
) -> Result<BinaryMask, SegvalError> {
    let (features, dim) = pixel_features(image, feature);
    if dim != model.dim {
        return Err(SegvalError::InvalidInput(format!(
            "model dimension {} does not match feature dimension {dim}",
            model.dim
        )));
    }
    let labels: Vec<usize> = features.chunks_exact(dim).map(|x| model.assign(x)).collect();
    let water = match strategy {
        WaterComponent::LowestLuminance => darkest(model),
        WaterComponent::BottomEdgeRegion => {
            let sizes = bottom_region_sizes(&labels, image.width, image.height, model.k);
            let (j, size) = sizes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("model has components");
            if *size == 0 {
                darkest(model)
            } else {
                j
            }
        }
    };
    BinaryMask::new(
        image.width,
        image.height,
        labels.into_iter().map(|l| l == water).collect(),
    )
}

/// Fit a mixture on the image's own pixels and derive its water mask.
pub fn surrogate_mask(
    image: &PixelGrid,
    cfg: &GmmConfig,
    feature: PixelFeature,
    strategy: WaterComponent,
) -> Result<(BinaryMask, GmmModel), SegvalError> {
    let (features, dim) = pixel_features(image, feature);
    let model = fit_gmm(Samples::new(&features, dim)?, cfg)?;
    let mask = gmm_mask(image, &model, feature, strategy)?;
    Ok((mask, model))
}

/// Fraction of mask bits marked water.
pub fn water_fraction(mask: &BinaryMask) -> f64 {
    mask.count_water() as f64 / mask.bits.len() as f64
}

pub const DEFAULT_MIN_COVERAGE: f64 = 0.20;

/// Inclusive: a fraction of exactly `min_coverage` passes.
pub fn gate_coverage(fraction: f64, min_coverage: f64) -> bool {
    fraction >= min_coverage
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dark_lower_half_becomes_the_mask() {
        let img = PixelGrid::from_fn(32, 32, |x, y| {
            let jitter = ((x * 7 + y * 13) % 10) as f64 * 0.002;
            if y >= 16 { 0.15 + jitter } else { 0.85 - jitter }
        })
        .unwrap();
        for strategy in [WaterComponent::LowestLuminance, WaterComponent::BottomEdgeRegion] {
            let (mask, _) = surrogate_mask(&img, &GmmConfig::default(), PixelFeature::Luminance, strategy).unwrap();
            assert_eq!(mask, BinaryMask::from_fn(32, 32, |_, y| y >= 16));
        }
    }

    #[test]
    fn uniform_noise_splits_roughly_in_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.random::<f64>()).collect();
        let img = PixelGrid::new(64, 64, 1, data).unwrap();
        let (mask, _) =
            surrogate_mask(&img, &GmmConfig::default(), PixelFeature::Luminance, WaterComponent::default()).unwrap();
        let f = water_fraction(&mask);
        assert!((0.35..=0.65).contains(&f), "{f}");
        assert_eq!((mask.width(), mask.height()), (64, 64));
    }

    #[test]
    fn coverage_gate_is_inclusive() {
        let full = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(water_fraction(&full), 1.0);
        let fifth = BinaryMask::from_fn(10, 10, |x, y| y * 10 + x < 20);
        assert!(gate_coverage(water_fraction(&fifth), DEFAULT_MIN_COVERAGE));
        assert!(!gate_coverage(0.1999, DEFAULT_MIN_COVERAGE));
    }

    #[test]
    fn grid_validation() {
        assert!(PixelGrid::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(PixelGrid::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 3]).is_err());
    }
}
