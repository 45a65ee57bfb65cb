//! Test signals and images: the Shepp-Logan head phantom, a fixed 1D slice
//! of it, and seeded piecewise-constant signals.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linops::build_tv_1d;

/// Minimum phantom side; below this the small ellipses cover no pixels.
pub const MIN_PHANTOM_SIDE: usize = 16;

/// Differences smaller than this are treated as zero when counting edges.
const EDGE_EPS: f64 = 1e-12;

/// One ellipse of a head-phantom table. `intensity` is additive; `a` and
/// `b` are the semi-axes along the (rotated) x and y directions; `angle_deg`
/// rotates counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub angle_deg: f64,
}

impl Ellipse {
    /// Pixel-center membership test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (sin, cos) = self.angle_deg.to_radians().sin_cos();
        let dx = x - self.x0;
        let dy = y - self.y0;
        let xr = dx * cos + dy * sin;
        let yr = -dx * sin + dy * cos;
        (xr / self.a).powi(2) + (yr / self.b).powi(2) <= 1.0
    }
}

/// The ten ellipses of the original Shepp-Logan head phantom.
#[rustfmt::skip]
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { intensity:  2.00, a: 0.6900, b: 0.9200, x0:  0.00, y0:  0.0000, angle_deg:   0.0 },
    Ellipse { intensity: -0.98, a: 0.6624, b: 0.8740, x0:  0.00, y0: -0.0184, angle_deg:   0.0 },
    Ellipse { intensity: -0.02, a: 0.1100, b: 0.3100, x0:  0.22, y0:  0.0000, angle_deg: -18.0 },
    Ellipse { intensity: -0.02, a: 0.1600, b: 0.4100, x0: -0.22, y0:  0.0000, angle_deg:  18.0 },
    Ellipse { intensity:  0.01, a: 0.2100, b: 0.2500, x0:  0.00, y0:  0.3500, angle_deg:   0.0 },
    Ellipse { intensity:  0.01, a: 0.0460, b: 0.0460, x0:  0.00, y0:  0.1000, angle_deg:   0.0 },
    Ellipse { intensity:  0.01, a: 0.0460, b: 0.0460, x0:  0.00, y0: -0.1000, angle_deg:   0.0 },
    Ellipse { intensity:  0.01, a: 0.0460, b: 0.0230, x0: -0.08, y0: -0.6050, angle_deg:   0.0 },
    Ellipse { intensity:  0.01, a: 0.0230, b: 0.0230, x0:  0.00, y0: -0.6060, angle_deg:   0.0 },
    Ellipse { intensity:  0.01, a: 0.0230, b: 0.0460, x0:  0.06, y0: -0.6050, angle_deg:  90.0 },
];

/// The original densities peak at 2.0 (skull); they are halved so the full
/// range maps onto [0, 1] without the clamp erasing the interior contrast
/// between tissue classes.
pub const INTENSITY_SCALE: f64 = 0.5;

/// A 1D piecewise-constant test signal with a recorded edge support.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom1D {
    pub samples: DVector<f64>,
    /// Indices i where samples[i+1] != samples[i], i.e. the support of the
    /// difference transform.
    pub edge_set: Vec<usize>,
    pub name: String,
}

impl Phantom1D {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn from_samples(samples: DVector<f64>, name: impl Into<String>) -> Result<Self> {
        let edge_set = edge_set_of(&samples)?;
        Ok(Phantom1D {
            samples,
            edge_set,
            name: name.into(),
        })
    }
}

/// An N x N intensity grid with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom2D {
    pub pixels: DMatrix<f64>,
    pub name: String,
}

impl Phantom2D {
    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }

    /// Column-major vectorization, the layout the 2D operators act on.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.pixels.as_slice())
    }
}

/// Support of the difference transform of a signal.
pub fn edge_set_of(samples: &DVector<f64>) -> Result<Vec<usize>> {
    let d = build_tv_1d(samples.len())?;
    Ok(d.apply(samples)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > EDGE_EPS)
        .map(|(i, _)| i)
        .collect())
}

/// Rasterizes an ellipse table on an n x n grid: pixel-center membership,
/// additive intensities, scaled then clamped to [0, 1]. Row 0 is the top of
/// the image; pixel centers sit at (-1 + (2j+1)/n, 1 - (2i+1)/n).
pub fn rasterize(n: usize, table: &[Ellipse]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let x = -1.0 + (2.0 * j as f64 + 1.0) / n as f64;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let raw: f64 = table
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        (raw * INTENSITY_SCALE).clamp(0.0, 1.0)
    })
}

/// The Shepp-Logan phantom on an n x n grid.
pub fn shepp_logan_2d(n: usize) -> Result<Phantom2D> {
    if n < MIN_PHANTOM_SIDE {
        return Err(Error::PhantomTooSmall {
            min: MIN_PHANTOM_SIDE,
            got: n,
        });
    }
    Ok(Phantom2D {
        pixels: rasterize(n, &SHEPP_LOGAN),
        name: format!("shepp-logan-{n}"),
    })
}

/// Index of the horizontal row used by `shepp_logan_slice`: the row just
/// above the image midline (y = +1/n). It threads both lateral ventricles,
/// and at n = 128 its profile has exactly 8 edges.
pub fn slice_row(n: usize) -> usize {
    n / 2 - 1
}

/// A fixed horizontal cross-section of the Shepp-Logan phantom.
pub fn shepp_logan_slice(n: usize) -> Result<Phantom1D> {
    let phantom = shepp_logan_2d(n)?;
    let row = phantom.pixels.row(slice_row(n)).transpose();
    Phantom1D::from_samples(row, format!("shepp-logan-slice-{n}"))
}

/// A seeded piecewise-constant signal with exactly `k` jumps at distinct
/// positions. Jump magnitudes are bounded away from zero so the edge count
/// is exact.
pub fn piecewise_constant(n: usize, k: usize, seed: u64) -> Result<Phantom1D> {
    if n < 2 {
        return Err(Error::InvalidDimension {
            what: "piecewise-constant signal",
            requirement: "length >= 2",
            got: n,
        });
    }
    if k > n - 1 {
        return Err(Error::InfeasibleJumps { jumps: k, len: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.random();
    let mut positions = sample(&mut rng, n - 1, k).into_vec();
    positions.sort_unstable();
    let mut samples = DVector::from_element(n, base);
    let mut level = base;
    let mut next = 0;
    for i in 0..n - 1 {
        if next < positions.len() && positions[next] == i {
            let magnitude = 0.5 + rng.random::<f64>();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            level += sign * magnitude;
            next += 1;
        }
        samples[i + 1] = level;
    }
    Phantom1D::from_samples(samples, format!("piecewise-{n}-{k}-{seed}"))
}
