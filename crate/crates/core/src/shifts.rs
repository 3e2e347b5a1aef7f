//! Synthetic distribution shifts and kernel density estimates.
//!
//! A shift is a [`Shift`] trait object looked up by kind in a
//! [`ShiftRegistry`]; every built-in shift is the exact identity at level 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::tensor::Tensor;

/// One shift: kind, intensity and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: String,
    pub level: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self {
            kind: "none".into(),
            level: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0) || !self.level.is_finite() {
            return Err(Error::Validation(format!("shift level must be finite and >= 0, got {}", self.level)));
        }
        if self.kind == "none" && self.level != 0.0 {
            return Err(Error::Validation("shift kind `none` requires level 0".into()));
        }
        Ok(())
    }
}

/// Output of a shift; `mask` marks pixels the shift blanked out, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifted {
    pub image: Tensor,
    pub mask: Option<Vec<bool>>,
}

pub trait Shift: Send + Sync {
    fn kind(&self) -> &'static str;

    /// Applies the shift at `level` to one `[C×H×W]` image. `index`
    /// identifies the image so seeded shifts differ per image.
    fn apply(&self, image: &Tensor, level: f64, seed: u64, index: u64) -> Result<Shifted>;
}

fn unmasked(image: Tensor) -> Result<Shifted> {
    Ok(Shifted { image, mask: None })
}

fn for_each_plane(image: &Tensor, mut f: impl FnMut(&[f64], &mut [f64], usize, usize)) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let range = ch * h * w..(ch + 1) * h * w;
        f(&image.data()[range.clone()], &mut out[range], h, w);
    }
    Tensor::new(image.shape().to_vec(), out)
}

/// Index into `[0, n)` with symmetric reflection, `… 2 1 0 | 0 1 2 … n-1 | n-1 n-2 …`,
/// repeated as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Normalised discrete Gaussian with radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with reflect padding; `σ = 0` returns the input.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::Validation(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    for_each_plane(image, |src, dst, h, w| {
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * src[y * w + reflect(x as isize + k as isize - r, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - r, h) * w + x])
                    .sum();
            }
        }
    })
}

/// Adds `N(0, level²)` noise; the literal reading of the intensity shift.
pub fn additive_noise(image: &Tensor, std: f64, seed: u64, index: u64) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::Validation(format!("noise std must be >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = derived_rng(seed, "noise-shift", index);
    let data = image
        .data()
        .iter()
        .map(|v| v + std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(image.shape().to_vec(), data)
}

/// Rotation about the image centre by `angle_deg` counter-clockwise,
/// bilinear interpolation, zero outside the source.
pub fn rotate(image: &Tensor, angle_deg: f64) -> Result<Tensor> {
    if !(0.0..360.0).contains(&angle_deg) {
        return Err(Error::Validation(format!("rotation angle must be in [0, 360), got {angle_deg}")));
    }
    if angle_deg == 0.0 {
        return Ok(image.clone());
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    // Snap the quarter turns so they are exact permutations.
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else if (v.abs() - 1.0).abs() < 1e-12 { v.signum() } else { v };
    let (sin, cos) = (snap(sin), snap(cos));
    for_each_plane(image, |src, dst, h, w| {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                src[y as usize * w + x as usize]
            }
        };
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                // Inverse map: rotate the output coordinate back by −angle.
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let (x0, y0) = (x0 as isize, y0 as isize);
                let mut v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
                if fx != 0.0 {
                    v += (1.0 - fy) * fx * at(y0, x0 + 1);
                }
                if fy != 0.0 {
                    v += fy * (1.0 - fx) * at(y0 + 1, x0);
                    if fx != 0.0 {
                        v += fy * fx * at(y0 + 1, x0 + 1);
                    }
                }
                dst[y * w + x] = v;
            }
        }
    })
}

/// Zeroes `num_rects` axis-aligned rectangles with sides drawn from
/// `size_range` at seeded uniform positions.
pub fn occlude(
    image: &Tensor,
    num_rects: usize,
    size_range: (usize, usize),
    seed: u64,
    index: u64,
) -> Result<Shifted> {
    let (c, h, w) = image.chw()?;
    let (lo, hi) = size_range;
    if num_rects == 0 {
        return Ok(Shifted {
            image: image.clone(),
            mask: Some(vec![false; h * w]),
        });
    }
    if lo == 0 || lo > hi {
        return Err(Error::Validation(format!("invalid rectangle size range ({lo}, {hi})")));
    }
    if hi > h || hi > w {
        return Err(Error::Validation(format!(
            "rectangles up to {hi} px do not fit a {h}x{w} image"
        )));
    }
    let mut rng = derived_rng(seed, "occlude", index);
    let mut mask = vec![false; h * w];
    for _ in 0..num_rects {
        let rh = rng.random_range(lo..=hi);
        let rw = rng.random_range(lo..=hi);
        let y0 = rng.random_range(0..=h - rh);
        let x0 = rng.random_range(0..=w - rw);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                mask[y * w + x] = true;
            }
        }
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for ch in 0..c {
        for (px, &m) in mask.iter().enumerate() {
            if m {
                data[ch * h * w + px] = 0.0;
            }
        }
    }
    Ok(Shifted {
        image: out,
        mask: Some(mask),
    })
}

/// `v → (1−s)·v + s·g(v)` over the image's own range, where `g(u) = u³`
/// acts on the range-normalised value `u`. Strictly increasing for `s < 1`;
/// at `s = 1` the dark end of the histogram is compressed towards the
/// minimum and the bright tail is stretched.
pub fn intensity_remap(image: &Tensor, strength: f64) -> Result<Tensor> {
    if !(strength >= 0.0) || strength > 1.0 {
        return Err(Error::Validation(format!("remap strength must be in [0, 1], got {strength}")));
    }
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let lo = image.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(image.clone());
    }
    Ok(image.map(|v| {
        let u = (v - lo) / span;
        let g = u * u * u;
        lo + span * ((1.0 - strength) * u + strength * g)
    }))
}

struct Identity;

impl Shift for Identity {
    fn kind(&self) -> &'static str {
        "none"
    }

    fn apply(&self, image: &Tensor, level: f64, _seed: u64, _index: u64) -> Result<Shifted> {
        if level != 0.0 {
            return Err(Error::Validation("shift kind `none` requires level 0".into()));
        }
        unmasked(image.clone())
    }
}

struct Blur;

impl Shift for Blur {
    fn kind(&self) -> &'static str {
        "blur"
    }

    fn apply(&self, image: &Tensor, level: f64, _seed: u64, _index: u64) -> Result<Shifted> {
        unmasked(gaussian_blur(image, level)?)
    }
}

struct Noise;

impl Shift for Noise {
    fn kind(&self) -> &'static str {
        "noise"
    }

    fn apply(&self, image: &Tensor, level: f64, seed: u64, index: u64) -> Result<Shifted> {
        unmasked(additive_noise(image, level, seed, index)?)
    }
}

struct Rotate;

impl Shift for Rotate {
    fn kind(&self) -> &'static str {
        "rotate"
    }

    fn apply(&self, image: &Tensor, level: f64, _seed: u64, _index: u64) -> Result<Shifted> {
        unmasked(rotate(image, level)?)
    }
}

/// `level` rectangles with sides between 1/8 and 1/4 of the shorter edge.
struct Occlude;

impl Shift for Occlude {
    fn kind(&self) -> &'static str {
        "occlude"
    }

    fn apply(&self, image: &Tensor, level: f64, seed: u64, index: u64) -> Result<Shifted> {
        if level.fract() != 0.0 {
            return Err(Error::Validation(format!("occlusion level counts rectangles, got {level}")));
        }
        let (_, h, w) = image.chw()?;
        let edge = h.min(w);
        occlude(image, level as usize, ((edge / 8).max(1), (edge / 4).max(1)), seed, index)
    }
}

struct Remap;

impl Shift for Remap {
    fn kind(&self) -> &'static str {
        "intensity_remap"
    }

    fn apply(&self, image: &Tensor, level: f64, _seed: u64, _index: u64) -> Result<Shifted> {
        unmasked(intensity_remap(image, level)?)
    }
}

/// Kind → shift table.
#[derive(Default)]
pub struct ShiftRegistry {
    shifts: BTreeMap<&'static str, Box<dyn Shift>>,
}

impl ShiftRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, shift: Box<dyn Shift>) {
        self.shifts.insert(shift.kind(), shift);
    }

    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Identity));
        r.register(Box::new(Blur));
        r.register(Box::new(Noise));
        r.register(Box::new(Rotate));
        r.register(Box::new(Occlude));
        r.register(Box::new(Remap));
        r
    }

    pub fn kinds(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.shifts.keys().copied()
    }

    pub fn get(&self, kind: &str) -> Result<&dyn Shift> {
        self.shifts.get(kind).map(|s| s.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown shift kind `{kind}`; available: {}",
                self.kinds().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn apply(&self, spec: &ShiftSpec, image: &Tensor, index: u64) -> Result<Shifted> {
        spec.validate()?;
        self.get(&spec.kind)?.apply(image, spec.level, spec.seed, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Two columns `grid,density`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,density\n");
        for (x, y) in self.grid.iter().zip(&self.density) {
            let _ = writeln!(out, "{x:.6},{y:.6}");
        }
        out
    }
}

pub const KDE_MIN_BANDWIDTH: f64 = 1e-6;
pub const KDE_GRID_POINTS: usize = 256;

/// Scott's rule `n^(−1/5)·std` (sample standard deviation), floored.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n.powf(-0.2) * var.sqrt()).max(KDE_MIN_BANDWIDTH)
}

/// `points` evenly spaced values covering the data range padded by four
/// bandwidths on each side.
pub fn kde_grid(values: &[f64], bandwidth: f64, points: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// Gaussian-kernel density estimate evaluated at `grid`.
pub fn kde(values: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<KdeCurve> {
    if values.len() < 2 {
        return Err(Error::Validation("KDE needs at least 2 values".into()));
    }
    let h = bandwidth.unwrap_or_else(|| scott_bandwidth(values)).max(KDE_MIN_BANDWIDTH);
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve {
        grid: grid.to_vec(),
        density,
        bandwidth: h,
    })
}

/// KDE on the default 256-point grid with Scott bandwidth.
pub fn kde_auto(values: &[f64]) -> Result<KdeCurve> {
    if values.len() < 2 {
        return Err(Error::Validation("KDE needs at least 2 values".into()));
    }
    let h = scott_bandwidth(values);
    kde(values, &kde_grid(values, h, KDE_GRID_POINTS), Some(h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    fn smooth(h: usize, w: usize) -> Tensor {
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                0.5 + 0.3 * (0.3 * x).sin() * (0.2 * y).cos()
            })
            .collect();
        Tensor::new(vec![1, h, w], data).unwrap()
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::new(vec![1, h, w], (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn blur_identity_and_constant() {
        let img = random_image(1, 8, 8);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let c = Tensor::filled(&[1, 6, 6], 0.37);
        for v in gaussian_blur(&c, 2.5).unwrap().data() {
            assert!((v - 0.37).abs() < 1e-15);
        }
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn blur_impulse_matches_direct_kernel() {
        let n = 15;
        let mut data = vec![0.0; n * n];
        data[7 * n + 7] = 1.0;
        let img = Tensor::new(vec![1, n, n], data).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as isize - 7, x as isize - 7);
                let expected = if dy.abs() <= 3 && dx.abs() <= 3 {
                    k[(dy + 3) as usize] * k[(dx + 3) as usize]
                } else {
                    0.0
                };
                assert!((out.data()[y * n + x] - expected).abs() < 1e-15);
            }
        }
        // Close to the continuous value 1/(2πσ²) at the centre.
        assert!((out.data()[7 * n + 7] - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-3);
    }

    #[test]
    fn blur_with_radius_beyond_image() {
        let img = random_image(3, 4, 4);
        let out = gaussian_blur(&img, 14.0).unwrap();
        let m_in: f64 = img.data().iter().sum::<f64>() / 16.0;
        let m_out: f64 = out.data().iter().sum::<f64>() / 16.0;
        assert!((m_in - m_out).abs() < 1e-9);
    }

    #[test]
    fn rotate_identity_and_quarter_turn() {
        let img = random_image(2, 6, 6);
        assert_eq!(rotate(&img, 0.0).unwrap(), img);
        let r = rotate(&img, 90.0).unwrap();
        let n = 6;
        for y in 0..n {
            for x in 0..n {
                // Counter-clockwise: out[y][x] = in[x][n-1-y].
                let expected = img.data()[x * n + (n - 1 - y)];
                assert!((r.data()[y * n + x] - expected).abs() < 1e-9);
            }
        }
        assert!(rotate(&img, 360.0).is_err());
        assert!(rotate(&img, -1.0).is_err());
    }

    #[test]
    fn rotate_half_turn_twice() {
        let img = smooth(16, 16);
        let back = rotate(&rotate(&img, 180.0).unwrap(), 180.0).unwrap();
        for y in 2..14 {
            for x in 2..14 {
                assert!((back.data()[y * 16 + x] - img.data()[y * 16 + x]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn occlusion_cases() {
        let img = random_image(4, 32, 32).map(|v| v + 0.1);
        let none = occlude(&img, 0, (4, 4), 0, 0).unwrap();
        assert_eq!(none.image, img);
        assert!(none.mask.unwrap().iter().all(|m| !m));
        let one = occlude(&img, 1, (4, 4), 7, 0).unwrap();
        let mask = one.mask.clone().unwrap();
        assert_eq!(mask.iter().filter(|m| **m).count(), 16);
        for (px, m) in mask.iter().enumerate() {
            assert_eq!(*m, one.image.data()[px] == 0.0);
        }
        assert_eq!(one, occlude(&img, 1, (4, 4), 7, 0).unwrap());
        assert!(matches!(occlude(&img, 1, (40, 40), 0, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn remap_cases() {
        let img = smooth(16, 16);
        assert_eq!(intensity_remap(&img, 0.0).unwrap(), img);
        let r = intensity_remap(&img, 0.3).unwrap();
        let d = img.data();
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    assert!(r.data()[i] < r.data()[j]);
                }
            }
        }
        let full = intensity_remap(&img, 1.0).unwrap();
        let grid = kde_grid(d, 0.05, KDE_GRID_POINTS);
        let a = kde(d, &grid, None).unwrap();
        let b = kde(full.data(), &grid, None).unwrap();
        let step = grid[1] - grid[0];
        let l1: f64 = a.density.iter().zip(&b.density).map(|(x, y)| (x - y).abs() * step).sum();
        assert!(l1 > 0.1, "{l1}");
    }

    #[test]
    fn registry_level_zero_is_identity() {
        let reg = ShiftRegistry::builtin();
        let img = random_image(9, 16, 16);
        for kind in reg.kinds() {
            let spec = ShiftSpec {
                kind: kind.to_string(),
                level: 0.0,
                seed: 3,
            };
            let out = reg.apply(&spec, &img, 0).unwrap();
            assert_eq!(out.image.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), "{kind}");
        }
        assert!(reg.get("elastic").is_err());
        let bad = ShiftSpec {
            kind: "none".into(),
            level: 1.0,
            seed: 0,
        };
        assert!(reg.apply(&bad, &img, 0).is_err());
    }

    #[test]
    fn kde_cases() {
        assert!(kde_auto(&[1.0]).is_err());
        let spike = kde_auto(&[0.4; 10]).unwrap();
        assert_eq!(spike.bandwidth, KDE_MIN_BANDWIDTH);
        let peak = spike
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!((spike.grid[peak] - 0.4).abs() < 1e-7);
        let mut rng = rng_from(5);
        let values: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let curve = kde_auto(&values).unwrap();
        assert!((curve.integral() - 1.0).abs() < 1e-3);
        assert!(curve.density.iter().all(|d| *d >= 0.0));
        assert!(curve.to_csv().starts_with("grid,density\n"));
    }

    proptest! {
        #[test]
        fn blur_preserves_mean(seed in any::<u64>(), sigma in 0.1f64..6.0) {
            let img = random_image(seed, 12, 10);
            let out = gaussian_blur(&img, sigma).unwrap();
            let a: f64 = img.data().iter().sum();
            let b: f64 = out.data().iter().sum();
            prop_assert!((a - b).abs() / 120.0 < 1e-9);
        }

        #[test]
        fn occlusion_never_brightens(seed in any::<u64>(), rects in 0usize..6) {
            let img = random_image(seed, 16, 16);
            let out = occlude(&img, rects, (2, 5), seed, 1).unwrap();
            for (a, b) in img.data().iter().zip(out.image.data()) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn shifts_are_deterministic(seed in any::<u64>(), level in 0.0f64..3.0) {
            let reg = ShiftRegistry::builtin();
            let img = random_image(seed, 16, 16);
            for kind in ["blur", "noise", "rotate", "intensity_remap"] {
                let spec = ShiftSpec { kind: kind.into(), level: level / 3.0, seed };
                prop_assert_eq!(reg.apply(&spec, &img, 4).unwrap(), reg.apply(&spec, &img, 4).unwrap());
            }
        }
    }
}
