//! Observation rendering: deterministic function of (spec, factor
//! assignment, seed). Images are anti-aliased colored shapes on a neutral
//! background; tabular observations are a fixed linear projection of the
//! one-hot factor encoding plus Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, GenSpec, ObsSpec, Result};

/// Render one observation for factor assignment `g`. The seed only drives
/// observation noise; geometry and colors are functions of `g`.
pub fn render(spec: &GenSpec, g: &[usize], seed: u64) -> Result<Vec<f32>> {
    if g.len() != spec.factors.len() {
        return Err(DataError::BadSpec(format!(
            "assignment has {} factors, spec {}",
            g.len(),
            spec.factors.len()
        )));
    }
    for (k, (&v, f)) in g.iter().zip(&spec.factors.factors).enumerate() {
        if v >= f.cardinality {
            return Err(DataError::FactorOutOfRange {
                factor: spec.factors.factors[k].name.clone(),
                value: v,
                card: f.cardinality,
            });
        }
    }
    let mut x = match &spec.obs {
        ObsSpec::Tabular { dim } => tabular_signal(spec, g, *dim),
        ObsSpec::Image { height, width } => image_signal(spec, g, *height, *width)?,
    };
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut x {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += (spec.noise * eps) as f32;
        }
    }
    Ok(x)
}

/// Deterministic embedding of factor `k`, value `v`: a pseudo-random
/// Gaussian vector scaled by the factor's tabular weight. Rebuilt from the
/// design seed on demand, so specs round-trip through JSON without storing
/// the matrix.
fn factor_embedding(spec: &GenSpec, k: usize, v: usize, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.design_seed);
    rng.set_stream(((k as u64) << 32) | v as u64);
    let scale = spec.tabular_scales[k];
    (0..dim)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (scale * e) as f32
        })
        .collect()
}

fn tabular_signal(spec: &GenSpec, g: &[usize], dim: usize) -> Vec<f32> {
    let mut x = vec![0.0f32; dim];
    for (k, &v) in g.iter().enumerate() {
        for (xi, ei) in x.iter_mut().zip(factor_embedding(spec, k, v, dim)) {
            *xi += ei;
        }
    }
    x
}

/// The projection of a one-hot encoding the tabular renderer applies, for
/// noise-free oracle comparisons.
#[cfg(test)]
pub(crate) fn tabular_clean(spec: &GenSpec, g: &[usize]) -> Vec<f32> {
    match spec.obs {
        ObsSpec::Tabular { dim } => tabular_signal(spec, g, dim),
        _ => unreachable!("tabular_clean is only called for tabular specs"),
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Square,
    Circle,
    Triangle,
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() + 1.0).fract() * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const BACKGROUND: f32 = 0.5;

fn image_signal(spec: &GenSpec, g: &[usize], height: usize, width: usize) -> Result<Vec<f32>> {
    let factors = &spec.factors;
    let value_of = |name: &str| factors.index_of(name).map(|k| g[k]);
    let card_of = |name: &str| {
        factors.index_of(name).map(|k| factors.factors[k].cardinality).unwrap_or(1)
    };

    let shape = match value_of("shape").unwrap_or(0) % 3 {
        0 => Shape::Square,
        1 => Shape::Circle,
        _ => Shape::Triangle,
    };
    let hue = value_of("hue").unwrap_or(0) as f32 / card_of("hue").max(1) as f32;
    let color = hsv_to_rgb(hue, 0.85, 0.9);

    let min_side = height.min(width) as f32;
    let size_card = card_of("size").max(1);
    let size_idx = value_of("size").unwrap_or(size_card / 2);
    // Radii from 0.14 to 0.26 of the short side.
    let radius = min_side
        * (0.14 + 0.12 * if size_card > 1 { size_idx as f32 / (size_card - 1) as f32 } else { 0.5 });

    let pos = |name: &str, extent: usize| -> f32 {
        let card = card_of(name).max(1);
        let idx = value_of(name).unwrap_or(card / 2);
        // Keep centers away from the border by one max radius.
        let margin = 0.28 * extent as f32;
        if card > 1 {
            margin + (extent as f32 - 2.0 * margin) * idx as f32 / (card - 1) as f32
        } else {
            extent as f32 / 2.0
        }
    };
    let cx = pos("posx", width);
    let cy = pos("posy", height);

    // 4x4 supersampling for anti-aliased coverage.
    const SS: usize = 4;
    let mut img = vec![BACKGROUND; height * width * 3];
    for py in 0..height {
        for px in 0..width {
            let mut cover = 0.0f32;
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f32 + (sx as f32 + 0.5) / SS as f32;
                    let y = py as f32 + (sy as f32 + 0.5) / SS as f32;
                    if inside(shape, x - cx, y - cy, radius) {
                        cover += 1.0;
                    }
                }
            }
            cover /= (SS * SS) as f32;
            if cover > 0.0 {
                let base = (py * width + px) * 3;
                for ch in 0..3 {
                    img[base + ch] = BACKGROUND * (1.0 - cover) + color[ch] * cover;
                }
            }
        }
    }
    Ok(img)
}

fn inside(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Triangle => {
            // Equilateral triangle pointing up (negative image-y).
            let ax = 0.0;
            let ay = -r;
            let bx = -0.866 * r;
            let by = 0.5 * r;
            let cx = 0.866 * r;
            let cy = 0.5 * r;
            let sign = |x1: f32, y1: f32, x2: f32, y2: f32| (dx - x2) * (y1 - y2) - (x1 - x2) * (dy - y2);
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, cx, cy);
            let d3 = sign(cx, cy, ax, ay);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(has_neg && has_pos)
        }
    }
}
