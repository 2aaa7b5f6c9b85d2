//! Built-in desk-scale generator recipes.
//!
//! The tabular recipe drives CI and the trend studies: four factors
//! (shape, hue, size, pos), a four-valued confounder that couples shape and
//! hue, and a 16-dimensional observation in which hue is easy to read while
//! shape is deliberately noisy. Under correlation, hue is an attractive
//! shortcut for shape classification; on decorrelated data the shortcut
//! breaks, which is exactly the failure mode the label-conditioned models
//! are supposed to avoid.

use super::{Factor, FactorSpec, GenSpec, ObsSpec};

/// Probability the confounder puts on its preferred shape and hue values.
const COUPLING: f64 = 0.85;

fn preferring(card: usize, preferred: usize, mass: f64) -> Vec<f64> {
    let rest = (1.0 - mass) / (card - 1) as f64;
    (0..card).map(|v| if v == preferred { mass } else { rest }).collect()
}

fn uniform(card: usize) -> Vec<f64> {
    vec![1.0 / card as f64; card]
}

/// Tabular recipe: K=4 factors, |C|=4, 16-dimensional observations.
///
/// Confounder value `c` prefers shape `c` and hue `c` with probability
/// 0.85 each; size and pos are unconfounded. Shape's projection block is
/// scaled down so that reading shape from the observation is noisy while
/// hue stays nearly noise-free.
pub fn desk_tabular_spec() -> GenSpec {
    let factors = FactorSpec {
        factors: vec![
            Factor { name: "shape".into(), cardinality: 4 },
            Factor { name: "hue".into(), cardinality: 4 },
            Factor { name: "size".into(), cardinality: 3 },
            Factor { name: "pos".into(), cardinality: 4 },
        ],
    };
    let n_conf = 4;
    let cond = (0..n_conf)
        .map(|c| {
            vec![
                preferring(4, c, COUPLING), // shape follows the confounder
                preferring(4, c, COUPLING), // hue follows the confounder
                uniform(3),
                uniform(4),
            ]
        })
        .collect();
    GenSpec {
        factors,
        conf_probs: uniform(n_conf),
        cond,
        obs: ObsSpec::Tabular { dim: 16 },
        noise: 0.35,
        tabular_scales: vec![0.20, 1.0, 0.55, 0.55],
        design_seed: 0xcd15_e7ab,
    }
}

/// Image recipe: 16x16 RGB renders with five factors
/// (shape, hue, size, posx, posy) and the same shape-hue confounding.
pub fn desk_image_spec() -> GenSpec {
    let factors = FactorSpec {
        factors: vec![
            Factor { name: "shape".into(), cardinality: 3 },
            Factor { name: "hue".into(), cardinality: 6 },
            Factor { name: "size".into(), cardinality: 3 },
            Factor { name: "posx".into(), cardinality: 4 },
            Factor { name: "posy".into(), cardinality: 4 },
        ],
    };
    let n_conf = 3;
    let cond = (0..n_conf)
        .map(|c| {
            vec![
                preferring(3, c, COUPLING),
                // Each confounder value prefers a pair of adjacent hues.
                {
                    let mut d = vec![(1.0 - COUPLING) / 4.0; 6];
                    d[2 * c] = COUPLING / 2.0;
                    d[2 * c + 1] = COUPLING / 2.0;
                    d
                },
                uniform(3),
                uniform(4),
                uniform(4),
            ]
        })
        .collect();
    GenSpec {
        factors,
        conf_probs: uniform(n_conf),
        cond,
        obs: ObsSpec::Image { height: 16, width: 16 },
        noise: 0.02,
        tabular_scales: vec![1.0; 5],
        design_seed: 0xcd15_e7ab,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipes_validate() {
        desk_tabular_spec().validate().unwrap();
        desk_image_spec().validate().unwrap();
    }

    #[test]
    fn tabular_pair_joint_is_confounded() {
        let spec = desk_tabular_spec();
        let joint = spec.implied_pair_joint(0, 1); // shape vs hue
        let marg = spec.factor_marginals();
        // Diagonal cells carry more mass than the independent product.
        for v in 0..4 {
            assert!(joint[v][v] > 1.5 * marg[0][v] * marg[1][v]);
        }
    }
}
