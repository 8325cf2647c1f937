//! Synthetic datasets with a known generating distribution.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tensor::Tensor;

/// Gaussian class blobs: unit-variance noise around class means that are
/// pairwise `separation` apart (exactly so when `classes <= dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    /// Probability that a row's label is replaced by a uniformly random class.
    pub label_noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            n_train: 1000,
            n_test: 1000,
            dim: 2,
            classes: 2,
            separation: 2.0,
            label_noise: 0.0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be a probability, got {p}"
        )))
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 || self.dim == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(
                "blob sizes, dim and classes must be at least 1".into(),
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        check_prob("label_noise", self.label_noise)
    }

    fn means(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        let r = self.separation / std::f64::consts::SQRT_2;
        (0..self.classes)
            .map(|k| {
                if self.classes <= self.dim {
                    let mut m = vec![0.0; self.dim];
                    m[k] = r;
                    m
                } else {
                    let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = v
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>()
                        .sqrt()
                        .max(f64::MIN_POSITIVE);
                    v.into_iter().map(|x| r * x / norm).collect()
                }
            })
            .collect()
    }
}

fn noisy_label(rng: &mut Rng, label: usize, classes: usize, p: f64) -> usize {
    if p > 0.0 && rng.random::<f64>() < p {
        rng.random_range(0..classes)
    } else {
        label
    }
}

/// A fixed blob distribution: class means are drawn once from `seed`, so
/// repeated samples come from the same distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobDistribution {
    means: Vec<Vec<f64>>,
    label_noise: f64,
}

impl BlobDistribution {
    pub fn new(spec: &BlobSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(BlobDistribution {
            means: spec.means(&mut rng_from_seed(derive_seed(seed, &[0]))),
            label_noise: spec.label_noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// `n` i.i.d. rows drawn with `rng`.
    pub fn sample_with(&self, n: usize, rng: &mut Rng) -> Dataset {
        let (dim, classes) = (self.dim(), self.classes());
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(0..classes);
            x.extend(
                self.means[k]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal)),
            );
            y.push(noisy_label(rng, k, classes, self.label_noise));
        }
        Dataset::new(Tensor::from_parts(vec![n, dim], x), y, classes)
            .expect("labels drawn below class count")
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        self.sample_with(n, &mut rng_from_seed(seed))
    }
}

/// Draws disjoint train and test sets from one blob distribution.
pub fn synth_blobs(spec: &BlobSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let dist = BlobDistribution::new(spec, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let train = dist.sample_with(spec.n_train, &mut rng);
    let test = dist.sample_with(spec.n_test, &mut rng);
    Ok((train, test))
}

/// `n` training and `n` test rows from Gaussian blobs whose means are
/// `separation` apart.
pub fn synth_classification(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> (Dataset, Dataset) {
    let spec = BlobSpec {
        n_train: n.max(1),
        n_test: n.max(1),
        dim: dim.max(1),
        classes: classes.max(1),
        separation: separation.max(0.0),
        label_noise: 0.0,
    };
    synth_blobs(&spec, seed).expect("clamped blob spec is valid")
}

/// Images built from per-class smooth prototypes (sums of random plane
/// waves per channel), plus a per-image brightness shift, pixel noise and
/// optional label noise. Pixels are quantized to multiples of 1/255.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Amplitude of a random low-frequency pattern added to each image,
    /// relative to the class pattern. Makes individual images memorable.
    pub clutter: f64,
    pub label_noise: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            n_train: 1000,
            n_test: 1000,
            height: 32,
            width: 32,
            channels: 3,
            classes: 10,
            noise: 0.3,
            clutter: 0.0,
            label_noise: 0.0,
        }
    }
}

const WAVES: usize = 3;

impl ImageSpec {
    pub fn validate(&self) -> Result<()> {
        if [
            self.n_train,
            self.n_test,
            self.height,
            self.width,
            self.channels,
            self.classes,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidConfig(
                "image sizes and classes must be at least 1".into(),
            ));
        }
        for (name, v) in [("noise", self.noise), ("clutter", self.clutter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        check_prob("label_noise", self.label_noise)
    }

    fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// A sum of random plane waves per channel, scaled into [-1, 1].
    fn waves(&self, rng: &mut Rng) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut img = vec![0.0; self.pixels()];
        for ch in 0..c {
            let waves: Vec<[f64; 4]> = (0..WAVES)
                .map(|_| {
                    [
                        rng.random_range(0.5..1.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    ]
                })
                .collect();
            let total: f64 = waves.iter().map(|wv| wv[0]).sum();
            for y in 0..h {
                for x in 0..w {
                    let s: f64 = waves
                        .iter()
                        .map(|&[a, fx, fy, phase]| {
                            a * (std::f64::consts::TAU
                                * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                                + phase)
                                .sin()
                        })
                        .sum();
                    img[(y * w + x) * c + ch] = s / total;
                }
            }
        }
        img
    }

    fn prototypes(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|_| self.waves(rng).iter().map(|s| 0.5 + 0.35 * s).collect())
            .collect()
    }
}

/// Draws disjoint train and test image sets sharing one set of prototypes.
pub fn synth_images(spec: &ImageSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let protos = spec.prototypes(&mut rng_from_seed(derive_seed(seed, &[0])));
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let len = spec.pixels();
    let mut draw = |n: usize| {
        let mut x = Vec::with_capacity(n * len);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(0..spec.classes);
            let shift = 0.1 * rng.sample::<f64, _>(StandardNormal);
            let clutter = if spec.clutter > 0.0 {
                spec.waves(&mut rng)
            } else {
                vec![0.0; len]
            };
            for (&p, &b) in protos[k].iter().zip(&clutter) {
                let v = p
                    + 0.35 * spec.clutter * b
                    + shift
                    + spec.noise * rng.sample::<f64, _>(StandardNormal);
                x.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
            }
            y.push(noisy_label(&mut rng, k, spec.classes, spec.label_noise));
        }
        let mut shape = vec![n];
        shape.extend([spec.height, spec.width, spec.channels]);
        Dataset::new(Tensor::from_parts(shape, x), y, spec.classes)
    };
    let train = draw(spec.n_train)?;
    let test = draw(spec.n_test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_means_are_separation_apart() {
        let spec = BlobSpec {
            classes: 3,
            dim: 4,
            separation: 5.0,
            ..BlobSpec::default()
        };
        let m = spec.means(&mut rng_from_seed(0));
        for i in 0..3 {
            for j in 0..i {
                let d: f64 = m[i]
                    .iter()
                    .zip(&m[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(
            synth_classification(50, 3, 2, 1.0, 9),
            synth_classification(50, 3, 2, 1.0, 9)
        );
        assert_ne!(
            synth_classification(50, 3, 2, 1.0, 9),
            synth_classification(50, 3, 2, 1.0, 10)
        );
        let spec = ImageSpec {
            n_train: 4,
            n_test: 2,
            height: 6,
            width: 5,
            ..ImageSpec::default()
        };
        let (a, b) = synth_images(&spec, 1).unwrap();
        assert_eq!(a.features().shape(), &[4, 6, 5, 3]);
        assert_eq!(b.len(), 2);
        assert_eq!(synth_images(&spec, 1).unwrap().0, a);
    }

    #[test]
    fn image_pixels_are_quantized_unit_values() {
        let spec = ImageSpec {
            n_train: 3,
            n_test: 1,
            ..ImageSpec::default()
        };
        let (a, _) = synth_images(&spec, 2).unwrap();
        for &v in a.features().data() {
            assert!((0.0..=1.0).contains(&v));
            assert!((v * 255.0 - (v * 255.0).round()).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = BlobSpec {
            label_noise: 1.5,
            ..BlobSpec::default()
        };
        assert!(synth_blobs(&bad, 0).is_err());
        let bad = ImageSpec {
            classes: 0,
            ..ImageSpec::default()
        };
        assert!(synth_images(&bad, 0).is_err());
        let bad = ImageSpec {
            clutter: -1.0,
            ..ImageSpec::default()
        };
        assert!(synth_images(&bad, 0).is_err());
    }

    #[test]
    fn clutter_makes_same_class_images_differ_more() {
        let spread = |clutter: f64| {
            let spec = ImageSpec {
                n_train: 40,
                n_test: 1,
                noise: 0.0,
                clutter,
                ..ImageSpec::default()
            };
            let (a, _) = synth_images(&spec, 3).unwrap();
            let x = a.features();
            let mut total = 0.0;
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    if a.labels()[i] == a.labels()[j] {
                        total += x
                            .row(i)
                            .iter()
                            .zip(x.row(j))
                            .map(|(p, q)| (p - q).abs())
                            .sum::<f64>();
                    }
                }
            }
            total
        };
        // The per-image brightness shift already spreads clutter-free images.
        let (none, some, lots) = (spread(0.0), spread(1.0), spread(2.0));
        assert!(none < some && some < lots);
        assert!(lots > 2.0 * none);
    }
}
