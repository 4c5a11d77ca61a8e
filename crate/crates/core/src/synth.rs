//! Seeded synthetic VLM-like embedding spaces.
//!
//! Generation is fully determined by [`SynthConfig`]. The random source is
//! xoshiro256++ seeded through SplitMix64 (`seed_from_u64`); uniforms take the
//! top 53 bits of each output and normals come from Box-Muller pairs. All
//! transcendental functions go through `libm`, so the bytes of a generated
//! bundle do not depend on the platform's math library.
//!
//! Draw order (each step consumes the stream in the order listed):
//!
//! 1. K prototypes: normalized standard normal vectors. These are also the
//!    ID prompt embeddings.
//! 2. ID images, image `i` of class `i mod K`: `normalize(p + σ g)` with
//!    per-coordinate `σ = 1 / (id_concentration · sqrt(d))`, so the noise norm
//!    is about `1 / id_concentration`.
//! 3. OOD anchors, for each split then each cluster: a uniformly chosen
//!    prototype `p` rotated by `ood_offset` radians toward a random direction
//!    orthogonal to it.
//! 4. OOD images per split, image `i` in cluster `i mod C`: the anchor plus
//!    the same noise model as ID images.
//! 5. OOD prompts, according to [`OodPromptPlacement`].
//!
//! Steps 1-4 never depend on the placement mode, so switching placement keeps
//! every image identical.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::embedding::{Bundle, EmbeddingMatrix, Logits};
use crate::scoring::PromptBank;
use crate::numeric::{normalize, to_f32, uniform01, Gaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodPromptPlacement {
    /// Each OOD prompt sits on the empirical mean of one OOD image cluster.
    AtOodMean,
    /// OOD prompts are random directions.
    Random,
    /// The first OOD prompt is the mean of all ID prototypes (a superclass
    /// concept); the rest follow `AtOodMean`.
    AtIdSuperclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    /// ID classes (and ID prompts).
    pub k: usize,
    /// OOD prompts; may be 0.
    pub m: usize,
    pub n_id: usize,
    /// OOD images per split.
    pub n_ood: usize,
    /// Number of OOD datasets, named `ood_0`, `ood_1`, ...
    pub ood_splits: usize,
    /// Inverse noise scale around cluster centres; `f64::INFINITY` gives
    /// noise-free images.
    pub id_concentration: f64,
    /// Rotation angle (radians) from a prototype to its OOD anchor.
    pub ood_offset: f64,
    pub ood_prompt_placement: OodPromptPlacement,
    pub seed: u64,
    /// When set, attach zero-shot classifier logits
    /// `logit_scale * cos(image, prototype_k)` so the logit-based baselines
    /// can run. Draws no random numbers.
    pub logit_scale: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            k: 10,
            m: 10,
            n_id: 500,
            n_ood: 500,
            ood_splits: 2,
            id_concentration: 1.0,
            ood_offset: 0.8,
            ood_prompt_placement: OodPromptPlacement::AtOodMean,
            seed: 42,
            logit_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("noise scale must be finite and >= 0, got {0}")]
    NoiseScale(f64),
}

impl SynthConfig {
    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::Config(msg.to_string()));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.k == 0 || self.n_id == 0 || self.n_ood == 0 || self.ood_splits == 0 {
            return bad("k, n_id, n_ood and ood_splits must be >= 1");
        }
        if !(self.id_concentration > 0.0) {
            return bad("id_concentration must be > 0");
        }
        if !(self.ood_offset >= 0.0 && self.ood_offset.is_finite()) {
            return bad("ood_offset must be finite and >= 0");
        }
        if self.logit_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("logit_scale must be finite and > 0");
        }
        Ok(())
    }

    /// Clusters per OOD split: enough for every OOD prompt to own one.
    pub fn clusters_per_split(&self) -> usize {
        if self.m == 0 {
            self.k
        } else {
            self.m.div_ceil(self.ood_splits)
        }
    }

    fn noise_sigma(&self) -> f64 {
        1.0 / (self.id_concentration * libm::sqrt(self.dim as f64))
    }
}

pub fn split_name(s: usize) -> String {
    format!("ood_{s}")
}

struct Sampler {
    rng: Xoshiro256PlusPlus,
    gauss: Gaussian,
    dim: usize,
}

impl Sampler {
    fn unit(&mut self) -> Vec<f64> {
        loop {
            let mut v = self.gauss.vector(&mut self.rng, self.dim);
            if normalize(&mut v) {
                return v;
            }
        }
    }

    fn index(&mut self, n: usize) -> usize {
        ((uniform01(&mut self.rng) * n as f64) as usize).min(n - 1)
    }

    /// `normalize(center + sigma * g)`; the centre itself when `sigma == 0`.
    fn around(&mut self, center: &[f64], sigma: f64) -> Vec<f64> {
        if sigma == 0.0 {
            return center.to_vec();
        }
        loop {
            let mut v: Vec<f64> = center.iter().map(|&c| c + sigma * self.gauss.sample(&mut self.rng)).collect();
            if normalize(&mut v) {
                return v;
            }
        }
    }
}

fn matrix(rows: &[Vec<f64>], dim: usize) -> EmbeddingMatrix {
    let values = rows.iter().flat_map(|r| to_f32(r)).collect();
    EmbeddingMatrix::new(rows.len(), dim, values).expect("rows have length dim")
}

fn mean_direction<'a, I: Iterator<Item = &'a [f32]>>(rows: I, dim: usize) -> Option<Vec<f64>> {
    let mut acc = alloc::vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, &x)| *a += f64::from(x));
        n += 1;
    }
    (n > 0 && normalize(&mut acc)).then_some(acc)
}

pub fn generate(config: &SynthConfig) -> Result<Bundle, SynthError> {
    config.check()?;
    let d = config.dim;
    let sigma = config.noise_sigma();
    let mut s = Sampler { rng: Xoshiro256PlusPlus::seed_from_u64(config.seed), gauss: Gaussian::new(), dim: d };

    let prototypes: Vec<Vec<f64>> = (0..config.k).map(|_| s.unit()).collect();

    let mut labels = Vec::with_capacity(config.n_id);
    let mut id_rows = Vec::with_capacity(config.n_id);
    for i in 0..config.n_id {
        let c = i % config.k;
        labels.push(c as u32);
        id_rows.push(s.around(&prototypes[c], sigma));
    }

    let clusters = config.clusters_per_split();
    let (cos_t, sin_t) = (libm::cos(config.ood_offset), libm::sin(config.ood_offset));
    let mut anchors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.ood_splits);
    for _ in 0..config.ood_splits {
        let mut split = Vec::with_capacity(clusters);
        for _ in 0..clusters {
            let p = &prototypes[s.index(config.k)];
            let mut u = loop {
                let mut u = s.gauss.vector(&mut s.rng, d);
                let along: f64 = u.iter().zip(p).map(|(a, b)| a * b).sum();
                u.iter_mut().zip(p).for_each(|(a, b)| *a -= along * b);
                if normalize(&mut u) {
                    break u;
                }
            };
            u.iter_mut().zip(p).for_each(|(a, &b)| *a = cos_t * b + sin_t * *a);
            normalize(&mut u);
            split.push(u);
        }
        anchors.push(split);
    }

    let mut ood_images = BTreeMap::new();
    for (si, split) in anchors.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..config.n_ood).map(|i| s.around(&split[i % clusters], sigma)).collect();
        ood_images.insert(split_name(si), matrix(&rows, d));
    }

    // Prompt j owns cluster j / S of split j mod S.
    let cluster_prompt = |j: usize| -> Vec<f64> {
        let (si, c) = (j % config.ood_splits, j / config.ood_splits);
        let m = &ood_images[&split_name(si)];
        let members = (c..config.n_ood).step_by(clusters).map(|i| m.row(i));
        mean_direction(members, d).unwrap_or_else(|| anchors[si][c].clone())
    };
    let ood_prompt_rows: Vec<Vec<f64>> = match config.ood_prompt_placement {
        OodPromptPlacement::AtOodMean => (0..config.m).map(cluster_prompt).collect(),
        OodPromptPlacement::Random => (0..config.m).map(|_| s.unit()).collect(),
        OodPromptPlacement::AtIdSuperclass => (0..config.m)
            .map(|j| {
                if j == 0 {
                    let proto32: Vec<Vec<f32>> = prototypes.iter().map(|p| to_f32(p)).collect();
                    mean_direction(proto32.iter().map(Vec::as_slice), d).unwrap_or_else(|| prototypes[0].clone())
                } else {
                    cluster_prompt(j)
                }
            })
            .collect(),
    };

    let mut bundle = Bundle::new(matrix(&id_rows, d), matrix(&prototypes, d), matrix(&ood_prompt_rows, d));
    bundle.ood_images = ood_images;
    bundle.id_labels = Some(labels);
    if let Some(scale) = config.logit_scale {
        let bank = PromptBank::from_matrix(bundle.id_prompts.clone(), config.k).expect("prototypes are unit vectors");
        let logits_of = |m: &EmbeddingMatrix| {
            let rows: Vec<Vec<f64>> = m
                .iter_rows()
                .map(|r| {
                    let sims = bank.similarities(r).expect("generated rows are non-zero");
                    sims.values.iter().map(|c| scale * c).collect()
                })
                .collect();
            matrix(&rows, config.k)
        };
        bundle.logits = Some(Logits {
            id: logits_of(&bundle.id_images),
            ood: bundle.ood_images.iter().map(|(k, m)| (k.clone(), logits_of(m))).collect(),
        });
    }
    let placement = match config.ood_prompt_placement {
        OodPromptPlacement::AtOodMean => "at-ood-mean",
        OodPromptPlacement::Random => "random",
        OodPromptPlacement::AtIdSuperclass => "at-id-superclass",
    };
    let md = &mut bundle.metadata;
    md.insert("generator".into(), "synthetic".into());
    md.insert("seed".into(), config.seed.to_string());
    md.insert("id_concentration".into(), format!("{}", config.id_concentration));
    md.insert("ood_offset".into(), format!("{}", config.ood_offset));
    md.insert("ood_prompt_placement".into(), placement.into());
    if let Some(scale) = config.logit_scale {
        md.insert("logit_scale".into(), format!("{scale}"));
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    /// ID images and every OOD dataset.
    Images,
    /// ID and OOD prompts.
    Prompts,
}

/// Adds Gaussian noise with per-coordinate standard deviation
/// `noise_scale / sqrt(d)` to the targeted matrices, without renormalizing.
///
/// The noise draws do not depend on `noise_scale`, so at a fixed seed a ladder
/// of scales moves every row along one fixed direction.
pub fn perturb_embeddings(bundle: &Bundle, target: PerturbTarget, noise_scale: f64, seed: u64) -> Result<Bundle, SynthError> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(SynthError::NoiseScale(noise_scale));
    }
    let mut out = bundle.clone();
    let target_name = match target {
        PerturbTarget::Images => "images",
        PerturbTarget::Prompts => "prompts",
    };
    out.metadata.insert("perturb_target".into(), target_name.into());
    out.metadata.insert("noise_scale".into(), format!("{noise_scale}"));
    out.metadata.insert("noise_seed".into(), seed.to_string());
    out.metadata.insert("severity".into(), format!("{noise_scale}"));
    if noise_scale == 0.0 {
        return Ok(out);
    }
    let sigma = noise_scale / libm::sqrt(bundle.dim() as f64);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut gauss = Gaussian::new();
    let mut jitter = |m: &mut EmbeddingMatrix| {
        for v in m.values_mut() {
            *v = (f64::from(*v) + sigma * gauss.sample(&mut rng)) as f32;
        }
    };
    match target {
        PerturbTarget::Images => {
            jitter(&mut out.id_images);
            out.ood_images.values_mut().for_each(&mut jitter);
        }
        PerturbTarget::Prompts => {
            jitter(&mut out.id_prompts);
            jitter(&mut out.ood_prompts);
        }
    }
    Ok(out)
}
