//! Synthetic long-tailed dense-classification data.
//!
//! Category `j` receives `max(1, round(n_max * (j + 1)^(-a)))` positives drawn
//! from an isotropic Gaussian around its own mean; a background cluster at the
//! origin supplies `bg_ratio` negatives per positive. Every classifier is
//! one-vs-rest, so for category `j` all samples not labelled `j` are negatives.

use std::fmt;
use std::io::{self, Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for background samples.
pub const BACKGROUND: i32 = -1;

const MEANS_STREAM: u64 = 0x6d65_616e_7300_0000;
const BACKGROUND_STREAM: u64 = 0x6267_0000_0000_0000;
const EVAL_STREAM: u64 = 0x6576_616c_0000_0000;

/// Mixes a base seed with a stream id (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Rare,
    Common,
    Frequent,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Rare, Group::Common, Group::Frequent];

    pub fn name(self) -> &'static str {
        match self {
            Group::Rare => "rare",
            Group::Common => "common",
            Group::Frequent => "frequent",
        }
    }

    fn code(self) -> char {
        match self {
            Group::Rare => 'r',
            Group::Common => 'c',
            Group::Frequent => 'f',
        }
    }

    fn from_code(c: &str) -> Option<Self> {
        match c {
            "r" => Some(Group::Rare),
            "c" => Some(Group::Common),
            "f" => Some(Group::Frequent),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Count thresholds for the rare / common / frequent split (inclusive upper bounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupThresholds {
    pub rare_max: usize,
    pub common_max: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            rare_max: 10,
            common_max: 100,
        }
    }
}

impl GroupThresholds {
    pub fn classify(&self, count: usize) -> Group {
        if count <= self.rare_max {
            Group::Rare
        } else if count <= self.common_max {
            Group::Common
        } else {
            Group::Frequent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_categories: usize,
    pub zipf_exponent: f64,
    pub n_max: usize,
    pub bg_ratio: f64,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub groups: GroupThresholds,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_categories: 50,
            zipf_exponent: 1.2,
            n_max: 500,
            bg_ratio: 20.0,
            feature_dim: 64,
            class_separation: 4.0,
            noise_std: 1.0,
            seed: 0,
            groups: GroupThresholds::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 1 {
            return Err(Error::param("num_categories", "must be >= 1"));
        }
        if self.n_max < 1 {
            return Err(Error::param("n_max", "must be >= 1"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::param("zipf_exponent", format!("{} must be >= 0", self.zipf_exponent)));
        }
        if !(self.bg_ratio >= 0.0 && self.bg_ratio.is_finite()) {
            return Err(Error::param("bg_ratio", format!("{} must be >= 0", self.bg_ratio)));
        }
        if self.feature_dim < 1 {
            return Err(Error::param("feature_dim", "must be >= 1"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::param("class_separation", "must be > 0"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be > 0"));
        }
        if self.groups.rare_max > self.groups.common_max {
            return Err(Error::param("groups", "rare_max must not exceed common_max"));
        }
        Ok(())
    }

    pub fn counts(&self) -> Result<Vec<usize>> {
        zipf_counts(self.num_categories, self.zipf_exponent, self.n_max)
    }

    /// Group of every category, judged on the full training counts.
    pub fn category_groups(&self) -> Result<Vec<Group>> {
        Ok(self.counts()?.into_iter().map(|c| self.groups.classify(c)).collect())
    }
}

/// `counts[j] = max(1, round(n_max * (j + 1)^(-exponent)))`.
pub fn zipf_counts(num_categories: usize, exponent: f64, n_max: usize) -> Result<Vec<usize>> {
    if num_categories < 1 {
        return Err(Error::param("num_categories", "must be >= 1"));
    }
    if n_max < 1 {
        return Err(Error::param("n_max", "must be >= 1"));
    }
    if !(exponent >= 0.0 && exponent.is_finite()) {
        return Err(Error::param("zipf_exponent", format!("{exponent} must be >= 0")));
    }
    Ok((0..num_categories)
        .map(|j| {
            let c = (n_max as f64 * ((j + 1) as f64).powf(-exponent)).round() as usize;
            c.max(1)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    /// `N x feature_dim`.
    pub features: Array2<f64>,
    /// Category index, or [`BACKGROUND`].
    pub labels: Vec<i32>,
    /// Positives per category in this dataset.
    pub counts: Vec<usize>,
    /// Frequency group per category, from the spec's training counts.
    pub groups: Vec<Group>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_background(&self) -> usize {
        self.labels.iter().filter(|&&l| l == BACKGROUND).count()
    }

    /// Writes the binary container: a text header echoing the spec, then
    /// little-endian `i32` labels and `f64` features (row-major).
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let s = &self.spec;
        writeln!(
            w,
            "efl-dataset v1 num_categories={} zipf_exponent={:?} n_max={} bg_ratio={:?} feature_dim={} class_separation={:?} noise_std={:?} seed={} rare_max={} common_max={} samples={}",
            s.num_categories,
            s.zipf_exponent,
            s.n_max,
            s.bg_ratio,
            s.feature_dim,
            s.class_separation,
            s.noise_std,
            s.seed,
            s.groups.rare_max,
            s.groups.common_max,
            self.len()
        )?;
        let counts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        writeln!(w, "counts {}", counts.join(" "))?;
        let groups: String = self.groups.iter().map(|g| g.code()).collect();
        writeln!(w, "groups {groups}")?;
        let mut buf = Vec::with_capacity(self.len() * (4 + 8 * self.feature_dim()));
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        for v in self.features.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::parse(1, 1, e.to_string()))?;
        let mut offset = 0;
        let mut next_line = |lineno: usize| -> Result<String> {
            let end = bytes[offset..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::parse(lineno, 1, "truncated header"))?;
            let line = std::str::from_utf8(&bytes[offset..offset + end])
                .map_err(|e| Error::parse(lineno, 1, e.to_string()))?
                .to_string();
            offset += end + 1;
            Ok(line)
        };
        let header = next_line(1)?;
        let counts_line = next_line(2)?;
        let groups_line = next_line(3)?;

        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.first() != Some(&"efl-dataset") {
            return Err(Error::parse(1, 1, "expected `efl-dataset`"));
        }
        if fields.get(1) != Some(&"v1") {
            return Err(Error::parse(1, 2, "unsupported version"));
        }
        let keys = [
            "num_categories",
            "zipf_exponent",
            "n_max",
            "bg_ratio",
            "feature_dim",
            "class_separation",
            "noise_std",
            "seed",
            "rare_max",
            "common_max",
            "samples",
        ];
        if fields.len() != 2 + keys.len() {
            return Err(Error::parse(1, 3, "wrong number of header fields"));
        }
        let mut vals = Vec::with_capacity(keys.len());
        for (i, key) in keys.iter().enumerate() {
            let v = fields[2 + i]
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::parse(1, 3 + i, format!("expected `{key}=`")))?;
            vals.push(v);
        }
        fn int<T: std::str::FromStr>(v: &str, field: usize) -> Result<T> {
            v.parse().map_err(|_| Error::parse(1, field, format!("invalid integer `{v}`")))
        }
        fn float(v: &str, field: usize) -> Result<f64> {
            v.parse().map_err(|_| Error::parse(1, field, format!("invalid number `{v}`")))
        }
        let spec = DatasetSpec {
            num_categories: int(vals[0], 3)?,
            zipf_exponent: float(vals[1], 4)?,
            n_max: int(vals[2], 5)?,
            bg_ratio: float(vals[3], 6)?,
            feature_dim: int(vals[4], 7)?,
            class_separation: float(vals[5], 8)?,
            noise_std: float(vals[6], 9)?,
            seed: int(vals[7], 10)?,
            groups: GroupThresholds {
                rare_max: int(vals[8], 11)?,
                common_max: int(vals[9], 12)?,
            },
        };
        spec.validate().map_err(|e| Error::parse(1, 3, e.to_string()))?;
        let samples: usize = int(vals[10], 13)?;

        let counts = counts_line
            .strip_prefix("counts ")
            .ok_or_else(|| Error::parse(2, 1, "expected `counts`"))?
            .split_whitespace()
            .enumerate()
            .map(|(i, v)| v.parse::<usize>().map_err(|_| Error::parse(2, i + 2, "invalid count")))
            .collect::<Result<Vec<_>>>()?;
        let groups = groups_line
            .strip_prefix("groups ")
            .ok_or_else(|| Error::parse(3, 1, "expected `groups`"))?
            .chars()
            .enumerate()
            .map(|(i, c)| {
                Group::from_code(&c.to_string()).ok_or_else(|| Error::parse(3, i + 2, "invalid group code"))
            })
            .collect::<Result<Vec<_>>>()?;
        if counts.len() != spec.num_categories || groups.len() != spec.num_categories {
            return Err(Error::parse(2, 1, "category count does not match header"));
        }

        let d = spec.feature_dim;
        let payload = &bytes[offset..];
        if payload.len() != samples * (4 + 8 * d) {
            return Err(Error::parse(4, 1, format!("expected {} payload bytes, found {}", samples * (4 + 8 * d), payload.len())));
        }
        let (label_bytes, feature_bytes) = payload.split_at(samples * 4);
        let labels: Vec<i32> = label_bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let features: Vec<f64> = feature_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let features = Array2::from_shape_vec((samples, d), features)
            .map_err(|e| Error::parse(4, 1, e.to_string()))?;
        Ok(Self {
            spec,
            features,
            labels,
            counts,
            groups,
        })
    }

    /// One row per sample: `label,f0,f1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.feature_dim()).map(|k| format!("f{k}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (label, row) in self.labels.iter().zip(self.features.rows()) {
            write!(w, "{label}")?;
            for v in row {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn class_means(spec: &DatasetSpec) -> Array2<f64> {
    let (c, d) = (spec.num_categories, spec.feature_dim);
    // Pairwise distance between unit-basis means scaled by sep/sqrt(2) is sep.
    let radius = spec.class_separation / std::f64::consts::SQRT_2;
    let mut means = Array2::zeros((c, d));
    if d >= c {
        for j in 0..c {
            means[[j, j]] = radius;
        }
    } else {
        let mut rng = seeded_rng(spec.seed, MEANS_STREAM);
        for mut row in means.rows_mut() {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (dst, x) in row.iter_mut().zip(v) {
                *dst = radius * x / norm;
            }
        }
    }
    means
}

fn draw_cluster(center: Option<ndarray::ArrayView1<'_, f64>>, n: usize, d: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            let mu = center.map_or(0.0, |c| c[k]);
            out.push(mu + noise * z);
        }
    }
    out
}

fn generate(spec: &DatasetSpec, counts: Vec<usize>, sample_seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let d = spec.feature_dim;
    let means = class_means(spec);
    let total_pos: usize = counts.iter().sum();
    let n_bg = (spec.bg_ratio * total_pos as f64).round() as usize;

    let shards: Vec<Vec<f64>> = (0..=spec.num_categories)
        .into_par_iter()
        .map(|j| {
            if j < spec.num_categories {
                let mut rng = seeded_rng(sample_seed, j as u64);
                draw_cluster(Some(means.row(j)), counts[j], d, spec.noise_std, &mut rng)
            } else {
                let mut rng = seeded_rng(sample_seed, BACKGROUND_STREAM);
                draw_cluster(None, n_bg, d, spec.noise_std, &mut rng)
            }
        })
        .collect();

    let mut labels = Vec::with_capacity(total_pos + n_bg);
    for (j, &c) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(j as i32).take(c));
    }
    labels.extend(std::iter::repeat(BACKGROUND).take(n_bg));
    let flat: Vec<f64> = shards.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((labels.len(), d), flat)
        .map_err(|e| Error::Contract(e.to_string()))?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        features,
        labels,
        counts,
        groups: spec.category_groups()?,
    })
}

/// Training split: category counts follow [`zipf_counts`].
pub fn make_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    generate(spec, spec.counts()?, spec.seed)
}

/// Held-out split from the same distribution with a derived seed; each
/// category keeps `min(count, cap)` positives, background scales with it.
pub fn make_eval_split(spec: &DatasetSpec, cap: usize) -> Result<SyntheticDataset> {
    if cap < 1 {
        return Err(Error::param("eval_cap", "must be >= 1"));
    }
    let counts = spec.counts()?.into_iter().map(|c| c.min(cap)).collect();
    generate(spec, counts, derive_seed(spec.seed, EVAL_STREAM))
}

/// Repeat factor `max(1, sqrt(t / f_c))` per category, with `f_c` the fraction
/// of the `num_samples` samples that are positives of category `c`.
pub fn repeat_factors(counts: &[usize], num_samples: usize, threshold: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::param("threshold", format!("{threshold} is not in (0, 1]")));
    }
    if counts.iter().any(|&c| c == 0) || num_samples == 0 {
        return Err(Error::Contract("repeat factors need counts >= 1".into()));
    }
    Ok(counts
        .iter()
        .map(|&c| frequency_factor(c as f64 / num_samples as f64, threshold))
        .collect())
}

/// `max(1, sqrt(t / f))`.
pub fn frequency_factor(frequency: f64, threshold: f64) -> f64 {
    (threshold / frequency).sqrt().max(1.0)
}

/// Epoch index streams over a dataset.
#[derive(Debug, Clone)]
pub enum Sampler {
    /// A fresh permutation of all samples each epoch.
    Random { len: usize, seed: u64 },
    /// Each sample appears `floor(r) + Bernoulli(frac(r))` times per epoch.
    RepeatFactor { factors: Vec<f64>, seed: u64 },
}

impl Sampler {
    pub fn random(dataset: &SyntheticDataset, seed: u64) -> Self {
        Sampler::Random {
            len: dataset.len(),
            seed,
        }
    }

    pub fn repeat_factor(dataset: &SyntheticDataset, threshold: f64, seed: u64) -> Result<Self> {
        let per_category = repeat_factors(&dataset.counts, dataset.len(), threshold)?;
        let factors = dataset
            .labels
            .iter()
            .map(|&l| if l == BACKGROUND { 1.0 } else { per_category[l as usize] })
            .collect();
        Ok(Sampler::RepeatFactor { factors, seed })
    }

    /// Expected number of indices per epoch.
    pub fn expected_len(&self) -> f64 {
        match self {
            Sampler::Random { len, .. } => *len as f64,
            Sampler::RepeatFactor { factors, .. } => factors.iter().sum(),
        }
    }

    pub fn epoch(&self, epoch: u64) -> Vec<usize> {
        use rand::seq::SliceRandom;
        match self {
            Sampler::Random { len, seed } => {
                let mut rng = seeded_rng(*seed, epoch);
                let mut idx: Vec<usize> = (0..*len).collect();
                idx.shuffle(&mut rng);
                idx
            }
            Sampler::RepeatFactor { factors, seed } => {
                let mut rng = seeded_rng(*seed, epoch);
                let mut idx = Vec::new();
                for (i, &r) in factors.iter().enumerate() {
                    let whole = r.floor();
                    let mut copies = whole as usize;
                    if rng.random::<f64>() < r - whole {
                        copies += 1;
                    }
                    idx.extend(std::iter::repeat(i).take(copies));
                }
                idx.shuffle(&mut rng);
                idx
            }
        }
    }
}

/// `log10(pos / neg)` per category, with `neg = N - count` (one-vs-rest).
pub fn imbalance_stats(dataset: &SyntheticDataset) -> Result<Vec<f64>> {
    log_ratios(&dataset.counts, dataset.len())
}

pub fn log_ratios(counts: &[usize], num_samples: usize) -> Result<Vec<f64>> {
    if num_samples == 0 {
        return Err(Error::Contract("empty dataset".into()));
    }
    counts
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if c == 0 || c >= num_samples {
                Err(Error::Contract(format!(
                    "category {j} needs at least one positive and one negative"
                )))
            } else {
                Ok((c as f64 / (num_samples - c) as f64).log10())
            }
        })
        .collect()
}
