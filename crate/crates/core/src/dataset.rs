//! Manifests, emotion label sets, stratified splitting and feature standardization.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSample;
use crate::matrix::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub speaker: String,
    pub duration: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a `path,label,speaker,duration` CSV. Relative audio paths are
    /// resolved against the manifest's directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["path", "label", "speaker", "duration"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Argument(format!(
                "{}: manifest header must be {}, found {}",
                path.display(),
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let mut e: ManifestEntry = row?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            entries.push(e);
        }
        let m = Self { entries };
        m.check_unique()?;
        Ok(m)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Argument(format!("duplicate manifest path {}", e.path.display())));
            }
        }
        Ok(())
    }

    /// Checks path uniqueness and that every label belongs to `set`.
    pub fn validate(&self, set: &EmotionSet) -> Result<()> {
        self.check_unique()?;
        for e in &self.entries {
            set.index(&e.label)?;
        }
        Ok(())
    }

    /// Keeps only entries whose label is in `set`.
    pub fn filter_to(&self, set: &EmotionSet) -> Self {
        Self { entries: self.entries.iter().filter(|e| set.contains(&e.label)).cloned().collect() }
    }
}

/// Every emotion in the EARS corpus, in alphabetical order.
pub const EARS_EMOTIONS: [&str; 23] = [
    "adoration",
    "amazement",
    "amusement",
    "anger",
    "confusion",
    "contentment",
    "cuteness",
    "desire",
    "disappointment",
    "disgust",
    "distress",
    "embarassment",
    "extasy",
    "fear",
    "guilt",
    "interest",
    "neutral",
    "pain",
    "pride",
    "realization",
    "relief",
    "sadness",
    "serenity",
];

const FIVE: [&str; 5] = ["adoration", "anger", "fear", "neutral", "sadness"];
const SEVEN_EXTRA: [&str; 2] = ["disappointment", "pain"];
const TEN_EXTRA: [&str; 3] = ["guilt", "disgust", "distress"];

/// Ordered label list; a label's encoding is its index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionSet {
    labels: Vec<String>,
}

impl EmotionSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Argument("an emotion set needs at least two labels".into()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::Argument(format!("duplicate emotion label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Preset of 5, 7, 10 or 23 emotions.
    pub fn preset(size: usize) -> Result<Self> {
        let labels: Vec<&str> = match size {
            5 => FIVE.to_vec(),
            7 => FIVE.iter().chain(&SEVEN_EXTRA).copied().collect(),
            10 => FIVE.iter().chain(&SEVEN_EXTRA).chain(&TEN_EXTRA).copied().collect(),
            23 => EARS_EMOTIONS.to_vec(),
            other => {
                return Err(Error::Argument(format!("no emotion preset of size {other}; choose 5, 7, 10 or 23")))
            }
        };
        Self::new(labels.into_iter().map(String::from).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            set: self.labels.join(", "),
        })
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }
}

/// Integer codes and the matching one-hot rows.
pub fn label_encode<S: AsRef<str>>(labels: &[S], set: &EmotionSet) -> Result<(Vec<usize>, Matrix)> {
    let codes = labels.iter().map(|l| set.index(l.as_ref())).collect::<Result<Vec<_>>>()?;
    Ok((codes.clone(), one_hot(&codes, set.len())))
}

pub fn one_hot(codes: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(codes.len(), classes);
    for (r, &c) in codes.iter().enumerate() {
        m.set(r, c, 1.0);
    }
    m
}

pub fn label_decode(codes: &[usize], set: &EmotionSet) -> Result<Vec<String>> {
    codes
        .iter()
        .map(|&c| {
            set.name(c)
                .map(String::from)
                .ok_or_else(|| Error::Argument(format!("class index {c} outside emotion set of {}", set.len())))
        })
        .collect()
}

/// Per-class training quotas: `floor(N · ratio)` in total, each class
/// clamped to `[1, n_c − 1]`, leftovers to the largest fractional parts.
pub fn stratified_quotas(class_sizes: &[(String, usize)], ratio: f64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    for (label, count) in class_sizes {
        if *count < 2 {
            return Err(Error::Stratification { label: label.clone(), count: *count });
        }
    }
    let n: usize = class_sizes.iter().map(|(_, c)| c).sum();
    let total = (n as f64 * ratio).floor() as usize;
    let ideal: Vec<f64> = class_sizes.iter().map(|(_, c)| *c as f64 * ratio).collect();
    let mut quotas: Vec<usize> = class_sizes
        .iter()
        .zip(&ideal)
        .map(|((_, c), q)| (q.floor() as usize).clamp(1, c - 1))
        .collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut assigned: usize = quotas.iter().sum();
    for &i in order.iter().cycle().take(order.len() * 2) {
        if assigned >= total {
            break;
        }
        if quotas[i] < class_sizes[i].1 - 1 {
            quotas[i] += 1;
            assigned += 1;
        }
    }
    Ok(quotas)
}

/// Stratified, seeded split into `(train, test)`; both keep manifest order.
pub fn split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if manifest.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_label.entry(e.label.as_str()).or_default().push(i);
    }
    let sizes: Vec<(String, usize)> = by_label.iter().map(|(l, v)| (l.to_string(), v.len())).collect();
    let quotas = stratified_quotas(&sizes, ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; manifest.len()];
    for (mut idx, q) in by_label.into_values().zip(quotas) {
        idx.shuffle(&mut rng);
        for &i in &idx[..q] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (e, t) in manifest.entries.iter().zip(in_train) {
        if t { train.push(e.clone()) } else { test.push(e.clone()) }
    }
    Ok((Manifest::new(train), Manifest::new(test)))
}

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Statistics of each dimension over every observation.
    fn fit_from(dims: usize, observations: &mut dyn Iterator<Item = &[f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut anchor: Option<Vec<f64>> = None;
        let mut sum = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        for obs in observations {
            if obs.len() != dims {
                return Err(Error::shape("standardize_fit", dims, obs.len()));
            }
            // Shifting by the first observation keeps constant dimensions exact.
            let a = anchor.get_or_insert_with(|| obs.to_vec());
            for j in 0..dims {
                let d = obs[j] - a[j];
                sum[j] += d;
                sq[j] += d * d;
            }
            count += 1;
        }
        let anchor = anchor.ok_or(Error::Empty("training features"))?;
        let n = count as f64;
        let mean = (0..dims).map(|j| anchor[j] + sum[j] / n).collect();
        let std = (0..dims)
            .map(|j| {
                let m = sum[j] / n;
                (sq[j] / n - m * m).max(0.0).sqrt().max(STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// One statistic per row of `[rows × frames]` matrices, pooled over all frames.
    pub fn fit_rows(mats: &[&Matrix]) -> Result<Self> {
        let first = mats.first().ok_or(Error::Empty("training features"))?;
        let transposed: Vec<Matrix> = mats.iter().map(|m| m.transpose()).collect();
        let mut it = transposed.iter().flat_map(|t| (0..t.rows).map(move |r| t.row(r)));
        Self::fit_from(first.rows, &mut it)
    }

    pub fn fit_vectors(vectors: &[&[f64]]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::Empty("training features"))?;
        let mut it = vectors.iter().copied();
        Self::fit_from(first.len(), &mut it)
    }

    pub fn apply_rows(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows != self.mean.len() {
            return Err(Error::shape("standardize_apply", self.mean.len(), m.rows));
        }
        let mut out = m.clone();
        for r in 0..m.rows {
            let (mu, sd) = (self.mean[r], self.std[r]);
            out.row_mut(r).iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
        Ok(out)
    }

    pub fn apply_vector(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mean.len() {
            return Err(Error::shape("standardize_apply", self.mean.len(), v.len()));
        }
        Ok(v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }
}

/// Scalers for whichever feature kinds the samples carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mfcc: Option<Scaler>,
    pub xvector: Option<Scaler>,
}

pub fn standardize_fit(train: &[FeatureSample]) -> Result<FeatureScaler> {
    if train.is_empty() {
        return Err(Error::Empty("training features"));
    }
    let mats: Vec<&Matrix> = train.iter().filter_map(|s| s.mfcc.as_ref()).collect();
    let vecs: Vec<&[f64]> = train.iter().filter_map(|s| s.xvector.as_deref()).collect();
    Ok(FeatureScaler {
        mfcc: if mats.is_empty() { None } else { Some(Scaler::fit_rows(&mats)?) },
        xvector: if vecs.is_empty() { None } else { Some(Scaler::fit_vectors(&vecs)?) },
    })
}

pub fn standardize_apply(scaler: &FeatureScaler, samples: &[FeatureSample]) -> Result<Vec<FeatureSample>> {
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            if let (Some(sc), Some(m)) = (&scaler.mfcc, &s.mfcc) {
                out.mfcc = Some(sc.apply_rows(m)?);
            }
            if let (Some(sc), Some(v)) = (&scaler.xvector, &s.xvector) {
                out.xvector = Some(sc.apply_vector(v)?);
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(classes: usize, per: usize) -> Manifest {
        Manifest::new(
            (0..classes * per)
                .map(|i| ManifestEntry {
                    path: PathBuf::from(format!("clip{i}.wav")),
                    label: format!("c{}", i % classes),
                    speaker: format!("s{}", i % 3),
                    duration: 1.0,
                })
                .collect(),
        )
    }

    #[test]
    fn presets_nest() {
        let five = EmotionSet::preset(5).unwrap();
        let seven = EmotionSet::preset(7).unwrap();
        let ten = EmotionSet::preset(10).unwrap();
        let all = EmotionSet::preset(23).unwrap();
        assert_eq!(&seven.labels()[..5], five.labels());
        assert_eq!(&ten.labels()[..7], seven.labels());
        for l in ten.labels() {
            assert!(all.contains(l));
        }
        assert!(EmotionSet::preset(6).is_err());
    }

    #[test]
    fn encoding_examples() {
        let set = EmotionSet::preset(5).unwrap();
        let (codes, hot) = label_encode(&["adoration", "fear"], &set).unwrap();
        assert_eq!(codes, vec![0, 2]);
        assert_eq!(hot.row(1), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(label_decode(&codes, &set).unwrap(), vec!["adoration", "fear"]);
        let err = label_encode(&["joy"], &set).unwrap_err().to_string();
        assert!(err.contains("joy") && err.contains("sadness"));
    }

    #[test]
    fn split_counts_follow_flooring() {
        let m = balanced(7, 107);
        let (train, test) = split(&m, 0.7, 3).unwrap();
        assert_eq!(train.len(), 524);
        assert_eq!(test.len(), 225);
        let mut per = BTreeMap::new();
        for e in &train.entries {
            *per.entry(e.label.clone()).or_insert(0) += 1;
        }
        assert!(per.values().all(|&c| c == 74 || c == 75));
    }

    #[test]
    fn split_rejects_singletons() {
        let mut m = balanced(2, 3);
        m.entries.truncate(5);
        m.entries.push(ManifestEntry { path: "x.wav".into(), label: "lonely".into(), speaker: "s".into(), duration: 1.0 });
        assert!(matches!(split(&m, 0.7, 1), Err(Error::Stratification { .. })));
    }

    #[test]
    fn constant_rows_standardize_to_zero() {
        let a = Matrix::from_vec(2, 3, vec![0.1, 0.1, 0.1, 1.0, 2.0, 3.0]).unwrap();
        let s = Scaler::fit_rows(&[&a]).unwrap();
        let out = s.apply_rows(&a).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0]);
    }
}
