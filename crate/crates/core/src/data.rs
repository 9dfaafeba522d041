//! Multi-view datasets: loading, synthesis, splitting, standardization and
//! the corruption harnesses used in robustness experiments.
//!
//! # On-disk layout
//!
//! A manifest (TOML) names the class count, a label file and one matrix file
//! per view. Paths are relative to the manifest's directory.
//!
//! ```toml
//! num_classes = 4
//! labels = "labels.txt"
//!
//! [[views]]
//! name = "view0"
//! path = "view0.tsv"
//! ```
//!
//! Matrix files hold one sample per line with cells separated by tabs,
//! commas or spaces. Label files hold one class index per line. Blank lines
//! and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Tensor>,
    labels: Vec<usize>,
    classes: usize,
    names: Vec<String>,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<Tensor>,
        labels: Vec<usize>,
        classes: usize,
        names: Vec<String>,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::contract("dataset needs at least one view"));
        }
        if names.len() != views.len() {
            return Err(Error::contract("one name per view required"));
        }
        if classes < 2 {
            return Err(Error::contract("dataset needs at least two classes"));
        }
        for (name, v) in names.iter().zip(&views) {
            if v.rows() != labels.len() {
                return Err(Error::contract(format!(
                    "view `{name}` has {} rows but there are {} labels",
                    v.rows(),
                    labels.len()
                )));
            }
            if v.cols() == 0 {
                return Err(Error::contract(format!("view `{name}` has no columns")));
            }
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            views,
            labels,
            classes,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Tensor::cols).collect()
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn view(&self, i: usize) -> &Tensor {
        &self.views[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Rows `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            views: self.views.iter().map(|v| v.select_rows(indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            names: self.names.clone(),
        }
    }

    /// Share of the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub labels: PathBuf,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub path: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_matrix(path: &Path) -> Result<Tensor> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in data_lines(&text) {
        let row = content
            .split([',', '\t', ' '])
            .filter(|s| !s.is_empty())
            .map(|cell| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        detail: format!("unparseable cell `{cell}`"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    detail: format!("expected {} cells, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: "no data rows".into(),
        });
    }
    Tensor::from_rows(&rows)
}

fn parse_labels(path: &Path, classes: usize) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    for (line, content) in data_lines(&text) {
        let err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let y: usize = content
            .parse()
            .map_err(|_| err(format!("unparseable label `{content}`")))?;
        if y >= classes {
            return Err(err(format!("label {y} out of range for {classes} classes")));
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: "label file is empty".into(),
        });
    }
    Ok(labels)
}

/// Load and validate the dataset described by a manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let text = read_text(manifest_path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let labels_path = base.join(&manifest.labels);
    let labels = parse_labels(&labels_path, manifest.num_classes)?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let path = base.join(&entry.path);
        let m = parse_matrix(&path)?;
        if m.rows() != labels.len() {
            return Err(Error::Parse {
                path,
                line: 0,
                detail: format!(
                    "{} rows but {} has {} labels",
                    m.rows(),
                    labels_path.display(),
                    labels.len()
                ),
            });
        }
        views.push(m);
    }
    let names = manifest.views.into_iter().map(|v| v.name).collect();
    MultiViewDataset::new(views, labels, manifest.num_classes, names)
}

/// Write `ds` as a manifest plus text files into `dir`; returns the manifest path.
pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write =
        |path: PathBuf, body: String| fs::write(&path, body).map_err(|e| Error::io(&path, e));
    let mut entries = Vec::new();
    for (name, view) in ds.names.iter().zip(&ds.views) {
        let file = PathBuf::from(format!("{name}.tsv"));
        let mut body = String::new();
        for r in 0..view.rows() {
            let cells: Vec<String> = view.row_slice(r).iter().map(|x| x.to_string()).collect();
            body.push_str(&cells.join("\t"));
            body.push('\n');
        }
        write(dir.join(&file), body)?;
        entries.push(ViewEntry {
            name: name.clone(),
            path: file,
        });
    }
    let mut labels = String::new();
    for y in &ds.labels {
        let _ = writeln!(labels, "{y}");
    }
    write(dir.join("labels.txt"), labels)?;
    let manifest = Manifest {
        num_classes: ds.classes,
        labels: PathBuf::from("labels.txt"),
        views: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join("manifest.toml");
    write(path.clone(), text)?;
    Ok(path)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples: usize,
    pub dims: Vec<usize>,
    /// Scale of the class means in the latent space.
    pub separation: f64,
    /// Fraction of each view's columns that carry only noise.
    pub nuisance_ratio: f64,
    pub latent_dim: usize,
    /// Std of the per-view observation noise on signal columns.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples: 1000,
            dims: vec![20, 30, 25],
            separation: 1.5,
            nuisance_ratio: 0.3,
            latent_dim: 8,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Class-conditional Gaussian latent `z ~ N(mu_y, I)` observed through a
/// random affine map per view, with pure-noise nuisance columns.
pub fn synthesize(spec: &SynthSpec) -> Result<MultiViewDataset> {
    if spec.classes < 2
        || spec.samples == 0
        || spec.dims.is_empty()
        || spec.dims.contains(&0)
        || spec.latent_dim == 0
    {
        return Err(Error::contract(
            "synthesize needs q >= 2, n >= 1, and positive widths",
        ));
    }
    if !(0.0..1.0).contains(&spec.nuisance_ratio)
        || !(spec.separation >= 0.0)
        || !(spec.noise_std >= 0.0)
    {
        return Err(Error::contract(
            "nuisance ratio must lie in [0, 1) and scales must be non-negative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.latent_dim;
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..k).map(|_| spec.separation * normal(&mut rng)).collect())
        .collect();
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let latent: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| means[y].iter().map(|m| m + normal(&mut rng)).collect())
        .collect();

    let scale = 1.0 / (k as f64).sqrt();
    let mut views = Vec::with_capacity(spec.dims.len());
    for &d in &spec.dims {
        let signal = ((d as f64) * (1.0 - spec.nuisance_ratio)).round().max(1.0) as usize;
        let a: Vec<f64> = (0..signal * k).map(|_| scale * normal(&mut rng)).collect();
        let b: Vec<f64> = (0..signal).map(|_| normal(&mut rng)).collect();
        let mut t = Tensor::zeros(spec.samples, d);
        for (r, z) in latent.iter().enumerate() {
            let row = t.row_slice_mut(r);
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = if j < signal {
                    let proj: f64 = a[j * k..(j + 1) * k]
                        .iter()
                        .zip(z)
                        .map(|(w, x)| w * x)
                        .sum();
                    proj + b[j] + spec.noise_std * normal(&mut rng)
                } else {
                    normal(&mut rng)
                };
            }
        }
        views.push(t);
    }
    let names = (0..spec.dims.len()).map(|i| format!("view{i}")).collect();
    MultiViewDataset::new(views, labels, spec.classes, names)
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: MultiViewDataset,
    pub test: MultiViewDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified split; each class contributes `round(fraction * count)`
/// training rows.
pub fn split(ds: &MultiViewDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for k in 0..ds.classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == k).collect();
        members.shuffle(&mut rng);
        let take = (train_fraction * members.len() as f64).round() as usize;
        train_indices.extend_from_slice(&members[..take]);
        test_indices.extend_from_slice(&members[take..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        train: ds.select(&train_indices),
        test: ds.select(&test_indices),
        train_indices,
        test_indices,
    })
}

/// Per-view, per-column statistics from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl Standardizer {
    pub fn fit(ds: &MultiViewDataset) -> Self {
        let n = ds.len() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for view in &ds.views {
            let d = view.cols();
            let mut mu = vec![0.0; d];
            for r in 0..view.rows() {
                for (m, x) in mu.iter_mut().zip(view.row_slice(r)) {
                    *m += x;
                }
            }
            mu.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for r in 0..view.rows() {
                for ((s, x), m) in var.iter_mut().zip(view.row_slice(r)).zip(&mu) {
                    *s += (x - m) * (x - m);
                }
            }
            stds.push(var.into_iter().map(|s| (s / n).sqrt()).collect());
            means.push(mu);
        }
        Self { means, stds }
    }

    /// z-score each column; columns with zero training variance become 0.
    pub fn apply(&self, ds: &MultiViewDataset) -> Result<MultiViewDataset> {
        if self.means.len() != ds.view_count() {
            return Err(Error::contract(
                "standardizer fitted on a different view count",
            ));
        }
        let mut views = Vec::with_capacity(ds.view_count());
        for ((view, mu), sd) in ds.views.iter().zip(&self.means).zip(&self.stds) {
            if view.cols() != mu.len() {
                return Err(Error::contract(
                    "standardizer fitted on different view widths",
                ));
            }
            let mut t = view.clone();
            for r in 0..t.rows() {
                for ((x, m), s) in t.row_slice_mut(r).iter_mut().zip(mu).zip(sd) {
                    *x = if *s > 0.0 { (*x - m) / s } else { 0.0 };
                }
            }
            views.push(t);
        }
        Ok(MultiViewDataset {
            views,
            ..ds.clone()
        })
    }
}

pub fn standardize(
    train: &MultiViewDataset,
    test: &MultiViewDataset,
) -> Result<(MultiViewDataset, MultiViewDataset, Standardizer)> {
    let stats = Standardizer::fit(train);
    Ok((stats.apply(train)?, stats.apply(test)?, stats))
}

/// Which views of a selected instance receive noise.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSelection {
    /// `round(v / 2)` views drawn per instance.
    #[default]
    RandomHalf,
    All,
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub fraction: f64,
    pub sigma: f64,
    pub views: ViewSelection,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictSpec {
    pub fraction: f64,
    /// Corrupt this view on every selected instance; `None` draws one per instance.
    pub view: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionSpec {
    GaussianNoise(NoiseSpec),
    ViewMisalign(ConflictSpec),
}

impl CorruptionSpec {
    pub fn apply(&self, ds: &MultiViewDataset) -> Result<(MultiViewDataset, CorruptionMask)> {
        match self {
            CorruptionSpec::GaussianNoise(s) => inject_noise(ds, s),
            CorruptionSpec::ViewMisalign(s) => inject_conflict(ds, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub instance: usize,
    pub view: usize,
    /// Source row for misalignment.
    pub donor: Option<usize>,
}

/// Every (instance, view) pair that a corruption changed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorruptionMask {
    pub samples: usize,
    pub entries: Vec<MaskEntry>,
}

impl CorruptionMask {
    pub fn clean(samples: usize) -> Self {
        Self {
            samples,
            entries: Vec::new(),
        }
    }

    /// Per-instance flag.
    pub fn instances(&self) -> Vec<bool> {
        let mut out = vec![false; self.samples];
        for e in &self.entries {
            out[e.instance] = true;
        }
        out
    }

    pub fn corrupted_count(&self) -> usize {
        self.instances().iter().filter(|&&b| b).count()
    }

    /// Tab-separated `instance view donor` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("instance\tview\tdonor\n");
        for e in &self.entries {
            let donor = e.donor.map_or_else(|| "-".to_string(), |d| d.to_string());
            let _ = writeln!(s, "{}\t{}\t{}", e.instance, e.view, donor);
        }
        s
    }
}

fn pick_instances(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!(
            "corruption fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let count = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(count);
    idx.sort_unstable();
    Ok(idx)
}

/// Add `N(0, sigma^2)` to the chosen views of a random subset of instances.
pub fn inject_noise(
    ds: &MultiViewDataset,
    spec: &NoiseSpec,
) -> Result<(MultiViewDataset, CorruptionMask)> {
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::contract(
            "noise sigma must be finite and non-negative",
        ));
    }
    let v = ds.view_count();
    if let ViewSelection::Fixed(list) = &spec.views {
        if list.is_empty() || list.iter().any(|&i| i >= v) {
            return Err(Error::contract(format!(
                "fixed noise views {list:?} invalid for {v} views"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let chosen = pick_instances(ds.len(), spec.fraction, &mut rng)?;
    let mut out = ds.clone();
    let mut mask = CorruptionMask::clean(ds.len());
    let half = ((v as f64) / 2.0).round().max(1.0) as usize;
    for &i in &chosen {
        let views: Vec<usize> = match &spec.views {
            ViewSelection::All => (0..v).collect(),
            ViewSelection::Fixed(list) => list.clone(),
            ViewSelection::RandomHalf => {
                let mut all: Vec<usize> = (0..v).collect();
                all.shuffle(&mut rng);
                all.truncate(half);
                all.sort_unstable();
                all
            }
        };
        for j in views {
            for x in out.views[j].row_slice_mut(i) {
                *x += spec.sigma * normal(&mut rng);
            }
            mask.entries.push(MaskEntry {
                instance: i,
                view: j,
                donor: None,
            });
        }
    }
    Ok((out, mask))
}

/// Replace one view of each selected instance with the same view of a
/// random instance from a different class.
pub fn inject_conflict(
    ds: &MultiViewDataset,
    spec: &ConflictSpec,
) -> Result<(MultiViewDataset, CorruptionMask)> {
    let v = ds.view_count();
    if let Some(j) = spec.view {
        if j >= v {
            return Err(Error::contract(format!(
                "conflict view {j} out of range for {v} views"
            )));
        }
    }
    let first = ds.labels.first().copied();
    if ds.labels.iter().all(|&y| Some(y) == first) && spec.fraction > 0.0 {
        return Err(Error::contract(
            "cannot misalign a dataset with a single class",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let chosen = pick_instances(ds.len(), spec.fraction, &mut rng)?;
    let mut out = ds.clone();
    let mut mask = CorruptionMask::clean(ds.len());
    for &i in &chosen {
        let view = spec.view.unwrap_or_else(|| rng.random_range(0..v));
        let donors: Vec<usize> = (0..ds.len())
            .filter(|&d| ds.labels[d] != ds.labels[i])
            .collect();
        let donor = donors[rng.random_range(0..donors.len())];
        let src = ds.views[view].row_slice(donor).to_vec();
        out.views[view].row_slice_mut(i).copy_from_slice(&src);
        mask.entries.push(MaskEntry {
            instance: i,
            view,
            donor: Some(donor),
        });
    }
    Ok((out, mask))
}
