//! Datasets and sampling: the synthetic attribute benchmark, CelebA-style
//! ingestion, balanced splits and task-conditional batch drawing.

mod ingest;
mod probe;
mod synthetic;

pub use ingest::{load_image_folder, IngestStats};
pub use probe::{fit_probe, train_probe, Probe, ProbeConfig};
pub use synthetic::gen_synthetic;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The ordered attribute vocabulary with per-attribute base colors used
/// by the synthetic renderer (RGB in [-1,1]) and a jitter radius.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSet {
    pub names: Vec<String>,
    pub palette: Vec<[f32; 3]>,
    pub jitter: f32,
}

fn rgb(r: u8, g: u8, b: u8) -> [f32; 3] {
    [
        r as f32 / 127.5 - 1.0,
        g as f32 / 127.5 - 1.0,
        b as f32 / 127.5 - 1.0,
    ]
}

impl AttributeSet {
    /// Hair-color palette: base colors are far enough apart that the
    /// inter-class distance exceeds 3x the jitter diameter.
    pub fn default_hair() -> Self {
        AttributeSet {
            names: ["blond", "black", "brown", "gray"].map(String::from).to_vec(),
            palette: vec![rgb(225, 206, 106), rgb(30, 30, 30), rgb(118, 72, 42), rgb(170, 170, 170)],
            jitter: 0.06,
        }
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        // palette is only meaningful for synthetic rendering; ingested
        // datasets just need the vocabulary. Reuse/extend the default hues.
        let base = Self::default_hair();
        let mut palette = Vec::with_capacity(names.len());
        for i in 0..names.len() {
            palette.push(base.palette[i % base.palette.len()]);
        }
        let set = AttributeSet { names, palette, jitter: base.jitter };
        set.validate()?;
        Ok(set)
    }

    pub fn n_domains(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() < 2 {
            return Err(Error::invalid("need at least 2 attributes"));
        }
        if self.names.len() != self.palette.len() {
            return Err(Error::invalid("palette size must match attribute count"));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.names {
            if !seen.insert(n) {
                return Err(Error::invalid(format!("duplicate attribute name {n:?}")));
            }
        }
        Ok(())
    }
}

/// A labeled image collection: images (N,C,H,W) in [-1,1] and one-hot
/// label rows (N,K).
#[derive(Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Tensor<f32>,
    pub attrs: AttributeSet,
    pub split: String,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn n_domains(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn domain_of(&self, i: usize) -> usize {
        let k = self.n_domains();
        let row = &self.labels.data()[i * k..(i + 1) * k];
        row.iter().position(|&v| v == 1.0).expect("one-hot label")
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.n_domains()];
        for i in 0..self.len() {
            c[self.domain_of(i)] += 1;
        }
        c
    }

    /// Copy out the images and labels at the given indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let (c, h, w) = (self.channels(), self.images.shape()[2], self.images.shape()[3]);
        let k = self.n_domains();
        let per = c * h * w;
        let mut images = Tensor::zeros(&[idx.len(), c, h, w]);
        let mut labels = Tensor::zeros(&[idx.len(), k]);
        for (dst, &i) in idx.iter().enumerate() {
            images.data_mut()[dst * per..(dst + 1) * per]
                .copy_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.data_mut()[dst * k..(dst + 1) * k]
                .copy_from_slice(&self.labels.data()[i * k..(i + 1) * k]);
        }
        (images, labels)
    }

    pub fn subset(&self, idx: &[usize], split: &str) -> Dataset {
        let (images, labels) = self.gather(idx);
        Dataset {
            images,
            labels,
            attrs: self.attrs.clone(),
            split: split.to_string(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn indices_of_domain(&self, domain: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domain_of(i) == domain).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.attrs.validate()?;
        if self.images.shape().len() != 4 || self.labels.shape().len() != 2 {
            return Err(Error::shape("dataset tensors", self.images.shape(), self.labels.shape()));
        }
        if self.images.shape()[0] != self.labels.shape()[0] {
            return Err(Error::shape(
                "dataset image/label counts",
                self.images.shape(),
                self.labels.shape(),
            ));
        }
        if self.labels.shape()[1] != self.attrs.n_domains() {
            return Err(Error::invalid("label width differs from attribute count"));
        }
        if self.images.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::invalid("image values must lie in [-1,1]"));
        }
        let k = self.n_domains();
        for i in 0..self.len() {
            let row = &self.labels.data()[i * k..(i + 1) * k];
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!("label row {i} is not one-hot")));
            }
        }
        Ok(())
    }
}

/// One-hot rows all pointing at `domain`.
pub fn onehot_rows(n: usize, k: usize, domain: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[n, k]);
    for i in 0..n {
        t.data_mut()[i * k + domain] = 1.0;
    }
    t
}

/// Stratified split: each domain contributes its proportional share of
/// `n_test` (largest-remainder rounding), drawn uniformly without
/// replacement, so both splits stay balanced.
pub fn split(ds: &Dataset, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_test >= ds.len() {
        return Err(Error::invalid(format!(
            "n_test {n_test} must be smaller than the dataset ({} images)",
            ds.len()
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = ds.counts();
    let total = ds.len();

    // proportional quotas, largest remainder
    let mut quotas: Vec<usize> = Vec::with_capacity(counts.len());
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (d, &c) in counts.iter().enumerate() {
        let exact = n_test as f64 * c as f64 / total as f64;
        let q = exact.floor() as usize;
        quotas.push(q.min(c));
        assigned += quotas[d];
        remainders.push((d, exact - q as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut i = 0;
    while assigned < n_test {
        let d = remainders[i % remainders.len()].0;
        if quotas[d] < counts[d] {
            quotas[d] += 1;
            assigned += 1;
        }
        i += 1;
    }

    let mut test_idx = Vec::with_capacity(n_test);
    let mut train_idx = Vec::with_capacity(total - n_test);
    for d in 0..counts.len() {
        let mut pool = ds.indices_of_domain(d);
        pool.shuffle(&mut rng);
        test_idx.extend_from_slice(&pool[..quotas[d]]);
        train_idx.extend_from_slice(&pool[quotas[d]..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.subset(&train_idx, "train"), ds.subset(&test_idx, "test")))
}

/// A batch of images with their original one-hot labels.
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Tensor<f32>,
    pub domains: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }
}

/// Draws training batches and tasks; enforces the hold-out protocol.
pub struct TaskSampler<'a> {
    data: &'a Dataset,
    held_out: Option<usize>,
    allowed: Vec<usize>,
    task_domains: Vec<usize>,
}

impl<'a> TaskSampler<'a> {
    pub fn new(data: &'a Dataset, held_out: Option<usize>) -> Result<Self> {
        if let Some(h) = held_out {
            if h >= data.n_domains() {
                return Err(Error::invalid(format!("held-out domain {h} out of range")));
            }
        }
        let counts = data.counts();
        let task_domains: Vec<usize> = (0..data.n_domains())
            .filter(|d| Some(*d) != held_out)
            .collect();
        if task_domains.len() < 2 {
            return Err(Error::invalid("meta-training needs at least 2 non-excluded domains"));
        }
        for &d in &task_domains {
            if counts[d] == 0 {
                return Err(Error::invalid(format!(
                    "dataset has no samples for domain {} ({})",
                    d, data.attrs.names[d]
                )));
            }
        }
        let allowed: Vec<usize> = (0..data.len())
            .filter(|&i| Some(data.domain_of(i)) != held_out)
            .collect();
        Ok(TaskSampler { data, held_out, allowed, task_domains })
    }

    pub fn held_out(&self) -> Option<usize> {
        self.held_out
    }

    pub fn task_domains(&self) -> &[usize] {
        &self.task_domains
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    /// m images drawn uniformly (with replacement) from the non-excluded
    /// pool, paired with their original labels.
    pub fn sample_batch(&self, m: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
        if m == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.allowed.is_empty() {
            return Err(Error::invalid("no samples available outside the held-out domain"));
        }
        let idx: Vec<usize> = (0..m)
            .map(|_| self.allowed[rng.gen_range(0..self.allowed.len())])
            .collect();
        let (images, labels) = self.data.gather(&idx);
        let domains = idx.iter().map(|&i| self.data.domain_of(i)).collect();
        Ok(Batch { images, labels, domains })
    }

    /// One non-excluded target domain.
    pub fn sample_task(&self, rng: &mut ChaCha8Rng) -> usize {
        self.task_domains[rng.gen_range(0..self.task_domains.len())]
    }
}
