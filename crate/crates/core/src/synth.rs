//! Synthetic downstream tasks whose classes are unions of source classes.
//!
//! Each downstream class owns a contiguous block of `m` source centroids.
//! A sample is the central `side_t × side_t` crop of one of its class's
//! centroid images plus Gaussian noise, so a frozen linear model with the
//! centroids as weight rows "recognizes" the subclass, and a good label
//! mapping has to spread each downstream column across its block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{unit_gaussian_rows, Arch, SimPretrainedModel};
use crate::numerics::DenseTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassTaskSpec {
    pub k_s: usize,
    pub k_t: usize,
    /// Source subclasses per downstream class.
    pub m: usize,
    pub side_s: usize,
    pub side_t: usize,
    pub noise_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SubclassTaskSpec {
    fn default() -> Self {
        Self {
            k_s: 30,
            k_t: 5,
            m: 3,
            side_s: 16,
            side_t: 8,
            noise_sigma: 0.1,
            n_train: 500,
            n_test: 200,
            seed: 0,
        }
    }
}

impl SubclassTaskSpec {
    pub fn d_s(&self) -> usize {
        self.side_s * self.side_s
    }

    pub fn d_t(&self) -> usize {
        self.side_t * self.side_t
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_s", self.k_s),
            ("k_t", self.k_t),
            ("m", self.m),
            ("side_s", self.side_s),
            ("side_t", self.side_t),
            ("n_train", self.n_train),
            ("n_test", self.n_test),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.k_s < 2 {
            return Err(Error::invalid("k_s must be at least 2"));
        }
        if self.m * self.k_t > self.k_s {
            return Err(Error::invalid(format!(
                "m*k_t = {} exceeds k_s = {}",
                self.m * self.k_t,
                self.k_s
            )));
        }
        if self.side_t > self.side_s {
            return Err(Error::invalid(format!(
                "side_t = {} exceeds side_s = {}",
                self.side_t, self.side_s
            )));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Downstream class of each source label, `None` outside the blocks.
    pub fn true_assignment(&self) -> Vec<Option<usize>> {
        (0..self.k_s)
            .map(|s| (s < self.m * self.k_t).then_some(s / self.m))
            .collect()
    }
}

/// Downstream samples (`n × d_t`) with labels in `0..k_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseTable,
    labels: Vec<usize>,
    k_t: usize,
}

impl Dataset {
    pub fn new(inputs: DenseTable, labels: Vec<usize>, k_t: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k_t) {
            return Err(Error::IndexOutOfRange { index: y, len: k_t });
        }
        Ok(Self { inputs, labels, k_t })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d_t(&self) -> usize {
        self.inputs.cols()
    }

    pub fn k_t(&self) -> usize {
        self.k_t
    }

    pub fn inputs(&self) -> &DenseTable {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTask {
    pub train: Dataset,
    pub test: Dataset,
    pub model: SimPretrainedModel,
    pub true_assignment: Vec<Option<usize>>,
}

/// Row-major indices of the centred `side_t × side_t` window inside a
/// `side_s × side_s` image.
pub fn central_window(side_s: usize, side_t: usize) -> Vec<usize> {
    let off = (side_s - side_t) / 2;
    (0..side_t)
        .flat_map(|r| (0..side_t).map(move |c| (r + off) * side_s + c + off))
        .collect()
}

fn draw_split(
    rng: &mut ChaCha8Rng,
    spec: &SubclassTaskSpec,
    centroids: &DenseTable,
    window: &[usize],
    n: usize,
) -> Result<Dataset> {
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut values = Vec::with_capacity(n * window.len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.k_t;
        let source = class * spec.m + rng.random_range(0..spec.m);
        let image = centroids.row(source);
        for &p in window {
            let eps = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            values.push(image[p] + eps);
        }
        labels.push(class);
    }
    Dataset::new(DenseTable::new(n, window.len(), values)?, labels, spec.k_t)
}

pub fn generate_task(spec: &SubclassTaskSpec) -> Result<GeneratedTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids = unit_gaussian_rows(&mut rng, spec.k_s, spec.d_s());
    let model = SimPretrainedModel::make(Arch::Linear, spec.d_s(), spec.k_s, spec.seed, Some(&centroids))?;
    let window = central_window(spec.side_s, spec.side_t);
    let train = draw_split(&mut rng, spec, &centroids, &window, spec.n_train)?;
    let test = draw_split(&mut rng, spec, &centroids, &window, spec.n_test)?;
    Ok(GeneratedTask {
        train,
        test,
        model,
        true_assignment: spec.true_assignment(),
    })
}
