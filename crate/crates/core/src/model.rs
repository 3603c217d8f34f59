//! A frozen, seeded stand-in for the pretrained classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseTable;

pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    arch: Arch,
    d_s: usize,
    k_s: usize,
    seed: u64,
    hidden_width: Option<usize>,
    weights: Vec<DenseTable>,
    biases: Vec<Vec<f64>>,
}

/// Linear: `W·x + b`. MLP1: `W₂·tanh(W₁·x + b₁) + b₂`.
///
/// Parameters never change after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct SimPretrainedModel {
    arch: Arch,
    d_s: usize,
    k_s: usize,
    seed: u64,
    hidden_width: Option<usize>,
    weights: Vec<DenseTable>,
    biases: Vec<Vec<f64>>,
}

fn gaussian_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseTable {
    let values = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    DenseTable::new(rows, cols, values).expect("finite gaussian draws")
}

fn normalize_rows(t: &mut DenseTable) -> Result<()> {
    for r in 0..t.rows() {
        let norm = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("centroid {r} has zero norm")));
        }
        t.row_mut(r).iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

/// `k_s` unit-norm Gaussian directions in `ℝ^{d_s}`.
pub fn unit_gaussian_rows(rng: &mut ChaCha8Rng, k_s: usize, d_s: usize) -> DenseTable {
    let mut t = gaussian_table(rng, k_s, d_s, 1.0);
    // A zero-norm Gaussian draw has probability zero.
    normalize_rows(&mut t).expect("nonzero gaussian rows");
    t
}

impl SimPretrainedModel {
    /// Builds a model. For `Linear`, `centroids` (if given, `k_s × d_s`)
    /// become the unit-normalized weight rows; otherwise rows are seeded
    /// Gaussian directions. `Mlp1` uses seeded Gaussian layers scaled by
    /// `1/√fan_in` and zero biases.
    pub fn make(
        arch: Arch,
        d_s: usize,
        k_s: usize,
        seed: u64,
        centroids: Option<&DenseTable>,
    ) -> Result<Self> {
        if d_s == 0 || k_s < 2 {
            return Err(Error::invalid(format!(
                "model needs d_s >= 1 and k_s >= 2 (got d_s={d_s}, k_s={k_s})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match arch {
            Arch::Linear => {
                let weights = match centroids {
                    Some(c) => {
                        if c.rows() != k_s || c.cols() != d_s {
                            return Err(Error::invalid(format!(
                                "centroids are {}x{}, expected {k_s}x{d_s}",
                                c.rows(),
                                c.cols()
                            )));
                        }
                        let mut w = c.clone();
                        normalize_rows(&mut w)?;
                        w
                    }
                    None => unit_gaussian_rows(&mut rng, k_s, d_s),
                };
                Ok(Self {
                    arch,
                    d_s,
                    k_s,
                    seed,
                    hidden_width: None,
                    weights: vec![weights],
                    biases: vec![vec![0.0; k_s]],
                })
            }
            Arch::Mlp1 => {
                if centroids.is_some() {
                    return Err(Error::invalid("centroids only apply to the linear model"));
                }
                Self::mlp1(d_s, k_s, DEFAULT_HIDDEN_WIDTH, seed)
            }
        }
    }

    pub fn mlp1(d_s: usize, k_s: usize, hidden_width: usize, seed: u64) -> Result<Self> {
        if d_s == 0 || k_s < 2 || hidden_width == 0 {
            return Err(Error::invalid("mlp1 needs d_s, hidden_width >= 1 and k_s >= 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = gaussian_table(&mut rng, hidden_width, d_s, 1.0 / (d_s as f64).sqrt());
        let w2 = gaussian_table(&mut rng, k_s, hidden_width, 1.0 / (hidden_width as f64).sqrt());
        Ok(Self {
            arch: Arch::Mlp1,
            d_s,
            k_s,
            seed,
            hidden_width: Some(hidden_width),
            weights: vec![w1, w2],
            biases: vec![vec![0.0; hidden_width], vec![0.0; k_s]],
        })
    }

    /// Assembles a model from explicit parameters.
    pub fn from_parts(
        arch: Arch,
        seed: u64,
        weights: Vec<DenseTable>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let first = weights.first().ok_or_else(|| Error::invalid("no weight layers"))?;
        let d_s = first.cols();
        let (k_s, hidden_width) = match arch {
            Arch::Linear => (first.rows(), None),
            Arch::Mlp1 => {
                let w2 = weights
                    .get(1)
                    .ok_or_else(|| Error::invalid("mlp1 needs two weight layers"))?;
                if w2.cols() != first.rows() {
                    return Err(Error::DimensionMismatch {
                        what: "mlp1 hidden width",
                        expected: first.rows(),
                        got: w2.cols(),
                    });
                }
                (w2.rows(), Some(first.rows()))
            }
        };
        let layers = if arch == Arch::Linear { 1 } else { 2 };
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::invalid(format!("{arch:?} expects {layers} layer(s)")));
        }
        for (w, b) in weights.iter().zip(&biases) {
            if w.rows() != b.len() {
                return Err(Error::DimensionMismatch {
                    what: "bias length",
                    expected: w.rows(),
                    got: b.len(),
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        if d_s == 0 || k_s < 2 {
            return Err(Error::invalid("model needs d_s >= 1 and k_s >= 2"));
        }
        Ok(Self {
            arch,
            d_s,
            k_s,
            seed,
            hidden_width,
            weights,
            biases,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn k_s(&self) -> usize {
        self.k_s
    }

    pub fn weights(&self) -> &[DenseTable] {
        &self.weights
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_s {
            return Err(Error::DimensionMismatch {
                what: "model input",
                expected: self.d_s,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.weights[0].right_mul(x)?;
        for (v, b) in h.iter_mut().zip(&self.biases[0]) {
            *v = (*v + b).tanh();
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (w, b, input) = match self.arch {
            Arch::Linear => (&self.weights[0], &self.biases[0], x.to_vec()),
            Arch::Mlp1 => (&self.weights[1], &self.biases[1], self.hidden(x)?),
        };
        let mut out = w.right_mul(&input)?;
        out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        Ok(out)
    }

    /// Gradient of `upstreamᵀ·forward(x)` with respect to `x`.
    pub fn input_grad(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.k_s {
            return Err(Error::DimensionMismatch {
                what: "upstream gradient",
                expected: self.k_s,
                got: upstream.len(),
            });
        }
        match self.arch {
            Arch::Linear => self.weights[0].left_mul(upstream),
            Arch::Mlp1 => {
                let h = self.hidden(x)?;
                let mut gh = self.weights[1].left_mul(upstream)?;
                gh.iter_mut().zip(&h).for_each(|(g, h)| *g *= 1.0 - h * h);
                self.weights[0].left_mul(&gh)
            }
        }
    }
}

impl TryFrom<ModelFile> for SimPretrainedModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let m = Self::from_parts(f.arch, f.seed, f.weights, f.biases)?;
        if m.d_s != f.d_s || m.k_s != f.k_s || m.hidden_width != f.hidden_width {
            return Err(Error::invalid("model header disagrees with its weights"));
        }
        Ok(m)
    }
}

impl From<SimPretrainedModel> for ModelFile {
    fn from(m: SimPretrainedModel) -> Self {
        ModelFile {
            arch: m.arch,
            d_s: m.d_s,
            k_s: m.k_s,
            seed: m.seed,
            hidden_width: m.hidden_width,
            weights: m.weights,
            biases: m.biases,
        }
    }
}
