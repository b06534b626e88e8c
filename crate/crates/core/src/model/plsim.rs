//! Pseudo-label semantic interaction: text-conditioned scale and bias.
//!
//! The text encoder is a frozen stub: every `(prefix, category)` string maps
//! to a fixed unit vector drawn from a seeded generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{self, LabelMatrix, Vocabulary};
use crate::nn::Mlp;
use crate::ssm::Modality;
use crate::tensor::params::{stable_hash, ParamStore};
use crate::tensor::{Result, Tensor};

pub const AUDIO_PREFIX: &str = "this is a sound of";
pub const VISUAL_PREFIX: &str = "A photo of";

pub fn prefix(m: Modality) -> &'static str {
    match m {
        Modality::Audio => AUDIO_PREFIX,
        Modality::Visual => VISUAL_PREFIX,
    }
}

/// Deterministic stand-in for a frozen sentence encoder.
#[derive(Debug, Clone)]
pub struct TextEmbedder {
    dim: usize,
    vocab: Vocabulary,
    /// `table[m][c]` for modality index `m`, class `c`.
    table: [Vec<Vec<f64>>; 2],
}

impl TextEmbedder {
    pub fn new(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let row = |m: Modality| -> Vec<Vec<f64>> {
            vocab
                .names()
                .iter()
                .map(|name| Self::encode(&Self::prompt(m, name), dim, seed))
                .collect()
        };
        let table = [row(Modality::Audio), row(Modality::Visual)];
        Self { dim, vocab, table }
    }

    pub fn prompt(m: Modality, category: &str) -> String {
        format!("{} {}", prefix(m), category.replace('_', " "))
    }

    /// Unit vector for an arbitrary string.
    pub fn encode(text: &str, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(text.as_bytes()));
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, m: Modality, category: &str) -> data::Result<&[f64]> {
        Ok(&self.table[m.index()][self.vocab.lookup(category)?])
    }

    fn mean_rows<'a>(&self, rows: impl Iterator<Item = Vec<&'a [f64]>>) -> Vec<f64> {
        let mut out = Vec::new();
        for vecs in rows {
            let mut acc = vec![0.0; self.dim];
            for v in &vecs {
                for (a, x) in acc.iter_mut().zip(v.iter()) {
                    *a += x;
                }
            }
            if !vecs.is_empty() {
                let n = vecs.len() as f64;
                acc.iter_mut().for_each(|a| *a /= n);
            }
            out.extend(acc);
        }
        out
    }

    /// `[T, dim]` embedding of per-segment category-name sets.
    pub fn embed_sets(&self, sets: &[Vec<String>], m: Modality) -> data::Result<Tensor> {
        let rows: Vec<Vec<&[f64]>> = sets
            .iter()
            .map(|s| s.iter().map(|c| self.vector(m, c)).collect())
            .collect::<data::Result<_>>()?;
        let flat = self.mean_rows(rows.into_iter());
        Ok(Tensor::from_vec(flat, &[sets.len(), self.dim])?)
    }

    /// `[T, dim]` embedding of a label matrix; unannotated and empty rows
    /// map to zero.
    pub fn embed(&self, labels: &LabelMatrix, m: Modality) -> Tensor {
        let table = &self.table[m.index()];
        let rows = (0..labels.segments()).map(|t| {
            labels
                .classes_at(t)
                .into_iter()
                .map(|c| table[c].as_slice())
                .collect::<Vec<_>>()
        });
        let flat = self.mean_rows(rows);
        Tensor::from_vec(flat, &[labels.segments(), self.dim]).expect("positive dims")
    }
}

/// `f * scale + bias + f`.
pub fn plsim_fuse(f: &Tensor, scale: &Tensor, bias: &Tensor) -> Result<Tensor> {
    f.mul(scale)?.add(bias)?.add(f)
}

/// Four text-to-feature MLPs: `gamma1, gamma2` (audio scale, bias) and
/// `rho1, rho2` (visual scale, bias).
#[derive(Debug, Clone)]
pub struct Plsim {
    pub gamma1: Mlp,
    pub gamma2: Mlp,
    pub rho1: Mlp,
    pub rho2: Mlp,
}

/// Generated scale and bias tensors, `[T, d]` each.
#[derive(Debug, Clone)]
pub struct SemanticParams {
    pub gamma1: Tensor,
    pub gamma2: Tensor,
    pub rho1: Tensor,
    pub rho2: Tensor,
}

impl Plsim {
    pub fn new(store: &mut ParamStore, name: &str, text_dim: usize, d: usize) -> Result<Self> {
        Ok(Self {
            gamma1: Mlp::new(store, &format!("{name}.gamma1"), text_dim, d, d)?,
            gamma2: Mlp::new(store, &format!("{name}.gamma2"), text_dim, d, d)?,
            rho1: Mlp::new(store, &format!("{name}.rho1"), text_dim, d, d)?,
            rho2: Mlp::new(store, &format!("{name}.rho2"), text_dim, d, d)?,
        })
    }

    pub fn semantic_params(&self, text_a: &Tensor, text_v: &Tensor) -> Result<SemanticParams> {
        Ok(SemanticParams {
            gamma1: self.gamma1.forward(text_a)?,
            gamma2: self.gamma2.forward(text_a)?,
            rho1: self.rho1.forward(text_v)?,
            rho2: self.rho2.forward(text_v)?,
        })
    }

    pub fn forward(&self, f_a: &Tensor, f_v: &Tensor, text_a: &Tensor, text_v: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = self.semantic_params(text_a, text_v)?;
        Ok((plsim_fuse(f_a, &s.gamma1, &s.gamma2)?, plsim_fuse(f_v, &s.rho1, &s.rho2)?))
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        [&self.gamma1, &self.gamma2, &self.rho1, &self.rho2]
            .into_iter()
            .flat_map(Mlp::tensors)
            .collect()
    }
}
