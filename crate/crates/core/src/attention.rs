//! Single-layer masked self-attention, used only to check that a visible
//! matrix shapes attention the way it should.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::hash_embed;
use crate::error::{Error, Result};
use crate::tree::{FlattenedSequence, PackedVisibleMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub n: usize,
    /// Row-major `n × n`.
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|w| w.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Standard transformer sinusoid evaluated at `position`.
pub fn sinusoidal_encoding(position: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let rate = 10_000f64.powf((2 * (k / 2)) as f64 / dim as f64);
            let angle = position as f64 / rate;
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Token vector: normalized hashed surface plus the soft-position sinusoid.
pub fn token_vector(token: &str, soft_position: usize, dim: usize) -> Vec<f64> {
    let mut v = hash_embed(token, dim).values;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    for (x, p) in v.iter_mut().zip(sinusoidal_encoding(soft_position, dim)) {
        *x += p;
    }
    v
}

fn projection(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim * dim).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn project(x: &[f64], w: &[f64], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|c| (0..dim).map(|r| x[r] * w[r * dim + c]).sum())
        .collect()
}

pub fn masked_attention_parts(
    tokens: &[String],
    soft_positions: &[usize],
    visible: &PackedVisibleMatrix,
    dim: usize,
    seed: u64,
) -> Result<AttentionMap> {
    let n = tokens.len();
    if soft_positions.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: soft_positions.len(),
        });
    }
    if visible.n() != n {
        return Err(Error::DimensionMismatch {
            left: visible.n(),
            right: n,
        });
    }
    if dim == 0 {
        return Err(Error::Config("attention dimension must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wq = projection(&mut rng, dim);
    let wk = projection(&mut rng, dim);
    let xs: Vec<Vec<f64>> = tokens
        .iter()
        .zip(soft_positions)
        .map(|(t, &p)| token_vector(t, p, dim))
        .collect();
    let queries: Vec<Vec<f64>> = xs.iter().map(|x| project(x, &wq, dim)).collect();
    let keys: Vec<Vec<f64>> = xs.iter().map(|x| project(x, &wk, dim)).collect();
    let scale = 1.0 / (dim as f64).sqrt();

    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut weights[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] = if visible.is_visible(i, j) {
                queries[i].iter().zip(&keys[j]).map(|(q, k)| q * k).sum::<f64>() * scale
            } else {
                f64::NEG_INFINITY
            };
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|s| *s = (*s - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|s| *s /= sum);
    }
    Ok(AttentionMap { n, weights })
}

pub fn masked_attention(
    seq: &FlattenedSequence,
    visible: &PackedVisibleMatrix,
    dim: usize,
    seed: u64,
) -> Result<AttentionMap> {
    masked_attention_parts(&seq.tokens, &seq.soft_positions, visible, dim, seed)
}
