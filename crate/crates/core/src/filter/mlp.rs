use rand_distr::{Distribution, Normal};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::math::rng_for;

/// A feed-forward tower: dense layers with a rectifier between them and a
/// linear output. Parameters live in one flat vector, layer by layer, each
/// layer as its `out x in` weight matrix (row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerMlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer outputs of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    acts: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty")
    }
}

fn param_len(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl TowerMlp {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tower widths {widths:?} need ≥ 2 positive entries"
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; param_len(widths)],
        })
    }

    /// A single square layer computing the identity.
    pub fn identity(width: usize) -> Result<Self> {
        let mut t = Self::zeros(&[width, width])?;
        for k in 0..width {
            t.params[k * width + k] = 1.0;
        }
        Ok(t)
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self> {
        let mut t = Self::zeros(widths)?;
        let mut rng = rng_for(seed, 0);
        let mut off = 0;
        for w in widths.windows(2) {
            let (fan_in, out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            for p in &mut t.params[off..off + out * fan_in] {
                *p = normal.sample(&mut rng);
            }
            off += out * fan_in + out;
        }
        Ok(t)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Activations> {
        self.check_input(x)?;
        let n_layers = self.widths.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + out * fan_in];
            let b = &self.params[off + out * fan_in..off + out * fan_in + out];
            let input = &acts[l];
            let mut y: Vec<f64> = (0..out)
                .map(|r| b[r] + crate::math::dot(&w[r * fan_in..(r + 1) * fan_in], input))
                .collect();
            if l + 1 < n_layers {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            acts.push(y);
            off += out * fan_in + out;
        }
        Ok(Activations { acts })
    }

    /// Adds `d(g_out · output)/d(params)` into `grads` (same layout as the
    /// parameters).
    pub fn backward(&self, acts: &Activations, g_out: &[f64], grads: &mut [f64]) {
        let n_layers = self.widths.len() - 1;
        let mut offs = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.widths.windows(2) {
            offs.push(off);
            off += w[1] * w[0] + w[1];
        }
        let mut g = g_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, out) = (self.widths[l], self.widths[l + 1]);
            let off = offs[l];
            let input = &acts.acts[l];
            {
                let (gw, gb) = grads[off..off + out * fan_in + out].split_at_mut(out * fan_in);
                for r in 0..out {
                    if g[r] != 0.0 {
                        crate::math::axpy(g[r], input, &mut gw[r * fan_in..(r + 1) * fan_in]);
                        gb[r] += g[r];
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + out * fan_in];
            let mut g_in = vec![0.0; fan_in];
            for r in 0..out {
                if g[r] != 0.0 {
                    crate::math::axpy(g[r], &w[r * fan_in..(r + 1) * fan_in], &mut g_in);
                }
            }
            // rectifier on the previous layer's output
            for (gi, a) in g_in.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *gi = 0.0;
                }
            }
            g = g_in;
        }
    }

    /// Weight and bias of each layer as separate tables (`out x in`, `1 x out`).
    pub fn to_tables(&self) -> Vec<EmbeddingTable> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.widths.windows(2) {
            let (fan_in, n) = (w[0], w[1]);
            out.push(
                EmbeddingTable::from_vec(n, fan_in, self.params[off..off + n * fan_in].to_vec())
                    .unwrap(),
            );
            out.push(
                EmbeddingTable::from_vec(
                    1,
                    n,
                    self.params[off + n * fan_in..off + n * fan_in + n].to_vec(),
                )
                .unwrap(),
            );
            off += n * fan_in + n;
        }
        out
    }

    pub fn from_tables(widths: &[usize], tables: &[EmbeddingTable]) -> Result<Self> {
        let mut t = Self::zeros(widths)?;
        if tables.len() != 2 * (widths.len() - 1) {
            return Err(Error::InvalidArgument(format!(
                "tower with widths {widths:?} needs {} tables, got {}",
                2 * (widths.len() - 1),
                tables.len()
            )));
        }
        let mut off = 0;
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, n) = (w[0], w[1]);
            let (wt, bt) = (&tables[2 * l], &tables[2 * l + 1]);
            if (wt.rows(), wt.dim()) != (n, fan_in) || (bt.rows(), bt.dim()) != (1, n) {
                return Err(Error::DimMismatch {
                    expected: n * fan_in + n,
                    actual: wt.as_slice().len() + bt.as_slice().len(),
                });
            }
            t.params[off..off + n * fan_in].copy_from_slice(wt.as_slice());
            t.params[off + n * fan_in..off + n * fan_in + n].copy_from_slice(bt.as_slice());
            off += n * fan_in + n;
        }
        Ok(t)
    }
}
