//! Hierarchically derivable random streams.
//!
//! A stream is keyed by (root seed, label path); the generator state is the
//! SHA-256 hash of that key, so derivation is pure and two streams with the
//! same key are identical regardless of execution order or worker count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SeededStream {
    root_seed: u64,
    path: Vec<String>,
    rng: ChaCha12Rng,
}

impl SeededStream {
    pub fn root(seed: u64) -> Self {
        Self::from_parts(seed, Vec::new())
    }

    fn from_parts(root_seed: u64, path: Vec<String>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(root_seed.to_le_bytes());
        for label in &path {
            hasher.update([0xff]);
            hasher.update(label.as_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        Self {
            root_seed,
            path,
            rng: ChaCha12Rng::from_seed(seed),
        }
    }

    /// Child stream keyed by the parent path extended with `label`.
    /// Pure: does not consume entropy from the parent.
    pub fn derive(&self, label: &str) -> Result<Self> {
        if label.is_empty() {
            return Err(Error::InvalidArgument("stream label must be nonempty".into()));
        }
        let mut path = self.path.clone();
        path.push(label.to_string());
        Ok(Self::from_parts(self.root_seed, path))
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        let g = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
        Ok(g.sample(&mut self.rng))
    }

    pub fn poisson(&mut self, mean: f64) -> Result<u64> {
        let d = rand_distr::Poisson::new(mean)
            .map_err(|e| Error::InvalidParameter(format!("poisson: {e}")))?;
        Ok(d.sample(&mut self.rng) as u64)
    }

    /// Categorical draw from unnormalized nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (k, &w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return k;
            }
        }
        weights.len() - 1
    }
}

impl RngCore for SeededStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Dirichlet draw by normalized gamma variates.
pub fn sample_dirichlet(stream: &mut SeededStream, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::InvalidParameter("dirichlet: empty alpha".into()));
    }
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParameter(
            "dirichlet: all alpha must be positive".into(),
        ));
    }
    if alpha.len() == 1 {
        return Ok(vec![1.0]);
    }
    loop {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|&a| stream.gamma(a, 1.0))
            .collect::<Result<_>>()?;
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
        // All gammas underflowed to zero; redraw.
    }
}
