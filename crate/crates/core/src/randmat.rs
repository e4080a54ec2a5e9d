//! Seeded generation of Haar-orthogonal matrices, IID Gaussian dictionaries,
//! Bernoulli–Gaussian signals, and planted instances `y = D x`.
//!
//! Every instance is a pure function of a single `u64` seed, which seeds a
//! ChaCha8 stream. Experiments derive that seed from their coordinates with
//! [`derive_seed`], so no trial depends on another.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replica::SparsityProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DictionaryKind {
    /// `D = [O1 O2]` with independent Haar-orthogonal blocks.
    #[serde(rename = "biortho")]
    BiOrthogonal,
    /// IID `N(0, 1/M)` entries.
    #[serde(rename = "gaussian")]
    IidGaussian,
}

impl DictionaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DictionaryKind::BiOrthogonal => "biortho",
            DictionaryKind::IidGaussian => "gaussian",
        }
    }
}

impl fmt::Display for DictionaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DictionaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biortho" | "bi-orthogonal" => Ok(DictionaryKind::BiOrthogonal),
            "gaussian" | "iid-gaussian" => Ok(DictionaryKind::IidGaussian),
            other => Err(Error::domain(format!("unknown dictionary kind '{other}'"))),
        }
    }
}

/// A square matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix(DMatrix<f64>);

impl OrthogonalMatrix {
    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `max |OᵀO - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let m = self.order();
        (self.0.transpose() * &self.0 - DMatrix::identity(m, m)).amax()
    }
}

/// Haar-distributed orthogonal matrix of order `m`.
///
/// QR of a standard Gaussian matrix, with each column of `Q` multiplied by the
/// sign of the matching diagonal entry of `R`; without that correction the
/// distribution depends on the QR convention and is not Haar.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<OrthogonalMatrix> {
    if m == 0 {
        return Err(Error::domain("orthogonal matrix order must be at least 1"));
    }
    let g = DMatrix::<f64>::from_fn(m, m, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthogonalMatrix(q))
}

/// `m × n` matrix of IID `N(0, 1/m)` entries, so columns have unit expected norm.
pub fn sample_gaussian_dictionary<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if m == 0 || n == 0 {
        return Err(Error::domain(format!(
            "dictionary dimensions must be nonzero, got {m}x{n}"
        )));
    }
    let scale = 1.0 / (m as f64).sqrt();
    Ok(DMatrix::from_fn(m, n, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    }))
}

/// The two length-`M` halves of a planted signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    pub block1: DVector<f64>,
    pub block2: DVector<f64>,
}

impl SignalVector {
    pub fn zeros(m: usize) -> Self {
        Self {
            block1: DVector::zeros(m),
            block2: DVector::zeros(m),
        }
    }

    pub fn block_len(&self) -> usize {
        self.block1.len()
    }

    pub fn support1(&self) -> Vec<usize> {
        support(&self.block1)
    }

    pub fn support2(&self) -> Vec<usize> {
        support(&self.block2)
    }

    /// `[x1; x2]` as one vector of length `2M`.
    pub fn concat(&self) -> DVector<f64> {
        let m = self.block_len();
        DVector::from_iterator(2 * m, self.block1.iter().chain(self.block2.iter()).copied())
    }

    pub fn l1_norm(&self) -> f64 {
        self.block1.lp_norm(1) + self.block2.lp_norm(1)
    }
}

fn support(v: &DVector<f64>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Each entry of block `i` is zero with probability `1 - rho_i`, otherwise
/// standard normal. Support sizes are therefore binomial.
pub fn sample_signal<R: Rng + ?Sized>(
    m: usize,
    rho1: f64,
    rho2: f64,
    rng: &mut R,
) -> Result<SignalVector> {
    for rho in [rho1, rho2] {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::domain(format!(
                "block density must lie in [0,1], got {rho}"
            )));
        }
    }
    let mut block = |rho: f64| {
        DVector::from_iterator(
            m,
            (0..m).map(|_| {
                if rng.random::<f64>() < rho {
                    rng.sample(StandardNormal)
                } else {
                    0.0
                }
            }),
        )
    };
    let block1 = block(rho1);
    let block2 = block(rho2);
    Ok(SignalVector { block1, block2 })
}

/// A planted problem `y = D x` together with the seed that reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub kind: DictionaryKind,
    /// `M × 2M`.
    pub dictionary: DMatrix<f64>,
    pub signal: SignalVector,
    pub observation: DVector<f64>,
    pub seed: u64,
}

impl ProblemInstance {
    /// Assembles an instance from parts, computing `y = D x`.
    pub fn from_parts(
        kind: DictionaryKind,
        dictionary: DMatrix<f64>,
        signal: SignalVector,
        seed: u64,
    ) -> Result<Self> {
        let m = signal.block_len();
        if dictionary.nrows() != m || dictionary.ncols() != 2 * m {
            return Err(Error::domain(format!(
                "dictionary is {}x{}, signal needs {m}x{}",
                dictionary.nrows(),
                dictionary.ncols(),
                2 * m
            )));
        }
        let observation = &dictionary * signal.concat();
        Ok(Self {
            kind,
            dictionary,
            signal,
            observation,
            seed,
        })
    }

    /// Number of measurements `M`.
    pub fn m(&self) -> usize {
        self.dictionary.nrows()
    }

    /// `max |y - D x|`.
    pub fn construction_residual(&self) -> f64 {
        (&self.observation - &self.dictionary * self.signal.concat()).amax()
    }
}

/// The random stream an instance seed expands to.
pub fn instance_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples a planted instance: the signal first, then the dictionary.
pub fn build_instance(
    m: usize,
    profile: &SparsityProfile,
    kind: DictionaryKind,
    seed: u64,
) -> Result<ProblemInstance> {
    if m == 0 {
        return Err(Error::domain("instance needs M >= 1"));
    }
    let mut rng = instance_rng(seed);
    let signal = sample_signal(m, profile.rho1, profile.rho2, &mut rng)?;
    let dictionary = match kind {
        DictionaryKind::BiOrthogonal => {
            let o1 = sample_haar_orthogonal(m, &mut rng)?.into_inner();
            let o2 = sample_haar_orthogonal(m, &mut rng)?.into_inner();
            let mut d = DMatrix::zeros(m, 2 * m);
            d.columns_mut(0, m).copy_from(&o1);
            d.columns_mut(m, m).copy_from(&o2);
            d
        }
        DictionaryKind::IidGaussian => sample_gaussian_dictionary(m, 2 * m, &mut rng)?,
    };
    ProblemInstance::from_parts(kind, dictionary, signal, seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tuple of coordinates (master seed, size, grid index, trial, ...)
/// into one instance seed. Distinct tuples give unrelated seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &p| mix64(acc ^ mix64(p)))
}
