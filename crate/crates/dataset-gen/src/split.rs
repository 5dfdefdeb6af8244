use rand::Rng;
use rand_distr::StandardNormal;
use subspace_core::{overlap_spectrum, Matrix, SubspaceBasis, SubspaceError};

/// Haar-distributed orthogonal `d×d` matrix (QR of a Gaussian matrix with the
/// R-diagonal sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Invariant (IN), spurious (F′) and unknown (G′) directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSplit {
    pub invariant: SubspaceBasis,
    pub spurious: SubspaceBasis,
    pub unknown: SubspaceBasis,
}

impl FeatureSplit {
    /// Carves consecutive column blocks out of a random rotation of `R^d`.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        dims: [usize; 3],
        rng: &mut R,
    ) -> Result<Self, SubspaceError> {
        let q = random_orthogonal(d, rng);
        let [ki, ks, ku] = dims;
        let block = |from: usize, k: usize| SubspaceBasis::new(q.columns(from, k).into_owned());
        Ok(Self {
            invariant: block(0, ki)?,
            spurious: block(ki, ks)?,
            unknown: block(ki + ks, ku)?,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.invariant.ambient_dim()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.invariant.dim(), self.spurious.dim(), self.unknown.dim()]
    }

    /// Basis of the ID row space, IN ⊕ F′.
    pub fn id_basis(&self) -> SubspaceBasis {
        self.invariant
            .direct_sum(&self.spurious)
            .expect("split blocks are orthogonal")
    }

    /// Basis of the OOD row space, IN ⊕ G′.
    pub fn ood_basis(&self) -> SubspaceBasis {
        self.invariant
            .direct_sum(&self.unknown)
            .expect("split blocks are orthogonal")
    }

    /// Largest principal cosine between any two of the three blocks.
    pub fn max_cross_overlap(&self) -> f64 {
        let pairs = [
            (&self.invariant, &self.spurious),
            (&self.invariant, &self.unknown),
            (&self.spurious, &self.unknown),
        ];
        pairs
            .iter()
            .filter_map(|(a, b)| overlap_spectrum(a, b).ok())
            .flatten()
            .fold(0.0, f64::max)
    }
}
