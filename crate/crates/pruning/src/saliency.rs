use serde::{Deserialize, Serialize};
use subspace_core::Matrix;

use crate::PruneError;

/// Per-output-channel gates in `[0, 1]`, standing in for a learned
/// squeeze-and-excitation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    gates: Vec<f64>,
}

impl SaliencyVector {
    pub fn new(gates: Vec<f64>) -> Result<Self, PruneError> {
        if let Some(bad) = gates.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(PruneError::BadSaliency(*bad));
        }
        if !gates.iter().any(|g| *g > 0.0) {
            return Err(PruneError::BadSaliency(0.0));
        }
        Ok(Self { gates })
    }

    /// All gates open.
    pub fn ones(m: usize) -> Self {
        Self { gates: vec![1.0; m] }
    }

    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Scales each gate by the share of its channel's response energy that
    /// survived (`after` vs `before`, both n×m). Channels with negligible
    /// energy keep their gate. If every gate would close, the strongest one
    /// stays at its old value.
    pub fn attenuated(&self, before: &Matrix, after: &Matrix) -> Result<Self, PruneError> {
        if before.ncols() != self.len() || after.shape() != before.shape() {
            return Err(PruneError::ShapeMismatch { x: before.ncols(), w: self.len() });
        }
        let energy = |m: &Matrix, j: usize| m.column(j).norm_squared();
        let top = (0..self.len()).map(|j| energy(before, j)).fold(0.0, f64::max);
        let mut gates = self.gates.clone();
        for (j, g) in gates.iter_mut().enumerate() {
            let e = energy(before, j);
            if e > 1e-12 * top && e > 0.0 {
                *g *= (energy(after, j) / e).clamp(0.0, 1.0);
            }
        }
        if !gates.iter().any(|g| *g > 0.0) {
            let (best, _) = self
                .gates
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, g)| if *g > b.1 { (i, *g) } else { b });
            gates[best] = self.gates[best];
        }
        Ok(Self { gates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SaliencyVector::new(vec![0.0, 0.0]).is_err());
        assert!(SaliencyVector::new(vec![1.2]).is_err());
        assert!(SaliencyVector::new(vec![0.0, 0.3]).is_ok());
    }

    #[test]
    fn attenuation_tracks_removed_energy() {
        let before = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let after = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let g = SaliencyVector::ones(2).attenuated(&before, &after).unwrap();
        assert!((g.gates()[0] - 0.25).abs() < 1e-12);
        assert_eq!(g.gates()[1], 1.0);
    }
}
