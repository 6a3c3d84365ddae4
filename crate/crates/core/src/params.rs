use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model parameters partitioned into task-specific `w` (adapted in the inner
/// loop) and shared `phi` (reused as-is).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitParameters {
    #[serde(with = "vector")]
    pub w: DVector<f64>,
    #[serde(with = "vector")]
    pub phi: DVector<f64>,
}

impl SplitParameters {
    pub fn new(w: DVector<f64>, phi: DVector<f64>) -> Result<Self> {
        let p = SplitParameters { w, phi };
        p.check_finite()?;
        Ok(p)
    }

    pub fn from_slices(w: &[f64], phi: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(w), DVector::from_column_slice(phi))
    }

    pub fn zeros(n_w: usize, n_phi: usize) -> Self {
        SplitParameters {
            w: DVector::zeros(n_w),
            phi: DVector::zeros(n_phi),
        }
    }

    pub fn n_w(&self) -> usize {
        self.w.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.w.iter().all(|x| x.is_finite()) && self.phi.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("split parameters"))
        }
    }

    pub fn check_dims(&self, n_w: usize, n_phi: usize) -> Result<()> {
        Error::check_dim("w", n_w, self.n_w())?;
        Error::check_dim("phi", n_phi, self.n_phi())
    }

    /// Concatenation `z = (w, phi)`.
    pub fn joint(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.n_w() + self.n_phi());
        z.rows_mut(0, self.n_w()).copy_from(&self.w);
        z.rows_mut(self.n_w(), self.n_phi()).copy_from(&self.phi);
        z
    }

    pub fn from_joint(z: &DVector<f64>, n_w: usize) -> Self {
        SplitParameters {
            w: z.rows(0, n_w).into_owned(),
            phi: z.rows(n_w, z.len() - n_w).into_owned(),
        }
    }

    /// Euclidean distance in the joint space.
    pub fn distance(&self, other: &SplitParameters) -> f64 {
        ((&self.w - &other.w).norm_squared() + (&self.phi - &other.phi).norm_squared()).sqrt()
    }
}

/// Ball around a reference point on which the outer loss is certified
/// `M`-Lipschitz. Experiments stop once the outer iterate leaves it.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingRegion {
    pub center: SplitParameters,
    pub radius: f64,
}

impl OperatingRegion {
    pub fn contains(&self, p: &SplitParameters) -> bool {
        self.center.distance(p) <= self.radius
    }
}

pub(crate) fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(a.len() + b.len());
    z.rows_mut(0, a.len()).copy_from(a);
    z.rows_mut(a.len(), b.len()).copy_from(b);
    z
}

/// Serde adapter: vectors as plain JSON arrays.
pub mod vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(raw))
    }
}

/// Serde adapter: matrices as row-major arrays of rows.
pub mod matrix {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let nrows = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}
