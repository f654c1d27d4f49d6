//! Overlap and agreement measures between binary volumes, and the Fréchet
//! distance between Gaussian fits of feature vectors.
//!
//! Throughout, `a` is the prediction and `b` the reference: a voxel set in
//! `a` but not in `b` is a false positive.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::VoxelGrid;
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `|A|`
    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    /// `|B|`
    pub fn reference(&self) -> u64 {
        self.tp + self.fn_
    }
}

pub fn confusion(a: &VoxelGrid, b: &VoxelGrid) -> Result<ConfusionCounts> {
    if a.dims() != b.dims() {
        return Err(Error::Shape {
            op: "confusion",
            lhs: a.dims().to_vec(),
            rhs: b.dims().to_vec(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &r) in a.occupancy().iter().zip(b.occupancy()) {
        match (p, r) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn undefined(metric: &'static str, reason: &'static str) -> Error {
    Error::UndefinedMetric { metric, reason }
}

/// `2|A∩B| / (|A| + |B|)`
pub fn dice(c: &ConfusionCounts) -> Result<f64> {
    let denom = c.predicted() + c.reference();
    if denom == 0 {
        return Err(undefined("dice", "both volumes empty"));
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}

/// `1 - ||A| - |B|| / (|A| + |B|)`
pub fn volumetric_similarity(c: &ConfusionCounts) -> Result<f64> {
    let (a, b) = (c.predicted(), c.reference());
    if a + b == 0 {
        return Err(undefined("vs", "both volumes empty"));
    }
    Ok(1.0 - a.abs_diff(b) as f64 / (a + b) as f64)
}

/// `TP / (TP + FN)`
pub fn sensitivity(c: &ConfusionCounts) -> Result<f64> {
    if c.reference() == 0 {
        return Err(undefined("sen", "reference has no positives"));
    }
    Ok(c.tp as f64 / c.reference() as f64)
}

/// `TN / (TN + FP)`
pub fn specificity(c: &ConfusionCounts) -> Result<f64> {
    let neg = c.tn + c.fp;
    if neg == 0 {
        return Err(undefined("spec", "reference has no negatives"));
    }
    Ok(c.tn as f64 / neg as f64)
}

fn entropy(ps: &[f64]) -> f64 {
    ps.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `2 I(A; B) / (H(A) + H(B))` over the 2x2 joint histogram, natural logs.
pub fn nmi(c: &ConfusionCounts) -> Result<f64> {
    let n = c.total() as f64;
    if n == 0.0 {
        return Err(undefined("nmi", "empty volumes"));
    }
    let joint = [c.tp, c.fp, c.fn_, c.tn].map(|v| v as f64 / n);
    let pa = c.predicted() as f64 / n;
    let pb = c.reference() as f64 / n;
    let (ha, hb) = (entropy(&[pa, 1.0 - pa]), entropy(&[pb, 1.0 - pb]));
    if ha == 0.0 || hb == 0.0 {
        return Err(undefined("nmi", "a volume is constant"));
    }
    let mi = ha + hb - entropy(&joint);
    Ok(2.0 * mi / (ha + hb))
}

/// `(P_o - P_e) / (1 - P_e)`
pub fn cohen_kappa(c: &ConfusionCounts) -> Result<f64> {
    let n = c.total() as f64;
    if n == 0.0 {
        return Err(undefined("ck", "empty volumes"));
    }
    let po = (c.tp + c.tn) as f64 / n;
    let (pa, pb) = (c.predicted() as f64 / n, c.reference() as f64 / n);
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if pe >= 1.0 {
        return Err(undefined("ck", "chance agreement is 1"));
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub vs: f64,
    pub sen: f64,
    pub spec: f64,
    pub nmi: f64,
    pub ck: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 6] = ["dice", "vs", "sen", "spec", "nmi", "ck"];

    pub fn values(&self) -> [f64; 6] {
        [self.dice, self.vs, self.sen, self.spec, self.nmi, self.ck]
    }
}

/// All six measures. Fails if any of them is undefined for the pair.
pub fn evaluate(a: &VoxelGrid, b: &VoxelGrid) -> Result<MetricsReport> {
    let counts = confusion(a, b)?;
    Ok(MetricsReport {
        dice: dice(&counts)?,
        vs: volumetric_similarity(&counts)?,
        sen: sensitivity(&counts)?,
        spec: specificity(&counts)?,
        nmi: nmi(&counts)?,
        ck: cohen_kappa(&counts)?,
        counts,
    })
}

/// Mean vector and covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::Shape {
                op: "GaussianFit",
                lhs: vec![d],
                rhs: vec![cov.nrows(), cov.ncols()],
            });
        }
        Ok(GaussianFit { mean, cov })
    }

    /// Sample mean and unbiased covariance of `rows` (one feature vector each).
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(contract(format!("gaussian fit needs >= 2 samples, got {n}")));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(contract("feature vectors have unequal lengths"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / (n - 1) as f64;
        Ok(GaussianFit { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

const PSD_TOL: f64 = 1e-10;

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < -PSD_TOL * scale) {
        return Err(contract(format!("{what} is not positive semidefinite (eigenvalue {bad})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2})`.
///
/// The trace of the product root is taken as the trace of
/// `(S_r^{1/2} S_g S_r^{1/2})^{1/2}`, which is symmetric and has the same
/// eigenvalues as `S_r S_g`.
pub fn frechet_distance(real: &GaussianFit, gen: &GaussianFit) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::Shape {
            op: "frechet_distance",
            lhs: vec![real.dim()],
            rhs: vec![gen.dim()],
        });
    }
    for (fit, name) in [(real, "real covariance"), (gen, "generated covariance")] {
        let asym = (&fit.cov - fit.cov.transpose()).amax();
        if asym > 1e-12 * fit.cov.amax().max(1.0) {
            return Err(contract(format!("{name} is not symmetric (max asymmetry {asym})")));
        }
    }
    let root_r = psd_sqrt(&real.cov, "real covariance")?;
    psd_sqrt(&gen.cov, "generated covariance")?;
    let inner = &root_r * &gen.cov * &root_r;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let mean_term = (&real.mean - &gen.mean).norm_squared();
    let d = mean_term + real.cov.trace() + gen.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn identical_volumes() {
        let mut g = VoxelGrid::empty([3, 3, 3]);
        for i in 0..10 {
            g.set(i % 3, (i / 3) % 3, i / 9, true);
        }
        let c = confusion(&g, &g).unwrap();
        assert_eq!(c, counts(10, 17, 0, 0));
        let r = evaluate(&g, &g).unwrap();
        for v in r.values() {
            assert!((v - 1.0).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn complement_pair() {
        let mut g = VoxelGrid::empty([2, 2, 2]);
        g.set(0, 0, 0, true);
        g.set(1, 1, 1, true);
        g.set(1, 0, 1, true);
        let c = confusion(&g, &g.complement()).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(dice(&c).unwrap(), 0.0);
        // relabeling keeps all the information
        assert!((nmi(&c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_counts() {
        // |A| = 8, |B| = 8, overlap 4
        assert_eq!(dice(&counts(4, 100, 4, 4)).unwrap(), 0.5);
        // |A| = 10, |B| = 30
        assert_eq!(volumetric_similarity(&counts(10, 0, 0, 20)).unwrap(), 0.5);
        assert_eq!(volumetric_similarity(&counts(0, 5, 0, 3)).unwrap(), 0.0);
        assert_eq!(cohen_kappa(&counts(7, 7, 7, 7)).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_prediction() {
        // reference half ones
        let c = counts(4, 0, 4, 0);
        assert_eq!(sensitivity(&c).unwrap(), 1.0);
        assert_eq!(specificity(&c).unwrap(), 0.0);
    }

    #[test]
    fn undefined_cases() {
        let z = counts(0, 8, 0, 0);
        assert!(matches!(dice(&z), Err(Error::UndefinedMetric { metric: "dice", .. })));
        assert!(volumetric_similarity(&z).is_err());
        assert!(sensitivity(&z).is_err());
        assert!(specificity(&counts(8, 0, 0, 0)).is_err());
        assert!(nmi(&z).is_err());
        assert!(cohen_kappa(&z).is_err());
    }

    #[test]
    fn dims_must_match() {
        let a = VoxelGrid::empty([2, 2, 2]);
        let b = VoxelGrid::empty([2, 2, 3]);
        assert!(confusion(&a, &b).is_err());
    }

    fn fit1(mean: f64, var: f64) -> GaussianFit {
        GaussianFit::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn frechet_hand_values() {
        assert!((frechet_distance(&fit1(0.0, 1.0), &fit1(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&fit1(0.0, 1.0), &fit1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&fit1(0.3, 2.0), &fit1(0.3, 2.0)).unwrap() < 1e-8);
    }

    #[test]
    fn frechet_rejects_bad_inputs() {
        assert!(frechet_distance(&fit1(0.0, -1.0), &fit1(0.0, 1.0)).is_err());
        let two = GaussianFit::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(frechet_distance(&two, &fit1(0.0, 1.0)).is_err());
        let asym = GaussianFit::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        )
        .unwrap();
        assert!(frechet_distance(&asym, &two).is_err());
    }

    #[test]
    fn fit_from_samples() {
        let rows = vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![2.0, 1.0]];
        let f = GaussianFit::from_samples(&rows).unwrap();
        assert_eq!(f.mean.as_slice(), &[2.0, 1.0]);
        assert!((f.cov[(0, 1)] - 1.0).abs() < 1e-15);
        assert!(GaussianFit::from_samples(&rows[..1]).is_err());
    }
}
