use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::motiondata::{MotionSequence, PartGroup, Skeleton};

use super::HarnessError;

/// Mean global joint distance between two clips, in millimetres.
pub fn mpjpe(x: &MotionSequence, y: &MotionSequence) -> Result<f64, HarnessError> {
    if x.len() != y.len() || x.feature_dim() != y.feature_dim() {
        return Err(HarnessError::Shape(format!(
            "mpjpe needs equal shapes, got {}x{} and {}x{}",
            x.len(),
            x.feature_dim(),
            y.len(),
            y.feature_dim()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 0..x.len() {
        for (a, b) in x.global_joints(t).iter().zip(y.global_joints(t)) {
            total += dist(*a, b);
            count += 1;
        }
    }
    Ok(1000.0 * total / count as f64)
}

/// Mean pelvis translation distance, in millimetres.
pub fn trajectory_error(x: &MotionSequence, y: &MotionSequence) -> Result<f64, HarnessError> {
    if x.len() != y.len() {
        return Err(HarnessError::Shape(format!("{} vs {} frames", x.len(), y.len())));
    }
    let total: f64 = (0..x.len())
        .map(|t| dist(x.root_translation(t), y.root_translation(t)))
        .sum();
    Ok(1000.0 * total / x.len() as f64)
}

/// MPJPE restricted to frames `[start, end)`.
pub fn mpjpe_window(x: &MotionSequence, y: &MotionSequence, start: usize, end: usize) -> Result<f64, HarnessError> {
    if x.len() != y.len() || start >= end || end > x.len() {
        return Err(HarnessError::Shape(format!(
            "window {start}..{end} over {} and {} frames",
            x.len(),
            y.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in start..end {
        for (a, b) in x.global_joints(t).iter().zip(y.global_joints(t)) {
            total += dist(*a, b);
            count += 1;
        }
    }
    Ok(1000.0 * total / count as f64)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Hand-crafted clip descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

pub const FEATURE_VECTOR_DIM: usize = 18;

const GROUPS: [PartGroup; 5] = PartGroup::ALL;

/// Frames between the two samples of a speed estimate. Matches the codec's
/// temporal down-sampling, so jitter finer than one latent step is ignored.
pub const SPEED_STRIDE: usize = 4;

impl FeatureVector {
    /// Per part group: mean and standard deviation of joint speed (measured over
    /// [`SPEED_STRIDE`] frames) and the
    /// oscillation energy (variance of positions about their temporal mean).
    /// Then horizontal pelvis displacement, absolute heading change and pelvis
    /// height range.
    pub fn of(x: &MotionSequence) -> Self {
        let skeleton = Skeleton::standard();
        let n = x.len();
        let stride = SPEED_STRIDE.min(n.saturating_sub(1)).max(1);
        let dt = stride as f64 / x.fps();
        let mut out = Vec::with_capacity(FEATURE_VECTOR_DIM);
        for group in GROUPS {
            let track = |t: usize, j: usize| {
                if group == PartGroup::Pelvis {
                    x.root_translation(t)
                } else {
                    x.local_joint(t, j)
                }
            };
            let joints = skeleton.joints_in(group);
            let mut speeds = Vec::new();
            for &j in &joints {
                for t in stride..n {
                    speeds.push(dist(track(t, j), track(t - stride, j)) / dt);
                }
            }
            let (mean, std) = mean_std(&speeds);
            let mut energy = 0.0;
            for &j in &joints {
                for axis in 0..3 {
                    let series: Vec<f64> = (0..n).map(|t| track(t, j)[axis]).collect();
                    energy += mean_std(&series).1.powi(2);
                }
            }
            out.extend([mean, std, energy / joints.len() as f64]);
        }
        let (first, last) = (x.root_translation(0), x.root_translation(n - 1));
        out.push(((last[0] - first[0]).powi(2) + (last[2] - first[2]).powi(2)).sqrt());
        out.push((x.heading(n - 1) - x.heading(0)).abs());
        let heights: Vec<f64> = (0..n).map(|t| x.root_translation(t)[1]).collect();
        let (lo, hi) = heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| {
            (lo.min(h), hi.max(h))
        });
        out.push(hi - lo);
        Self(out)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

fn stack(set: &[FeatureVector]) -> Result<DMatrix<f64>, HarnessError> {
    let dim = set.first().map(FeatureVector::dim).unwrap_or(0);
    if set.iter().any(|f| f.dim() != dim || f.0.iter().any(|v| !v.is_finite())) {
        return Err(HarnessError::Shape(
            "feature vectors differ in dimension or are not finite".into(),
        ));
    }
    Ok(DMatrix::from_fn(set.len(), dim, |r, c| set[r].0[c]))
}

fn gaussian_fit(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows() as f64;
    let mean = m.row_mean().transpose();
    let mut centred = m.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.transpose() * &centred / (n - 1.0);
    (mean, cov)
}

/// Added to covariance diagonals that are not positive definite.
pub const FRECHET_EPS: f64 = 1e-6;

fn regularise(cov: &mut DMatrix<f64>) {
    let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min < FRECHET_EPS {
        log::warn!("singular covariance (min eigenvalue {min:.3e}); adding {FRECHET_EPS} to the diagonal");
        for i in 0..cov.nrows() {
            cov[(i, i)] += FRECHET_EPS;
        }
    }
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn feature_frechet(a: &[FeatureVector], b: &[FeatureVector]) -> Result<f64, HarnessError> {
    let (ma, mb) = (stack(a)?, stack(b)?);
    let dim = ma.ncols();
    if mb.ncols() != dim {
        return Err(HarnessError::Shape(format!("feature dims {} and {}", dim, mb.ncols())));
    }
    if a.len() < dim + 1 || b.len() < dim + 1 {
        return Err(HarnessError::Shape(format!(
            "need at least {} vectors per set, got {} and {}",
            dim + 1,
            a.len(),
            b.len()
        )));
    }
    let (mu_a, mut cov_a) = gaussian_fit(&ma);
    let (mu_b, mut cov_b) = gaussian_fit(&mb);
    regularise(&mut cov_a);
    regularise(&mut cov_b);
    // tr((A B)^{1/2}) = tr((A^{1/2} B A^{1/2})^{1/2}), whose argument is symmetric.
    let root_a = sqrt_psd(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let diff = mu_a - mu_b;
    Ok((diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// `(k, recall at k)` in the order requested.
    pub recall: Vec<(usize, f64)>,
    pub avg_rank: f64,
    /// 1-based rank of the true match for every query.
    pub ranks: Vec<usize>,
}

/// Query `i` matches gallery item `i`. Ranks by Euclidean distance; ties go to
/// the lower gallery index.
pub fn retrieval(
    queries: &[FeatureVector],
    gallery: &[FeatureVector],
    k_list: &[usize],
) -> Result<RetrievalReport, HarnessError> {
    if gallery.is_empty() {
        return Err(HarnessError::Shape("empty gallery".into()));
    }
    if queries.len() != gallery.len() {
        return Err(HarnessError::Shape(format!(
            "{} queries for a gallery of {}",
            queries.len(),
            gallery.len()
        )));
    }
    let sq = |a: &FeatureVector, b: &FeatureVector| a.0.iter().zip(&b.0).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let ranks: Vec<usize> = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let own = sq(q, &gallery[i]);
            1 + gallery
                .iter()
                .enumerate()
                .filter(|&(j, g)| {
                    let d = sq(q, g);
                    d < own || (d == own && j < i)
                })
                .count()
        })
        .collect();
    let n = ranks.len() as f64;
    let recall = k_list
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(RetrievalReport {
        recall,
        avg_rank: ranks.iter().sum::<usize>() as f64 / n,
        ranks,
    })
}

/// Per-dimension standardisation fitted on a reference set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(set: &[FeatureVector]) -> Result<Self, HarnessError> {
        let m = stack(set)?;
        if m.nrows() == 0 {
            return Err(HarnessError::Shape("cannot fit a scaler on an empty set".into()));
        }
        let (mean, std): (Vec<f64>, Vec<f64>) = (0..m.ncols())
            .map(|c| {
                let col: Vec<f64> = m.column(c).iter().copied().collect();
                let (mu, sd) = mean_std(&col);
                (mu, sd.max(1e-9))
            })
            .unzip();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, f: &FeatureVector) -> FeatureVector {
        FeatureVector(
            f.0.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        )
    }
}

/// Nearest-centroid classifier over feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(set: &[FeatureVector], labels: &[usize], classes: usize) -> Result<Self, HarnessError> {
        if set.len() != labels.len() || set.is_empty() {
            return Err(HarnessError::Shape(
                "labels must pair one-to-one with a non-empty set".into(),
            ));
        }
        let dim = set[0].dim();
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (f, &l) in set.iter().zip(labels) {
            if l >= classes {
                return Err(HarnessError::Shape(format!("label {l} outside 0..{classes}")));
            }
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(&f.0) {
                *s += v;
            }
        }
        if counts.contains(&0) {
            return Err(HarnessError::Shape("every class needs at least one example".into()));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        Ok(Self { centroids })
    }

    pub fn predict(&self, f: &FeatureVector) -> usize {
        let d = |c: &Vec<f64>| c.iter().zip(&f.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut best = 0;
        for (i, c) in self.centroids.iter().enumerate() {
            if d(c) < d(&self.centroids[best]) {
                best = i;
            }
        }
        best
    }
}
