//! Pose and distribution metrics. Distances are computed in meters and
//! reported in centimeters.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use ndarray::ArrayView2;

use crate::codec::{parse_stream, Vocabulary};
use crate::error::{Error, Result};
use crate::mano::{Joints21, NUM_JOINTS};
use crate::rotations::Vec3;

const CM: f64 = 100.0;
/// Diagonal added to covariances before the Fréchet distance.
pub const FRECHET_REGULARIZATION: f64 = 1e-6;
/// Frames whose joints spread less than this (m²) cannot be aligned.
const DEGENERATE_SPREAD: f64 = 1e-18;

fn check_shapes(pred: &[Joints21], gt: &[Joints21]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} frames",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty joint sequence".into()));
    }
    Ok(())
}

/// Mean per-joint position error, cm.
pub fn mpjpe(pred: &[Joints21], gt: &[Joints21]) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for j in 0..NUM_JOINTS {
            total += (p.0[j] - g.0[j]).norm();
        }
    }
    Ok(CM * total / (pred.len() * NUM_JOINTS) as f64)
}

/// Mean wrist (joint 0) translation error, cm.
pub fn mwte(pred: &[Joints21], gt: &[Joints21]) -> Result<f64> {
    check_shapes(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.0[0] - g.0[0]).norm())
        .sum();
    Ok(CM * total / pred.len() as f64)
}

/// Similarity transform `y ≈ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.scale * (self.rotation * x) + self.translation
    }
}

/// Closed-form least-squares similarity taking `src` onto `dst`.
pub fn umeyama(src: &[Vec3], dst: &[Vec3]) -> Option<Similarity> {
    let n = src.len() as f64;
    let mu_s: Vec3 = src.iter().sum::<Vec3>() / n;
    let mu_d: Vec3 = dst.iter().sum::<Vec3>() / n;
    let var_s: f64 = src.iter().map(|x| (x - mu_s).norm_squared()).sum::<f64>() / n;
    if var_s < DEGENERATE_SPREAD {
        return None;
    }
    let mut cov = Matrix3::zeros();
    for (x, y) in src.iter().zip(dst) {
        cov += (y - mu_d) * (x - mu_s).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = if u.determinant() * v_t.determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let s = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = u * s * v_t;
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_s;
    Some(Similarity {
        scale,
        rotation,
        translation: mu_d - scale * rotation * mu_s,
    })
}

/// MPJPE after per-frame similarity alignment of `pred` onto `gt`, cm.
pub fn pa_mpjpe(pred: &[Joints21], gt: &[Joints21]) -> Result<f64> {
    check_shapes(pred, gt)?;
    let mut total = 0.0;
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        let sim = umeyama(&p.0, &g.0).ok_or(Error::DegenerateFrame(f))?;
        for j in 0..NUM_JOINTS {
            total += (sim.apply(&p.0[j]) - g.0[j]).norm();
        }
    }
    Ok(CM * total / (pred.len() * NUM_JOINTS) as f64)
}

fn mean_cov(x: ArrayView2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, e) = x.dim();
    let m = DMatrix::from_fn(n, e, |i, j| x[(i, j)]);
    let mu = m.row_mean().transpose();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut cov = c.transpose() * &c / (n as f64 - 1.0);
    for i in 0..e {
        cov[(i, i)] += FRECHET_REGULARIZATION;
    }
    (mu, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two embedding sets (rows are
/// samples).
pub fn frechet_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding widths {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InvalidInput(
            "need at least two embeddings per set".into(),
        ));
    }
    let (mu_a, cov_a) = mean_cov(a);
    let (mu_b, cov_b) = mean_cov(b);
    // Tr sqrt(Σa Σb) = Tr sqrt(√Σa Σb √Σa), the latter symmetric PSD
    let root_a = psd_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let cross = psd_sqrt(&inner).trace();
    Ok((mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross)
}

/// Fraction of queries whose paired gallery item is among the `k` most
/// cosine-similar gallery rows. `pairs[i]` is the gallery index of query `i`.
pub fn retrieval_topk(
    queries: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
    pairs: &[usize],
    k: usize,
) -> Result<f64> {
    if queries.ncols() != gallery.ncols() {
        return Err(Error::ShapeMismatch(
            "query and gallery widths differ".into(),
        ));
    }
    if k == 0 || k > gallery.nrows() {
        return Err(Error::InvalidInput(format!(
            "k = {k} with {} gallery items",
            gallery.nrows()
        )));
    }
    if pairs.len() != queries.nrows() || pairs.iter().any(|&p| p >= gallery.nrows()) {
        return Err(Error::InvalidInput(
            "pairing does not index the gallery".into(),
        ));
    }
    if queries.nrows() == 0 {
        return Err(Error::InvalidInput("no queries".into()));
    }
    let norm = |v: ndarray::ArrayView1<f64>| v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
    let g_norms: Vec<f64> = gallery.rows().into_iter().map(norm).collect();
    let mut hits = 0usize;
    for (q, &target) in queries.rows().into_iter().zip(pairs) {
        let qn = norm(q);
        let sims: Vec<f64> = gallery
            .rows()
            .into_iter()
            .zip(&g_norms)
            .map(|(g, &gn)| q.dot(&g) / (qn * gn))
            .collect();
        let own = sims[target];
        // rank = items strictly better, plus earlier items tied with it
        let better = sims
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s > own || (s == own && i < target))
            .count();
        if better < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.nrows() as f64)
}

/// Share of streams accepted by the block validator.
pub fn valid_rate(streams: &[Vec<u32>], vocab: &Vocabulary) -> Result<f64> {
    if streams.is_empty() {
        return Err(Error::InvalidInput("no streams".into()));
    }
    let ok = streams
        .iter()
        .filter(|s| parse_stream(s, vocab).is_valid())
        .count();
    Ok(ok as f64 / streams.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joints(rng: &mut ChaCha8Rng) -> Joints21 {
        let mut j = [Vec3::zeros(); NUM_JOINTS];
        for v in j.iter_mut() {
            *v = Vec3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.3..0.6),
            );
        }
        Joints21(j)
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt: Vec<_> = (0..4).map(|_| random_joints(&mut rng)).collect();
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        assert_eq!(mwte(&gt, &gt).unwrap(), 0.0);
        assert!(pa_mpjpe(&gt, &gt).unwrap() < 1e-9);
        let shifted: Vec<_> = gt
            .iter()
            .map(|f| Joints21(f.0.map(|v| v + Vec3::new(0.03, 0.04, 0.0))))
            .collect();
        assert!((mpjpe(&shifted, &gt).unwrap() - 5.0).abs() < 1e-9);
        let wrist: Vec<_> = gt
            .iter()
            .map(|f| {
                let mut g = *f;
                g.0[0].z += 0.01;
                g
            })
            .collect();
        assert!((mwte(&wrist, &gt).unwrap() - 1.0).abs() < 1e-9);
        assert!(mpjpe(&gt[..2], &gt).is_err());
    }

    #[test]
    fn similarity_is_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt: Vec<_> = (0..3).map(|_| random_joints(&mut rng)).collect();
        let r = crate::rotations::axis_angle_to_matrix(crate::rotations::AxisAngle::new(
            0.3, -1.1, 0.7,
        ))
        .unwrap()
        .0;
        let t = Vec3::new(0.2, -0.5, 1.0);
        let pred: Vec<_> = gt
            .iter()
            .map(|f| Joints21(f.0.map(|v| 2.0 * (r * v) + t)))
            .collect();
        assert!(pa_mpjpe(&pred, &gt).unwrap() < 1e-6);
        assert!(mpjpe(&pred, &gt).unwrap() > 1.0);
    }

    #[test]
    fn coincident_joints_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = vec![random_joints(&mut rng), random_joints(&mut rng)];
        let pred = vec![gt[0], Joints21([Vec3::new(0.1, 0.1, 0.5); NUM_JOINTS])];
        assert!(matches!(
            pa_mpjpe(&pred, &gt),
            Err(Error::DegenerateFrame(1))
        ));
    }

    #[test]
    fn frechet_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        assert!(frechet_distance(a.view(), a.view()).unwrap().abs() < 1e-8);
        // near point masses at 0 and 1
        let p = Array2::from_shape_fn((20, 1), |(i, _)| 1e-5 * (i as f64 - 9.5));
        let q = &p + 1.0;
        assert!((frechet_distance(p.view(), q.view()).unwrap() - 1.0).abs() < 1e-8);
        assert!(frechet_distance(a.view(), Array2::zeros((5, 3)).view()).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Array2::from_shape_fn((10, 6), |_| rng.random_range(-1.0..1.0));
        let pairs: Vec<usize> = (0..10).collect();
        assert_eq!(retrieval_topk(q.view(), q.view(), &pairs, 1).unwrap(), 1.0);
        assert!(retrieval_topk(q.view(), q.view(), &pairs, 11).is_err());
    }

    #[test]
    fn valid_rate_examples() {
        let v = Vocabulary::with_motion(16, 2);
        let sp = v.specials;
        let good = vec![
            sp.mot_open,
            v.motion.start,
            v.motion.start + 1,
            sp.mot_close,
        ];
        let empty_block = vec![sp.mot_open, sp.mot_close];
        assert_eq!(valid_rate(&[good.clone(), good.clone()], &v).unwrap(), 1.0);
        assert_eq!(valid_rate(&[good, empty_block.clone()], &v).unwrap(), 0.5);
        assert_eq!(valid_rate(&[empty_block], &v).unwrap(), 0.0);
    }
}
