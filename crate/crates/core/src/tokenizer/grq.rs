//! Grouped residual quantization of latent rows.

use ndarray::{s, Array2, ArrayView2};

use super::codebook::Codebook;
use crate::error::{Error, Result};

/// Code indices for a latent block, laid out `(step, group, layer)`
/// row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrqCodes {
    pub steps: usize,
    pub groups: usize,
    pub layers: usize,
    pub ids: Vec<u32>,
}

impl GrqCodes {
    pub fn index(&self, step: usize, group: usize, layer: usize) -> usize {
        (step * self.groups + group) * self.layers + layer
    }

    pub fn get(&self, step: usize, group: usize, layer: usize) -> u32 {
        self.ids[self.index(step, group, layer)]
    }
}

/// Everything a training step needs from one quantization pass.
#[derive(Debug, Clone)]
pub(crate) struct GrqTrace {
    pub codes: GrqCodes,
    pub z_hat: Array2<f64>,
    /// Running sum after each layer, `layers` matrices of `steps x d`.
    pub partial: Vec<Array2<f64>>,
    /// Residual entering each layer, same shape as `partial`.
    pub inputs: Vec<Array2<f64>>,
}

fn check_books(width: usize, books: &[Codebook]) -> Result<usize> {
    if books.is_empty() {
        return Err(Error::UninitializedCodebook);
    }
    let gw = width / books.len();
    if gw * books.len() != width {
        return Err(Error::ShapeMismatch(format!(
            "latent width {width} not divisible by {} groups",
            books.len()
        )));
    }
    for b in books {
        if b.is_empty() {
            return Err(Error::UninitializedCodebook);
        }
        if b.width() != gw {
            return Err(Error::ShapeMismatch(format!(
                "codebook width {} != group width {gw}",
                b.width()
            )));
        }
    }
    Ok(gw)
}

/// Greedy residual descent, `layers` stages per group.
pub fn grq_quantize(
    z: ArrayView2<f64>,
    books: &[Codebook],
    layers: usize,
) -> Result<(GrqCodes, Array2<f64>)> {
    let t = quantize_inner(z, books, layers, false)?;
    Ok((t.codes, t.z_hat))
}

pub(crate) fn grq_quantize_traced(
    z: ArrayView2<f64>,
    books: &[Codebook],
    layers: usize,
) -> Result<GrqTrace> {
    quantize_inner(z, books, layers, true)
}

fn quantize_inner(
    z: ArrayView2<f64>,
    books: &[Codebook],
    layers: usize,
    trace: bool,
) -> Result<GrqTrace> {
    let gw = check_books(z.ncols(), books)?;
    let steps = z.nrows();
    let groups = books.len();
    let mut codes = GrqCodes {
        steps,
        groups,
        layers,
        ids: vec![0; steps * groups * layers],
    };
    let mut z_hat = Array2::zeros(z.raw_dim());
    let keep = if trace { layers } else { 0 };
    let mut partial = vec![Array2::zeros(z.raw_dim()); keep];
    let mut inputs = vec![Array2::zeros(z.raw_dim()); keep];
    for (g, book) in books.iter().enumerate() {
        let cols = s![.., g * gw..(g + 1) * gw];
        let mut r = z.slice(cols).to_owned();
        for l in 0..layers {
            if trace {
                inputs[l].slice_mut(cols).assign(&r);
            }
            let idx = book.nearest(r.view())?;
            for (i, &k) in idx.iter().enumerate() {
                let q = book.codes.row(k);
                let mut zr = z_hat.slice_mut(s![i, g * gw..(g + 1) * gw]);
                zr += &q;
                let mut rr = r.row_mut(i);
                rr -= &q;
                let at = codes.index(i, g, l);
                codes.ids[at] = k as u32;
            }
            if trace {
                partial[l].slice_mut(cols).assign(&z_hat.slice(cols));
            }
        }
    }
    Ok(GrqTrace {
        codes,
        z_hat,
        partial,
        inputs,
    })
}

/// Sums the selected codes per group; bitwise-equal to the `z_hat` that
/// [`grq_quantize`] returned for the same indices.
pub fn grq_dequantize(codes: &GrqCodes, books: &[Codebook]) -> Result<Array2<f64>> {
    if books.len() != codes.groups {
        return Err(Error::ShapeMismatch(format!(
            "{} codebooks for {} groups",
            books.len(),
            codes.groups
        )));
    }
    if codes.ids.len() != codes.steps * codes.groups * codes.layers {
        return Err(Error::ShapeMismatch(
            "index count does not match shape".into(),
        ));
    }
    let gw = books.first().map(|b| b.width()).unwrap_or(0);
    check_books(gw * books.len(), books)?;
    let mut z_hat = Array2::zeros((codes.steps, gw * codes.groups));
    for i in 0..codes.steps {
        for (g, book) in books.iter().enumerate() {
            let mut zr = z_hat.slice_mut(s![i, g * gw..(g + 1) * gw]);
            for l in 0..codes.layers {
                let at = codes.index(i, g, l);
                let k = codes.ids[at] as usize;
                if k >= book.len() {
                    return Err(Error::InvalidToken {
                        position: at,
                        id: codes.ids[at],
                    });
                }
                zr += &book.codes.row(k);
            }
        }
    }
    Ok(z_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_books(rng: &mut ChaCha8Rng, groups: usize, k: usize, w: usize) -> Vec<Codebook> {
        (0..groups)
            .map(|_| {
                Codebook::from_codes(Array2::from_shape_fn((k, w), |_| {
                    rng.random_range(-1.0..1.0)
                }))
            })
            .collect()
    }

    #[test]
    fn exact_code_single_layer() {
        let book = Codebook::from_codes(array![[0.0, 1.0], [2.0, -1.0], [3.0, 3.0]]);
        let (codes, z_hat) = grq_quantize(array![[2.0, -1.0]].view(), &[book], 1).unwrap();
        assert_eq!(codes.ids, vec![1]);
        assert_eq!(z_hat, array![[2.0, -1.0]]);
    }

    #[test]
    fn two_layer_hand_enumerated() {
        let book = Codebook::from_codes(array![[0.0, 0.0], [1.0, 1.0]]);
        let (codes, z_hat) = grq_quantize(array![[0.9, 0.9]].view(), &[book], 2).unwrap();
        assert_eq!(codes.ids, vec![1, 0]);
        assert_eq!(z_hat, array![[1.0, 1.0]]);
    }

    #[test]
    fn dequantize_is_bitwise_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let books = random_books(&mut rng, 2, 16, 3);
        let z = Array2::from_shape_fn((50, 6), |_| rng.random_range(-2.0..2.0));
        let (codes, z_hat) = grq_quantize(z.view(), &books, 5).unwrap();
        let back = grq_dequantize(&codes, &books).unwrap();
        for (a, b) in z_hat.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn all_zero_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let books = random_books(&mut rng, 2, 4, 2);
        let codes = GrqCodes {
            steps: 3,
            groups: 2,
            layers: 4,
            ids: vec![0; 24],
        };
        let z = grq_dequantize(&codes, &books).unwrap();
        for i in 0..3 {
            for g in 0..2 {
                for a in 0..2 {
                    let want = 4.0 * books[g].codes[(0, a)];
                    assert!((z[(i, g * 2 + a)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn random_indices_match_manual_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let books = random_books(&mut rng, 3, 7, 2);
        let codes = GrqCodes {
            steps: 4,
            groups: 3,
            layers: 3,
            ids: (0..36).map(|_| rng.random_range(0..7)).collect(),
        };
        let z = grq_dequantize(&codes, &books).unwrap();
        for i in 0..4 {
            for g in 0..3 {
                for a in 0..2 {
                    let mut want = 0.0;
                    for l in 0..3 {
                        want += books[g].codes[(codes.get(i, g, l) as usize, a)];
                    }
                    assert!(z[(i, g * 2 + a)].is_finite());
                    assert!((z[(i, g * 2 + a)] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_range_index_reports_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let books = random_books(&mut rng, 1, 4, 2);
        let codes = GrqCodes {
            steps: 2,
            groups: 1,
            layers: 2,
            ids: vec![0, 1, 2, 9],
        };
        match grq_dequantize(&codes, &books) {
            Err(Error::InvalidToken { position, id }) => assert_eq!((position, id), (3, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_codebook_is_rejected() {
        let r = grq_quantize(array![[0.0, 0.0]].view(), &[Codebook::empty(2)], 1);
        assert!(matches!(r, Err(Error::UninitializedCodebook)));
    }
}
