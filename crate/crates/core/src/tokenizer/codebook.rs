//! EMA-tracked codebooks and nearest-code search.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-5;
/// A code with no hits for this many consecutive updates is reseeded.
pub const DEFAULT_DEAD_AFTER: u64 = 100;

/// Rows per parallel chunk in nearest-code search.
const SEARCH_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// K x width
    pub codes: Array2<f64>,
    pub ema_count: Array1<f64>,
    pub ema_sum: Array2<f64>,
    pub decay: f64,
    pub eps: f64,
    /// Reseed codes idle for this many updates; `None` disables reseeding.
    pub dead_after: Option<u64>,
    updates: u64,
    last_hit: Vec<u64>,
}

/// Per-code hit counts and summed residuals gathered from one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeStats {
    pub hits: Array1<f64>,
    pub sums: Array2<f64>,
}

impl CodeStats {
    pub fn new(k: usize, width: usize) -> Self {
        CodeStats {
            hits: Array1::zeros(k),
            sums: Array2::zeros((k, width)),
        }
    }

    pub fn add(&mut self, code: usize, residual: ArrayView1<f64>) {
        self.hits[code] += 1.0;
        let mut row = self.sums.row_mut(code);
        row += &residual;
    }
}

impl Codebook {
    /// Codebook with the given entries; counts start at one so that each
    /// entry is its own running mean.
    pub fn from_codes(codes: Array2<f64>) -> Self {
        let k = codes.nrows();
        Codebook {
            ema_count: Array1::ones(k),
            ema_sum: codes.clone(),
            codes,
            decay: DEFAULT_DECAY,
            eps: DEFAULT_EPS,
            dead_after: Some(DEFAULT_DEAD_AFTER),
            updates: 0,
            last_hit: vec![0; k],
        }
    }

    pub fn empty(width: usize) -> Self {
        Self::from_codes(Array2::zeros((0, width)))
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.codes.ncols()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Index of the nearest code for every row; ties go to the lowest index.
    pub fn nearest(&self, rows: ArrayView2<f64>) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::UninitializedCodebook);
        }
        let norms: Vec<f64> = self.codes.rows().into_iter().map(|c| c.dot(&c)).collect();
        let starts: Vec<usize> = (0..rows.nrows()).step_by(SEARCH_CHUNK).collect();
        let chunks: Vec<Vec<usize>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + SEARCH_CHUNK).min(rows.nrows());
                let block = rows.slice(ndarray::s![s..e, ..]);
                let cross = block.dot(&self.codes.t());
                cross
                    .rows()
                    .into_iter()
                    .map(|r| {
                        let mut best = 0;
                        let mut best_d = f64::INFINITY;
                        for (k, (&x, &n)) in r.iter().zip(&norms).enumerate() {
                            let d = n - 2.0 * x;
                            if d < best_d {
                                best_d = d;
                                best = k;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Exponential-moving-average update from one batch of assignments.
    ///
    /// `reseed_pool` supplies candidate residuals for codes that have been
    /// idle for `dead_after` updates.
    pub fn ema_update<R: Rng>(
        &mut self,
        stats: &CodeStats,
        reseed_pool: Option<(ArrayView2<f64>, &mut R)>,
    ) {
        let g = self.decay;
        self.updates += 1;
        self.ema_count
            .zip_mut_with(&stats.hits, |c, &h| *c = g * *c + (1.0 - g) * h);
        self.ema_sum
            .zip_mut_with(&stats.sums, |s, &v| *s = g * *s + (1.0 - g) * v);
        for (k, &h) in stats.hits.iter().enumerate() {
            if h > 0.0 {
                self.last_hit[k] = self.updates;
            }
        }
        if let (Some(limit), Some((pool, rng))) = (self.dead_after, reseed_pool) {
            if pool.nrows() > 0 {
                for k in 0..self.len() {
                    if self.updates - self.last_hit[k] >= limit {
                        let pick = rng.random_range(0..pool.nrows());
                        self.ema_sum.row_mut(k).assign(&pool.row(pick));
                        self.ema_count[k] = 1.0;
                        self.last_hit[k] = self.updates;
                    }
                }
            }
        }
        self.refresh_codes();
    }

    fn refresh_codes(&mut self) {
        let eps = self.eps;
        for ((mut code, sum), &count) in self
            .codes
            .axis_iter_mut(Axis(0))
            .zip(self.ema_sum.axis_iter(Axis(0)))
            .zip(self.ema_count.iter())
        {
            let denom = count.max(eps);
            code.zip_mut_with(&sum, |c, &s| *c = s / denom);
        }
    }
}

/// k-means++ seeding: the first centre uniformly, then each next centre with
/// probability proportional to its squared distance from the chosen set.
pub fn kmeans_pp_seed<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let width = points.ncols();
    let mut out = Array2::zeros((k, width));
    if n == 0 || k == 0 {
        return out;
    }
    let first = rng.random_range(0..n);
    out.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, out.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        out.row_mut(c).assign(&points.row(pick));
        if total <= 0.0 {
            // all points already covered: jitter duplicates so codes stay distinct
            let scale = 1e-6;
            for v in out.row_mut(c).iter_mut() {
                *v += scale * rng.random_range(-1.0..1.0);
            }
        }
        let centre = out.row(c);
        for (i, p) in points.rows().into_iter().enumerate() {
            let d = sq_dist(p, centre);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    out
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let book = Codebook::from_codes(array![[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]);
        let idx = book.nearest(array![[0.9, 0.1], [0.0, 0.0]].view()).unwrap();
        assert_eq!(idx, vec![0, 0]);
    }

    #[test]
    fn empty_book_errors() {
        let book = Codebook::empty(2);
        assert!(matches!(
            book.nearest(array![[0.0, 0.0]].view()),
            Err(Error::UninitializedCodebook)
        ));
    }

    #[test]
    fn no_hits_keeps_codes() {
        let mut book = Codebook::from_codes(array![[0.5, -1.0], [2.0, 3.0]]);
        book.dead_after = None;
        let before = book.codes.clone();
        book.ema_update::<ChaCha8Rng>(&CodeStats::new(2, 2), None);
        for (a, b) in book.codes.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_closed_form() {
        // count 1, sum c0 -> count 1, sum 0.99 c0 + 0.01 v
        let c0 = array![[1.0, 2.0]];
        let v = array![3.0, -2.0];
        let mut book = Codebook::from_codes(c0.clone());
        let mut stats = CodeStats::new(1, 2);
        stats.add(0, v.view());
        book.ema_update::<ChaCha8Rng>(&stats, None);
        let expect = &c0.row(0) * 0.99 + &v * 0.01;
        for (a, b) in book.codes.row(0).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((book.ema_count[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_to_cluster_means() {
        // k-means fixed point on two well-separated clusters
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut book = Codebook::from_codes(array![[0.5, 0.5], [-0.5, -0.5]]);
        let centres = [array![2.0, 1.0], array![-1.0, -3.0]];
        let mut means = [Array1::<f64>::zeros(2), Array1::<f64>::zeros(2)];
        let mut counts = [0.0f64; 2];
        let mut batches = Vec::new();
        for _ in 0..20 {
            let mut pts = Array2::zeros((64, 2));
            for i in 0..64 {
                let c = &centres[i % 2];
                for a in 0..2 {
                    pts[(i, a)] = c[a] + rng.random_range(-0.3..0.3);
                }
                means[i % 2] += &pts.row(i);
                counts[i % 2] += 1.0;
            }
            batches.push(pts);
        }
        for m in 0..2 {
            means[m] /= counts[m];
        }
        // stationary distribution: replay the same batches many times
        for _ in 0..100 {
            for pts in &batches {
                let idx = book.nearest(pts.view()).unwrap();
                let mut stats = CodeStats::new(2, 2);
                for (i, &k) in idx.iter().enumerate() {
                    stats.add(k, pts.row(i));
                }
                let mut norm = stats.clone();
                // per-batch means as the assigned statistic
                for k in 0..2 {
                    let h = norm.hits[k];
                    norm.sums.row_mut(k).mapv_inplace(|v| v / h);
                    norm.hits[k] = 1.0;
                }
                book.ema_update::<ChaCha8Rng>(&norm, None);
            }
        }
        let idx = book
            .nearest(array![[2.0, 1.0], [-1.0, -3.0]].view())
            .unwrap();
        for (m, &k) in idx.iter().enumerate() {
            for a in 0..2 {
                assert!((book.codes[(k, a)] - means[m][a]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dead_codes_are_reseeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut book = Codebook::from_codes(array![[0.0, 0.0], [100.0, 100.0]]);
        book.dead_after = Some(3);
        let pool = array![[1.0, 1.0]];
        for _ in 0..3 {
            let mut stats = CodeStats::new(2, 2);
            stats.add(0, array![0.0, 0.0].view());
            book.ema_update(&stats, Some((pool.view(), &mut rng)));
        }
        assert_eq!(book.codes.row(1).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn kmeans_pp_picks_distinct_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = array![[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [-5.0, 5.0]];
        let seeds = kmeans_pp_seed(pts.view(), 3, &mut rng);
        let mut rows: Vec<(i64, i64)> = seeds
            .rows()
            .into_iter()
            .map(|r| (r[0] as i64, r[1] as i64))
            .collect();
        rows.sort();
        assert_eq!(rows, vec![(-5, 5), (0, 0), (5, 5)]);
    }
}
