//! Seeded synthetic histogram generators: Gaussian blobs with jittered
//! centers, grouped into classes by blob width and count.

use crate::hist::Histogram;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Unnormalized Gaussian bump centered at (`cr`, `cc`) on an `h`×`w` grid.
pub fn gaussian_blob(h: usize, w: usize, cr: f64, cc: f64, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            out.push((-(dr * dr + dc * dc) * inv).exp());
        }
    }
    out
}

/// A labeled collection of blob histograms. Class `k` draws `1 + k % 2`
/// blobs of width `sigma = 1.0 + 0.5·(k / 2)`, centers jittered uniformly
/// inside the grid margin, so classes differ in shape while samples within
/// a class differ in position.
pub fn blob_collection(
    n: usize,
    h: usize,
    w: usize,
    n_classes: usize,
    seed: u64,
) -> (Vec<Histogram>, Vec<u8>) {
    assert!(n_classes >= 1 && n_classes <= 256);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hists = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % n_classes;
        let n_blobs = 1 + class % 2;
        let sigma = 1.0 + 0.5 * (class / 2) as f64;
        let margin = (2.0 * sigma).min((h.min(w) as f64 - 1.0) / 2.0);
        let mut raw = vec![0.0; h * w];
        for _ in 0..n_blobs {
            let cr = rng.gen_range(margin..=(h as f64 - 1.0 - margin).max(margin));
            let cc = rng.gen_range(margin..=(w as f64 - 1.0 - margin).max(margin));
            for (dst, src) in raw.iter_mut().zip(gaussian_blob(h, w, cr, cc, sigma)) {
                *dst += src;
            }
        }
        hists.push(Histogram::normalize(&raw, h, w).expect("blob mass is positive"));
        labels.push(class as u8);
    }
    (hists, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collection_is_seeded_and_labeled() {
        let (a, la) = blob_collection(12, 10, 10, 3, 7);
        let (b, _) = blob_collection(12, 10, 10, 3, 7);
        assert_eq!(a.len(), 12);
        assert_eq!(la, vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mass(), y.mass());
        }
        let (c, _) = blob_collection(12, 10, 10, 3, 8);
        assert!(a[0].mass() != c[0].mass());
    }

    #[test]
    fn every_sample_is_a_histogram() {
        let (hists, _) = blob_collection(20, 8, 8, 4, 1);
        for h in hists {
            let s: f64 = h.mass().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(h.mass().iter().all(|&v| v >= 0.0));
        }
    }
}
