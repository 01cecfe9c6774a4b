//! Padding variable-count entities into fixed-capacity tensors.

use ndarray::Array2;

/// Indices of the `capacity` nearest entities by the given distances, in
/// stable input order. Ties are broken by input position.
pub fn select_nearest_indices(dists: &[f64], capacity: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| {
        dists[a]
            .partial_cmp(&dists[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = order.into_iter().take(capacity).collect();
    keep.sort_unstable();
    keep
}

/// Pack rows into a `[capacity, width]` tensor: the first `min(len, capacity)`
/// slots hold the inputs, the rest are exactly zero with validity false.
pub fn pad_and_mask(rows: &[Vec<f32>], capacity: usize, width: usize) -> (Array2<f32>, Vec<bool>) {
    let mut out = Array2::<f32>::zeros((capacity, width));
    let mut valid = vec![false; capacity];
    for (i, row) in rows.iter().take(capacity).enumerate() {
        assert_eq!(row.len(), width, "row {i} width mismatch");
        for (j, v) in row.iter().enumerate() {
            out[[i, j]] = *v;
        }
        valid[i] = true;
    }
    (out, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pads_with_zeros() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let (t, valid) = pad_and_mask(&rows, 30, 2);
        assert_eq!(t.dim(), (30, 2));
        assert_eq!(&valid[..3], &[true, true, true]);
        assert!(valid[3..].iter().all(|v| !*v));
        assert!(t.rows().into_iter().skip(3).all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn empty_input() {
        let (t, valid) = pad_and_mask(&[], 4, 3);
        assert!(t.iter().all(|v| *v == 0.0));
        assert!(valid.iter().all(|v| !*v));
    }

    #[test]
    fn zero_iff_invalid() {
        // tensor[i] is all-zero iff validity[i] is false (rows here are nonzero).
        let rows = vec![vec![0.5f32], vec![-1.0]];
        let (t, valid) = pad_and_mask(&rows, 5, 1);
        for i in 0..5 {
            let all_zero = t.row(i).iter().all(|v| *v == 0.0);
            assert_eq!(all_zero, !valid[i]);
        }
    }

    #[test]
    fn nearest_selection_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let cap = rng.gen_range(1..40usize);
            let dists: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
            let got = select_nearest_indices(&dists, cap);

            // Brute force: repeatedly take the closest remaining entity.
            let mut remaining: Vec<usize> = (0..n).collect();
            let mut expect = Vec::new();
            while expect.len() < cap.min(n) {
                let best = *remaining
                    .iter()
                    .min_by(|&&a, &&b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)))
                    .unwrap();
                remaining.retain(|&i| i != best);
                expect.push(best);
            }
            expect.sort_unstable();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn ties_keep_input_order() {
        let dists = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(select_nearest_indices(&dists, 2), vec![0, 1]);
    }
}
