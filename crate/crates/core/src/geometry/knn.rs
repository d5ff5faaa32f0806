use super::GeometryError;

/// Brute-force k nearest neighbours by Euclidean distance.
///
/// `queries` is M×dim and `keys` N×dim, both row-major. Returns M×k key
/// indices, nearest first, ties broken by the lower index. When queries and
/// keys are the same set each point is its own first neighbour.
pub fn knn(
    queries: &[f64],
    keys: &[f64],
    dim: usize,
    k: usize,
) -> Result<Vec<usize>, GeometryError> {
    if dim == 0 || !queries.len().is_multiple_of(dim) || !keys.len().is_multiple_of(dim) {
        return Err(GeometryError::Invalid(format!(
            "buffers of length {} and {} are not multiples of dim {dim}",
            queries.len(),
            keys.len()
        )));
    }
    let n = keys.len() / dim;
    if k > n {
        return Err(GeometryError::KTooLarge { k, n });
    }
    if k == 0 {
        return Err(GeometryError::Invalid("k must be at least 1".into()));
    }
    // keys stored dimension-major so the per-query loop runs over
    // contiguous key coordinates; each distance still sums dimensions in
    // order, so it depends only on the two rows involved
    let mut columns = vec![0.0; n * dim];
    for (j, key) in keys.chunks_exact(dim).enumerate() {
        for (d, &x) in key.iter().enumerate() {
            columns[d * n + j] = x;
        }
    }
    let m = queries.len() / dim;
    let mut out = Vec::with_capacity(m * k);
    let mut dist = vec![0.0; QUERIES * n];
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for q0 in (0..m).step_by(QUERIES) {
        let rows = QUERIES.min(m - q0);
        let block = &queries[q0 * dim..(q0 + rows) * dim];
        distances(block, &columns, dim, n, &mut dist[..rows * n]);
        for row in dist[..rows * n].chunks_exact(n) {
            // sorted k best so far; keys arrive in index order, so a
            // candidate tied with the current worst loses, matching
            // (distance, index) order
            best.clear();
            for (j, &dj) in row.iter().enumerate() {
                if best.len() == k {
                    if dj >= best[k - 1].0 {
                        continue;
                    }
                    best.pop();
                }
                let at = best.partition_point(|&(d, _)| d <= dj);
                best.insert(at, (dj, j));
            }
            out.extend(best.iter().map(|&(_, j)| j));
        }
    }
    Ok(out)
}

const QUERIES: usize = 4;
const KEYS: usize = 8;

/// Squared distances from each query row of `block` to all `n` keys, with
/// every sum taken over dimensions in order.
fn distances(block: &[f64], columns: &[f64], dim: usize, n: usize, dist: &mut [f64]) {
    let rows = block.len() / dim;
    let full = n - n % KEYS;
    if rows == QUERIES {
        for j in (0..full).step_by(KEYS) {
            let mut acc = [[0.0; KEYS]; QUERIES];
            for d in 0..dim {
                let xs: &[f64; KEYS] = columns[d * n + j..d * n + j + KEYS]
                    .try_into()
                    .expect("width");
                for (r, lane) in acc.iter_mut().enumerate() {
                    let qd = block[r * dim + d];
                    for (a, &x) in lane.iter_mut().zip(xs) {
                        let t = x - qd;
                        *a += t * t;
                    }
                }
            }
            for (r, lane) in acc.iter().enumerate() {
                dist[r * n + j..r * n + j + KEYS].copy_from_slice(lane);
            }
        }
    }
    let from = if rows == QUERIES { full } else { 0 };
    for (r, q) in block.chunks_exact(dim).enumerate() {
        let row = &mut dist[r * n + from..(r + 1) * n];
        row.iter_mut().for_each(|x| *x = 0.0);
        for (d, &qd) in q.iter().enumerate() {
            for (a, &x) in row.iter_mut().zip(&columns[d * n + from..(d + 1) * n]) {
                let t = x - qd;
                *a += t * t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exhaustive(queries: &[f64], keys: &[f64], dim: usize, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for q in queries.chunks(dim) {
            let mut all: Vec<(f64, usize)> = keys
                .chunks(dim)
                .enumerate()
                .map(|(j, key)| (q.iter().zip(key).map(|(a, b)| (a - b).powi(2)).sum(), j))
                .collect();
            // stable sort on distance keeps equal distances in index order
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            out.extend(all.iter().take(k).map(|p| p.1));
        }
        out
    }

    #[test]
    fn line_example() {
        let keys = [0.0, 1.0, 3.0];
        assert_eq!(knn(&[0.0], &keys, 1, 2).unwrap(), vec![0, 1]);
        assert_eq!(knn(&[2.9], &keys, 1, 3).unwrap(), vec![2, 1, 0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let keys = [-1.0, 1.0, 0.0];
        assert_eq!(knn(&[0.0], &keys, 1, 3).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn k_larger_than_keys_is_rejected() {
        assert!(matches!(
            knn(&[0.0], &[1.0, 2.0], 1, 3),
            Err(GeometryError::KTooLarge { k: 3, n: 2 })
        ));
    }

    #[test]
    fn self_query_includes_self() {
        let pts = [0.0, 0.0, 1.0, 1.0, 5.0, 5.0];
        let idx = knn(&pts, &pts, 2, 1).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn matches_exhaustive_sort(
            dim in prop::sample::select(vec![3usize, 8, 64]),
            n in 1usize..40,
            m in 1usize..6,
            seed in any::<u64>(),
            kfrac in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let keys: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let queries: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = 1 + ((n - 1) as f64 * kfrac) as usize;
            prop_assert_eq!(knn(&queries, &keys, dim, k).unwrap(), exhaustive(&queries, &keys, dim, k));
        }
    }
}
