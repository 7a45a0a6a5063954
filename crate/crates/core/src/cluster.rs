//! Average-linkage agglomerative clustering over a distance matrix.

/// Linkage values closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

/// Clusters `n` points into `min(k, n)` groups with average linkage.
///
/// `dist` must be a symmetric `n × n` matrix. At each step the pair with the
/// smallest mean pairwise distance merges; ties go to the pair whose smallest
/// members come first. Returns a label per point, labels numbered by the
/// smallest member of each cluster.
pub fn average_linkage(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    // Cluster with smallest member `i` lives in slot `i`; `sums[i][j]` is the
    // total distance between the members of slots i and j.
    let mut sums: Vec<Vec<f64>> = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();

    while active.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                let link = sums[i][j] / (size[i] * size[j]) as f64;
                if best.is_none_or(|(b, _, _)| link < b - TIE_EPS) {
                    best = Some((link, i, j));
                }
            }
        }
        let (_, keep, gone) = best.expect("at least two active clusters");
        for &c in &active {
            if c != keep && c != gone {
                let merged = sums[keep][c] + sums[gone][c];
                sums[keep][c] = merged;
                sums[c][keep] = merged;
            }
        }
        size[keep] += size[gone];
        parent[gone] = keep;
        active.retain(|&c| c != gone);
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    (0..n)
        .map(|p| {
            let r = root(p);
            active.iter().position(|&a| a == r).expect("root is active")
        })
        .collect()
}
