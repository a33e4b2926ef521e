//! Farthest point sampling and k-nearest-neighbour grouping.
//!
//! Distances are squared Euclidean throughout; ties always resolve to the
//! lowest source index so results are reproducible.

use rand::Rng;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// How the first farthest-point sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// Always start at this index (evaluation and tests).
    Fixed(usize),
    /// Uniformly random index drawn from the given seed (training).
    Random,
}

#[inline]
pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Picks `m` indices, each maximizing the distance to the set chosen so far.
///
/// Brute force, `O(N * m)`: one pass per sample updates each point's
/// distance to its nearest chosen point.
pub fn farthest_point_sample(
    cloud: &PointCloud,
    m: usize,
    start: StartPolicy,
    seed: u64,
) -> Result<Vec<usize>> {
    let pts = cloud.points();
    let n = pts.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!("cannot draw {m} samples from {n} points")));
    }
    let first = match start {
        StartPolicy::Fixed(i) if i < n => i,
        StartPolicy::Fixed(i) => {
            return Err(Error::Argument(format!("start index {i} out of range for {n} points")))
        }
        StartPolicy::Random => rng_for(seed, &[0xf95]).random_range(0..n),
    };
    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    let mut nearest = vec![f64::INFINITY; n];
    let mut last = first;
    while chosen.len() < m {
        let anchor = pts[last];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, d)) in pts.iter().zip(nearest.iter_mut()).enumerate() {
            let nd = dist2(*p, anchor);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        // Duplicate points can exhaust all positive distances; fall back to
        // the lowest index not yet chosen so indices stay distinct.
        if best_d <= 0.0 {
            best = (0..n).find(|i| !chosen.contains(i)).expect("m <= n");
        }
        chosen.push(best);
        last = best;
    }
    Ok(chosen)
}

/// Key points, their neighbourhoods, and where both came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedBatch {
    pub keys: Vec<[f64; 3]>,
    /// `keys.len() * k` points, row `i` holding the neighbourhood of key `i`
    /// in ascending distance.
    pub groups: Vec<[f64; 3]>,
    pub key_indices: Vec<usize>,
    pub group_indices: Vec<usize>,
    pub k: usize,
    /// Whether `groups` are expressed relative to their key.
    pub centered: bool,
}

impl GroupedBatch {
    pub fn n_keys(&self) -> usize {
        self.keys.len()
    }

    pub fn group(&self, i: usize) -> &[[f64; 3]] {
        &self.groups[i * self.k..(i + 1) * self.k]
    }

    pub fn group_indices_of(&self, i: usize) -> &[usize] {
        &self.group_indices[i * self.k..(i + 1) * self.k]
    }
}

/// The `k` nearest source points of each key, ascending by distance with
/// ties broken by lower index. A key is its own nearest neighbour.
pub fn knn_group(cloud: &PointCloud, key_indices: &[usize], k: usize) -> Result<GroupedBatch> {
    let pts = cloud.points();
    let n = pts.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot group {k} neighbours from {n} points")));
    }
    if let Some(&bad) = key_indices.iter().find(|&&i| i >= n) {
        return Err(Error::Argument(format!("key index {bad} out of range for {n} points")));
    }
    let mut keys = Vec::with_capacity(key_indices.len());
    let mut groups = Vec::with_capacity(key_indices.len() * k);
    let mut group_indices = Vec::with_capacity(key_indices.len() * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &ki in key_indices {
        let key = pts[ki];
        keys.push(key);
        order.clear();
        order.extend(pts.iter().enumerate().map(|(i, p)| (dist2(*p, key), i)));
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            order.select_nth_unstable_by(k - 1, by);
        }
        order[..k].sort_unstable_by(by);
        for &(_, i) in &order[..k] {
            group_indices.push(i);
            groups.push(pts[i]);
        }
    }
    Ok(GroupedBatch {
        keys,
        groups,
        key_indices: key_indices.to_vec(),
        group_indices,
        k,
        centered: false,
    })
}

/// Expresses every group in coordinates relative to its key point.
pub fn center_groups(batch: &GroupedBatch) -> GroupedBatch {
    let mut out = batch.clone();
    if batch.centered {
        return out;
    }
    for (i, key) in batch.keys.iter().enumerate() {
        for p in &mut out.groups[i * batch.k..(i + 1) * batch.k] {
            *p = [p[0] - key[0], p[1] - key[1], p[2] - key[2]];
        }
    }
    out.centered = true;
    out
}

/// FPS followed by kNN grouping and optional centering.
pub fn group_cloud(
    cloud: &PointCloud,
    m: usize,
    k: usize,
    start: StartPolicy,
    seed: u64,
    center: bool,
) -> Result<GroupedBatch> {
    let keys = farthest_point_sample(cloud, m, start, seed)?;
    let batch = knn_group(cloud, &keys, k)?;
    Ok(if center { center_groups(&batch) } else { batch })
}
