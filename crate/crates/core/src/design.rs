//! Nested Latin hypercube designs across fidelity levels.
//!
//! A nested design assigns `n_s` points to fidelity level `t_s` such that
//! the design of each higher-fidelity level is an exact subset of the
//! lower-fidelity one, and every level is a Latin hypercube: along each
//! dimension its `n_s` points occupy `n_s` distinct equal-width strata.
//!
//! Construction is bottom-up: an ordinary LHS of the smallest size is drawn
//! first; going to the next (larger) level each stratum splits into
//! `n_s / n_{s+1}` sub-strata, existing points keep their positions (they
//! occupy distinct sub-strata automatically) and the vacant sub-strata are
//! filled with fresh uniform draws, shuffled per dimension.
//!
//! Points live on the unit cube; affine mapping to the physical domain
//! happens at the use site and preserves stratification.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Multi-level nested Latin hypercube design on `[0, 1]^d`.
///
/// Points are stored once; `depth[i]` is the highest level index the point
/// belongs to, so level `s` consists of all points with `depth >= s`.
/// Level 0 is the lowest fidelity and has all `n_1` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedDesign {
    levels: Vec<f64>,
    sizes: Vec<usize>,
    dim: usize,
    points: Vec<Vec<f64>>,
    depth: Vec<usize>,
}

fn stratum(x: f64, n: usize) -> usize {
    ((x * n as f64) as usize).min(n - 1)
}

fn check_sizes_and_levels(sizes: &[usize], levels: &[f64]) -> Result<()> {
    if sizes.is_empty() || sizes.len() != levels.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching nonempty sizes and levels, got {} and {}",
            sizes.len(),
            levels.len()
        )));
    }
    if sizes.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument("level sizes must be positive".into()));
    }
    for w in sizes.windows(2) {
        if w[0] <= w[1] {
            return Err(Error::InvalidArgument(format!(
                "sizes must be strictly decreasing, got {} then {}",
                w[0], w[1]
            )));
        }
        if w[0] % w[1] != 0 {
            return Err(Error::InvalidArgument(format!(
                "size {} does not divide {}",
                w[1], w[0]
            )));
        }
    }
    if !levels.iter().all(|&t| t.is_finite() && t > 0.0)
        || !levels.windows(2).all(|w| w[0] > w[1])
    {
        return Err(Error::InvalidArgument(
            "levels must be strictly decreasing and positive".into(),
        ));
    }
    Ok(())
}

/// Generate a nested LHS with the given per-level sizes and fidelity values.
///
/// `sizes` and `levels` run from the lowest fidelity (most points, largest
/// `t`) to the highest (fewest points, smallest `t`).
pub fn generate_nlhs(
    dim: usize,
    sizes: &[usize],
    levels: &[f64],
    rng: &mut Stream,
) -> Result<NestedDesign> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    check_sizes_and_levels(sizes, levels)?;
    let n_levels = sizes.len();
    let finest = n_levels - 1;

    // plain LHS at the finest level
    let n_fine = sizes[finest];
    let mut points: Vec<Vec<f64>> = vec![vec![0.0; dim]; n_fine];
    let mut depth = vec![finest; n_fine];
    for k in 0..dim {
        let mut strata: Vec<usize> = (0..n_fine).collect();
        strata.shuffle(rng);
        for (i, &st) in strata.iter().enumerate() {
            points[i][k] = (st as f64 + rng.gen_range(0.0..1.0)) / n_fine as f64;
        }
    }

    // refine towards the coarser (larger) levels
    for s in (0..finest).rev() {
        let n_new_total = sizes[s];
        let n_old = points.len();
        let n_add = n_new_total - n_old;
        // free strata per dimension, shuffled
        let mut free: Vec<Vec<usize>> = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut occupied = vec![false; n_new_total];
            for p in &points {
                occupied[stratum(p[k], n_new_total)] = true;
            }
            let mut f: Vec<usize> =
                (0..n_new_total).filter(|&st| !occupied[st]).collect();
            debug_assert_eq!(f.len(), n_add);
            f.shuffle(rng);
            free.push(f);
        }
        for j in 0..n_add {
            let mut p = vec![0.0; dim];
            for k in 0..dim {
                p[k] = (free[k][j] as f64 + rng.gen_range(0.0..1.0)) / n_new_total as f64;
            }
            points.push(p);
            depth.push(s);
        }
    }

    let design = NestedDesign {
        levels: levels.to_vec(),
        sizes: sizes.to_vec(),
        dim,
        points,
        depth,
    };
    design.check_invariants()?;
    Ok(design)
}

impl NestedDesign {
    /// Rebuild a design from explicit per-level point lists, validating the
    /// nesting and LHS invariants (used by CSV import).
    pub fn from_level_points(
        levels: Vec<f64>,
        level_points: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let sizes: Vec<usize> = level_points.iter().map(|p| p.len()).collect();
        check_sizes_and_levels(&sizes, &levels)?;
        let dim = level_points
            .first()
            .and_then(|l| l.first())
            .map(|p| p.len())
            .ok_or_else(|| Error::InvalidArgument("empty design".into()))?;
        // points of level s+1 must appear exactly in level s
        for s in 0..sizes.len() - 1 {
            for p in &level_points[s + 1] {
                if !level_points[s].iter().any(|q| q == p) {
                    return Err(Error::InvalidArgument(format!(
                        "nesting violated: a level-{} point is missing from level {}",
                        s + 2,
                        s + 1
                    )));
                }
            }
        }
        let mut points = Vec::with_capacity(sizes[0]);
        let mut depth = Vec::with_capacity(sizes[0]);
        for p in &level_points[0] {
            if p.len() != dim {
                return Err(Error::DimensionMismatch("ragged design point".into()));
            }
            let mut d = 0;
            for s in 1..sizes.len() {
                if level_points[s].iter().any(|q| q == p) {
                    d = s;
                }
            }
            points.push(p.clone());
            depth.push(d);
        }
        let design = NestedDesign {
            levels,
            sizes,
            dim,
            points,
            depth,
        };
        design.check_invariants()?;
        Ok(design)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_levels(&self) -> usize {
        self.sizes.len()
    }

    /// Points of level `s` on the unit cube.
    pub fn level_points(&self, s: usize) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .zip(&self.depth)
            .filter(|(_, &d)| d >= s)
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// Points of level `s` affinely mapped to the given domain.
    pub fn level_points_scaled(&self, s: usize, bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
        if bounds.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "{} bounds for {}-dimensional design",
                bounds.len(),
                self.dim
            )));
        }
        Ok(self
            .level_points(s)
            .into_iter()
            .map(|p| {
                p.iter()
                    .zip(bounds)
                    .map(|(&x, &(a, b))| a + x * (b - a))
                    .collect()
            })
            .collect())
    }

    /// Verify both structural invariants exhaustively: every level is a
    /// Latin hypercube and level memberships are consistent with the sizes.
    pub fn check_invariants(&self) -> Result<()> {
        check_sizes_and_levels(&self.sizes, &self.levels)?;
        if self.points.len() != self.sizes[0] || self.depth.len() != self.points.len() {
            return Err(Error::InvalidArgument("inconsistent point storage".into()));
        }
        for p in &self.points {
            if p.len() != self.dim || !p.iter().all(|&x| (0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidArgument(
                    "design points must lie in the unit cube".into(),
                ));
            }
        }
        for s in 0..self.n_levels() {
            let pts = self.level_points(s);
            if pts.len() != self.sizes[s] {
                return Err(Error::InvalidArgument(format!(
                    "level {} has {} points, expected {}",
                    s + 1,
                    pts.len(),
                    self.sizes[s]
                )));
            }
            let n = self.sizes[s];
            for k in 0..self.dim {
                let mut seen = vec![false; n];
                for p in &pts {
                    let st = stratum(p[k], n);
                    if seen[st] {
                        return Err(Error::InvalidArgument(format!(
                            "LHS property violated at level {}, dimension {k}: stratum {st} occupied twice",
                            s + 1
                        )));
                    }
                    seen[st] = true;
                }
            }
        }
        Ok(())
    }

    /// The two smallest pairwise distances over all points.
    fn min_two_distances(points: &[Vec<f64>]) -> (f64, f64) {
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        for i in 0..points.len() {
            for j in 0..i {
                let mut d2 = 0.0;
                for k in 0..points[i].len() {
                    let d = points[i][k] - points[j][k];
                    d2 += d * d;
                }
                if d2 < best {
                    second = best;
                    best = d2;
                } else if d2 < second {
                    second = d2;
                }
            }
        }
        (best, second)
    }

    /// Minimum pairwise Euclidean distance at the densest level.
    pub fn min_distance(&self) -> f64 {
        Self::min_two_distances(&self.points).0.sqrt()
    }
}

/// Improve the maximin criterion by random nesting-preserving moves.
///
/// Two proposal kinds are used: re-drawing one point inside its finest
/// stratum, and swapping one coordinate between two points that belong to
/// exactly the same levels. Both preserve the design invariants, so only
/// improvements of (minimum, second-minimum) pairwise distance at the
/// densest level are accepted.
pub fn maximin_improve(
    design: &NestedDesign,
    iterations: usize,
    rng: &mut Stream,
) -> NestedDesign {
    let mut d = design.clone();
    let n = d.points.len();
    if n < 2 || iterations == 0 {
        return d;
    }
    let n0 = d.sizes[0];
    let dim = d.dim;
    let mut objective = NestedDesign::min_two_distances(&d.points);

    // indices grouped by depth for the swap proposal
    let mut by_depth: Vec<Vec<usize>> = vec![Vec::new(); d.n_levels()];
    for (i, &dep) in d.depth.iter().enumerate() {
        by_depth[dep].push(i);
    }

    for _ in 0..iterations {
        if rng.gen_bool(0.5) {
            // jitter one point within its finest stratum
            let i = rng.gen_range(0..n);
            let old = d.points[i].clone();
            for k in 0..dim {
                let st = stratum(old[k], n0);
                d.points[i][k] = (st as f64 + rng.gen_range(0.0..1.0)) / n0 as f64;
            }
            let cand = NestedDesign::min_two_distances(&d.points);
            if cand > objective {
                objective = cand;
            } else {
                d.points[i] = old;
            }
        } else {
            // swap one coordinate between two same-depth points
            let dep = rng.gen_range(0..d.n_levels());
            let group = &by_depth[dep];
            if group.len() < 2 {
                continue;
            }
            let a = group[rng.gen_range(0..group.len())];
            let b = group[rng.gen_range(0..group.len())];
            if a == b {
                continue;
            }
            let k = rng.gen_range(0..dim);
            let (va, vb) = (d.points[a][k], d.points[b][k]);
            d.points[a][k] = vb;
            d.points[b][k] = va;
            let cand = NestedDesign::min_two_distances(&d.points);
            if cand > objective {
                objective = cand;
            } else {
                d.points[a][k] = va;
                d.points[b][k] = vb;
            }
        }
    }
    debug_assert!(d.check_invariants().is_ok());
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_levels(n: usize) -> Vec<f64> {
        (0..n).map(|s| 1.0 / 2.0f64.powi(s as i32)).collect()
    }

    #[test]
    fn default_paper_design_is_valid() {
        let sizes = [168, 56, 28, 14, 7];
        let levels = [1.0, 0.5, 0.1, 0.05, 0.01];
        let mut rng = crate::rng::stream(1, &[]);
        let d = generate_nlhs(2, &sizes, &levels, &mut rng).unwrap();
        d.check_invariants().unwrap();
        assert_eq!(d.level_points(0).len(), 168);
        assert_eq!(d.level_points(4).len(), 7);
    }

    #[test]
    fn two_one_design_covers_both_strata() {
        let mut rng = crate::rng::stream(2, &[]);
        let d = generate_nlhs(1, &[2, 1], &default_levels(2), &mut rng).unwrap();
        let coarse = d.level_points(0);
        let fine = d.level_points(1);
        assert_eq!(fine.len(), 1);
        let fine_stratum = (fine[0][0] * 2.0) as usize;
        let strata: Vec<usize> = coarse.iter().map(|p| (p[0] * 2.0) as usize).collect();
        assert!(strata.contains(&fine_stratum));
        assert!(strata.contains(&(1 - fine_stratum)));
    }

    #[test]
    fn four_two_design_brute_force_strata() {
        let mut rng = crate::rng::stream(3, &[]);
        let d = generate_nlhs(2, &[4, 2], &default_levels(2), &mut rng).unwrap();
        // exhaustive stratum count per level and dimension
        for (s, n) in [(0usize, 4usize), (1, 2)] {
            let pts = d.level_points(s);
            assert_eq!(pts.len(), n);
            for k in 0..2 {
                let mut strata: Vec<usize> =
                    pts.iter().map(|p| ((p[k] * n as f64) as usize).min(n - 1)).collect();
                strata.sort_unstable();
                assert_eq!(strata, (0..n).collect::<Vec<_>>());
            }
        }
        // nesting: the 2 fine points appear among the 4 coarse ones
        let coarse = d.level_points(0);
        for p in d.level_points(1) {
            assert!(coarse.contains(&p));
        }
    }

    #[test]
    fn divisibility_and_ordering_enforced() {
        let mut rng = crate::rng::stream(4, &[]);
        assert!(generate_nlhs(2, &[10, 4], &default_levels(2), &mut rng).is_err());
        assert!(generate_nlhs(2, &[4, 4], &default_levels(2), &mut rng).is_err());
        assert!(generate_nlhs(2, &[4, 8], &default_levels(2), &mut rng).is_err());
        assert!(generate_nlhs(0, &[4, 2], &default_levels(2), &mut rng).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let sizes = [8, 4, 2];
        let levels = default_levels(3);
        let a = generate_nlhs(3, &sizes, &levels, &mut crate::rng::stream(5, &[7])).unwrap();
        let b = generate_nlhs(3, &sizes, &levels, &mut crate::rng::stream(5, &[7])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn maximin_zero_iterations_is_identity() {
        let mut rng = crate::rng::stream(6, &[]);
        let d = generate_nlhs(2, &[8, 2], &default_levels(2), &mut rng).unwrap();
        let improved = maximin_improve(&d, 0, &mut rng);
        assert_eq!(d, improved);
    }

    #[test]
    fn maximin_improves_and_preserves_invariants() {
        let mut rng = crate::rng::stream(7, &[]);
        let d = generate_nlhs(2, &[32, 8, 4], &default_levels(3), &mut rng).unwrap();
        let before = d.min_distance();
        let improved = maximin_improve(&d, 2_000, &mut rng);
        improved.check_invariants().unwrap();
        assert!(improved.min_distance() >= before);
        // nesting still exact
        for s in 1..3 {
            let coarse = improved.level_points(s - 1);
            for p in improved.level_points(s) {
                assert!(coarse.contains(&p));
            }
        }
    }

    #[test]
    fn maximin_single_point_unchanged() {
        let mut rng = crate::rng::stream(8, &[]);
        let d = generate_nlhs(2, &[1], &[1.0], &mut rng).unwrap();
        let improved = maximin_improve(&d, 100, &mut rng);
        assert_eq!(d, improved);
    }

    #[test]
    fn affine_mapping_preserves_stratification() {
        let mut rng = crate::rng::stream(9, &[]);
        let d = generate_nlhs(2, &[6, 2], &default_levels(2), &mut rng).unwrap();
        let bounds = [(0.0, 30.0), (-1.0, 1.0)];
        for s in 0..2 {
            let n = d.sizes()[s];
            let scaled = d.level_points_scaled(s, &bounds).unwrap();
            for k in 0..2 {
                let (a, b) = bounds[k];
                let mut strata: Vec<usize> = scaled
                    .iter()
                    .map(|p| ((((p[k] - a) / (b - a)) * n as f64) as usize).min(n - 1))
                    .collect();
                strata.sort_unstable();
                assert_eq!(strata, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn import_validates_nesting() {
        let mut rng = crate::rng::stream(10, &[]);
        let d = generate_nlhs(2, &[4, 2], &default_levels(2), &mut rng).unwrap();
        let lp: Vec<Vec<Vec<f64>>> = (0..2).map(|s| d.level_points(s)).collect();
        let rebuilt = NestedDesign::from_level_points(d.levels().to_vec(), lp.clone()).unwrap();
        assert_eq!(rebuilt.level_points(1), d.level_points(1));

        // corrupt the nesting
        let mut bad = lp;
        bad[1][0][0] = (bad[1][0][0] + 0.43) % 1.0;
        assert!(NestedDesign::from_level_points(d.levels().to_vec(), bad).is_err());
    }
}
