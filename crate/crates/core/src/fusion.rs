//! Consensus segmentation from several rater masks.
//!
//! [`staple_fuse`] runs binary STAPLE: an expectation-maximization loop that
//! alternates between the voxelwise posterior probability of foreground and
//! per-rater sensitivity/specificity estimates. Thresholding its posterior
//! at 0.5 gives a silver-standard mask. [`majority_vote`] is the simple
//! baseline.
//!
//! The posterior at a voxel depends only on which raters marked it, so the
//! EM iterations run over the distinct rater patterns present in the data
//! (weighted by their voxel counts) rather than over every voxel. Raters are
//! always processed in ascending `rater_id` order, which makes results
//! independent of the order the masks were supplied in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::CompensatedSum;
use crate::volume::{BinaryMask, Grid, IntensityKind, VoxelVolume};

/// Parameters are clamped to `[CLAMP, 1 - CLAMP]` after every M-step.
pub const PARAM_CLAMP: f64 = 1e-6;

/// Largest number of raters a [`RaterSet`] may hold.
pub const MAX_RATERS: usize = 64;

/// Two or more masks on one grid, each labelled with a distinct id.
#[derive(Debug, Clone)]
pub struct RaterSet {
    masks: Vec<BinaryMask>,
    ids: Vec<String>,
}

impl RaterSet {
    pub fn new(masks: Vec<BinaryMask>, ids: Vec<String>) -> Result<Self> {
        if masks.len() < 2 {
            return Err(Error::invalid(format!(
                "a rater set needs at least 2 masks, got {}",
                masks.len()
            )));
        }
        if masks.len() > MAX_RATERS {
            return Err(Error::invalid(format!(
                "at most {MAX_RATERS} raters are supported, got {}",
                masks.len()
            )));
        }
        if ids.len() != masks.len() {
            return Err(Error::invalid(format!(
                "{} rater ids for {} masks",
                ids.len(),
                masks.len()
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate rater id {:?}", w[0])));
        }
        let grid = masks[0].grid();
        for (m, id) in masks.iter().zip(&ids).skip(1) {
            grid.ensure_same(m.grid())
                .map_err(|e| e.context(format!("rater {id}")))?;
        }
        Ok(RaterSet { masks, ids })
    }

    /// Ids `rater0`, `rater1`, ... in supply order.
    pub fn with_default_ids(masks: Vec<BinaryMask>) -> Result<Self> {
        let ids = (0..masks.len()).map(|k| format!("rater{k}")).collect();
        RaterSet::new(masks, ids)
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn grid(&self) -> &Grid {
        self.masks[0].grid()
    }

    /// Rater indices sorted by id.
    fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        order
    }
}

/// Estimated sensitivity `p` and specificity `q` of one rater.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaterPerformance {
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Mean foreground fraction over all rater masks.
    MeanForegroundFraction,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StapleConfig {
    pub max_iterations: usize,
    /// Stop once no sensitivity or specificity moves by this much or more.
    pub tolerance: f64,
    pub initial_sensitivity: f64,
    pub initial_specificity: f64,
    pub prior: PriorMode,
}

impl Default for StapleConfig {
    fn default() -> Self {
        StapleConfig {
            max_iterations: 100,
            tolerance: 1e-7,
            initial_sensitivity: 0.99,
            initial_specificity: 0.99,
            prior: PriorMode::MeanForegroundFraction,
        }
    }
}

impl StapleConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !open_unit(self.initial_sensitivity) || !open_unit(self.initial_specificity) {
            return Err(Error::invalid("initial sensitivity/specificity must lie in (0, 1)"));
        }
        if let PriorMode::Fixed(f) = self.prior {
            if !open_unit(f) {
                return Err(Error::invalid(format!("fixed prior must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StapleResult {
    grid: Grid,
    posterior: Vec<f64>,
    pub rater_ids: Vec<String>,
    /// Aligned with `rater_ids`, which keep the supplied order.
    pub performances: Vec<RaterPerformance>,
    pub iterations: usize,
    pub converged: bool,
    pub prior_foreground: f64,
}

impl StapleResult {
    /// Per-voxel probability that the true label is foreground, from the
    /// last E-step.
    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The posterior as a 32-bit probability volume.
    pub fn posterior_volume(&self) -> VoxelVolume {
        let data = self.posterior.iter().map(|&w| w as f32).collect();
        VoxelVolume::new(self.grid, data, IntensityKind::Probability)
            .expect("posterior values lie in [0, 1]")
    }

    /// Foreground where the full-precision posterior is at least `t`.
    pub fn silver_mask(&self, t: f64) -> Result<BinaryMask> {
        check_threshold(t)?;
        let data = self.posterior.iter().map(|&w| (w >= t) as u8).collect();
        Ok(BinaryMask::from_raw_unchecked(self.grid, data))
    }
}

/// Distinct rater patterns present in a rater set. Bit `k` of a key is the
/// decision of the `k`-th rater in canonical (sorted id) order.
struct PatternTable {
    keys: Vec<u64>,
    counts: Vec<u64>,
    voxel_keys: Vec<u64>,
}

impl PatternTable {
    fn build(raters: &RaterSet, order: &[usize]) -> Self {
        let n = raters.grid().len();
        let masks: Vec<&[u8]> = order.iter().map(|&j| raters.masks[j].data()).collect();
        let mut voxel_keys = vec![0u64; n];
        crate::par::for_each_chunk_mut(&mut voxel_keys, 1 << 16, |start, chunk| {
            for (k, m) in masks.iter().enumerate() {
                let src = &m[start..start + chunk.len()];
                for (key, &d) in chunk.iter_mut().zip(src) {
                    *key |= (d as u64) << k;
                }
            }
        });
        let mut sorted = voxel_keys.clone();
        crate::par::sort_unstable(&mut sorted);
        let mut keys = Vec::new();
        let mut counts = Vec::new();
        for &k in &sorted {
            if keys.last() == Some(&k) {
                *counts.last_mut().unwrap() += 1;
            } else {
                keys.push(k);
                counts.push(1);
            }
        }
        PatternTable {
            keys,
            counts,
            voxel_keys,
        }
    }

    fn foreground_votes(&self) -> u128 {
        self.keys
            .iter()
            .zip(&self.counts)
            .map(|(k, &c)| k.count_ones() as u128 * c as u128)
            .sum()
    }
}

/// Log-odds form of the E-step for one pattern.
#[inline]
fn pattern_posterior(key: u64, log_terms: &LogTerms) -> f64 {
    let mut fg = log_terms.log_prior_fg;
    let mut bg = log_terms.log_prior_bg;
    for k in 0..log_terms.fg_on.len() {
        if key >> k & 1 == 1 {
            fg += log_terms.fg_on[k];
            bg += log_terms.bg_on[k];
        } else {
            fg += log_terms.fg_off[k];
            bg += log_terms.bg_off[k];
        }
    }
    1.0 / (1.0 + (bg - fg).exp())
}

struct LogTerms {
    log_prior_fg: f64,
    log_prior_bg: f64,
    /// ln p, ln(1-p), ln(1-q), ln q per rater
    fg_on: Vec<f64>,
    fg_off: Vec<f64>,
    bg_on: Vec<f64>,
    bg_off: Vec<f64>,
}

impl LogTerms {
    fn new(prior: f64, p: &[f64], q: &[f64]) -> Self {
        LogTerms {
            log_prior_fg: prior.ln(),
            log_prior_bg: (1.0 - prior).ln(),
            fg_on: p.iter().map(|v| v.ln()).collect(),
            fg_off: p.iter().map(|v| (1.0 - v).ln()).collect(),
            bg_on: q.iter().map(|v| (1.0 - v).ln()).collect(),
            bg_off: q.iter().map(|v| v.ln()).collect(),
        }
    }
}

fn clamp_param(v: f64) -> f64 {
    v.clamp(PARAM_CLAMP, 1.0 - PARAM_CLAMP)
}

fn resolve_prior(config: &StapleConfig, table: &PatternTable, raters: usize, voxels: usize) -> Result<f64> {
    let votes = table.foreground_votes();
    let total = raters as u128 * voxels as u128;
    if votes == 0 {
        return Err(Error::invalid(
            "every rater mask is empty; no consensus is defined",
        ));
    }
    if votes == total {
        return Err(Error::invalid(
            "every rater mask is full; no consensus is defined",
        ));
    }
    Ok(match config.prior {
        PriorMode::MeanForegroundFraction => votes as f64 / total as f64,
        PriorMode::Fixed(f) => f,
    })
}

/// Binary STAPLE over `raters`.
pub fn staple_fuse(raters: &RaterSet, config: &StapleConfig) -> Result<StapleResult> {
    config.validate()?;
    let order = raters.canonical_order();
    let r = raters.len();
    let n = raters.grid().len();
    let table = PatternTable::build(raters, &order);
    let prior = resolve_prior(config, &table, r, n)?;

    let mut p = vec![config.initial_sensitivity; r];
    let mut q = vec![config.initial_specificity; r];
    let mut weights = vec![0f64; table.keys.len()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        iterations += 1;
        let terms = LogTerms::new(prior, &p, &q);
        weights = crate::par::map_slice(&table.keys, |&k| pattern_posterior(k, &terms));

        let mut w_total = CompensatedSum::new();
        let mut bg_total = CompensatedSum::new();
        let mut w_on = vec![CompensatedSum::new(); r];
        let mut bg_off = vec![CompensatedSum::new(); r];
        for ((&key, &count), &w) in table.keys.iter().zip(&table.counts).zip(&weights) {
            let c = count as f64;
            let fg = c * w;
            let bg = c * (1.0 - w);
            w_total.add(fg);
            bg_total.add(bg);
            for k in 0..r {
                if key >> k & 1 == 1 {
                    w_on[k].add(fg);
                } else {
                    bg_off[k].add(bg);
                }
            }
        }
        let (w_total, bg_total) = (w_total.value(), bg_total.value());
        let mut delta = 0f64;
        for k in 0..r {
            let new_p = if w_total > 0.0 { clamp_param(w_on[k].value() / w_total) } else { p[k] };
            let new_q = if bg_total > 0.0 { clamp_param(bg_off[k].value() / bg_total) } else { q[k] };
            delta = delta.max((new_p - p[k]).abs()).max((new_q - q[k]).abs());
            p[k] = new_p;
            q[k] = new_q;
        }
        if delta < config.tolerance {
            converged = true;
            break;
        }
    }

    let posterior = expand_posterior(&table, &weights);
    let mut performances = vec![
        RaterPerformance {
            sensitivity: 0.0,
            specificity: 0.0
        };
        r
    ];
    for (k, &j) in order.iter().enumerate() {
        performances[j] = RaterPerformance {
            sensitivity: p[k],
            specificity: q[k],
        };
    }
    Ok(StapleResult {
        grid: *raters.grid(),
        posterior,
        rater_ids: raters.ids.clone(),
        performances,
        iterations,
        converged,
        prior_foreground: prior,
    })
}

fn expand_posterior(table: &PatternTable, weights: &[f64]) -> Vec<f64> {
    let mut posterior = vec![0f64; table.voxel_keys.len()];
    crate::par::for_each_chunk_mut(&mut posterior, 1 << 16, |start, chunk| {
        let keys = &table.voxel_keys[start..start + chunk.len()];
        for (w, key) in chunk.iter_mut().zip(keys) {
            let u = table.keys.binary_search(key).expect("key present in table");
            *w = weights[u];
        }
    });
    posterior
}

/// One E-step: the foreground posterior at every voxel given fixed rater
/// performances (aligned with `raters.ids()`) and foreground prior.
pub fn estimate_posterior(
    raters: &RaterSet,
    performances: &[RaterPerformance],
    prior: f64,
) -> Result<Vec<f64>> {
    if performances.len() != raters.len() {
        return Err(Error::invalid(format!(
            "{} performances for {} raters",
            performances.len(),
            raters.len()
        )));
    }
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::invalid(format!("prior must lie in (0, 1), got {prior}")));
    }
    let order = raters.canonical_order();
    let table = PatternTable::build(raters, &order);
    let p: Vec<f64> = order.iter().map(|&j| clamp_param(performances[j].sensitivity)).collect();
    let q: Vec<f64> = order.iter().map(|&j| clamp_param(performances[j].specificity)).collect();
    let terms = LogTerms::new(prior, &p, &q);
    let weights = crate::par::map_slice(&table.keys, |&k| pattern_posterior(k, &terms));
    Ok(expand_posterior(&table, &weights))
}

/// Foreground where at least half of the raters (rounded up) agree; with an
/// even rater count a tie counts as foreground.
pub fn majority_vote(raters: &RaterSet) -> BinaryMask {
    let grid = *raters.grid();
    let r = raters.len();
    let mut out = vec![0u8; grid.len()];
    crate::par::for_each_chunk_mut(&mut out, 1 << 16, |start, chunk| {
        let mut votes = vec![0u32; chunk.len()];
        for m in &raters.masks {
            for (v, &d) in votes.iter_mut().zip(&m.data()[start..start + chunk.len()]) {
                *v += d as u32;
            }
        }
        for (o, v) in chunk.iter_mut().zip(votes) {
            *o = (2 * v as usize >= r) as u8;
        }
    });
    BinaryMask::from_raw_unchecked(grid, out)
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must lie in [0, 1], got {t}")))
    }
}

/// Foreground where `prob >= t`.
pub fn threshold_mask(prob: &VoxelVolume, t: f64) -> Result<BinaryMask> {
    prob.ensure_kind(IntensityKind::Probability, "threshold input")?;
    check_threshold(t)?;
    let data = prob.data().iter().map(|&v| (v as f64 >= t) as u8).collect();
    Ok(BinaryMask::from_raw_unchecked(*prob.grid(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: [usize; 3]) -> Grid {
        Grid::with_dims(d).unwrap()
    }

    fn mask(d: [usize; 3], bits: &[u8]) -> BinaryMask {
        BinaryMask::new(grid(d), bits.to_vec()).unwrap()
    }

    #[test]
    fn first_e_step_of_the_three_rater_example() {
        let raters = RaterSet::with_default_ids(vec![
            mask([1, 1, 1], &[1]),
            mask([1, 1, 1], &[1]),
            mask([1, 1, 1], &[0]),
        ])
        .unwrap();
        let config = StapleConfig {
            max_iterations: 1,
            initial_sensitivity: 0.9,
            initial_specificity: 0.9,
            prior: PriorMode::Fixed(0.5),
            ..StapleConfig::default()
        };
        let res = staple_fuse(&raters, &config).unwrap();
        assert!((res.posterior()[0] - 0.9).abs() < 1e-12);
        assert_eq!(res.iterations, 1);
        assert!(!res.converged);

        let res = staple_fuse(&raters, &StapleConfig { max_iterations: 100, ..config }).unwrap();
        assert!(res.converged);
        // the single-voxel fixed point balances both hypotheses exactly
        assert_eq!(res.posterior()[0], 0.5);
        assert!(res.silver_mask(0.5).unwrap().get(0, 0, 0));
    }

    #[test]
    fn degenerate_rater_sets_rejected() {
        let g = [2, 2, 1];
        let empty = RaterSet::with_default_ids(vec![mask(g, &[0; 4]), mask(g, &[0; 4])]).unwrap();
        assert!(staple_fuse(&empty, &StapleConfig::default()).is_err());
        let full = RaterSet::with_default_ids(vec![mask(g, &[1; 4]), mask(g, &[1; 4])]).unwrap();
        assert!(staple_fuse(&full, &StapleConfig::default()).is_err());
        // mixed empty and full raters still carry information
        let mixed = RaterSet::with_default_ids(vec![mask(g, &[0; 4]), mask(g, &[1; 4])]).unwrap();
        let res = staple_fuse(&mixed, &StapleConfig::default()).unwrap();
        assert!(res.posterior().iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn rater_set_validation() {
        let g = [2, 1, 1];
        assert!(RaterSet::with_default_ids(vec![mask(g, &[0, 1])]).is_err());
        assert!(RaterSet::new(
            vec![mask(g, &[0, 1]), mask(g, &[1, 1])],
            vec!["a".into(), "a".into()]
        )
        .is_err());
        let other = BinaryMask::new(grid([1, 2, 1]), vec![0, 1]).unwrap();
        assert!(RaterSet::with_default_ids(vec![mask(g, &[0, 1]), other]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            StapleConfig { tolerance: 0.0, ..Default::default() },
            StapleConfig { max_iterations: 0, ..Default::default() },
            StapleConfig { initial_sensitivity: 1.0, ..Default::default() },
            StapleConfig { prior: PriorMode::Fixed(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn majority_vote_ties_are_foreground() {
        let g = [1, 1, 1];
        let three = RaterSet::with_default_ids(vec![mask(g, &[1]), mask(g, &[1]), mask(g, &[0])]).unwrap();
        assert!(majority_vote(&three).get(0, 0, 0));
        let four = RaterSet::with_default_ids(vec![mask(g, &[1]), mask(g, &[1]), mask(g, &[0]), mask(g, &[0])]).unwrap();
        assert!(majority_vote(&four).get(0, 0, 0));
        let minority = RaterSet::with_default_ids(vec![mask(g, &[1]), mask(g, &[0]), mask(g, &[0])]).unwrap();
        assert!(!majority_vote(&minority).get(0, 0, 0));
        let m = mask([3, 1, 1], &[1, 0, 1]);
        let same = RaterSet::with_default_ids(vec![m.clone(); 5]).unwrap();
        assert_eq!(majority_vote(&same), m);
    }

    #[test]
    fn threshold_boundaries() {
        let g = grid([2, 2, 1]);
        let half = VoxelVolume::new(g, vec![0.5; 4], IntensityKind::Probability).unwrap();
        assert!(threshold_mask(&half, 0.5).unwrap().is_full());
        let below = VoxelVolume::new(g, vec![0.4999; 4], IntensityKind::Probability).unwrap();
        assert!(threshold_mask(&below, 0.5).unwrap().is_empty());
        assert!(threshold_mask(&below, 0.0).unwrap().is_full());
        let raw = VoxelVolume::new(g, vec![0.5; 4], IntensityKind::Raw).unwrap();
        assert!(threshold_mask(&raw, 0.5).is_err());
        assert!(threshold_mask(&half, 1.5).is_err());
    }

    #[test]
    fn unanimity_reproduces_the_mask() {
        let m = BinaryMask::from_fn(grid([6, 5, 4]), |x, y, z| x + y > z + 2);
        let raters = RaterSet::with_default_ids(vec![m.clone(); 5]).unwrap();
        let res = staple_fuse(&raters, &StapleConfig::default()).unwrap();
        assert_eq!(threshold_mask(&res.posterior_volume(), 0.5).unwrap(), m);
        assert_eq!(res.silver_mask(0.5).unwrap(), m);
        for perf in &res.performances {
            assert!(perf.sensitivity >= 0.99 && perf.specificity >= 0.99, "{perf:?}");
        }
    }
}
