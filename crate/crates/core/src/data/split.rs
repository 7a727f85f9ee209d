//! Stratified k-fold and hold-out splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Class;
use crate::error::{Error, Result};

/// `k` disjoint index lists covering every sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

fn class_members(labels: &[Class], seed: u64) -> Vec<Vec<usize>> {
    Class::ALL
        .iter()
        .map(|&c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c.index() as u64);
            idx.shuffle(&mut rng);
            idx
        })
        .collect()
}

/// Shuffles each class with `seed`, then deals members round-robin into `k`
/// folds. The dealing position carries over from one class to the next so
/// fold sizes stay balanced as well as per-class counts.
pub fn stratified_kfold(labels: &[Class], k: usize, seed: u64) -> Result<FoldSplit> {
    let smallest = Class::ALL
        .iter()
        .map(|&c| labels.iter().filter(|&&l| l == c).count())
        .filter(|&n| n > 0)
        .min()
        .unwrap_or(0);
    if k < 2 || k > smallest {
        return Err(Error::contract(format!(
            "k = {k} must lie in [2, {smallest}] (smallest class count)"
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in class_members(labels, seed) {
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { folds })
}

/// Moves `round(fraction · n_c)` members of every class into the validation
/// set. Returns `(train, val)` positions into `labels`, each ascending.
pub fn stratified_holdout(labels: &[Class], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(fraction)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for members in class_members(labels, seed) {
        let n_val = (members.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    finish(train, val)
}

/// Unstratified hold-out over `n` samples.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(fraction)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * fraction).round() as usize;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    finish(train, val)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("validation fraction {fraction} must lie in (0, 1)")));
    }
    Ok(())
}

fn finish(mut train: Vec<usize>, mut val: Vec<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
    if val.is_empty() {
        return Err(Error::contract("validation split is empty"));
    }
    if train.is_empty() {
        return Err(Error::contract("training split is empty"));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: [usize; 3]) -> Vec<Class> {
        Class::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
            .collect()
    }

    fn per_fold(split: &FoldSplit, labels: &[Class], c: Class) -> Vec<usize> {
        split
            .folds
            .iter()
            .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
            .collect()
    }

    #[test]
    fn clinical_sized_counts() {
        // 91 MSA, 30 PSP, 136 PD
        let l = labels([91, 30, 136]);
        let split = stratified_kfold(&l, 5, 3).unwrap();
        assert!(per_fold(&split, &l, Class::Pd).iter().all(|n| (27..=28).contains(n)));
        assert!(per_fold(&split, &l, Class::Msa).iter().all(|n| (18..=19).contains(n)));
        assert!(per_fold(&split, &l, Class::Psp).iter().all(|&n| n == 6));
    }

    #[test]
    fn balanced_thirty_per_class() {
        let l = labels([30, 30, 30]);
        let split = stratified_kfold(&l, 5, 0).unwrap();
        for c in Class::ALL {
            assert_eq!(per_fold(&split, &l, c), vec![6; 5]);
        }
    }

    #[test]
    fn k_out_of_range() {
        let l = labels([4, 4, 4]);
        assert!(stratified_kfold(&l, 1, 0).is_err());
        assert!(stratified_kfold(&l, 5, 0).is_err());
        assert!(stratified_kfold(&l, 4, 0).is_ok());
    }

    #[test]
    fn seeds_change_membership_not_counts() {
        let l = labels([17, 11, 23]);
        let a = stratified_kfold(&l, 3, 1).unwrap();
        let b = stratified_kfold(&l, 3, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, stratified_kfold(&l, 3, 1).unwrap());
        for c in Class::ALL {
            let mut ca = per_fold(&a, &l, c);
            let mut cb = per_fold(&b, &l, c);
            ca.sort_unstable();
            cb.sort_unstable();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn holdout_is_stratified() {
        let l = labels([10, 10, 10]);
        let (train, val) = stratified_holdout(&l, 0.2, 4).unwrap();
        assert_eq!(val.len(), 6);
        assert_eq!(train.len(), 24);
        for c in Class::ALL {
            assert_eq!(val.iter().filter(|&&i| l[i] == c).count(), 2);
        }
        assert!(stratified_holdout(&labels([1, 1, 1]), 0.2, 0).is_err());
        assert!(stratified_holdout(&l, 0.0, 0).is_err());
    }
}
