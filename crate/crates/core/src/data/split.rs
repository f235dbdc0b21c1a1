use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SamplePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    /// (train, val, test); val and test sizes are rounded, train takes the rest.
    pub fractions: (f64, f64, f64),
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec { seed, fractions: (0.8, 0.1, 0.1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        })
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(Error::Config(format!("unknown subset `{other}`"))),
        }
    }
}

/// Disjoint id lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn subset(&self, s: Subset) -> &[String] {
        match s {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    /// `(id, subset)` sorted by id.
    pub fn assignments(&self) -> Vec<(&str, Subset)> {
        let mut all: Vec<(&str, Subset)> = [Subset::Train, Subset::Val, Subset::Test]
            .into_iter()
            .flat_map(|s| self.subset(s).iter().map(move |id| (id.as_str(), s)))
            .collect();
        all.sort();
        all
    }
}

/// Seeded shuffle of the sorted ids, then contiguous train/val/test slices.
pub fn split_ids(ids: &[String], spec: &SplitSpec) -> Result<Split> {
    let n = ids.len();
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 samples to split, got {n}")));
    }
    let (_, fv, ft) = spec.fractions;
    if !(0.0..1.0).contains(&fv) || !(0.0..1.0).contains(&ft) || fv + ft >= 1.0 {
        return Err(Error::Config(format!("bad split fractions {:?}", spec.fractions)));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    order.dedup();
    if order.len() != n {
        return Err(Error::Config("duplicate ids in split input".into()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_val = (fv * n as f64).round() as usize;
    let n_test = (ft * n as f64).round() as usize;
    let n_train = n - n_val - n_test;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

/// Splits loaded samples; returns `(train, val, test)` and the id split.
pub fn split_dataset(
    items: Vec<SamplePair>,
    spec: &SplitSpec,
) -> Result<(Vec<SamplePair>, Vec<SamplePair>, Vec<SamplePair>, Split)> {
    let ids: Vec<String> = items.iter().map(|s| s.id.clone()).collect();
    let split = split_ids(&ids, spec)?;
    let (train, val, test) = partition(items, &split);
    Ok((train, val, test, split))
}

/// Distributes samples by a precomputed split; ids absent from it are dropped.
pub fn partition(items: Vec<SamplePair>, split: &Split) -> (Vec<SamplePair>, Vec<SamplePair>, Vec<SamplePair>) {
    let lookup: std::collections::HashMap<&str, Subset> = split.assignments().into_iter().collect();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for s in items {
        match lookup.get(s.id.as_str()) {
            Some(Subset::Train) => train.push(s),
            Some(Subset::Val) => val.push(s),
            Some(Subset::Test) => test.push(s),
            None => {}
        }
    }
    (train, val, test)
}

/// One `id<TAB>subset` line per id, sorted by id.
pub fn write_manifest(path: &Path, split: &Split) -> Result<()> {
    let mut out = String::new();
    for (id, s) in split.assignments() {
        out.push_str(&format!("{id}\t{s}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path)?;
    let mut split = Split::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, subset) = line.split_once('\t').ok_or_else(|| Error::Dataset {
            path: path.to_path_buf(),
            msg: format!("line {}: expected `id<TAB>subset`", i + 1),
        })?;
        let subset: Subset = subset.trim().parse().map_err(|e: Error| Error::Dataset {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        let list = match subset {
            Subset::Train => &mut split.train,
            Subset::Val => &mut split.val,
            Subset::Test => &mut split.test,
        };
        list.push(id.to_string());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{i:04}")).collect()
    }

    #[test]
    fn sizes_follow_rounding_rule() {
        for (n, want) in [(1000, (800, 100, 100)), (612, (490, 61, 61)), (10, (8, 1, 1)), (15, (11, 2, 2))] {
            let s = split_ids(&ids(n), &SplitSpec::new(3)).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), want, "n = {n}");
        }
        assert!(split_ids(&ids(9), &SplitSpec::new(0)).is_err());
    }

    #[test]
    fn partition_is_disjoint_and_total() {
        let s = split_ids(&ids(612), &SplitSpec::new(9)).unwrap();
        let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 612);
    }

    #[test]
    fn seeded_and_order_independent() {
        let a = split_ids(&ids(100), &SplitSpec::new(5)).unwrap();
        let mut rev = ids(100);
        rev.reverse();
        assert_eq!(a, split_ids(&rev, &SplitSpec::new(5)).unwrap());
        assert_ne!(a, split_ids(&ids(100), &SplitSpec::new(6)).unwrap());
    }

    #[test]
    fn manifest_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let s = split_ids(&ids(37), &SplitSpec::new(1)).unwrap();
        let (p1, p2) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
        write_manifest(&p1, &s).unwrap();
        let back = read_manifest(&p1).unwrap();
        write_manifest(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let mut sorted = s.clone();
        for v in [&mut sorted.train, &mut sorted.val, &mut sorted.test] {
            v.sort();
        }
        assert_eq!(back, sorted);
    }
}
