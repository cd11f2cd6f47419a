//! Data maps: per-instance mean and spread of p_true, and the
//! ambiguous / hard-to-learn / easy categorization at a threshold `q`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{InstanceId, TrainingDynamics};
use crate::error::{Error, Result};

pub const MAP_SCHEMA_VERSION: &str = "ftft-map-1";

/// Default selection threshold.
pub const DEFAULT_Q: f64 = 0.33;

/// Statistics that differ by less than this are ranked as ties.
pub const TIE_RESOLUTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub id: InstanceId,
    pub mean: f64,
    /// Population standard deviation across checkpoints.
    pub std: f64,
}

/// Number of instances selected out of `n` at threshold `q`:
/// `floor(q * n + 0.5)`, at least 1.
pub fn sel_count(n: usize, q: f64) -> usize {
    let k = (q * n as f64 + 0.5).floor() as usize;
    k.max(1).min(n.max(1))
}

pub fn check_q(q: f64) -> Result<()> {
    if q.is_finite() && q > 0.0 && q <= 0.5 {
        Ok(())
    } else {
        Err(Error::usage(format!("q must be in (0, 0.5], got {q}")))
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    (mean.clamp(0.0, 1.0), var.max(0.0).sqrt())
}

/// One [`InstanceStats`] per record, in record order.
pub fn compute_stats(dynamics: &TrainingDynamics) -> Vec<InstanceStats> {
    dynamics
        .records()
        .iter()
        .map(|r| {
            let (mean, std) = mean_and_std(&r.p_true);
            InstanceStats { id: r.id, mean, std }
        })
        .collect()
}

/// Ranking key for a statistic; values closer than [`TIE_RESOLUTION`]
/// (on a fixed grid) compare equal.
pub(crate) fn tie_key(value: f64) -> i64 {
    (value / TIE_RESOLUTION).round() as i64
}

/// Ids ordered by `key` ascending, ties by ascending id.
fn ranked_ids(stats: &[InstanceStats], key: impl Fn(&InstanceStats) -> i64) -> Vec<InstanceId> {
    let mut keyed: Vec<(i64, InstanceId)> = stats.iter().map(|s| (key(s), s.id)).collect();
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, id)| id).collect()
}

/// Ids of the `count` instances with the smallest mean, ties by id.
pub fn lowest_mean(stats: &[InstanceStats], count: usize) -> BTreeSet<InstanceId> {
    ranked_ids(stats, |s| tie_key(s.mean))
        .into_iter()
        .take(count)
        .collect()
}

/// Ids of the `count` instances with the largest std, ties by id.
pub fn highest_std(stats: &[InstanceStats], count: usize) -> BTreeSet<InstanceId> {
    ranked_ids(stats, |s| -tie_key(s.std))
        .into_iter()
        .take(count)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMap {
    pub run_id: String,
    pub q: f64,
    /// Sorted by ascending id.
    pub stats: Vec<InstanceStats>,
    pub ambiguous: BTreeSet<InstanceId>,
    pub hard_to_learn: BTreeSet<InstanceId>,
    pub easy: BTreeSet<InstanceId>,
}

impl DataMap {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.stats.iter().map(|s| s.id)
    }

    pub fn selection_size(&self) -> usize {
        sel_count(self.len(), self.q)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&MapFile::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_json_string()?.as_bytes())?;
        sink.flush()?;
        Ok(())
    }

    /// Reads an `ftft-map-1` document and checks it is internally
    /// consistent (set sizes, coverage, known ids).
    pub fn read<R: Read>(source: R) -> Result<Self> {
        let file: MapFile = serde_json::from_reader(source)?;
        if file.schema_version != MAP_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unknown schema_version {:?}, expected {MAP_SCHEMA_VERSION:?}",
                file.schema_version
            )));
        }
        check_q(file.q).map_err(|e| Error::invalid(e.to_string()))?;
        let map = DataMap {
            run_id: file.run_id,
            q: file.q,
            stats: file.stats,
            ambiguous: file.ambiguous.into_iter().collect(),
            hard_to_learn: file.hard_to_learn.into_iter().collect(),
            easy: file.easy.into_iter().collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<InstanceId> = self.ids().collect();
        if ids.len() != self.stats.len() {
            return Err(Error::invalid("duplicate ids in map stats"));
        }
        let k = self.selection_size();
        if self.ambiguous.len() != k || self.hard_to_learn.len() != k {
            return Err(Error::invalid(format!(
                "ambiguous/hard_to_learn must both hold {k} ids, found {}/{}",
                self.ambiguous.len(),
                self.hard_to_learn.len()
            )));
        }
        let selected: BTreeSet<InstanceId> = self.ambiguous.union(&self.hard_to_learn).copied().collect();
        if !selected.is_subset(&ids) {
            return Err(Error::invalid("selected ids missing from map stats"));
        }
        let expected_easy: BTreeSet<InstanceId> = ids.difference(&selected).copied().collect();
        if expected_easy != self.easy {
            return Err(Error::invalid("easy set is not the complement of ambiguous and hard_to_learn"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    schema_version: String,
    run_id: String,
    q: f64,
    stats: Vec<InstanceStats>,
    ambiguous: Vec<InstanceId>,
    hard_to_learn: Vec<InstanceId>,
    easy: Vec<InstanceId>,
}

impl From<&DataMap> for MapFile {
    fn from(map: &DataMap) -> Self {
        MapFile {
            schema_version: MAP_SCHEMA_VERSION.to_string(),
            run_id: map.run_id.clone(),
            q: map.q,
            stats: map.stats.clone(),
            ambiguous: map.ambiguous.iter().copied().collect(),
            hard_to_learn: map.hard_to_learn.iter().copied().collect(),
            easy: map.easy.iter().copied().collect(),
        }
    }
}

/// Builds a data map from per-instance statistics.
///
/// `ambiguous` holds the `sel_count(N, q)` largest stds, `hard_to_learn`
/// the `sel_count(N, q)` smallest means; ties go to the smaller id.
pub fn categorize(run_id: impl Into<String>, stats: &[InstanceStats], q: f64) -> Result<DataMap> {
    check_q(q)?;
    if stats.is_empty() {
        return Err(Error::invalid("cannot categorize an empty set of instances"));
    }
    let mut seen = HashSet::with_capacity(stats.len());
    for s in stats {
        if !seen.insert(s.id) {
            return Err(Error::invalid(format!("duplicate instance id {}", s.id)));
        }
        if !(s.mean.is_finite() && s.std.is_finite()) {
            return Err(Error::invalid(format!("non-finite statistics for instance {}", s.id)));
        }
    }

    let k = sel_count(stats.len(), q);
    let ambiguous = highest_std(stats, k);
    let hard_to_learn = lowest_mean(stats, k);
    let mut sorted = stats.to_vec();
    sorted.sort_by_key(|s| s.id);
    let easy = sorted
        .iter()
        .map(|s| s.id)
        .filter(|id| !ambiguous.contains(id) && !hard_to_learn.contains(id))
        .collect();

    Ok(DataMap {
        run_id: run_id.into(),
        q,
        stats: sorted,
        ambiguous,
        hard_to_learn,
        easy,
    })
}

/// `compute_stats` followed by `categorize`, keyed by the run id.
pub fn build_map(dynamics: &TrainingDynamics, q: f64) -> Result<DataMap> {
    categorize(dynamics.run_id(), &compute_stats(dynamics), q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    Ambiguous,
    HardToLearn,
    Easy,
    Random,
}

impl SubsetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubsetKind::Ambiguous => "ambiguous",
            SubsetKind::HardToLearn => "hard_to_learn",
            SubsetKind::Easy => "easy",
            SubsetKind::Random => "random",
        }
    }
}

impl fmt::Display for SubsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubsetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ambiguous" => Ok(SubsetKind::Ambiguous),
            "hard_to_learn" | "hard" => Ok(SubsetKind::HardToLearn),
            "easy" => Ok(SubsetKind::Easy),
            "random" => Ok(SubsetKind::Random),
            other => Err(Error::invalid(format!(
                "unknown subset kind {other:?} (expected ambiguous, hard_to_learn, easy or random)"
            ))),
        }
    }
}

/// Returns the ids of the requested subset. `Random` draws
/// `sel_count(N, q)` ids uniformly without replacement and needs a seed.
pub fn select_subset(map: &DataMap, kind: SubsetKind, seed: Option<u64>) -> Result<BTreeSet<InstanceId>> {
    match kind {
        SubsetKind::Ambiguous => Ok(map.ambiguous.clone()),
        SubsetKind::HardToLearn => Ok(map.hard_to_learn.clone()),
        SubsetKind::Easy => Ok(map.easy.clone()),
        SubsetKind::Random => {
            let seed = seed.ok_or_else(|| Error::invalid("random subset selection requires a seed"))?;
            let ids: Vec<InstanceId> = map.ids().collect();
            Ok(random_subset(&ids, map.selection_size(), seed))
        }
    }
}

/// `count` ids drawn uniformly without replacement from `ids`.
pub fn random_subset(ids: &[InstanceId], count: usize, seed: u64) -> BTreeSet<InstanceId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, ids.len(), count.min(ids.len()))
        .into_iter()
        .map(|i| ids[i])
        .collect()
}

/// A map whose categories are drawn at random (the "random DM" control):
/// both ambiguous and hard_to_learn are independent uniform draws. Its
/// stats carry zero placeholders since no dynamics back it.
pub fn random_map(run_id: impl Into<String>, ids: &[InstanceId], q: f64, seed: u64) -> Result<DataMap> {
    check_q(q)?;
    let k = sel_count(ids.len(), q);
    let ambiguous = random_subset(ids, k, seed);
    let hard_to_learn = random_subset(ids, k, seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut sorted: Vec<InstanceId> = ids.to_vec();
    sorted.sort();
    let easy = sorted
        .iter()
        .copied()
        .filter(|id| !ambiguous.contains(id) && !hard_to_learn.contains(id))
        .collect();
    let stats = sorted
        .into_iter()
        .map(|id| InstanceStats { id, mean: 0.0, std: 0.0 })
        .collect();
    Ok(DataMap {
        run_id: run_id.into(),
        q,
        stats,
        ambiguous,
        hard_to_learn,
        easy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::InstanceRecord;
    use approx::assert_abs_diff_eq;

    fn st(id: u64, mean: f64, std: f64) -> InstanceStats {
        InstanceStats { id: InstanceId(id), mean, std }
    }

    fn ids(v: &[u64]) -> BTreeSet<InstanceId> {
        v.iter().map(|&i| InstanceId(i)).collect()
    }

    #[test]
    fn stats_examples() {
        let (m, s) = mean_and_std(&[0.5, 0.5, 0.5]);
        assert_eq!((m, s), (0.5, 0.0));
        let (m, s) = mean_and_std(&[0.0, 1.0]);
        assert_eq!((m, s), (0.5, 0.5));
        // sqrt(((0.2-m)^2 + (0.5-m)^2 + (0.9-m)^2) / 3) with m = 1.6/3, by hand
        let (m, s) = mean_and_std(&[0.2, 0.5, 0.9]);
        assert_abs_diff_eq!(m, 0.533_333_333_333_333_3, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.286_744_175_568_087_7, epsilon = 1e-12);
    }

    #[test]
    fn compute_stats_follows_records() {
        let d = TrainingDynamics::new(
            "r",
            "m",
            1,
            "d",
            2,
            vec![
                InstanceRecord { id: InstanceId(4), gold: 0, p_true: vec![0.0, 1.0] },
                InstanceRecord { id: InstanceId(2), gold: 1, p_true: vec![0.3, 0.3] },
            ],
        )
        .unwrap();
        let stats = compute_stats(&d);
        assert_eq!(stats, vec![st(4, 0.5, 0.5), st(2, 0.3, 0.0)]);
    }

    #[test]
    fn three_instance_example() {
        // a:0 b:1 c:2
        let stats = [st(0, 0.9, 0.1), st(1, 0.5, 0.3), st(2, 0.2, 0.2)];
        let map = categorize("r", &stats, 0.33).unwrap();
        assert_eq!(map.ambiguous, ids(&[1]));
        assert_eq!(map.hard_to_learn, ids(&[2]));
        assert_eq!(map.easy, ids(&[0]));
    }

    #[test]
    fn identical_stats_use_id_tie_break() {
        let stats: Vec<_> = (0..10).rev().map(|i| st(i, 0.4, 0.2)).collect();
        let map = categorize("r", &stats, 0.33).unwrap();
        assert_eq!(sel_count(10, 0.33), 3);
        assert_eq!(map.ambiguous, ids(&[0, 1, 2]));
        assert_eq!(map.hard_to_learn, ids(&[0, 1, 2]));
        assert_eq!(map.easy.len(), 7);
    }

    #[test]
    fn near_ties_below_resolution() {
        let stats = [st(5, 0.5, 0.2 + 1e-14), st(3, 0.5, 0.2)];
        let map = categorize("r", &stats, 0.5).unwrap();
        assert_eq!(map.ambiguous, ids(&[3]));
    }

    #[test]
    fn sel_count_rounding() {
        assert_eq!(sel_count(100, 0.33), 33);
        assert_eq!(sel_count(3, 0.33), 1);
        assert_eq!(sel_count(1, 0.1), 1);
        assert_eq!(sel_count(10, 0.25), 3); // 2.5 rounds half up
        assert_eq!(sel_count(10, 0.5), 5);
        assert_eq!(sel_count(2, 0.1), 1); // minimum one
    }

    #[test]
    fn q_bounds() {
        let stats = [st(0, 0.5, 0.1)];
        assert!(categorize("r", &stats, 0.0).is_err());
        assert!(categorize("r", &stats, 0.7).is_err());
        assert!(categorize("r", &stats, f64::NAN).is_err());
        assert!(categorize("r", &stats, 0.5).is_ok());
        assert!(categorize("r", &[], 0.33).is_err());
    }

    #[test]
    fn select_kinds() {
        let stats: Vec<_> = (0..100).map(|i| st(i, i as f64 / 100.0, (i % 7) as f64 / 20.0)).collect();
        let map = categorize("r", &stats, 0.33).unwrap();
        assert_eq!(select_subset(&map, SubsetKind::Ambiguous, None).unwrap(), map.ambiguous);
        assert_eq!(select_subset(&map, SubsetKind::HardToLearn, None).unwrap(), map.hard_to_learn);
        assert_eq!(select_subset(&map, SubsetKind::Easy, None).unwrap(), map.easy);
        assert!(select_subset(&map, SubsetKind::Random, None).is_err());
        let a = select_subset(&map, SubsetKind::Random, Some(42)).unwrap();
        let b = select_subset(&map, SubsetKind::Random, Some(42)).unwrap();
        assert_eq!(a.len(), 33);
        assert_eq!(a, b);
        assert_ne!(a, select_subset(&map, SubsetKind::Random, Some(43)).unwrap());
    }

    #[test]
    fn subset_kind_parsing() {
        assert_eq!("hard-to-learn".parse::<SubsetKind>().unwrap(), SubsetKind::HardToLearn);
        assert_eq!("Random".parse::<SubsetKind>().unwrap(), SubsetKind::Random);
        assert!("middle".parse::<SubsetKind>().is_err());
    }

    #[test]
    fn map_json_round_trip() {
        let stats: Vec<_> = (0..12).map(|i| st(i, 0.05 * i as f64, 0.01 * (12 - i) as f64)).collect();
        let map = categorize("run", &stats, 0.25).unwrap();
        let text = map.to_json_string().unwrap();
        let back = DataMap::read(text.as_bytes()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn inconsistent_map_file_rejected() {
        let stats: Vec<_> = (0..6).map(|i| st(i, 0.1 * i as f64, 0.05 * i as f64)).collect();
        let map = categorize("run", &stats, 0.33).unwrap();
        let mut bad = map.clone();
        bad.easy.insert(*map.ambiguous.iter().next().unwrap());
        let text = bad.to_json_string().unwrap();
        assert!(DataMap::read(text.as_bytes()).is_err());
    }

    #[test]
    fn random_map_sizes() {
        let all: Vec<_> = (0..100).map(InstanceId).collect();
        let m = random_map("rand", &all, 0.33, 1).unwrap();
        assert_eq!(m.ambiguous.len(), 33);
        assert_eq!(m.hard_to_learn.len(), 33);
        m.validate().unwrap();
    }
}
