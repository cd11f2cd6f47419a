//! Synthetic classification data with three difficulty tiers.
//!
//! Features live in two planes. The *cluster plane* (features 0 and 1)
//! holds one Gaussian cluster per class on a circle; the *interaction
//! plane* (features 2 and 3) holds a `C x C` checkerboard whose cell
//! `(i, j)` carries label `(i + j) mod C`.
//!
//! * `simple`: a class cluster in the cluster plane, near-zero interaction
//!   features. Linearly separable.
//! * `ambiguous_band`: points on the boundary between two adjacent
//!   clusters, nudged slightly toward their label, with overlapping noise.
//! * `difficult`: centred in the cluster plane; the label is fixed by the
//!   checkerboard cell. Every class has the same feature means, so no
//!   linear model beats chance on this tier.
//!
//! The hard-slice evaluation split is drawn from the difficult tier only,
//! in orbits of `C` copies of one draw shifted through the board's columns.
//! Each orbit holds every label once. Without a hint the copies share their
//! cluster-plane features, so a model that ignores the interaction plane
//! scores exactly `1/C`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::InstanceId;
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Simple,
    AmbiguousBand,
    Difficult,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Simple => "simple",
            Tier::AmbiguousBand => "ambiguous_band",
            Tier::Difficult => "difficult",
        }
    }
}

impl FromStr for Tier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Tier::Simple),
            "ambiguous_band" => Ok(Tier::AmbiguousBand),
            "difficult" => Ok(Tier::Difficult),
            other => Err(Error::invalid(format!("unknown tier {other:?}"))),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdEval,
    HardSliceEval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdEval => "id_eval",
            Split::HardSliceEval => "hard_slice_eval",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "id_eval" => Ok(Split::IdEval),
            "hard_slice_eval" => Ok(Split::HardSliceEval),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Fractions of the simple, ambiguous-band and difficult tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierMix {
    pub simple: f64,
    pub ambiguous_band: f64,
    pub difficult: f64,
}

impl TierMix {
    pub fn new(simple: f64, ambiguous_band: f64, difficult: f64) -> Self {
        TierMix { simple, ambiguous_band, difficult }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.simple, self.ambiguous_band, self.difficult];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("tier fractions must be finite and non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("tier fractions must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl Default for TierMix {
    fn default() -> Self {
        TierMix::new(0.87, 0.03, 0.10)
    }
}

/// Shape parameters of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    /// Radius of the circle carrying the class clusters.
    pub cluster_radius: f64,
    pub cluster_std: f64,
    /// Std of the unused plane's features for simple and band instances.
    pub off_plane_std: f64,
    /// Offset of band points toward their labelled cluster.
    pub band_offset: f64,
    pub band_std: f64,
    /// Extent of band points along the boundary.
    pub band_length: f64,
    /// Std of difficult instances in the cluster plane.
    pub difficult_center_std: f64,
    /// Scale of a half-normal shift of difficult points toward their
    /// label's cluster. Zero keeps the tier free of any linear signal.
    pub difficult_hint: f64,
    /// Half-width of the checkerboard.
    pub board_extent: f64,
    /// Fraction of each checkerboard cell kept empty at its edges.
    pub cell_margin: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            cluster_radius: 3.0,
            cluster_std: 1.0,
            off_plane_std: 0.05,
            band_offset: 0.1,
            band_std: 0.15,
            band_length: 2.0,
            difficult_center_std: 0.15,
            difficult_hint: 0.0,
            board_extent: 2.0,
            cell_margin: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Train plus id_eval instances, drawn from `mix`.
    pub num_instances: usize,
    pub num_classes: usize,
    pub mix: TierMix,
    /// Share of the `num_instances` held out as id_eval.
    pub id_eval_fraction: f64,
    /// Extra difficult-tier instances forming the hard-slice evaluation set,
    /// generated in label-balanced orbits (see the module docs).
    pub hard_slice_size: usize,
    pub geometry: Geometry,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            num_instances: 2000,
            num_classes: 2,
            mix: TierMix::default(),
            id_eval_fraction: 0.2,
            hard_slice_size: 500,
            geometry: Geometry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major, `len() * dim` values. Row `i` is instance id `i`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub tiers: Vec<Tier>,
    pub splits: Vec<Split>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn train_ids(&self) -> Vec<InstanceId> {
        self.rows_in(Split::Train).into_iter().map(|i| InstanceId(i as u64)).collect()
    }

    pub fn name(&self) -> String {
        format!("synthetic-s{}", self.seed)
    }

    /// CSV with columns `id,label,tier,split,f0..f{dim-1}`. Floats use the
    /// shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["id".to_string(), "label".into(), "tier".into(), "split".into()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                i.to_string(),
                self.labels[i].to_string(),
                self.tiers[i].to_string(),
                self.splits[i].as_str().to_string(),
            ];
            rec.extend(self.row(i).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). Ids must be
    /// `0..n` in order; `num_classes` is one more than the largest label.
    pub fn read_csv<R: Read>(source: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let header = r.headers()?.clone();
        if header.len() < 5 || &header[0] != "id" || &header[1] != "label" || &header[2] != "tier" || &header[3] != "split" {
            return Err(Error::invalid("dataset CSV must start with id,label,tier,split,f0"));
        }
        let dim = header.len() - 4;
        let mut ds = SyntheticDataset {
            seed,
            num_classes: 0,
            dim,
            features: Vec::new(),
            labels: Vec::new(),
            tiers: Vec::new(),
            splits: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |what: &str| Error::parse(line, format!("invalid {what}"));
            let id: usize = rec[0].parse().map_err(|_| bad("id"))?;
            if id != i {
                return Err(Error::parse(line, format!("expected id {i}, found {id}")));
            }
            ds.labels.push(rec[1].parse().map_err(|_| bad("label"))?);
            ds.tiers.push(rec[2].parse().map_err(|_| bad("tier"))?);
            ds.splits.push(rec[3].parse().map_err(|_| bad("split"))?);
            for j in 0..dim {
                let v: f64 = rec[4 + j].parse().map_err(|_| bad("feature"))?;
                if !v.is_finite() {
                    return Err(bad("feature"));
                }
                ds.features.push(v);
            }
        }
        ds.num_classes = ds.labels.iter().max().map_or(0, |m| m + 1).max(2);
        Ok(ds)
    }
}

/// Generates a dataset with default geometry and splits.
pub fn generate_dataset(seed: u64, num_instances: usize, num_classes: usize, mix: TierMix) -> Result<SyntheticDataset> {
    generate(&DatasetConfig {
        seed,
        num_instances,
        num_classes,
        mix,
        ..DatasetConfig::default()
    })
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    geometry: &'a Geometry,
    num_classes: usize,
    unit: Normal<f64>,
}

impl Sampler<'_> {
    fn gauss(&mut self, std: f64) -> f64 {
        std * self.unit.sample(&mut self.rng)
    }

    fn center(&self, class: usize) -> [f64; 2] {
        let angle = 2.0 * PI * class as f64 / self.num_classes as f64;
        let r = self.geometry.cluster_radius;
        [r * angle.cos(), r * angle.sin()]
    }

    fn simple(&mut self, label: usize) -> [f64; 4] {
        let g = *self.geometry;
        let c = self.center(label);
        [
            c[0] + self.gauss(g.cluster_std),
            c[1] + self.gauss(g.cluster_std),
            self.gauss(g.off_plane_std),
            self.gauss(g.off_plane_std),
        ]
    }

    fn band(&mut self) -> ([f64; 4], usize) {
        let g = *self.geometry;
        let c = self.num_classes;
        let a = self.rng.random_range(0..c);
        let b = (a + 1) % c;
        let label = if self.rng.random_bool(0.5) { a } else { b };
        let (ca, cb) = (self.center(a), self.center(b));
        let mid = [(ca[0] + cb[0]) / 2.0, (ca[1] + cb[1]) / 2.0];
        // unit vector from the boundary toward the labelled cluster
        let toward = {
            let t = self.center(label);
            let v = [t[0] - mid[0], t[1] - mid[1]];
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            [v[0] / n, v[1] / n]
        };
        let along = [-toward[1], toward[0]];
        let reach = if c == 2 {
            self.rng.random_range(-g.band_length..g.band_length)
        } else {
            self.rng.random_range(0.0..g.band_length)
        };
        // for C > 2 the boundary runs outward from the midpoint
        let outward = if c == 2 {
            along
        } else {
            let n = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
            [mid[0] / n, mid[1] / n]
        };
        let x = [
            mid[0] + reach * outward[0] + g.band_offset * toward[0] + self.gauss(g.band_std),
            mid[1] + reach * outward[1] + g.band_offset * toward[1] + self.gauss(g.band_std),
            self.gauss(g.off_plane_std),
            self.gauss(g.off_plane_std),
        ];
        (x, label)
    }

    /// A difficult point before the hint is applied, with its label and
    /// hint length.
    fn difficult_raw(&mut self) -> ([f64; 4], usize, f64) {
        let g = *self.geometry;
        let c = self.num_classes;
        let i = self.rng.random_range(0..c);
        let j = self.rng.random_range(0..c);
        let cell = 2.0 * g.board_extent / c as f64;
        let pad = cell * g.cell_margin;
        let mut coord = |k: usize| -g.board_extent + k as f64 * cell + pad + self.rng.random::<f64>() * (cell - 2.0 * pad);
        let (u, v) = (coord(i), coord(j));
        let hint = (g.difficult_hint * self.unit.sample(&mut self.rng)).abs();
        (
            [self.gauss(g.difficult_center_std), self.gauss(g.difficult_center_std), u, v],
            (i + j) % c,
            hint,
        )
    }

    fn hinted(&self, mut x: [f64; 4], label: usize, hint: f64) -> [f64; 4] {
        let c = self.center(label);
        let r = self.geometry.cluster_radius;
        x[0] += hint * c[0] / r;
        x[1] += hint * c[1] / r;
        x
    }

    fn difficult(&mut self) -> ([f64; 4], usize) {
        let (x, label, hint) = self.difficult_raw();
        (self.hinted(x, label, hint), label)
    }

    /// One difficult draw shifted cyclically through every board column.
    fn difficult_orbit(&mut self) -> Vec<([f64; 4], usize)> {
        let c = self.num_classes;
        let g = *self.geometry;
        let cell = 2.0 * g.board_extent / c as f64;
        let (x, label, hint) = self.difficult_raw();
        let col = (((x[2] + g.board_extent) / cell).floor() as usize).min(c - 1);
        (0..c)
            .map(|s| {
                let to = (col + s) % c;
                let mut y = x;
                y[2] += (to as f64 - col as f64) * cell;
                let l = (label + s) % c;
                (self.hinted(y, l, hint), l)
            })
            .collect()
    }
}

fn tier_counts(n: usize, mix: &TierMix) -> (usize, usize, usize) {
    let simple = (mix.simple * n as f64).round() as usize;
    let band = ((mix.ambiguous_band * n as f64).round() as usize).min(n - simple);
    (simple, band, n - simple - band)
}

/// Deterministic in `config`: the same config gives a bit-identical dataset.
pub fn generate(config: &DatasetConfig) -> Result<SyntheticDataset> {
    config.mix.validate()?;
    if config.num_instances < 100 {
        return Err(Error::invalid("num_instances must be at least 100"));
    }
    if config.num_classes < 2 {
        return Err(Error::invalid("num_classes must be at least 2"));
    }
    if !(0.0..1.0).contains(&config.id_eval_fraction) {
        return Err(Error::invalid("id_eval_fraction must be in [0, 1)"));
    }

    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        geometry: &config.geometry,
        num_classes: config.num_classes,
        unit: Normal::new(0.0, 1.0).expect("unit normal"),
    };
    let c = config.num_classes;
    let (n_simple, n_band, n_difficult) = tier_counts(config.num_instances, &config.mix);

    let mut pool: Vec<([f64; 4], usize, Tier)> = Vec::with_capacity(config.num_instances);
    for k in 0..n_simple {
        let label = k % c;
        pool.push((s.simple(label), label, Tier::Simple));
    }
    for _ in 0..n_band {
        let (x, y) = s.band();
        pool.push((x, y, Tier::AmbiguousBand));
    }
    for _ in 0..n_difficult {
        let (x, y) = s.difficult();
        pool.push((x, y, Tier::Difficult));
    }
    pool.shuffle(&mut s.rng);

    let n_eval = (config.id_eval_fraction * config.num_instances as f64).round() as usize;
    let n_train = config.num_instances - n_eval;
    let total = config.num_instances + config.hard_slice_size;
    let mut ds = SyntheticDataset {
        seed: config.seed,
        num_classes: c,
        dim: FEATURE_DIM,
        features: Vec::with_capacity(total * FEATURE_DIM),
        labels: Vec::with_capacity(total),
        tiers: Vec::with_capacity(total),
        splits: Vec::with_capacity(total),
    };
    for (i, (x, y, tier)) in pool.into_iter().enumerate() {
        ds.features.extend_from_slice(&x);
        ds.labels.push(y);
        ds.tiers.push(tier);
        ds.splits.push(if i < n_train { Split::Train } else { Split::IdEval });
    }
    let mut hard = Vec::with_capacity(config.hard_slice_size + c);
    while hard.len() < config.hard_slice_size {
        hard.extend(s.difficult_orbit());
    }
    hard.truncate(config.hard_slice_size);
    for (x, y) in hard {
        ds.features.extend_from_slice(&x);
        ds.labels.push(y);
        ds.tiers.push(Tier::Difficult);
        ds.splits.push(Split::HardSliceEval);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_dataset(7, 300, 2, TierMix::default()).unwrap();
        let b = generate_dataset(7, 300, 2, TierMix::default()).unwrap();
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_ne!(a, generate_dataset(8, 300, 2, TierMix::default()).unwrap());
    }

    #[test]
    fn splits_and_tiers() {
        let ds = generate_dataset(1, 1000, 3, TierMix::new(0.5, 0.2, 0.3)).unwrap();
        assert_eq!(ds.len(), 1000 + 500);
        assert_eq!(ds.rows_in(Split::Train).len(), 800);
        assert_eq!(ds.rows_in(Split::IdEval).len(), 200);
        let hard = ds.rows_in(Split::HardSliceEval);
        assert_eq!(hard.len(), 500);
        assert!(hard.iter().all(|&i| ds.tiers[i] == Tier::Difficult));
        let count = |t| ds.tiers[..1000].iter().filter(|x| **x == t).count();
        assert_eq!((count(Tier::Simple), count(Tier::AmbiguousBand), count(Tier::Difficult)), (500, 200, 300));
        assert!(ds.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn difficult_tier_has_equal_class_means() {
        let ds = generate_dataset(3, 4000, 2, TierMix::new(0.0, 0.0, 1.0)).unwrap();
        for class in 0..2 {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
            for f in 0..FEATURE_DIM {
                let mean = rows.iter().map(|&r| ds.row(r)[f]).sum::<f64>() / rows.len() as f64;
                assert!(mean.abs() < 0.08, "class {class} feature {f} mean {mean}");
            }
        }
    }

    #[test]
    fn hard_slice_orbits_are_label_balanced() {
        for c in [2usize, 3] {
            let ds = generate_dataset(5, 300, c, TierMix::default()).unwrap();
            let hard = ds.rows_in(Split::HardSliceEval);
            for orbit in hard.chunks(c).filter(|o| o.len() == c) {
                let mut labels: Vec<usize> = orbit.iter().map(|&i| ds.labels[i]).collect();
                labels.sort_unstable();
                assert_eq!(labels, (0..c).collect::<Vec<_>>());
                let first = ds.row(orbit[0]);
                for &i in orbit {
                    let r = ds.row(i);
                    assert_eq!((r[0], r[1], r[3]), (first[0], first[1], first[3]));
                    assert!(r[2].abs() <= 2.0);
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_dataset(0, 99, 2, TierMix::default()).is_err());
        assert!(generate_dataset(0, 200, 1, TierMix::default()).is_err());
        assert!(generate_dataset(0, 200, 2, TierMix::new(0.5, 0.5, 0.5)).is_err());
        assert!(generate_dataset(0, 200, 2, TierMix::new(1.2, -0.2, 0.0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_dataset(11, 120, 2, TierMix::default()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = SyntheticDataset::read_csv(buf.as_slice(), 11).unwrap();
        assert_eq!(back, ds);
    }
}
