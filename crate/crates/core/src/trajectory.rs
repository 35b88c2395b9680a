//! Feature-point trajectories: CSV ingest, a synthetic rigid-motion
//! generator, noise-group injection and train/test splitting.
//!
//! A trajectory CSV has the header `point_id,frame,x,y,body`, one row per
//! point and frame. Bodies are 1-based. A point's sample stacks its
//! coordinates frame by frame: `[x_1, y_1, x_2, y_2, ...]`.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::SeedChain;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    /// Point identifiers in order of first appearance.
    pub point_ids: Vec<String>,
    /// Frame numbers in increasing order.
    pub frames: Vec<i64>,
    /// `2F x n`, one stacked trajectory per column.
    pub samples: DMatrix<f64>,
    /// 0-based body label per point.
    pub bodies: Vec<usize>,
}

impl Trajectories {
    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }

    pub fn n_bodies(&self) -> usize {
        self.bodies.iter().copied().max().map_or(0, |b| b + 1)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    point_id: String,
    frame: i64,
    x: f64,
    y: f64,
    body: Option<usize>,
}

pub fn read_trajectories<R: Read>(reader: R) -> Result<Trajectories> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut point_ids = Vec::new();
    let mut per_point: Vec<Vec<(i64, f64, f64)>> = Vec::new();
    let mut bodies: Vec<usize> = Vec::new();
    for (r, row) in rdr.deserialize::<Row>().enumerate() {
        let line = r + 2;
        let row = row?;
        let body = match row.body {
            Some(b) if b >= 1 => b - 1,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("point `{}` has no valid body label", row.point_id),
                })
            }
        };
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite coordinate".into(),
            });
        }
        let p = *index.entry(row.point_id.clone()).or_insert_with(|| {
            point_ids.push(row.point_id.clone());
            per_point.push(Vec::new());
            bodies.push(body);
            point_ids.len() - 1
        });
        if bodies[p] != body {
            return Err(Error::Parse {
                line,
                msg: format!("point `{}` changes body", row.point_id),
            });
        }
        per_point[p].push((row.frame, row.x, row.y));
    }
    if point_ids.is_empty() {
        return Err(Error::InvalidDataset("no trajectories".into()));
    }
    for obs in per_point.iter_mut() {
        obs.sort_by_key(|o| o.0);
    }
    let frames: Vec<i64> = per_point[0].iter().map(|o| o.0).collect();
    if frames.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidDataset(format!("point `{}` repeats a frame", point_ids[0])));
    }
    for (p, obs) in per_point.iter().enumerate() {
        if obs.len() != frames.len() || obs.iter().zip(&frames).any(|(o, &f)| o.0 != f) {
            return Err(Error::InvalidDataset(format!(
                "point `{}` is observed in {} frames, expected the {} frames of point `{}`",
                point_ids[p],
                obs.len(),
                frames.len(),
                point_ids[0]
            )));
        }
    }
    let n = point_ids.len();
    let data: Vec<f64> = per_point
        .iter()
        .flat_map(|obs| obs.iter().flat_map(|&(_, x, y)| [x, y]))
        .collect();
    Ok(Trajectories {
        point_ids,
        samples: DMatrix::from_vec(2 * frames.len(), n, data),
        frames,
        bodies,
    })
}

pub fn write_trajectories<W: Write>(traj: &Trajectories, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (p, id) in traj.point_ids.iter().enumerate() {
        for (f, &frame) in traj.frames.iter().enumerate() {
            wtr.serialize(Row {
                point_id: id.clone(),
                frame,
                x: traj.samples[(2 * f, p)],
                y: traj.samples[(2 * f + 1, p)],
                body: Some(traj.bodies[p] + 1),
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Rigid bodies moving in front of an affine camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    /// Tracked points on each body.
    pub points_per_body: Vec<usize>,
    pub frames: usize,
    /// Pixels per world unit.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Standard deviation of body centres, in world units.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_scale() -> f64 {
    100.0
}

fn default_spread() -> f64 {
    1.5
}

fn rotation(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Noise-free trajectories. Each body is a cloud of 3-D points with its own
/// rotation rate, axis and drift; projection drops depth after a fixed
/// camera tilt, so a body's trajectories span an affine space of dimension
/// at most three.
pub fn simulate_motion(config: &MotionConfig) -> Result<Trajectories> {
    if config.points_per_body.is_empty() || config.points_per_body.contains(&0) {
        return Err(Error::InvalidConfig("every body needs at least one point".into()));
    }
    if config.frames < 2 {
        return Err(Error::InvalidConfig("need at least two frames".into()));
    }
    if !(config.spread >= 0.0) {
        return Err(Error::InvalidConfig("spread must be non-negative".into()));
    }
    if !(config.scale > 0.0) {
        return Err(Error::InvalidConfig("scale must be positive".into()));
    }
    let mut rng = SeedChain::new(config.seed).named("motion").rng();
    let gauss3 = |rng: &mut rand_chacha::ChaCha20Rng| {
        Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
    };
    let tilt = rotation(&Vector3::new(1.0, 0.3, 0.0), 0.4);
    let n: usize = config.points_per_body.iter().sum();
    let f_count = config.frames;
    let mut samples = DMatrix::zeros(2 * f_count, n);
    let mut bodies = Vec::with_capacity(n);
    let mut col = 0;
    for (b, &count) in config.points_per_body.iter().enumerate() {
        let centre = gauss3(&mut rng) * config.spread;
        let axis = gauss3(&mut rng);
        let rate = rng.random_range(0.02..0.08);
        let drift = gauss3(&mut rng) * 0.05;
        let extent = Vector3::new(
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
            rng.random_range(0.5..1.5),
        );
        for _ in 0..count {
            let local = Vector3::new(
                rng.random_range(-1.0..1.0) * extent.x,
                rng.random_range(-1.0..1.0) * extent.y,
                rng.random_range(-1.0..1.0) * extent.z,
            );
            for f in 0..f_count {
                let t = f as f64;
                let world = rotation(&axis, rate * t) * local + centre + drift * t;
                let cam = tilt * world;
                samples[(2 * f, col)] = config.scale * cam.x;
                samples[(2 * f + 1, col)] = config.scale * cam.y;
            }
            bodies.push(b);
            col += 1;
        }
    }
    Ok(Trajectories {
        point_ids: (1..=n).map(|p| p.to_string()).collect(),
        frames: (1..=f_count as i64).collect(),
        samples,
        bodies,
    })
}

/// Partition of points into noise groups with per-group SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProtocol {
    /// Fraction of points per group; must sum to 1.
    pub shares: Vec<f64>,
    /// Per-group noise level in dB relative to the peak squared trajectory
    /// norm. `-inf` disables noise for that group.
    pub snr_db: Vec<f64>,
}

impl Default for NoiseProtocol {
    fn default() -> Self {
        NoiseProtocol {
            shares: vec![0.5, 0.35, 0.15],
            snr_db: vec![-30.0, -25.0, -20.0],
        }
    }
}

impl NoiseProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.shares.is_empty() || self.shares.len() != self.snr_db.len() {
            return Err(Error::InvalidConfig("need one SNR per noise-group share".into()));
        }
        if self.shares.iter().any(|&s| !(s >= 0.0)) || (self.shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("shares must be non-negative and sum to 1".into()));
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::InvalidConfig("SNR must be finite or -inf".into()));
        }
        Ok(())
    }

    /// Group sizes for `n` points: floors of `share * n`, with the remainder
    /// handed out by largest fractional part (ties to the lower group).
    pub fn group_sizes(&self, n: usize) -> Vec<usize> {
        let raw: Vec<f64> = self.shares.iter().map(|s| s * n as f64).collect();
        let mut sizes: Vec<usize> = raw.iter().map(|r| (r + 1e-9).floor() as usize).collect();
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &g in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if self.shares[g] > 0.0 {
                sizes[g] += 1;
                left -= 1;
            }
        }
        sizes
    }

    /// Per-coordinate noise variances: `max_i |y_i|^2 * 10^(snr / 10)`.
    pub fn variances(&self, samples: &DMatrix<f64>) -> Vec<f64> {
        let peak = samples.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
        self.snr_db.iter().map(|&s| peak * 10f64.powf(s / 10.0)).collect()
    }
}

/// Assigns points to noise groups by a seeded permutation and adds
/// Gaussian noise. Groups with zero share are dropped from the numbering,
/// so the returned dataset's groups are always non-empty.
pub fn add_group_noise(traj: &Trajectories, protocol: &NoiseProtocol, seed: SeedChain) -> Result<(Dataset, Vec<f64>)> {
    protocol.validate()?;
    let n = traj.len();
    let sizes = protocol.group_sizes(n);
    let variances_all = protocol.variances(&traj.samples);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.named("groups").rng());
    let mut groups = vec![0usize; n];
    let mut variances = Vec::new();
    let mut start = 0;
    for (g, &size) in sizes.iter().enumerate() {
        if size == 0 {
            continue;
        }
        let label = variances.len();
        for &p in &order[start..start + size] {
            groups[p] = label;
        }
        variances.push(variances_all[g]);
        start += size;
    }
    let mut samples = traj.samples.clone();
    let mut rng = seed.named("noise").rng();
    for p in 0..n {
        let sd = variances[groups[p]].sqrt();
        if sd == 0.0 {
            continue;
        }
        for v in samples.column_mut(p).iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += sd * e;
        }
    }
    let dataset = Dataset::new(samples, groups, Some(traj.bodies.clone()))?;
    Ok((dataset, variances))
}

/// Stratified split: within each label, a seeded shuffle and the first
/// `round(test_fraction * count)` points go to the test set. Both index
/// lists are returned in increasing order.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: SeedChain) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig("test fraction must be in [0, 1]".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = seed.named("split").rng();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
