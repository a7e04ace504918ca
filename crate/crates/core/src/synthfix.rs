//! Deterministic synthetic tracklet datasets.
//!
//! Each identity owns a unit centroid. Clean frames scatter around it,
//! corrupted frames are isotropic random unit vectors, and ground-domain
//! tracklets are rotated by a fixed angle so cross-domain retrieval is
//! harder than same-domain retrieval.
//!
//! Even identities form the training split. Odd identities are spread over
//! query/gallery and both domains: tracklet `k` of an identity is aerial
//! when `k` is even, and a query when `k / 2` is even.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    write_feature_file, write_manifest, Dataset, Domain, FeatureFile, FrameFeatureSequence, Split, TrackletRecord,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub num_ids: usize,
    pub tracklets_per_id: usize,
    pub seq_len: usize,
    pub feature_dim: usize,
    /// Scale of the isotropic noise added to clean frames before normalizing.
    pub cluster_spread: f64,
    /// Rotation angle (radians) applied to ground-domain tracklets.
    pub domain_offset: f64,
    /// Fraction of frames per tracklet replaced by random unit vectors.
    pub corrupt_frac: f64,
    /// Weight of the uniform channel direction in every centroid.
    pub shared_component: f64,
    pub with_flip: bool,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            num_ids: 16,
            tracklets_per_id: 32,
            seq_len: 16,
            feature_dim: 32,
            cluster_spread: 2.0,
            domain_offset: 0.3,
            corrupt_frac: 0.5,
            shared_component: 0.5,
            with_flip: false,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_ids == 0 || self.tracklets_per_id == 0 || self.seq_len == 0 {
            return bad("fixture counts must be at least 1".into());
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim {} must be at least 2", self.feature_dim));
        }
        if !(0.0..=1.0).contains(&self.corrupt_frac) {
            return bad(format!("corrupt_frac {} not in [0, 1]", self.corrupt_frac));
        }
        if !(0.0..=1.0).contains(&self.shared_component) {
            return bad(format!("shared_component {} not in [0, 1]", self.shared_component));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!(
                "cluster_spread {} must be finite and >= 0",
                self.cluster_spread
            ));
        }
        if !self.domain_offset.is_finite() {
            return bad("domain_offset must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub config: FixtureConfig,
    pub dataset: Dataset,
    /// `corruption[tracklet][frame]`
    pub corruption: Vec<Vec<bool>>,
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn gaussian(rng: &mut ChaCha8Rng, c: usize) -> Array1<f64> {
    Array1::from_shape_fn(c, |_| rng.sample(StandardNormal))
}

fn random_unit(rng: &mut ChaCha8Rng, c: usize) -> Array1<f64> {
    loop {
        let v = gaussian(rng, c);
        if v.dot(&v) > 1e-12 {
            return unit(v);
        }
    }
}

/// Orthonormal basis (columns) by Gram–Schmidt on Gaussian vectors, with
/// `first` as column 0.
fn random_basis(rng: &mut ChaCha8Rng, first: &Array1<f64>) -> Array2<f64> {
    let c = first.len();
    let mut basis: Vec<Array1<f64>> = vec![first.clone()];
    while basis.len() < c {
        let mut v = gaussian(rng, c);
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    let mut m = Array2::zeros((c, c));
    for (j, b) in basis.iter().enumerate() {
        m.column_mut(j).assign(b);
    }
    m
}

/// Rotation by `angle` in each plane spanned by consecutive basis columns
/// after the first, which stays fixed.
struct DomainRotation {
    basis: Array2<f64>,
    cos: f64,
    sin: f64,
}

impl DomainRotation {
    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut coords = self.basis.t().dot(x);
        for pair in 0..(coords.len() - 1) / 2 {
            let (i, j) = (2 * pair + 1, 2 * pair + 2);
            let (a, b) = (coords[i], coords[j]);
            coords[i] = self.cos * a - self.sin * b;
            coords[j] = self.sin * a + self.cos * b;
        }
        self.basis.dot(&coords)
    }
}

struct Layout {
    person_id: u32,
    camera_id: u32,
    domain: Domain,
    split: Split,
}

fn layout(id: usize, k: usize) -> Layout {
    let domain = if k.is_multiple_of(2) {
        Domain::Aerial
    } else {
        Domain::Ground
    };
    let split = if id.is_multiple_of(2) {
        Split::Train
    } else if (k / 2).is_multiple_of(2) {
        Split::Query
    } else {
        Split::Gallery
    };
    Layout {
        person_id: id as u32,
        camera_id: k as u32,
        domain,
        split,
    }
}

fn tracklet(
    rng: &mut ChaCha8Rng,
    config: &FixtureConfig,
    centroid: &Array1<f64>,
    corrupt: &[bool],
    rotation: Option<&DomainRotation>,
) -> Array2<f64> {
    let (t, c) = (config.seq_len, config.feature_dim);
    let noise_scale = config.cluster_spread / (c as f64).sqrt();
    let mut frames = Array2::zeros((t, c));
    for (i, &bad) in corrupt.iter().enumerate() {
        let f = if bad {
            random_unit(rng, c)
        } else {
            let clean = if config.cluster_spread == 0.0 {
                centroid.clone()
            } else {
                unit(centroid + &(gaussian(rng, c) * noise_scale))
            };
            match rotation {
                Some(r) => r.apply(&clean),
                None => clean,
            }
        };
        frames.row_mut(i).assign(&f);
    }
    frames
}

pub fn generate(config: &FixtureConfig) -> Result<Fixture> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.feature_dim;
    let t = config.seq_len;

    // The shared direction is the uniform channel vector, which the
    // instance-norm neck removes.
    let shared = Array1::from_elem(c, 1.0 / (c as f64).sqrt());
    let s = config.shared_component;
    let centroids: Vec<Array1<f64>> = (0..config.num_ids)
        .map(|_| {
            let mut r = random_unit(&mut rng, c);
            let p = r.dot(&shared);
            r.scaled_add(-p, &shared);
            r = unit(r);
            &shared * s + &(r * (1.0 - s * s).sqrt())
        })
        .collect();
    let rotation = DomainRotation {
        basis: random_basis(&mut rng, &shared),
        cos: config.domain_offset.cos(),
        sin: config.domain_offset.sin(),
    };
    let n_corrupt = ((config.corrupt_frac * t as f64).round() as usize).min(t);

    let mut records = Vec::new();
    let mut sequences = Vec::new();
    let mut flipped = Vec::new();
    let mut corruption = Vec::new();
    for (id, centroid) in centroids.iter().enumerate() {
        for k in 0..config.tracklets_per_id {
            let index = records.len();
            let lay = layout(id, k);
            let mut mask = vec![false; t];
            for i in sample(&mut rng, t, n_corrupt) {
                mask[i] = true;
            }
            let rot = (lay.domain == Domain::Ground).then_some(&rotation);
            sequences.push(FrameFeatureSequence::new(
                tracklet(&mut rng, config, centroid, &mask, rot),
                index,
            )?);
            if config.with_flip {
                flipped.push(FrameFeatureSequence::new(
                    tracklet(&mut rng, config, centroid, &mask, rot),
                    index,
                )?);
            }
            let (altitude_m, distance_m, angle_deg) = match lay.domain {
                Domain::Aerial => (
                    rng.random_range(5.0..120.0),
                    rng.random_range(10.0..120.0),
                    rng.random_range(20.0..90.0),
                ),
                Domain::Ground => (1.5, rng.random_range(10.0..40.0), 0.0),
            };
            records.push(TrackletRecord {
                tracklet_index: index,
                person_id: lay.person_id,
                camera_id: lay.camera_id,
                domain: lay.domain,
                split: lay.split,
                altitude_m,
                distance_m,
                angle_deg,
                has_flip: config.with_flip,
            });
            corruption.push(mask);
        }
    }

    let features = FeatureFile {
        feature_dim: c,
        seq_len: t,
        sequences,
    };
    let flipped = config.with_flip.then(|| FeatureFile {
        feature_dim: c,
        seq_len: t,
        sequences: flipped,
    });
    Ok(Fixture {
        config: config.clone(),
        dataset: Dataset::new(records, features, flipped)?,
        corruption,
    })
}

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixturePaths {
    pub features: PathBuf,
    pub flipped_features: Option<PathBuf>,
    pub manifest: PathBuf,
    pub corruption: PathBuf,
}

pub fn write_corruption_csv<W: Write>(writer: W, corruption: &[Vec<bool>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tracklet_index", "frame_index", "is_corrupt"])?;
    for (i, mask) in corruption.iter().enumerate() {
        for (f, &bad) in mask.iter().enumerate() {
            w.write_record([i.to_string(), f.to_string(), u8::from(bad).to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<corruption>", e))
}

pub fn read_corruption_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<bool>>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let mut out: Vec<Vec<bool>> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize, column: &'static str| -> Result<usize> {
            row.get(i)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::InvalidField {
                    column,
                    value: row.get(i).unwrap_or("").to_string(),
                })
        };
        let (t, f, bad) = (
            field(0, "tracklet_index")?,
            field(1, "frame_index")?,
            field(2, "is_corrupt")?,
        );
        if out.len() <= t {
            out.resize(t + 1, Vec::new());
        }
        if out[t].len() <= f {
            out[t].resize(f + 1, false);
        }
        out[t][f] = bad != 0;
    }
    Ok(out)
}

pub fn write_fixture(fixture: &Fixture, dir: impl AsRef<Path>) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = FixturePaths {
        features: dir.join("features.xfdf"),
        flipped_features: fixture
            .dataset
            .flipped_features
            .as_ref()
            .map(|_| dir.join("features_flip.xfdf")),
        manifest: dir.join("manifest.csv"),
        corruption: dir.join("corruption.csv"),
    };
    write_feature_file(&paths.features, &fixture.dataset.features)?;
    if let (Some(path), Some(flip)) = (&paths.flipped_features, &fixture.dataset.flipped_features) {
        write_feature_file(path, flip)?;
    }
    let open = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));
    write_manifest(open(&paths.manifest)?, &fixture.dataset.records)?;
    write_corruption_csv(open(&paths.corruption)?, &fixture.corruption)?;
    Ok(paths)
}
