use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustics::{
    default_radius, make_circular_array_with, simulate_forward, time_reverse, Coincident, Medium, SensorGeometry,
};
use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::phantoms::{
    compose_complex, gen_circles, gen_shepp_logan, gen_vessels, gen_vessels_with, random_augment, source_size_for,
    VesselParams,
};
use crate::rng::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.json";
const MAX_REDRAWS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Circles,
    SheppLogan,
    Vessels,
    VesselsComplex,
    /// Composite vessels from the held-out generator constants, standing in
    /// for an anatomical test set.
    VesselsHeldOut,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 5] = [
        PhantomKind::Circles,
        PhantomKind::SheppLogan,
        PhantomKind::Vessels,
        PhantomKind::VesselsComplex,
        PhantomKind::VesselsHeldOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Circles => "circles",
            PhantomKind::SheppLogan => "shepp_logan",
            PhantomKind::Vessels => "vessels",
            PhantomKind::VesselsComplex => "vessels_complex",
            PhantomKind::VesselsHeldOut => "vessels_held_out",
        }
    }

    pub fn names() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }

    /// Ground-truth image for one sample seed. Augmented kinds can land on an
    /// empty crop; those are redrawn from a derived seed.
    pub fn generate(self, seed: u64, size: usize) -> Result<Image2D> {
        for attempt in 0..MAX_REDRAWS {
            let s = if attempt == 0 {
                seed
            } else {
                derive_seed(seed, "redraw", attempt)
            };
            let img = self.generate_once(s, size)?;
            if img.max() > img.min() {
                return Ok(img);
            }
        }
        Err(Error::InvalidArgument(format!(
            "{} phantom for seed {seed} stayed empty after {MAX_REDRAWS} draws",
            self.name()
        )))
    }

    fn generate_once(self, seed: u64, size: usize) -> Result<Image2D> {
        let source = source_size_for(size);
        let vessel_seed = derive_seed(seed, "vessel_source", 0);
        match self {
            PhantomKind::Circles => Ok(gen_circles(seed, size)),
            PhantomKind::SheppLogan => random_augment(seed, &gen_shepp_logan(source), size),
            PhantomKind::Vessels => random_augment(seed, &gen_vessels(vessel_seed, source), size),
            PhantomKind::VesselsComplex => compose_complex(seed, &gen_vessels(vessel_seed, source), size),
            PhantomKind::VesselsHeldOut => {
                let src = gen_vessels_with(vessel_seed, source, &VesselParams::held_out());
                compose_complex(seed, &src, size)
            }
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == norm).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown phantom kind {s:?}; expected one of {}", Self::names()))
        })
    }
}

/// Everything needed to (re)generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: PhantomKind,
    pub grid: usize,
    pub detectors: usize,
    pub radius_px: f64,
    pub seed: u64,
    /// Consecutive split blocks, e.g. `[("train", 200), ("test", 50)]`.
    pub splits: Vec<(String, usize)>,
}

impl DatasetSpec {
    pub fn new(kind: PhantomKind, n: usize, detectors: usize, grid: usize, seed: u64) -> Self {
        DatasetSpec {
            kind,
            grid,
            detectors,
            radius_px: default_radius(grid),
            seed,
            splits: vec![("all".to_string(), n)],
        }
    }

    pub fn with_splits(mut self, splits: &[(&str, usize)]) -> Self {
        self.splits = splits.iter().map(|(s, n)| (s.to_string(), *n)).collect();
        self
    }

    pub fn with_radius(mut self, radius_px: f64) -> Self {
        self.radius_px = radius_px;
        self
    }

    pub fn len(&self) -> usize {
        self.splits.iter().map(|(_, n)| n).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn medium(&self) -> Medium {
        Medium::for_grid(self.grid)
    }

    pub fn sensors(&self) -> Result<SensorGeometry> {
        let c = self.grid as f64 / 2.0;
        let ring = make_circular_array_with(self.detectors, self.radius_px, (c, c), self.grid, Coincident::Merge)?;
        if ring.len() < self.detectors {
            log::warn!(
                "{} of {} detectors share pixels at radius {} and were merged",
                self.detectors - ring.len(),
                self.detectors,
                self.radius_px
            );
        }
        Ok(ring)
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, self.kind.name(), index as u64)
    }

    fn split_of(&self, index: usize) -> &str {
        let mut end = 0;
        for (name, n) in &self.splits {
            end += n;
            if index < end {
                return name;
            }
        }
        unreachable!("index beyond the last split")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    pub split: String,
    pub x_file: String,
    pub y_file: String,
    pub x_sha256: String,
    pub y_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub medium: Medium,
    pub sensor_count: usize,
    pub samples: Vec<SampleRecord>,
}

/// One (TR reconstruction, ground truth) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub seed: u64,
    pub x: Image2D,
    pub y: Image2D,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Phantom, forward simulation and time reversal for one sample.
pub fn simulate_pair(
    kind: PhantomKind,
    seed: u64,
    medium: &Medium,
    sensors: &SensorGeometry,
    grid: usize,
) -> Result<Pair> {
    let y = kind.generate(seed, grid)?;
    let data = simulate_forward(&y, medium, sensors)?;
    let x = time_reverse(&data, medium, sensors, grid)?;
    Ok(Pair { seed, x, y })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))
}

/// Generates every sample of `spec` into `dir`, writing `manifest.json` last.
/// Samples are independent, so `jobs` only affects wall time.
pub fn make_dataset(spec: &DatasetSpec, dir: impl AsRef<Path>, jobs: usize) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    if spec.detectors == 0 {
        return Err(Error::Geometry("at least one detector is required".into()));
    }
    let medium = spec.medium();
    medium.validate()?;
    let sensors = spec.sensors()?;
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(format!("creating {}", samples_dir.display()), e))?;

    let build = |index: usize| -> Result<SampleRecord> {
        let seed = spec.sample_seed(index);
        let pair = simulate_pair(spec.kind, seed, &medium, &sensors, spec.grid).map_err(|e| Error::Sample {
            seed,
            source: Box::new(e),
        })?;
        let x_file = format!("samples/{index:05}_x.ptns");
        let y_file = format!("samples/{index:05}_y.ptns");
        let mut hashes = Vec::with_capacity(2);
        for (file, img) in [(&x_file, &pair.x), (&y_file, &pair.y)] {
            let bytes = crate::tensor::io::encode(&img.to_tensor());
            let path = dir.join(file);
            fs::write(&path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            hashes.push(sha256_hex(&bytes));
        }
        log::debug!("sample {index} (seed {seed}) done");
        Ok(SampleRecord {
            index,
            seed,
            split: spec.split_of(index).to_string(),
            x_file,
            y_file,
            y_sha256: hashes.pop().unwrap_or_default(),
            x_sha256: hashes.pop().unwrap_or_default(),
        })
    };
    let samples: Vec<SampleRecord> = if jobs > 1 {
        thread_pool(jobs)?.install(|| (0..spec.len()).into_par_iter().map(build).collect::<Result<_>>())?
    } else {
        (0..spec.len()).map(build).collect::<Result<_>>()?
    };

    let manifest = DatasetManifest {
        format_version: 1,
        spec: spec.clone(),
        medium,
        sensor_count: sensors.len(),
        samples,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    log::info!(
        "{} dataset: {} samples, {} detectors, grid {} -> {}",
        spec.kind,
        spec.len(),
        spec.detectors,
        spec.grid,
        dir.display()
    );
    Ok(manifest)
}

impl DatasetManifest {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.samples {
            if !names.contains(&s.split) {
                names.push(s.split.clone());
            }
        }
        names
    }

    pub fn indices(&self, split: &str) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.index)
            .collect()
    }

    fn load_checked(&self, dir: &Path, file: &str, expected: &str) -> Result<Image2D> {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let found = sha256_hex(&bytes);
        if found != expected {
            return Err(Error::Checksum {
                path,
                expected: expected.to_string(),
                found,
            });
        }
        let t = crate::tensor::io::decode(&bytes)?.into_tensor::<f64>();
        Ok(Image2D::from_tensor(&t)?.with_pixel_spacing(self.medium.dx))
    }

    /// Loads the pairs at `indices`, verifying every checksum.
    pub fn load(&self, dir: impl AsRef<Path>, indices: &[usize]) -> Result<Vec<Pair>> {
        let dir = dir.as_ref();
        indices
            .iter()
            .map(|&i| {
                let rec = self
                    .samples
                    .get(i)
                    .ok_or_else(|| Error::InvalidArgument(format!("sample {i} is not in the manifest")))?;
                Ok(Pair {
                    seed: rec.seed,
                    x: self.load_checked(dir, &rec.x_file, &rec.x_sha256)?,
                    y: self.load_checked(dir, &rec.y_file, &rec.y_sha256)?,
                })
            })
            .collect()
    }

    pub fn load_split(&self, dir: impl AsRef<Path>, split: &str) -> Result<Vec<Pair>> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "split {split:?} is empty; available: {:?}",
                self.split_names()
            )));
        }
        self.load(dir, &idx)
    }

    pub fn load_all(&self, dir: impl AsRef<Path>) -> Result<Vec<Pair>> {
        let idx: Vec<usize> = (0..self.samples.len()).collect();
        self.load(dir, &idx)
    }
}
