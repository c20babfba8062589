use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{make_dataset, DatasetManifest, DatasetSpec, Pair, PhantomKind, MANIFEST_FILE};
use super::train::{fine_tune, restore, train, TrainConfig};
use crate::acoustics::default_radius;
use crate::error::{Error, Result};
use crate::image::{pgm_bytes, Image2D};
use crate::metrics::{reports_to_csv, score_pairs, QualityReport};
use crate::networks::{build_model, load_model, save_model, ArchKind, ArchSpec, Model};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Exp1Circles,
    Exp2Transfer,
    Exp3Vessels,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 3] = [
        ExperimentName::Exp1Circles,
        ExperimentName::Exp2Transfer,
        ExperimentName::Exp3Vessels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::Exp1Circles => "exp1_circles",
            ExperimentName::Exp2Transfer => "exp2_transfer",
            ExperimentName::Exp3Vessels => "exp3_vessels",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
            Error::InvalidArgument(format!(
                "unknown experiment {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Full,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::InvalidArgument(format!(
                "unknown scale {other:?}; expected full or desk"
            ))),
        }
    }
}

/// Sizes and schedules shared by the three experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: usize,
    pub radius_px: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_fine_tune: usize,
    pub f1: Vec<usize>,
    pub fine_tune_iterations: usize,
    pub circle_detectors: Vec<usize>,
    pub transfer_detectors: usize,
    pub vessel_detectors: Vec<usize>,
    pub train: TrainConfig,
    pub panels: usize,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Full => ExperimentConfig {
                grid: 128,
                radius_px: default_radius(128),
                n_train: 1000,
                n_test: 200,
                n_fine_tune: 100,
                f1: vec![8, 16, 32, 64],
                fine_tune_iterations: 5000,
                circle_detectors: vec![10, 15, 30],
                transfer_detectors: 30,
                vessel_detectors: vec![15, 30, 45],
                train: TrainConfig::default(),
                panels: 4,
                jobs: 1,
            },
            Scale::Desk => ExperimentConfig {
                grid: 64,
                radius_px: 30.0,
                n_train: 200,
                n_test: 50,
                n_fine_tune: 50,
                f1: vec![8],
                fine_tune_iterations: 1000,
                train: TrainConfig {
                    iterations: 2000,
                    ..TrainConfig::default()
                },
                ..Self::for_scale(Scale::Full)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid % 16 != 0 {
            return Err(Error::InvalidArgument(format!(
                "grid {} is not a multiple of 16",
                self.grid
            )));
        }
        if self.n_train == 0 || self.n_test == 0 || self.f1.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment needs training data, test data and an f1".into(),
            ));
        }
        if self.f1.iter().any(|f| f % 8 != 0) {
            return Err(Error::InvalidArgument(
                "every f1 must be a multiple of 8 (k1 = f1 / 8)".into(),
            ));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub name: ExperimentName,
    pub reports: Vec<QualityReport>,
    pub csv_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn find(&self, method: &str, detectors: usize) -> Option<&QualityReport> {
        self.reports
            .iter()
            .find(|r| r.method == method && r.detectors == detectors)
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    out: &'a Path,
}

fn arch_for(kind: ArchKind, f1: usize) -> ArchSpec {
    match kind {
        ArchKind::Unet => ArchSpec::unet(f1),
        ArchKind::FdUnet => ArchSpec::fd_unet(f1, f1 / 8),
    }
}

fn arch_label(arch: &ArchSpec) -> String {
    match arch.kind {
        ArchKind::Unet => format!("unet_f{}", arch.f1),
        ArchKind::FdUnet => format!("fd_unet_f{}_k{}", arch.f1, arch.k1.unwrap_or(0)),
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

impl Runner<'_> {
    fn dataset_spec(&self, kind: PhantomKind, detectors: usize, splits: &[(&str, usize)]) -> DatasetSpec {
        DatasetSpec::new(
            kind,
            0,
            detectors,
            self.cfg.grid,
            derive_seed(self.seed, "phantoms", kind as u64),
        )
        .with_radius(self.cfg.radius_px)
        .with_splits(splits)
    }

    /// Generates the dataset unless an identical one is already on disk.
    fn dataset(&self, spec: &DatasetSpec) -> Result<(PathBuf, DatasetManifest)> {
        let sizes: Vec<String> = spec.splits.iter().map(|(s, n)| format!("{s}{n}")).collect();
        let dir = self.out.join("datasets").join(format!(
            "{}_g{}_d{}_{}",
            spec.kind,
            spec.grid,
            spec.detectors,
            sizes.join("_")
        ));
        if dir.join(MANIFEST_FILE).exists() {
            let manifest = DatasetManifest::read(&dir)?;
            if &manifest.spec == spec {
                return Ok((dir, manifest));
            }
        }
        let manifest = make_dataset(spec, &dir, self.cfg.jobs)?;
        Ok((dir, manifest))
    }

    fn train_cfg(&self, key: &str) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, key, 0),
            ..self.cfg.train.clone()
        }
    }

    /// Trains (or reloads) a model under `models/<key>`.
    fn model(
        &self,
        key: &str,
        arch: &ArchSpec,
        run: impl FnOnce(&mut Model<f32>, &TrainConfig) -> Result<super::train::TrainLog>,
        init: impl FnOnce() -> Result<Model<f32>>,
    ) -> Result<Model<f32>> {
        let dir = self.out.join("models").join(key);
        let cfg = self.train_cfg(key);
        let stamp = serde_json::to_string_pretty(&(arch, &cfg))?;
        if dir.join("train.json").exists() {
            if let Ok(prev) = fs::read_to_string(dir.join("train.json")) {
                if prev == stamp {
                    if let Ok(model) = load_model::<f32>(&dir) {
                        return Ok(model);
                    }
                }
            }
        }
        let mut model = init()?;
        log::info!("training {key} ({} parameters)", model.param_count());
        let log = run(&mut model, &cfg)?;
        save_model(&model, &dir)?;
        write(&dir.join("loss.csv"), log.to_csv())?;
        write(&dir.join("train.json"), stamp)?;
        Ok(model)
    }

    fn trained(&self, key: &str, arch: &ArchSpec, pairs: &[Pair]) -> Result<Model<f32>> {
        let seed = derive_seed(self.seed, key, 1);
        self.model(key, arch, |m, cfg| train(m, pairs, cfg), || build_model(arch, seed))
    }

    fn tr_report(&self, method: &str, detectors: usize, pairs: &[Pair]) -> Result<QualityReport> {
        let xs: Vec<Image2D> = pairs.iter().map(|p| p.x.clone()).collect();
        let ys: Vec<Image2D> = pairs.iter().map(|p| p.y.clone()).collect();
        score_pairs(QualityReport::new(method, detectors), &xs, &ys)
    }

    fn net_report(
        &self,
        method: &str,
        detectors: usize,
        model: &Model<f32>,
        pairs: &[Pair],
    ) -> Result<(QualityReport, Vec<Image2D>)> {
        let inputs: Vec<&Image2D> = pairs.iter().map(|p| &p.x).collect();
        let restored = restore(model, &inputs)?;
        let ys: Vec<Image2D> = pairs.iter().map(|p| p.y.clone()).collect();
        let mut report = QualityReport::new(method, detectors);
        if let Some(arch) = model.arch() {
            report.f1 = Some(arch.f1);
            report.k1 = arch.k1;
        }
        report.params = Some(model.param_count());
        Ok((score_pairs(report, &restored, &ys)?, restored))
    }

    fn panels(&self, stem: &str, pairs: &[Pair], a: &[Image2D], b: &[Image2D]) -> Result<()> {
        let dir = self.out.join("panels");
        mkdir(&dir)?;
        for (i, pair) in pairs.iter().take(self.cfg.panels).enumerate() {
            let tiles = [&pair.y, &pair.x, &a[i], &b[i]];
            write(&dir.join(format!("{stem}_{i:02}.pgm")), panel(&tiles))?;
        }
        Ok(())
    }

    fn exp1(&self) -> Result<Vec<QualityReport>> {
        let mut reports = Vec::new();
        for &det in &self.cfg.circle_detectors {
            let spec = self.dataset_spec(
                PhantomKind::Circles,
                det,
                &[("train", self.cfg.n_train), ("test", self.cfg.n_test)],
            );
            let (dir, manifest) = self.dataset(&spec)?;
            let train_pairs = manifest.load_split(&dir, "train")?;
            let test_pairs = manifest.load_split(&dir, "test")?;
            reports.push(self.tr_report("TR", det, &test_pairs)?);
            for (fi, &f1) in self.cfg.f1.iter().enumerate() {
                let mut outputs = Vec::new();
                for kind in [ArchKind::Unet, ArchKind::FdUnet] {
                    let arch = arch_for(kind, f1);
                    let key = format!("circles_d{det}_{}", arch_label(&arch));
                    let model = self.trained(&key, &arch, &train_pairs)?;
                    let (report, restored) = self.net_report(kind.label(), det, &model, &test_pairs)?;
                    reports.push(report);
                    outputs.push(restored);
                }
                if fi == 0 {
                    self.panels(&format!("exp1_circles_d{det}"), &test_pairs, &outputs[0], &outputs[1])?;
                }
            }
        }
        Ok(reports)
    }

    fn exp2(&self) -> Result<Vec<QualityReport>> {
        let det = self.cfg.transfer_detectors;
        let spec = self.dataset_spec(
            PhantomKind::Circles,
            det,
            &[("train", self.cfg.n_train), ("test", self.cfg.n_test)],
        );
        let (dir, manifest) = self.dataset(&spec)?;
        let circles = manifest.load_split(&dir, "train")?;
        let mut reports = Vec::new();
        for target in [PhantomKind::SheppLogan, PhantomKind::Vessels] {
            let spec = self.dataset_spec(
                target,
                det,
                &[("fine_tune", self.cfg.n_fine_tune), ("test", self.cfg.n_test)],
            );
            let (dir, manifest) = self.dataset(&spec)?;
            let tune = manifest.load_split(&dir, "fine_tune")?;
            let test = manifest.load_split(&dir, "test")?;
            reports.push(self.tr_report(&format!("TR/{target}"), det, &test)?);
            for (fi, &f1) in self.cfg.f1.iter().enumerate() {
                let mut tuned_outputs = Vec::new();
                for kind in [ArchKind::Unet, ArchKind::FdUnet] {
                    let arch = arch_for(kind, f1);
                    let base_key = format!("circles_d{det}_{}", arch_label(&arch));
                    let base = self.trained(&base_key, &arch, &circles)?;
                    let (initial, _) =
                        self.net_report(&format!("{}/{target}/initial", kind.label()), det, &base, &test)?;
                    reports.push(initial);
                    let key = format!("{base_key}_ft_{target}");
                    let iters = self.cfg.fine_tune_iterations;
                    let tuned = self.model(
                        &key,
                        &arch,
                        |m, cfg| fine_tune(m, &tune, cfg, iters),
                        || Ok(base.clone()),
                    )?;
                    let (report, restored) =
                        self.net_report(&format!("{}/{target}/fine_tuned", kind.label()), det, &tuned, &test)?;
                    reports.push(report);
                    tuned_outputs.push(restored);
                }
                if fi == 0 {
                    self.panels(&format!("exp2_{target}"), &test, &tuned_outputs[0], &tuned_outputs[1])?;
                }
            }
        }
        Ok(reports)
    }

    fn exp3(&self) -> Result<Vec<QualityReport>> {
        let mut reports = Vec::new();
        for &det in &self.cfg.vessel_detectors {
            let train_spec = self.dataset_spec(PhantomKind::VesselsComplex, det, &[("train", self.cfg.n_train)]);
            let test_spec = self.dataset_spec(PhantomKind::VesselsHeldOut, det, &[("test", self.cfg.n_test)]);
            let (train_dir, train_manifest) = self.dataset(&train_spec)?;
            let (test_dir, test_manifest) = self.dataset(&test_spec)?;
            let train_pairs = train_manifest.load_split(&train_dir, "train")?;
            let test_pairs = test_manifest.load_split(&test_dir, "test")?;
            reports.push(self.tr_report("TR", det, &test_pairs)?);
            for (fi, &f1) in self.cfg.f1.iter().enumerate() {
                let mut outputs = Vec::new();
                for kind in [ArchKind::Unet, ArchKind::FdUnet] {
                    let arch = arch_for(kind, f1);
                    let key = format!("vessels_d{det}_{}", arch_label(&arch));
                    let model = self.trained(&key, &arch, &train_pairs)?;
                    let (report, restored) = self.net_report(kind.label(), det, &model, &test_pairs)?;
                    reports.push(report);
                    outputs.push(restored);
                }
                if fi == 0 {
                    self.panels(&format!("exp3_vessels_d{det}"), &test_pairs, &outputs[0], &outputs[1])?;
                }
            }
        }
        Ok(reports)
    }
}

/// Runs one experiment, writing `<name>.csv`, `<name>.json` (per-image
/// scores) and PGM panels under `out`. Datasets and models already present
/// with identical settings are reused.
pub fn run_experiment(
    name: ExperimentName,
    cfg: &ExperimentConfig,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = out.as_ref();
    mkdir(out)?;
    let runner = Runner { cfg, seed, out };
    let reports = match name {
        ExperimentName::Exp1Circles => runner.exp1()?,
        ExperimentName::Exp2Transfer => runner.exp2()?,
        ExperimentName::Exp3Vessels => runner.exp3()?,
    };
    let csv_path = out.join(format!("{name}.csv"));
    write(&csv_path, reports_to_csv(&reports))?;
    write(
        &out.join(format!("{name}.json")),
        serde_json::to_string_pretty(&reports)?,
    )?;
    for r in &reports {
        log::info!("{}", r.csv_row());
    }
    Ok(ExperimentOutcome {
        name,
        reports,
        csv_path,
    })
}

/// Tiles laid side by side with a two-pixel gap, all on the first tile's
/// intensity scale.
pub fn panel(tiles: &[&Image2D]) -> Vec<u8> {
    let n = tiles.first().map(|t| t.size()).unwrap_or(0);
    let gap = 2;
    let width = tiles.len() * n + gap * tiles.len().saturating_sub(1);
    let peak = tiles.first().map(|t| t.max()).unwrap_or(0.0);
    let mut values = vec![0.0; width * n];
    for (k, tile) in tiles.iter().enumerate() {
        let x0 = k * (n + gap);
        for y in 0..n {
            for x in 0..n.min(tile.size()) {
                values[y * width + x0 + x] = tile.get(y, x).clamp(0.0, peak.max(0.0));
            }
        }
    }
    pgm_bytes(width, n, &values)
}
