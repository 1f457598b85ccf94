//! Training, generation and persistence of a complete GenHop model.

mod io;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::ColorModel;
use crate::lle::{RegionCodebooks, RegionSpec};
use crate::saab::{cascade_forward, cascade_shapes, fit_cascade, CascadeModel, HopConfig};
use crate::seed::SeedModel;
use crate::tensor::{ImageTensor, Shape};
use crate::{Error, Result};

pub use crate::format::FORMAT_VERSION;

/// Smallest training set accepted by [`train`].
pub const MIN_TRAIN_IMAGES: usize = 100;

/// Every hyper-parameter and seed a model is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenHopConfig {
    /// `(height, width, channels)` of the training images. Three channels
    /// selects the RGB path (P, Q decorrelation and RGB recovery).
    pub image_shape: Shape,
    pub hop1: HopConfig,
    pub hop2: HopConfig,
    /// Spatial PCA threshold on normalized eigenvalues.
    pub gamma: f64,
    /// Number of k-means clusters in the seed space.
    pub clusters: usize,
    /// Upper bound on LLE neighbors.
    pub k_max: usize,
    /// LLE regions on the seed grid (hf2 recovery).
    pub seed_region: RegionSpec,
    /// LLE regions on the hop-1 grid (hf1 recovery).
    pub detail_region: RegionSpec,
    pub train_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mnist,
    Fashion,
    Celeba,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Mnist, Preset::Fashion, Preset::Celeba];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Fashion => "fashion",
            Preset::Celeba => "celeba",
        }
    }

    pub fn config(self) -> GenHopConfig {
        let base = GenHopConfig {
            image_shape: (28, 28, 1),
            hop1: HopConfig::new(2, 2, 1),
            hop2: HopConfig::new(2, 4, 3),
            gamma: 0.01,
            clusters: 10,
            k_max: 3,
            seed_region: RegionSpec::square(2),
            detail_region: RegionSpec::square(3),
            train_seed: 0,
        };
        match self {
            Preset::Mnist => base,
            Preset::Fashion => GenHopConfig { hop1: HopConfig::new(2, 2, 2), hop2: HopConfig::new(2, 4, 4), ..base },
            Preset::Celeba => GenHopConfig {
                image_shape: (32, 32, 3),
                hop1: HopConfig::new(2, 3, 1),
                hop2: HopConfig::new(2, 4, 4),
                gamma: 0.03,
                clusters: 50,
                detail_region: RegionSpec::PerLocation,
                ..base
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}` (expected mnist, fashion or celeba)")))
    }
}

impl GenHopConfig {
    /// Channels entering the cascade: P and Q for RGB input, otherwise the
    /// image channels themselves.
    pub fn cascade_channels(&self) -> usize {
        if self.is_color() {
            crate::color::KEPT_CHANNELS
        } else {
            self.image_shape.2
        }
    }

    pub fn is_color(&self) -> bool {
        self.image_shape.2 == 3
    }

    /// Checks the parameter ranges and the cascade geometry; returns the
    /// `(S_1, S_4)` shapes.
    pub fn validate(&self) -> Result<(Shape, Shape)> {
        let (h, w, c) = self.image_shape;
        if c != 1 && c != 3 {
            return Err(Error::InvalidConfig(format!("images must have 1 or 3 channels, got {c}")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.clusters == 0 {
            return Err(Error::InvalidConfig("at least one cluster is required".into()));
        }
        if !(1..=crate::lle::MAX_NEIGHBORS).contains(&self.k_max) {
            return Err(Error::InvalidConfig(format!(
                "k_max must be between 1 and {}, got {}",
                crate::lle::MAX_NEIGHBORS,
                self.k_max
            )));
        }
        for r in [self.seed_region, self.detail_region] {
            if let RegionSpec::Window { h: 0, .. } | RegionSpec::Window { w: 0, .. } = r {
                return Err(Error::InvalidConfig("LLE regions must be non-empty".into()));
            }
        }
        cascade_shapes(h, w, self.cascade_channels(), &self.hop1, &self.hop2)
    }
}

/// Wall-clock time of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodebookSummary {
    pub grid: (usize, usize),
    pub region: RegionSpec,
    pub regions: usize,
    pub entries: usize,
    pub d_lf: usize,
    pub d_hf: usize,
}

impl CodebookSummary {
    fn of(books: &RegionCodebooks) -> Self {
        let first = books.books().first();
        Self {
            grid: books.grid(),
            region: books.region(),
            regions: books.books().len(),
            entries: books.entries(),
            d_lf: first.map_or(0, |b| b.d_lf()),
            d_hf: first.map_or(0, |b| b.d_hf()),
        }
    }
}

/// Dimensions, energies and sizes of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub format_version: u32,
    pub config: GenHopConfig,
    pub s1_shape: Shape,
    pub s4_shape: Shape,
    pub hf1_shape: Shape,
    pub hf2_shape: Shape,
    /// Reduced seed dimension.
    pub seed_dim: usize,
    /// Spatial PCA components kept per seed channel.
    pub retained_per_channel: Vec<usize>,
    /// Hop-1 channel energies, ranked.
    pub hop1_energies: Vec<f64>,
    /// Hop-2 child energy shares (parent share times child share), ranked.
    pub hop2_energies: Vec<f64>,
    pub cluster_priors: Vec<f64>,
    pub codebook_s4: CodebookSummary,
    pub codebook_s1: CodebookSummary,
    pub color_codebook: Option<CodebookSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub images: usize,
    pub timings: Vec<StageTiming>,
    pub summary: ModelSummary,
}

/// A trained model: everything generation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GenHopModel {
    pub(crate) config: GenHopConfig,
    pub(crate) cascade: CascadeModel,
    pub(crate) seed: SeedModel,
    /// Seed LF to hf2.
    pub(crate) codebook_s4: RegionCodebooks,
    /// Hop-1 LF to hf1.
    pub(crate) codebook_s1: RegionCodebooks,
    pub(crate) color: Option<ColorModel>,
}

struct Stopwatch {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self { timings: Vec::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        let seconds = (now - self.last).as_secs_f64();
        log::info!("{stage}: {seconds:.3}s");
        self.timings.push(StageTiming { stage, seconds });
        self.last = now;
    }
}

/// Trains a model on `images`, which must all have `config.image_shape`.
pub fn train(images: &[ImageTensor], config: &GenHopConfig) -> Result<GenHopModel> {
    train_with_report(images, config).map(|(m, _)| m)
}

pub fn train_with_report(images: &[ImageTensor], config: &GenHopConfig) -> Result<(GenHopModel, TrainReport)> {
    config.validate()?;
    if images.len() < MIN_TRAIN_IMAGES {
        return Err(Error::InsufficientSamples { needed: MIN_TRAIN_IMAGES, got: images.len() });
    }
    if let Some(bad) = images.iter().find(|t| t.shape() != config.image_shape) {
        return Err(Error::DimensionMismatch(format!(
            "expected {:?} images, found {:?}",
            config.image_shape,
            bad.shape()
        )));
    }
    for t in images {
        t.ensure_finite("training input")?;
    }
    let mut clock = Stopwatch::new();

    let (color, owned);
    let inputs: &[ImageTensor] = if config.is_color() {
        let model = ColorModel::fit(images, config.k_max)?;
        owned = images.par_iter().map(|t| model.to_pq(t)).collect::<Result<Vec<_>>>()?;
        color = Some(model);
        clock.lap("color");
        &owned
    } else {
        color = None;
        images
    };

    let cascade = fit_cascade(inputs, config.hop1, config.hop2)?;
    clock.lap("cascade");
    let outputs = inputs.par_iter().map(|t| cascade_forward(t, &cascade)).collect::<Result<Vec<_>>>()?;
    clock.lap("analysis");

    let s4: Vec<ImageTensor> = outputs.iter().map(|o| o.s4.clone()).collect();
    let seed = SeedModel::fit(&s4, config.gamma, config.clusters, config.train_seed)?.model;
    if seed.dim() == 0 {
        return Err(Error::DegenerateData(
            "no seed-space component passes the gamma threshold (training images may be identical)".into(),
        ));
    }
    clock.lap("seed");

    let hf2: Vec<ImageTensor> = outputs.iter().map(|o| o.hf2.clone()).collect();
    let codebook_s4 = RegionCodebooks::build(&s4, &hf2, config.seed_region, config.k_max)?;
    let lf1 = outputs.par_iter().map(|o| cascade.inverse_hop2(&o.s4, &o.hf2)).collect::<Result<Vec<_>>>()?;
    let hf1: Vec<ImageTensor> = outputs.into_iter().map(|o| o.hf1).collect();
    let codebook_s1 = RegionCodebooks::build(&lf1, &hf1, config.detail_region, config.k_max)?;
    clock.lap("codebooks");

    let model = GenHopModel { config: *config, cascade, seed, codebook_s4, codebook_s1, color };
    let report = TrainReport { images: images.len(), timings: clock.timings, summary: model.summary() };
    Ok((model, report))
}

impl GenHopModel {
    pub fn config(&self) -> &GenHopConfig {
        &self.config
    }

    pub fn cascade(&self) -> &CascadeModel {
        &self.cascade
    }

    pub fn seed(&self) -> &SeedModel {
        &self.seed
    }

    pub fn codebook_s4(&self) -> &RegionCodebooks {
        &self.codebook_s4
    }

    pub fn codebook_s1(&self) -> &RegionCodebooks {
        &self.codebook_s1
    }

    pub fn color(&self) -> Option<&ColorModel> {
        self.color.as_ref()
    }

    pub fn format_version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn summary(&self) -> ModelSummary {
        let hop1_energies = self.cascade.hop1_order().iter().map(|&i| self.cascade.hop1().energies()[i]).collect();
        ModelSummary {
            format_version: FORMAT_VERSION,
            config: self.config,
            s1_shape: self.cascade.s1_shape(),
            s4_shape: self.cascade.s4_shape(),
            hf1_shape: self.cascade.hf1_shape(),
            hf2_shape: self.cascade.hf2_shape(),
            seed_dim: self.seed.dim(),
            retained_per_channel: self.seed.pca().channels().iter().map(|c| c.retained()).collect(),
            hop1_energies,
            hop2_energies: self.cascade.ranked_child_energies(),
            cluster_priors: self.seed.clusters().priors().to_vec(),
            codebook_s4: CodebookSummary::of(&self.codebook_s4),
            codebook_s1: CodebookSummary::of(&self.codebook_s1),
            color_codebook: self.color.as_ref().map(|c| CodebookSummary::of(c.rgb_codebook())),
        }
    }

    /// Expands a seed-space tensor into an image: LLE on the seed grid, hop-2
    /// inverse, LLE on the hop-1 grid, hop-1 inverse, optional RGB recovery,
    /// then clamping to `[0, 1]`.
    pub fn synthesize(&self, s4: &ImageTensor) -> Result<ImageTensor> {
        s4.ensure_finite("seed")?;
        let (s4_adj, hf2) = self.codebook_s4.recover(s4)?;
        let lf1 = self.cascade.inverse_hop2(&s4_adj, &hf2)?;
        let (lf1_adj, hf1) = self.codebook_s1.recover(&lf1)?;
        let mut out = self.cascade.inverse_hop1(&lf1_adj, &hf1)?;
        if let Some(color) = &self.color {
            out = color.to_rgb(&out)?;
        }
        out.ensure_finite("synthesis")?;
        out.clamp_unit();
        Ok(out)
    }

    /// Draws one image from `rng`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<ImageTensor> {
        self.synthesize(&self.seed.sample(rng))
    }

    /// Generates `count` images. Image `i` uses a ChaCha8 stream `i` seeded
    /// with `master_seed`, so output does not depend on the thread count.
    pub fn generate(&self, count: usize, master_seed: u64) -> Result<Vec<ImageTensor>> {
        (0..count).into_par_iter().map(|i| self.sample(&mut sample_rng(master_seed, i as u64))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::to_container(self).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::from_container(&crate::format::Container::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::to_container(self).to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        io::from_container(&crate::format::Container::from_bytes(bytes)?)
    }
}

/// The per-sample generator used by [`GenHopModel::generate`].
pub fn sample_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
