//! Mapping between [`GenHopModel`] and the section container.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{GenHopConfig, GenHopModel};
use crate::color::ColorModel;
use crate::format::Container;
use crate::lle::{LleCodebook, RegionCodebooks, RegionSpec};
use crate::saab::{CascadeModel, SaabBasis};
use crate::seed::{CdfTable, ChannelPca, ClusterDensity, ClusterModel, IcaFit, SeedModel, SpatialPca, UnmixingKind};
use crate::{Error, Result};

fn malformed(msg: impl Into<String>) -> Error {
    Error::Malformed(msg.into())
}

fn fixed<const N: usize>(c: &Container, name: &str) -> Result<[usize; N]> {
    c.indices(name)?.try_into().map_err(|_| malformed(format!("section `{name}` must hold {N} values")))
}

pub(super) fn to_container(m: &GenHopModel) -> Container {
    let mut c = Container::new();
    c.push_text("config", serde_json::to_string(&m.config).expect("config serializes"));
    put_cascade(&mut c, &m.cascade);
    put_seed(&mut c, &m.seed);
    put_codebooks(&mut c, "codebook_s4", &m.codebook_s4);
    put_codebooks(&mut c, "codebook_s1", &m.codebook_s1);
    if let Some(color) = &m.color {
        c.push_vec("color.mean", color.mean().as_slice());
        c.push_matrix("color.axes", &DMatrix::from_iterator(3, 3, color.axes().iter().copied()));
        c.push_vec("color.eigenvalues", &color.eigenvalues());
        put_codebooks(&mut c, "color.codebook", color.rgb_codebook());
    }
    c
}

pub(super) fn from_container(c: &Container) -> Result<GenHopModel> {
    let config: GenHopConfig =
        serde_json::from_str(c.text("config")?).map_err(|e| malformed(format!("config: {e}")))?;
    config.validate().map_err(|e| malformed(format!("config: {e}")))?;
    let cascade = get_cascade(c)?;
    let seed = get_seed(c)?;
    let codebook_s4 = get_codebooks(c, "codebook_s4")?;
    let codebook_s1 = get_codebooks(c, "codebook_s1")?;
    let color = if config.is_color() {
        let mean = c.values("color.mean")?;
        let axes = c.matrix("color.axes")?;
        let eig = c.values("color.eigenvalues")?;
        if mean.len() != 3 || axes.shape() != (3, 3) || eig.len() != 3 {
            return Err(malformed("color model sections have the wrong size"));
        }
        Some(ColorModel::from_parts(
            Vector3::from_column_slice(&mean),
            Matrix3::from_iterator(axes.iter().copied()),
            [eig[0], eig[1], eig[2]],
            get_codebooks(c, "color.codebook")?,
        )?)
    } else {
        None
    };

    let (h, w, _) = config.image_shape;
    let consistent = cascade.input_shape() == (h, w, config.cascade_channels())
        && cascade.hop1_config() == config.hop1
        && cascade.hop2_config() == config.hop2
        && seed.pca().shape() == cascade.s4_shape()
        && codebook_s4.grid() == (cascade.s4_shape().0, cascade.s4_shape().1)
        && codebook_s4.lf_channels() == cascade.s4_shape().2
        && codebook_s4.hf_channels() == cascade.hf2_shape().2
        && codebook_s1.grid() == (cascade.s1_shape().0, cascade.s1_shape().1)
        && codebook_s1.lf_channels() == cascade.lf1_shape().2
        && codebook_s1.hf_channels() == cascade.hf1_shape().2
        && color.as_ref().is_none_or(|col| col.rgb_codebook().grid() == (h, w));
    if !consistent {
        return Err(malformed("model parts do not fit together"));
    }
    Ok(GenHopModel { config, cascade, seed, codebook_s4, codebook_s1, color })
}

fn put_basis(c: &mut Container, prefix: &str, b: &SaabBasis) {
    c.push_matrix(format!("{prefix}.kernels"), b.kernels());
    c.push_vec(format!("{prefix}.energies"), b.energies());
}

fn get_basis(c: &Container, prefix: &str) -> Result<SaabBasis> {
    SaabBasis::from_parts(c.matrix(&format!("{prefix}.kernels"))?, c.values(&format!("{prefix}.energies"))?)
        .map_err(|e| malformed(format!("{prefix}: {e}")))
}

fn put_cascade(c: &mut Container, m: &CascadeModel) {
    let (h, w, ch) = m.input_shape();
    c.push_indices("cascade.input_shape", &[h, w, ch]);
    put_basis(c, "cascade.hop1", m.hop1());
    c.push_indices("cascade.hop1_order", m.hop1_order());
    for (i, b) in m.hop2().iter().enumerate() {
        put_basis(c, &format!("cascade.hop2.{i}"), b);
    }
    c.push_indices("cascade.channel_order", m.channel_order());
}

fn get_cascade(c: &Container) -> Result<CascadeModel> {
    let config: GenHopConfig = serde_json::from_str(c.text("config")?).map_err(|e| malformed(e.to_string()))?;
    let [h, w, ch] = fixed::<3>(c, "cascade.input_shape")?;
    let hop2 =
        (0..config.hop1.keep_low).map(|i| get_basis(c, &format!("cascade.hop2.{i}"))).collect::<Result<Vec<_>>>()?;
    CascadeModel::from_parts(
        (h, w, ch),
        config.hop1,
        config.hop2,
        get_basis(c, "cascade.hop1")?,
        c.indices("cascade.hop1_order")?,
        hop2,
        c.indices("cascade.channel_order")?,
    )
}

fn put_seed(c: &mut Container, s: &SeedModel) {
    let pca = s.pca();
    let (h, w, ch) = pca.shape();
    c.push_indices("seed.pca.shape", &[h, w, ch]);
    c.push_vec("seed.pca.gamma", &[pca.gamma()]);
    for (i, p) in pca.channels().iter().enumerate() {
        c.push_vec(format!("seed.pca.{i}.mean"), p.mean().as_slice());
        c.push_matrix(format!("seed.pca.{i}.components"), p.components());
        c.push_vec(format!("seed.pca.{i}.eigenvalues"), p.eigenvalues());
        c.push_vec(format!("seed.pca.{i}.shares"), p.shares());
    }
    let clusters = s.clusters();
    let d = s.dim();
    let centroids: Vec<f64> = clusters.centroids().iter().flatten().copied().collect();
    c.push_matrix("seed.centroids", &DMatrix::from_row_slice(clusters.k(), d, &centroids));
    c.push_vec("seed.priors", clusters.priors());
    for (k, den) in clusters.densities().iter().enumerate() {
        let p = format!("seed.cluster.{k}");
        c.push_vec(format!("{p}.mean"), den.ica.mean.as_slice());
        c.push_matrix(format!("{p}.unmixing"), &den.ica.unmixing);
        c.push_matrix(format!("{p}.mixing"), &den.ica.mixing);
        c.push_indices(format!("{p}.fit"), &[den.ica.kind as usize, den.ica.iterations]);
        let n = den.tables.first().map_or(0, CdfTable::len);
        let values: Vec<f64> = den.tables.iter().flat_map(|t| t.values().iter().copied()).collect();
        c.push_matrix(format!("{p}.cdf"), &DMatrix::from_row_slice(den.tables.len(), n, &values));
    }
}

fn get_seed(c: &Container) -> Result<SeedModel> {
    let [h, w, ch] = fixed::<3>(c, "seed.pca.shape")?;
    let gamma = c.values("seed.pca.gamma")?.first().copied().ok_or_else(|| malformed("missing gamma"))?;
    let positions = h * w;
    let channels = (0..ch)
        .map(|i| {
            let p = format!("seed.pca.{i}");
            let pca = ChannelPca {
                mean: DVector::from_vec(c.values(&format!("{p}.mean"))?),
                components: c.matrix(&format!("{p}.components"))?,
                eigenvalues: c.values(&format!("{p}.eigenvalues"))?,
                shares: c.values(&format!("{p}.shares"))?,
            };
            let r = pca.components.nrows();
            if pca.mean.len() != positions
                || pca.components.ncols() != positions
                || pca.eigenvalues.len() != r
                || pca.shares.len() != r
            {
                return Err(malformed(format!("{p} has the wrong size")));
            }
            Ok(pca)
        })
        .collect::<Result<Vec<_>>>()?;
    let pca = SpatialPca { height: h, width: w, gamma, channels };

    let centroids = c.matrix("seed.centroids")?;
    let priors = c.values("seed.priors")?;
    let k = centroids.nrows();
    let densities = (0..k)
        .map(|i| {
            let p = format!("seed.cluster.{i}");
            let [kind, iterations] = fixed::<2>(c, &format!("{p}.fit"))?;
            let kind = u8::try_from(kind)
                .ok()
                .and_then(UnmixingKind::from_code)
                .ok_or_else(|| malformed(format!("{p}: unknown unmixing kind")))?;
            let ica = IcaFit {
                mean: DVector::from_vec(c.values(&format!("{p}.mean"))?),
                unmixing: c.matrix(&format!("{p}.unmixing"))?,
                mixing: c.matrix(&format!("{p}.mixing"))?,
                kind,
                iterations,
            };
            let d = ica.mean.len();
            if ica.unmixing.shape() != (d, d) || ica.mixing.shape() != (d, d) {
                return Err(malformed(format!("{p}: ICA matrices have the wrong size")));
            }
            let cdf = c.matrix(&format!("{p}.cdf"))?;
            let tables = cdf
                .row_iter()
                .map(|r| {
                    CdfTable::from_sorted(r.iter().copied().collect())
                        .ok_or_else(|| malformed(format!("{p}: CDF table is not sorted")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClusterDensity { ica, tables })
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = ClusterModel {
        centroids: centroids.row_iter().map(|r| r.iter().copied().collect()).collect(),
        priors,
        densities,
    };
    SeedModel::from_parts(pca, clusters)
}

fn put_codebooks(c: &mut Container, prefix: &str, b: &RegionCodebooks) {
    let (gh, gw) = b.grid();
    let (rh, rw) = b.region_code();
    let k_max = b.books().first().map_or(0, LleCodebook::k_max);
    c.push_indices(format!("{prefix}.meta"), &[gh, gw, b.lf_channels(), b.hf_channels(), rh, rw, k_max]);
    for (i, book) in b.books().iter().enumerate() {
        c.push_matrix(format!("{prefix}.{i}.lf"), &DMatrix::from_row_slice(book.len(), book.d_lf(), &book.lf_bank));
        c.push_matrix(format!("{prefix}.{i}.hf"), &DMatrix::from_row_slice(book.len(), book.d_hf(), &book.hf_bank));
    }
}

fn get_codebooks(c: &Container, prefix: &str) -> Result<RegionCodebooks> {
    let [gh, gw, lc, hc, rh, rw, k_max] = fixed::<7>(c, &format!("{prefix}.meta"))?;
    let region = RegionSpec::from_code(rh, rw);
    let n = crate::lle::region_anchors(gh, gw, region).len();
    let books = (0..n)
        .map(|i| {
            let lf = c.matrix(&format!("{prefix}.{i}.lf"))?;
            let hf = c.matrix(&format!("{prefix}.{i}.hf"))?;
            LleCodebook::from_flat(
                lf.ncols(),
                hf.ncols(),
                lf.transpose().as_slice().to_vec(),
                hf.transpose().as_slice().to_vec(),
                k_max,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    RegionCodebooks::from_parts((gh, gw), lc, hc, region, books)
}
