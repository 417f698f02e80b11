//! Deployment geometry, channels and the bounded cascaded-error model.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Side, SystemConfig};
use crate::{CMatrix, CVector, C64};

pub type Vec3 = [f64; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("element index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("point coincides with element {0}")]
    Singular(usize),
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rho must be nonnegative, got {0}")]
    NegativeRho(f64),
    #[error("fixture parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    pub bs_position: Vec3,
    /// Position of element 1.
    pub ris_reference: Vec3,
    pub n_y: usize,
    pub n_z: usize,
    pub element_spacing: f64,
    pub wavelength: f64,
    pub bs_antennas: usize,
}

impl SystemGeometry {
    /// Aperture centered on the origin.
    pub fn centered(cfg: &SystemConfig) -> Self {
        let d = cfg.element_spacing;
        Self {
            bs_position: cfg.bs_position,
            ris_reference: [0.0, -((cfg.n_y - 1) as f64) * d / 2.0, -((cfg.n_z - 1) as f64) * d / 2.0],
            n_y: cfg.n_y,
            n_z: cfg.n_z,
            element_spacing: d,
            wavelength: cfg.wavelength,
            bs_antennas: cfg.bs_antennas,
        }
    }

    pub fn n(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn element_positions(&self) -> Vec<Vec3> {
        (1..=self.n()).map(|n| element_position(n, self).expect("index in range")).collect()
    }

    pub fn center(&self) -> Vec3 {
        let p = self.element_positions();
        let k = p.len() as f64;
        let mut c = [0.0; 3];
        for q in &p {
            for i in 0..3 {
                c[i] += q[i] / k;
            }
        }
        c
    }
}

/// Position of the `n`-th element (1-based), indexed row by row.
pub fn element_position(n: usize, geo: &SystemGeometry) -> Result<Vec3, GeometryError> {
    if n == 0 || n > geo.n() {
        return Err(GeometryError::IndexOutOfRange { index: n, n: geo.n() });
    }
    let iy = (n - 1) % geo.n_y;
    let iz = (n - 1) / geo.n_y;
    let [x, y, z] = geo.ris_reference;
    Ok([x, y + iy as f64 * geo.element_spacing, z + iz as f64 * geo.element_spacing])
}

fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Spherical-wave LoS channel between `p` and every element.
pub fn nearfield_steering(p: &Vec3, geo: &SystemGeometry) -> Result<CVector, GeometryError> {
    let lambda = geo.wavelength;
    let mut out = CVector::zeros(geo.n());
    for (i, s) in geo.element_positions().iter().enumerate() {
        let d = distance(p, s);
        if d <= 0.0 {
            return Err(GeometryError::Singular(i + 1));
        }
        out[i] = C64::from_polar(lambda / (4.0 * PI * d), -2.0 * PI * d / lambda);
    }
    Ok(out)
}

/// Planar-wave approximation of [`nearfield_steering`] about the aperture
/// center: same distance law, phase linear in the element offset.
pub fn farfield_node_channel(p: &Vec3, geo: &SystemGeometry) -> Result<CVector, GeometryError> {
    let c = geo.center();
    let d = distance(p, &c);
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDistance(d));
    }
    let u = [(p[0] - c[0]) / d, (p[1] - c[1]) / d, (p[2] - c[2]) / d];
    let lambda = geo.wavelength;
    let mut out = CVector::zeros(geo.n());
    for (i, s) in geo.element_positions().iter().enumerate() {
        let proj = u[0] * (s[0] - c[0]) + u[1] * (s[1] - c[1]) + u[2] * (s[2] - c[2]);
        out[i] = C64::from_polar(lambda / (4.0 * PI * d), -2.0 * PI * (d - proj) / lambda);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPathSet {
    pub n_paths: usize,
    pub bs_aods: Vec<f64>,
    pub ris_azimuths: Vec<f64>,
    pub ris_elevations: Vec<f64>,
    pub pathloss: f64,
}

impl FarFieldPathSet {
    /// Angles drawn uniformly on `[-pi/2, pi/2]`.
    pub fn random<R: Rng + ?Sized>(n_paths: usize, pathloss: f64, rng: &mut R) -> Self {
        let mut draw = || (0..n_paths).map(|_| rng.random_range(-FRAC_PI_2..=FRAC_PI_2)).collect::<Vec<f64>>();
        let bs_aods = draw();
        let ris_azimuths = draw();
        let ris_elevations = draw();
        Self { n_paths, bs_aods, ris_azimuths, ris_elevations, pathloss }
    }
}

/// Unit-norm half-wavelength ULA response.
pub fn bs_steering(aod: f64, m: usize) -> CVector {
    let a = 1.0 / (m as f64).sqrt();
    CVector::from_iterator(m, (0..m).map(|i| C64::from_polar(a, -PI * i as f64 * aod.sin())))
}

/// Unit-norm planar-array response for arrival direction (azimuth, elevation).
pub fn ris_steering(azimuth: f64, elevation: f64, geo: &SystemGeometry) -> CVector {
    let n = geo.n();
    let a = 1.0 / (n as f64).sqrt();
    let k = 2.0 * PI / geo.wavelength;
    let c = geo.center();
    let uy = elevation.cos() * azimuth.sin();
    let uz = elevation.sin();
    CVector::from_iterator(
        n,
        geo.element_positions().iter().map(|s| C64::from_polar(a, -k * ((s[1] - c[1]) * uy + (s[2] - c[2]) * uz))),
    )
}

/// BS-to-surface channel, `sqrt(nu M N / L) sum_l a_ris a_bs^H`.
pub fn farfield_channel(paths: &FarFieldPathSet, geo: &SystemGeometry) -> Result<CMatrix, GeometryError> {
    let l = paths.n_paths;
    if l == 0 || paths.bs_aods.len() != l || paths.ris_azimuths.len() != l || paths.ris_elevations.len() != l {
        return Err(GeometryError::Dimension("path angle lists must all have length L >= 1".into()));
    }
    let (m, n) = (geo.bs_antennas, geo.n());
    let scale = (paths.pathloss * (m * n) as f64 / l as f64).sqrt();
    let mut g = CMatrix::zeros(n, m);
    for i in 0..l {
        let ar = ris_steering(paths.ris_azimuths[i], paths.ris_elevations[i], geo);
        let ab = bs_steering(paths.bs_aods[i], m);
        g += &ar * ab.adjoint();
    }
    Ok(g * C64::new(scale, 0.0))
}

/// Large-scale attenuation `10^(c0/10) (d/d0)^-alpha`.
pub fn pathloss(d: f64, c0_db: f64, d0: f64, alpha: f64) -> Result<f64, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDistance(d));
    }
    if !(d0 > 0.0) {
        return Err(GeometryError::NonPositiveDistance(d0));
    }
    Ok(10f64.powf(c0_db / 10.0) * (d / d0).powf(-alpha))
}

/// `diag(h) G`
pub fn cascaded_channel(h: &CVector, g: &CMatrix) -> Result<CMatrix, GeometryError> {
    if h.len() != g.nrows() {
        return Err(GeometryError::Dimension(format!("h has {} entries, G has {} rows", h.len(), g.nrows())));
    }
    let mut out = g.clone();
    for (r, hv) in h.iter().enumerate() {
        for c in 0..g.ncols() {
            out[(r, c)] *= hv;
        }
    }
    Ok(out)
}

pub fn error_bound_from_rho(rho: f64, estimate: &CMatrix) -> Result<f64, GeometryError> {
    if rho < 0.0 {
        return Err(GeometryError::NegativeRho(rho));
    }
    Ok(rho * estimate.norm())
}

/// Random perturbation in the Frobenius ball of radius `delta`. With
/// probability `boundary_fraction` the sample lies on the sphere, otherwise
/// it is uniform in the ball.
pub fn sample_uncertainty<R: Rng + ?Sized>(
    delta: f64,
    rows: usize,
    cols: usize,
    boundary_fraction: f64,
    rng: &mut R,
) -> CMatrix {
    if delta <= 0.0 || rows * cols == 0 {
        return CMatrix::zeros(rows, cols);
    }
    let mut m = CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
    });
    let norm = m.norm();
    let dim = (2 * rows * cols) as f64;
    let radius = if rng.random::<f64>() < boundary_fraction {
        delta
    } else {
        delta * rng.random::<f64>().powf(1.0 / dim)
    };
    m *= C64::new(radius / norm, 0.0);
    // Guard against rounding past the sphere.
    while m.norm() > delta {
        let n = m.norm();
        m *= C64::new(delta / n * (1.0 - f64::EPSILON), 0.0);
    }
    m
}

/// Region of a node position: reflection when on the base-station side.
pub fn side_of(p: &Vec3) -> Side {
    if p[0] > 0.0 {
        Side::R
    } else {
        Side::T
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout {
    pub ir_positions: Vec<Vec3>,
    pub er_positions: Vec<Vec3>,
    pub target_positions: Vec<Vec3>,
    pub ir_sides: Vec<Side>,
    pub er_sides: Vec<Side>,
    pub target_sides: Vec<Side>,
}

impl NodeLayout {
    /// IRs alternate between regions (unless overridden), each ER is dropped
    /// near IR `e mod K` on the same side, targets alternate on a circle.
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let pl = &cfg.placement;
        let mirror = |side: Side, p: Vec3| -> Vec3 {
            match side {
                Side::R => p,
                Side::T => [-p[0], p[1], p[2]],
            }
        };
        let ir_sides: Vec<Side> = match &pl.ir_sides {
            Some(s) => s.clone(),
            None => (0..cfg.num_ir).map(|k| if k % 2 == 0 { Side::R } else { Side::T }).collect(),
        };
        let mut ir_positions = Vec::with_capacity(cfg.num_ir);
        for &side in &ir_sides {
            let d = rng.random_range(pl.ir_distance[0]..=pl.ir_distance[1]);
            let a = rng.random_range(-pl.max_angle..=pl.max_angle);
            ir_positions.push(mirror(side, [d * a.cos(), d * a.sin(), 0.0]));
        }
        let min_depth = 0.2;
        let mut er_positions = Vec::with_capacity(cfg.num_er);
        let mut er_sides = Vec::with_capacity(cfg.num_er);
        for e in 0..cfg.num_er {
            let k = e % cfg.num_ir;
            let anchor = ir_positions[k];
            let side = ir_sides[k];
            let p = loop {
                let r = rng.random_range(pl.er_offset[0]..=pl.er_offset[1]);
                let a = rng.random_range(0.0..2.0 * PI);
                let p = [anchor[0] + r * a.cos(), anchor[1] + r * a.sin(), 0.0];
                if side_of(&p) == side && p[0].abs() >= min_depth {
                    break p;
                }
            };
            er_positions.push(p);
            er_sides.push(side);
        }
        let mut target_positions = Vec::with_capacity(cfg.num_targets);
        let mut target_sides = Vec::with_capacity(cfg.num_targets);
        for t in 0..cfg.num_targets {
            let side = if t % 2 == 0 { Side::R } else { Side::T };
            let a = rng.random_range(-pl.max_angle..=pl.max_angle);
            let r = pl.target_radius;
            target_positions.push(mirror(side, [r * a.cos(), r * a.sin(), 0.0]));
            target_sides.push(side);
        }
        Self { ir_positions, er_positions, target_positions, ir_sides, er_sides, target_sides }
    }
}

/// Channels and cascaded estimates with their error radii.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub g: CMatrix,
    pub h_ir: Vec<CVector>,
    pub g_er: Vec<CVector>,
    pub h_tar: Vec<CVector>,
    pub h_hat: Vec<CMatrix>,
    pub f_hat: Vec<CMatrix>,
    pub ht_hat: Vec<CMatrix>,
    pub delta_ir: Vec<f64>,
    pub delta_er: Vec<f64>,
    pub delta_tar: Vec<f64>,
    pub ir_side: Vec<Side>,
    pub er_side: Vec<Side>,
    pub tar_side: Vec<Side>,
}

impl ChannelSet {
    /// The generated channels are taken as the estimates; every radius is
    /// `rho` times the norm of its estimate.
    pub fn from_vectors(
        g: CMatrix,
        h_ir: Vec<CVector>,
        g_er: Vec<CVector>,
        h_tar: Vec<CVector>,
        layout: &NodeLayout,
        rho: f64,
    ) -> Result<Self, GeometryError> {
        let casc = |v: &Vec<CVector>| v.iter().map(|h| cascaded_channel(h, &g)).collect::<Result<Vec<_>, _>>();
        let h_hat = casc(&h_ir)?;
        let f_hat = casc(&g_er)?;
        let ht_hat = casc(&h_tar)?;
        let radii = |v: &Vec<CMatrix>| v.iter().map(|h| error_bound_from_rho(rho, h)).collect::<Result<Vec<_>, _>>();
        Ok(Self {
            delta_ir: radii(&h_hat)?,
            delta_er: radii(&f_hat)?,
            delta_tar: radii(&ht_hat)?,
            g,
            h_ir,
            g_er,
            h_tar,
            h_hat,
            f_hat,
            ht_hat,
            ir_side: layout.ir_sides.clone(),
            er_side: layout.er_sides.clone(),
            tar_side: layout.target_sides.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.h_hat.len()
    }

    pub fn e(&self) -> usize {
        self.f_hat.len()
    }

    pub fn t(&self) -> usize {
        self.ht_hat.len()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    /// Same channels with every radius rescaled to `rho` times its estimate.
    pub fn with_rho(&self, rho: f64) -> Self {
        let mut out = self.clone();
        out.delta_ir = self.h_hat.iter().map(|h| rho * h.norm()).collect();
        out.delta_er = self.f_hat.iter().map(|h| rho * h.norm()).collect();
        out.delta_tar = self.ht_hat.iter().map(|h| rho * h.norm()).collect();
        out
    }

    /// Plain-text fixture: one header line per matrix followed by its rows,
    /// each entry written as a `re im` pair.
    pub fn to_text(&self) -> String {
        let mut s = String::from("channelset 1\n");
        let sides = |v: &[Side]| v.iter().map(|s| s.label()).collect::<Vec<_>>().join(" ");
        let reals = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "sides ir {}", sides(&self.ir_side));
        let _ = writeln!(s, "sides er {}", sides(&self.er_side));
        let _ = writeln!(s, "sides tar {}", sides(&self.tar_side));
        let _ = writeln!(s, "delta ir {}", reals(&self.delta_ir));
        let _ = writeln!(s, "delta er {}", reals(&self.delta_er));
        let _ = writeln!(s, "delta tar {}", reals(&self.delta_tar));
        write_matrix(&mut s, "G", &self.g);
        for (name, list) in [("h_ir", &self.h_ir), ("g_er", &self.g_er), ("h_tar", &self.h_tar)] {
            for v in list {
                write_matrix(&mut s, name, &CMatrix::from_column_slice(v.len(), 1, v.as_slice()));
            }
        }
        s
    }

    /// Inverse of [`ChannelSet::to_text`]; cascaded estimates are rebuilt.
    pub fn from_text(text: &str) -> Result<Self, GeometryError> {
        let err = |m: &str| GeometryError::Parse(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("channelset 1") {
            return Err(err("missing header"));
        }
        let mut sides: [Vec<Side>; 3] = Default::default();
        let mut deltas: [Vec<f64>; 3] = Default::default();
        let mut g = None;
        let mut vecs: [Vec<CVector>; 3] = Default::default();
        let slot = |name: &str| match name {
            "ir" | "h_ir" => Some(0),
            "er" | "g_er" => Some(1),
            "tar" | "h_tar" => Some(2),
            _ => None,
        };
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            match tag {
                "sides" => {
                    let i = slot(parts.next().unwrap_or_default()).ok_or_else(|| err("bad sides line"))?;
                    sides[i] = parts
                        .map(|p| match p {
                            "t" => Ok(Side::T),
                            "r" => Ok(Side::R),
                            _ => Err(err("bad side label")),
                        })
                        .collect::<Result<_, _>>()?;
                }
                "delta" => {
                    let i = slot(parts.next().unwrap_or_default()).ok_or_else(|| err("bad delta line"))?;
                    deltas[i] = parts.map(|p| p.parse::<f64>().map_err(|_| err("bad number"))).collect::<Result<_, _>>()?;
                }
                "matrix" => {
                    let name = parts.next().ok_or_else(|| err("matrix without name"))?.to_string();
                    let rows: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| err("bad rows"))?;
                    let cols: usize = parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| err("bad cols"))?;
                    let mut m = CMatrix::zeros(rows, cols);
                    for r in 0..rows {
                        let row = lines.next().ok_or_else(|| err("truncated matrix"))?;
                        let nums: Vec<f64> =
                            row.split_whitespace().map(|p| p.parse::<f64>().map_err(|_| err("bad number"))).collect::<Result<_, _>>()?;
                        if nums.len() != 2 * cols {
                            return Err(err("row has wrong length"));
                        }
                        for c in 0..cols {
                            m[(r, c)] = C64::new(nums[2 * c], nums[2 * c + 1]);
                        }
                    }
                    if name == "G" {
                        g = Some(m);
                    } else {
                        let i = slot(&name).ok_or_else(|| err("unknown matrix"))?;
                        vecs[i].push(CVector::from_column_slice(m.as_slice()));
                    }
                }
                _ => return Err(err("unknown line")),
            }
        }
        let g = g.ok_or_else(|| err("missing G"))?;
        let [h_ir, g_er, h_tar] = vecs;
        let [ir_side, er_side, tar_side] = sides;
        let layout = NodeLayout {
            ir_positions: Vec::new(),
            er_positions: Vec::new(),
            target_positions: Vec::new(),
            ir_sides: ir_side,
            er_sides: er_side,
            target_sides: tar_side,
        };
        let mut cs = ChannelSet::from_vectors(g, h_ir, g_er, h_tar, &layout, 0.0)?;
        let [di, de, dt] = deltas;
        if di.len() != cs.k() || de.len() != cs.e() || dt.len() != cs.t() {
            return Err(err("radius count does not match channel count"));
        }
        cs.delta_ir = di;
        cs.delta_er = de;
        cs.delta_tar = dt;
        Ok(cs)
    }
}

fn write_matrix(s: &mut String, name: &str, m: &CMatrix) {
    let _ = writeln!(s, "matrix {name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e} {:e}", m[(r, c)].re, m[(r, c)].im)).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

/// Everything drawn for one random deployment.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: SystemGeometry,
    pub layout: NodeLayout,
    pub paths: FarFieldPathSet,
    pub channels: ChannelSet,
}

impl Scenario {
    pub fn generate<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self, GeometryError> {
        let geometry = SystemGeometry::centered(cfg);
        let d_bs = distance(&cfg.bs_position, &geometry.center());
        let nu = pathloss(d_bs, cfg.pathloss_c0_db, cfg.pathloss_d0, cfg.pathloss_exponent)?;
        let paths = FarFieldPathSet::random(cfg.n_paths, nu, rng);
        let layout = NodeLayout::random(cfg, rng);
        let g = farfield_channel(&paths, &geometry)?;
        let nf = |ps: &[Vec3]| ps.iter().map(|p| nearfield_steering(p, &geometry)).collect::<Result<Vec<_>, _>>();
        let channels = ChannelSet::from_vectors(
            g,
            nf(&layout.ir_positions)?,
            nf(&layout.er_positions)?,
            nf(&layout.target_positions)?,
            &layout,
            cfg.rho,
        )?;
        Ok(Self { geometry, layout, paths, channels })
    }

    /// Channels a far-field-only design would assume: planar-wave node
    /// links, same BS link, same relative radii.
    pub fn farfield_channels(&self, rho: f64) -> Result<ChannelSet, GeometryError> {
        let ff = |ps: &[Vec3]| ps.iter().map(|p| farfield_node_channel(p, &self.geometry)).collect::<Result<Vec<_>, _>>();
        ChannelSet::from_vectors(
            self.channels.g.clone(),
            ff(&self.layout.ir_positions)?,
            ff(&self.layout.er_positions)?,
            ff(&self.layout.target_positions)?,
            &self.layout,
            rho,
        )
    }
}
