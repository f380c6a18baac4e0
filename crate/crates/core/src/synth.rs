//! Synthetic patches with analytically known dimension and curvature.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with
//! `ChaCha8Rng::seed_from_u64`. Two independent streams are used: stream 0 of
//! `seed` draws the intrinsic samples and noise, stream 1 of `embed_seed`
//! (defaulting to `seed`) draws the embedding. Uniform variates are
//! `(next_u64() >> 11) * 2^-53`; normal variates use the cosine branch of
//! Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`. Random orthogonal maps
//! are the Q factor of a Gaussian matrix (filled column by column) with the
//! signs of R's diagonal folded in.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::curvature::{canonical_count, feature_count, index_pairs, RiemannTensor};
use crate::error::{Error, Result};
use crate::patch::{Patch, PatchMeta};

/// Portable seeded generator used for all synthetic data.
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededRng(rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Uniform direction on the unit sphere in `R^dim`.
    pub fn direction(&mut self, dim: usize) -> DVector<f64> {
        loop {
            let v = DVector::from_fn(dim, |_, _| self.normal());
            let n = v.norm();
            if n > 1e-12 {
                return v / n;
            }
        }
    }

    /// Uniform point in the ball of radius `radius` in `R^dim`.
    pub fn in_ball(&mut self, dim: usize, radius: f64) -> DVector<f64> {
        let dir = self.direction(dim);
        dir * (radius * libm::pow(self.uniform(), 1.0 / dim as f64))
    }

    /// Haar-distributed orthogonal `dim x dim` matrix.
    pub fn orthogonal(&mut self, dim: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            for r in 0..dim {
                g[(r, c)] = self.normal();
            }
        }
        let qr = g.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for c in 0..dim {
            if r[(c, c)] < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    Flat,
    Sphere { radius: f64 },
    /// Normal components `f^a(u) = 1/2 u^T H^a u`.
    Graph { hessians: Vec<DMatrix<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    /// Patch radius (geodesic for spheres).
    pub patch_radius: f64,
    pub samples: usize,
    pub seed: u64,
    pub embed_seed: Option<u64>,
    /// Standard deviation of isotropic Gaussian noise added to every coordinate.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, intrinsic_dim: usize, ambient_dim: usize) -> Self {
        SynthSpec {
            kind,
            intrinsic_dim,
            ambient_dim,
            patch_radius: 1.0,
            samples: 500,
            seed: 0,
            embed_seed: None,
            noise: 0.0,
        }
    }

    pub fn radius(mut self, rho: f64) -> Self {
        self.patch_radius = rho;
        self
    }

    pub fn samples(mut self, n: usize) -> Self {
        self.samples = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn embed_seed(mut self, seed: u64) -> Self {
        self.embed_seed = Some(seed);
        self
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (d, dim) = (self.intrinsic_dim, self.ambient_dim);
        if d == 0 || d >= dim {
            return Err(Error::Parameter(format!(
                "need 1 <= d < D, got d = {d}, D = {dim}"
            )));
        }
        let needed = feature_count(d);
        if self.samples < needed {
            return Err(Error::InsufficientSamples {
                needed,
                got: self.samples,
            });
        }
        if !(self.patch_radius > 0.0 && self.patch_radius.is_finite()) {
            return Err(Error::Parameter("patch radius must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter("noise must be non-negative".into()));
        }
        match &self.kind {
            SynthKind::Flat => {}
            SynthKind::Sphere { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::Parameter("sphere radius must be positive".into()));
                }
                if self.patch_radius >= core::f64::consts::FRAC_PI_2 * radius {
                    return Err(Error::Parameter(format!(
                        "patch radius {} too large for sphere of radius {radius} (must be < pi r / 2)",
                        self.patch_radius
                    )));
                }
            }
            SynthKind::Graph { hessians } => {
                if d + hessians.len() > dim {
                    return Err(Error::Parameter(format!(
                        "{} normal components do not fit beside d = {d} in D = {dim}",
                        hessians.len()
                    )));
                }
                for h in hessians {
                    if h.shape() != (d, d) || (h - h.transpose()).amax() > 1e-12 {
                        return Err(Error::Parameter(format!(
                            "graph Hessians must be symmetric {d}x{d}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exact curvature of the generator at the base point, in the generator's own
/// tangent basis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvatureOracle {
    pub dimension: usize,
    /// Canonical Riemann components in storage order.
    pub riemann: Vec<f64>,
    /// Sectional curvature of each coordinate plane `(i, j)`, `i < j`.
    pub sectional: Vec<f64>,
    /// Sphere centre in ambient coordinates, when the generator is a sphere.
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthPatch {
    pub patch: Patch,
    pub oracle: CurvatureOracle,
    /// Orthogonal map applied to the generator coordinates.
    pub rotation: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl SynthPatch {
    /// The generator's tangent basis in ambient coordinates (columns).
    pub fn tangent_basis(&self) -> DMatrix<f64> {
        self.rotation.columns(0, self.oracle.dimension).into_owned()
    }

    /// Ambient directions that carry the generator's normal components.
    pub fn normal_basis(&self, count: usize) -> DMatrix<f64> {
        self.rotation
            .columns(self.oracle.dimension, count)
            .into_owned()
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthPatch> {
    match spec.kind {
        SynthKind::Flat => sample_flat(spec),
        SynthKind::Sphere { .. } => sample_sphere(spec),
        SynthKind::Graph { .. } => sample_graph(spec),
    }
}

/// Uniform samples of a flat `d`-ball; the base point (row 0) is its centre.
pub fn sample_flat(spec: &SynthSpec) -> Result<SynthPatch> {
    if spec.kind != SynthKind::Flat {
        return Err(Error::Parameter("spec is not flat".into()));
    }
    spec.validate()?;
    let d = spec.intrinsic_dim;
    let local = sample_local(spec, |rng, _| {
        let mut p = vec![0.0; d];
        p.copy_from_slice(rng.in_ball(d, spec.patch_radius).as_slice());
        p
    });
    let oracle = oracle_from_hessians(d, &[]);
    embed(spec, local, oracle, "flat", None)
}

/// Samples within geodesic radius `rho` of a base point on `S^d(r)` via the
/// exponential map, `p = c + r (cos(t/r) n + sin(t/r) w)`.
pub fn sample_sphere(spec: &SynthSpec) -> Result<SynthPatch> {
    let SynthKind::Sphere { radius } = spec.kind else {
        return Err(Error::Parameter("spec is not a sphere".into()));
    };
    spec.validate()?;
    if spec.ambient_dim < spec.intrinsic_dim + 1 {
        return Err(Error::Parameter("sphere needs D >= d + 1".into()));
    }
    let d = spec.intrinsic_dim;
    // generator frame: base at the origin, centre at -r e_{d+1}
    let local = sample_local(spec, |rng, _| {
        let w = rng.direction(d);
        let t = spec.patch_radius * libm::pow(rng.uniform(), 1.0 / d as f64);
        let angle = t / radius;
        let mut p = vec![0.0; d + 1];
        for i in 0..d {
            p[i] = radius * libm::sin(angle) * w[i];
        }
        p[d] = radius * (libm::cos(angle) - 1.0);
        p
    });
    let h = DMatrix::identity(d, d) / radius;
    let oracle = oracle_from_hessians(d, &[h]);
    let mut center = vec![0.0; d + 1];
    center[d] = -radius;
    embed(spec, local, oracle, "sphere", Some(center))
}

/// Graph patch `(u, 1/2 u^T H^1 u, ..)` over a `d`-ball of radius `rho`.
pub fn sample_graph(spec: &SynthSpec) -> Result<SynthPatch> {
    let SynthKind::Graph { hessians } = &spec.kind else {
        return Err(Error::Parameter("spec is not a graph".into()));
    };
    spec.validate()?;
    let d = spec.intrinsic_dim;
    let local = sample_local(spec, |rng, _| {
        let u = rng.in_ball(d, spec.patch_radius);
        let mut p: Vec<f64> = u.iter().copied().collect();
        p.extend(hessians.iter().map(|h| 0.5 * u.dot(&(h * &u))));
        p
    });
    let oracle = oracle_from_hessians(d, hessians);
    embed(spec, local, oracle, "graph", None)
}

/// Row 0 is the generator's base point (all zeros); rows 1.. come from `draw`.
fn sample_local(
    spec: &SynthSpec,
    mut draw: impl FnMut(&mut SeededRng, usize) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(spec.seed, 0);
    let mut rows = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        rows.push(if i == 0 { Vec::new() } else { draw(&mut rng, i) });
    }
    if spec.noise > 0.0 {
        for row in rows.iter_mut() {
            row.resize(spec.ambient_dim, 0.0);
            for v in row.iter_mut() {
                *v += spec.noise * rng.normal();
            }
        }
    }
    rows
}

fn embed(
    spec: &SynthSpec,
    local: Vec<Vec<f64>>,
    oracle: CurvatureOracle,
    label: &str,
    center_local: Option<Vec<f64>>,
) -> Result<SynthPatch> {
    let dim = spec.ambient_dim;
    let mut rng = SeededRng::new(spec.embed_seed.unwrap_or(spec.seed), 1);
    let rotation = rng.orthogonal(dim);
    let offset = DVector::from_fn(dim, |_, _| 2.0 * rng.uniform() - 1.0);
    let lift = |row: &[f64]| {
        let mut v = DVector::zeros(dim);
        v.rows_mut(0, row.len()).copy_from_slice(row);
        &rotation * v + &offset
    };
    let n = local.len();
    let mut points = DMatrix::zeros(n, dim);
    for (i, row) in local.iter().enumerate() {
        points.row_mut(i).copy_from(&lift(row).transpose());
    }
    let center = center_local.map(|c| lift(&c).iter().copied().collect());
    let meta = PatchMeta {
        label: label.into(),
        source: format!("synth seed={} embed_seed={}", spec.seed, spec.embed_seed.unwrap_or(spec.seed)),
        ..PatchMeta::default()
    };
    let patch = Patch::new(points, 0, meta)?;
    Ok(SynthPatch {
        patch,
        oracle: CurvatureOracle { center, ..oracle },
        rotation,
        offset,
    })
}

/// Full-tensor evaluation of the flat-ambient Gauss formula, then canonical selection.
fn oracle_from_hessians(d: usize, hessians: &[DMatrix<f64>]) -> CurvatureOracle {
    let full = |i: usize, l: usize, j: usize, k: usize| -> f64 {
        hessians
            .iter()
            .map(|h| h[(i, k)] * h[(l, j)] - h[(i, j)] * h[(l, k)])
            .sum()
    };
    let riemann: Vec<f64> = RiemannTensor::canonical_indices(d)
        .into_iter()
        .map(|[i, l, j, k]| full(i, l, j, k))
        .collect();
    debug_assert_eq!(riemann.len(), canonical_count(d));
    let sectional = index_pairs(d).into_iter().map(|(i, j)| full(i, j, j, i)).collect();
    CurvatureOracle {
        dimension: d,
        riemann,
        sectional,
        center: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_is_orthogonal() {
        let q = SeededRng::new(3, 1).orthogonal(7);
        let err = (q.transpose() * &q - DMatrix::identity(7, 7)).amax();
        assert!(err < 1e-12);
    }

    #[test]
    fn uniform_in_range_and_deterministic() {
        let mut a = SeededRng::new(11, 0);
        let mut b = SeededRng::new(11, 0);
        for _ in 0..1000 {
            let (x, y) = (a.uniform(), b.uniform());
            assert_eq!(x.to_bits(), y.to_bits());
            assert!((0.0..1.0).contains(&x));
        }
        assert_ne!(SeededRng::new(11, 1).uniform(), SeededRng::new(11, 0).uniform());
    }

    #[test]
    fn sphere_oracles() {
        let s = sample_sphere(
            &SynthSpec::new(SynthKind::Sphere { radius: 2.0 }, 2, 5).radius(0.2).samples(50),
        )
        .unwrap();
        assert_eq!(s.oracle.sectional, vec![0.25]);
        let center = DVector::from_vec(s.oracle.center.clone().unwrap());
        let base = s.patch.base();
        assert!(((base - &center).norm() - 2.0).abs() < 1e-12);
        for row in s.patch.points().row_iter() {
            assert!(((row.transpose() - &center).norm() - 2.0).abs() < 1e-12);
        }

        let s3 = sample_sphere(
            &SynthSpec::new(SynthKind::Sphere { radius: 1.0 }, 3, 6).radius(0.1).samples(50),
        )
        .unwrap();
        assert_eq!(s3.oracle.sectional, vec![1.0; 3]);
    }

    #[test]
    fn graph_oracles() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let g = SynthSpec::new(SynthKind::Graph { hessians: vec![h] }, 2, 4);
        assert_eq!(sample_graph(&g).unwrap().oracle.sectional, vec![6.0]);

        let two = SynthSpec::new(
            SynthKind::Graph {
                hessians: vec![
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
                ],
            },
            2,
            5,
        );
        assert_eq!(sample_graph(&two).unwrap().oracle.sectional, vec![0.0]);

        let zero = SynthSpec::new(SynthKind::Graph { hessians: vec![DMatrix::zeros(2, 2)] }, 2, 4);
        assert_eq!(sample_graph(&zero).unwrap().oracle.riemann, vec![0.0]);
    }

    #[test]
    fn flat_base_is_centre_and_determinism() {
        let spec = SynthSpec::new(SynthKind::Flat, 3, 10).seed(5);
        let a = sample_flat(&spec).unwrap();
        let b = sample_flat(&spec).unwrap();
        assert_eq!(a.patch, b.patch);
        assert_eq!(a.patch.base(), a.offset);
        let c = sample_flat(&spec.clone().seed(6)).unwrap();
        assert_ne!(a.patch, c.patch);
    }

    #[test]
    fn embed_seed_changes_only_embedding() {
        let spec = SynthSpec::new(SynthKind::Sphere { radius: 1.0 }, 2, 6).radius(0.1).seed(1);
        let a = sample_sphere(&spec).unwrap();
        let b = sample_sphere(&spec.clone().embed_seed(99)).unwrap();
        let pa = a.patch.relative_to_base();
        let pb = b.patch.relative_to_base();
        // same intrinsic samples: pairwise geometry agrees
        let ga = &pa * pa.transpose();
        let gb = &pb * pb.transpose();
        assert!((ga - gb).amax() < 1e-12);
        assert!((a.rotation - b.rotation).amax() > 1e-3);
    }

    #[test]
    fn invalid_specs() {
        let too_big = SynthSpec::new(SynthKind::Sphere { radius: 1.0 }, 2, 6).radius(1.6);
        assert!(sample_sphere(&too_big).is_err());
        assert!(sample_flat(&SynthSpec::new(SynthKind::Flat, 3, 3)).is_err());
        assert!(sample_flat(&SynthSpec::new(SynthKind::Flat, 3, 5).samples(5)).is_err());
        assert!(sample_flat(&SynthSpec::new(SynthKind::Flat, 3, 5).radius(0.0)).is_err());
        let wide = SynthSpec::new(
            SynthKind::Graph { hessians: vec![DMatrix::identity(2, 2); 3] },
            2,
            4,
        );
        assert!(sample_graph(&wide).is_err());
    }
}
