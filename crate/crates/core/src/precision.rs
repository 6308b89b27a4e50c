//! SAR precision matrices for each lattice layer, center-variance
//! normalization and the cached κ ↦ ω spline maps.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cholesky::SymbolicCholesky;
use crate::error::{invalid, ElkError, Result};
use crate::geometry::{LatticeLayer, MultiresBasis};
use crate::sparse::SparseMatrix;
use crate::spline::MonotoneSpline;

pub const DEFAULT_SPLINE_KNOTS: usize = 20;

pub fn kappa_from_range(rho: f64, delta: f64) -> f64 {
    debug_assert!(rho > 0.0 && delta > 0.0);
    8f64.sqrt() * delta / rho
}

pub fn range_from_kappa(kappa: f64, delta: f64) -> f64 {
    debug_assert!(kappa > 0.0 && delta > 0.0);
    8f64.sqrt() * delta / kappa
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Halving resolutions with one κ shared by every layer.
    #[serde(rename = "elk-f")]
    ElkF,
    /// Free resolutions with a κ per layer.
    #[serde(rename = "elk-t")]
    ElkT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub sigma2_s: f64,
    pub alpha: Vec<f64>,
    /// Effective ranges; a single value (the coarsest layer's) under ELK-F.
    pub rho: Vec<f64>,
    pub sigma2_n: f64,
    pub scheme: Scheme,
}

impl HyperParams {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.sigma2_s) || !pos(self.sigma2_n) {
            return Err(invalid!("variances must be positive and finite"));
        }
        if self.alpha.len() != n_layers || !self.alpha.iter().all(|&a| pos(a)) {
            return Err(invalid!("alpha must hold {n_layers} positive weights"));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid!("layer weights sum to {total}, not 1"));
        }
        let want = self.n_ranges(n_layers);
        if self.rho.len() != want || !self.rho.iter().all(|&r| pos(r)) {
            return Err(invalid!("expected {want} positive effective ranges, got {:?}", self.rho));
        }
        Ok(())
    }

    pub fn n_ranges_for(scheme: Scheme, n_layers: usize) -> usize {
        match scheme {
            Scheme::ElkF => 1,
            Scheme::ElkT => n_layers,
        }
    }

    fn n_ranges(&self, n_layers: usize) -> usize {
        Self::n_ranges_for(self.scheme, n_layers)
    }

    /// Per-layer κ values.
    pub fn kappas(&self, basis: &MultiresBasis) -> Vec<f64> {
        match self.scheme {
            Scheme::ElkF => {
                let k = kappa_from_range(self.rho[0], basis.layers[0].delta);
                vec![k; basis.n_layers()]
            }
            Scheme::ElkT => basis.layers.iter().zip(&self.rho).map(|(l, &r)| kappa_from_range(r, l.delta)).collect(),
        }
    }

    /// Per-layer effective ranges implied by the κ values.
    pub fn layer_ranges(&self, basis: &MultiresBasis) -> Vec<f64> {
        let k = self.kappas(basis);
        basis.layers.iter().zip(k).map(|(l, k)| range_from_kappa(k, l.delta)).collect()
    }
}

/// 1-D second-difference stencil: −2 on the diagonal, +1 beside it.
fn second_difference(m: usize) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * m);
    for i in 0..m {
        t.push((i, i, -2.0));
        if i + 1 < m {
            t.push((i, i + 1, 1.0));
            t.push((i + 1, i, 1.0));
        }
    }
    SparseMatrix::from_triplets(m, m, &t).expect("stencil indices are in range")
}

/// Discrete Laplacian `I_{my} ⊗ ∇²_{mx} + ∇²_{my} ⊗ I_{mx}` with x varying fastest.
pub fn lattice_laplacian(layer: &LatticeLayer) -> SparseMatrix {
    let (mx, my) = (layer.knots_x, layer.knots_y);
    let dx = SparseMatrix::kron(&SparseMatrix::identity(my), &second_difference(mx));
    let dy = SparseMatrix::kron(&second_difference(my), &SparseMatrix::identity(mx));
    dx.add(&dy, 1.0, 1.0).expect("equal shapes")
}

/// SAR matrix B = κ²I − D: diagonal 4 + κ², −1 between lattice neighbours.
pub fn sar_matrix(layer: &LatticeLayer, kappa: f64) -> SparseMatrix {
    let (mx, my) = (layer.knots_x, layer.knots_y);
    let mut t = Vec::with_capacity(5 * mx * my);
    for iy in 0..my {
        for ix in 0..mx {
            let j = iy * mx + ix;
            t.push((j, j, 4.0 + kappa * kappa));
            if ix > 0 {
                t.push((j, j - 1, -1.0));
            }
            if ix + 1 < mx {
                t.push((j, j + 1, -1.0));
            }
            if iy > 0 {
                t.push((j, j - mx, -1.0));
            }
            if iy + 1 < my {
                t.push((j, j + mx, -1.0));
            }
        }
    }
    SparseMatrix::from_triplets(mx * my, mx * my, &t).expect("stencil indices are in range")
}

/// `(S1, S2) = (D + Dᵀ, DᵀD)` for the lattice Laplacian D.
pub fn structure_matrices(layer: &LatticeLayer) -> (SparseMatrix, SparseMatrix) {
    let d = lattice_laplacian(layer);
    let dt = d.transpose();
    let s1 = d.add(&dt, 1.0, 1.0).expect("equal shapes");
    let s2 = dt.matmul(&d).expect("square");
    (s1, s2)
}

/// Layer precision `(ω/(ασ²))(κ⁴I − κ²S1 + S2)`.
pub fn layer_precision(layer: &LatticeLayer, kappa: f64, alpha: f64, sigma2_s: f64, omega: f64) -> Result<SparseMatrix> {
    LayerStructure::new(layer).precision(kappa, omega / (alpha * sigma2_s))
}

/// I, S1 and S2 stored on one shared sparsity pattern so a precision costs one pass over the values.
#[derive(Debug, Clone)]
pub struct LayerStructure {
    pattern: SparseMatrix,
    ident: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl LayerStructure {
    pub fn new(layer: &LatticeLayer) -> Self {
        let (s1, s2) = structure_matrices(layer);
        let m = layer.len();
        let eye = SparseMatrix::identity(m);
        // Union pattern; the 1.0 weights only fix structure.
        let pattern = s2.add(&s1, 1.0, 1.0).and_then(|p| p.add(&eye, 1.0, 1.0)).expect("equal shapes");
        let spread = |src: &SparseMatrix| {
            let mut out = vec![0.0; pattern.nnz()];
            for (r, c, v) in src.triplets() {
                out[pattern.find(r, c).expect("subset of union pattern")] = v;
            }
            out
        };
        LayerStructure { ident: spread(&eye), s1: spread(&s1), s2: spread(&s2), pattern }
    }

    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    /// Writes `scale·(κ⁴I − κ²S1 + S2)` values into `out` (pattern order).
    pub fn fill_values(&self, kappa: f64, scale: f64, out: &mut [f64]) {
        let (k2, k4) = (kappa * kappa, kappa.powi(4));
        for (o, ((i, a), b)) in out.iter_mut().zip(self.ident.iter().zip(&self.s1).zip(&self.s2)) {
            *o = scale * (k4 * i - k2 * a + b);
        }
    }

    pub fn precision(&self, kappa: f64, scale: f64) -> Result<SparseMatrix> {
        if !(kappa > 0.0 && scale > 0.0) {
            return Err(invalid!("layer precision needs positive κ and scale"));
        }
        let mut q = self.pattern.clone();
        self.fill_values(kappa, scale, q.values_mut());
        if q.values().iter().any(|v| !v.is_finite()) {
            return Err(ElkError::Numerical(format!("layer precision overflow at κ = {kappa}")));
        }
        Ok(q)
    }
}

/// log det B for the SAR matrix, from its closed-form eigenvalues.
pub fn sar_log_det(layer: &LatticeLayer, kappa: f64) -> f64 {
    let eig = |m: usize| -> Vec<f64> {
        (1..=m).map(|i| 4.0 * (i as f64 * PI / (2.0 * (m as f64 + 1.0))).sin().powi(2)).collect()
    };
    let (ex, ey) = (eig(layer.knots_x), eig(layer.knots_y));
    let k2 = kappa * kappa;
    ey.iter().map(|y| ex.iter().map(|x| (k2 + x + y).ln()).sum::<f64>()).sum()
}

/// Exact ω_l = a* (BᵀB)⁻¹ a*ᵀ for the center row a*: the center variance of the unscaled SAR
/// field, so that `(ω_l/(α_l σ_S²)) BᵀB` gives layer l variance α_l σ_S² at the center.
pub fn normalization_exact(basis: &MultiresBasis, l: usize, kappa: f64) -> Result<f64> {
    let layer = basis.layer(l)?;
    let b = sar_matrix(layer, kappa);
    let sym = Arc::new(SymbolicCholesky::analyze(&b)?);
    let a = basis.center_row(l)?.to_dense();
    normalization_with(&sym, layer, &a.row(0).iter().copied().collect::<Vec<_>>(), kappa)
}

fn normalization_with(sym: &Arc<SymbolicCholesky>, layer: &LatticeLayer, center: &[f64], kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(invalid!("κ must be positive"));
    }
    // B is symmetric, so a (BᵀB)⁻¹ aᵀ = ‖B⁻¹aᵀ‖².
    let f = sym.factor(&sar_matrix(layer, kappa))?;
    let x = f.solve(center)?;
    let q: f64 = x.iter().map(|v| v * v).sum();
    if !(q > 0.0) || !q.is_finite() {
        return Err(ElkError::Numerical(format!("degenerate center variance at κ = {kappa}")));
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineTable")]
pub struct NormalizationSpline {
    pub layer: usize,
    pub log_kappa_knots: Vec<f64>,
    pub log_omega_knots: Vec<f64>,
    /// κ interval covered by the fit knots.
    pub valid_range: (f64, f64),
    #[serde(skip_serializing)]
    spline: MonotoneSpline,
}

#[derive(Deserialize)]
struct SplineTable {
    layer: usize,
    log_kappa_knots: Vec<f64>,
    log_omega_knots: Vec<f64>,
    #[allow(dead_code)]
    valid_range: (f64, f64),
}

impl TryFrom<SplineTable> for NormalizationSpline {
    type Error = ElkError;

    fn try_from(t: SplineTable) -> Result<Self> {
        Self::from_knots(t.layer, t.log_kappa_knots, t.log_omega_knots)
    }
}

impl NormalizationSpline {
    pub fn from_knots(layer: usize, log_kappa: Vec<f64>, log_omega: Vec<f64>) -> Result<Self> {
        let spline = MonotoneSpline::new(&log_kappa, &log_omega)?;
        let valid_range = (log_kappa[0].exp(), log_kappa.last().unwrap().exp());
        Ok(NormalizationSpline { layer, log_kappa_knots: log_kappa, log_omega_knots: log_omega, valid_range, spline })
    }

    pub fn in_range(&self, kappa: f64) -> bool {
        kappa >= self.valid_range.0 && kappa <= self.valid_range.1
    }

    pub fn omega(&self, kappa: f64) -> f64 {
        self.spline.eval(kappa.ln()).exp()
    }
}

/// Effective-range interval over which layer `l`'s normalization spline is fit.
pub fn spline_range_interval(basis: &MultiresBasis, l: usize) -> Result<(f64, f64)> {
    let layer = basis.layer(l)?;
    let d1 = basis.layers[0].delta;
    let w = basis.domain.diameter();
    let ratio = layer.delta / d1;
    let hi = (w * ratio).max(w / (5.0 * ratio));
    Ok((layer.delta / 5.0, hi))
}

/// Fits the monotone log-log spline of κ ↦ ω_l over the layer's range interval.
pub fn build_norm_spline(basis: &MultiresBasis, l: usize, n_knots: usize) -> Result<NormalizationSpline> {
    if n_knots < 4 {
        return Err(invalid!("normalization spline needs at least 4 knots"));
    }
    let layer = basis.layer(l)?;
    let (rho_lo, rho_hi) = spline_range_interval(basis, l)?;
    let (k_lo, k_hi) = (kappa_from_range(rho_hi, layer.delta), kappa_from_range(rho_lo, layer.delta));
    let b = sar_matrix(layer, 1.0);
    let sym = Arc::new(SymbolicCholesky::analyze(&b)?);
    let center: Vec<f64> = basis.center_row(l)?.to_dense().row(0).iter().copied().collect();
    let (a, z) = (k_lo.ln(), k_hi.ln());
    let log_k: Vec<f64> = (0..n_knots).map(|i| a + (z - a) * i as f64 / (n_knots - 1) as f64).collect();
    let log_w = log_k
        .iter()
        .map(|&lk| normalization_with(&sym, layer, &center, lk.exp()).map(f64::ln))
        .collect::<Result<Vec<_>>>()?;
    NormalizationSpline::from_knots(l, log_k, log_w)
}

pub fn build_norm_splines(basis: &MultiresBasis, n_knots: usize) -> Result<Vec<NormalizationSpline>> {
    (1..=basis.n_layers()).map(|l| build_norm_spline(basis, l, n_knots)).collect()
}

/// Block-diagonal prior precision assembler for the basis coefficients.
#[derive(Debug, Clone)]
pub struct PrecisionAssembler {
    layers: Vec<LayerStructure>,
    pattern: SparseMatrix,
    /// For each layer, the position of every pattern entry inside the joint pattern.
    positions: Vec<Vec<usize>>,
}

impl PrecisionAssembler {
    pub fn new(basis: &MultiresBasis) -> Self {
        let layers: Vec<LayerStructure> = basis.layers.iter().map(LayerStructure::new).collect();
        let blocks: Vec<&SparseMatrix> = layers.iter().map(|s| &s.pattern).collect();
        let pattern = SparseMatrix::block_diag(&blocks);
        let offsets = basis.offsets();
        let positions = layers
            .iter()
            .zip(&offsets)
            .map(|(s, &off)| s.pattern.triplets().map(|(r, c, _)| pattern.find(r + off, c + off).unwrap()).collect())
            .collect();
        PrecisionAssembler { layers, pattern, positions }
    }

    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    /// Per-layer scales ω_l/(α_l σ_S²).
    pub fn layer_scales(&self, hyper: &HyperParams, kappas: &[f64], splines: &[NormalizationSpline]) -> Vec<f64> {
        kappas
            .iter()
            .zip(splines)
            .zip(&hyper.alpha)
            .map(|((&k, s), &a)| {
                if !s.in_range(k) {
                    log::debug!("κ = {k} outside layer {} spline range {:?}; extrapolating", s.layer, s.valid_range);
                }
                s.omega(k) / (a * hyper.sigma2_s)
            })
            .collect()
    }

    /// Writes the joint precision values into `out` (joint pattern order).
    pub fn fill(&self, kappas: &[f64], scales: &[f64], out: &mut [f64]) -> Result<()> {
        let mut buf = Vec::new();
        for (l, s) in self.layers.iter().enumerate() {
            buf.resize(s.pattern.nnz(), 0.0);
            s.fill_values(kappas[l], scales[l], &mut buf);
            for (&p, &v) in self.positions[l].iter().zip(&buf) {
                out[p] = v;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ElkError::Numerical("non-finite prior precision".into()));
        }
        Ok(())
    }

    pub fn assemble(&self, kappas: &[f64], scales: &[f64]) -> Result<SparseMatrix> {
        let mut q = self.pattern.clone();
        self.fill(kappas, scales, q.values_mut())?;
        Ok(q)
    }
}

/// Joint block-diagonal precision of all layers' coefficients.
pub fn joint_precision(basis: &MultiresBasis, hyper: &HyperParams, splines: &[NormalizationSpline]) -> Result<SparseMatrix> {
    hyper.validate(basis.n_layers())?;
    if splines.len() != basis.n_layers() {
        return Err(invalid!("need one normalization spline per layer"));
    }
    let asm = PrecisionAssembler::new(basis);
    let kappas = hyper.kappas(basis);
    let scales = asm.layer_scales(hyper, &kappas, splines);
    asm.assemble(&kappas, &scales)
}

/// log det of the joint precision in closed form.
pub fn joint_log_det(basis: &MultiresBasis, kappas: &[f64], scales: &[f64]) -> f64 {
    basis
        .layers
        .iter()
        .zip(kappas)
        .zip(scales)
        .map(|((layer, &k), &s)| layer.len() as f64 * s.ln() + 2.0 * sar_log_det(layer, k))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cholesky::cholesky;
    use crate::geometry::{build_layer, Domain};

    fn grid_layer(mx: usize, my: usize) -> LatticeLayer {
        LatticeLayer { index: 1, delta: 1.0, buffer_cells: 0, knots_x: mx, knots_y: my, origin: [0.0, 0.0] }
    }

    #[test]
    fn kappa_range_round_trip() {
        assert!((kappa_from_range(8f64.sqrt() * 0.3, 0.3) - 1.0).abs() < 1e-15);
        assert!((kappa_from_range(0.4, 0.154) - 1.088_944_442_2).abs() < 1e-9);
        for &(r, d) in &[(0.4, 0.154), (3.0, 0.01), (1e-3, 2.0)] {
            assert!((range_from_kappa(kappa_from_range(r, d), d) - r).abs() < 1e-14 * r.max(1.0));
        }
    }

    #[test]
    fn sar_small_lattices() {
        let b = sar_matrix(&grid_layer(3, 3), 1.0);
        for j in 0..9 {
            assert_eq!(b.get(j, j), 5.0);
        }
        assert_eq!(b.col(4).0.len(), 5);
        assert_eq!(b.col(0).0.len(), 3);
        let b = sar_matrix(&grid_layer(2, 1), 2.0);
        assert_eq!(b.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[8.0, -1.0, -1.0, 8.0]));
        assert!(b.is_symmetric(0.0));
    }

    #[test]
    fn laplacian_matches_sar_and_hand_expansion() {
        let layer = grid_layer(4, 5);
        let d = lattice_laplacian(&layer);
        for &k in &[0.3, 1.0, 2.7] {
            let b = SparseMatrix::identity(20).add(&d, k * k, -1.0).unwrap();
            assert!(b.max_abs_diff(&sar_matrix(&layer, k)) < 1e-15);
        }
        let d = lattice_laplacian(&grid_layer(2, 2)).to_dense();
        let expect = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[-4.0, 1.0, 1.0, 0.0, 1.0, -4.0, 0.0, 1.0, 1.0, 0.0, -4.0, 1.0, 0.0, 1.0, 1.0, -4.0],
        );
        assert_eq!(d, expect);
    }

    #[test]
    fn structure_matrix_properties() {
        let (s1, s2) = structure_matrices(&grid_layer(4, 5));
        assert!(s1.is_symmetric(0.0));
        assert!(s2.is_symmetric(1e-15));
        let eig = s2.to_dense().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-10));
    }

    #[test]
    fn layer_precision_two_knot_case() {
        // B = [[5,-1],[-1,5]] on a 2×1 lattice, so BᵀB = [[26,-10],[-10,26]].
        let q = layer_precision(&grid_layer(2, 1), 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(q.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[26.0, -10.0, -10.0, 26.0]));
        let half = layer_precision(&grid_layer(2, 1), 1.0, 1.0, 2.0, 1.0).unwrap();
        assert!(half.max_abs_diff(&q.scaled(0.5)) < 1e-15);
    }

    #[test]
    fn sar_log_det_matches_factorization() {
        for &(mx, my, k) in &[(3, 3, 1.0), (6, 7, 0.2), (5, 2, 3.0)] {
            let layer = grid_layer(mx, my);
            let f = cholesky(&sar_matrix(&layer, k)).unwrap();
            assert!((f.log_det() - sar_log_det(&layer, k)).abs() < 1e-10);
        }
    }

    fn small_basis() -> MultiresBasis {
        MultiresBasis::from_knot_counts(Domain::unit_square(), &[5, 9], 2).unwrap()
    }

    #[test]
    fn exact_normalization_definition() {
        let basis = small_basis();
        for l in 1..=2 {
            let k = 0.8;
            let omega = normalization_exact(&basis, l, k).unwrap();
            let layer = basis.layer(l).unwrap();
            let btb = sar_matrix(layer, k).gram();
            let a: Vec<f64> = basis.center_row(l).unwrap().to_dense().row(0).iter().copied().collect();
            let f = cholesky(&btb).unwrap();
            assert!((omega / f.inverse_quadratic(&a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_decreases_with_kappa() {
        let basis = small_basis();
        for l in 1..=2 {
            let (lo, hi) = spline_range_interval(&basis, l).unwrap();
            let delta = basis.layers[l - 1].delta;
            let (k0, k1) = (kappa_from_range(hi, delta), kappa_from_range(lo, delta));
            let mut prev = f64::INFINITY;
            for i in 0..=40 {
                let k = k0 * (k1 / k0).powf(i as f64 / 40.0);
                let w = normalization_exact(&basis, l, k).unwrap();
                assert!(w < prev);
                prev = w;
            }
        }
    }

    #[test]
    fn spline_reproduces_knots_and_midpoints() {
        let basis = small_basis();
        for l in 1..=2 {
            let s = build_norm_spline(&basis, l, DEFAULT_SPLINE_KNOTS).unwrap();
            for (lk, lw) in s.log_kappa_knots.iter().zip(&s.log_omega_knots) {
                assert!((s.omega(lk.exp()) / lw.exp() - 1.0).abs() < 1e-10);
            }
            for w in s.log_kappa_knots.windows(2) {
                let k = (0.5 * (w[0] + w[1])).exp();
                let exact = normalization_exact(&basis, l, k).unwrap();
                assert!((s.omega(k) / exact - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn exact_normalization_sets_center_variance() {
        let basis = small_basis();
        let hyper = HyperParams { sigma2_s: 1.7, alpha: vec![0.3, 0.7], rho: vec![1.1, 0.4], sigma2_n: 0.1, scheme: Scheme::ElkT };
        let kappas = hyper.kappas(&basis);
        let mut var = 0.0;
        for l in 1..=2 {
            let layer = basis.layer(l).unwrap();
            let omega = normalization_exact(&basis, l, kappas[l - 1]).unwrap();
            let q = layer_precision(layer, kappas[l - 1], hyper.alpha[l - 1], hyper.sigma2_s, omega).unwrap().to_dense();
            let a = basis.center_row(l).unwrap().to_dense();
            var += (&a * q.try_inverse().unwrap() * a.transpose())[(0, 0)];
        }
        assert!((var - hyper.sigma2_s).abs() < 1e-8, "{var}");
    }

    #[test]
    fn elk_f_and_matching_elk_t_agree() {
        let basis = small_basis();
        let splines = build_norm_splines(&basis, 12).unwrap();
        let f = HyperParams { sigma2_s: 1.3, alpha: vec![0.4, 0.6], rho: vec![0.9], sigma2_n: 0.1, scheme: Scheme::ElkF };
        let t = HyperParams { rho: f.layer_ranges(&basis), scheme: Scheme::ElkT, ..f.clone() };
        let qf = joint_precision(&basis, &f, &splines).unwrap();
        let qt = joint_precision(&basis, &t, &splines).unwrap();
        assert!(qf.max_abs_diff(&qt) < 1e-12 * qf.values().iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }

    #[test]
    fn joint_log_det_matches_factorization() {
        let basis = small_basis();
        let asm = PrecisionAssembler::new(&basis);
        let (k, s) = (vec![0.7, 2.1], vec![3.0, 0.25]);
        let q = asm.assemble(&k, &s).unwrap();
        let f = cholesky(&q).unwrap();
        assert!((f.log_det() - joint_log_det(&basis, &k, &s)).abs() < 1e-8);
        let off = basis.offsets();
        for (r, c, _) in q.triplets() {
            assert_eq!(r >= off[1], c >= off[1]);
        }
    }

    #[test]
    fn hyper_validation() {
        let h = HyperParams { sigma2_s: 1.0, alpha: vec![0.5, 0.5], rho: vec![0.3, 0.1], sigma2_n: 0.1, scheme: Scheme::ElkT };
        assert!(h.validate(2).is_ok());
        assert!(HyperParams { alpha: vec![0.5, 0.6], ..h.clone() }.validate(2).is_err());
        assert!(HyperParams { scheme: Scheme::ElkF, ..h.clone() }.validate(2).is_err());
        assert!(HyperParams { sigma2_s: 0.0, ..h }.validate(2).is_err());
        let _ = build_layer(&Domain::unit_square(), 0.5, 0).unwrap();
    }
}
