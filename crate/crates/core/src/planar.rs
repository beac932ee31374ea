//! Weakly coupled Schrodinger operators -Delta - d_u^2 + lambda V in the
//! planar layer R^2 x (-a, a): transverse mode projections of the potential
//! and the two-term weak-coupling expansion of w(lambda).

use crate::error::{Error, Result};
use crate::grid::{Field2, Grid2D};
use crate::kernels::{gauss_legendre_on, KernelKind, KernelTable, Route, WeightedCorrelation};
use crate::transverse::TransverseBasis;
use std::f64::consts::PI;
use std::sync::Arc;

/// A potential on R^2 x (-a, a): analytic callback or sampled on a grid
/// times a fixed set of transverse nodes.
#[derive(Clone)]
pub enum PotentialKind {
    Analytic(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
    Sampled { grid: Grid2D, u_nodes: Vec<f64>, fields: Vec<Field2> },
}

impl std::fmt::Debug for PotentialKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PotentialKind::Analytic(_) => write!(f, "PotentialKind::Analytic"),
            PotentialKind::Sampled { grid, u_nodes, .. } => f
                .debug_struct("PotentialKind::Sampled")
                .field("grid", grid)
                .field("u_nodes", &u_nodes.len())
                .finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// Declared decay exponent delta > 0 of the weight (1 + |x|^delta).
    pub delta: f64,
    /// Essentially bounded (true by construction for all registry potentials).
    pub bounded: bool,
}

impl PotentialSpec {
    pub fn analytic(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static, delta: f64) -> Self {
        Self { kind: PotentialKind::Analytic(Arc::new(f)), delta, bounded: true }
    }

    /// gamma = min(1, delta/2): the reported order of the error term.
    pub fn gamma_order(&self) -> f64 {
        (self.delta / 2.0).min(1.0)
    }

    /// Attractive Gaussian well -depth exp(-r^2/(2 width^2)), u-independent.
    pub fn gaussian_well(depth: f64, width: f64) -> Self {
        Self::analytic(
            move |x, y, _u| -depth * (-(x * x + y * y) / (2.0 * width * width)).exp(),
            8.0,
        )
    }

    /// Repulsive Gaussian +height exp(-r^2/(2 width^2)), u-independent.
    pub fn gaussian_barrier(height: f64, width: f64) -> Self {
        Self::analytic(
            move |x, y, _u| height * (-(x * x + y * y) / (2.0 * width * width)).exp(),
            8.0,
        )
    }

    /// Compactly supported C^1 bump -depth cos^2(pi r / (2 radius)).
    pub fn compact_bump(depth: f64, radius: f64) -> Self {
        Self::analytic(
            move |x, y, _u| {
                let r = x.hypot(y);
                if r >= radius {
                    0.0
                } else {
                    let c = (PI * r / (2.0 * radius)).cos();
                    -depth * c * c
                }
            },
            8.0,
        )
    }

    /// u-odd dipole -strength exp(-r^2/(2 width^2)) u / a: V_11 vanishes
    /// identically, exercising the zero-mean branch.
    pub fn dipole_uv(strength: f64, width: f64, a: f64) -> Self {
        Self::analytic(
            move |x, y, u| -strength * (-(x * x + y * y) / (2.0 * width * width)).exp() * u / a,
            8.0,
        )
    }
}

/// Transverse projections V_jj'(x) = int chi_j V chi_j' du for j, j' <= N.
#[derive(Debug, Clone)]
pub struct ModeProjectedPotential {
    pub a: f64,
    pub n_modes: usize,
    pub grid: Grid2D,
    /// Row-major (j-1) * n_modes + (j'-1).
    pub fields: Vec<Field2>,
    pub symmetric: bool,
}

impl ModeProjectedPotential {
    #[inline]
    pub fn at(&self, j: usize, jp: usize) -> &Field2 {
        &self.fields[(j - 1) * self.n_modes + (jp - 1)]
    }

    /// True when the field is numerically zero (skippable coupling).
    pub fn is_zero(&self, j: usize, jp: usize) -> bool {
        self.at(j, jp).max_abs() == 0.0
    }
}

/// Project a potential onto the transverse basis with nu-node Gauss-Legendre
/// quadrature in u. Requires nu >= 2 N to resolve the oscillation of chi_N.
pub fn project_potential(
    spec: &PotentialSpec,
    basis: &TransverseBasis,
    grid: Grid2D,
    nu: usize,
) -> Result<ModeProjectedPotential> {
    let n = basis.n_modes;
    if nu < 2 * n {
        return Err(Error::Validation(format!(
            "transverse quadrature order {nu} < 2 N = {}",
            2 * n
        )));
    }
    let (u_nodes, u_weights, slices): (Vec<f64>, Vec<f64>, Vec<Field2>) = match &spec.kind {
        PotentialKind::Analytic(f) => {
            let (un, uw) = gauss_legendre_on(-basis.a, basis.a, nu);
            let slices =
                un.iter().map(|&u| Field2::from_fn(grid, |x, y| f(x, y, u))).collect::<Vec<_>>();
            (un, uw, slices)
        }
        PotentialKind::Sampled { grid: pg, u_nodes, fields } => {
            if *pg != grid {
                return Err(Error::InvalidGrid("sampled potential grid mismatch".into()));
            }
            let (un, uw) = gauss_legendre_on(-basis.a, basis.a, u_nodes.len());
            for (have, want) in u_nodes.iter().zip(un.iter()) {
                if (have - want).abs() > 1e-12 * basis.a {
                    return Err(Error::Validation(
                        "sampled potential u-nodes must be the Gauss-Legendre nodes on (-a, a)"
                            .into(),
                    ));
                }
            }
            (u_nodes.clone(), uw, fields.clone())
        }
    };
    for s in &slices {
        s.check_finite("potential slice")?;
    }

    let chi: Vec<Vec<f64>> =
        (1..=n).map(|j| u_nodes.iter().map(|&u| basis.chi(j, u)).collect()).collect();

    let vmax = slices.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    let mut fields = vec![Field2::zeros(grid); n * n];
    for j in 1..=n {
        for jp in j..=n {
            let mut acc = Field2::zeros(grid);
            for (iu, slice) in slices.iter().enumerate() {
                let w = u_weights[iu] * chi[j - 1][iu] * chi[jp - 1][iu];
                if w == 0.0 {
                    continue;
                }
                for p in 0..grid.len() {
                    acc.values[p] += w * slice.values[p];
                }
            }
            // Snap couplings that sit at the quadrature's own orthogonality
            // defect to exact zero so downstream block loops can skip them.
            let kron = if j == jp { 1.0 } else { 0.0 };
            let defect: f64 = u_weights
                .iter()
                .enumerate()
                .map(|(iu, &w)| w * chi[j - 1][iu] * chi[jp - 1][iu])
                .sum::<f64>()
                - kron;
            if acc.max_abs() <= (4.0 * defect.abs() + 1e-14) * vmax {
                acc = Field2::zeros(grid);
            }
            fields[(j - 1) * n + (jp - 1)] = acc.clone();
            fields[(jp - 1) * n + (j - 1)] = acc;
        }
    }
    Ok(ModeProjectedPotential { a: basis.a, n_modes: n, grid, fields, symmetric: true })
}

/// Existence verdict of the weak-coupling bound state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// int V_11 < 0: first-order binding.
    Exists,
    /// int V_11 = 0 with V not identically zero: second-order binding.
    ExistsZeroMean,
    /// int V_11 > 0: no weak-coupling bound state.
    None,
}

#[derive(Debug, Clone)]
pub struct ExpansionResult {
    /// w(lambda) through second order.
    pub w: f64,
    /// (lambda/2pi) int V_11.
    pub first_order: f64,
    /// iint V_11 (gamma + ln(|x-x'|/2)) V_11.
    pub log_term: f64,
    /// sum_{j>=2} iint V_1j K0(k_j |x-x'|) V_j1 (enters with a minus sign).
    pub mode_sum: f64,
    /// Highest mode actually included in the sum.
    pub modes_used: usize,
    pub int_v11: f64,
    pub verdict: Verdict,
}

/// Relative zero threshold for the mean of V_11.
const ZERO_MEAN_TOL: f64 = 1e-10;

/// Two-term weak-coupling expansion
/// w = (l/2pi) int V_11 + (l/2pi)^2 [ iint V_11 (gamma + ln(r/2)) V_11
///     - sum_{j>=2} iint V_1j K0(k_j(kappa_1) r) V_j1 ].
/// The bound state exists iff int V_11 <= 0 (and V not identically 0).
pub fn expansion_w(
    lambda: f64,
    proj: &ModeProjectedPotential,
    basis: &TransverseBasis,
    route: Route,
) -> Result<ExpansionResult> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let v11 = proj.at(1, 1);
    let int_v11 = v11.integrate();

    // Renormalized log kernel: table holds -(gamma + ln(r/2)).
    let log_table = KernelTable::build(&proj.grid, KernelKind::LogPlusSmooth { k1: 0.0 })?;
    let corr11 = WeightedCorrelation::compute(v11, v11, route);
    let log_term = -corr11.contract(&log_table);

    // Higher-mode sum; stop once the terms are negligible and j >= 8.
    let mut mode_sum = 0.0;
    let mut modes_used = 0;
    for j in 2..=basis.n_modes {
        if proj.is_zero(1, j) {
            continue;
        }
        let k = basis.kj_sq(j).sqrt();
        let table = KernelTable::build(&proj.grid, KernelKind::BesselK0 { k })?;
        let corr = WeightedCorrelation::compute(proj.at(1, j), proj.at(j, 1), route);
        let term = corr.contract(&table);
        mode_sum += term;
        modes_used = j;
        if j >= 8 && term.abs() < 1e-6 * mode_sum.abs() {
            break;
        }
    }

    let first_order = lambda / (2.0 * PI) * int_v11;
    let pref = (lambda / (2.0 * PI)) * (lambda / (2.0 * PI));
    let w = first_order + pref * (log_term - mode_sum);

    let scale: f64 = v11.max_abs() * proj.grid.hx * proj.grid.hy * proj.grid.len() as f64;
    let v_nonzero = proj.fields.iter().any(|f| f.max_abs() > 0.0);
    let verdict = if int_v11 > ZERO_MEAN_TOL * scale.max(1e-300) {
        Verdict::None
    } else if int_v11.abs() <= ZERO_MEAN_TOL * scale.max(1e-300) {
        if v_nonzero {
            Verdict::ExistsZeroMean
        } else {
            Verdict::None
        }
    } else {
        Verdict::Exists
    };

    Ok(ExpansionResult { w, first_order, log_term, mode_sum, modes_used, int_v11, verdict })
}

/// Frequency-domain evaluation of (2pi)^2 int |V^_{1j}(w)|^2/(|w|^2+k^2) dw,
/// pinned so it equals iint V_1j K0(k|x-x'|) V_j1 by direct quadrature.
pub fn fourier_mode_term(v1j: &Field2, k: f64, pad_factor: usize) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("k must be positive, got {k}")));
    }
    let (density, omega_sq, measure) =
        crate::asymptotics::fourier_density_of(v1j, pad_factor.max(2))?;
    let mut integral = 0.0;
    for (d, w2) in density.iter().zip(omega_sq.iter()) {
        integral += d / (w2 + k * k);
    }
    // density carries the (2pi)^{-3} normalization of |V^|^2; restore (2pi)^2.
    Ok((2.0 * PI) * (2.0 * PI) * integral * measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kernel_double_integral;
    use crate::specfun::EULER_GAMMA;

    fn grid() -> Grid2D {
        Grid2D::centered(8.0, 129).unwrap()
    }

    #[test]
    fn u_independent_projects_to_diagonal() {
        let basis = TransverseBasis::build(0.8, 6).unwrap();
        let spec = PotentialSpec::gaussian_well(1.0, 1.0);
        let proj = project_potential(&spec, &basis, grid(), 32).unwrap();
        assert!(proj.symmetric);
        for j in 1..=6 {
            for jp in 1..=6 {
                if j == jp {
                    let diff = proj
                        .at(j, jp)
                        .zip(&Field2::from_fn(grid(), |x, y| -(-(x * x + y * y) / 2.0).exp()), |a, b| {
                            a - b
                        });
                    assert!(diff.max_abs() < 1e-10, "diagonal ({j},{jp})");
                } else {
                    assert!(proj.is_zero(j, jp), "off-diagonal ({j},{jp}) nonzero");
                }
            }
        }
    }

    #[test]
    fn linear_u_projects_to_overlaps() {
        let a = 0.8;
        let basis = TransverseBasis::build(a, 6).unwrap();
        let spec =
            PotentialSpec::analytic(move |x, y, u| -(-(x * x + y * y) / 2.0).exp() * u, 4.0);
        let proj = project_potential(&spec, &basis, grid(), 16).unwrap();
        assert!(proj.is_zero(1, 1), "V_11 must vanish for u-odd potentials");
        for j in 2..=6 {
            let tj = basis.t_overlap(j);
            if tj == 0.0 {
                assert!(proj.is_zero(1, j));
                continue;
            }
            let expected = Field2::from_fn(grid(), |x, y| -(-(x * x + y * y) / 2.0).exp() * tj);
            let diff = proj.at(1, j).zip(&expected, |p, e| p - e);
            assert!(diff.max_abs() < 1e-10, "mode {j}");
        }
    }

    #[test]
    fn quadratic_u_projects_to_u_chi1_norm() {
        let a = 1.1;
        let basis = TransverseBasis::build(a, 4).unwrap();
        let spec =
            PotentialSpec::analytic(move |x, y, u| -(-(x * x + y * y) / 2.0).exp() * u * u, 4.0);
        let proj = project_potential(&spec, &basis, grid(), 16).unwrap();
        let norm = basis.u_chi1_norm_sq();
        let expected = Field2::from_fn(grid(), |x, y| -(-(x * x + y * y) / 2.0).exp() * norm);
        let diff = proj.at(1, 1).zip(&expected, |p, e| p - e);
        assert!(diff.max_abs() < 1e-10);
    }

    #[test]
    fn quadrature_order_precondition() {
        let basis = TransverseBasis::build(0.5, 8).unwrap();
        let spec = PotentialSpec::gaussian_well(1.0, 1.0);
        assert!(project_potential(&spec, &basis, grid(), 15).is_err());
    }

    #[test]
    fn first_order_dominates_for_weak_wells() {
        let basis = TransverseBasis::build(PI / 2.0, 8).unwrap();
        let spec = PotentialSpec::gaussian_well(1.0, 1.0);
        let proj = project_potential(&spec, &basis, grid(), 32).unwrap();
        let lambda = 1e-4;
        let r = expansion_w(lambda, &proj, &basis, Route::Auto).unwrap();
        // int V_11 = -2 pi for the unit Gaussian: w ~ -lambda to first order,
        // with a relative second-order correction of size ~ lambda gamma / pi.
        assert_eq!(r.verdict, Verdict::Exists);
        assert!((r.int_v11 + 2.0 * PI).abs() < 1e-10);
        assert!((r.w - r.first_order).abs() < lambda * r.first_order.abs());
        assert!((r.first_order + lambda).abs() < 1e-12);
    }

    #[test]
    fn repulsive_potential_has_no_bound_state() {
        let basis = TransverseBasis::build(0.8, 8).unwrap();
        let spec = PotentialSpec::analytic(|x, y, _| (-(x * x + y * y) / 2.0).exp(), 4.0);
        let proj = project_potential(&spec, &basis, grid(), 32).unwrap();
        let r = expansion_w(0.1, &proj, &basis, Route::Auto).unwrap();
        assert_eq!(r.verdict, Verdict::None);
    }

    #[test]
    fn zero_mean_dipole_binds_at_second_order() {
        let a = 0.8;
        let basis = TransverseBasis::build(a, 12).unwrap();
        let spec = PotentialSpec::dipole_uv(1.0, 1.0, a);
        let proj = project_potential(&spec, &basis, grid(), 32).unwrap();
        let r = expansion_w(0.05, &proj, &basis, Route::Auto).unwrap();
        assert_eq!(r.verdict, Verdict::ExistsZeroMean);
        assert_eq!(r.first_order, 0.0);
        // log term vanishes with V_11 = 0; the mode bracket is negative.
        assert_eq!(r.log_term, 0.0);
        assert!(r.mode_sum > 0.0, "mode sum {}", r.mode_sum);
        assert!(r.w < 0.0, "w = {}", r.w);
    }

    #[test]
    fn lambda_scaling_metamorphic() {
        // w(c lambda, V) == w(lambda, c V): both orders carry the product
        // (lambda V)^k, so the two bookkeepings must agree exactly.
        let basis = TransverseBasis::build(0.8, 8).unwrap();
        let c = 2.0;
        let spec1 = PotentialSpec::gaussian_well(1.0, 1.0);
        let spec2 = PotentialSpec::gaussian_well(c, 1.0);
        let p1 = project_potential(&spec1, &basis, grid(), 32).unwrap();
        let p2 = project_potential(&spec2, &basis, grid(), 32).unwrap();
        let lambda = 0.02;
        let w1 = expansion_w(c * lambda, &p1, &basis, Route::Auto).unwrap().w;
        let w2 = expansion_w(lambda, &p2, &basis, Route::Auto).unwrap().w;
        assert!((w1 - w2).abs() < 1e-12 * w1.abs(), "{w1} vs {w2}");
    }

    #[test]
    fn fourier_mode_term_matches_direct_quadrature() {
        let g = grid();
        let v = Field2::from_fn(g, |x, y| (-(x * x + y * y) / 2.0).exp());
        let k: f64 = 3f64.sqrt();
        let f = fourier_mode_term(&v, k, 2).unwrap();
        let table = KernelTable::build(&g, KernelKind::BesselK0 { k }).unwrap();
        let direct = kernel_double_integral(&v, &v, &table, Route::Direct);
        let rel = (f - direct).abs() / direct;
        assert!(rel < 1e-4, "fourier {f} vs direct {direct}, rel {rel}");
        assert!(f > 0.0);
        // Zero field gives zero.
        let z = Field2::zeros(g);
        assert_eq!(fourier_mode_term(&z, k, 2).unwrap(), 0.0);
    }

    #[test]
    fn log_kernel_is_epsilon_limit_for_zero_mean() {
        // For zero-mean V11: iint V (gamma + ln(r/2)) V = -lim iint V K0(eps r) V.
        let g = grid();
        let v = Field2::from_fn(g, |x, y| {
            let r2 = x * x + y * y;
            (r2 - 2.0) * (-r2 / 2.0).exp()
        });
        assert!(v.integrate().abs() < 1e-10);
        let log_table = KernelTable::build(&g, KernelKind::LogPlusSmooth { k1: 0.0 }).unwrap();
        let lhs = -kernel_double_integral(&v, &v, &log_table, Route::Fft);
        let eps_table = KernelTable::build(&g, KernelKind::BesselK0 { k: 1e-3 }).unwrap();
        let rhs = -kernel_double_integral(&v, &v, &eps_table, Route::Fft);
        let rel = (lhs - rhs).abs() / lhs.abs();
        assert!(rel < 0.01, "log {lhs} vs eps-limit {rhs}, rel {rel}");
    }

    #[test]
    fn expansion_second_order_value_for_attractive_well() {
        // For the u-independent unit Gaussian the mode sum is empty and the
        // log integral has the closed form 2 pi^2 gamma.
        let basis = TransverseBasis::build(PI / 2.0, 8).unwrap();
        let spec = PotentialSpec::gaussian_well(1.0, 1.0);
        let proj = project_potential(&spec, &basis, grid(), 32).unwrap();
        let r = expansion_w(0.5, &proj, &basis, Route::Auto).unwrap();
        let expected = 2.0 * PI * PI * EULER_GAMMA;
        assert!(
            (r.log_term - expected).abs() < 1e-4 * expected,
            "log term {} vs {expected}",
            r.log_term
        );
        assert_eq!(r.mode_sum, 0.0);
        let w_expected = -0.5 + (0.5 / (2.0 * PI)).powi(2) * expected;
        assert!((r.w - w_expected).abs() < 1e-4 * w_expected.abs());
    }
}
