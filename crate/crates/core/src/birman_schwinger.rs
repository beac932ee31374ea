//! Non-asymptotic bound-state computation via the Birman-Schwinger principle.
//!
//! E = alpha^2 is an eigenvalue of -Delta - d_u^2 + lambda V iff -1 is an
//! eigenvalue of lambda |V|^{1/2} R0(alpha) V^{1/2}. The transverse factors
//! reduce analytically to the projections V_jj', so everything here lives on
//! mode-stacked 2D fields: balanced vectors xi_{j,p} = sqrt(w_p) f_j(x_p)
//! with trapezoid weights w_p, the resolvent acting per mode by convolution
//! with (2pi)^{-1} K0(k_j(alpha)|x|), k_j(alpha)^2 = kappa_j^2 - alpha^2, and
//! the potential acting node-locally by the matrix [V_jj'(x)].
//!
//! Two solvers:
//! - `solve_implicit`: the rank-one reduction w = F(lambda, w) with
//!   F = (lambda/2pi) (V^{1/2}chi_1, (I + lambda M)^{-1} |V|^{1/2}chi_1),
//!   reduced to mode space as
//!   F = (lambda/2pi) [ int V_11 - lambda phi0^T (I + lambda R~ V)^{-1} R~ phi0 ],
//!   where phi0 has components V_j1 and R~ is the resolvent with the
//!   ln k_1 singularity split off (mode-1 kernel K0(k1 r) + ln k1).
//!   Accurate arbitrarily close to the threshold: the gap enters only as
//!   w = 1/ln k1.
//! - `bs_eigen_rootfind`: the full spectral condition lambda mu(alpha) = -1
//!   with mu the most negative eigenvalue of K(alpha), found by symmetric
//!   Lanczos iteration on the W^{1/2}-sandwiched operator and bisection in
//!   ln k_1^2. Needs the gap representable (log-gap > -30) but no smallness
//!   of lambda.

use crate::asymptotics::energy_from_w;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::kernels::{KernelConvolver, KernelKind, KernelTable};
use crate::planar::{project_potential, ModeProjectedPotential, PotentialSpec};
use crate::transverse::TransverseBasis;
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

/// Resolvable-gap floor of the root finder: ln(k1^2) > -30.
pub const LOG_GAP_FLOOR: f64 = -30.0;

#[derive(Debug, Clone, Copy)]
pub struct BsOptions {
    /// Mode cutoff N of the resolvent expansion.
    pub n_modes: usize,
    /// Transverse quadrature order (>= 2 n_modes).
    pub nu: usize,
    /// Relative fixed-point tolerance on w.
    pub tol_w: f64,
    pub max_iter: usize,
}

impl Default for BsOptions {
    fn default() -> Self {
        Self { n_modes: 12, nu: 32, tol_w: 1e-12, max_iter: 200 }
    }
}

impl BsOptions {
    pub fn with_modes(n_modes: usize) -> Self {
        Self { n_modes, nu: (2 * n_modes).max(24), ..Self::default() }
    }
}

/// Sign structure of the potential over the sampled slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialSign {
    NonPositive,
    NonNegative,
    Indefinite,
}

fn potential_sign(spec: &PotentialSpec, basis: &TransverseBasis, grid: &Grid2D) -> PotentialSign {
    let probe_u: Vec<f64> =
        (0..9).map(|i| -basis.a + (i as f64 + 0.5) * 2.0 * basis.a / 9.0).collect();
    let mut has_pos = false;
    let mut has_neg = false;
    if let crate::planar::PotentialKind::Analytic(f) = &spec.kind {
        for &u in &probe_u {
            for iy in 0..grid.ny {
                for ix in 0..grid.nx {
                    let v = f(grid.x1(ix), grid.x2(iy), u);
                    if v > 1e-14 {
                        has_pos = true;
                    } else if v < -1e-14 {
                        has_neg = true;
                    }
                }
            }
        }
    } else if let crate::planar::PotentialKind::Sampled { fields, .. } = &spec.kind {
        for f in fields {
            for &v in &f.values {
                if v > 1e-14 {
                    has_pos = true;
                } else if v < -1e-14 {
                    has_neg = true;
                }
            }
        }
    }
    match (has_neg, has_pos) {
        (true, true) => PotentialSign::Indefinite,
        (false, true) => PotentialSign::NonNegative,
        // Includes the trivial zero potential.
        _ => PotentialSign::NonPositive,
    }
}

// ---------------------------------------------------------------------------
// Mode-space operators
// ---------------------------------------------------------------------------

/// k_j(alpha)^2 = kappa_j^2 - kappa_1^2 + k1^2 for the basis modes.
fn mode_momenta_sq(basis: &TransverseBasis, n_modes: usize, k1_sq: f64) -> Vec<f64> {
    (1..=n_modes).map(|j| basis.kj_sq(j) + k1_sq).collect()
}

/// Per-mode resolvent convolvers. `split_mode1` selects the regularized
/// kernel K0(k1 r) + ln k1 for mode 1 (the A-part of M = A + B); otherwise
/// mode 1 carries the raw K0(k1 r) of the full K(alpha).
struct ResolventKernels {
    convs: Vec<KernelConvolver>,
}

impl ResolventKernels {
    fn build(grid: &Grid2D, momenta_sq: &[f64], split_mode1: bool) -> Result<Self> {
        let mut convs = Vec::with_capacity(momenta_sq.len());
        for (j, &k_sq) in momenta_sq.iter().enumerate() {
            let k = k_sq.sqrt();
            let kind = if j == 0 && split_mode1 {
                KernelKind::LogPlusSmooth { k1: k }
            } else {
                KernelKind::BesselK0 { k }
            };
            let mut table = KernelTable::build(grid, kind)?;
            for v in &mut table.values {
                *v /= 2.0 * PI;
            }
            convs.push(KernelConvolver::new(&table));
        }
        Ok(Self { convs })
    }

    /// Balanced resolvent: out_j = sqrt(w) conv_j(sqrt(w) x_j).
    fn apply(&self, wsqrt: &[f64], x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = wsqrt.len();
        for (j, conv) in self.convs.iter().enumerate() {
            let xs = &x[j * n..(j + 1) * n];
            for p in 0..n {
                scratch[p] = wsqrt[p] * xs[p];
            }
            let os = &mut out[j * n..(j + 1) * n];
            conv.apply(&scratch[..n], os);
            for p in 0..n {
                os[p] *= wsqrt[p];
            }
        }
    }
}

/// Node-local multiplication by the mode matrix [V_jj'(x_p)], skipping zero
/// couplings (u-independent potentials are diagonal).
struct ModeMatrixMul {
    n_modes: usize,
    n_nodes: usize,
    /// (j, j', field-values) for nonzero couplings.
    entries: Vec<(usize, usize, Vec<f64>)>,
}

impl ModeMatrixMul {
    fn build(proj: &ModeProjectedPotential) -> Self {
        let n_modes = proj.n_modes;
        let n_nodes = proj.grid.len();
        let mut entries = Vec::new();
        for j in 1..=n_modes {
            for jp in 1..=n_modes {
                if !proj.is_zero(j, jp) {
                    entries.push((j - 1, jp - 1, proj.at(j, jp).values.clone()));
                }
            }
        }
        Self { n_modes, n_nodes, entries }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.n_nodes;
        for (j, jp, vals) in &self.entries {
            let xs = &x[jp * n..(jp + 1) * n];
            let os = &mut out[j * n..(j + 1) * n];
            for p in 0..n {
                os[p] += vals[p] * xs[p];
            }
        }
        let _ = self.n_modes;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BiCGStab for (I + lambda * Op) y = b with Op = R~ V (nonsymmetric).
/// Returns the solution and the achieved relative residual.
fn bicgstab<F: Fn(&[f64], &mut [f64])>(
    apply_op: F,
    lambda: f64,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let full = |x: &[f64], out: &mut [f64]| {
        apply_op(x, out);
        for i in 0..n {
            out[i] = x[i] + lambda * out[i];
        }
    };
    let bnorm = norm(b).max(1e-300);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let rhat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut s = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&rhat, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        full(&p, &mut v);
        alpha = rho_new / dot(&rhat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok((x, norm(&s) / bnorm));
        }
        full(&s, &mut t);
        omega = dot(&t, &s) / dot(&t, &t).max(1e-300);
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok((x, norm(&r) / bnorm));
        }
        rho = rho_new;
    }
    let res = norm(&r) / bnorm;
    if res < 1e-8 {
        Ok((x, res))
    } else {
        Err(Error::NonConvergence(format!("BiCGStab stalled at relative residual {res}")))
    }
}

// ---------------------------------------------------------------------------
// Shared assembly context
// ---------------------------------------------------------------------------

struct BsContext {
    grid: Grid2D,
    basis: TransverseBasis,
    n_modes: usize,
    /// sqrt of trapezoid weights per node.
    wsqrt: Vec<f64>,
    proj: ModeProjectedPotential,
    vmul: ModeMatrixMul,
    /// Balanced phi0: sqrt(w_p) V_j1(x_p).
    phi0: Vec<f64>,
    int_v11: f64,
    sign: PotentialSign,
    /// W^{1/2}(x_p) blocks for one-signed potentials (node-major N x N),
    /// or per-node scalar for u-independent diagonal |V|.
    wsqrt_blocks: Option<WHalf>,
    gamma: f64,
}

enum WHalf {
    /// Diagonal |V|: single field s(x) = sqrt(|V_jj(x)|), identical per mode.
    Scalar(Vec<f64>),
    /// Dense per-node matrix square roots of [|V|_jj'(x)].
    Full(Vec<f64>),
}

impl BsContext {
    fn build(
        lambda: f64,
        spec: &PotentialSpec,
        basis: &TransverseBasis,
        grid: Grid2D,
        opts: &BsOptions,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        let n_modes = opts.n_modes.min(basis.n_modes);
        let sub = TransverseBasis::build(basis.a, n_modes)?;
        let proj = project_potential(spec, &sub, grid, opts.nu.max(2 * n_modes))?;
        let n = grid.len();
        let wsqrt: Vec<f64> = (0..n).map(|p| grid.trapezoid_weight(p).sqrt()).collect();
        let mut phi0 = vec![0.0; n_modes * n];
        for j in 1..=n_modes {
            let f = proj.at(j, 1);
            for p in 0..n {
                phi0[(j - 1) * n + p] = wsqrt[p] * f.values[p];
            }
        }
        let int_v11 = proj.at(1, 1).integrate();
        let sign = potential_sign(spec, &sub, &grid);
        let vmul = ModeMatrixMul::build(&proj);
        let wsqrt_blocks = match sign {
            PotentialSign::Indefinite => None,
            _ => Some(build_whalf(&proj)?),
        };
        Ok(Self {
            grid,
            basis: sub,
            n_modes,
            wsqrt,
            proj,
            vmul,
            phi0,
            int_v11,
            sign,
            wsqrt_blocks,
            gamma: spec.gamma_order(),
        })
    }

    fn k1_of_w(w: f64) -> f64 {
        (1.0 / w).exp()
    }
}

/// Per-node matrix square root of [|V|_jj'(x)]; exploits diagonality for
/// u-independent potentials.
fn build_whalf(proj: &ModeProjectedPotential) -> Result<WHalf> {
    let n_modes = proj.n_modes;
    let n = proj.grid.len();
    let mut diagonal = true;
    for j in 1..=n_modes {
        for jp in 1..=n_modes {
            if j != jp && !proj.is_zero(j, jp) {
                diagonal = false;
            }
        }
    }
    if diagonal {
        let v11 = proj.at(1, 1);
        let s: Vec<f64> = v11.values.iter().map(|&v| v.abs().sqrt()).collect();
        return Ok(WHalf::Scalar(s));
    }
    // General one-signed case: |V|_jj' = -sign * V_jj'; the per-node matrix is
    // PSD up to quadrature noise, clamped at zero.
    let sign = {
        let v = proj.at(1, 1).integrate();
        if v <= 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    let mut data = vec![0.0; n * n_modes * n_modes];
    for p in 0..n {
        let mut m = DMatrix::<f64>::zeros(n_modes, n_modes);
        for j in 0..n_modes {
            for jp in 0..n_modes {
                m[(j, jp)] = sign * proj.fields[j * n_modes + jp].values[p];
            }
        }
        let eig = m.symmetric_eigen();
        let mut w = DMatrix::<f64>::zeros(n_modes, n_modes);
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            for j in 0..n_modes {
                for jp in 0..n_modes {
                    w[(j, jp)] += s * eig.eigenvectors[(j, i)] * eig.eigenvectors[(jp, i)];
                }
            }
        }
        for j in 0..n_modes {
            for jp in 0..n_modes {
                data[p * n_modes * n_modes + j * n_modes + jp] = w[(j, jp)];
            }
        }
    }
    Ok(WHalf::Full(data))
}

// ---------------------------------------------------------------------------
// Dense kernel set (desk scale): the assembled A, B, L matrices
// ---------------------------------------------------------------------------

/// Dense Birman-Schwinger matrices at a given w, in the balanced symmetric
/// representation for one-signed potentials: rows/columns indexed by
/// (mode, node) with the W^{1/2} sandwich absorbed.
pub struct BsKernelSet {
    pub w: f64,
    pub k1: f64,
    pub alpha_sq: f64,
    pub lambda: f64,
    pub n_modes: usize,
    pub n_nodes: usize,
    /// Rank-one singular part L = l_coeff * q q^T.
    pub l_coeff: f64,
    pub q: DVector<f64>,
    /// Regular mode-1 part (kernel K0(k1 r) + ln k1, sandwiched).
    pub a_mat: DMatrix<f64>,
    /// Higher-mode part (modes 2..N).
    pub b_mat: DMatrix<f64>,
    pub symmetric: bool,
}

/// Hard cap on the dense dimension n_modes * n_nodes.
const DENSE_LIMIT: usize = 4600;

/// Assemble the dense split M = A + B (and the rank-one L) at w < 0.
pub fn assemble_m(
    w: f64,
    lambda: f64,
    spec: &PotentialSpec,
    basis: &TransverseBasis,
    grid: Grid2D,
    opts: &BsOptions,
) -> Result<BsKernelSet> {
    if !(w < 0.0) {
        return Err(Error::Domain(format!("w must be negative, got {w}")));
    }
    let ctx = BsContext::build(lambda, spec, basis, grid, opts)?;
    let whalf = ctx.wsqrt_blocks.as_ref().ok_or_else(|| {
        Error::Validation(
            "dense assembly requires a one-signed potential (symmetric representation)".into(),
        )
    })?;
    let n = ctx.grid.len();
    let nm = ctx.n_modes;
    let dim = n * nm;
    if dim > DENSE_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "dense BS assembly of dimension {dim} exceeds the {DENSE_LIMIT} cap \
             ({nm} modes x {n} nodes); use the matrix-free solvers"
        )));
    }
    let k1 = BsContext::k1_of_w(w);
    let momenta = mode_momenta_sq(&ctx.basis, nm, k1 * k1);

    // Tabulated kernels: split mode 1.
    let mut tables = Vec::with_capacity(nm);
    for (j, &ksq) in momenta.iter().enumerate() {
        let kind = if j == 0 {
            KernelKind::LogPlusSmooth { k1 }
        } else {
            KernelKind::BesselK0 { k: ksq.sqrt() }
        };
        let mut t = KernelTable::build(&ctx.grid, kind)?;
        for v in &mut t.values {
            *v /= 2.0 * PI;
        }
        tables.push(t);
    }

    // q vector: columns of sqrt(w) W^{1/2} e_1.
    let mut q = DVector::<f64>::zeros(dim);
    match whalf {
        WHalf::Scalar(s) => {
            for p in 0..n {
                q[p] = ctx.wsqrt[p] * s[p];
            }
        }
        WHalf::Full(data) => {
            for p in 0..n {
                for j in 0..nm {
                    q[j * n + p] = ctx.wsqrt[p] * data[p * nm * nm + j * nm];
                }
            }
        }
    }

    let wh = |p: usize, j: usize, m: usize| -> f64 {
        match whalf {
            WHalf::Scalar(s) => {
                if j == m {
                    s[p]
                } else {
                    0.0
                }
            }
            WHalf::Full(data) => data[p * nm * nm + j * nm + m],
        }
    };

    let nx = ctx.grid.nx as isize;
    let mut a_mat = DMatrix::<f64>::zeros(dim, dim);
    let mut b_mat = DMatrix::<f64>::zeros(dim, dim);
    for p in 0..n {
        let (pxi, pyi) = ((p % ctx.grid.nx) as isize, (p / ctx.grid.nx) as isize);
        for qn in 0..n {
            let (qxi, qyi) = ((qn % ctx.grid.nx) as isize, (qn / ctx.grid.nx) as isize);
            let dx = pxi - qxi;
            let dy = pyi - qyi;
            let ww = ctx.wsqrt[p] * ctx.wsqrt[qn];
            for j in 0..nm {
                for jp in 0..nm {
                    // A: mode-1 sandwich only; B: higher modes.
                    let a_band = wh(p, j, 0) * tables[0].at(dx, dy) * wh(qn, 0, jp);
                    let mut b_band = 0.0;
                    for m in 1..nm {
                        let wjm = wh(p, j, m);
                        let wmj = wh(qn, m, jp);
                        if wjm != 0.0 && wmj != 0.0 {
                            b_band += wjm * tables[m].at(dx, dy) * wmj;
                        }
                    }
                    a_mat[(j * n + p, jp * n + qn)] = ww * a_band;
                    b_mat[(j * n + p, jp * n + qn)] = ww * b_band;
                }
            }
        }
    }
    let _ = nx;

    Ok(BsKernelSet {
        w,
        k1,
        alpha_sq: ctx.basis.kappa_sq(1) - k1 * k1,
        lambda,
        n_modes: nm,
        n_nodes: n,
        l_coeff: -k1.ln() / (2.0 * PI),
        q,
        a_mat,
        b_mat,
        symmetric: true,
    })
}

impl BsKernelSet {
    /// Operator 2-norm of M = A + B (symmetric dense).
    pub fn m_norm(&self) -> f64 {
        let m = &self.a_mat + &self.b_mat;
        m.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
    }

    /// Direct assembly of the full sandwiched K(alpha) truncated at N:
    /// all modes with raw K0(k_j(alpha)) kernels. Equals L + A + B.
    pub fn direct_full(&self, grid: &Grid2D) -> Result<DMatrix<f64>> {
        // L + A reconstructs the mode-1 K0(k1 r) kernel sandwich by linearity.
        let mut m = &self.a_mat + &self.b_mat;
        let l = self.l_coeff;
        for i in 0..m.nrows() {
            for jj in 0..m.ncols() {
                m[(i, jj)] += l * self.q[i] * self.q[jj];
            }
        }
        let _ = grid;
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Implicit-equation solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BsIterRow {
    pub iter: usize,
    pub w: f64,
    pub f_value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct BsResult {
    pub w_star: f64,
    pub k1: f64,
    pub alpha_sq: f64,
    /// ln(gap) = 2/w*.
    pub log_gap: f64,
    /// E = kappa_1^2 - exp(2/w*) when representable.
    pub energy: Option<f64>,
    pub iterations: usize,
    /// |w - F(lambda, w)| at the solution.
    pub residual: f64,
    /// |dF/dw| at the solution (uniqueness certificate when < 1).
    pub contraction: f64,
    pub diagnostics: Vec<BsIterRow>,
    pub modes: usize,
    /// gamma = min(1, delta/2) from the declared potential decay.
    pub gamma_order: f64,
}

/// One evaluation of F(lambda, w) in mode space.
fn eval_f(ctx: &BsContext, lambda: f64, w: f64) -> Result<f64> {
    let k1 = BsContext::k1_of_w(w);
    let momenta = mode_momenta_sq(&ctx.basis, ctx.n_modes, k1 * k1);
    let kernels = ResolventKernels::build(&ctx.grid, &momenta, true)?;
    let n = ctx.grid.len();
    let dim = n * ctx.n_modes;
    let mut scratch = vec![0.0; n];
    // rhs = R~ phi0
    let mut rhs = vec![0.0; dim];
    kernels.apply(&ctx.wsqrt, &ctx.phi0, &mut rhs, &mut scratch);
    // Solve (I + lambda R~ V) y = rhs.
    let vbuf = std::cell::RefCell::new(vec![0.0; dim]);
    let apply = |x: &[f64], out: &mut [f64]| {
        let mut vb = vbuf.borrow_mut();
        ctx.vmul.apply(x, &mut vb);
        let mut sc = vec![0.0; n];
        kernels.apply(&ctx.wsqrt, &vb, out, &mut sc);
    };
    let (y, _res) = bicgstab(apply, lambda, &rhs, 1e-13, 500)?;
    Ok(lambda / (2.0 * PI) * (ctx.int_v11 - lambda * dot(&ctx.phi0, &y)))
}

/// Solve the implicit equation w = F(lambda, w) by fixed-point iteration with
/// a secant safeguard. Returns "no bound state" when the iterates leave the
/// negative half-line.
pub fn solve_implicit(
    lambda: f64,
    spec: &PotentialSpec,
    basis: &TransverseBasis,
    grid: Grid2D,
    opts: &BsOptions,
) -> Result<BsResult> {
    let ctx = BsContext::build(lambda, spec, basis, grid, opts)?;
    let mut diagnostics = Vec::new();

    // Seed: first-order term, falling back to second order in the zero-mean case.
    let scale = ctx.proj.at(1, 1).max_abs().max(1e-300)
        * ctx.grid.hx
        * ctx.grid.hy
        * ctx.grid.len() as f64;
    let first = lambda / (2.0 * PI) * ctx.int_v11;
    let mut w = if ctx.int_v11 < -1e-10 * scale {
        first
    } else if ctx.int_v11 <= 1e-10 * scale {
        let exp = crate::planar::expansion_w(
            lambda,
            &ctx.proj,
            &ctx.basis,
            crate::kernels::Route::Auto,
        )?;
        if exp.w >= 0.0 {
            return Err(Error::NoBoundState(format!(
                "second-order expansion w = {} is not negative",
                exp.w
            )));
        }
        exp.w
    } else {
        return Err(Error::NoBoundState(format!(
            "int V_11 = {} > 0: repulsive in the mean",
            ctx.int_v11
        )));
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut prev_step = f64::INFINITY;
    let mut growth_count = 0usize;
    for it in 0..opts.max_iter {
        let f = eval_f(&ctx, lambda, w)?;
        let step = (f - w).abs();
        diagnostics.push(BsIterRow { iter: it, w, f_value: f, residual: step });
        iterations = it + 1;
        if f >= 0.0 {
            return Err(Error::NoBoundState(format!(
                "fixed-point iterate left the negative half-line: F = {f}"
            )));
        }
        if step <= opts.tol_w * w.abs() {
            w = f;
            converged = true;
            break;
        }
        if step > prev_step {
            growth_count += 1;
            if growth_count >= 2 {
                break; // hand over to the secant safeguard
            }
        }
        prev_step = step;
        w = f;
    }

    if !converged {
        // Secant on g(w) = F(w) - w from the last two iterates.
        let mut w0 = diagnostics[diagnostics.len() - 2].w;
        let mut w1 = diagnostics[diagnostics.len() - 1].w;
        let mut g0 = eval_f(&ctx, lambda, w0)? - w0;
        let mut g1 = eval_f(&ctx, lambda, w1)? - w1;
        for it in 0..opts.max_iter {
            if (g1 - g0).abs() < 1e-300 {
                break;
            }
            let w2 = w1 - g1 * (w1 - w0) / (g1 - g0);
            if !(w2 < 0.0) {
                return Err(Error::NoBoundState(format!(
                    "secant iterate left the negative half-line: w = {w2}"
                )));
            }
            let g2 = eval_f(&ctx, lambda, w2)? - w2;
            diagnostics.push(BsIterRow {
                iter: iterations + it,
                w: w2,
                f_value: g2 + w2,
                residual: g2.abs(),
            });
            w0 = w1;
            g0 = g1;
            w1 = w2;
            g1 = g2;
            iterations += 1;
            if g2.abs() <= opts.tol_w * w2.abs() {
                converged = true;
                w = w2;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "implicit equation did not converge in {} evaluations (last residual {:.3e})",
                iterations,
                diagnostics.last().map_or(f64::NAN, |d| d.residual)
            )));
        }
    }

    // Contraction estimate by central difference.
    let delta = 1e-5 * w.abs();
    let fp = eval_f(&ctx, lambda, w + delta)?;
    let fm = eval_f(&ctx, lambda, w - delta)?;
    let contraction = ((fp - fm) / (2.0 * delta)).abs();
    let f_final = eval_f(&ctx, lambda, w)?;
    let residual = (f_final - w).abs();

    let k1 = BsContext::k1_of_w(w);
    let energy = energy_from_w(w, ctx.basis.kappa1())?;
    Ok(BsResult {
        w_star: w,
        k1,
        alpha_sq: ctx.basis.kappa_sq(1) - k1 * k1,
        log_gap: energy.log_gap,
        energy: energy.energy,
        iterations,
        residual,
        contraction,
        diagnostics,
        modes: ctx.n_modes,
        gamma_order: ctx.gamma,
    })
}

// ---------------------------------------------------------------------------
// Full-spectrum root finder
// ---------------------------------------------------------------------------

/// Largest eigenvalue of a symmetric PSD operator by Lanczos iteration with
/// full reorthogonalization; deterministic for a fixed start vector.
fn lanczos_largest<F: Fn(&[f64], &mut [f64])>(
    apply: F,
    dim: usize,
    start: &[f64],
    tol: f64,
    max_basis: usize,
) -> (f64, Vec<f64>) {
    let mut v = start.to_vec();
    let nv = norm(&v).max(1e-300);
    for x in &mut v {
        *x /= nv;
    }
    let mut best_theta = 0.0;
    let mut best_vec = v.clone();
    for _restart in 0..8 {
        let mut basis: Vec<Vec<f64>> = vec![v.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        for k in 0..max_basis {
            apply(&basis[k], &mut w);
            let alpha = dot(&basis[k], &w);
            alphas.push(alpha);
            for (i, b) in basis.iter().enumerate() {
                let c = if i == k {
                    alpha
                } else if i + 1 == k {
                    betas[i]
                } else {
                    dot(b, &w)
                };
                for (wj, bj) in w.iter_mut().zip(b.iter()) {
                    *wj -= c * bj;
                }
            }
            // Second reorthogonalization pass for stability.
            for b in &basis {
                let c = dot(b, &w);
                for (wj, bj) in w.iter_mut().zip(b.iter()) {
                    *wj -= c * bj;
                }
            }
            let beta = norm(&w);
            // Tridiagonal Ritz values.
            let m = alphas.len();
            let mut tri = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                tri[(i, i)] = alphas[i];
                if i + 1 < m {
                    tri[(i, i + 1)] = betas[i];
                    tri[(i + 1, i)] = betas[i];
                }
            }
            let eig = tri.symmetric_eigen();
            let mut idx = 0;
            let mut theta = f64::NEG_INFINITY;
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > theta {
                    theta = l;
                    idx = i;
                }
            }
            // Ritz vector and residual.
            let mut ritz = vec![0.0; dim];
            for (i, b) in basis.iter().enumerate() {
                let c = eig.eigenvectors[(i, idx)];
                for (r, bj) in ritz.iter_mut().zip(b.iter()) {
                    *r += c * bj;
                }
            }
            let resid = beta * eig.eigenvectors[(m - 1, idx)].abs();
            best_theta = theta;
            best_vec = ritz;
            if resid <= tol * theta.abs().max(1e-300) || beta < 1e-14 {
                return (best_theta, best_vec);
            }
            if k + 1 == max_basis {
                break;
            }
            betas.push(beta);
            let mut next = w.clone();
            for x in &mut next {
                *x /= beta;
            }
            basis.push(next);
        }
        v = best_vec.clone();
        let nv = norm(&v).max(1e-300);
        for x in &mut v {
            *x /= nv;
        }
    }
    (best_theta, best_vec)
}

/// Most negative eigenvalue mu(alpha) of K(alpha) for a one-signed attractive
/// potential: mu = -lambda_max(W^{1/2} R0 W^{1/2}).
fn mu_of_s(
    ctx: &BsContext,
    s: f64,
    warm: &mut Vec<f64>,
) -> Result<f64> {
    let momenta = mode_momenta_sq(&ctx.basis, ctx.n_modes, s);
    let kernels = ResolventKernels::build(&ctx.grid, &momenta, false)?;
    let n = ctx.grid.len();
    let dim = n * ctx.n_modes;
    let whalf = ctx.wsqrt_blocks.as_ref().expect("one-signed path");
    let apply_whalf = |x: &[f64], out: &mut [f64]| match whalf {
        WHalf::Scalar(sv) => {
            for j in 0..ctx.n_modes {
                for p in 0..n {
                    out[j * n + p] = sv[p] * x[j * n + p];
                }
            }
        }
        WHalf::Full(data) => {
            let nm = ctx.n_modes;
            for p in 0..n {
                for j in 0..nm {
                    let mut acc = 0.0;
                    for m in 0..nm {
                        acc += data[p * nm * nm + j * nm + m] * x[m * n + p];
                    }
                    out[j * n + p] = acc;
                }
            }
        }
    };
    let buf1 = std::cell::RefCell::new(vec![0.0; dim]);
    let buf2 = std::cell::RefCell::new(vec![0.0; dim]);
    let apply = |x: &[f64], out: &mut [f64]| {
        let mut b1 = buf1.borrow_mut();
        let mut b2 = buf2.borrow_mut();
        apply_whalf(x, &mut b1);
        let mut sc = vec![0.0; n];
        kernels.apply(&ctx.wsqrt, &b1, &mut b2, &mut sc);
        apply_whalf(&b2, out);
    };
    if warm.len() != dim {
        *warm = ctx.phi0.clone();
        if norm(warm) < 1e-300 {
            *warm = vec![1.0; dim];
        }
    }
    let (lmax, vec) = lanczos_largest(apply, dim, warm, 1e-11, 48);
    *warm = vec;
    Ok(-lmax)
}

/// Root finder on the full spectral condition lambda mu(alpha) + 1 = 0,
/// bisected in ln s with s = k_1(alpha)^2 in (e^{LOG_GAP_FLOOR}, kappa_1^2).
pub fn bs_eigen_rootfind(
    lambda: f64,
    spec: &PotentialSpec,
    basis: &TransverseBasis,
    grid: Grid2D,
    opts: &BsOptions,
) -> Result<BsResult> {
    let ctx = BsContext::build(lambda, spec, basis, grid, opts)?;
    match ctx.sign {
        PotentialSign::NonPositive => {}
        PotentialSign::NonNegative => {
            return Err(Error::NoBoundState(
                "potential is non-negative: K(alpha) has no negative spectrum".into(),
            ));
        }
        PotentialSign::Indefinite => {
            return Err(Error::Validation(
                "sign-indefinite potentials are outside the symmetric root-finder's fast \
                 path; use solve_implicit"
                    .into(),
            ));
        }
    }
    let kappa1_sq = ctx.basis.kappa_sq(1);
    let mut warm: Vec<f64> = Vec::new();
    let g = |s: f64, warm: &mut Vec<f64>| -> Result<f64> {
        Ok(lambda * (-mu_of_s(&ctx, s, warm)?) - 1.0)
    };
    // g(s) = lambda * lambda_max(s) - 1 decreases in s; bracket the root.
    let t_min = LOG_GAP_FLOOR.max((kappa1_sq * 1e-14).ln());
    let t_max = (kappa1_sq * (1.0 - 1e-9)).ln();
    let g_hi = g(t_min.exp(), &mut warm)?;
    let g_lo = g(t_max.exp(), &mut warm)?;
    if g_hi < 0.0 {
        return Err(Error::NoBoundState(format!(
            "no root in the resolvable range: even at log-gap {t_min:.1} the Birman-Schwinger \
             eigenvalue stays above -1/lambda (g = {g_hi:.3e})"
        )));
    }
    if g_lo > 0.0 {
        return Err(Error::Validation(format!(
            "binding stronger than the alpha in (0, kappa_1) window: g({t_max:.3}) = {g_lo:.3e} > 0"
        )));
    }
    let mut lo = t_min;
    let mut hi = t_max;
    let mut iterations = 2usize;
    let mut diagnostics = Vec::new();
    for it in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid.exp(), &mut warm)?;
        iterations += 1;
        diagnostics.push(BsIterRow {
            iter: it,
            w: 2.0 / mid, // w = 2 / ln s
            f_value: gm,
            residual: (hi - lo).abs(),
        });
        if gm >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < 1e-13 {
            break;
        }
    }
    let t_star = 0.5 * (lo + hi);
    let s_star = t_star.exp();
    let w_star = 2.0 / t_star;
    let energy = energy_from_w(w_star, ctx.basis.kappa1())?;
    Ok(BsResult {
        w_star,
        k1: s_star.sqrt(),
        alpha_sq: kappa1_sq - s_star,
        log_gap: energy.log_gap,
        energy: energy.energy,
        iterations,
        residual: (hi - lo).abs(),
        contraction: f64::NAN,
        diagnostics,
        modes: ctx.n_modes,
        gamma_order: ctx.gamma,
    })
}

/// Diagnostics CSV: (iteration, w, F(lambda, w), residual).
pub fn write_diagnostics_csv(result: &BsResult, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iteration,w,f_value,residual,contraction_estimate")?;
    for d in &result.diagnostics {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            d.iter, d.w, d.f_value, d.residual, result.contraction
        )?;
    }
    Ok(())
}
