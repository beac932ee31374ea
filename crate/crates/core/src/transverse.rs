//! Dirichlet eigenbasis of the transverse interval (-a, a) and the overlap
//! coefficients T_j = (chi_1, u chi_j) that weight every mode sum.
//!
//! Convention: chi_j(u) = a^{-1/2} sin(j pi (u + a) / (2a)), kappa_j = j pi / (2a).
//! With that phase the overlaps have the closed form
//!   T_j = -16 a j / (pi^2 (j^2 - 1)^2)   for even j,   T_j = 0 otherwise,
//! obtained by two integrations by parts; the build cross-checks it against
//! Gauss-Legendre quadrature and refuses to hand out a basis that disagrees.

use crate::error::{Error, Result};
use crate::kernels::gauss_legendre_on;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct TransverseBasis {
    /// Half-width of the interval.
    pub a: f64,
    /// Mode cutoff N; modes are 1..=N.
    pub n_modes: usize,
    /// kappa_j = j pi / (2a), index j-1.
    pub kappa: Vec<f64>,
    /// T_j = (chi_1, u chi_j), index j-1.
    pub t: Vec<f64>,
}

/// Truncated overlap sums with their analytic targets.
#[derive(Debug, Clone, Copy)]
pub struct OverlapSums {
    /// S0 = sum_{j=2..N} T_j^2.
    pub s0: f64,
    /// S2 = sum_{j=2..N} T_j^2 (kappa_j^2 - kappa_1^2).
    pub s2: f64,
    /// Analytic N -> inf target of S0: ||u chi_1||^2 - T_1^2.
    pub s0_target: f64,
    /// Analytic target of S2.
    pub s2_target: f64,
    pub s0_deficit: f64,
    pub s2_deficit: f64,
}

impl TransverseBasis {
    /// Default mode cutoff.
    pub const DEFAULT_MODES: usize = 64;

    pub fn build(a: f64, n_modes: usize) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Domain(format!("half-width a must be positive, got {a}")));
        }
        if n_modes < 2 {
            return Err(Error::Domain(format!("need at least 2 modes, got {n_modes}")));
        }
        let kappa: Vec<f64> = (1..=n_modes).map(|j| j as f64 * PI / (2.0 * a)).collect();
        let t: Vec<f64> = (1..=n_modes).map(|j| overlap_closed_form(a, j)).collect();

        // Quadrature cross-check of the closed form at build time.
        let basis = Self { a, n_modes, kappa, t };
        let check_modes = [2usize, 3, 4, n_modes.min(12)];
        for &j in &check_modes {
            if j > n_modes {
                continue;
            }
            let quad = basis.overlap_by_quadrature(j);
            let closed = basis.t[j - 1];
            if (quad - closed).abs() > 1e-12 * (1.0 + closed.abs()) {
                return Err(Error::Validation(format!(
                    "overlap T_{j} closed form {closed} disagrees with quadrature {quad}"
                )));
            }
        }
        Ok(basis)
    }

    /// chi_j(u); zero outside (-a, a).
    pub fn chi(&self, j: usize, u: f64) -> f64 {
        debug_assert!(j >= 1 && j <= self.n_modes);
        if u <= -self.a || u >= self.a {
            return 0.0;
        }
        (1.0 / self.a).sqrt() * (j as f64 * PI * (u + self.a) / (2.0 * self.a)).sin()
    }

    #[inline]
    pub fn kappa1(&self) -> f64 {
        self.kappa[0]
    }

    #[inline]
    pub fn kappa_sq(&self, j: usize) -> f64 {
        self.kappa[j - 1] * self.kappa[j - 1]
    }

    /// k_j^2 at the threshold: kappa_j^2 - kappa_1^2.
    #[inline]
    pub fn kj_sq(&self, j: usize) -> f64 {
        self.kappa_sq(j) - self.kappa_sq(1)
    }

    #[inline]
    pub fn t_overlap(&self, j: usize) -> f64 {
        self.t[j - 1]
    }

    /// ||u chi_1||^2 = (pi^2 - 6) / (12 kappa_1^2).
    pub fn u_chi1_norm_sq(&self) -> f64 {
        (PI * PI - 6.0) / (12.0 * self.kappa_sq(1))
    }

    fn overlap_by_quadrature(&self, j: usize) -> f64 {
        let (u, w) = gauss_legendre_on(-self.a, self.a, 80 + 2 * self.n_modes.max(j));
        u.iter()
            .zip(w.iter())
            .map(|(&uu, &wu)| wu * self.chi(1, uu) * uu * self.chi(j, uu))
            .sum()
    }

    pub fn overlap_sums(&self) -> OverlapSums {
        let mut s0 = 0.0;
        let mut s2 = 0.0;
        for j in 2..=self.n_modes {
            let t2 = self.t[j - 1] * self.t[j - 1];
            s0 += t2;
            s2 += t2 * self.kj_sq(j);
        }
        let s0_target = self.u_chi1_norm_sq() - self.t[0] * self.t[0];
        OverlapSums {
            s0,
            s2,
            s0_target,
            s2_target: 1.0,
            s0_deficit: s0_target - s0,
            s2_deficit: 1.0 - s2,
        }
    }
}

fn overlap_closed_form(a: f64, j: usize) -> f64 {
    if j == 1 || j % 2 == 1 {
        0.0
    } else {
        let jf = j as f64;
        let d = jf * jf - 1.0;
        -16.0 * a * jf / (PI * PI * d * d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gauss_legendre_on;

    #[test]
    fn kappa_values_at_half_pi() {
        let b = TransverseBasis::build(PI / 2.0, 8).unwrap();
        assert!((b.kappa[0] - 1.0).abs() < 1e-15);
        assert!((b.kappa[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn odd_overlaps_vanish() {
        let b = TransverseBasis::build(0.8, 16).unwrap();
        for j in (3..=15).step_by(2) {
            assert_eq!(b.t_overlap(j), 0.0);
        }
        assert_eq!(b.t_overlap(1), 0.0);
    }

    #[test]
    fn t2_reference_value_at_unit_halfwidth() {
        // T_2 = -32/(9 pi^2) at a = 1; the sign is fixed by the chi phase.
        let b = TransverseBasis::build(1.0, 4).unwrap();
        let expected = -32.0 / (9.0 * PI * PI);
        assert!((b.t_overlap(2) - expected).abs() < 1e-14);
        assert!((b.t_overlap(2) + 0.36025).abs() < 1e-4);
    }

    #[test]
    fn orthonormality_under_quadrature() {
        let b = TransverseBasis::build(1.3, 12).unwrap();
        let (u, w) = gauss_legendre_on(-b.a, b.a, 200);
        for i in 1..=b.n_modes {
            for j in i..=b.n_modes {
                let ip: f64 = u
                    .iter()
                    .zip(w.iter())
                    .map(|(&uu, &wu)| wu * b.chi(i, uu) * b.chi(j, uu))
                    .sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-10, "({i},{j}) -> {ip}");
            }
        }
    }

    #[test]
    fn chi1_positive_inside() {
        let b = TransverseBasis::build(0.6, 4).unwrap();
        for i in 1..200 {
            let u = -b.a + 2.0 * b.a * i as f64 / 200.0;
            assert!(b.chi(1, u) > 0.0, "chi_1({u}) <= 0");
        }
    }

    #[test]
    fn overlap_sums_hit_targets() {
        // a = pi/2: sum T_j^2 -> (pi^2-6)/12, sum T_j^2 (kappa_j^2 - kappa_1^2) -> 1.
        let b = TransverseBasis::build(PI / 2.0, 200).unwrap();
        let s = b.overlap_sums();
        assert!((s.s0 - (PI * PI - 6.0) / 12.0).abs() < 1e-6, "S0 = {}", s.s0);
        assert!((s.s2 - 1.0).abs() < 1e-4, "S2 = {}", s.s2);
        // N = 2 degenerate case: S0 = T_2^2 exactly.
        let b2 = TransverseBasis::build(PI / 2.0, 2).unwrap();
        let s2 = b2.overlap_sums();
        assert_eq!(s2.s0, b2.t_overlap(2) * b2.t_overlap(2));
    }

    #[test]
    fn deficits_decay_monotonically_and_fast() {
        let a = 0.9;
        let mut prev: Option<OverlapSums> = None;
        let mut deficits = Vec::new();
        for &n in &[16usize, 32, 64, 128] {
            let s = TransverseBasis::build(a, n).unwrap().overlap_sums();
            if let Some(p) = prev {
                assert!(s.s0_deficit <= p.s0_deficit);
                assert!(s.s2_deficit <= p.s2_deficit);
            }
            deficits.push((n as f64, s.s2_deficit));
            prev = Some(s);
        }
        // Empirical order: the S2 deficit decays at least like 1/N.
        let slope = (deficits[0].1 / deficits[3].1).ln() / (deficits[3].0 / deficits[0].0).ln();
        assert!(slope > 1.0, "S2 deficit slope = {slope}");
    }
}
