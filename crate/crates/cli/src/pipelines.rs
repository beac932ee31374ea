//! The batch pipelines behind the subcommands: geometry -> asymptotics ->
//! Birman-Schwinger -> direct solver, with CSV outputs whose bodies are
//! bitwise reproducible for identical configs.

use crate::config::{build_potential, build_surface, echo, Config};
use layerbound::asymptotics::{
    energy_from_w, w1_fourier, w1_intermediate, w1_realspace, w1_thin, write_mode_csv,
    IntermediateFields,
};
use layerbound::birman_schwinger::{
    bs_eigen_rootfind, solve_implicit, write_diagnostics_csv, BsOptions, BsResult, LOG_GAP_FLOOR,
};
use layerbound::direct_solver::{
    assemble, bracket_layer_energy, lowest_eigenvalue, BracketOptions, EigenOptions,
};
use layerbound::geometry::{
    build_surface_jet, curvatures, layer_constants, total_gauss_curvature, SurfaceInput,
    SurfaceJet,
};
use layerbound::grid::write_field_csv;
use layerbound::kernels::Route;
use layerbound::planar::{expansion_w, project_potential, PotentialSpec, Verdict};
use layerbound::transverse::TransverseBasis;
use layerbound::{Error, Grid2D};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

/// Pipeline outcome mapped to the exit-code contract.
#[derive(Debug)]
pub enum RunError {
    /// Exit 1.
    Config(String),
    /// Exit 2.
    NoBoundState(String),
    /// Exit 3.
    Failure(String),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoBoundState(m) => RunError::NoBoundState(m),
            other => RunError::Failure(other.to_string()),
        }
    }
}

impl From<crate::config::ConfigError> for RunError {
    fn from(e: crate::config::ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

pub type RunResult = Result<(), RunError>;

pub struct Runner {
    pub cfg: Config,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Runner {
    pub fn new(cfg: Config, quiet: bool) -> Result<Self, RunError> {
        let out = PathBuf::from(&cfg.output.dir);
        std::fs::create_dir_all(&out)
            .map_err(|e| RunError::Failure(format!("cannot create output dir: {e}")))?;
        std::fs::write(out.join("resolved_config.toml"), echo(&cfg))
            .map_err(|e| RunError::Failure(e.to_string()))?;
        Ok(Self { cfg, out, quiet })
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn write(&self, name: &str, body: &str) -> Result<(), RunError> {
        std::fs::write(self.out.join(name), body).map_err(|e| RunError::Failure(e.to_string()))
    }

    fn surface_jet(&self) -> Result<(SurfaceJet, f64), RunError> {
        let scfg = self
            .cfg
            .surface
            .as_ref()
            .ok_or_else(|| RunError::Config("this command needs a [surface] section".into()))?;
        let surface = build_surface(scfg)?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let jet = build_surface_jet(&SurfaceInput::Analytic(surface), grid)?;
        Ok((jet, scfg.delta))
    }

    fn potential(&self) -> Result<PotentialSpec, RunError> {
        let pcfg = self
            .cfg
            .potential
            .as_ref()
            .ok_or_else(|| RunError::Config("this command needs a [potential] section".into()))?;
        Ok(build_potential(pcfg, self.cfg.layer.a)?)
    }

    // -- geometry -----------------------------------------------------------

    pub fn run_geometry(&self) -> RunResult {
        let (jet, _) = self.surface_jet()?;
        let mut body = String::from(
            "eps,int_k0,total_gauss,boundary_decay,eta_inf,rho_m_inv,c_minus,c_plus,\
             cc_minus,cc_plus,sigma_minus,sigma_plus\n",
        );
        for &eps in &self.cfg.layer.eps {
            let bundle = curvatures(&jet, eps)?;
            let consts = layer_constants(&bundle, self.cfg.layer.a)?;
            let tot = total_gauss_curvature(&jet, &bundle);
            writeln!(
                body,
                "{eps:.6e},{:.17e},{:.17e},{:.3e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                tot.int_k0,
                tot.total_gauss,
                tot.boundary_decay,
                consts.eta_inf,
                consts.rho_m_inv,
                consts.c_minus,
                consts.c_plus,
                consts.cc_minus,
                consts.cc_plus,
                consts.sigma_minus,
                consts.sigma_plus,
            )
            .ok();
        }
        self.write("geometry.csv", &body)?;
        // Field exports in the exchange format (first eps).
        if let Some(&eps) = self.cfg.layer.eps.first() {
            let bundle = curvatures(&jet, eps)?;
            for (name, field) in [
                ("m0", &bundle.m0),
                ("k0", &bundle.k0),
                ("gauss_k", &bundle.gauss),
                ("mean_m", &bundle.mean),
            ] {
                write_field_csv(field, &self.out.join(format!("{name}.csv")))
                    .map_err(RunError::from)?;
            }
        }
        self.say("geometry: wrote geometry.csv and curvature fields");
        Ok(())
    }

    // -- asymptotics --------------------------------------------------------

    pub fn run_asymptotics(&self) -> RunResult {
        let (jet, delta) = self.surface_jet()?;
        let m0 = jet.m0_field();
        if m0.max_abs() == 0.0 {
            return Err(RunError::NoBoundState(
                "planar surface: the mean curvature m0 vanishes identically".into(),
            ));
        }
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.n)?;
        let real = w1_realspace(&m0, &basis, Route::Auto)?;
        let four = w1_fourier(&m0, &basis, 2)?;
        let fields = IntermediateFields::from_jet(&jet);
        let inter = w1_intermediate(&fields, &basis, Route::Auto)?;
        let gamma = (delta / 2.0).min(1.0);

        let mut body = String::from("route,w1,rel_diff_vs_realspace\n");
        for (name, w) in [("realspace", real.w1), ("fourier", four.w1), ("intermediate", inter)] {
            writeln!(body, "{name},{:.17e},{:.6e}", w, (w - real.w1).abs() / real.w1.abs()).ok();
        }
        writeln!(body, "# s2_deficit,{:.6e}", real.s2_deficit).ok();
        writeln!(body, "# gamma_order,{gamma:.3}").ok();
        self.write("w1_routes.csv", &body)?;
        write_mode_csv(&real, &self.out.join("modes.csv")).map_err(RunError::from)?;

        let thin = w1_thin(&m0, &fields.lap_m0, 2.0 * self.cfg.layer.a, Some(&basis))?;
        let mut tbody = String::from("leading,d2_term,mode_term,w1_fourier,thin_defect\n");
        writeln!(
            tbody,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            thin.leading,
            thin.d2_term,
            thin.mode_term.unwrap_or(f64::NAN),
            four.w1,
            (four.w1 - thin.leading - thin.d2_term).abs(),
        )
        .ok();
        self.write("thin.csv", &tbody)?;
        self.say(&format!(
            "asymptotics: w1 = {:.8e} (realspace), {:.8e} (fourier), {:.8e} (intermediate)",
            real.w1, four.w1, inter
        ));
        Ok(())
    }

    // -- planar expansion ---------------------------------------------------

    pub fn run_planar(&self) -> RunResult {
        let spec = self.potential()?;
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.bs)?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let proj = project_potential(&spec, &basis, grid, self.cfg.modes.nu)?;
        let mut body =
            String::from("lambda,w,first_order,log_term,mode_sum,int_v11,verdict\n");
        let mut any_state = false;
        for &lambda in &self.cfg.coupling.lambda {
            let r = expansion_w(lambda, &proj, &basis, Route::Auto)?;
            if r.verdict != Verdict::None {
                any_state = true;
            }
            writeln!(
                body,
                "{lambda:.6e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                r.w,
                r.first_order,
                r.log_term,
                r.mode_sum,
                r.int_v11,
                verdict_str(r.verdict),
            )
            .ok();
        }
        self.write("expansion.csv", &body)?;
        if !any_state {
            return Err(RunError::NoBoundState(
                "expansion verdict: no weak-coupling bound state for any lambda".into(),
            ));
        }
        self.say("planar: wrote expansion.csv");
        Ok(())
    }

    // -- Birman-Schwinger ---------------------------------------------------

    pub fn run_bs(&self) -> RunResult {
        let spec = self.potential()?;
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.bs)?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let opts = BsOptions {
            n_modes: self.cfg.modes.bs,
            nu: self.cfg.modes.nu,
            ..BsOptions::default()
        };
        let mut body = String::from(
            "lambda,w_star,log_gap,energy,alpha_sq,iterations,residual,contraction,rootfind_alpha_sq\n",
        );
        for (i, &lambda) in self.cfg.coupling.lambda.iter().enumerate() {
            let r = solve_implicit(lambda, &spec, &basis, grid, &opts)?;
            write_diagnostics_csv(&r, &self.out.join(format!("bs_diagnostics_{i}.csv")))
                .map_err(RunError::from)?;
            let root_alpha = if r.log_gap > LOG_GAP_FLOOR {
                match bs_eigen_rootfind(lambda, &spec, &basis, grid, &opts) {
                    Ok(root) => format!("{:.17e}", root.alpha_sq),
                    Err(_) => String::from("nan"),
                }
            } else {
                String::from("nan")
            };
            writeln!(
                body,
                "{lambda:.6e},{:.17e},{:.17e},{},{:.17e},{},{:.3e},{:.6e},{root_alpha}",
                r.w_star,
                r.log_gap,
                fmt_opt(r.energy),
                r.alpha_sq,
                r.iterations,
                r.residual,
                r.contraction,
            )
            .ok();
            self.say(&format!(
                "bs: lambda = {lambda}: w = {:.10e}, log-gap = {:.4}",
                r.w_star, r.log_gap
            ));
        }
        self.write("bs.csv", &body)?;
        Ok(())
    }

    // -- direct solver ------------------------------------------------------

    pub fn run_direct(&self) -> RunResult {
        let spec = self.potential()?;
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.direct.max(2))?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let proj = project_potential(&spec, &basis, grid, self.cfg.modes.nu)?;
        let lambda = *self
            .cfg
            .coupling
            .lambda
            .first()
            .ok_or_else(|| RunError::Config("coupling.lambda must not be empty".into()))?;
        // Shift estimate from the BS route when the gap is representable.
        let shift = solve_implicit(
            lambda,
            &spec,
            &basis,
            grid,
            &BsOptions {
                n_modes: self.cfg.modes.bs.min(basis.n_modes),
                nu: self.cfg.modes.nu,
                ..BsOptions::default()
            },
        )
        .ok()
        .and_then(|r| {
            let kappa1_sq = basis.kappa_sq(1);
            if r.log_gap > -25.0 {
                Some(kappa1_sq - 1.5 * r.log_gap.exp())
            } else {
                None
            }
        });
        let mut body = String::from("l_box,h,n_modes,energy,residual,runtime_s\n");
        let l = self.cfg.solver.box_half_length;
        for &h in &[4.0 * self.cfg.solver.h, 2.0 * self.cfg.solver.h, self.cfg.solver.h] {
            let started = Instant::now();
            let op = assemble(&proj, lambda, l, h, self.cfg.modes.direct)?;
            let r = lowest_eigenvalue(
                &op,
                &EigenOptions { tol: self.cfg.solver.tol, shift, ..Default::default() },
            )?;
            writeln!(
                body,
                "{l:.6e},{h:.6e},{},{:.17e},{:.3e},{:.3}",
                self.cfg.modes.direct,
                r.value,
                r.residual,
                started.elapsed().as_secs_f64(),
            )
            .ok();
            self.say(&format!("direct: h = {h}: E = {:.12e}", r.value));
        }
        self.write("direct_ladder.csv", &body)?;
        Ok(())
    }

    // -- layer pipeline -----------------------------------------------------

    pub fn run_layer_pipeline(&self) -> RunResult {
        self.run_geometry()?;
        let (jet, delta) = self.surface_jet()?;
        let m0 = jet.m0_field();
        if m0.max_abs() == 0.0 {
            return Err(RunError::NoBoundState(
                "planar surface: the mean curvature m0 vanishes identically, so no \
                 curvature-induced bound state is predicted"
                    .into(),
            ));
        }
        self.run_asymptotics()?;

        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.n)?;
        let w1 = w1_fourier(&m0, &basis, 2)?.w1;
        let kappa1 = basis.kappa1();
        let gamma = (delta / 2.0).min(1.0);

        let mut sweep = String::from("eps,w1_eps_sq,log_gap,energy\n");
        for &eps in &self.cfg.layer.eps {
            let w = eps * eps * w1;
            let e = energy_from_w(w, kappa1)?;
            writeln!(sweep, "{eps:.6e},{w:.17e},{:.17e},{}", e.log_gap, fmt_opt(e.energy)).ok();
        }
        writeln!(sweep, "# error_order_gamma,{gamma:.3}").ok();
        self.write("sweep.csv", &sweep)?;

        // Direct bracket at the largest eps (most binding, best resolvable).
        let eps_star = self.cfg.layer.eps.iter().cloned().fold(f64::MIN, f64::max);
        let bopts = BracketOptions {
            n_modes: self.cfg.modes.direct.min(4).max(2),
            nu: self.cfg.modes.nu,
            h: self.cfg.solver.h.max(0.25),
            l_budget: self.cfg.solver.l_budget,
            tol: self.cfg.solver.tol,
            w1_modes: self.cfg.modes.n,
        };
        let bracket = bracket_layer_energy(&jet, self.cfg.layer.a, eps_star, &bopts)?;
        let mut bbody = String::from(
            "eps,resolvable,l_box,predicted_log_gap,box_log_gap_shift,e_minus,e_plus,w_minus,w_plus,w_predicted\n",
        );
        writeln!(
            bbody,
            "{eps_star:.6e},{},{:.6e},{:.17e},{:.6e},{},{},{},{},{:.17e}",
            bracket.resolvable,
            bracket.l_box,
            bracket.predicted_log_gap,
            bracket.box_log_gap_shift,
            fmt_opt(bracket.e_minus),
            fmt_opt(bracket.e_plus),
            fmt_opt(bracket.w_minus),
            fmt_opt(bracket.w_plus),
            bracket.w_predicted,
        )
        .ok();
        self.write("bracket_summary.csv", &bbody)?;
        let mut lbody = String::from("side,l_box,h,n_modes,energy,residual\n");
        for row in &bracket.ladder {
            writeln!(
                lbody,
                "{},{:.6e},{:.6e},{},{:.17e},{:.3e}",
                row.side, row.l_box, row.h, row.n_modes, row.energy, row.residual
            )
            .ok();
        }
        self.write("bracket.csv", &lbody)?;
        if let Some(reason) = &bracket.degrade_reason {
            self.say(&format!("bracket degraded: {reason}"));
        }
        self.say("pipeline-layer: wrote sweep.csv, bracket_summary.csv");
        Ok(())
    }

    // -- planar pipeline ----------------------------------------------------

    pub fn run_planar_pipeline(&self) -> RunResult {
        let spec = self.potential()?;
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.bs)?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let proj = project_potential(&spec, &basis, grid, self.cfg.modes.nu)?;
        let opts = BsOptions {
            n_modes: self.cfg.modes.bs,
            nu: self.cfg.modes.nu,
            ..BsOptions::default()
        };

        let mut body = String::from(
            "lambda,verdict,w_expansion,w_bs,abs_diff,log_gap_bs,e_bs,e_direct\n",
        );
        let mut slopes: Vec<(f64, f64)> = Vec::new();
        let mut any_state = false;
        for &lambda in &self.cfg.coupling.lambda {
            let exp = expansion_w(lambda, &proj, &basis, Route::Auto)?;
            let verdict = verdict_str(exp.verdict);
            if exp.verdict == Verdict::None {
                writeln!(body, "{lambda:.6e},{verdict},{:.17e},nan,nan,nan,nan,nan", exp.w).ok();
                continue;
            }
            any_state = true;
            let bs = solve_implicit(lambda, &spec, &basis, grid, &opts)?;
            let diff = (bs.w_star - exp.w).abs();
            slopes.push((lambda, diff));
            let e_direct = self.maybe_direct(&spec, lambda, &bs)?;
            writeln!(
                body,
                "{lambda:.6e},{verdict},{:.17e},{:.17e},{:.6e},{:.17e},{},{}",
                exp.w,
                bs.w_star,
                diff,
                bs.log_gap,
                fmt_opt(bs.energy),
                fmt_opt(e_direct),
            )
            .ok();
        }
        let mut summary = String::from("quantity,value\n");
        if slopes.len() >= 2 {
            let slope = loglog_slope(&slopes);
            writeln!(summary, "order_slope_w_bs_minus_w_exp,{slope:.4}").ok();
        }
        writeln!(summary, "bound_state_detected,{any_state}").ok();
        self.write("planar_compare.csv", &body)?;
        self.write("planar_summary.csv", &summary)?;
        if !any_state {
            return Err(RunError::NoBoundState(
                "all couplings verdict 'none': potential repulsive in the mean".into(),
            ));
        }
        self.say("pipeline-planar: wrote planar_compare.csv, planar_summary.csv");
        Ok(())
    }

    /// Direct eigensolve when the gap is resolvable and the box affordable;
    /// Richardson-extrapolated over the two finest ladder rungs.
    fn maybe_direct(
        &self,
        spec: &PotentialSpec,
        lambda: f64,
        bs: &BsResult,
    ) -> Result<Option<f64>, RunError> {
        if bs.log_gap < -25.0 {
            return Ok(None);
        }
        let basis = TransverseBasis::build(self.cfg.layer.a, self.cfg.modes.direct.max(2))?;
        let grid = Grid2D::centered(self.cfg.grid.extent, self.cfg.grid.nodes)
            .map_err(RunError::from)?;
        let proj = project_potential(&spec.clone(), &basis, grid, self.cfg.modes.nu)?;
        let kappa1_sq = basis.kappa_sq(1);
        let shift = Some(kappa1_sq - 1.5 * bs.log_gap.exp());
        let l = self.cfg.solver.box_half_length;
        let mut energies = Vec::new();
        for &h in &[2.0 * self.cfg.solver.h, self.cfg.solver.h] {
            let op = match assemble(&proj, lambda, l, h, self.cfg.modes.direct) {
                Ok(op) => op,
                Err(Error::ResourceLimit(m)) => {
                    self.say(&format!("direct solve skipped: {m}"));
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            };
            let r = lowest_eigenvalue(
                &op,
                &EigenOptions { tol: self.cfg.solver.tol, shift, ..Default::default() },
            )?;
            energies.push(r.value);
        }
        Ok(Some(energies[1] + (energies[1] - energies[0]) / 3.0))
    }

    // -- selftest -----------------------------------------------------------

    pub fn run_selftest(&self) -> RunResult {
        let mut failures = 0usize;
        let mut check = |name: &str, ok: bool, detail: String| {
            if ok {
                println!("PASS {name}");
            } else {
                println!("FAIL {name}: {detail}");
                failures += 1;
            }
        };

        // Overlap identities at a = pi/2.
        let b = TransverseBasis::build(std::f64::consts::FRAC_PI_2, 512)
            .map_err(RunError::from)?;
        let s = b.overlap_sums();
        let t0 = (std::f64::consts::PI.powi(2) - 6.0) / 12.0;
        check(
            "overlap_s0",
            (s.s0 - t0).abs() < 1e-6,
            format!("S0 = {:.12e} vs {t0:.12e}", s.s0),
        );
        check("overlap_s2", (s.s2 - 1.0).abs() < 1e-3, format!("S2 = {:.12e}", s.s2));

        // Macdonald split identity on a lattice.
        let mut worst: f64 = 0.0;
        for i in 1..=120 {
            let u = 0.25 * i as f64;
            let k0 = layerbound::specfun::bessel_k0(u).map_err(RunError::from)?;
            let rec = layerbound::specfun::interp_f(u).map_err(RunError::from)? * u.ln()
                + layerbound::specfun::interp_g(u).map_err(RunError::from)?;
            worst = worst.max((rec - k0).abs() / k0.abs().max(1e-300));
        }
        check("bessel_split", worst < 1e-12, format!("worst rel {worst:.3e}"));

        // Route agreement on a small Gaussian bump.
        let grid = Grid2D::centered(8.0, 97).map_err(RunError::from)?;
        let jet = build_surface_jet(
            &SurfaceInput::Analytic(layerbound::geometry::AnalyticSurface::gaussian_bump(
                1.0, 1.0,
            )),
            grid,
        )
        .map_err(RunError::from)?;
        let m0 = jet.m0_field();
        let basis = TransverseBasis::build(0.5, 16).map_err(RunError::from)?;
        let real = w1_realspace(&m0, &basis, Route::Fft).map_err(RunError::from)?;
        let four = w1_fourier(&m0, &basis, 2).map_err(RunError::from)?;
        let rel = (real.w1 - four.w1).abs() / real.w1.abs();
        check("w1_routes", rel < 1e-3, format!("rel diff {rel:.3e}"));

        if failures > 0 {
            Err(RunError::Failure(format!("{failures} selftest checks failed")))
        } else {
            Ok(())
        }
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Exists => "exists",
        Verdict::ExistsZeroMean => "exists_zero_mean",
        Verdict::None => "none",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.17e}"),
        None => "nan".into(),
    }
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.max(1e-300).ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

