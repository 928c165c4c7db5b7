use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use aglab::domain::exact_limit_field;
use aglab::entropy::{
    boundary_flux, entropy_production, f0_jump, f0_tilde_sup, f0_tilde_two_frames, frame_report, ridge_report,
    EntropyGenerator, Frame, FrameReport, TwoFrameValue,
};
use aglab::functional::{energy_limit_table_from, EnergySplit, LimitTable, MinimizeResult};
use aglab::kinetic::{
    gbar_beta, jump_identity_check, kinetic_residual, minimality_check, minimal_disintegration, sign_structure_report,
    tilted_jump_field, Disintegration, KineticField, SignStructureReport, TestBank, DEFAULT_ALPHAS,
};
use aglab::lagrangian::{ensemble_representation_check, EnsembleOptions, EnsembleReport, LimitTrace};
use aglab::optim::StopReason;
use aglab::{Domain, Grid, ScalarField};
use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use crate::config::Loaded;
use crate::report::{num, Report, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Minimize,
    LimitTable,
    EntropyReport,
    KineticCheck,
    Characteristics,
    All,
}

/// What a pipeline left behind besides its files.
#[derive(Debug, Default)]
pub struct Status {
    /// Values of `eps` whose minimization stopped before reaching `tol`.
    pub not_converged: Vec<f64>,
}

pub struct Experiment {
    pub loaded: Loaded,
    pub domain: Domain,
    pub grid: Arc<Grid>,
}

impl Experiment {
    pub fn new(loaded: Loaded) -> Result<Self> {
        let domain = loaded.config.domain.build()?;
        let grid = match (loaded.config.grid.resolution, loaded.config.grid.h) {
            (Some(n), _) => Grid::with_resolution(&domain, n)?,
            (None, Some(h)) => Grid::covering(&domain, h)?,
            (None, None) => unreachable!("validated on load"),
        };
        Ok(Experiment { loaded, domain, grid: Arc::new(grid) })
    }
}

pub fn run(cmd: Command, ctx: &Experiment, out: &mut Report) -> Result<Status> {
    let mut status = Status::default();
    let c = &ctx.loaded.config;
    match cmd {
        Command::Minimize => {
            let (_, runs) = solve(ctx)?;
            emit_runs(ctx, &runs, out, &mut status)?;
        }
        Command::LimitTable => {
            let (table, runs) = solve(ctx)?;
            emit_table(&table, out)?;
            note_convergence(&runs, &mut status);
        }
        Command::EntropyReport => entropy_report(ctx, out)?,
        Command::KineticCheck => kinetic_check(ctx, out)?,
        Command::Characteristics => characteristics(ctx, out)?,
        Command::All => {
            let (table, runs) = solve(ctx)?;
            emit_runs(ctx, &runs, out, &mut status)?;
            emit_table(&table, out)?;
            if c.entropy.enabled {
                entropy_report(ctx, out)?;
            }
            if c.kinetic.enabled {
                kinetic_check(ctx, out)?;
            }
            if c.characteristics.enabled {
                characteristics(ctx, out)?;
            }
        }
    }
    Ok(status)
}

fn solve(ctx: &Experiment) -> Result<(LimitTable, Vec<MinimizeResult>)> {
    let m = &ctx.loaded.config.minimize;
    let warm = match &m.warm_start {
        Some(p) => {
            let path = ctx.loaded.resolve(p);
            let u = ScalarField::read_dump(ctx.grid.clone(), &path).with_context(|| format!("warm start {}", path.display()))?;
            Some(u)
        }
        None => None,
    };
    Ok(energy_limit_table_from(&ctx.domain, &ctx.grid, &m.eps_list, &m.options(), warm.as_ref())?)
}

fn note_convergence(runs: &[MinimizeResult], status: &mut Status) {
    status.not_converged = runs.iter().filter(|r| !r.converged).map(|r| r.eps).collect();
}

#[derive(Serialize)]
struct RunSummary {
    eps: f64,
    iterations: usize,
    converged: bool,
    stop: StopReason,
    eta_final: f64,
    final_energy: EnergySplit,
    final_grad_norm: f64,
    field: String,
}

#[derive(Serialize)]
struct MinimizeSummary {
    domain: Domain,
    nx: usize,
    ny: usize,
    h: f64,
    runs: Vec<RunSummary>,
}

fn emit_runs(ctx: &Experiment, runs: &[MinimizeResult], out: &mut Report, status: &mut Status) -> Result<()> {
    let mut history = Table::new(&["eps", "iter", "total", "hessian", "potential", "grad_norm"]);
    let mut summaries = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let name = format!("u_eps{i}.dat");
        let path = out.path(&name);
        r.u.write_dump(&path)?;
        out.record(&path);
        let mut side = path.into_os_string();
        side.push(".json");
        out.record(side.as_ref());
        for (k, (e, g)) in r.energy_history.iter().zip(&r.grad_norm_history).enumerate() {
            history.push(vec![num(r.eps), k.to_string(), num(e.total), num(e.hessian_term), num(e.potential_term), num(*g)]);
        }
        summaries.push(RunSummary {
            eps: r.eps,
            iterations: r.iterations,
            converged: r.converged,
            stop: r.stop,
            eta_final: r.eta_final,
            final_energy: r.final_energy,
            final_grad_norm: r.grad_norm_history.last().copied().unwrap_or(f64::NAN),
            field: name,
        });
    }
    out.table("minimize_history", &history)?;
    let g = &ctx.grid;
    out.json("minimize", &MinimizeSummary { domain: ctx.domain, nx: g.nx, ny: g.ny, h: g.h, runs: summaries })?;
    note_convergence(runs, status);
    Ok(())
}

fn emit_table(table: &LimitTable, out: &mut Report) -> Result<()> {
    let mut t = Table::new(&["eps", "total", "hessian", "potential", "w11", "gap", "iterations", "converged"]);
    for r in &table.rows {
        t.push(vec![
            num(r.eps),
            num(r.total),
            num(r.hessian),
            num(r.potential),
            num(r.w11),
            num(r.gap),
            r.iterations.to_string(),
            u8::from(r.converged).to_string(),
        ]);
    }
    out.table("limit_table", &t)?;
    out.json("limit_table", table)
}

#[derive(Serialize)]
struct EntropySummary {
    f0_jump: f64,
    ridge_degenerate: bool,
    two_frames: TwoFrameValue,
    frame_sup: f64,
    frames: usize,
    flux_e: f64,
    flux_eps: f64,
    reports: Vec<FrameReport>,
    h: f64,
}

fn entropy_report(ctx: &Experiment, out: &mut Report) -> Result<()> {
    let cfg = &ctx.loaded.config.entropy;
    let (d, g) = (&ctx.domain, &ctx.grid);
    let ridge = d.ridge();
    let (u, m) = exact_limit_field(d, g)?;
    let summary = EntropySummary {
        f0_jump: f0_jump(&ridge)?,
        ridge_degenerate: ridge.is_degenerate(),
        two_frames: f0_tilde_two_frames(&m),
        frame_sup: f0_tilde_sup(&m, cfg.frames),
        frames: cfg.frames,
        flux_e: boundary_flux(d, &Frame::E, cfg.flux_nodes)?,
        flux_eps: boundary_flux(d, &Frame::EPS, cfg.flux_nodes)?,
        reports: vec![frame_report(d, &m, Frame::E)?, frame_report(d, &m, Frame::EPS)?],
        h: g.h,
    };
    out.json("entropy", &summary)?;
    let mut t = Table::new(&["x1", "beta", "s_bar", "jump_density"]);
    if !ridge.is_degenerate() {
        for r in ridge_report(&ridge, cfg.ridge_samples) {
            t.push(vec![num(r.x1), num(r.beta), num(r.s_bar), num(r.jump_density)]);
        }
    }
    out.table("ridge", &t)?;
    for (name, field) in [("u_limit.dat", None), ("production_e.dat", Some(Frame::E)), ("production_eps.dat", Some(Frame::EPS))] {
        let path = out.path(name);
        match field {
            None => u.write_dump(&path)?,
            Some(f) => entropy_production(&m, &f).write_dump(&path)?,
        }
        out.record(&path);
        let mut side = path.into_os_string();
        side.push(".json");
        out.record(side.as_ref());
    }
    Ok(())
}

#[derive(Serialize)]
struct Minimality {
    outputs: usize,
    minimal: usize,
    perturbations: usize,
    flagged: usize,
}

#[derive(Serialize)]
struct ResidualLevel {
    h: f64,
    residual: f64,
    residual_zero: f64,
}

#[derive(Serialize)]
struct KineticSummary {
    max_identity_error: f64,
    max_normalization_error: f64,
    minimality: Minimality,
    residuals: Vec<ResidualLevel>,
    residual_order: Option<f64>,
    sign_structure: SignStructureReport,
    tilted_control: SignStructureReport,
    tilted_control_flagged: bool,
}

/// Least-squares slope of `log v` against `log h`.
pub fn empirical_order(h: &[f64], v: &[f64]) -> Option<f64> {
    if h.len() < 2 || v.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let x: Vec<f64> = h.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = v.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn kinetic_check(ctx: &Experiment, out: &mut Report) -> Result<()> {
    let cfg = &ctx.loaded.config.kinetic;
    let d = &ctx.domain;

    let mut identity = Table::new(&["beta", "generator", "lhs", "rhs", "error"]);
    let mut max_identity: f64 = 0.0;
    for &beta in &cfg.betas {
        for &k in &cfg.harmonics {
            for (name, gen) in [(format!("cos{k}"), EntropyGenerator::cos_k(k)), (format!("sin{k}"), EntropyGenerator::sin_k(k))] {
                let (lhs, rhs) = jump_identity_check(beta, &gen)?;
                max_identity = max_identity.max((lhs - rhs).abs());
                identity.push(vec![num(beta), name, num(lhs), num(rhs), num((lhs - rhs).abs())]);
            }
        }
    }
    out.table("kinetic_identity", &identity)?;

    let n = cfg.normalization_points;
    let mut max_norm: f64 = 0.0;
    let mut outputs = Vec::new();
    for i in 1..=n {
        let beta = PI * i as f64 / (n + 1) as f64;
        max_norm = max_norm.max((gbar_beta(beta)?.tv() - 1.0).abs());
        for s_bar in [0.0, FRAC_PI_2] {
            outputs.push(minimal_disintegration(Disintegration::Jump { beta, s_bar })?);
        }
    }
    for sign in [1.0, -1.0] {
        outputs.push(minimal_disintegration(Disintegration::NonJump { s_bar: 0.0, sign })?);
    }
    let minimal = outputs.iter().filter(|mu| minimality_check(mu, &DEFAULT_ALPHAS)).count();
    let mut flagged = 0;
    for mu in &outputs {
        for a in [0.05, -0.05] {
            let p = mu.add_constant(a);
            if !minimality_check(&p.scaled(1.0 / p.tv()), &DEFAULT_ALPHAS) {
                flagged += 1;
            }
        }
    }

    let bank = TestBank::ridge_default(d);
    let mut residuals = Vec::new();
    let mut table = Table::new(&["h", "residual", "residual_zero"]);
    let mut sign = None;
    for &level in &cfg.levels {
        let g = Arc::new(Grid::covering(d, 1.0 / level as f64)?);
        let (_, m) = exact_limit_field(d, &g)?;
        let sigma = KineticField::ridge(d, &g)?;
        let r = kinetic_residual(&m, &sigma, &bank)?.max;
        let z = kinetic_residual(&m, &KineticField::empty(), &bank)?.max;
        table.push(vec![num(g.h), num(r), num(z)]);
        residuals.push(ResidualLevel { h: g.h, residual: r, residual_zero: z });
        sign = Some(sign_structure_report(&sigma));
    }
    out.table("kinetic_residual", &table)?;
    let hs: Vec<f64> = residuals.iter().map(|r| r.h).collect();
    let vs: Vec<f64> = residuals.iter().map(|r| r.residual).collect();
    let tilted = sign_structure_report(&tilted_jump_field(PI / 3.0, FRAC_PI_4)?);
    let summary = KineticSummary {
        max_identity_error: max_identity,
        max_normalization_error: max_norm,
        minimality: Minimality { outputs: outputs.len(), minimal, perturbations: 2 * outputs.len(), flagged },
        residual_order: empirical_order(&hs, &vs),
        residuals,
        sign_structure: sign.expect("validated: at least one level"),
        tilted_control_flagged: !tilted.nonnegative(1e-12),
        tilted_control: tilted,
    };
    out.json("kinetic", &summary)
}

#[derive(Serialize)]
struct CharacteristicsSummary {
    skipped: Option<&'static str>,
    report: Option<EnsembleReport>,
    curves: Vec<String>,
}

fn characteristics(ctx: &Experiment, out: &mut Report) -> Result<()> {
    let c = &ctx.loaded.config;
    let cfg = &c.characteristics;
    if ctx.domain.ridge().is_degenerate() {
        return out.json(
            "characteristics",
            &CharacteristicsSummary { skipped: Some("degenerate ridge"), report: None, curves: Vec::new() },
        );
    }
    let field = LimitTrace::new(ctx.domain, 2.0 * cfg.h)?;
    let opts = EnsembleOptions { n: cfg.ensemble, window: cfg.window, dt: cfg.dt, h: cfg.h, seed: c.seed, ..Default::default() };
    let (ens, report) = ensemble_representation_check(&field, &opts)?;
    let mut probes = Table::new(&["t", "bins", "chi2", "z", "within_4sigma"]);
    for p in &report.probes {
        probes.push(vec![num(p.t), p.bins.to_string(), num(p.chi2), num(p.z), num(p.within_4sigma)]);
    }
    out.table("characteristics_probes", &probes)?;
    let mut curves = Vec::new();
    for (i, (curve, _)) in ens.curves.iter().take(cfg.curves).enumerate() {
        let name = format!("curve_{i}.csv");
        out.stamped(&name, |w| curve.write_csv(w))?;
        curves.push(name);
    }
    out.json("characteristics", &CharacteristicsSummary { skipped: None, report: Some(report), curves })
}
