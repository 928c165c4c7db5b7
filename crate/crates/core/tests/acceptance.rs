//! Acceptance criteria A1–A9. Runs as a plain binary and prints one line per
//! criterion; the process exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};
use std::sync::Arc;
use std::time::{Duration, Instant};

use aglab::domain::exact_limit_field;
use aglab::entropy::{boundary_flux, entropy_production, f0_jump, f0_tilde_two_frames, frame_report, EntropyGenerator, Frame};
use aglab::functional::{energy, energy_gradient, energy_limit_table, EnergyParams, MinimizeOptions};
use aglab::kinetic::*;
use aglab::lagrangian::{ensemble_representation_check, EnsembleOptions, LimitTrace};
use aglab::optim::Method;
use aglab::{Domain, Grid, NodeClass, Region, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn ellipse() -> Domain {
    Domain::ellipse(1.0, 0.5).unwrap()
}

fn stadium() -> Domain {
    Domain::stadium(2.0, 1.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Least-squares slope of `log v` against `log h`.
fn empirical_order(h: &[f64], v: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|h| h.ln()).collect();
    let y: Vec<f64> = v.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

const LEVELS: [f64; 3] = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];

fn a1() -> Outcome {
    let d = ellipse();
    let g = Arc::new(Grid::covering(&d, 1.0 / 256.0).unwrap());
    let (_, m) = exact_limit_field(&d, &g).unwrap();
    let jump = f0_jump(&d.ridge()).unwrap();
    let two = f0_tilde_two_frames(&m).value;
    let flux = boundary_flux(&d, &Frame::E, 8192).unwrap();
    let worst = rel(jump, two).max(rel(jump, flux)).max(rel(two, flux));
    Outcome {
        pass: worst <= 0.02,
        detail: format!("f0_jump {jump:.6} two_frames {two:.6} flux {flux:.6} max_rel {worst:.2e} (<= 2e-2)"),
    }
}

fn a2() -> Outcome {
    let opts = MinimizeOptions { optimizer: Method::Lbfgs, max_iter: 200_000, tol: 1e-6, ..Default::default() };
    let eps = [0.4, 0.2, 0.1];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, d, gap_bound) in [("ellipse", ellipse(), true), ("stadium", stadium(), false)] {
        let g = Arc::new(Grid::with_resolution(&d, 128).unwrap());
        let (table, _) = energy_limit_table(&d, &g, &eps, &opts).unwrap();
        let last = table.rows.last().unwrap();
        let converged = table.rows.iter().all(|r| r.converged);
        let w11: Vec<String> = table.rows.iter().map(|r| format!("{:.4}", r.w11)).collect();
        let gaps: Vec<String> = table.rows.iter().map(|r| format!("{:.4}", r.gap)).collect();
        let mut ok = table.w11_strictly_decreasing && table.gap_monotone && converged;
        if gap_bound {
            ok &= last.gap <= 0.25;
        }
        pass &= ok;
        parts.push(format!(
            "{name}: w11 [{}] gap [{}]{} converged {converged}",
            w11.join(", "),
            gaps.join(", "),
            if gap_bound { " (gap <= 0.25 at eps 0.1)" } else { "" }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn a3() -> Outcome {
    let d = ellipse();
    let mut tv_eps = Vec::new();
    let mut tv_e = 0.0;
    for &h in &LEVELS {
        let g = Arc::new(Grid::covering(&d, h).unwrap());
        let (_, m) = exact_limit_field(&d, &g).unwrap();
        tv_eps.push(entropy_production(&m, &Frame::EPS).tv(Region::Interior));
        tv_e = entropy_production(&m, &Frame::E).tv(Region::Interior);
    }
    let order = empirical_order(&LEVELS, &tv_eps);
    let ratio = tv_eps[2] / tv_e;
    let decreasing = tv_eps.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: decreasing && order >= 0.8 && ratio <= 0.05,
        detail: format!(
            "tv_eps [{:.4e}, {:.4e}, {:.4e}] order {order:.3} (>= 0.8) ratio to e-frame {ratio:.4} (<= 0.05)",
            tv_eps[0], tv_eps[1], tv_eps[2]
        ),
    }
}

fn a4() -> Outcome {
    let d = ellipse();
    let g = Arc::new(Grid::covering(&d, 1.0 / 256.0).unwrap());
    let (_, m) = exact_limit_field(&d, &g).unwrap();
    let rep = frame_report(&d, &m, Frame::E).unwrap();
    let fraction = rep.tv_near_ridge / rep.tv_interior;
    let normals = d.ridge().sample(1000);
    let vertical = normals.iter().filter(|p| p.normal[0].abs() <= 1e-12 && (p.normal[1].abs() - 1.0).abs() <= 1e-12).count();
    let census = vertical as f64 / normals.len() as f64;
    Outcome {
        pass: fraction >= 0.95 && census == 1.0 && !normals.is_empty(),
        detail: format!("tv within 3h {fraction:.4} (>= 0.95) vertical normals {vertical}/{}", normals.len()),
    }
}

fn a5() -> Outcome {
    let betas = [FRAC_PI_8, FRAC_PI_4, PI / 3.0, 3.0 * FRAC_PI_8, FRAC_PI_2];
    let gens = [EntropyGenerator::cos_k(2), EntropyGenerator::sin_k(2), EntropyGenerator::cos_k(4), EntropyGenerator::sin_k(4)];
    let mut identity = 0.0_f64;
    for &b in &betas {
        for gen in &gens {
            let (lhs, rhs) = jump_identity_check(b, gen).unwrap();
            identity = identity.max((lhs - rhs).abs());
        }
    }
    let mut norm = 0.0_f64;
    for i in 1..=100 {
        let beta = PI * i as f64 / 101.0;
        norm = norm.max((gbar_beta(beta).unwrap().tv() - 1.0).abs());
    }
    let mut outputs = Vec::new();
    for i in 1..=20 {
        let beta = PI * i as f64 / 21.0;
        for s_bar in [0.0, 0.9, FRAC_PI_2, 3.0 * FRAC_PI_2] {
            outputs.push(minimal_disintegration(Disintegration::Jump { beta, s_bar }).unwrap());
        }
    }
    for s_bar in [0.0, 1.3, FRAC_PI_2] {
        for sign in [1.0, -1.0] {
            outputs.push(minimal_disintegration(Disintegration::NonJump { s_bar, sign }).unwrap());
        }
    }
    let minimal = outputs.iter().filter(|mu| minimality_check(mu, &DEFAULT_ALPHAS)).count();
    let mut perturbed = 0;
    let mut flagged = 0;
    for mu in &outputs {
        for a in [0.05, -0.05] {
            let p = mu.add_constant(a);
            let p = p.scaled(1.0 / p.tv());
            perturbed += 1;
            if !minimality_check(&p, &DEFAULT_ALPHAS) {
                flagged += 1;
            }
        }
    }
    Outcome {
        pass: identity <= 1e-8 && norm <= 1e-10 && minimal == outputs.len() && flagged == perturbed,
        detail: format!(
            "identity {identity:.2e} (<= 1e-8) normalization {norm:.2e} (<= 1e-10) minimal {minimal}/{} perturbations flagged {flagged}/{perturbed}",
            outputs.len()
        ),
    }
}

fn a6() -> Outcome {
    let d = ellipse();
    let bank = TestBank::ridge_default(&d);
    let mut res = Vec::new();
    let mut zero = 0.0;
    for &h in &LEVELS {
        let g = Arc::new(Grid::covering(&d, h).unwrap());
        let (_, m) = exact_limit_field(&d, &g).unwrap();
        let sigma = KineticField::ridge(&d, &g).unwrap();
        res.push(kinetic_residual(&m, &sigma, &bank).unwrap().max);
        zero = kinetic_residual(&m, &KineticField::empty(), &bank).unwrap().max;
    }
    let order = empirical_order(&LEVELS, &res);
    let ratio = res[2] / zero;
    Outcome {
        pass: order >= 0.8 && ratio <= 0.1,
        detail: format!(
            "residual [{:.3e}, {:.3e}, {:.3e}] order {order:.3} (>= 0.8) sigma=0 {zero:.3e} ratio {ratio:.2e} (<= 0.1)",
            res[0], res[1], res[2]
        ),
    }
}

/// Relative error of the full gradient against coordinatewise central
/// differences at a random perturbation of the limit field.
fn gradient_error(d: &Domain, g: &Arc<Grid>, p: &EnergyParams, seed: u64) -> f64 {
    let (base, _) = exact_limit_field(d, g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = base;
    for k in 0..g.len() {
        if g.class(k) == NodeClass::Interior {
            u.values[k] += 0.02 * rng.random_range(-1.0..1.0);
        }
    }
    let grad = energy_gradient(&u, p).unwrap();
    let t = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..g.len() {
        if g.class(k) != NodeClass::Interior {
            continue;
        }
        let mut v = u.values.clone();
        v[k] += t;
        let up = energy(&ScalarField::from_vec(g.clone(), v.clone()), p).unwrap().total;
        v[k] -= 2.0 * t;
        let dn = energy(&ScalarField::from_vec(g.clone(), v), p).unwrap().total;
        let fd = (up - dn) / (2.0 * t);
        num += (fd - grad.values[k]).powi(2);
        den += grad.values[k].powi(2);
    }
    (num / den).sqrt()
}

fn a7() -> Outcome {
    let d = ellipse();
    let g = Arc::new(Grid::covering(&d, 1.0 / 16.0).unwrap());
    let mut worst = 0.0_f64;
    for seed in 0..10 {
        for p in [EnergyParams::new(0.2, 0.0, 2), EnergyParams::new(0.2, 0.5, 1)] {
            worst = worst.max(gradient_error(&d, &g, &p, seed));
        }
    }
    Outcome { pass: worst <= 1e-5, detail: format!("10 states x p in {{2, 1}}: max relative error {worst:.2e} (<= 1e-5)") }
}

fn a8() -> Outcome {
    let field = LimitTrace::new(ellipse(), 2.0 / 256.0).unwrap();
    let opts = EnsembleOptions { n: 100_000, seed: 7, ..Default::default() };
    let start = Instant::now();
    let (_, rep) = ensemble_representation_check(&field, &opts).unwrap();
    let elapsed = start.elapsed();
    let (_, again) = ensemble_representation_check(&field, &opts).unwrap();
    let same = serde_json::to_string(&rep).unwrap() == serde_json::to_string(&again).unwrap();
    let pass = rep.max_abs_z <= 4.0
        && rep.concentration >= 0.95
        && (0.95..=1.05).contains(&rep.cancellation_ratio)
        && rep.ks_p >= 0.01
        && elapsed < Duration::from_secs(300)
        && same;
    Outcome {
        pass,
        detail: format!(
            "max |z| {:.3} (<= 4) concentration {:.4} (>= 0.95) cancellation {:.4} (in [0.95, 1.05]) ks p {:.3} (>= 0.01) jumps {} stuck {} reproducible {same} run {:.1}s",
            rep.max_abs_z,
            rep.concentration,
            rep.cancellation_ratio,
            rep.ks_p,
            rep.jumps,
            rep.stuck,
            elapsed.as_secs_f64()
        ),
    }
}

fn a9() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, d) in [("ellipse", ellipse()), ("stadium", stadium())] {
        let g = Grid::covering(&d, 1.0 / 256.0).unwrap();
        let rep = sign_structure_report(&KineticField::ridge(&d, &g).unwrap());
        let ok = rep.nonnegative(1e-12) && rep.entries > 0;
        pass &= ok;
        parts.push(format!("{name} margin {:.3e} entries {}", rep.margin_absolute, rep.entries));
    }
    let tilted = sign_structure_report(&tilted_jump_field(PI / 3.0, FRAC_PI_4).unwrap());
    let flagged = !tilted.nonnegative(1e-12);
    pass &= flagged;
    parts.push(format!("tilted control margin {:.3e} flagged {flagged}", tilted.margin_absolute));
    Outcome { pass, detail: parts.join("; ") }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] =
        [("A1", a1), ("A2", a2), ("A3", a3), ("A4", a4), ("A5", a5), ("A6", a6), ("A7", a7), ("A8", a8), ("A9", a9)];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        });
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{name} {verdict} [{:.1}s] {}", start.elapsed().as_secs_f64(), out.detail);
        if !out.pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
