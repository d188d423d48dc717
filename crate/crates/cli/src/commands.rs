use std::path::Path;
use std::sync::Arc;

use pconvex::cohomology::{self, BettiReport, VanishingVerdict};
use pconvex::complex::io::{read_form, write_form};
use pconvex::positivity::PointVerdict;
use pconvex::solver::{check_basic_estimate, check_prop_estimate, solve_with, BasicEstimateReport, PropEstimateReport};
use pconvex::weights::{l_table, LValue};
use pconvex::{build_weight_chain, psh_on_grid, Complex, GridDomain, ScalarField, SolveReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

pub struct Context {
    pub config: RunConfig,
    pub grid: Arc<GridDomain>,
    pub rho: ScalarField,
    pub psi: ScalarField,
    pub config_hash: String,
    pub quiet: bool,
}

/// Every JSON report is wrapped in this, so each output file names the
/// config and grid it came from.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    grid_hash: String,
    files: Vec<String>,
    report: &'a T,
}

impl Context {
    pub fn new(config: RunConfig, quiet: bool) -> Result<Self, Failure> {
        Ok(Context {
            grid: config.grid()?,
            rho: config.rho()?,
            psi: config.psi()?,
            config_hash: config.hash(),
            config,
            quiet,
        })
    }

    fn out(&self) -> &Path {
        &self.config.output
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_report<T: Serialize>(&self, command: &str, report: &T, files: Vec<String>) -> Result<(), Failure> {
        std::fs::create_dir_all(self.out()).map_err(pconvex::Error::from)?;
        let env = Envelope {
            command,
            config_hash: &self.config_hash,
            grid_hash: self.grid.hash(),
            files,
            report,
        };
        let path = self.out().join(format!("{command}.json"));
        let mut text = serde_json::to_string_pretty(&env).map_err(pconvex::Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(pconvex::Error::from)?;
        self.say(format!("report: {}", path.display()));
        Ok(())
    }
}

#[derive(Serialize)]
pub struct ConvexityReport {
    pub p: usize,
    pub certified: bool,
    pub all_member: bool,
    pub min_margin: f64,
    pub evaluated_nodes: usize,
    pub excluded_nodes: usize,
    pub witness: Option<PointVerdict>,
    pub l_table: Vec<LValue>,
}

pub fn analyze(ctx: &Context) -> Result<u8, Failure> {
    let p = ctx.config.p;
    let psh = psh_on_grid(&ctx.rho, &ctx.grid, p, ctx.config.tolerances.positivity)?;
    let table = l_table(&ctx.rho, &ctx.grid, p)?;
    let report = ConvexityReport {
        p,
        certified: psh.all_strict,
        all_member: psh.all_member,
        min_margin: psh.min_margin,
        evaluated_nodes: psh.points.len(),
        excluded_nodes: psh.excluded_nodes.len(),
        witness: psh.witness().cloned(),
        l_table: table,
    };
    ctx.say(format!("{:>8}  {:>14}  {:>8}", "m", "L^(m)", "node"));
    for l in &report.l_table {
        ctx.say(format!("{:>8}  {:>14.6e}  {:>8}", l.m, l.value, l.node));
    }
    ctx.write_report("analyze", &report, Vec::new())?;
    if report.certified {
        ctx.say(format!("certified: strictly {p}-psh, min margin {:.6e}", report.min_margin));
        Ok(0)
    } else {
        let w = report.witness.as_ref().expect("uncertified reports carry a witness");
        ctx.say(format!(
            "not certified: lambda_1^[{p}] = {:.6e} at {:?} (node {:?})",
            w.verdict.margin, w.point, w.node
        ));
        Ok(3)
    }
}

pub fn weights(ctx: &Context) -> Result<u8, Failure> {
    let chain = build_weight_chain(&ctx.rho, Some(&ctx.psi), &ctx.grid, &ctx.config.weight_options())?;
    chain.write(ctx.out())?;
    let summary = chain.summary();
    ctx.say(format!(
        "degree {}: phi in [{:.4e}, {:.4e}], mu_min {:.4e}, invariants {}",
        summary.degree,
        summary.phi_range[0],
        summary.phi_range[1],
        summary.mu_min,
        if summary.invariants.holds { "hold" } else { "FAIL" }
    ));
    let files = ["weights.json", "phi.csv", "phi.json", "psi.csv", "psi.json", "mu.csv", "mu.json"]
        .map(String::from)
        .to_vec();
    ctx.write_report("weights_run", &summary, files)?;
    Ok(if summary.invariants.holds { 0 } else { 3 })
}

pub fn solve(ctx: &Context, eta_path: &Path) -> Result<u8, Failure> {
    let k = ctx.config.degree();
    let chain = build_weight_chain(&ctx.rho, Some(&ctx.psi), &ctx.grid, &ctx.config.weight_options())?;
    let complex = Complex::new(ctx.grid.clone())?;
    let eta = read_form(eta_path, complex.space(k))?;
    let (alpha, report): (_, SolveReport) = solve_with(&complex, &eta, &chain, &ctx.config.solve_options())?;
    std::fs::create_dir_all(ctx.out()).map_err(pconvex::Error::from)?;
    write_form(&alpha, complex.space(k - 1), ctx.out(), "alpha")?;
    ctx.say(format!(
        "converged: residual {:.3e} after {}/{} iterations, minimality gap {:.3e}",
        report.residual, report.iterations, report.max_iter, report.minimality_gap
    ));
    ctx.write_report("solve", &report, vec!["alpha.json".into()])?;
    Ok(0)
}

fn all_degrees(grid: &GridDomain) -> Vec<usize> {
    (0..=grid.dim()).collect()
}

fn betti_table(ctx: &Context, r: &BettiReport) {
    ctx.say(format!("{:>3}  {:>8}  {:>8}  {:>8}  {:>5}", "k", "dim", "rank d", "nullity", "b_k"));
    for d in &r.degrees {
        ctx.say(format!(
            "{:>3}  {:>8}  {:>8}  {:>8}  {:>5}",
            d.degree, d.dim, d.rank_d, d.nullity, d.betti
        ));
    }
}

pub fn betti(ctx: &Context) -> Result<u8, Failure> {
    let r = cohomology::betti(&ctx.grid, &all_degrees(&ctx.grid))?;
    betti_table(ctx, &r);
    ctx.write_report("betti", &r, Vec::new())?;
    if r.euler_consistent() == Some(false) {
        log::error!("Euler characteristic mismatch: {:?}", r.euler);
        return Ok(4);
    }
    Ok(0)
}

pub fn verify(ctx: &Context) -> Result<u8, Failure> {
    let p = ctx.config.p;
    let v: VanishingVerdict = cohomology::verify_vanishing(&ctx.grid, &ctx.rho, p)?;
    betti_table(ctx, &v.betti);
    if v.certified_convexity {
        ctx.say(format!("certified strictly {p}-convex: claims b_k = 0 for k >= {p}"));
    } else {
        ctx.say(format!("not certified at p = {p}: no vanishing claimed"));
    }
    ctx.say(format!("theorem consistent: {}", v.theorem_consistent));
    ctx.write_report("verify", &v, Vec::new())?;
    Ok(if v.theorem_consistent { 0 } else { 4 })
}

#[derive(Serialize)]
pub struct EstimatesReport {
    pub basic: BasicEstimateReport,
    pub weighted: PropEstimateReport,
    /// The expression used as the weight of the pointwise check.
    pub phi: String,
}

pub fn check_estimates(ctx: &Context) -> Result<u8, Failure> {
    let k = ctx.config.degree();
    let est = &ctx.config.estimates;
    let chain = build_weight_chain(&ctx.rho, Some(&ctx.psi), &ctx.grid, &ctx.config.weight_options())?;
    let basic = check_basic_estimate(&chain, k, est.trials, ctx.config.seed, est.c_basic)?;
    let phi_text = ctx.config.phi.clone().unwrap_or_else(|| ctx.config.rho.clone());
    let phi = ScalarField::parse(&phi_text, ctx.config.dim()).map_err(|e| Failure::Config(format!("phi: {e}")))?;
    let weighted = check_prop_estimate(&phi, &ctx.psi, &ctx.grid, k, est.trials, ctx.config.seed, est.c_prop)?;
    ctx.say(format!(
        "basic estimate: max ratio {:.4e} (C = {}) {}",
        basic.stats.max_ratio,
        est.c_basic,
        if basic.passed { "ok" } else { "EXCEEDED" }
    ));
    ctx.say(format!(
        "weighted estimate: max ratio {:.4e}, with gradient term {:.4e} (C = {}) {}",
        weighted.base.max_ratio,
        weighted.stronger.max_ratio,
        est.c_prop,
        if weighted.passed_base { "ok" } else { "EXCEEDED" }
    ));
    let passed = basic.passed && weighted.passed_base;
    let report = EstimatesReport {
        basic,
        weighted,
        phi: phi_text,
    };
    ctx.write_report("check_estimates", &report, Vec::new())?;
    Ok(if passed { 0 } else { 3 })
}
