//! Command pipelines behind the CLI.

use std::path::{Path, PathBuf};

use levyx_core::harness::{self, HarnessConfig, SelfTestReport};
use levyx_core::impulse::{curve_decays, ResidualReport, NEGLIGIBLE};
use levyx_core::limit_model::{limit_triplet, SigmaVariant};
use levyx_core::limit_sim::{simulate_limit_ensemble, LimitScheme};
use levyx_core::linalg;
use levyx_core::prelimit::{simulate_prelimit_ensemble, uniform_grid, SimOptions};
use levyx_core::scenario::{load_scenario, Lab, Scenario, ScenarioError};
use levyx_core::{LevyxError, Result, StreamDomain};
use serde_json::json;

use crate::output::{self, num, GnuplotScript, RunArtifact, Table};
use crate::{CharacterizeArgs, Cli, Command, ConvergeArgs, PathKind, ResidualArgs, SimulateArgs, ValidateArgs};

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub verdicts: serde_json::Value,
}

/// Runs one parsed command line, prints diagnostics and appends the run log.
pub fn execute(cli: &Cli, args: &[String]) -> i32 {
    let started = output::timestamp();
    let mut scenario: Option<Scenario> = None;
    let result = dispatch(&cli.command, &mut scenario);
    let (exit_code, outputs, verdicts) = match result {
        Ok(o) => (o.exit_code, o.outputs, o.verdicts),
        Err(e) => {
            report_error(&e);
            (e.exit_code(), Vec::new(), json!({ "error": e.to_string() }))
        }
    };
    let log = cli.runs_log.clone().unwrap_or_else(|| default_log(&cli.command));
    let artifact = RunArtifact {
        scenario: scenario.as_ref().map(Scenario::label).unwrap_or_default(),
        scenario_hash: scenario.as_ref().map(Scenario::hash).unwrap_or_default(),
        command: cli.command.name().into(),
        args: args.to_vec(),
        seed: scenario.as_ref().map_or(0, |s| s.seed),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        started,
        finished: output::timestamp(),
        exit_code,
        verdicts,
    };
    if let Err(e) = output::append_run_log(&log, &artifact) {
        eprintln!("levyx: cannot append run log: {e}");
        return exit_code.max(2);
    }
    exit_code
}

fn report_error(e: &LevyxError) {
    match e {
        LevyxError::Scenario(ScenarioError::Schema(errs)) => {
            for err in errs {
                eprintln!("levyx: schema error at {err}");
            }
        }
        other => eprintln!("levyx: {other}"),
    }
}

fn default_log(command: &Command) -> PathBuf {
    let dir = match command {
        Command::Validate(_) => PathBuf::from("."),
        Command::Converge(a) => a.output.clone(),
        Command::Characterize(CharacterizeArgs { output, .. })
        | Command::Simulate(SimulateArgs { output, .. })
        | Command::Residual(ResidualArgs { output, .. }) => match output.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        },
    };
    dir.join("runs.log")
}

fn dispatch(command: &Command, scenario: &mut Option<Scenario>) -> Result<Outcome> {
    let spec = match command {
        Command::Validate(a) => &a.scenario,
        Command::Characterize(a) => &a.scenario,
        Command::Simulate(a) => &a.scenario,
        Command::Converge(a) => &a.scenario,
        Command::Residual(a) => &a.scenario,
    };
    let loaded = load_scenario(spec)?;
    *scenario = Some(loaded.clone());
    match command {
        Command::Validate(a) => validate(&loaded, a),
        Command::Characterize(a) => characterize(&loaded.lab()?, a),
        Command::Simulate(a) => simulate(&loaded.lab()?, a),
        Command::Converge(a) => converge(&loaded.lab()?, a),
        Command::Residual(a) => residual(&loaded.lab()?, a),
    }
}

/// Checklist lines: C1, L1–L4 (together C2), C3 and C4.
pub fn checklist(lab: &Lab, report: &ResidualReport) -> Vec<(String, bool, String)> {
    let xi0 = lab.xi0();
    let mut lines = Vec::new();
    let get = |name: &str| report.check(name).map(|c| (c.name.clone(), c.pass, c.detail.clone()));
    lines.extend(get("C1"));
    lines.push(("L1".into(), true, format!("deterministic initial value, |xi0| = {}", linalg::norm(xi0))));
    lines.extend(get("L2"));
    lines.extend(get("L3"));
    lines.extend(get("L4"));
    let c2 = ["L2", "L3", "L4"].iter().all(|n| report.check(n).is_some_and(|c| c.pass));
    lines.push(("C2".into(), c2, "L1-L4 together".into()));
    lines.extend(get("C3"));
    lines.extend(get("C4"));
    lines
}

pub fn validate(scenario: &Scenario, args: &ValidateArgs) -> Result<Outcome> {
    let lab = scenario.lab()?;
    let report = lab.validate(&args.eps)?;
    println!("scenario {} ({})", scenario.label(), scenario.hash());
    println!(
        "states {}, dimension {}, q_bar = {}, rho = {:?}, pi = {:?}",
        lab.model.n_states(),
        lab.dim(),
        lab.sp.q_bar,
        lab.sp.rho.as_slice(),
        lab.sp.pi.as_slice()
    );
    let lines = checklist(&lab, &report);
    for (name, pass, detail) in &lines {
        println!("[{}] {name}: {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    let verdicts = json!({
        "checks": lines.iter().map(|(n, p, _)| (n.clone(), json!(p))).collect::<serde_json::Map<_, _>>(),
        "balance_residual": report.balance_residual,
    });
    if let Err(e) = report.ensure_pass() {
        eprintln!("levyx: {e}");
        return Ok(Outcome { exit_code: 1, outputs: Vec::new(), verdicts });
    }
    Ok(Outcome { exit_code: 0, outputs: Vec::new(), verdicts })
}

/// Parses `lo:hi:step` into the points `lo, lo + step, …` up to `hi`.
pub fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let bad = || LevyxError::InvalidArgument(format!("u-grid '{spec}' is not lo:hi:step"));
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0 && hi >= lo) {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + step * i as f64).collect())
}

fn product_grid(axis: &[f64], d: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![Vec::new()];
    for _ in 0..d {
        grid = grid
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    grid
}

pub fn characterize(lab: &Lab, args: &CharacterizeArgs) -> Result<Outcome> {
    let d = lab.dim();
    let u_grid = match &args.u_grid {
        Some(spec) => product_grid(&parse_axis(spec)?, d),
        None => linalg::box_grid(&lab.scenario.u_box(), linalg::default_per_axis(d)),
    };
    let variants = if args.variant.is_empty() { vec![lab.default_variant()] } else { args.variant.clone() };
    let triplets = variants
        .iter()
        .map(|&v| limit_triplet(&lab.model, &lab.family, &lab.sp, &lab.r0, &u_grid, v))
        .collect::<Result<Vec<_>>>()?;

    let mut header: Vec<String> = (0..d).map(|k| format!("u_{k}")).collect();
    header.extend((0..d).map(|k| format!("beta_{k}")));
    header.push("lambda".into());
    for v in &variants {
        for i in 0..d {
            for j in i..d {
                header.push(format!("sigma_{v}_{i}_{j}"));
            }
        }
    }
    header.push("jump_law".into());
    let mut table = Table::new(&header)?;
    for (row, u) in u_grid.iter().enumerate() {
        let first = &triplets[0].points[row];
        let mut fields: Vec<String> = u.iter().map(|&x| num(x)).collect();
        fields.extend(first.beta.iter().map(|&x| num(x)));
        fields.push(num(first.lambda));
        for t in &triplets {
            let s = &t.points[row].sigma;
            for i in 0..d {
                for j in i..d {
                    fields.push(num(s[(i, j)]));
                }
            }
        }
        fields.push(first.jump_law.descriptor());
        table.row(&fields)?;
    }
    table.write(&args.output)?;
    let mut outputs = vec![args.output.clone()];
    if args.gnuplot {
        let mut gp = GnuplotScript::new("limit characteristics");
        let csv = file_name(&args.output);
        let cols: Vec<String> = (0..variants.len()).map(|i| format!("'{csv}' using 1:{} with lines", 2 * d + 2 + i * d * (d + 1) / 2)).collect();
        gp.panel(&format!("set xlabel 'u_0'\nplot {}", cols.join(", ")));
        outputs.push(write_script(&gp, &args.output)?);
    }
    let verdicts = json!({
        "constant": triplets[0].constant,
        "variants": variants.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
    });
    println!("wrote {} rows to {}", u_grid.len(), args.output.display());
    Ok(Outcome { exit_code: 0, outputs, verdicts })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_script(gp: &GnuplotScript, data: &Path) -> Result<PathBuf> {
    let path = output::script_path(data);
    gp.write(&path)?;
    Ok(path)
}

pub fn simulate(lab: &Lab, args: &SimulateArgs) -> Result<Outcome> {
    if !(args.horizon.is_finite() && args.horizon > 0.0) || args.grid == 0 {
        return Err(LevyxError::InvalidArgument("horizon must be positive and grid at least 1".into()));
    }
    let d = lab.dim();
    let grid = uniform_grid(args.horizon, args.grid);
    let seed = lab.scenario.seed;
    let mut header = vec!["path_id".to_string(), "time".to_string()];
    header.extend((0..d).map(|k| format!("xi_{k}")));
    header.push("state".into());
    header.push("jump_count".into());
    let mut table = Table::new(&header)?;
    let mut exploded = 0usize;
    match args.kind {
        PathKind::Prelimit => {
            let eps = args.eps.ok_or_else(|| LevyxError::InvalidArgument("--eps is required for prelimit paths".into()))?;
            harness::check_budget(lab, &[eps], args.paths, args.horizon)?;
            let opts = SimOptions { guard: Some(lab.scenario.path_guard()), ..SimOptions::default() };
            let paths = simulate_prelimit_ensemble(
                lab.prelimit_setup(),
                eps,
                args.horizon,
                &grid,
                &opts,
                args.paths,
                seed,
                StreamDomain::new("simulate-prelimit", 0),
            )?;
            for (id, p) in paths.iter().enumerate() {
                exploded += usize::from(p.exploded);
                for (i, &t) in grid.iter().enumerate() {
                    let mut f = vec![id.to_string(), num(t)];
                    f.extend(p.grid.at(i).iter().map(|&v| num(v)));
                    f.push(p.states[i].to_string());
                    f.push(p.jump_count[i].to_string());
                    table.row(&f)?;
                }
            }
        }
        PathKind::Limit => {
            let variant = args.variant.unwrap_or_else(|| lab.default_variant());
            let limit = lab.limit(variant);
            let scheme = harness::limit_scheme(lab, args.horizon, 1000);
            let paths = simulate_limit_ensemble(
                &limit,
                &scheme,
                lab.xi0(),
                args.horizon,
                &grid,
                args.paths,
                seed,
                StreamDomain::new("simulate-limit", 0),
            )?;
            for (id, p) in paths.iter().enumerate() {
                for (i, &t) in grid.iter().enumerate() {
                    let mut f = vec![id.to_string(), num(t)];
                    f.extend(p.grid.at(i).iter().map(|&v| num(v)));
                    f.push("-1".into());
                    f.push(p.jump_count[i].to_string());
                    table.row(&f)?;
                }
            }
            if matches!(scheme, LimitScheme::Euler(_)) {
                log::info!("limit coefficients depend on u; used the Euler scheme");
            }
        }
    }
    table.write(&args.output)?;
    let mut outputs = vec![args.output.clone()];
    if args.gnuplot {
        let mut gp = GnuplotScript::new("sample paths");
        gp.panel(&format!("set xlabel 't'\nplot '{}' using 2:3 with lines notitle", file_name(&args.output)));
        outputs.push(write_script(&gp, &args.output)?);
    }
    println!("wrote {} paths to {}", args.paths, args.output.display());
    Ok(Outcome { exit_code: 0, outputs, verdicts: json!({ "paths": args.paths, "exploded": exploded }) })
}

/// `summary.csv`: one row per `(eps, time, coordinate)`.
pub fn summary_table(report: &harness::ConvergenceReport) -> Result<Table> {
    let header: Vec<String> = [
        "eps", "time", "coord", "n_prelimit", "n_limit", "ks", "p_value", "ks_band", "mean_prelimit", "mean_limit", "mean_gap",
        "mean_gap_se", "var_prelimit", "var_limit", "var_gap", "var_gap_se",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut table = Table::new(&header)?;
    for c in &report.cells {
        table.row([
            num(c.eps),
            num(c.time),
            c.coord.to_string(),
            c.n_prelimit.to_string(),
            c.n_limit.to_string(),
            num(c.ks),
            num(c.p_value),
            num(c.ks_band),
            num(c.mean_prelimit),
            num(c.mean_limit),
            num(c.mean_gap),
            num(c.mean_gap_se),
            num(c.var_prelimit),
            num(c.var_limit),
            num(c.var_gap),
            num(c.var_gap_se),
        ])?;
    }
    Ok(table)
}

pub fn converge(lab: &Lab, args: &ConvergeArgs) -> Result<Outcome> {
    let variant = args.variant.unwrap_or_else(|| lab.default_variant());
    let config = HarnessConfig::new(args.eps.clone(), args.paths, args.times.clone(), variant);
    let report = harness::sweep(lab, &config)?;
    let dir = &args.output;
    let report_path = dir.join("report.json");
    let summary_path = dir.join("summary.csv");
    output::write_json(&report_path, &report)?;
    summary_table(&report)?.write(&summary_path)?;
    let mut outputs = vec![report_path, summary_path];
    let mut self_test: Option<SelfTestReport> = None;
    if let Some(replicates) = args.self_test {
        let st = harness::self_test(lab, &config, replicates)?;
        let path = dir.join("self_test.json");
        output::write_json(&path, &st)?;
        outputs.push(path);
        self_test = Some(st);
    }
    if args.gnuplot {
        let mut gp = GnuplotScript::new("KS statistic against eps");
        gp.panel("set logscale xy\nset xlabel 'eps'\nplot 'summary.csv' using 1:6 with linespoints title 'KS'");
        let path = dir.join("summary.gp");
        gp.write(&path)?;
        outputs.push(path);
    }

    let v = &report.verdicts;
    println!(
        "{}: KS max {:.4} at eps = {} (threshold {}), monotone {}: {}",
        report.scenario,
        v.smallest_eps_ks_max,
        args.eps.last().copied().unwrap_or(f64::NAN),
        report.thresholds.ks,
        v.monotone_ok,
        if v.pass { "PASS" } else { "FAIL" }
    );
    if let Some(adj) = &report.adjudication {
        for p in &adj.predictions {
            println!(
                "  sigma2 {}: predicted {:?}, rate {:?}, z {:?}: {}",
                p.variant,
                p.sigma_diag,
                adj.rate,
                p.z,
                if p.accepted { "accepted" } else { "rejected" }
            );
        }
    }
    let self_pass = self_test.as_ref().is_none_or(|s| s.pass);
    if let Some(st) = &self_test {
        println!("  self-test: {:.3} of {} cells below p = {}", st.fraction_below, st.cells.len(), st.p_threshold);
    }
    let pass = v.pass && self_pass;
    if !pass {
        eprintln!("levyx: convergence harness FAIL for variant {variant}");
    }
    let verdicts = json!({
        "pass": v.pass,
        "smallest_eps_ks_max": v.smallest_eps_ks_max,
        "monotone_ok": v.monotone_ok,
        "variant": variant.as_str(),
        "adjudication_accepted": report.adjudication.as_ref().map(|a| a.accepted.iter().map(|v| v.as_str()).collect::<Vec<_>>()),
        "self_test_pass": self_test.as_ref().map(|s| s.pass),
    });
    Ok(Outcome { exit_code: if pass { 0 } else { 1 }, outputs, verdicts })
}

pub fn residual(lab: &Lab, args: &ResidualArgs) -> Result<Outcome> {
    if args.eps.is_empty() || args.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(LevyxError::InvalidArgument("eps values must be positive".into()));
    }
    let curves = harness::residual_curves(lab, &args.eps)?;
    let header: Vec<String> = ["variant", "eps", "residual", "slope", "predicted_plateau"].iter().map(|s| s.to_string()).collect();
    let mut table = Table::new(&header)?;
    for c in &curves {
        for (e, r) in c.eps_grid.iter().zip(&c.residual) {
            table.row([c.variant.as_str().to_string(), num(*e), num(*r), c.slope.map_or("nan".into(), num), num(c.predicted_plateau)])?;
        }
    }
    table.write(&args.output)?;
    let mut outputs = vec![args.output.clone()];
    if args.gnuplot {
        let mut gp = GnuplotScript::new("generator residual");
        gp.panel(&format!(
            "set logscale xy\nset xlabel 'eps'\nplot '{}' using 2:3 with points title 'residual'",
            file_name(&args.output)
        ));
        outputs.push(write_script(&gp, &args.output)?);
    }
    let mut verdicts = serde_json::Map::new();
    for c in &curves {
        let decays = curve_decays(&c.eps_grid, &c.residual, NEGLIGIBLE);
        println!(
            "{}: residual {:?}, slope {:?}, predicted plateau {}",
            c.variant,
            c.residual,
            c.slope,
            c.predicted_plateau
        );
        verdicts.insert(c.variant.as_str().into(), json!({ "decays": decays, "slope": c.slope, "plateau": c.predicted_plateau }));
    }
    let full = SigmaVariant::full_for(lab.family.convention());
    let ok = curves.iter().filter(|c| c.variant == full).all(|c| curve_decays(&c.eps_grid, &c.residual, NEGLIGIBLE));
    Ok(Outcome { exit_code: if ok || !lab.family.is_constant() { 0 } else { 1 }, outputs, verdicts: verdicts.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("-1:1:0.5").unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(parse_axis("0:0:1").unwrap(), vec![0.0]);
        assert!(parse_axis("0:1").is_err());
        assert!(parse_axis("1:0:0.1").is_err());
        assert!(parse_axis("0:1:0").is_err());
    }

    #[test]
    fn product_grid_enumerates() {
        let g = product_grid(&[0.0, 1.0], 2);
        assert_eq!(g, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }
}
