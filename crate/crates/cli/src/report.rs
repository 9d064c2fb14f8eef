use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use pipegen_core::metrics::{self, ParsedMetrics};

fn read(path: &Path) -> Result<ParsedMetrics> {
    let m = ParsedMetrics::read(path).with_context(|| format!("reading {}", path.display()))?;
    for e in &m.errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    Ok(m)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub fn analyze(path: &Path, json: bool, strict: bool) -> Result<ExitCode> {
    let m = read(path)?;
    let a = metrics::analyze(&m);
    if json {
        println!("{}", serde_json::to_string_pretty(&a)?);
    } else {
        println!("makespan_ms           {:.3}", a.makespan_ms);
        println!("mu_plan               {}", opt(a.mu_plan));
        println!("mu_render             {}", opt(a.mu_render));
        println!("lambda_theory         {}", opt(a.lambda_theory));
        println!("lambda_base           {}", opt(a.lambda_base));
        println!("lambda_succ           {:.4}", a.lambda_succ);
        println!("throughput_fps        {:.4}", a.throughput_fps);
        println!("throughput/theory     {}", opt(a.throughput_over_theory));
        println!("succ/theory           {}", opt(a.succ_over_theory));
        println!("total/estimate        {}", opt(a.total_over_estimate));
        if a.violations.is_empty() {
            println!("self-consistency      pass");
        } else {
            println!("self-consistency      {} violation(s)", a.violations.len());
            for v in &a.violations {
                println!("  {v}");
            }
        }
    }
    if strict && (!a.violations.is_empty() || !m.errors.is_empty()) {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn compare(baseline: &Path, candidate: &Path, json: bool) -> Result<ExitCode> {
    let r = metrics::compare(&read(baseline)?, &read(candidate)?)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(ExitCode::SUCCESS);
    }
    let c = r.comparison.as_ref().expect("compare sets a comparison");
    println!("baseline     {} {:.3} ms", c.baseline_policy, c.baseline_makespan_ms);
    println!("candidate    {} {:.3} ms", r.policy, c.candidate_makespan_ms);
    println!("speedup      {:.3}", c.speedup);
    Ok(ExitCode::SUCCESS)
}
