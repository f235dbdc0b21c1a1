use fcbfuse::gradsuite::{run_component, select, SuiteOptions};
use fcbfuse::model::ModelConfig;
use fcbfuse::tensor::GradFault;

use crate::exit::{CliError, CliResult, GRADCHECK};

pub struct GradcheckArgs {
    pub preset: String,
    pub seed: u64,
    pub only: Vec<String>,
    pub corrupt_op: Option<String>,
    pub end_to_end_coords: usize,
}

pub fn run(a: &GradcheckArgs) -> CliResult<()> {
    let opts = SuiteOptions {
        model: ModelConfig::preset(&a.preset)?,
        seed: a.seed,
        fault: a.corrupt_op.clone().map(|op| GradFault { op, factor: 1.5 }),
        end_to_end_coords: a.end_to_end_coords,
    };
    let names = select(&a.only)?;
    println!("{:<28} {:<11} {:>12} {:>10} {:>7} {:>8}  status", "component", "tier", "max_rel_err", "threshold", "coords", "seconds");
    let mut failures = Vec::new();
    for name in names {
        let r = run_component(name, &opts)?;
        println!(
            "{:<28} {:<11} {:>12.3e} {:>10.0e} {:>7} {:>8.1}  {}",
            r.component,
            r.tier.label(),
            r.max_rel_err,
            r.threshold,
            r.coords,
            r.seconds,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failures.push(format!("{} (max rel err {:.3e} > {:.0e}, worst tensor `{}`)", r.component, r.max_rel_err, r.threshold, r.worst_tensor));
        }
    }
    if failures.is_empty() {
        return Ok(());
    }
    let mut msg = format!("gradcheck failed: {}", failures.join("; "));
    if let Some(op) = &a.corrupt_op {
        msg.push_str(&format!(" [gradient rule of `{op}` deliberately corrupted]"));
    }
    Err(CliError::new(GRADCHECK, msg))
}
