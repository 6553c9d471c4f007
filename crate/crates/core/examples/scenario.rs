//! Parses a scenario from text, runs its stages and lists the artifacts.

use lqmfg::scenario::{parse_config, render, run_scenario};

const CONFIG: &str = "
name = coupled
kind = scalar
qbar = 0.5
qbart = 0.5
s = -1.0
st = -1.0
sigma = 0.05
run = riccati,decoupled,picard,verify,montecarlo
seed = 11
mc_paths = 4000
";

fn main() -> lqmfg::Result<()> {
    let mut sc = parse_config(CONFIG)?;
    sc.output_dir = std::env::temp_dir().join("lqmfg-scenario-example");
    println!("canonical form:\n{}", render(&sc));
    let outcome = run_scenario(&sc)?;
    print!("{}", outcome.report);
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    println!("success = {}", outcome.success);
    Ok(())
}
