//! Runs every scenario with its shipped configuration and judges the twelve
//! acceptance entries. Prints one line per entry; exits nonzero on failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nsv_experiments::{run_scenario, Criterion, RunFile, Thresholds};

const ENTRIES: [(&str, &str); 12] = [
    ("energy_balance", "energy equality, second-order residual"),
    ("monotone_decay", "monotone decay without forcing"),
    ("exp_decay_damped", "exponential decay with damping"),
    ("exp_decay_undamped", "exponential decay from memory alone"),
    ("absorbing_ball", "absorbing ball ceilings"),
    ("continuity", "continuous dependence rate"),
    ("history_fidelity", "history against representation"),
    ("dual_representation", "grid against moment memory"),
    ("structural", "structural identities"),
    ("splitting", "decaying plus regular splitting"),
    ("singular_limit", "instantaneous limit"),
    ("dtu_budget", "time-derivative budget"),
];

const RUNS: [&str; 8] = [
    "refine",
    "decay",
    "decay-nodamp",
    "absorb",
    "continuity",
    "selfcheck",
    "split",
    "rescale",
];

fn main() -> ExitCode {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut groups: BTreeMap<String, Vec<Criterion>> = BTreeMap::new();
    let mut errors = Vec::new();
    for scenario in RUNS {
        let started = Instant::now();
        let outcome =
            RunFile::load(&configs.join(format!("{scenario}.toml"))).and_then(|rf| run_scenario(scenario, &rf, 1));
        match outcome {
            Ok(bundle) => {
                eprintln!("ran {scenario} in {:.0} s", started.elapsed().as_secs_f64());
                for c in bundle.criteria {
                    groups
                        .entry(Thresholds::group(&c.name).to_string())
                        .or_default()
                        .push(c);
                }
            }
            Err(e) => errors.push(format!("{scenario}: {e}")),
        }
    }

    let mut failed = 0;
    for (key, title) in ENTRIES {
        let criteria = groups.remove(key).unwrap_or_default();
        let pass = !criteria.is_empty() && criteria.iter().all(|c| c.pass);
        let detail: Vec<String> = criteria
            .iter()
            .map(|c| format!("{}={:.3e} ({})", c.name, c.value, c.threshold))
            .collect();
        let detail = if detail.is_empty() {
            "not measured".to_string()
        } else {
            detail.join(", ")
        };
        println!("{} {key}: {title}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    for (key, _) in groups {
        println!("FAIL {key}: criterion outside the acceptance table");
        failed += 1;
    }
    for e in &errors {
        println!("ERROR {e}");
    }
    println!(
        "{} of {} entries pass",
        ENTRIES.len() - failed.min(ENTRIES.len()),
        ENTRIES.len()
    );
    if failed == 0 && errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
