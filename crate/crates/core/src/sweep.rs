//! Runs one scenario under every DR mode and checks the expected ordering.

use crate::drctl::DrMode;
use crate::metrics::RunReport;
use crate::scenario::ScenarioConfig;
use crate::sim::{run_scenario, RunOptions, SimError};

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub reports: Vec<RunReport>,
    /// Empty when costlier modes recover no slower and lose no more data.
    pub ordering_violations: Vec<String>,
}

/// Each mode runs with its own default parameters, in parallel.
pub fn sweep_modes(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<SweepResult, SimError> {
    let configs: Vec<ScenarioConfig> = DrMode::ALL
        .iter()
        .map(|&m| cfg.with_mode_defaults(m))
        .collect();
    let results: Vec<Result<RunReport, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| s.spawn(move || run_scenario(c, opts).map(|o| o.report)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let ordering_violations = check_ordering(&reports);
    Ok(SweepResult {
        reports,
        ordering_violations,
    })
}

/// Reports are expected in `DrMode::ALL` order, cheapest first.
pub fn check_ordering(reports: &[RunReport]) -> Vec<String> {
    let mut out = Vec::new();
    for pair in reports.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (Some(ra), Some(rb)) = (a.recovery.worst_rto_ms, b.recovery.worst_rto_ms) else {
            continue;
        };
        if rb > ra {
            out.push(format!(
                "{} RTO {rb} ms exceeds {} RTO {ra} ms",
                b.mode, a.mode
            ));
        }
        let (pa, pb) = (
            a.recovery.worst_rpo_time_ms.unwrap_or(0),
            b.recovery.worst_rpo_time_ms.unwrap_or(0),
        );
        if pb > pa {
            out.push(format!(
                "{} RPO {pb} ms exceeds {} RPO {pa} ms",
                b.mode, a.mode
            ));
        }
    }
    out
}
