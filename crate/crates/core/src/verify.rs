//! Checks of the published controllers against the published fixtures.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kfactor::{self, KFactorSpec};
use crate::loops::{stability_verdicts, verify_norms, CompensatorParams, FilterParams, NormBounds};
use crate::lti::{roots, FrequencyGrid};
use crate::plant::{identified_plant_set, paper_controllers, paper_weights, ConverterParams, PaperControllers};
use crate::sim::{event_windows, metrics, scenario_b, simulate, SimConfig};

/// Published squared bounds of the two stages.
pub const PAPER_GAMMA1: f64 = 0.813;
pub const PAPER_GAMMA2: f64 = 1.0;
/// Band the synthesis grid spans; a verification grid must cover it.
pub const DESIGN_BAND: (f64, f64) = (1e2, 1e5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Pass,
    Fail,
    /// The grid does not cover the design band, so a peak may be missed.
    GridInsufficient,
    /// Reported without a bound.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub check: String,
    pub subject: String,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyTable {
    pub rows: Vec<VerifyRow>,
}

impl VerifyTable {
    /// No row failed. Grid-insufficient and informational rows do not count as failures.
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.status != RowStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerifyRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::Fail)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub fixtures: PaperControllers,
    pub grid: FrequencyGrid,
    /// Relative slack on the published bounds.
    pub norm_slack: f64,
    /// Relative tolerance of the K-factor root comparison.
    pub kfactor_tol: f64,
    pub simulate: bool,
    pub sim: SimConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            fixtures: paper_controllers(),
            grid: FrequencyGrid::logspace(DESIGN_BAND.0, DESIGN_BAND.1, 2000).expect("valid grid"),
            norm_slack: 0.15,
            kfactor_tol: 0.1,
            simulate: true,
            sim: SimConfig::default(),
        }
    }
}

fn row(check: &str, subject: &str, value: Option<f64>, bound: Option<f64>, status: RowStatus) -> VerifyRow {
    VerifyRow {
        check: check.into(),
        subject: subject.into(),
        value,
        bound,
        status,
    }
}

fn pass_if(ok: bool) -> RowStatus {
    if ok {
        RowStatus::Pass
    } else {
        RowStatus::Fail
    }
}

/// Stability, dense-grid norms, K-factor roots and the load-step ordering.
pub fn verify_paper_suite(opts: &VerifyOptions) -> Result<VerifyTable> {
    let plants = identified_plant_set();
    let weights = paper_weights();
    let fx = &opts.fixtures;
    let k_x = CompensatorParams::from_transfer_function(&fx.k_x)?;
    let k_k = CompensatorParams::from_transfer_function(&fx.k_k)?;
    let k_2x = CompensatorParams::from_transfer_function(&fx.k_2x)?;
    let q = FilterParams::from_transfer_function(&fx.q)?;
    let mut rows = Vec::new();

    for (name, comp) in [("K_x", &k_x), ("K_k", &k_k), ("K_2x", &k_2x)] {
        let v = stability_verdicts(comp, &q, &plants.g);
        rows.push(row("stability: outer loop", name, None, None, pass_if(v.outer)));
        if name != "K_k" {
            rows.push(row("stability: combined loop", &format!("{name} + Q"), None, None, pass_if(v.combined)));
        }
    }
    let inner = stability_verdicts(&k_x, &q, &plants.g).inner;
    rows.push(row("stability: inner loop", "Q", None, None, pass_if(inner)));

    let bounds = NormBounds::from_gammas(PAPER_GAMMA1, PAPER_GAMMA2, opts.norm_slack);
    let report = verify_norms(&k_x, &q, &plants, &weights, &opts.grid, Some(bounds))?;
    let covers = opts.grid.lo() <= DESIGN_BAND.0 && opts.grid.hi() >= DESIGN_BAND.1;
    for r in &report.rows {
        let status = match (r.pass, covers) {
            (None, _) => RowStatus::Info,
            (Some(_), false) => RowStatus::GridInsufficient,
            (Some(ok), true) => pass_if(ok),
        };
        rows.push(row(&format!("norm: {}", r.name), "K_x + Q", Some(r.peak), r.bound, status));
    }

    let designed = kfactor::design(&KFactorSpec::from_db(2300.0, 172.0, -40.0))?;
    let pairs = [
        ("kfactor: repeated zero (rad/s)", designed.num(), fx.k_k.num()),
        ("kfactor: repeated pole (rad/s)", designed.den(), fx.k_k.den()),
    ];
    for (check, ours, published) in pairs {
        let nonzero = |p| -> Result<f64> {
            let r = roots(p)?;
            let m: Vec<f64> = r.iter().map(|z| z.norm()).filter(|m| *m > 1e-9).collect();
            Ok(m.iter().sum::<f64>() / m.len().max(1) as f64)
        };
        let (a, b) = (nonzero(ours)?, nonzero(published)?);
        let ok = (a / b - 1.0).abs() <= opts.kfactor_tol;
        rows.push(row(check, "design(2300 Hz, 172 deg, -40 dB) vs K_k", Some(a), Some(b), pass_if(ok)));
    }

    if opts.simulate {
        let sc = scenario_b();
        let params = ConverterParams::table1();
        let windows = event_windows(&sc);
        let mut m = Vec::new();
        for comp in [&k_x, &k_k] {
            let res = simulate(&sc, comp, None, &plants, &params, &opts.sim)?;
            m.push(metrics(&res, &windows, 100.0)?.events[0]);
        }
        let (x, k) = (m[0], m[1]);
        rows.push(row(
            "scenario B: overshoot % (K_x < K_k)",
            "R_o 20 -> 80 ohm",
            Some(x.overshoot_pct),
            Some(k.overshoot_pct),
            pass_if(x.overshoot_pct < k.overshoot_pct),
        ));
        rows.push(row(
            "scenario B: settling s (K_x < K_k)",
            "R_o 20 -> 80 ohm",
            Some(x.settling_time),
            Some(k.settling_time),
            pass_if(!x.unsettled && x.settling_time < k.settling_time),
        ));
    }
    Ok(VerifyTable { rows })
}
