//! Plain-text tables printed by the command-line tool.

use std::fmt::Write as _;

use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::admission::{Decision, FailedCheck};
use crate::buffering::BudgetTable;
use crate::framing::ClassSet;
use crate::metrics::{delay_bounds, fmt_ms};
use crate::scenario::{AdmissionOutcome, Scenario};

/// Analytic queuing-delay envelope per class over `hops` nodes.
pub fn bounds_table(classes: &ClassSet, hops: u32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "hops {hops}");
    let _ = writeln!(
        s,
        "{:<7} {:>9} {:>9} {:>9}",
        "class", "frame_ms", "min_ms", "max_ms"
    );
    for c in classes.iter() {
        let (min, max) = delay_bounds(c.frame, hops);
        let _ = writeln!(
            s,
            "{:<7} {:>9} {:>9} {:>9}",
            format!("TYPE-{}", c.id),
            fmt_ms(c.frame),
            fmt_ms(min),
            fmt_ms(max)
        );
    }
    s
}

/// Buffer budgets per link and class. `budget_kb` is the same budget in
/// kilobits.
pub fn buffers_table(scenario: &Scenario, budgets: &BudgetTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<5} {:<7} {:>9} {:>9} {:>5} {:>12} {:>9} {:>12} {:>10}",
        "link",
        "class",
        "capacity",
        "fraction",
        "y",
        "load_bps",
        "frame_ms",
        "budget_bits",
        "budget_kb"
    );
    for b in budgets.iter() {
        let capacity = scenario.topology.link(b.link).map_or(0, |l| l.capacity_bps);
        let fraction = scenario
            .classes
            .get(b.class)
            .map_or(0.0, |c| c.bandwidth_fraction);
        let _ = writeln!(
            s,
            "{:<5} {:<7} {:>9} {:>9} {:>5} {:>12} {:>9} {:>12} {:>10}",
            b.link,
            format!("TYPE-{}", b.class),
            capacity,
            format!("{:.0}%", fraction * 100.0),
            b.y,
            b.load_bps,
            fmt_ms(b.frame),
            b.budget_bits,
            b.kilobits()
        );
    }
    s
}

fn rational(r: &BigRational) -> String {
    format!("{:.3}", r.to_f64().unwrap_or(f64::NAN))
}

fn decision(d: &Decision) -> String {
    match d {
        Decision::Admitted => "admitted".into(),
        Decision::Rejected { check, link } => {
            let what = match check {
                FailedCheck::Rate => "rate".to_string(),
                FailedCheck::Aggregate => "aggregate".to_string(),
                FailedCheck::FrameConstraint(j) => format!("frame-constraint j={j}"),
            };
            format!("rejected ({what} on link {link})")
        }
    }
}

/// Connection decisions followed by per-link rate, aggregate and
/// frame-constraint verdicts with slacks in bits/s.
pub fn admission_table(outcome: &AdmissionOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "connections");
    for (id, d) in &outcome.decisions {
        let _ = writeln!(s, "  {:<5} {}", id, decision(d));
    }
    let _ = writeln!(s);
    let reports = match outcome.control.reports() {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(s, "error: {e}");
            return s;
        }
    };
    for r in reports {
        let loads: Vec<String> = r.load.per_class_bps.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "link {} capacity_bps={} loads_bps=[{}] aggregate={}",
            r.load.link,
            r.load.capacity_bps,
            loads.join(","),
            if r.aggregate_ok { "ok" } else { "FAIL" }
        );
        let _ = writeln!(
            s,
            "  {:<3} {:>18} {:>18} {:>18} {:>7}",
            "j", "lhs_bps", "rhs_bps", "slack_bps", "verdict"
        );
        for v in &r.constraint {
            let _ = writeln!(
                s,
                "  {:<3} {:>18} {:>18} {:>18} {:>7}",
                v.class,
                rational(&v.lhs),
                rational(&v.rhs),
                rational(&v.slack),
                if v.satisfied { "ok" } else { "FAIL" }
            );
        }
    }
    let _ = writeln!(
        s,
        "\nverdict {}",
        if outcome.all_admitted() {
            "admitted"
        } else {
            "rejected"
        }
    );
    s
}
